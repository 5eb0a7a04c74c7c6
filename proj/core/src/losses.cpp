#include "dcfl/losses.hpp"

#include <cmath>

#include <fmt/format.h>

#include "dcfl/error.hpp"
#include "dcfl/ops.hpp"

namespace dcfl {
namespace {

constexpr double kUnitTolerance = 1e-9;

void require_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError(fmt::format("temperature must be positive, got {}", tau));
}

void require_labels(const Tensor& z, std::span<const int> labels) {
  if (z.rank() != 2 || z.rows() != labels.size()) {
    throw DimensionError(
        fmt::format("{} labels for embeddings of shape {}", labels.size(), shape_to_string(z.shape())));
  }
}

struct PairMasks {
  Mask positives;  // same label, j != i
  Mask others;     // every k != i
  Mask negatives;  // different label
};

PairMasks pair_masks(std::span<const int> labels) {
  const std::size_t b = labels.size();
  PairMasks m{Mask(b, b), Mask(b, b), Mask(b, b)};
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      if (i == j) continue;
      m.others.set(i, j);
      if (labels[i] == labels[j]) {
        m.positives.set(i, j);
      } else {
        m.negatives.set(i, j);
      }
    }
  }
  return m;
}

Var similarity_logits(Var z, double tau) { return ad::scale(ad::matmul_nt(z, z), 1.0 / tau); }

}  // namespace

EmbeddingBatch::EmbeddingBatch(Tensor embeddings, std::vector<int> labels, std::size_t n_classes)
    : embeddings_(std::move(embeddings)), labels_(std::move(labels)), n_classes_(n_classes) {
  if (labels_.empty()) throw DimensionError("embedding batch is empty");
  require_labels(embeddings_, labels_);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= n_classes_) {
      throw IndexError(fmt::format("label {} at row {} outside [0, {})", labels_[i], i, n_classes_));
    }
    const double norm = l2_norm(embeddings_.row(i));
    if (std::abs(norm - 1.0) > kUnitTolerance) {
      throw DegenerateInputError(fmt::format("embedding row {} has norm {:.12f}, expected 1", i, norm));
    }
  }
}

void PrototypeSet::validate() const {
  if (prototypes.rank() != 2 || prototypes.rows() != counts.size() || stale.size() != counts.size()) {
    throw DimensionError("prototype set is inconsistent");
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double norm = l2_norm(prototypes.row(c));
    if (std::abs(norm - 1.0) > kUnitTolerance) {
      throw DegenerateInputError(fmt::format("prototype {} has norm {:.12f}", c, norm));
    }
  }
}

bool has_positive_pair(std::span<const int> labels) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j)
      if (labels[i] == labels[j]) return true;
  return false;
}

namespace ad {

Var supcon_loss(Var embeddings, std::span<const int> labels, double tau) {
  require_tau(tau);
  require_labels(embeddings.value(), labels);
  const std::size_t b = labels.size();
  const PairMasks masks = pair_masks(labels);
  std::size_t usable = 0;
  for (std::size_t i = 0; i < b; ++i) usable += masks.positives.row_count(i) > 0;
  if (usable == 0) throw NoPositivesError("supcon: no anchor has a positive partner");

  const Var log_ratio = ad::masked_row_log_softmax(similarity_logits(embeddings, tau), masks.others);
  std::vector<double> weights(b * b, 0.0);
  const double inv = 1.0 / static_cast<double>(usable);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      if (masks.positives(i, j)) weights[i * b + j] = -inv;
  return ad::weighted_sum(log_ratio, std::move(weights));
}

Var supcon_decomposed(Var embeddings, std::span<const int> labels, double tau) {
  require_tau(tau);
  require_labels(embeddings.value(), labels);
  const std::size_t b = labels.size();
  const PairMasks masks = pair_masks(labels);
  std::vector<double> n_pos(b);
  std::size_t usable = 0;
  for (std::size_t i = 0; i < b; ++i) {
    n_pos[i] = static_cast<double>(masks.positives.row_count(i));
    usable += n_pos[i] > 0;
  }
  if (usable == 0) throw NoPositivesError("supcon: no anchor has a positive partner");

  const Var s = similarity_logits(embeddings, tau);
  const Var pos_sum = ad::masked_row_sum(s, masks.positives);
  const Var denom = ad::masked_row_logsumexp(s, masks.others);
  const double inv = 1.0 / static_cast<double>(usable);
  std::vector<double> w_pos(b), w_den(b);
  for (std::size_t i = 0; i < b; ++i) {
    w_pos[i] = n_pos[i] > 0 ? -inv : 0.0;
    w_den[i] = n_pos[i] * inv;
  }
  return ad::add(ad::weighted_sum(pos_sum, std::move(w_pos)), ad::weighted_sum(denom, std::move(w_den)));
}

DcflTerms dcfl_sample_loss(Var embeddings, std::span<const int> labels, double tau, double lambda_a,
                           double lambda_u) {
  require_tau(tau);
  require_labels(embeddings.value(), labels);
  const std::size_t b = labels.size();
  const PairMasks masks = pair_masks(labels);
  std::vector<double> n_pos(b);
  std::vector<bool> has_neg(b);
  std::size_t usable = 0;
  for (std::size_t i = 0; i < b; ++i) {
    n_pos[i] = static_cast<double>(masks.positives.row_count(i));
    has_neg[i] = masks.negatives.row_count(i) > 0;
    usable += n_pos[i] > 0;
  }
  if (usable == 0) throw NoUsableAnchorsError("dcfl: no anchor has a positive partner");

  const Var s = similarity_logits(embeddings, tau);
  const Var pos_sum = ad::masked_row_sum(s, masks.positives);
  const Var neg_lse = ad::masked_row_logsumexp(s, masks.negatives);
  const double inv = 1.0 / static_cast<double>(usable);
  std::vector<double> w_align(b, 0.0), w_unif(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (n_pos[i] == 0) continue;
    w_align[i] = inv;
    if (has_neg[i]) w_unif[i] = n_pos[i] * inv;
  }
  DcflTerms terms;
  terms.alignment = ad::weighted_sum(pos_sum, std::move(w_align));
  terms.uniformity = ad::weighted_sum(neg_lse, std::move(w_unif));
  terms.total = ad::add(ad::scale(terms.alignment, -lambda_a), ad::scale(terms.uniformity, lambda_u));
  terms.anchors_used = usable;
  return terms;
}

DcflTerms dcfl_prototype_loss(Var embeddings, std::span<const int> labels, const PrototypeSet& protos, double tau,
                              double lambda_a, double lambda_u) {
  require_tau(tau);
  require_labels(embeddings.value(), labels);
  const std::size_t n_classes = protos.n_classes();
  if (n_classes < 2) {
    throw InsufficientClassesError(fmt::format("prototype loss needs >= 2 classes, got {}", n_classes));
  }
  if (protos.prototypes.rank() != 2 || protos.prototypes.rows() != n_classes ||
      protos.dim() != embeddings.value().cols()) {
    throw DimensionError(fmt::format("prototypes {} do not match embeddings {}",
                                     shape_to_string(protos.prototypes.shape()),
                                     shape_to_string(embeddings.value().shape())));
  }
  const std::size_t b = labels.size();
  if (b == 0) throw NoUsableAnchorsError("dcfl: empty batch");
  Mask positive(b, n_classes), negative(b, n_classes);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw IndexError(fmt::format("label {} outside [0, {})", labels[i], n_classes));
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (static_cast<int>(c) == labels[i]) {
        positive.set(i, c);
      } else {
        negative.set(i, c);
      }
    }
  }
  Tape& tape = embeddings.tape();
  const Var s = ad::scale(ad::matmul_nt(embeddings, tape.constant(protos.prototypes)), 1.0 / tau);
  const double inv = 1.0 / static_cast<double>(b);
  DcflTerms terms;
  terms.alignment = ad::weighted_sum(ad::masked_row_sum(s, positive), std::vector<double>(b, inv));
  terms.uniformity = ad::weighted_sum(ad::masked_row_logsumexp(s, negative), std::vector<double>(b, inv));
  terms.total = ad::add(ad::scale(terms.alignment, -lambda_a), ad::scale(terms.uniformity, lambda_u));
  terms.anchors_used = b;
  return terms;
}

Var combined_objective(Var ce, Var dcfl, double mu) {
  if (!(mu >= 0.0)) throw ConfigError(fmt::format("mu must be non-negative, got {}", mu));
  return ad::add(ce, ad::scale(dcfl, mu));
}

}  // namespace ad

double supcon_loss(const EmbeddingBatch& batch, double tau) {
  Tape tape;
  return ad::supcon_loss(tape.constant(batch.embeddings()), batch.labels(), tau).value().item();
}

double supcon_decomposed(const EmbeddingBatch& batch, double tau) {
  Tape tape;
  return ad::supcon_decomposed(tape.constant(batch.embeddings()), batch.labels(), tau).value().item();
}

namespace {

LossBreakdown breakdown(const ad::DcflTerms& t) {
  return {t.total.value().item(), t.alignment.value().item(), t.uniformity.value().item(), t.anchors_used};
}

}  // namespace

LossBreakdown dcfl_sample_loss(const EmbeddingBatch& batch, double tau, double lambda_a, double lambda_u) {
  Tape tape;
  return breakdown(ad::dcfl_sample_loss(tape.constant(batch.embeddings()), batch.labels(), tau, lambda_a, lambda_u));
}

LossBreakdown dcfl_prototype_loss(const EmbeddingBatch& batch, const PrototypeSet& protos, double tau,
                                  double lambda_a, double lambda_u) {
  if (protos.n_classes() < 2) {
    throw InsufficientClassesError(fmt::format("prototype loss needs >= 2 classes, got {}", protos.n_classes()));
  }
  protos.validate();
  Tape tape;
  return breakdown(
      ad::dcfl_prototype_loss(tape.constant(batch.embeddings()), batch.labels(), protos, tau, lambda_a, lambda_u));
}

double combined_objective(double ce, double dcfl, double mu) {
  if (!(mu >= 0.0)) throw ConfigError(fmt::format("mu must be non-negative, got {}", mu));
  return ce + mu * dcfl;
}

}  // namespace dcfl
