#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dcfl/tape.hpp"
#include "dcfl/tensor.hpp"

namespace dcfl {

// B unit-norm embeddings (rows) with their class labels.
class EmbeddingBatch {
 public:
  // Validates unit norms (within 1e-9) and label range.
  EmbeddingBatch(Tensor embeddings, std::vector<int> labels, std::size_t n_classes);

  const Tensor& embeddings() const { return embeddings_; }
  const std::vector<int>& labels() const { return labels_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return embeddings_.cols(); }

 private:
  Tensor embeddings_;
  std::vector<int> labels_;
  std::size_t n_classes_;
};

// One unit-norm prototype per class. A class with count 0 carries its previous (or initial) vector
// and is flagged stale.
struct PrototypeSet {
  Tensor prototypes;  // C x d
  std::vector<std::size_t> counts;
  std::vector<bool> stale;

  std::size_t n_classes() const { return counts.size(); }
  std::size_t dim() const { return prototypes.cols(); }
  void validate() const;
};

// Raw terms are anchor means of sum_p sim(z_i, p)/tau and |P_i| log sum_n exp(sim(z_i, n)/tau);
// total = -lambda_a * alignment_term + lambda_u * uniformity_term.
struct LossBreakdown {
  double total = 0.0;
  double alignment_term = 0.0;
  double uniformity_term = 0.0;
  std::size_t anchors_used = 0;
};

double supcon_loss(const EmbeddingBatch& batch, double tau);
double supcon_decomposed(const EmbeddingBatch& batch, double tau);
LossBreakdown dcfl_sample_loss(const EmbeddingBatch& batch, double tau, double lambda_a, double lambda_u);
LossBreakdown dcfl_prototype_loss(const EmbeddingBatch& batch, const PrototypeSet& protos, double tau,
                                  double lambda_a, double lambda_u);
double combined_objective(double ce, double dcfl, double mu);

// True when some anchor has at least one same-class partner in the batch.
bool has_positive_pair(std::span<const int> labels);

namespace ad {

// Anchor-mean supervised contrastive loss written as per-pair log-softmax ratios.
Var supcon_loss(Var embeddings, std::span<const int> labels, double tau);
// Same quantity via the split: -sum_p s_ip + |P_i| logsumexp_{k != i} s_ik.
Var supcon_decomposed(Var embeddings, std::span<const int> labels, double tau);

struct DcflTerms {
  Var total;
  Var alignment;
  Var uniformity;
  std::size_t anchors_used = 0;
};

// Positives: same-label batch members; negatives: different-label members. Anchors without positives
// are skipped; anchors without negatives keep only the alignment term.
DcflTerms dcfl_sample_loss(Var embeddings, std::span<const int> labels, double tau, double lambda_a,
                           double lambda_u);
// Positive: the anchor's class prototype; negatives: every other prototype. Prototypes are constants.
DcflTerms dcfl_prototype_loss(Var embeddings, std::span<const int> labels, const PrototypeSet& protos, double tau,
                              double lambda_a, double lambda_u);
Var combined_objective(Var ce, Var dcfl, double mu);

}  // namespace ad
}  // namespace dcfl
