#include "dcfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/os.h>
#include <fmt/ranges.h>

#include "dcfl/error.hpp"
#include "dcfl/ops.hpp"
#include "dcfl/random.hpp"

namespace dcfl {

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) throw EmptyReductionError("accuracy of an empty test set");
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw DimensionError(fmt::format("{} labels for logits {}", labels.size(), shape_to_string(logits.shape())));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.row(i);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double accuracy(const MlpModel& model, const ParameterVector& params, const Dataset& testset) {
  if (testset.size() == 0) throw EmptyReductionError("accuracy of an empty test set");
  return accuracy_from_logits(model.evaluate(params, testset.inputs).logits, testset.labels);
}

double ema_update(std::optional<double> prev, double acc, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError(fmt::format("EMA beta {} outside [0, 1)", beta));
  if (!prev) return acc;
  return beta * *prev + (1.0 - beta) * acc;
}

std::vector<double> running_max(std::span<const double> values) {
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(out.empty() ? v : std::max(out.back(), v));
  return out;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

}  // namespace

double alignment_metric(const Tensor& left, const Tensor& right, double exponent) {
  if (!(exponent > 0.0)) throw ConfigError("alignment exponent must be positive");
  if (left.shape() != right.shape() || left.rank() != 2) {
    throw DimensionError("alignment_metric: pair tensors must be matrices of equal shape");
  }
  if (left.rows() == 0) throw EmptyReductionError("alignment_metric of no pairs");
  double total = 0.0;
  for (std::size_t i = 0; i < left.rows(); ++i) {
    const double d2 = squared_distance(left.row(i), right.row(i));
    total += exponent == 2.0 ? d2 : std::pow(d2, exponent / 2.0);
  }
  return total / static_cast<double>(left.rows());
}

double uniformity_metric(const Tensor& embeddings, double t) {
  if (!(t > 0.0)) throw ConfigError("uniformity t must be positive");
  if (embeddings.rank() != 2 || embeddings.rows() < 2) {
    throw EmptyReductionError("uniformity_metric needs at least two embeddings");
  }
  const std::size_t n = embeddings.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) total += std::exp(-t * squared_distance(embeddings.row(i), embeddings.row(j)));
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  return std::log(total / pairs);
}

PairSample sample_pairs(std::span<const int> labels, std::size_t max_pairs, std::uint64_t seed) {
  PairSample out;
  const std::size_t n = labels.size();
  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<double> class_pairs(members.size());
  for (std::size_t c = 0; c < members.size(); ++c) {
    const std::size_t m = members[c].size();
    out.intra_total += m * (m - (m > 0 ? 1 : 0)) / 2;
    class_pairs[c] = static_cast<double>(m) * static_cast<double>(m > 0 ? m - 1 : 0) / 2.0;
  }
  out.inter_total = n * (n - (n > 0 ? 1 : 0)) / 2 - out.intra_total;

  const bool all_intra = out.intra_total <= max_pairs;
  const bool all_inter = out.inter_total <= max_pairs;
  if (all_intra || all_inter) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (labels[i] == labels[j]) {
          if (all_intra) out.intra.emplace_back(i, j);
        } else if (all_inter) {
          out.inter.emplace_back(i, j);
        }
      }
  }
  Rng rng = make_rng(seed, "pair-sample");
  if (!all_intra) {
    std::discrete_distribution<std::size_t> pick_class(class_pairs.begin(), class_pairs.end());
    out.intra.reserve(max_pairs);
    for (std::size_t s = 0; s < max_pairs; ++s) {
      const auto& m = members[pick_class(rng)];
      std::uniform_int_distribution<std::size_t> a(0, m.size() - 1), b(0, m.size() - 2);
      const std::size_t i = a(rng);
      std::size_t j = b(rng);
      if (j >= i) ++j;
      out.intra.emplace_back(std::min(m[i], m[j]), std::max(m[i], m[j]));
    }
  }
  if (!all_inter) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    out.inter.reserve(max_pairs);
    while (out.inter.size() < max_pairs) {
      const std::size_t i = pick(rng), j = pick(rng);
      if (labels[i] == labels[j]) continue;
      out.inter.emplace_back(std::min(i, j), std::max(i, j));
    }
  }
  return out;
}

std::size_t histogram_bin(double cosine) {
  const double pos = (std::clamp(cosine, -1.0, 1.0) + 1.0) / 2.0 * static_cast<double>(kHistogramBins);
  return std::min(static_cast<std::size_t>(pos), kHistogramBins - 1);
}

SimilarityHistogram cosine_histogram(const EmbeddingBatch& batch, std::size_t max_pairs, std::uint64_t seed) {
  if (batch.size() < 2) throw EmptyReductionError("cosine_histogram needs at least two embeddings");
  SimilarityHistogram h;
  h.bin_edges.resize(kHistogramBins + 1);
  for (std::size_t b = 0; b <= kHistogramBins; ++b) {
    h.bin_edges[b] = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(kHistogramBins);
  }
  h.intra_counts.assign(kHistogramBins, 0);
  h.inter_counts.assign(kHistogramBins, 0);
  const PairSample pairs = sample_pairs(batch.labels(), max_pairs, seed);
  const Tensor& z = batch.embeddings();
  auto fill = [&](const std::vector<IndexPair>& list, std::vector<std::size_t>& counts, double& mean) {
    double total = 0.0;
    for (const auto& [i, j] : list) {
      const double c = cosine_sim(z.row(i), z.row(j));
      ++counts[histogram_bin(c)];
      total += c;
    }
    mean = list.empty() ? 0.0 : total / static_cast<double>(list.size());
  };
  fill(pairs.intra, h.intra_counts, h.mean_intra);
  fill(pairs.inter, h.inter_counts, h.mean_inter);
  h.has_intra = !pairs.intra.empty();
  h.has_inter = !pairs.inter.empty();
  return h;
}

RepresentationMetrics representation_metrics(const Tensor& embeddings, std::span<const int> labels,
                                             std::size_t max_pairs, std::uint64_t seed, double align_exponent,
                                             double uniform_t) {
  if (embeddings.rank() != 2 || embeddings.rows() != labels.size() || labels.size() < 2) {
    throw EmptyReductionError("representation metrics need at least two labelled embeddings");
  }
  const PairSample pairs = sample_pairs(labels, max_pairs, seed);
  RepresentationMetrics out;
  if (!pairs.intra.empty()) {
    double total = 0.0;
    for (const auto& [i, j] : pairs.intra) {
      const double d2 = squared_distance(embeddings.row(i), embeddings.row(j));
      total += align_exponent == 2.0 ? d2 : std::pow(d2, align_exponent / 2.0);
    }
    out.alignment = total / static_cast<double>(pairs.intra.size());
  }
  // Uniformity mixes both categories in proportion to their population.
  const double n_all = static_cast<double>(pairs.intra_total + pairs.inter_total);
  auto potential = [&](const std::vector<IndexPair>& list) {
    double total = 0.0;
    for (const auto& [i, j] : list) total += std::exp(-uniform_t * squared_distance(embeddings.row(i), embeddings.row(j)));
    return list.empty() ? 0.0 : total / static_cast<double>(list.size());
  };
  const double mean_potential = potential(pairs.intra) * static_cast<double>(pairs.intra_total) / n_all +
                                potential(pairs.inter) * static_cast<double>(pairs.inter_total) / n_all;
  out.uniformity = std::log(mean_potential);
  return out;
}

std::string format_round_csv(const RoundRecord& r) {
  return fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", r.round, fmt::join(r.client_ids, ";"),
                     r.train_loss, r.test_acc, r.ema_acc, r.align_metric, r.uniform_metric);
}

RoundRecord parse_round_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (fields.size() != 7) throw FormatError(fmt::format("round row has {} fields, expected 7", fields.size()));
  try {
    RoundRecord r;
    r.round = std::stoull(fields[0]);
    std::stringstream ids(fields[1]);
    while (std::getline(ids, field, ';'))
      if (!field.empty()) r.client_ids.push_back(std::stoull(field));
    r.train_loss = std::stod(fields[2]);
    r.test_acc = std::stod(fields[3]);
    r.ema_acc = std::stod(fields[4]);
    r.align_metric = std::stod(fields[5]);
    r.uniform_metric = std::stod(fields[6]);
    return r;
  } catch (const std::logic_error& e) {
    throw FormatError(fmt::format("malformed round row '{}': {}", line, e.what()));
  }
}

std::vector<RoundRecord> read_rounds_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != kRoundCsvHeader) {
    throw FormatError(fmt::format("'{}' does not start with the round CSV header", path.string()));
  }
  std::vector<RoundRecord> out;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_round_csv(line));
  return out;
}

void write_histogram_csv(const SimilarityHistogram& hist, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("category,bin,bin_lo,bin_hi,count\n");
  for (const auto& [name, counts] : {std::pair{"intra", &hist.intra_counts}, std::pair{"inter", &hist.inter_counts}}) {
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
      out.print("{},{},{:.6g},{:.6g},{}\n", name, b, hist.bin_edges[b], hist.bin_edges[b + 1], (*counts)[b]);
    }
  }
}

}  // namespace dcfl
