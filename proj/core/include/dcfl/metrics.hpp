#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcfl/data.hpp"
#include "dcfl/losses.hpp"
#include "dcfl/model.hpp"
#include "dcfl/tensor.hpp"

namespace dcfl {

inline constexpr double kEmaBeta = 0.9;
inline constexpr std::size_t kHistogramBins = 40;

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> client_ids;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double ema_acc = 0.0;
  double align_metric = 0.0;
  double uniform_metric = 0.0;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy_from_logits(const Tensor& logits, std::span<const int> labels);
double accuracy(const MlpModel& model, const ParameterVector& params, const Dataset& testset);

// prev absent -> acc; otherwise beta * prev + (1 - beta) * acc.
double ema_update(std::optional<double> prev, double acc, double beta = kEmaBeta);
std::vector<double> running_max(std::span<const double> values);

// Mean of ||u_i - v_i||^exponent over paired rows of `left` and `right`.
double alignment_metric(const Tensor& left, const Tensor& right, double exponent = 2.0);
// log of the mean over unordered distinct pairs of exp(-t ||u - v||^2).
double uniformity_metric(const Tensor& embeddings, double t = 2.0);

using IndexPair = std::pair<std::size_t, std::size_t>;

struct PairSample {
  std::vector<IndexPair> intra;
  std::vector<IndexPair> inter;
  std::size_t intra_total = 0;
  std::size_t inter_total = 0;
};

// Every intra/inter-class pair when a category has <= max_pairs of them, otherwise max_pairs
// uniform draws (with replacement) from that category.
PairSample sample_pairs(std::span<const int> labels, std::size_t max_pairs, std::uint64_t seed);

struct SimilarityHistogram {
  std::vector<double> bin_edges;  // 41 edges over [-1, 1]
  std::vector<std::size_t> intra_counts;
  std::vector<std::size_t> inter_counts;
  bool has_intra = false;
  bool has_inter = false;
  double mean_intra = 0.0;
  double mean_inter = 0.0;
};

std::size_t histogram_bin(double cosine);
SimilarityHistogram cosine_histogram(const EmbeddingBatch& batch, std::size_t max_pairs, std::uint64_t seed);

struct RepresentationMetrics {
  double alignment = 0.0;   // over same-class pairs
  double uniformity = 0.0;  // over all pairs
};

// Pair-subsampled alignment/uniformity of a labelled embedding set.
RepresentationMetrics representation_metrics(const Tensor& embeddings, std::span<const int> labels,
                                             std::size_t max_pairs, std::uint64_t seed, double align_exponent = 2.0,
                                             double uniform_t = 2.0);

inline constexpr const char* kRoundCsvHeader = "round,clients,train_loss,test_acc,ema_acc,align_metric,uniform_metric";

// Client ids are ';'-joined; reals use 17 significant digits.
std::string format_round_csv(const RoundRecord& record);
RoundRecord parse_round_csv(const std::string& line);
std::vector<RoundRecord> read_rounds_csv(const std::filesystem::path& path);

void write_histogram_csv(const SimilarityHistogram& hist, const std::filesystem::path& path);

}  // namespace dcfl
