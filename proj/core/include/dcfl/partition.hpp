#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dcfl {

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;  // client -> sample indices (ascending)
  std::optional<double> alpha;                        // empty for IID
  std::uint64_t seed = 0;
  std::size_t min_size = 1;

  std::size_t n_clients() const { return assignments.size(); }
  bool iid() const { return !alpha.has_value(); }

  // Disjoint cover of [0, n_samples) with every client holding >= min_size samples.
  void validate(std::size_t n_samples) const;

  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

inline constexpr int kDefaultPartitionRetries = 100;

// Per class, draws p ~ Dir(alpha * 1) over clients and splits that class's (shuffled) samples with
// largest-remainder rounding. The whole plan is redrawn until every client has min_size samples.
PartitionPlan dirichlet_partition(std::span<const int> labels, std::size_t n_clients, double alpha,
                                  std::uint64_t seed, std::size_t min_size,
                                  int max_retries = kDefaultPartitionRetries);

// Shuffle, then equal contiguous chunks (sizes differ by at most one).
PartitionPlan iid_partition(std::span<const int> labels, std::size_t n_clients, std::uint64_t seed,
                            std::size_t min_size);

// client x class sample counts
std::vector<std::vector<std::size_t>> class_histograms(const PartitionPlan& plan, std::span<const int> labels,
                                                       std::size_t n_classes);

// Mean over clients of the total-variation distance between the client's label distribution and the
// global one.
double mean_label_tv_distance(const PartitionPlan& plan, std::span<const int> labels, std::size_t n_classes);

std::string plan_to_json(const PartitionPlan& plan);
PartitionPlan plan_from_json(const std::string& text);
void save_plan(const PartitionPlan& plan, const std::filesystem::path& path);
PartitionPlan load_plan(const std::filesystem::path& path);

}  // namespace dcfl
