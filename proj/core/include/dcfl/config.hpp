#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dcfl/asymptotics.hpp"
#include "dcfl/data.hpp"
#include "dcfl/federation.hpp"
#include "dcfl/model.hpp"

namespace dcfl {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | cifar10
  std::size_t n_classes = 10;
  std::size_t dim = 32;
  std::size_t n_per_class = 200;
  double spread = 1.0;
  std::vector<std::string> cifar_train;
  std::vector<std::string> cifar_test;
  bool standardize = true;
};

struct PartitionConfig {
  std::optional<double> alpha = 0.3;  // empty: IID
  std::size_t min_size = 64;
  std::string plan;  // existing plan file; generated when empty
};

struct MetricsConfig {
  std::size_t max_pairs = 100000;
  double align_exponent = 2.0;
  double uniform_t = 2.0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/dcfl";
  std::size_t workers = 1;
  DatasetConfig dataset;
  PartitionConfig partition;
  ModelConfig model;  // input_dim and n_classes follow the dataset
  TrainingConfig training;
  MetricsConfig metrics;
  AsymptoticsConfig asymptotics;

  // Copies the top-level seed, worker count and metric options into the sub-configs.
  void propagate();
  void validate() const;
  // output_dir, prefixed by $DCFL_OUTPUT_ROOT when that is set and output_dir is relative.
  std::filesystem::path output_path() const;
};

// defaults < file < overrides. Each override is "dotted.key=value"; the value is read as JSON when it
// parses and as a string otherwise. Unknown keys are rejected.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides = {});
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

// "iid", "inf" and infinite numbers mean IID.
std::optional<double> parse_alpha(const std::string& text);

// Creates the directory and checks that a file can be written inside it.
void ensure_writable_dir(const std::filesystem::path& dir);

}  // namespace dcfl
