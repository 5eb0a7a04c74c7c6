#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dcfl/asymptotics.hpp"
#include "dcfl/config.hpp"
#include "dcfl/data.hpp"
#include "dcfl/federation.hpp"
#include "dcfl/metrics.hpp"
#include "dcfl/partition.hpp"

namespace dcfl::cli {

DatasetPair load_datasets(const ExperimentConfig& cfg);
PartitionPlan make_plan(const ExperimentConfig& cfg, const Dataset& train);

// Writes <out>/partition.json and prints one class-histogram row per client.
PartitionPlan cmd_partition(const ExperimentConfig& cfg, std::ostream& log);

struct TrainSummary {
  std::vector<RoundRecord> records;
  double max_acc = 0.0;
  double final_ema = 0.0;
  double final_acc = 0.0;
  bool diverged = false;
};

// Writes rounds.csv, final.ckpt, summary.json and config_resolved.json under the output directory.
// A divergence writes the partial outputs and rethrows.
TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log);

// Writes asymptotics.csv and asymptotics.json.
AsymptoticsReport cmd_asymptotics(const ExperimentConfig& cfg, std::ostream& log);

struct ReportRow {
  std::string model;  // "checkpoint" or "init"
  double accuracy = 0.0;
  double align_metric = 0.0;
  double uniform_metric = 0.0;
  SimilarityHistogram histogram;
};

// Evaluates the checkpoint (and the untrained model at the same seed) on the test split; writes
// metrics.csv, histogram.csv and histogram_init.csv.
std::vector<ReportRow> cmd_report(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                                  std::ostream& log);

}  // namespace dcfl::cli
