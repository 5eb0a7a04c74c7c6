#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "dcfl/data.hpp"
#include "dcfl/losses.hpp"
#include "dcfl/metrics.hpp"
#include "dcfl/model.hpp"
#include "dcfl/partition.hpp"
#include "dcfl/tensor.hpp"

namespace dcfl {

enum class TrainingMode { fedavg_plain, supcon_baseline, sample_wise, prototype_wise };
enum class Aggregation { uniform, weighted };

std::string_view to_string(TrainingMode mode);
std::string_view to_string(Aggregation aggregation);
TrainingMode parse_training_mode(std::string_view text);
Aggregation parse_aggregation(std::string_view text);

inline constexpr double kDivergenceCeiling = 1e6;

struct TrainingConfig {
  std::size_t rounds = 50;
  std::size_t n_clients = 10;
  double participation = 0.5;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 64;
  double tau = 0.5;
  double lambda_a = 0.9;
  double lambda_u = 0.1;
  double mu = 1.0;
  double lr = 0.01;
  double decay = 0.998;
  double weight_decay = 5e-4;
  TrainingMode mode = TrainingMode::prototype_wise;
  Aggregation aggregation = Aggregation::uniform;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  // Per-round representation metrics on the test set.
  std::size_t metric_max_pairs = 100000;
  double align_exponent = 2.0;
  double uniform_t = 2.0;

  bool uses_dcfl() const { return mode == TrainingMode::sample_wise || mode == TrainingMode::prototype_wise; }
  void validate() const;
};

// lr0 * decay^completed_rounds
double learning_rate(const TrainingConfig& cfg, std::size_t completed_rounds);

struct ServerState {
  std::size_t round = 0;
  ParameterVector params;
  std::optional<PrototypeSet> prototypes;
  double lr = 0.0;
};

struct ClientUpdate {
  std::size_t client_id = 0;
  ParameterVector params;
  std::size_t n_k = 0;
  Tensor class_sums;  // C x d sums of unit embeddings
  std::vector<std::size_t> class_counts;
  double train_loss = 0.0;  // mean objective over local batches

  friend bool operator==(const ClientUpdate&, const ClientUpdate&) = default;
};

// ceil(fraction * n_clients) distinct ids, ascending, deterministic in (seed, round).
std::vector<std::size_t> sample_clients(std::size_t n_clients, double fraction, std::size_t round,
                                        std::uint64_t seed);

// Round-0 prototypes: pseudo-random unit vectors, all flagged stale.
PrototypeSet initial_prototypes(std::size_t n_classes, std::size_t dim, std::uint64_t seed);

// E epochs of mini-batch SGD on CE + mu * L_mode starting from `global_params`, at the learning
// rate of the given (1-based) round. Class sums come from a final pass over the whole view.
ClientUpdate local_update(const MlpModel& model, const ParameterVector& global_params, const Dataset& data,
                          std::span<const std::size_t> view, const PrototypeSet* protos,
                          const TrainingConfig& cfg, std::size_t round, std::size_t client_id);

// Both reduce sum_k w_k theta_k in the given order, with w_k = 1/K or n_k / sum n.
ParameterVector aggregate_uniform(std::span<const ClientUpdate> updates);
ParameterVector aggregate_weighted(std::span<const ClientUpdate> updates);

// c = normalize(sum_k class_sums / sum_k class_counts) per class; unseen classes keep the previous
// vector and are flagged stale.
PrototypeSet aggregate_prototypes(std::span<const ClientUpdate> updates, const PrototypeSet& previous);

struct TrainingOptions {
  // When set, rounds.csv is appended and flushed after every round and final.ckpt written at the end.
  std::optional<std::filesystem::path> output_dir;
  std::function<void(const RoundRecord&)> on_round;
};

struct TrainingResult {
  std::vector<RoundRecord> records;
  ServerState state;
};

ServerState initial_state(const MlpModel& model, const TrainingConfig& cfg);

// Throws DivergenceError after flushing the records of completed rounds.
TrainingResult run_training(const MlpModel& model, const TrainingConfig& cfg, const PartitionPlan& plan,
                            const Dataset& train, const Dataset& test, const TrainingOptions& options = {});

}  // namespace dcfl
