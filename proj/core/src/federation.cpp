#include "dcfl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <fmt/os.h>

#include "dcfl/checkpoint.hpp"
#include "dcfl/error.hpp"
#include "dcfl/ops.hpp"
#include "dcfl/random.hpp"
#include "dcfl/tape.hpp"

namespace dcfl {

DivergenceError::DivergenceError(std::size_t round, std::size_t client, double loss)
    : Error(fmt::format("training diverged in round {} on client {}: loss {}", round, client, loss)),
      round_(round),
      client_(client),
      loss_(loss) {}

std::string_view to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::fedavg_plain: return "fedavg_plain";
    case TrainingMode::supcon_baseline: return "supcon_baseline";
    case TrainingMode::sample_wise: return "sample_wise";
    case TrainingMode::prototype_wise: return "prototype_wise";
  }
  return "?";
}

std::string_view to_string(Aggregation aggregation) {
  return aggregation == Aggregation::uniform ? "uniform" : "weighted";
}

TrainingMode parse_training_mode(std::string_view text) {
  for (auto m : {TrainingMode::fedavg_plain, TrainingMode::supcon_baseline, TrainingMode::sample_wise,
                 TrainingMode::prototype_wise}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError(fmt::format(
      "unknown mode '{}' (expected fedavg_plain, supcon_baseline, sample_wise or prototype_wise)", text));
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "uniform") return Aggregation::uniform;
  if (text == "weighted") return Aggregation::weighted;
  throw ConfigError(fmt::format("unknown aggregation '{}' (expected uniform or weighted)", text));
}

void TrainingConfig::validate() const {
  if (n_clients == 0) throw ConfigError("n_clients must be positive");
  if (!(participation > 0.0 && participation <= 1.0)) {
    throw ConfigError(fmt::format("participation {} outside (0, 1]", participation));
  }
  if (participation * static_cast<double>(n_clients) < 1.0 - 1e-9) {
    throw ConfigError(fmt::format("participation {} x {} clients selects nobody", participation, n_clients));
  }
  if (local_epochs == 0) throw ConfigError("local_epochs must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(tau > 0.0)) throw ConfigError(fmt::format("tau must be positive, got {}", tau));
  if (!(mu >= 0.0)) throw ConfigError(fmt::format("mu must be non-negative, got {}", mu));
  if (uses_dcfl()) {
    if (lambda_a < 0.0 || lambda_u < 0.0 || std::abs(lambda_a + lambda_u - 1.0) > 1e-9) {
      throw ConfigError(fmt::format("lambda_a + lambda_u must equal 1 (got {} + {})", lambda_a, lambda_u));
    }
  }
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(decay > 0.0)) throw ConfigError("decay must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (metric_max_pairs == 0) throw ConfigError("metric_max_pairs must be positive");
  if (!(align_exponent > 0.0) || !(uniform_t > 0.0)) throw ConfigError("metric exponents must be positive");
}

double learning_rate(const TrainingConfig& cfg, std::size_t completed_rounds) {
  return cfg.lr * std::pow(cfg.decay, static_cast<double>(completed_rounds));
}

std::vector<std::size_t> sample_clients(std::size_t n_clients, double fraction, std::size_t round,
                                        std::uint64_t seed) {
  if (n_clients == 0) return {};
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError(fmt::format("fraction {} outside (0, 1]", fraction));
  // The epsilon keeps products such as 0.07 * 100 from rounding up to an extra client.
  auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n_clients) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n_clients);
  std::vector<std::size_t> ids(n_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng = make_rng(seed, "sample", {round});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

PrototypeSet initial_prototypes(std::size_t n_classes, std::size_t dim, std::uint64_t seed) {
  PrototypeSet p{Tensor({n_classes, dim}, 0.0), std::vector<std::size_t>(n_classes, 0),
                 std::vector<bool>(n_classes, true)};
  Rng rng = make_rng(seed, "prototypes");
  for (std::size_t c = 0; c < n_classes; ++c) {
    const auto v = random_unit_vector(dim, rng);
    std::copy(v.begin(), v.end(), p.prototypes.row(c).begin());
  }
  return p;
}

ClientUpdate local_update(const MlpModel& model, const ParameterVector& global_params, const Dataset& data,
                          std::span<const std::size_t> view, const PrototypeSet* protos,
                          const TrainingConfig& cfg, std::size_t round, std::size_t client_id) {
  if (cfg.mode == TrainingMode::prototype_wise && cfg.mu > 0.0 && protos == nullptr) {
    throw ConfigError("prototype_wise training needs a prototype set");
  }
  if (view.size() < cfg.batch_size) {
    throw ConfigError(fmt::format("client {} holds {} samples, fewer than one batch of {}; raise min_size or lower "
                                  "batch_size",
                                  client_id, view.size(), cfg.batch_size));
  }
  const double lr = learning_rate(cfg, round > 0 ? round - 1 : 0);
  const bool contrastive = cfg.mode != TrainingMode::fedavg_plain && cfg.mu > 0.0;
  Rng rng = make_rng(cfg.seed, "client", {round, client_id});

  ClientUpdate update;
  update.client_id = client_id;
  update.params = global_params;
  double loss_total = 0.0;
  std::size_t batches_seen = 0;

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    for (const auto& batch : batch_iterator(data, view, cfg.batch_size, rng())) {
      Tape tape;
      const auto graph = model.forward(tape, update.params, batch.inputs);
      Var loss = ad::mean(ad::softmax_cross_entropy(graph.logits, batch.labels));
      if (contrastive) {
        std::optional<Var> reg;
        switch (cfg.mode) {
          case TrainingMode::supcon_baseline:
            if (has_positive_pair(batch.labels)) reg = ad::supcon_loss(graph.embeddings, batch.labels, cfg.tau);
            break;
          case TrainingMode::sample_wise:
            if (has_positive_pair(batch.labels)) {
              reg = ad::dcfl_sample_loss(graph.embeddings, batch.labels, cfg.tau, cfg.lambda_a, cfg.lambda_u).total;
            }
            break;
          case TrainingMode::prototype_wise:
            reg = ad::dcfl_prototype_loss(graph.embeddings, batch.labels, *protos, cfg.tau, cfg.lambda_a,
                                          cfg.lambda_u)
                      .total;
            break;
          case TrainingMode::fedavg_plain: break;
        }
        if (reg) loss = ad::combined_objective(loss, *reg, cfg.mu);
      }
      const double value = loss.value().item();
      if (!std::isfinite(value) || value > kDivergenceCeiling) throw DivergenceError(round, client_id, value);
      tape.backward(loss);
      update.params = sgd_step(update.params, model.collect_gradients(graph), lr, cfg.weight_decay);
      loss_total += value;
      ++batches_seen;
    }
  }
  if (!std::all_of(update.params.values().begin(), update.params.values().end(),
                   [](double v) { return std::isfinite(v); })) {
    throw DivergenceError(round, client_id, std::numeric_limits<double>::quiet_NaN());
  }
  update.train_loss = loss_total / static_cast<double>(batches_seen);

  const std::size_t n_classes = model.config().n_classes;
  const auto local = data.gather(view);
  const auto out = model.evaluate(update.params, local.inputs);
  update.n_k = view.size();
  update.class_sums = Tensor({n_classes, out.embeddings.cols()}, 0.0);
  update.class_counts.assign(n_classes, 0);
  for (std::size_t i = 0; i < local.labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(local.labels[i]);
    auto dst = update.class_sums.row(c);
    const auto src = out.embeddings.row(i);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    ++update.class_counts[c];
  }
  return update;
}

namespace {

void check_updates(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw EmptyReductionError("aggregation of zero client updates");
  for (const auto& u : updates) require_compatible(updates.front().params, u.params, "aggregation");
}

ParameterVector weighted_sum(std::span<const ClientUpdate> updates, const std::vector<double>& weights) {
  ParameterVector out(updates.front().params.manifest());
  auto acc = out.values();
  for (std::size_t k = 0; k < updates.size(); ++k) {
    const auto theta = updates[k].params.values();
    const double w = weights[k];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * theta[i];
  }
  return out;
}

}  // namespace

ParameterVector aggregate_uniform(std::span<const ClientUpdate> updates) {
  check_updates(updates);
  const double w = 1.0 / static_cast<double>(updates.size());
  return weighted_sum(updates, std::vector<double>(updates.size(), w));
}

ParameterVector aggregate_weighted(std::span<const ClientUpdate> updates) {
  check_updates(updates);
  std::size_t total = 0;
  for (const auto& u : updates) total += u.n_k;
  if (total == 0) throw EmptyReductionError("weighted aggregation with zero total samples");
  std::vector<double> weights;
  weights.reserve(updates.size());
  for (const auto& u : updates) weights.push_back(static_cast<double>(u.n_k) / static_cast<double>(total));
  return weighted_sum(updates, weights);
}

PrototypeSet aggregate_prototypes(std::span<const ClientUpdate> updates, const PrototypeSet& previous) {
  const std::size_t n_classes = previous.n_classes();
  const std::size_t dim = previous.dim();
  PrototypeSet next{previous.prototypes, std::vector<std::size_t>(n_classes, 0), std::vector<bool>(n_classes, true)};
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<double> sum(dim, 0.0);
    std::size_t count = 0;
    for (const auto& u : updates) {
      if (u.class_counts.size() != n_classes || u.class_sums.rows() != n_classes || u.class_sums.cols() != dim) {
        throw DimensionError("client class statistics do not match the prototype set");
      }
      const auto row = u.class_sums.row(c);
      for (std::size_t k = 0; k < dim; ++k) sum[k] += row[k];
      count += u.class_counts[c];
    }
    if (count == 0) continue;
    for (double& v : sum) v /= static_cast<double>(count);
    const double norm = l2_norm(sum);
    // Opposing embeddings can cancel exactly; such a class keeps its previous vector.
    if (!(norm > kNormEpsilon)) continue;
    auto dst = next.prototypes.row(c);
    for (std::size_t k = 0; k < dim; ++k) dst[k] = sum[k] / norm;
    next.counts[c] = count;
    next.stale[c] = false;
  }
  return next;
}

ServerState initial_state(const MlpModel& model, const TrainingConfig& cfg) {
  ServerState state;
  state.params = model.initialize(derive_seed(cfg.seed, "model-init"));
  state.lr = cfg.lr;
  if (cfg.mode == TrainingMode::prototype_wise) {
    state.prototypes = initial_prototypes(model.config().n_classes, model.config().embed_dim, cfg.seed);
  }
  return state;
}

namespace {

std::vector<ClientUpdate> run_clients(const MlpModel& model, const ServerState& state, const Dataset& train,
                                      const PartitionPlan& plan, const std::vector<std::size_t>& ids,
                                      const TrainingConfig& cfg, std::size_t round) {
  std::vector<ClientUpdate> results(ids.size());
  std::vector<std::exception_ptr> errors(ids.size());
  const PrototypeSet* protos = state.prototypes ? &*state.prototypes : nullptr;
  auto task = [&](std::size_t slot) {
    try {
      results[slot] = local_update(model, state.params, train, plan.assignments[ids[slot]], protos, cfg, round, ids[slot]);
    } catch (...) {
      errors[slot] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(cfg.workers, ids.size());
  if (workers <= 1) {
    for (std::size_t s = 0; s < ids.size(); ++s) task(s);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < ids.size(); s = next++) task(s);
      });
    }
    for (auto& t : pool) t.join();
  }
  // Slots follow ascending client id, so the first error reported is schedule independent.
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

}  // namespace

TrainingResult run_training(const MlpModel& model, const TrainingConfig& cfg, const PartitionPlan& plan,
                            const Dataset& train, const Dataset& test, const TrainingOptions& options) {
  cfg.validate();
  if (plan.n_clients() != cfg.n_clients) {
    throw ConfigError(fmt::format("partition plan has {} clients, config expects {}", plan.n_clients(), cfg.n_clients));
  }
  plan.validate(train.size());
  if (train.dim() != model.config().input_dim || test.dim() != model.config().input_dim) {
    throw DimensionError("dataset dimension does not match the model input");
  }

  TrainingResult result;
  result.state = initial_state(model, cfg);
  ServerState& state = result.state;

  std::optional<fmt::ostream> csv;
  if (options.output_dir) {
    std::filesystem::create_directories(*options.output_dir);
    csv.emplace(fmt::output_file((*options.output_dir / "rounds.csv").string()));
    csv->print("{}\n", kRoundCsvHeader);
    csv->flush();
  }

  std::optional<double> ema;
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    const auto ids = sample_clients(cfg.n_clients, cfg.participation, round, cfg.seed);
    const auto updates = run_clients(model, state, train, plan, ids, cfg, round);

    state.params = cfg.aggregation == Aggregation::uniform ? aggregate_uniform(updates) : aggregate_weighted(updates);
    if (state.prototypes) state.prototypes = aggregate_prototypes(updates, *state.prototypes);
    state.round = round;
    state.lr = learning_rate(cfg, round);

    RoundRecord rec;
    rec.round = round;
    rec.client_ids = ids;
    double loss_sum = 0.0;
    for (const auto& u : updates) loss_sum += u.train_loss;
    rec.train_loss = loss_sum / static_cast<double>(updates.size());
    const auto out = model.evaluate(state.params, test.inputs);
    rec.test_acc = accuracy_from_logits(out.logits, test.labels);
    ema = ema_update(ema, rec.test_acc);
    rec.ema_acc = *ema;
    const auto rep = representation_metrics(out.embeddings, test.labels, cfg.metric_max_pairs,
                                            derive_seed(cfg.seed, "round-metrics", {round}), cfg.align_exponent,
                                            cfg.uniform_t);
    rec.align_metric = rep.alignment;
    rec.uniform_metric = rep.uniformity;

    if (csv) {
      csv->print("{}\n", format_round_csv(rec));
      csv->flush();
    }
    if (options.on_round) options.on_round(rec);
    result.records.push_back(std::move(rec));
  }
  if (csv) csv->close();
  if (options.output_dir) save_checkpoint(state.params, *options.output_dir / "final.ckpt");
  return result;
}

}  // namespace dcfl
