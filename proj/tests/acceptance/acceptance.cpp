// Runs every acceptance criterion at its stated tolerance and prints one PASS/FAIL line per criterion.
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dcfl/asymptotics.hpp"
#include "dcfl/commands.hpp"
#include "dcfl/config.hpp"
#include "dcfl/error.hpp"
#include "dcfl/federation.hpp"
#include "dcfl/losses.hpp"
#include "dcfl/metrics.hpp"
#include "dcfl/tape.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

namespace dcfl {
namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

std::string join(const std::vector<double>& xs, const char* spec = "{:.4f}") {
  std::string out;
  for (double x : xs) out += (out.empty() ? "" : " ") + fmt::format(fmt::runtime(spec), x);
  return out;
}

// 1: the log-softmax and decomposed routes agree on 1000 random batches.
Outcome loss_identity() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<std::size_t> bdist(2, 64), cdist(2, 10), ddist(2, 128);
  std::uniform_real_distribution<double> tdist(0.1, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = bdist(rng), c = cdist(rng), d = ddist(rng);
    std::vector<int> y = testing::random_labels(b, c, rng);
    y[1] = y[0];
    const EmbeddingBatch batch(testing::random_unit_rows(b, d, rng), y, c);
    const double tau = trial % 2 == 0 ? 0.5 : tdist(rng);
    worst = std::max(worst, std::abs(supcon_loss(batch, tau) - supcon_decomposed(batch, tau)));
  }
  const double secs = seconds_since(start);
  return {worst < 1e-10 && secs < 30.0, fmt::format("max |diff| {:.3e} (< 1e-10), {:.1f} s (< 30 s)", worst, secs)};
}

// 2: tape gradients vs central differences with h = 1e-5 for CE, SupCon, DCFL-SW and DCFL-PW.
Outcome gradient_suite() {
  const auto start = Clock::now();
  double worst_ce = 0.0, worst_supcon = 0.0, worst_sw = 0.0, worst_pw = 0.0;
  std::normal_distribution<double> g(0.0, 1.0);
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(5000 + static_cast<std::uint64_t>(seed));
    const std::size_t b = 4 + static_cast<std::size_t>(seed) % 9, c = 2 + static_cast<std::size_t>(seed) % 4,
                      d = 3 + static_cast<std::size_t>(seed) % 6;
    Tensor raw({b, d}, 0.0), logits({b, c}, 0.0);
    for (double& v : raw.values()) v = g(rng);
    for (double& v : logits.values()) v = 2.0 * g(rng);
    std::vector<int> y = testing::random_labels(b, c, rng);
    y[1] = y[0];
    const Tensor proto_rows = testing::random_unit_rows(c, d, rng);
    const PrototypeSet protos{proto_rows, std::vector<std::size_t>(c, 1), std::vector<bool>(c, false)};
    auto z = [](const std::vector<Var>& v) { return ad::l2_normalize_rows(v[0]); };
    using testing::check_gradient;
    worst_ce = std::max(worst_ce, check_gradient([&](Tape&, const std::vector<Var>& v) {
                                    return ad::mean(ad::softmax_cross_entropy(v[0], y));
                                  }, {logits}, 1e-5).max_rel_error);
    worst_supcon = std::max(worst_supcon, check_gradient([&](Tape&, const std::vector<Var>& v) {
                                            return ad::supcon_loss(z(v), y, 0.5);
                                          }, {raw}, 1e-5).max_rel_error);
    worst_sw = std::max(worst_sw, check_gradient([&](Tape&, const std::vector<Var>& v) {
                                    return ad::dcfl_sample_loss(z(v), y, 0.5, 0.9, 0.1).total;
                                  }, {raw}, 1e-5).max_rel_error);
    worst_pw = std::max(worst_pw, check_gradient([&](Tape&, const std::vector<Var>& v) {
                                    return ad::dcfl_prototype_loss(z(v), y, protos, 0.5, 0.9, 0.1).total;
                                  }, {raw}, 1e-5).max_rel_error);
  }
  const double secs = seconds_since(start);
  const double worst = std::max({worst_ce, worst_supcon, worst_sw, worst_pw});
  return {worst < 1e-4 && secs < 120.0,
          fmt::format("max rel error CE {:.2e} SupCon {:.2e} SW {:.2e} PW {:.2e} (< 1e-4), {:.1f} s (< 120 s)",
                      worst_ce, worst_supcon, worst_sw, worst_pw, secs)};
}

// 3: gap shrinks across the default grid, log-log slope <= -0.4, and gap(64) >= 10 gap(1e5).
Outcome asymptotics_suite() {
  const auto start = Clock::now();
  AsymptoticsConfig cfg;
  const std::vector<std::size_t> grid = cfg.m_grid;
  cfg.m_grid = {10, 64, 100, 1000, 10000, 100000};
  const AsymptoticsReport r = convergence_experiment(cfg);
  std::vector<double> gap, se;
  double gap64 = 0.0;
  for (std::size_t i = 0; i < cfg.m_grid.size(); ++i) {
    if (cfg.m_grid[i] == 64) {
      gap64 = r.abs_gap[i];
      continue;
    }
    gap.push_back(r.abs_gap[i]);
    se.push_back(r.gap_std_error[i]);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < gap.size(); ++i)
    if (gap[i] - gap[i - 1] > 2.0 * std::hypot(se[i], se[i - 1])) monotone = false;
  // Least squares on the default grid only.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double n = static_cast<double>(gap.size());
  for (std::size_t i = 0; i < gap.size(); ++i) {
    const double x = std::log(static_cast<double>(grid[i])), yv = std::log(std::max(gap[i], 1e-300));
    sx += x;
    sy += yv;
    sxx += x * x;
    sxy += x * yv;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double ratio = gap64 / gap.back();
  const double secs = seconds_since(start);
  return {monotone && slope <= -0.4 && ratio >= 10.0 && secs < 300.0,
          fmt::format("gaps {} (se {}), monotone within 2 se: {}, slope {:.3f} (<= -0.4), gap(64)/gap(1e5) {:.1f} "
                      "(>= 10), {:.1f} s (< 300 s)",
                      join(gap, "{:.2e}"), join(se, "{:.1e}"), monotone, slope, ratio, secs)};
}

struct RunOutput {
  std::vector<RoundRecord> records;
  ServerState state;
  std::filesystem::path csv;
  bool diverged = false;
};

// The desk-scale setup: default experiment config at the given seed.
ExperimentConfig desk_config(std::uint64_t seed, TrainingMode mode, double lambda_a = 0.9, double lambda_u = 0.1) {
  ExperimentConfig cfg = load_config(std::nullopt);
  cfg.seed = seed;
  cfg.training.mode = mode;
  cfg.training.lambda_a = lambda_a;
  cfg.training.lambda_u = lambda_u;
  cfg.propagate();
  cfg.validate();
  return cfg;
}

RunOutput run_desk(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  const DatasetPair data = cli::load_datasets(cfg);
  const PartitionPlan plan = cli::make_plan(cfg, data.train);
  const MlpModel model(cfg.model);
  std::filesystem::create_directories(dir);
  TrainingOptions opts;
  opts.output_dir = dir;
  RunOutput out;
  out.csv = dir / "rounds.csv";
  try {
    TrainingResult r = run_training(model, cfg.training, plan, data.train, data.test, opts);
    out.records = std::move(r.records);
    out.state = std::move(r.state);
  } catch (const DivergenceError&) {
    out.diverged = true;
    out.records = read_rounds_csv(out.csv);
  }
  return out;
}

double final_ema(const RunOutput& r) { return r.records.empty() ? 0.0 : r.records.back().ema_acc; }

double cosine_gap(const ExperimentConfig& cfg, const ParameterVector& params) {
  const DatasetPair data = cli::load_datasets(cfg);
  const MlpModel model(cfg.model);
  const auto out = model.evaluate(params, data.test.inputs);
  const SimilarityHistogram h = cosine_histogram(EmbeddingBatch(out.embeddings, data.test.labels, data.test.n_classes),
                                                 cfg.metrics.max_pairs, derive_seed(cfg.seed, "report-metrics"));
  return h.mean_intra - h.mean_inter;
}

struct DeskRuns {
  std::vector<RunOutput> fedavg, pw, pw_uniform_heavy;
  double seconds = 0.0;
};

DeskRuns run_desk_suite(const std::filesystem::path& root) {
  const auto start = Clock::now();
  DeskRuns runs;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    runs.fedavg.push_back(
        run_desk(desk_config(seed, TrainingMode::fedavg_plain), root / fmt::format("fedavg-{}", seed)));
    runs.pw.push_back(run_desk(desk_config(seed, TrainingMode::prototype_wise), root / fmt::format("pw-{}", seed)));
  }
  runs.seconds = seconds_since(start);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    runs.pw_uniform_heavy.push_back(run_desk(desk_config(seed, TrainingMode::prototype_wise, 0.3, 0.7),
                                             root / fmt::format("pw-0.3-{}", seed)));
  }
  return runs;
}

std::vector<double> final_emas(const std::vector<RunOutput>& runs) {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(final_ema(r));
  return out;
}

Outcome fl_improvement(const DeskRuns& runs) {
  const auto fed = final_emas(runs.fedavg), pw = final_emas(runs.pw);
  const double diff = mean_of(pw) - mean_of(fed);
  return {diff >= 0.02 && runs.seconds < 900.0,
          fmt::format("final EMA FedAvg [{}] mean {:.4f}; DCFL-PW [{}] mean {:.4f}; difference {:+.4f} (>= +0.02), "
                      "{:.0f} s (< 900 s)",
                      join(fed), mean_of(fed), join(pw), mean_of(pw), diff, runs.seconds)};
}

Outcome lambda_ablation(const DeskRuns& runs) {
  const auto align_heavy = final_emas(runs.pw), uniform_heavy = final_emas(runs.pw_uniform_heavy);
  const bool diverged = std::any_of(runs.pw.begin(), runs.pw.end(), [](const RunOutput& r) { return r.diverged; });
  return {mean_of(align_heavy) >= mean_of(uniform_heavy) && !diverged,
          fmt::format("final EMA (0.9, 0.1) mean {:.4f} vs (0.3, 0.7) [{}] mean {:.4f}; divergence at (0.9, 0.1): {}",
                      mean_of(align_heavy), join(uniform_heavy), mean_of(uniform_heavy), diverged)};
}

Outcome cosine_structure(const DeskRuns& runs) {
  std::vector<double> trained, untrained;
  for (std::uint64_t seed = 0; seed < runs.pw.size(); ++seed) {
    const ExperimentConfig cfg = desk_config(seed, TrainingMode::prototype_wise);
    if (runs.pw[seed].diverged) continue;
    trained.push_back(cosine_gap(cfg, runs.pw[seed].state.params));
    untrained.push_back(cosine_gap(cfg, initial_state(MlpModel(cfg.model), cfg.training).params));
  }
  const double t = mean_of(trained), u = mean_of(untrained);
  return {!trained.empty() && t >= 0.3 && t > u,
          fmt::format("intra - inter cosine after DCFL-PW [{}] mean {:.4f} (>= 0.3); untrained mean {:.4f}",
                      join(trained), t, u)};
}

Outcome determinism(const DeskRuns& runs, const std::filesystem::path& root) {
  ExperimentConfig cfg = desk_config(0, TrainingMode::prototype_wise);
  const std::string reference = slurp(runs.pw[0].csv);
  run_desk(cfg, root / "rerun-serial");
  cfg.workers = 3;
  cfg.propagate();
  run_desk(cfg, root / "rerun-workers3");
  const bool serial = slurp(root / "rerun-serial" / "rounds.csv") == reference;
  const bool parallel = slurp(root / "rerun-workers3" / "rounds.csv") == reference;
  return {serial && parallel && !reference.empty(),
          fmt::format("rounds.csv byte-identical on rerun: {}; with 3 workers: {}", serial, parallel)};
}

Outcome aggregation_oracles() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_int_distribution<std::size_t> count(1, 1000);
  std::size_t mismatches = 0, checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + static_cast<std::size_t>(trial) % 17, n = 1 + static_cast<std::size_t>(trial) % 97;
    std::vector<ClientUpdate> ups(k), equal(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> v(n);
      for (double& x : v) x = g(rng);
      ups[i].client_id = i;
      ups[i].params = ParameterVector(Manifest{{"w", {n}}}, v);
      ups[i].n_k = count(rng);
      equal[i] = ups[i];
      equal[i].n_k = 50;
    }
    double total = 0.0;
    for (const auto& u : ups) total += static_cast<double>(u.n_k);
    const ParameterVector uni = aggregate_uniform(ups), wtd = aggregate_weighted(ups);
    for (std::size_t j = 0; j < n; ++j) {
      double ref_u = 0.0, ref_w = 0.0;
      for (const auto& u : ups) {
        ref_u += 1.0 / static_cast<double>(k) * u.params.values()[j];
        ref_w += static_cast<double>(u.n_k) / total * u.params.values()[j];
      }
      mismatches += uni.values()[j] != ref_u;
      mismatches += wtd.values()[j] != ref_w;
      checked += 2;
    }
    mismatches += aggregate_weighted(equal) != aggregate_uniform(equal);
    ++checked;
  }
  return {mismatches == 0, fmt::format("{} exact comparisons, {} mismatches", checked, mismatches)};
}

Outcome ema_contract(const DeskRuns& runs) {
  double worst = 0.0;
  std::size_t streams = 0;
  for (const auto* group : {&runs.fedavg, &runs.pw, &runs.pw_uniform_heavy}) {
    for (const auto& run : *group) {
      const auto logged = read_rounds_csv(run.csv);
      std::optional<double> ema;
      for (const auto& r : logged) {
        ema = ema == std::nullopt ? r.test_acc : 0.9 * *ema + 0.1 * r.test_acc;
        worst = std::max(worst, std::abs(*ema - r.ema_acc));
      }
      ++streams;
    }
  }
  return {streams > 0 && worst <= 1e-12, fmt::format("{} logged streams, max |recomputed - logged| {:.2e} (<= 1e-12)",
                                                     streams, worst)};
}

}  // namespace
}  // namespace dcfl

int main() {
  using namespace dcfl;
  testing::TempDir root("acceptance");
  int failures = 0;
  auto report = [&](int id, const Outcome& o) {
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };
  auto guarded = [&](int id, const std::function<Outcome()>& fn) {
    try {
      report(id, fn());
    } catch (const std::exception& e) {
      report(id, {false, fmt::format("error: {}", e.what())});
    }
  };

  guarded(1, loss_identity);
  guarded(2, gradient_suite);
  guarded(3, asymptotics_suite);
  DeskRuns runs;
  bool desk_ok = true;
  try {
    runs = run_desk_suite(root.path());
  } catch (const std::exception& e) {
    desk_ok = false;
    for (int id : {4, 5, 6, 7, 9}) report(id, {false, fmt::format("desk runs failed: {}", e.what())});
  }
  if (desk_ok) {
    guarded(4, [&] { return fl_improvement(runs); });
    guarded(5, [&] { return lambda_ablation(runs); });
    guarded(6, [&] { return cosine_structure(runs); });
    guarded(7, [&] { return determinism(runs, root.path()); });
  }
  guarded(8, aggregation_oracles);
  if (desk_ok) guarded(9, [&] { return ema_contract(runs); });
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
