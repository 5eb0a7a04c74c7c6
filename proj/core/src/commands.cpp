#include "dcfl/commands.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <fmt/os.h>
#include <fmt/ostream.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "dcfl/checkpoint.hpp"
#include "dcfl/error.hpp"
#include "dcfl/losses.hpp"
#include "dcfl/model.hpp"
#include "dcfl/random.hpp"

namespace dcfl::cli {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write '{}'", path.string()));
  out << text << '\n';
}

std::filesystem::path prepare_output(const ExperimentConfig& cfg) {
  const auto dir = cfg.output_path();
  ensure_writable_dir(dir);
  write_text(dir / "config_resolved.json", config_to_json(cfg));
  return dir;
}

}  // namespace

DatasetPair load_datasets(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  if (d.kind == "synthetic") return synthetic_blobs(d.n_classes, d.dim, d.n_per_class, d.spread, cfg.seed);
  std::vector<std::filesystem::path> train(d.cifar_train.begin(), d.cifar_train.end());
  std::vector<std::filesystem::path> test(d.cifar_test.begin(), d.cifar_test.end());
  return {load_cifar10_binary(train, {d.standardize, Split::train}),
          load_cifar10_binary(test, {d.standardize, Split::test})};
}

PartitionPlan make_plan(const ExperimentConfig& cfg, const Dataset& train) {
  if (!cfg.partition.plan.empty()) {
    auto plan = load_plan(cfg.partition.plan);
    plan.validate(train.size());
    return plan;
  }
  if (!cfg.partition.alpha) {
    return iid_partition(train.labels, cfg.training.n_clients, cfg.seed, cfg.partition.min_size);
  }
  return dirichlet_partition(train.labels, cfg.training.n_clients, *cfg.partition.alpha, cfg.seed,
                             cfg.partition.min_size);
}

PartitionPlan cmd_partition(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto dir = prepare_output(cfg);
  const auto data = load_datasets(cfg);
  const auto plan = make_plan(cfg, data.train);
  save_plan(plan, dir / "partition.json");
  const auto hist = class_histograms(plan, data.train.labels, data.train.n_classes);
  std::vector<std::string> columns;
  for (std::size_t c = 0; c < data.train.n_classes; ++c) columns.push_back(fmt::format("class{}", c));
  fmt::print(log, "client,n,{}\n", fmt::join(columns, ","));
  for (std::size_t k = 0; k < hist.size(); ++k) {
    fmt::print(log, "{},{},{}\n", k, plan.assignments[k].size(), fmt::join(hist[k], ","));
  }
  fmt::print(log, "mean label TV distance: {:.4f}\n",
             mean_label_tv_distance(plan, data.train.labels, data.train.n_classes));
  return plan;
}

TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto dir = prepare_output(cfg);
  const auto data = load_datasets(cfg);
  const auto plan = make_plan(cfg, data.train);
  save_plan(plan, dir / "partition.json");
  const MlpModel model(cfg.model);

  TrainSummary summary;
  TrainingOptions options;
  options.output_dir = dir;
  options.on_round = [&](const RoundRecord& r) {
    summary.records.push_back(r);
    fmt::print(log, "round {:>4}  loss {:.4f}  acc {:.4f}  ema {:.4f}\n", r.round, r.train_loss, r.test_acc,
               r.ema_acc);
  };

  auto write_summary = [&] {
    nlohmann::json j;
    std::vector<double> accs;
    for (const auto& r : summary.records) accs.push_back(r.test_acc);
    const auto maxes = running_max(accs);
    summary.max_acc = maxes.empty() ? 0.0 : maxes.back();
    summary.final_acc = accs.empty() ? 0.0 : accs.back();
    summary.final_ema = summary.records.empty() ? 0.0 : summary.records.back().ema_acc;
    j["mode"] = std::string(to_string(cfg.training.mode));
    j["rounds_requested"] = cfg.training.rounds;
    j["rounds_completed"] = summary.records.size();
    j["diverged"] = summary.diverged;
    j["max_acc"] = summary.max_acc;
    j["ema_acc"] = summary.final_ema;
    j["final_acc"] = summary.final_acc;
    write_text(dir / "summary.json", j.dump(2));
  };

  try {
    run_training(model, cfg.training, plan, data.train, data.test, options);
  } catch (const DivergenceError&) {
    summary.diverged = true;
    write_summary();
    throw;
  }
  write_summary();
  return summary;
}

AsymptoticsReport cmd_asymptotics(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto dir = prepare_output(cfg);
  const auto report = convergence_experiment(cfg.asymptotics);
  write_report_csv(report, dir / "asymptotics.csv");
  write_text(dir / "asymptotics.json", report_to_json(report));
  fmt::print(log, "{:>8} {:>14} {:>12} {:>12} {:>12}\n", "M", "empirical", "gap", "gap_se", "bound");
  for (std::size_t i = 0; i < report.m_grid.size(); ++i) {
    fmt::print(log, "{:>8} {:>14.8f} {:>12.3e} {:>12.3e} {:>12.4e}\n", report.m_grid[i], report.empirical_loss[i],
               report.abs_gap[i], report.gap_std_error[i], report.bound[i]);
  }
  fmt::print(log, "limit {:.8f} (se {:.2e}), fitted slope {:.3f}\n", report.limit_estimate, report.limit_std_error,
             report.fitted_slope);
  return report;
}

std::vector<ReportRow> cmd_report(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                                  std::ostream& log) {
  cfg.validate();
  const auto dir = prepare_output(cfg);
  const auto data = load_datasets(cfg);
  const MlpModel model(cfg.model);
  const auto trained = load_checkpoint(checkpoint, model.manifest());
  const auto init = initial_state(model, cfg.training).params;

  std::vector<ReportRow> rows;
  for (const auto& [name, params] : {std::pair<std::string, const ParameterVector*>{"checkpoint", &trained},
                                     std::pair<std::string, const ParameterVector*>{"init", &init}}) {
    const auto out = model.evaluate(*params, data.test.inputs);
    const std::uint64_t metric_seed = derive_seed(cfg.seed, "report-metrics");
    const auto rep = representation_metrics(out.embeddings, data.test.labels, cfg.metrics.max_pairs, metric_seed,
                                            cfg.metrics.align_exponent, cfg.metrics.uniform_t);
    ReportRow row;
    row.model = name;
    row.accuracy = accuracy_from_logits(out.logits, data.test.labels);
    row.align_metric = rep.alignment;
    row.uniform_metric = rep.uniformity;
    row.histogram = cosine_histogram(EmbeddingBatch(out.embeddings, data.test.labels, data.test.n_classes),
                                     cfg.metrics.max_pairs, metric_seed);
    rows.push_back(std::move(row));
  }

  auto csv = fmt::output_file((dir / "metrics.csv").string());
  csv.print("model,source,accuracy,align_metric,uniform_metric,mean_intra_cos,mean_inter_cos\n");
  for (const auto& r : rows) {
    csv.print("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.model,
              r.model == "checkpoint" ? checkpoint.string() : "untrained", r.accuracy, r.align_metric,
              r.uniform_metric, r.histogram.mean_intra, r.histogram.mean_inter);
    fmt::print(log, "{:<10} acc {:.4f}  align {:.4f}  uniform {:.4f}  cos intra {:.4f}  inter {:.4f}\n", r.model,
               r.accuracy, r.align_metric, r.uniform_metric, r.histogram.mean_intra, r.histogram.mean_inter);
  }
  csv.close();
  write_histogram_csv(rows[0].histogram, dir / "histogram.csv");
  write_histogram_csv(rows[1].histogram, dir / "histogram_init.csv");
  return rows;
}

}  // namespace dcfl::cli
