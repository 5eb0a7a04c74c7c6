#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "dcfl/commands.hpp"
#include "dcfl/config.hpp"
#include "dcfl/error.hpp"

namespace {

struct CommonFlags {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::size_t> workers;
  std::optional<std::string> mode;
  std::optional<std::size_t> rounds;
  std::optional<std::string> alpha;
  std::optional<double> mu;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_file, "JSON config file");
    app->add_option("--set", overrides, "Override a config value, e.g. --set training.mu=1")->take_all();
    app->add_option("--seed", seed, "Top-level seed");
    app->add_option("-o,--output-dir", output_dir, "Output directory");
    app->add_option("--workers", workers, "Worker threads");
    app->add_option("--mode", mode, "fedavg_plain | supcon_baseline | sample_wise | prototype_wise");
    app->add_option("--rounds", rounds, "Communication rounds");
    app->add_option("--alpha", alpha, "Dirichlet alpha, or iid/inf");
    app->add_option("--mu", mu, "Contrastive weight");
  }

  // Shortcut flags are applied after --set so they win.
  dcfl::ExperimentConfig resolve() const {
    std::vector<std::string> all = overrides;
    if (seed) all.push_back(fmt::format("seed={}", *seed));
    if (output_dir) all.push_back(fmt::format("output_dir=\"{}\"", *output_dir));
    if (workers) all.push_back(fmt::format("workers={}", *workers));
    if (mode) all.push_back(fmt::format("training.mode=\"{}\"", *mode));
    if (rounds) all.push_back(fmt::format("training.rounds={}", *rounds));
    if (alpha) all.push_back(fmt::format("partition.alpha=\"{}\"", *alpha));
    if (mu) all.push_back(fmt::format("training.mu={:.17g}", *mu));
    auto cfg = dcfl::load_config(config_file.empty() ? std::nullopt
                                                     : std::optional<std::filesystem::path>(config_file),
                                 all);
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated contrastive learning simulator"};
  app.require_subcommand(1);

  CommonFlags partition_flags, train_flags, asym_flags, report_flags;
  auto* partition = app.add_subcommand("partition", "Split the training set across clients");
  partition_flags.attach(partition);
  auto* train = app.add_subcommand("train", "Run federated training");
  train_flags.attach(train);
  auto* asym = app.add_subcommand("asymptotics", "Monte-Carlo convergence experiment");
  asym_flags.attach(asym);
  auto* report = app.add_subcommand("report", "Evaluate a checkpoint and emit histograms");
  report_flags.attach(report);
  std::string checkpoint;
  report->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (partition->parsed()) {
      dcfl::cli::cmd_partition(partition_flags.resolve(), std::cout);
    } else if (train->parsed()) {
      const auto s = dcfl::cli::cmd_train(train_flags.resolve(), std::cout);
      fmt::print("max acc {:.4f}  final ema {:.4f}\n", s.max_acc, s.final_ema);
    } else if (asym->parsed()) {
      dcfl::cli::cmd_asymptotics(asym_flags.resolve(), std::cout);
    } else if (report->parsed()) {
      dcfl::cli::cmd_report(report_flags.resolve(), checkpoint, std::cout);
    }
  } catch (const dcfl::DivergenceError& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return 3;
  } catch (const dcfl::Error& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
