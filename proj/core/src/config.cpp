#include "dcfl/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dcfl/error.hpp"

namespace dcfl {

using nlohmann::json;

namespace {

json to_json_value(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  const auto& p = c.partition;
  const auto& m = c.model;
  const auto& t = c.training;
  const auto& a = c.asymptotics;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["dataset"] = {{"kind", d.kind},         {"n_classes", d.n_classes},     {"dim", d.dim},
                  {"n_per_class", d.n_per_class}, {"spread", d.spread},   {"cifar_train", d.cifar_train},
                  {"cifar_test", d.cifar_test},   {"standardize", d.standardize}};
  j["partition"] = {{"alpha", p.alpha ? json(*p.alpha) : json("iid")}, {"min_size", p.min_size}, {"plan", p.plan}};
  j["model"] = {{"hidden_dim", m.hidden_dim},
                {"hidden_layers", m.hidden_layers},
                {"feature_dim", m.feature_dim},
                {"embed_dim", m.embed_dim},
                {"feature_relu", m.feature_relu},
                {"projection_bias", m.projection_bias}};
  j["training"] = {{"rounds", t.rounds},
                   {"n_clients", t.n_clients},
                   {"participation", t.participation},
                   {"local_epochs", t.local_epochs},
                   {"batch_size", t.batch_size},
                   {"tau", t.tau},
                   {"lambda_a", t.lambda_a},
                   {"lambda_u", t.lambda_u},
                   {"mu", t.mu},
                   {"lr", t.lr},
                   {"decay", t.decay},
                   {"weight_decay", t.weight_decay},
                   {"mode", std::string(to_string(t.mode))},
                   {"aggregation", std::string(to_string(t.aggregation))}};
  j["metrics"] = {{"max_pairs", c.metrics.max_pairs},
                  {"align_exponent", c.metrics.align_exponent},
                  {"uniform_t", c.metrics.uniform_t}};
  j["asymptotics"] = {{"tau", a.tau},
                      {"dim", a.dim},
                      {"kappa", a.kappa},
                      {"m_grid", a.m_grid},
                      {"trials", a.trials},
                      {"limit_inner", a.limit_inner},
                      {"anchors_per_draw", a.mc.anchors_per_draw}};
  return j;
}

std::optional<double> alpha_from_json(const json& v) {
  if (v.is_string()) return parse_alpha(v.get<std::string>());
  if (v.is_null()) return std::nullopt;
  const double a = v.get<double>();
  if (std::isinf(a)) return std::nullopt;
  return a;
}

ExperimentConfig from_json_value(const json& j) {
  ExperimentConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.output_dir = j.at("output_dir").get<std::string>();
  c.workers = j.at("workers").get<std::size_t>();

  const auto& d = j.at("dataset");
  c.dataset.kind = d.at("kind").get<std::string>();
  c.dataset.n_classes = d.at("n_classes").get<std::size_t>();
  c.dataset.dim = d.at("dim").get<std::size_t>();
  c.dataset.n_per_class = d.at("n_per_class").get<std::size_t>();
  c.dataset.spread = d.at("spread").get<double>();
  c.dataset.cifar_train = d.at("cifar_train").get<std::vector<std::string>>();
  c.dataset.cifar_test = d.at("cifar_test").get<std::vector<std::string>>();
  c.dataset.standardize = d.at("standardize").get<bool>();

  const auto& p = j.at("partition");
  c.partition.alpha = alpha_from_json(p.at("alpha"));
  c.partition.min_size = p.at("min_size").get<std::size_t>();
  c.partition.plan = p.at("plan").get<std::string>();

  const auto& m = j.at("model");
  c.model.hidden_dim = m.at("hidden_dim").get<std::size_t>();
  c.model.hidden_layers = m.at("hidden_layers").get<std::size_t>();
  c.model.feature_dim = m.at("feature_dim").get<std::size_t>();
  c.model.embed_dim = m.at("embed_dim").get<std::size_t>();
  c.model.feature_relu = m.at("feature_relu").get<bool>();
  c.model.projection_bias = m.at("projection_bias").get<bool>();

  const auto& t = j.at("training");
  c.training.rounds = t.at("rounds").get<std::size_t>();
  c.training.n_clients = t.at("n_clients").get<std::size_t>();
  c.training.participation = t.at("participation").get<double>();
  c.training.local_epochs = t.at("local_epochs").get<std::size_t>();
  c.training.batch_size = t.at("batch_size").get<std::size_t>();
  c.training.tau = t.at("tau").get<double>();
  c.training.lambda_a = t.at("lambda_a").get<double>();
  c.training.lambda_u = t.at("lambda_u").get<double>();
  c.training.mu = t.at("mu").get<double>();
  c.training.lr = t.at("lr").get<double>();
  c.training.decay = t.at("decay").get<double>();
  c.training.weight_decay = t.at("weight_decay").get<double>();
  c.training.mode = parse_training_mode(t.at("mode").get<std::string>());
  c.training.aggregation = parse_aggregation(t.at("aggregation").get<std::string>());

  const auto& me = j.at("metrics");
  c.metrics.max_pairs = me.at("max_pairs").get<std::size_t>();
  c.metrics.align_exponent = me.at("align_exponent").get<double>();
  c.metrics.uniform_t = me.at("uniform_t").get<double>();

  const auto& a = j.at("asymptotics");
  c.asymptotics.tau = a.at("tau").get<double>();
  c.asymptotics.dim = a.at("dim").get<std::size_t>();
  c.asymptotics.kappa = a.at("kappa").get<double>();
  c.asymptotics.m_grid = a.at("m_grid").get<std::vector<std::size_t>>();
  c.asymptotics.trials = a.at("trials").get<std::size_t>();
  c.asymptotics.limit_inner = a.at("limit_inner").get<std::size_t>();
  c.asymptotics.mc.anchors_per_draw = a.at("anchors_per_draw").get<std::size_t>();
  c.propagate();
  return c;
}

// Every key in `patch` must exist in `base`; nested objects are checked recursively.
void check_known_keys(const json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError(fmt::format("config section '{}' must be an object", prefix));
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(fmt::format("unknown config key '{}'", path));
    if (base.at(key).is_object()) check_known_keys(base.at(key), value, path);
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(fmt::format("override '{}' is not of the form key.path=value", assignment));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw ConfigError(fmt::format("unknown config key '{}'", key));
    node = &(*node)[parts[i]];
  }
  if (node->is_object()) throw ConfigError(fmt::format("'{}' is a section, not a value", key));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  *node = value;
}

}  // namespace

std::optional<double> parse_alpha(const std::string& text) {
  if (text == "iid" || text == "inf" || text == "infinity") return std::nullopt;
  try {
    std::size_t used = 0;
    const double a = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    if (std::isinf(a)) return std::nullopt;
    return a;
  } catch (const std::logic_error&) {
    throw ConfigError(fmt::format("alpha '{}' is neither a number nor iid/inf", text));
  }
}

void ExperimentConfig::propagate() {
  training.seed = seed;
  training.workers = workers;
  training.metric_max_pairs = metrics.max_pairs;
  training.align_exponent = metrics.align_exponent;
  training.uniform_t = metrics.uniform_t;
  asymptotics.seed = seed;
  asymptotics.mc.workers = workers;
  model.n_classes = dataset.kind == "cifar10" ? 10 : dataset.n_classes;
  model.input_dim = dataset.kind == "cifar10" ? kCifarPixels : dataset.dim;
}

void ExperimentConfig::validate() const {
  if (dataset.kind != "synthetic" && dataset.kind != "cifar10") {
    throw ConfigError(fmt::format("dataset.kind '{}' must be synthetic or cifar10", dataset.kind));
  }
  if (dataset.kind == "cifar10" && (dataset.cifar_train.empty() || dataset.cifar_test.empty())) {
    throw ConfigError("cifar10 needs dataset.cifar_train and dataset.cifar_test files");
  }
  if (dataset.kind == "synthetic") {
    if (dataset.n_classes < 2) throw ConfigError("dataset.n_classes must be >= 2");
    if (dataset.dim < 2) throw ConfigError("dataset.dim must be >= 2");
    if (!(dataset.spread > 0.0)) throw ConfigError("dataset.spread must be positive");
    if (dataset.n_per_class < 2) throw ConfigError("dataset.n_per_class must be >= 2");
  }
  if (partition.alpha && !(*partition.alpha > 0.0)) throw ConfigError("partition.alpha must be positive");
  if (partition.min_size == 0) throw ConfigError("partition.min_size must be >= 1");
  if (model.hidden_dim == 0 || model.feature_dim == 0 || model.embed_dim < 2) {
    throw ConfigError("model widths must be positive (embed_dim >= 2)");
  }
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  training.validate();
  asymptotics.validate();
}

std::filesystem::path ExperimentConfig::output_path() const {
  std::filesystem::path p(output_dir);
  if (const char* root = std::getenv("DCFL_OUTPUT_ROOT"); root != nullptr && *root != '\0' && p.is_relative()) {
    return std::filesystem::path(root) / p;
  }
  return p;
}

std::string config_to_json(const ExperimentConfig& cfg) { return to_json_value(cfg).dump(2); }

ExperimentConfig config_from_json(const std::string& text) {
  try {
    json base = to_json_value(ExperimentConfig{});
    const json patch = json::parse(text);
    check_known_keys(base, patch, "");
    base.merge_patch(patch);
    return from_json_value(base);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("invalid config: {}", e.what()));
  }
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides) {
  try {
    json merged = to_json_value(ExperimentConfig{});
    if (file) {
      std::ifstream in(*file);
      if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", file->string()));
      std::stringstream ss;
      ss << in.rdbuf();
      const json patch = json::parse(ss.str());
      check_known_keys(merged, patch, "");
      merged.merge_patch(patch);
    }
    for (const auto& o : overrides) apply_override(merged, o);
    ExperimentConfig cfg = from_json_value(merged);
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("invalid config: {}", e.what()));
  }
}

void ensure_writable_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
  const auto probe = dir / ".dcfl-write-probe";
  {
    std::ofstream out(probe);
    if (!out) throw ConfigError(fmt::format("output directory '{}' is not writable", dir.string()));
  }
  std::filesystem::remove(probe, ec);
}

}  // namespace dcfl
