#include "dcfl/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dcfl/error.hpp"
#include "dcfl/random.hpp"

namespace dcfl {

void PartitionPlan::validate(std::size_t n_samples) const {
  std::vector<std::uint8_t> seen(n_samples, 0);
  for (std::size_t k = 0; k < assignments.size(); ++k) {
    if (assignments[k].size() < min_size) {
      throw PartitionError(fmt::format("client {} holds {} samples, below min_size {}", k, assignments[k].size(),
                                       min_size));
    }
    for (std::size_t idx : assignments[k]) {
      if (idx >= n_samples) throw PartitionError(fmt::format("client {} references sample {} >= {}", k, idx, n_samples));
      if (seen[idx]++) throw PartitionError(fmt::format("sample {} assigned twice", idx));
    }
  }
  const auto missing = std::find(seen.begin(), seen.end(), 0);
  if (missing != seen.end()) {
    throw PartitionError(fmt::format("sample {} is not assigned", missing - seen.begin()));
  }
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const int> labels) {
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw PartitionError(fmt::format("negative label {}", l));
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  return by_class;
}

std::vector<double> sample_dirichlet(std::size_t k, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  while (!(total > 0.0)) {
    total = 0.0;
    for (double& v : p) {
      v = gamma(rng);
      total += v;
    }
  }
  for (double& v : p) v /= total;
  return p;
}

// floor(n * p_k) plus one extra sample for the largest fractional remainders (ties: lower client id).
std::vector<std::size_t> largest_remainder(std::size_t n, const std::vector<double>& p) {
  const std::size_t k = p.size();
  std::vector<std::size_t> counts(k);
  std::vector<double> frac(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double quota = static_cast<double>(n) * p[i];
    counts[i] = static_cast<std::size_t>(std::floor(quota));
    frac[i] = quota - std::floor(quota);
    assigned += counts[i];
  }
  // Rounding can in principle overshoot by a unit; trim from the smallest fractions.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[order[r % k]];
  while (assigned > n) {
    for (std::size_t r = k; r-- > 0;) {
      if (counts[order[r]] == 0) continue;
      --counts[order[r]];
      --assigned;
      break;
    }
  }
  return counts;
}

}  // namespace

PartitionPlan dirichlet_partition(std::span<const int> labels, std::size_t n_clients, double alpha,
                                  std::uint64_t seed, std::size_t min_size, int max_retries) {
  if (n_clients == 0) throw PartitionError("need at least one client");
  if (!(alpha > 0.0)) throw PartitionError(fmt::format("alpha must be positive, got {}", alpha));
  if (min_size == 0) throw PartitionError("min_size must be at least 1");
  if (labels.size() < n_clients * min_size) {
    throw PartitionError(fmt::format("{} samples cannot give {} clients {} samples each", labels.size(), n_clients,
                                     min_size));
  }
  const auto by_class = indices_by_class(labels);
  Rng rng = make_rng(seed, "dirichlet-partition");

  for (int attempt = 0; attempt < max_retries; ++attempt) {
    std::vector<std::vector<std::size_t>> assignments(n_clients);
    for (const auto& members : by_class) {
      if (members.empty()) continue;
      std::vector<std::size_t> shuffled = members;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      const auto proportions = sample_dirichlet(n_clients, alpha, rng);
      const auto counts = largest_remainder(shuffled.size(), proportions);
      std::size_t cursor = 0;
      for (std::size_t k = 0; k < n_clients; ++k) {
        assignments[k].insert(assignments[k].end(), shuffled.begin() + static_cast<std::ptrdiff_t>(cursor),
                              shuffled.begin() + static_cast<std::ptrdiff_t>(cursor + counts[k]));
        cursor += counts[k];
      }
    }
    const bool ok = std::all_of(assignments.begin(), assignments.end(),
                                [&](const auto& a) { return a.size() >= min_size; });
    if (!ok) continue;
    for (auto& a : assignments) std::sort(a.begin(), a.end());
    PartitionPlan plan{std::move(assignments), alpha, seed, min_size};
    plan.validate(labels.size());
    return plan;
  }
  throw PartitionError(fmt::format("Dirichlet partition (alpha={}, {} clients) could not give every client >= {} "
                                   "samples in {} attempts; raise alpha or lower min_size",
                                   alpha, n_clients, min_size, max_retries));
}

PartitionPlan iid_partition(std::span<const int> labels, std::size_t n_clients, std::uint64_t seed,
                            std::size_t min_size) {
  if (n_clients == 0) throw PartitionError("need at least one client");
  if (min_size == 0) throw PartitionError("min_size must be at least 1");
  const std::size_t n = labels.size();
  if (n < n_clients) throw PartitionError(fmt::format("{} samples for {} clients", n, n_clients));
  if (n / n_clients < min_size) {
    throw PartitionError(
        fmt::format("IID split gives {} samples per client, below min_size {}", n / n_clients, min_size));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "iid-partition");
  std::shuffle(order.begin(), order.end(), rng);
  PartitionPlan plan{std::vector<std::vector<std::size_t>>(n_clients), std::nullopt, seed, min_size};
  const std::size_t base = n / n_clients;
  const std::size_t extra = n % n_clients;
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < n_clients; ++k) {
    const std::size_t take = base + (k < extra ? 1 : 0);
    auto& a = plan.assignments[k];
    a.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
             order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
    std::sort(a.begin(), a.end());
    cursor += take;
  }
  return plan;
}

std::vector<std::vector<std::size_t>> class_histograms(const PartitionPlan& plan, std::span<const int> labels,
                                                       std::size_t n_classes) {
  std::vector<std::vector<std::size_t>> hist(plan.n_clients(), std::vector<std::size_t>(n_classes, 0));
  for (std::size_t k = 0; k < plan.n_clients(); ++k)
    for (std::size_t idx : plan.assignments[k]) ++hist[k].at(static_cast<std::size_t>(labels[idx]));
  return hist;
}

double mean_label_tv_distance(const PartitionPlan& plan, std::span<const int> labels, std::size_t n_classes) {
  if (plan.n_clients() == 0 || labels.empty()) return 0.0;
  std::vector<double> global(n_classes, 0.0);
  for (int l : labels) global.at(static_cast<std::size_t>(l)) += 1.0;
  for (double& g : global) g /= static_cast<double>(labels.size());
  const auto hist = class_histograms(plan, labels, n_classes);
  double total = 0.0;
  for (const auto& row : hist) {
    const double n = static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
    double tv = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) tv += std::abs(static_cast<double>(row[c]) / n - global[c]);
    total += 0.5 * tv;
  }
  return total / static_cast<double>(plan.n_clients());
}

std::string plan_to_json(const PartitionPlan& plan) {
  nlohmann::json j;
  j["format"] = "dcfl-partition";
  j["version"] = 1;
  if (plan.alpha) {
    j["alpha"] = *plan.alpha;
  } else {
    j["alpha"] = "iid";
  }
  j["seed"] = plan.seed;
  j["min_size"] = plan.min_size;
  j["n_clients"] = plan.n_clients();
  j["assignments"] = plan.assignments;
  return j.dump(1);
}

PartitionPlan plan_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "dcfl-partition") throw FormatError("not a dcfl partition document");
    PartitionPlan plan;
    const auto& alpha = j.at("alpha");
    if (alpha.is_string()) {
      if (alpha != "iid") throw FormatError("alpha must be a number or \"iid\"");
    } else {
      plan.alpha = alpha.get<double>();
    }
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.min_size = j.at("min_size").get<std::size_t>();
    plan.assignments = j.at("assignments").get<std::vector<std::vector<std::size_t>>>();
    if (plan.assignments.size() != j.at("n_clients").get<std::size_t>()) {
      throw FormatError("n_clients does not match the assignment list");
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed partition plan: {}", e.what()));
  }
}

void save_plan(const PartitionPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write partition plan to '{}'", path.string()));
  out << plan_to_json(plan) << '\n';
}

PartitionPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read partition plan '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return plan_from_json(ss.str());
}

}  // namespace dcfl
