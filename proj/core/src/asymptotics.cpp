#include "dcfl/asymptotics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include <fmt/format.h>
#include <fmt/os.h>
#include <nlohmann/json.hpp>

#include "dcfl/error.hpp"

namespace dcfl {

void SphereDistribution::sample(Rng& rng, std::span<double> out) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  double norm = 0.0;
  while (!(norm > 1e-12)) {
    double ss = 0.0;
    for (double& v : out) {
      v = normal(rng);
      ss += v * v;
    }
    norm = std::sqrt(ss);
  }
  for (double& v : out) v /= norm;
}

void SphereDistribution::sample_positive(std::span<const double> x, Rng& rng, std::span<double> out) const {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(kappa));
  double norm = 0.0;
  while (!(norm > 1e-12)) {
    double ss = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = x[k] + normal(rng);
      ss += out[k] * out[k];
    }
    norm = std::sqrt(ss);
  }
  for (double& v : out) v /= norm;
}

Encoder::Encoder(std::size_t in_dim, std::size_t out_dim, Fn fn)
    : in_dim_(in_dim), out_dim_(out_dim), fn_(std::move(fn)) {}

Encoder Encoder::identity(std::size_t dim) { return Encoder(dim, dim, nullptr); }

Encoder Encoder::constant(std::vector<double> value) {
  const std::size_t d = value.size();
  return Encoder(0, d, [value = std::move(value)](std::span<const double>, std::span<double> out) {
    std::copy(value.begin(), value.end(), out.begin());
  });
}

void Encoder::operator()(std::span<const double> in, std::span<double> out) const {
  if (fn_) {
    fn_(in, out);
  } else {
    std::copy(in.begin(), in.end(), out.begin());
  }
}

namespace {

double dot_of(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

// log((1/n) sum_j exp(fx^T neg_j / tau)), optionally with the delta-method bias correction.
double log_mean_exp(std::span<const double> fx, const Tensor& negatives, double tau, bool corrected,
                    std::vector<double>& scratch) {
  const std::size_t n = negatives.rows();
  scratch.resize(n);
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    scratch[j] = dot_of(fx, negatives.row(j)) / tau;
    hi = std::max(hi, scratch[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    scratch[j] = std::exp(scratch[j] - hi);
    sum += scratch[j];
  }
  const double mean = sum / static_cast<double>(n);
  double out = hi + std::log(mean);
  if (corrected && n > 1) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += (scratch[j] - mean) * (scratch[j] - mean);
    const double var = ss / static_cast<double>(n - 1);
    out += var / (2.0 * static_cast<double>(n) * mean * mean);
  }
  return out;
}

struct BlockSums {
  double alignment = 0.0;
  double log_partition = 0.0;
  std::size_t n = 0;
};

struct Anchor {
  std::vector<double> fx;
  double alignment;
};

Anchor draw_anchor(const Encoder& f, const SphereDistribution& dist, double tau, std::uint64_t seed, std::size_t i) {
  Rng rng = make_rng(seed, "pair", {i});
  std::vector<double> x(dist.dim), y(dist.dim), fy(f.out_dim());
  Anchor a{std::vector<double>(f.out_dim()), 0.0};
  dist.sample(rng, x);
  dist.sample_positive(x, rng, y);
  f(x, a.fx);
  f(y, fy);
  a.alignment = -dot_of(a.fx, fy) / tau;
  return a;
}

Tensor draw_negatives(const Encoder& f, const SphereDistribution& dist, std::size_t count, Rng& rng) {
  Tensor out({count, f.out_dim()}, 0.0);
  std::vector<double> x(dist.dim);
  for (std::size_t j = 0; j < count; ++j) {
    dist.sample(rng, x);
    f(x, out.row(j));
  }
  return out;
}

template <typename BlockFn>
MonteCarloEstimate run_blocks(std::size_t trials, const MonteCarloOptions& options, BlockFn block_fn) {
  if (trials == 0) throw ConfigError("Monte-Carlo trials must be >= 1");
  const std::size_t per = std::max<std::size_t>(1, options.anchors_per_draw);
  const std::size_t n_blocks = (trials + per - 1) / per;
  std::vector<BlockSums> blocks(n_blocks);
  std::vector<std::exception_ptr> errors(n_blocks);
  auto task = [&](std::size_t b) {
    try {
      blocks[b] = block_fn(b, b * per, std::min(trials, (b + 1) * per));
    } catch (...) {
      errors[b] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(1, options.workers), n_blocks);
  if (workers == 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) task(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < n_blocks; b = next++) task(b);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  // Reduced in block order so the result does not depend on the schedule.
  MonteCarloEstimate est;
  double align = 0.0, lp = 0.0;
  for (const auto& b : blocks) {
    align += b.alignment;
    lp += b.log_partition;
    est.block_log_partition.push_back(b.log_partition / static_cast<double>(b.n));
    est.block_sizes.push_back(b.n);
  }
  const double t = static_cast<double>(trials);
  est.alignment = align / t;
  est.log_partition = lp / t;
  est.value = est.alignment + est.log_partition;
  if (n_blocks > 1) {
    const double mean = est.value;
    double var = 0.0;
    for (const auto& b : blocks) {
      const double dev = (b.alignment + b.log_partition) / static_cast<double>(b.n) - mean;
      var += static_cast<double>(b.n) * static_cast<double>(b.n) * dev * dev;
    }
    var *= static_cast<double>(n_blocks) / static_cast<double>(n_blocks - 1) / (t * t);
    est.std_error = std::sqrt(var);
  }
  return est;
}

void check_inputs(const Encoder& f, const SphereDistribution& dist, double tau) {
  if (!(tau > 0.0)) throw ConfigError(fmt::format("tau must be positive, got {}", tau));
  if (dist.dim < 2) throw ConfigError("sphere dimension must be >= 2");
  if (!(dist.kappa > 0.0)) throw ConfigError("kappa must be positive");
  if (f.in_dim() != 0 && f.in_dim() != dist.dim) throw DimensionError("encoder input does not match the sphere");
}

}  // namespace

double trial_loss(std::span<const double> fx, std::span<const double> fy, const Tensor& negatives, double tau) {
  if (!(tau > 0.0)) throw ConfigError(fmt::format("tau must be positive, got {}", tau));
  if (negatives.rank() != 2 || negatives.rows() == 0) throw EmptyReductionError("trial_loss needs negatives");
  if (fx.size() != fy.size() || negatives.cols() != fx.size()) throw DimensionError("trial_loss dimension mismatch");
  std::vector<double> scratch;
  return -dot_of(fx, fy) / tau + log_mean_exp(fx, negatives, tau, false, scratch);
}

MonteCarloEstimate empirical_contrastive(const Encoder& f, const SphereDistribution& dist, double tau,
                                         std::size_t m, std::size_t trials, std::uint64_t seed,
                                         const MonteCarloOptions& options) {
  check_inputs(f, dist, tau);
  if (m == 0) throw ConfigError("M must be >= 1");
  return run_blocks(trials, options, [&](std::size_t b, std::size_t first, std::size_t last) {
    Rng rng = make_rng(seed, "negatives", {m, b});
    const Tensor negatives = draw_negatives(f, dist, m, rng);
    std::vector<double> scratch;
    BlockSums sums;
    for (std::size_t i = first; i < last; ++i) {
      const Anchor a = draw_anchor(f, dist, tau, seed, i);
      sums.alignment += a.alignment;
      sums.log_partition += log_mean_exp(a.fx, negatives, tau, false, scratch);
      ++sums.n;
    }
    return sums;
  });
}

MonteCarloEstimate limit_estimate(const Encoder& f, const SphereDistribution& dist, double tau, std::size_t trials,
                                  std::uint64_t seed, std::size_t inner, const MonteCarloOptions& options) {
  check_inputs(f, dist, tau);
  if (inner < 2) throw ConfigError("limit_estimate needs >= 2 inner samples");
  return run_blocks(trials, options, [&](std::size_t b, std::size_t first, std::size_t last) {
    Rng rng = make_rng(seed, "limit-negatives", {b});
    const Tensor negatives = draw_negatives(f, dist, inner, rng);
    std::vector<double> scratch;
    BlockSums sums;
    for (std::size_t i = first; i < last; ++i) {
      const Anchor a = draw_anchor(f, dist, tau, seed, i);
      sums.alignment += a.alignment;
      sums.log_partition += log_mean_exp(a.fx, negatives, tau, true, scratch);
      ++sums.n;
    }
    return sums;
  });
}

double uniform_sphere_log_partition(std::size_t dim, double tau) {
  if (dim < 2 || !(tau > 0.0)) throw ConfigError("uniform_sphere_log_partition needs dim >= 2 and tau > 0");
  const double k = 1.0 / tau;
  const double nu = static_cast<double>(dim) / 2.0 - 1.0;
  return std::lgamma(static_cast<double>(dim) / 2.0) - nu * std::log(k / 2.0) + std::log(std::cyl_bessel_i(nu, k));
}

void AsymptoticsConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("asymptotics tau must be positive");
  if (dim < 2) throw ConfigError("asymptotics dim must be >= 2");
  if (!(kappa > 0.0)) throw ConfigError("asymptotics kappa must be positive");
  if (m_grid.empty()) throw ConfigError("asymptotics M grid is empty");
  for (std::size_t i = 0; i < m_grid.size(); ++i) {
    if (m_grid[i] == 0) throw ConfigError("M values must be >= 1");
    if (i > 0 && m_grid[i] <= m_grid[i - 1]) throw ConfigError("M grid must be strictly increasing");
  }
  if (trials == 0) throw ConfigError("asymptotics trials must be >= 1");
  if (limit_inner < 2) throw ConfigError("asymptotics limit_inner must be >= 2");
  if (mc.workers == 0) throw ConfigError("workers must be >= 1");
}

AsymptoticsReport convergence_experiment(const AsymptoticsConfig& cfg) {
  cfg.validate();
  const SphereDistribution dist{cfg.dim, cfg.kappa};
  const Encoder f = Encoder::identity(cfg.dim);

  AsymptoticsReport r;
  r.tau = cfg.tau;
  r.dim = cfg.dim;
  r.kappa = cfg.kappa;
  r.m_grid = cfg.m_grid;
  r.trials = cfg.trials;
  r.limit_inner = cfg.limit_inner;
  r.analytic_log_partition = uniform_sphere_log_partition(cfg.dim, cfg.tau);

  const auto limit = limit_estimate(f, dist, cfg.tau, cfg.trials, cfg.seed, cfg.limit_inner, cfg.mc);
  r.limit_estimate = limit.value;
  r.limit_std_error = limit.std_error;

  for (std::size_t m : cfg.m_grid) {
    const auto emp = empirical_contrastive(f, dist, cfg.tau, m, cfg.trials, cfg.seed, cfg.mc);
    r.empirical_loss.push_back(emp.value);
    r.abs_gap.push_back(std::abs(emp.value - limit.value));
    r.bound.push_back(std::exp(2.0 / cfg.tau) / static_cast<double>(m));
    // Shared anchors cancel the alignment term, so only the block-level log-partition differences vary.
    const std::size_t n_blocks = emp.block_sizes.size();
    const double t = static_cast<double>(cfg.trials);
    const double mean_diff = emp.log_partition - limit.log_partition;
    double var = 0.0;
    for (std::size_t b = 0; b < n_blocks; ++b) {
      const double nb = static_cast<double>(emp.block_sizes[b]);
      const double dev = emp.block_log_partition[b] - limit.block_log_partition[b] - mean_diff;
      var += nb * nb * dev * dev;
    }
    r.gap_std_error.push_back(
        n_blocks > 1 ? std::sqrt(var * static_cast<double>(n_blocks) / static_cast<double>(n_blocks - 1) / (t * t))
                     : 0.0);
  }

  if (r.m_grid.size() >= 2) {
    const std::size_t n = r.m_grid.size();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = std::log(static_cast<double>(r.m_grid[i]));
      const double y = std::log(std::max(r.abs_gap[i], std::numeric_limits<double>::min()));
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double nn = static_cast<double>(n);
    r.fitted_slope = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
    r.fitted_intercept = (sy - r.fitted_slope * sx) / nn;
  }
  const double m_max = static_cast<double>(r.m_grid.back());
  r.fitted_constant = std::max(0.0, r.abs_gap.back() - r.bound.back()) * std::sqrt(m_max);
  return r;
}

void write_report_csv(const AsymptoticsReport& report, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("M,empirical,limit,gap,bound\n");
  for (std::size_t i = 0; i < report.m_grid.size(); ++i) {
    out.print("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", report.m_grid[i], report.empirical_loss[i],
              report.limit_estimate, report.abs_gap[i], report.bound[i]);
  }
}

std::string report_to_json(const AsymptoticsReport& r) {
  nlohmann::json j;
  j["tau"] = r.tau;
  j["dim"] = r.dim;
  j["kappa"] = r.kappa;
  j["trials"] = r.trials;
  j["limit_inner"] = r.limit_inner;
  j["m_grid"] = r.m_grid;
  j["empirical_loss"] = r.empirical_loss;
  j["limit_estimate"] = r.limit_estimate;
  j["limit_std_error"] = r.limit_std_error;
  j["abs_gap"] = r.abs_gap;
  j["gap_std_error"] = r.gap_std_error;
  j["bound"] = r.bound;
  j["fitted_slope"] = r.fitted_slope;
  j["fitted_intercept"] = r.fitted_intercept;
  j["fitted_constant"] = r.fitted_constant;
  j["analytic_log_partition"] = r.analytic_log_partition;
  return j.dump(2);
}

}  // namespace dcfl
