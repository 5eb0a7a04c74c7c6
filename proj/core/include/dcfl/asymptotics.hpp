#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcfl/random.hpp"
#include "dcfl/tensor.hpp"

namespace dcfl {

// Uniform data on the unit sphere; positives are y = normalize(x + g / sqrt(kappa)), g ~ N(0, I).
struct SphereDistribution {
  std::size_t dim = 8;
  double kappa = 100.0;

  void sample(Rng& rng, std::span<double> out) const;
  void sample_positive(std::span<const double> x, Rng& rng, std::span<double> out) const;
};

// Fixed map from the sphere to representation space.
class Encoder {
 public:
  using Fn = std::function<void(std::span<const double> in, std::span<double> out)>;

  Encoder(std::size_t in_dim, std::size_t out_dim, Fn fn);
  static Encoder identity(std::size_t dim);
  static Encoder constant(std::vector<double> value);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  void operator()(std::span<const double> in, std::span<double> out) const;

 private:
  std::size_t in_dim_;
  std::size_t out_dim_;
  Fn fn_;  // empty for the identity
};

struct MonteCarloOptions {
  // Anchors that share one draw of negatives. 1 makes every trial fully independent.
  std::size_t anchors_per_draw = 32;
  std::size_t workers = 1;
};

struct MonteCarloEstimate {
  double value = 0.0;          // alignment + log_partition
  double alignment = 0.0;      // mean of -f(x)^T f(y) / tau
  double log_partition = 0.0;  // mean of the log-mean-exp term
  double std_error = 0.0;      // of value, from block means
  std::vector<double> block_log_partition;  // per negative draw
  std::vector<std::size_t> block_sizes;
};

// -fx^T fy / tau + log((1/M) sum_j exp(fx^T n_j / tau)) for the rows n_j of `negatives`.
double trial_loss(std::span<const double> fx, std::span<const double> fy, const Tensor& negatives, double tau);

// Monte-Carlo mean of trial_loss with M negatives per trial (the contrastive loss minus log M).
// Trial i draws its (x, y) from sub-stream ("pair", i), shared with limit_estimate.
MonteCarloEstimate empirical_contrastive(const Encoder& f, const SphereDistribution& dist, double tau,
                                         std::size_t m, std::size_t trials, std::uint64_t seed,
                                         const MonteCarloOptions& options = {});

inline constexpr std::size_t kLimitOuterTrials = 100000;
inline constexpr std::size_t kLimitInnerSamples = 10000;

// Nested estimate of -E[f(x)^T f(y)] / tau + E_x[log E_{x-}[exp(f(x-)^T f(x) / tau)]]. The inner log
// of a sample mean carries the second-order bias correction s^2 / (2 n mean^2).
MonteCarloEstimate limit_estimate(const Encoder& f, const SphereDistribution& dist, double tau,
                                  std::size_t trials = kLimitOuterTrials, std::uint64_t seed = 0,
                                  std::size_t inner = kLimitInnerSamples, const MonteCarloOptions& options = {});

// log E[exp(u^T v / tau)] for v uniform on the sphere in `dim` dimensions and any unit u.
double uniform_sphere_log_partition(std::size_t dim, double tau);

struct AsymptoticsConfig {
  double tau = 0.5;
  std::size_t dim = 8;
  double kappa = 100.0;
  std::vector<std::size_t> m_grid{10, 100, 1000, 10000, 100000};
  std::size_t trials = 20000;
  std::size_t limit_inner = kLimitInnerSamples;
  std::uint64_t seed = 0;
  MonteCarloOptions mc;

  void validate() const;
};

struct AsymptoticsReport {
  double tau = 0.0;
  std::size_t dim = 0;
  double kappa = 0.0;
  std::vector<std::size_t> m_grid;
  std::vector<double> empirical_loss;
  double limit_estimate = 0.0;
  double limit_std_error = 0.0;
  std::vector<double> abs_gap;
  std::vector<double> gap_std_error;  // paired (common random numbers) standard error
  std::vector<double> bound;          // exp(2 / tau) / M
  std::size_t trials = 0;
  std::size_t limit_inner = 0;
  // Least squares log(gap) = intercept + slope * log(M).
  double fitted_slope = 0.0;
  double fitted_intercept = 0.0;
  // C with gap = bound + C / sqrt(M) at the largest M (clamped at 0).
  double fitted_constant = 0.0;
  double analytic_log_partition = 0.0;  // uniform-sphere closed form, for reference
};

AsymptoticsReport convergence_experiment(const AsymptoticsConfig& cfg);

void write_report_csv(const AsymptoticsReport& report, const std::filesystem::path& path);
std::string report_to_json(const AsymptoticsReport& report);

}  // namespace dcfl
