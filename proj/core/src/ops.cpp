#include "dcfl/ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dcfl/error.hpp"

namespace dcfl {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError(
        fmt::format("matmul: cannot multiply {} by {}", shape_to_string(a.shape()), shape_to_string(b.shape())));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
    }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError(fmt::format("dot: lengths {} and {}", a.size(), b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Tensor l2_normalize(const Tensor& v, double eps) {
  const double norm = l2_norm(v.values());
  if (!(norm > eps)) throw DegenerateInputError(fmt::format("l2_normalize: norm {:g} <= {:g}", norm, eps));
  Tensor out = v;
  for (double& x : out.values()) x /= norm;
  return out;
}

double cosine_sim(std::span<const double> a, std::span<const double> b, double eps) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (!(na > eps) || !(nb > eps)) {
    throw DegenerateInputError(fmt::format("cosine_sim: norms {:g}, {:g} below {:g}", na, nb, eps));
  }
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

namespace {

// Sum of exp(x - max) over every entry but the (first) maximum, so callers can use log1p.
double tail_sum(std::span<const double> xs, std::size_t argmax) {
  double s = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k)
    if (k != argmax) s += std::exp(xs[k] - xs[argmax]);
  return s;
}

}  // namespace

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw EmptyReductionError("log_sum_exp of an empty list");
  const auto it = std::max_element(xs.begin(), xs.end());
  const double mx = *it;
  if (std::isinf(mx)) return mx;
  return mx + std::log1p(tail_sum(xs, static_cast<std::size_t>(it - xs.begin())));
}

double softmax_cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw IndexError(fmt::format("softmax_cross_entropy: label {} outside [0, {})", label, logits.size()));
  }
  const auto it = std::max_element(logits.begin(), logits.end());
  const double shift = *it - logits[static_cast<std::size_t>(label)];
  return shift + std::log1p(tail_sum(logits, static_cast<std::size_t>(it - logits.begin())));
}

ParameterVector sgd_step(const ParameterVector& params, const ParameterVector& grads, double lr,
                         double weight_decay) {
  require_compatible(params, grads, "sgd_step");
  if (!(lr >= 0.0)) throw ConfigError(fmt::format("sgd_step: learning rate {} must be non-negative", lr));
  if (!(weight_decay >= 0.0)) throw ConfigError(fmt::format("sgd_step: weight decay {} is negative", weight_decay));
  ParameterVector out = params;
  auto theta = out.values();
  auto g = grads.values();
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * (g[i] + weight_decay * theta[i]);
  return out;
}

ParameterVector finite_diff_gradient(const ScalarObjective& f, const ParameterVector& at, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_gradient: step must be positive");
  ParameterVector probe = at;
  ParameterVector grad(at.manifest());
  auto x = probe.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(probe);
    x[i] = saved - h;
    const double down = f(probe);
    x[i] = saved;
    grad.values()[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw DimensionError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace dcfl
