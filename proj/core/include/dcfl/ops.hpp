#pragma once

#include <functional>
#include <span>

#include "dcfl/tensor.hpp"

namespace dcfl {

inline constexpr double kNormEpsilon = 1e-12;

// Value-level counterparts of the tape ops, for evaluation and tests.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor l2_normalize(const Tensor& v, double eps = kNormEpsilon);
double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double cosine_sim(std::span<const double> a, std::span<const double> b, double eps = kNormEpsilon);
// Max-shifted log(sum(exp(xs))). Throws EmptyReductionError on an empty input.
double log_sum_exp(std::span<const double> xs);
double softmax_cross_entropy(std::span<const double> logits, int label);

// theta - lr * (grad + weight_decay * theta)
ParameterVector sgd_step(const ParameterVector& params, const ParameterVector& grads, double lr,
                         double weight_decay);

using ScalarObjective = std::function<double(const ParameterVector&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h, one coordinate at a time.
ParameterVector finite_diff_gradient(const ScalarObjective& f, const ParameterVector& at, double h = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). Used by the gradient checks.
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

}  // namespace dcfl
