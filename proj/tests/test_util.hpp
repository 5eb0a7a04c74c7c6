#pragma once

// Brute-force reference implementations shared by the unit and acceptance tests. They loop over
// raw arrays and never call into the library's loss code.

#include <cmath>
#include <cstdint>
#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dcfl/tensor.hpp"

namespace dcfl::testing {

inline Tensor random_unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t({n, d}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      t.at(i, j) = g(rng);
      s += t.at(i, j) * t.at(i, j);
    }
    s = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) t.at(i, j) /= s;
  }
  return t;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, static_cast<int>(c) - 1);
  std::vector<int> labels(n);
  for (int& l : labels) l = u(rng);
  return labels;
}

inline double row_dot(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(j, k);
  return s;
}

// Mean over anchors with positives of -sum_j log(exp(s_ij/t) / sum_{k != i} exp(s_ik/t)), evaluated
// naively in long double without max shifting.
inline double brute_supcon(const Tensor& z, const std::vector<int>& y, double tau) {
  const std::size_t b = y.size();
  long double total = 0.0L;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < b; ++i) {
    long double denom = 0.0L;
    for (std::size_t k = 0; k < b; ++k)
      if (k != i) denom += std::exp(static_cast<long double>(row_dot(z, i, z, k) / tau));
    long double acc = 0.0L;
    bool any = false;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i || y[j] != y[i]) continue;
      any = true;
      acc -= std::log(std::exp(static_cast<long double>(row_dot(z, i, z, j) / tau)) / denom);
    }
    if (any) {
      total += acc;
      ++anchors;
    }
  }
  return static_cast<double>(total / static_cast<long double>(anchors));
}

struct BruteDcfl {
  double total = 0.0;
  double alignment = 0.0;
  double uniformity = 0.0;
  std::size_t anchors = 0;
};

// Sample-wise decoupled loss by direct per-anchor summation.
inline BruteDcfl brute_dcfl_sample(const Tensor& z, const std::vector<int>& y, double tau, double la, double lu) {
  const std::size_t b = y.size();
  long double align = 0.0L, unif = 0.0L;
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < b; ++i) {
    long double pos = 0.0L, neg = 0.0L;
    std::size_t np = 0, nn = 0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const long double s = row_dot(z, i, z, j) / tau;
      if (y[j] == y[i]) {
        pos += s;
        ++np;
      } else {
        neg += std::exp(s);
        ++nn;
      }
    }
    if (np == 0) continue;
    ++anchors;
    align += pos;
    if (nn > 0) unif += static_cast<long double>(np) * std::log(neg);
  }
  BruteDcfl r;
  r.anchors = anchors;
  r.alignment = static_cast<double>(align / anchors);
  r.uniformity = static_cast<double>(unif / anchors);
  r.total = -la * r.alignment + lu * r.uniformity;
  return r;
}

// Prototype-wise decoupled loss: positive c_{y_i}, negatives every other prototype.
inline BruteDcfl brute_dcfl_prototype(const Tensor& z, const std::vector<int>& y, const Tensor& protos, double tau,
                                      double la, double lu) {
  const std::size_t b = y.size();
  long double align = 0.0L, unif = 0.0L;
  for (std::size_t i = 0; i < b; ++i) {
    align += row_dot(z, i, protos, static_cast<std::size_t>(y[i])) / tau;
    long double neg = 0.0L;
    for (std::size_t c = 0; c < protos.rows(); ++c)
      if (static_cast<int>(c) != y[i]) neg += std::exp(static_cast<long double>(row_dot(z, i, protos, c) / tau));
    unif += std::log(neg);
  }
  BruteDcfl r;
  r.anchors = b;
  r.alignment = static_cast<double>(align / b);
  r.uniformity = static_cast<double>(unif / b);
  r.total = -la * r.alignment + lu * r.uniformity;
  return r;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dcfl-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace dcfl::testing
