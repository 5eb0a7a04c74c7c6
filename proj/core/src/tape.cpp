#include "dcfl/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "dcfl/error.hpp"

namespace dcfl {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error("variables from different tapes combined");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw Error("backward() on a variable from another tape");
  if (root.value().size() != 1) {
    throw DimensionError(fmt::format("backward() needs a scalar root, got {}", shape_to_string(root.value().shape())));
  }
  for (std::size_t i = 0; i <= root.id(); ++i) {
    if (nodes_[i].requires_grad) nodes_[i].grad = Tensor(nodes_[i].value.shape(), 0.0);
  }
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

std::size_t Mask::row_count(std::size_t r) const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < cols; ++c) n += bits[r * cols + c];
  return n;
}

namespace ad {
namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(fmt::format("{}: expected a matrix, got shape {}", op, shape_to_string(t.shape())));
  }
}

void require_mask(const Tensor& t, const Mask& mask, const char* op) {
  require_matrix(t, op);
  if (mask.rows != t.rows() || mask.cols != t.cols()) {
    throw DimensionError(fmt::format("{}: mask {}x{} does not match {}", op, mask.rows, mask.cols,
                                     shape_to_string(t.shape())));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      const double* brow = b + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError(fmt::format("matmul: inner dimensions disagree ({} vs {})", shape_to_string(av.shape()),
                                     shape_to_string(bv.shape())));
  }
  Tensor out({m, n}, 0.0);
  gemm_nn(av.data().data(), bv.data().data(), out.values().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data().data();
    if (t.requires_grad(ia)) gemm_nt(g, t.value(ib).data().data(), t.grad(ia).values().data(), m, n, k);
    if (t.requires_grad(ib)) gemm_tn(t.value(ia).data().data(), g, t.grad(ib).values().data(), m, k, n);
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw DimensionError(fmt::format("matmul_nt: inner dimensions disagree ({} vs {})",
                                     shape_to_string(av.shape()), shape_to_string(bv.shape())));
  }
  Tensor out({m, n}, 0.0);
  gemm_nt(av.data().data(), bv.data().data(), out.values().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data().data();
    // dA = G * B, dB = G^T * A
    if (t.requires_grad(ia)) gemm_nn(g, t.value(ib).data().data(), t.grad(ia).values().data(), m, n, k);
    if (t.requires_grad(ib)) gemm_tn(g, t.value(ia).data().data(), t.grad(ib).values().data(), m, n, k);
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw DimensionError(
        fmt::format("add: shapes {} and {} differ", shape_to_string(av.shape()), shape_to_string(bv.shape())));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      Tensor& d = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "add_bias");
  const std::size_t m = xv.rows(), n = xv.cols();
  if (bv.size() != n) {
    throw DimensionError(fmt::format("add_bias: bias of {} values for {} columns", bv.size(), n));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bv[j];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [ix, ib, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) {
      Tensor& d = t.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& d = t.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
    }
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& in = t.value(ix);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0.0) d[i] += g[i];
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, factor](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += factor * g[i];
  });
}

Var l2_normalize_rows(Var x, double eps) {
  const Tensor& xv = x.value();
  require_matrix(xv, "l2_normalize_rows");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = xv;
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (double v : xv.row(i)) ss += v * v;
    const double norm = std::sqrt(ss);
    if (!(norm > eps)) {
      throw DegenerateInputError(fmt::format("l2_normalize: row {} has norm {:g} <= {:g}", i, norm, eps));
    }
    norms[i] = norm;
    for (double& v : out.row(i)) v /= norm;
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, m, n, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y.at(i, j) * g.at(i, j);
      for (std::size_t j = 0; j < n; ++j) d.at(i, j) += (g.at(i, j) - y.at(i, j) * dot) / norms[i];
    }
  });
}

Var l2_normalize(Var v, double eps) {
  const Tensor& vv = v.value();
  if (vv.rank() != 1) {
    throw DimensionError(fmt::format("l2_normalize: expected a vector, got {}", shape_to_string(vv.shape())));
  }
  double ss = 0.0;
  for (double x : vv.values()) ss += x * x;
  const double norm = std::sqrt(ss);
  if (!(norm > eps)) throw DegenerateInputError(fmt::format("l2_normalize: norm {:g} <= {:g}", norm, eps));
  Tensor out = vv;
  for (double& x : out.values()) x /= norm;
  const std::size_t iv = v.id();
  return v.tape().record(std::move(out), {v}, [iv, norm](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    double dot = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j) dot += y[j] * g[j];
    Tensor& d = t.grad(iv);
    for (std::size_t j = 0; j < g.size(); ++j) d[j] += (g[j] - y[j] * dot) / norm;
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(s), {x}, [ix](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& d : t.grad(ix).values()) d += g;
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw EmptyReductionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var weighted_sum(Var x, std::vector<double> weights) {
  const Tensor& xv = x.value();
  if (weights.size() != xv.size()) {
    throw DimensionError(fmt::format("weighted_sum: {} weights for {} values", weights.size(), xv.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += weights[i] * xv[i];
  const std::size_t ix = x.id();
  return x.tape().record(Tensor::scalar(s), {x}, [ix, w = std::move(weights)](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < w.size(); ++i) d[i] += g * w[i];
  });
}

Var masked_row_sum(Var x, const Mask& mask) {
  const Tensor& xv = x.value();
  require_mask(xv, mask, "masked_row_sum");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({m}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (mask(i, j)) out[i] += xv.at(i, j);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, mask, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (mask(i, j)) d.at(i, j) += g[i];
  });
}

namespace {

// Row-wise masked max and log-sum-exp; empty rows give (-inf, 0).
std::vector<double> row_logsumexp(const Tensor& x, const Mask& mask) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask(i, j)) mx = std::max(mx, x.at(i, j));
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    // log1p over the entries other than the first maximum keeps small tails exact.
    double s = 0.0;
    bool skipped = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (!mask(i, j)) continue;
      if (!skipped && x.at(i, j) == mx) {
        skipped = true;
        continue;
      }
      s += std::exp(x.at(i, j) - mx);
    }
    out[i] = mx + std::log1p(s);
  }
  return out;
}

}  // namespace

Var masked_row_logsumexp(Var x, const Mask& mask) {
  const Tensor& xv = x.value();
  require_mask(xv, mask, "masked_row_logsumexp");
  const std::size_t m = xv.rows(), n = xv.cols();
  std::vector<double> lse = row_logsumexp(xv, mask);
  Tensor out({m}, lse);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, mask, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& in = t.value(ix);
    const Tensor& lse = t.value(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < m; ++i) {
      if (mask.row_count(i) == 0) continue;
      for (std::size_t j = 0; j < n; ++j)
        if (mask(i, j)) d.at(i, j) += g[i] * std::exp(in.at(i, j) - lse[i]);
    }
  });
}

Var masked_row_log_softmax(Var x, const Mask& mask) {
  const Tensor& xv = x.value();
  require_mask(xv, mask, "masked_row_log_softmax");
  const std::size_t m = xv.rows(), n = xv.cols();
  const std::vector<double> lse = row_logsumexp(xv, mask);
  Tensor out({m, n}, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (mask(i, j)) out.at(i, j) = xv.at(i, j) - lse[i];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, mask, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& d = t.grad(ix);
    for (std::size_t i = 0; i < m; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (mask(i, j)) gsum += g.at(i, j);
      for (std::size_t j = 0; j < n; ++j)
        if (mask(i, j)) d.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * gsum;
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "softmax_cross_entropy");
  const std::size_t m = lv.rows(), n = lv.cols();
  if (labels.size() != m) {
    throw DimensionError(fmt::format("softmax_cross_entropy: {} labels for {} rows", labels.size(), m));
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n) {
      throw IndexError(fmt::format("softmax_cross_entropy: label {} outside [0, {})", labels[i], n));
    }
  }
  const std::vector<double> lse = row_logsumexp(lv, Mask(m, n, true));
  Tensor out({m}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = lv.row(i);
    const auto top = std::max_element(row.begin(), row.end());
    double tail = 0.0;
    for (auto it = row.begin(); it != row.end(); ++it)
      if (it != top) tail += std::exp(*it - *top);
    out[i] = (*top - row[static_cast<std::size_t>(labels[i])]) + std::log1p(tail);
  }
  const std::size_t il = logits.id();
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().record(
      std::move(out), {logits}, [il, m, n, lse, lab = std::move(lab)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& in = t.value(il);
        Tensor& d = t.grad(il);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) d.at(i, j) += g[i] * std::exp(in.at(i, j) - lse[i]);
          d.at(i, static_cast<std::size_t>(lab[i])) -= g[i];
        }
      });
}

}  // namespace ad
}  // namespace dcfl
