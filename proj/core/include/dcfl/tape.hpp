#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dcfl/tensor.hpp"

namespace dcfl {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Single-use reverse-mode recorder. Build one per batch, call backward() once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  // Seeds d(root)/d(root) = 1 and propagates adjoints to every node that requires a gradient.
  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  Tensor& grad(std::size_t id) { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Row-major boolean selection over an m x n matrix.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t r, std::size_t c, bool fill = false) : rows(r), cols(c), bits(r * c, fill ? 1 : 0) {}

  bool operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool on = true) { bits[r * cols + c] = on ? 1 : 0; }
  std::size_t row_count(std::size_t r) const;
};

namespace ad {

Var matmul(Var a, Var b);
// a * b^T for a: [m x k], b: [n x k].
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
// x: [m x n], bias: [n], added to every row.
Var add_bias(Var x, Var bias);
Var relu(Var x);
Var scale(Var x, double factor);
// Normalizes each row to unit L2 norm; rows with norm <= eps raise DegenerateInputError.
Var l2_normalize_rows(Var x, double eps = 1e-12);
Var l2_normalize(Var v, double eps = 1e-12);
Var sum(Var x);
Var mean(Var x);
// sum_i w_i x_i with constant weights of x's size.
Var weighted_sum(Var x, std::vector<double> weights);
// Per row: sum of the masked entries. Returns a vector of length m.
Var masked_row_sum(Var x, const Mask& mask);
// Per row: log sum exp over the masked entries; rows with an empty mask yield 0 and no gradient.
Var masked_row_logsumexp(Var x, const Mask& mask);
// Per row: x_ij - logsumexp_{k in mask} x_ik for masked j, 0 elsewhere.
Var masked_row_log_softmax(Var x, const Mask& mask);
// Per row cross-entropy -log softmax(logits_i)[labels_i]. Returns a vector of length m.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

}  // namespace ad
}  // namespace dcfl
