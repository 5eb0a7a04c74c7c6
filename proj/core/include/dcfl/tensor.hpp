#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dcfl {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor scalar(double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  const std::vector<double>& data() const { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  // Interprets a rank-1 tensor as a 1 x n matrix; other ranks are unchanged.
  Tensor as_matrix() const;
  double item() const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

struct LayerSpec {
  std::string name;
  Shape shape;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

using Manifest = std::vector<LayerSpec>;

std::size_t manifest_size(const Manifest& manifest);

// Flat weight vector plus the layer layout it was built from.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(Manifest manifest);
  ParameterVector(Manifest manifest, std::vector<double> values);

  const Manifest& manifest() const { return manifest_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::size_t size() const { return values_.size(); }

  // Offset of layer `index` inside the flat array.
  std::size_t offset(std::size_t index) const;
  Tensor layer(std::size_t index) const;
  void set_layer(std::size_t index, const Tensor& t);

  bool compatible_with(const ParameterVector& other) const { return manifest_ == other.manifest_; }

  friend bool operator==(const ParameterVector&, const ParameterVector&) = default;

 private:
  Manifest manifest_;
  std::vector<double> values_;
};

// Throws ShapeError when the manifests differ.
void require_compatible(const ParameterVector& a, const ParameterVector& b, const char* what);

}  // namespace dcfl
