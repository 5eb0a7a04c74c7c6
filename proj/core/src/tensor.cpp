#include "dcfl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "dcfl/error.hpp"

namespace dcfl {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (element_count(shape_) != values_.size()) {
    throw DimensionError(fmt::format("tensor shape {} does not hold {} values", shape_to_string(shape_),
                                     values_.size()));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({}, std::vector<double>{v}); }

std::size_t Tensor::rows() const {
  if (rank() == 2) return shape_[0];
  if (rank() == 1) return 1;
  throw DimensionError(fmt::format("rows() on rank-{} tensor", rank()));
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  throw DimensionError(fmt::format("cols() on rank-{} tensor", rank()));
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(values_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(values_).subspan(r * c, c);
}

Tensor Tensor::as_matrix() const {
  if (rank() != 1) return *this;
  return Tensor({1, shape_[0]}, values_);
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw DimensionError(fmt::format("item() on tensor of shape {}", shape_to_string(shape_)));
  }
  return values_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::size_t manifest_size(const Manifest& manifest) {
  std::size_t n = 0;
  for (const auto& layer : manifest) n += element_count(layer.shape);
  return n;
}

ParameterVector::ParameterVector(Manifest manifest)
    : manifest_(std::move(manifest)), values_(manifest_size(manifest_), 0.0) {}

ParameterVector::ParameterVector(Manifest manifest, std::vector<double> values)
    : manifest_(std::move(manifest)), values_(std::move(values)) {
  if (manifest_size(manifest_) != values_.size()) {
    throw ShapeError(fmt::format("manifest describes {} values but {} were supplied", manifest_size(manifest_),
                                 values_.size()));
  }
}

std::size_t ParameterVector::offset(std::size_t index) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < index; ++i) off += element_count(manifest_.at(i).shape);
  return off;
}

Tensor ParameterVector::layer(std::size_t index) const {
  const auto& spec = manifest_.at(index);
  const std::size_t off = offset(index);
  const std::size_t n = element_count(spec.shape);
  return Tensor(spec.shape, std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(off),
                                                values_.begin() + static_cast<std::ptrdiff_t>(off + n)));
}

void ParameterVector::set_layer(std::size_t index, const Tensor& t) {
  const auto& spec = manifest_.at(index);
  if (t.shape() != spec.shape) {
    throw ShapeError(fmt::format("layer '{}' expects {} but got {}", spec.name, shape_to_string(spec.shape),
                                 shape_to_string(t.shape())));
  }
  std::copy(t.data().begin(), t.data().end(), values_.begin() + static_cast<std::ptrdiff_t>(offset(index)));
}

void require_compatible(const ParameterVector& a, const ParameterVector& b, const char* what) {
  if (!a.compatible_with(b)) {
    throw ShapeError(fmt::format("{}: parameter manifests differ ({} vs {} values)", what, a.size(), b.size()));
  }
}

}  // namespace dcfl
