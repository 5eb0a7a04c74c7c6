#include "dcfl/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "dcfl/error.hpp"
#include "dcfl/ops.hpp"
#include "dcfl/random.hpp"

namespace dcfl {

MlpModel::MlpModel(ModelConfig config) : config_(config), encoder_layers_(config.hidden_layers + 1) {
  if (config_.input_dim == 0 || config_.feature_dim == 0 || config_.embed_dim == 0 ||
      (config_.hidden_layers > 0 && config_.hidden_dim == 0)) {
    throw ConfigError("model dimensions must be positive");
  }
  if (config_.n_classes < 2) throw ConfigError("model needs at least two classes");
  std::size_t in = config_.input_dim;
  for (std::size_t l = 0; l < encoder_layers_; ++l) {
    const bool last = l + 1 == encoder_layers_;
    const std::size_t out = last ? config_.feature_dim : config_.hidden_dim;
    const std::string prefix = last ? std::string("feature") : fmt::format("hidden{}", l);
    manifest_.push_back({prefix + ".weight", {in, out}});
    manifest_.push_back({prefix + ".bias", {out}});
    in = out;
  }
  proj_index_ = manifest_.size();
  manifest_.push_back({"proj.weight", {config_.feature_dim, config_.embed_dim}});
  if (config_.projection_bias) manifest_.push_back({"proj.bias", {config_.embed_dim}});
  cls_index_ = manifest_.size();
  manifest_.push_back({"cls.weight", {config_.feature_dim, config_.n_classes}});
  manifest_.push_back({"cls.bias", {config_.n_classes}});
}

ParameterVector MlpModel::initialize(std::uint64_t seed) const {
  ParameterVector params(manifest_);
  Rng rng = make_rng(seed, "model-init");
  for (std::size_t i = 0; i < manifest_.size(); ++i) {
    const Shape& shape = manifest_[i].shape;
    if (shape.size() != 2) continue;  // biases start at zero
    const double fan_in = static_cast<double>(shape[0]);
    const bool relu_layer = i < proj_index_ && (config_.feature_relu || i + 2 < proj_index_);
    const double bound = relu_layer ? std::sqrt(6.0 / fan_in) : 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w(shape, 0.0);
    for (double& v : w.values()) v = dist(rng);
    params.set_layer(i, w);
  }
  return params;
}

void MlpModel::check(const ParameterVector& params) const {
  if (params.manifest() != manifest_) {
    throw ShapeError(fmt::format("parameters do not match the model manifest ({} vs {} values)", params.size(),
                                 manifest_size(manifest_)));
  }
}

MlpModel::Graph MlpModel::forward(Tape& tape, const ParameterVector& params, const Tensor& inputs,
                                  bool trainable) const {
  check(params);
  if (inputs.rank() != 2 || inputs.cols() != config_.input_dim) {
    throw DimensionError(fmt::format("model expects inputs of width {}, got {}", config_.input_dim,
                                     shape_to_string(inputs.shape())));
  }
  Graph g;
  g.params.reserve(manifest_.size());
  for (std::size_t i = 0; i < manifest_.size(); ++i) {
    g.params.push_back(trainable ? tape.leaf(params.layer(i)) : tape.constant(params.layer(i)));
  }
  Var h = tape.constant(inputs);
  for (std::size_t l = 0; l < encoder_layers_; ++l) {
    h = ad::add_bias(ad::matmul(h, g.params[2 * l]), g.params[2 * l + 1]);
    if (l + 1 < encoder_layers_ || config_.feature_relu) h = ad::relu(h);
  }
  g.features = h;
  Var proj = ad::matmul(h, g.params[proj_index_]);
  if (config_.projection_bias) proj = ad::add_bias(proj, g.params[proj_index_ + 1]);
  g.embeddings = ad::l2_normalize_rows(proj, kNormEpsilon);
  g.logits = ad::add_bias(ad::matmul(h, g.params[cls_index_]), g.params[cls_index_ + 1]);
  return g;
}

ParameterVector MlpModel::collect_gradients(const Graph& graph) const {
  ParameterVector grads(manifest_);
  for (std::size_t i = 0; i < graph.params.size(); ++i) grads.set_layer(i, graph.params[i].grad());
  return grads;
}

MlpModel::Outputs MlpModel::evaluate(const ParameterVector& params, const Tensor& inputs, std::size_t chunk) const {
  check(params);
  const std::size_t n = inputs.rows();
  const std::size_t d = inputs.cols();
  Outputs out{Tensor({n, config_.n_classes}, 0.0), Tensor({n, config_.embed_dim}, 0.0)};
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t rows = std::min(chunk, n - start);
    std::vector<double> slice(inputs.data().begin() + static_cast<std::ptrdiff_t>(start * d),
                              inputs.data().begin() + static_cast<std::ptrdiff_t>((start + rows) * d));
    Tape tape;
    const Graph g = forward(tape, params, Tensor({rows, d}, std::move(slice)), false);
    const Tensor& logits = g.logits.value();
    const Tensor& emb = g.embeddings.value();
    std::copy(logits.data().begin(), logits.data().end(),
              out.logits.values().begin() + static_cast<std::ptrdiff_t>(start * config_.n_classes));
    std::copy(emb.data().begin(), emb.data().end(),
              out.embeddings.values().begin() + static_cast<std::ptrdiff_t>(start * config_.embed_dim));
  }
  return out;
}

}  // namespace dcfl
