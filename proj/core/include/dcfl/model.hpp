#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dcfl/tape.hpp"
#include "dcfl/tensor.hpp"

namespace dcfl {

struct ModelConfig {
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t hidden_layers = 1;
  std::size_t feature_dim = 64;
  std::size_t embed_dim = 32;
  std::size_t n_classes = 10;
  bool feature_relu = true;
  bool projection_bias = false;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// input -> [hidden, ReLU] x L -> feature (ReLU unless disabled); the feature feeds a linear classifier
// and a linear projection head (bias optional) whose output is L2-normalized into the embedding.
class MlpModel {
 public:
  explicit MlpModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const Manifest& manifest() const { return manifest_; }

  // He-uniform weights for ReLU layers, 1/sqrt(fan_in) bounds for the heads, zero biases.
  ParameterVector initialize(std::uint64_t seed) const;

  struct Graph {
    std::vector<Var> params;  // one leaf per manifest entry
    Var features;
    Var logits;
    Var embeddings;
  };

  // Records the forward pass. With trainable=false the parameters are tape constants.
  Graph forward(Tape& tape, const ParameterVector& params, const Tensor& inputs, bool trainable = true) const;

  // Flattens the adjoints of graph.params (after Tape::backward) in manifest order.
  ParameterVector collect_gradients(const Graph& graph) const;

  struct Outputs {
    Tensor logits;
    Tensor embeddings;
  };

  // Inference in row chunks; no gradients.
  Outputs evaluate(const ParameterVector& params, const Tensor& inputs, std::size_t chunk = 512) const;

 private:
  void check(const ParameterVector& params) const;

  ModelConfig config_;
  Manifest manifest_;
  std::size_t encoder_layers_;
  std::size_t proj_index_ = 0;
  std::size_t cls_index_ = 0;
};

}  // namespace dcfl
