#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sgml/matrix.hpp"
#include "sgml/rng.hpp"

namespace sgml {

/// Widths of the model: input -> trunk (ReLU per layer) -> FC (ReLU) -> two
/// heads (linear embedding, sigmoid attribute probabilities).
struct NetworkShape {
  std::size_t input_dim = 0;
  std::vector<std::size_t> trunk_dims{256, 2048};
  std::size_t fc_dim = 1024;
  std::size_t emb_dim = 512;
  std::size_t attr_dim = 0;

  void validate() const;
  /// Closed form sum over layers of fan_in * fan_out + fan_out.
  std::size_t parameter_count() const;
  std::size_t trunk_out_dim() const { return trunk_dims.empty() ? input_dim : trunk_dims.back(); }

  bool operator==(const NetworkShape&) const = default;
};

struct DenseLayer {
  Matrix weight;  // fan_out x fan_in
  Vector bias;    // fan_out

  DenseLayer() = default;
  DenseLayer(std::size_t fan_in, std::size_t fan_out)
      : weight(Matrix::Zero(fan_out, fan_in)), bias(Vector::Zero(fan_out)) {}
};

/// Weights and biases of every layer. Gradients and Adam moments use the
/// same type.
struct NetworkParams {
  NetworkShape shape;
  std::vector<DenseLayer> trunk;
  DenseLayer fc;
  DenseLayer emb;
  DenseLayer attr;

  static NetworkParams zeros(const NetworkShape& shape);

  /// Visits trunk layers in order, then fc, emb, attr.
  void for_each_layer(const std::function<void(DenseLayer&)>& fn);
  void for_each_layer(const std::function<void(const DenseLayer&)>& fn) const;

  std::size_t parameter_count() const;
  bool all_finite() const;
};

using ParamGrads = NetworkParams;

/// Uniform in +-sqrt(6 / (fan_in + fan_out)) for weights, zero biases.
NetworkParams init_params(const NetworkShape& shape, Rng& rng);

/// Activations retained for backward. Row r of every matrix belongs to
/// input row r.
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> trunk_pre;
  std::vector<Matrix> trunk_act;
  Matrix fc_pre;
  Matrix fc_act;
  Matrix attr_logits;
  Matrix attr_probs;
};

struct ForwardOutput {
  Matrix trunk_out;
  Matrix fc_out;
  Matrix embeddings;
  Matrix attr_probs;  // sigmoid, then clamped to [1e-7, 1 - 1e-7]
  ForwardCache cache;
};

ForwardOutput forward(const NetworkParams& params, const Matrix& inputs);

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradients on the two head outputs. The attribute-probability
/// gradient passes through the clamp (zero where clamped) and the sigmoid.
ParamGrads backward(const NetworkParams& params, const ForwardCache& cache,
                    const Matrix& d_embeddings, const Matrix& d_attr_probs);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  NetworkParams m;
  NetworkParams v;
  std::uint64_t step = 0;

  static OptimizerState for_params(const NetworkParams& params, const AdamConfig& config);
};

/// Bias-corrected Adam update in place. Throws DomainError naming the layer
/// when a gradient is not finite; params and state are left untouched then.
void adam_step(NetworkParams& params, const ParamGrads& grads, OptimizerState& state);

}  // namespace sgml
