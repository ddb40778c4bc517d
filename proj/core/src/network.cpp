#include "sgml/network.hpp"

#include <cmath>
#include <string>

#include "sgml/errors.hpp"
#include "sgml/losses.hpp"
#include "sgml/similarity.hpp"

namespace sgml {

void NetworkShape::validate() const {
  if (input_dim == 0) throw ConfigError("network: input_dim must be >= 1");
  for (std::size_t w : trunk_dims) {
    if (w == 0) throw ConfigError("network: trunk widths must be >= 1");
  }
  if (fc_dim == 0 || emb_dim == 0 || attr_dim == 0) {
    throw ConfigError("network: fc_dim, emb_dim and attr_dim must be >= 1");
  }
}

std::size_t NetworkShape::parameter_count() const {
  std::size_t total = 0;
  std::size_t fan_in = input_dim;
  for (std::size_t w : trunk_dims) {
    total += fan_in * w + w;
    fan_in = w;
  }
  total += fan_in * fc_dim + fc_dim;
  total += fc_dim * emb_dim + emb_dim;
  total += fc_dim * attr_dim + attr_dim;
  return total;
}

NetworkParams NetworkParams::zeros(const NetworkShape& shape) {
  shape.validate();
  NetworkParams p;
  p.shape = shape;
  std::size_t fan_in = shape.input_dim;
  for (std::size_t w : shape.trunk_dims) {
    p.trunk.emplace_back(fan_in, w);
    fan_in = w;
  }
  p.fc = DenseLayer(fan_in, shape.fc_dim);
  p.emb = DenseLayer(shape.fc_dim, shape.emb_dim);
  p.attr = DenseLayer(shape.fc_dim, shape.attr_dim);
  return p;
}

void NetworkParams::for_each_layer(const std::function<void(DenseLayer&)>& fn) {
  for (auto& layer : trunk) fn(layer);
  fn(fc);
  fn(emb);
  fn(attr);
}

void NetworkParams::for_each_layer(const std::function<void(const DenseLayer&)>& fn) const {
  for (const auto& layer : trunk) fn(layer);
  fn(fc);
  fn(emb);
  fn(attr);
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t total = 0;
  for_each_layer([&](const DenseLayer& l) {
    total += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  });
  return total;
}

bool NetworkParams::all_finite() const {
  bool ok = true;
  for_each_layer([&](const DenseLayer& l) { ok = ok && l.weight.allFinite() && l.bias.allFinite(); });
  return ok;
}

NetworkParams init_params(const NetworkShape& shape, Rng& rng) {
  NetworkParams p = NetworkParams::zeros(shape);
  p.for_each_layer([&](DenseLayer& l) {
    const double bound =
        std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = rng.uniform(-bound, bound);
    }
  });
  return p;
}

namespace {

Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix z = x * layer.weight.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

// Accumulates layer gradients for pre-activation gradient `dz` and returns
// the gradient with respect to the layer input.
Matrix backprop_affine(const Matrix& dz, const Matrix& x, const DenseLayer& layer,
                       DenseLayer& grad) {
  grad.weight.noalias() += dz.transpose() * x;
  grad.bias.noalias() += dz.colwise().sum().transpose();
  return dz * layer.weight;
}

Matrix relu_backward(const Matrix& d_act, const Matrix& pre) {
  return d_act.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
}

}  // namespace

ForwardOutput forward(const NetworkParams& params, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != params.shape.input_dim) {
    throw DomainError("forward: input width " + std::to_string(inputs.cols()) +
                      " does not match network input_dim " +
                      std::to_string(params.shape.input_dim));
  }
  if (!inputs.allFinite()) throw DomainError("forward: non-finite input");

  ForwardOutput out;
  ForwardCache& cache = out.cache;
  cache.input = inputs;
  const Matrix* x = &cache.input;
  for (const auto& layer : params.trunk) {
    cache.trunk_pre.push_back(affine(*x, layer));
    cache.trunk_act.push_back(relu(cache.trunk_pre.back()));
    x = &cache.trunk_act.back();
  }
  out.trunk_out = *x;
  cache.fc_pre = affine(*x, params.fc);
  cache.fc_act = relu(cache.fc_pre);
  out.fc_out = cache.fc_act;
  out.embeddings = affine(cache.fc_act, params.emb);
  cache.attr_logits = affine(cache.fc_act, params.attr);
  cache.attr_probs = cache.attr_logits.unaryExpr([](double z) { return clamp_probability(sigmoid(z)); });
  out.attr_probs = cache.attr_probs;
  return out;
}

ParamGrads backward(const NetworkParams& params, const ForwardCache& cache,
                    const Matrix& d_embeddings, const Matrix& d_attr_probs) {
  const Eigen::Index n = cache.input.rows();
  if (d_embeddings.rows() != n || d_attr_probs.rows() != n ||
      d_embeddings.cols() != static_cast<Eigen::Index>(params.shape.emb_dim) ||
      d_attr_probs.cols() != static_cast<Eigen::Index>(params.shape.attr_dim) ||
      cache.trunk_pre.size() != params.trunk.size()) {
    throw std::logic_error("backward: cache and gradient shapes do not match the forward batch");
  }
  ParamGrads grads = NetworkParams::zeros(params.shape);

  // Clamp has zero slope outside (1e-7, 1 - 1e-7); sigmoid' = p (1 - p).
  Matrix d_logits(n, d_attr_probs.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < d_attr_probs.cols(); ++c) {
      const double sig = sigmoid(cache.attr_logits(r, c));
      const bool clamped = sig <= kProbClamp || sig >= 1.0 - kProbClamp;
      d_logits(r, c) = clamped ? 0.0 : d_attr_probs(r, c) * sig * (1.0 - sig);
    }
  }

  Matrix d_fc_act = backprop_affine(d_embeddings, cache.fc_act, params.emb, grads.emb);
  d_fc_act += backprop_affine(d_logits, cache.fc_act, params.attr, grads.attr);
  const Matrix& trunk_out = params.trunk.empty() ? cache.input : cache.trunk_act.back();
  Matrix d_x = backprop_affine(relu_backward(d_fc_act, cache.fc_pre), trunk_out, params.fc, grads.fc);
  for (std::size_t i = params.trunk.size(); i-- > 0;) {
    const Matrix& layer_in = i == 0 ? cache.input : cache.trunk_act[i - 1];
    d_x = backprop_affine(relu_backward(d_x, cache.trunk_pre[i]), layer_in, params.trunk[i],
                          grads.trunk[i]);
  }
  return grads;
}

OptimizerState OptimizerState::for_params(const NetworkParams& params, const AdamConfig& config) {
  OptimizerState state;
  state.config = config;
  state.m = NetworkParams::zeros(params.shape);
  state.v = NetworkParams::zeros(params.shape);
  return state;
}

namespace {

std::vector<DenseLayer*> layers_of(NetworkParams& p) {
  std::vector<DenseLayer*> out;
  p.for_each_layer([&](DenseLayer& l) { out.push_back(&l); });
  return out;
}

std::vector<const DenseLayer*> layers_of(const NetworkParams& p) {
  std::vector<const DenseLayer*> out;
  p.for_each_layer([&](const DenseLayer& l) { out.push_back(&l); });
  return out;
}

template <typename T>
void adam_update(T& param, const T& grad, T& m, T& v, const AdamConfig& c, double correction1,
                 double correction2) {
  m = c.beta1 * m + (1.0 - c.beta1) * grad;
  v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseProduct(grad);
  param.array() -= c.learning_rate * (m.array() / correction1) /
                   ((v.array() / correction2).sqrt() + c.epsilon);
}

}  // namespace

void adam_step(NetworkParams& params, const ParamGrads& grads, OptimizerState& state) {
  if (!(params.shape == grads.shape) || !(params.shape == state.m.shape)) {
    throw std::logic_error("adam_step: parameter, gradient and state shapes differ");
  }
  const auto g = layers_of(grads);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g[i]->weight.allFinite() || !g[i]->bias.allFinite()) {
      throw DomainError("adam_step: non-finite gradient in layer " + std::to_string(i) +
                        " at step " + std::to_string(state.step + 1));
    }
  }
  state.step += 1;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  const auto p = layers_of(params);
  const auto m = layers_of(state.m);
  const auto v = layers_of(state.v);
  for (std::size_t i = 0; i < p.size(); ++i) {
    adam_update(p[i]->weight, g[i]->weight, m[i]->weight, v[i]->weight, c, correction1, correction2);
    adam_update(p[i]->bias, g[i]->bias, m[i]->bias, v[i]->bias, c, correction1, correction2);
  }
}

}  // namespace sgml
