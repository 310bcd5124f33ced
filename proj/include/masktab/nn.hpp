#pragma once

// Small dense network engine: a shared backbone feeding any number of named
// heads, reverse-mode gradients, inverted dropout and Adam.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "masktab/error.hpp"
#include "masktab/matrix.hpp"
#include "masktab/rng.hpp"

namespace masktab::nn {

enum class Activation { relu, sigmoid, linear };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::linear: return "linear";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "linear") return Activation::linear;
  throw DataError("unknown activation '" + s + "'");
}

/// Dropout, when present, is applied after the activation and only in training.
struct LayerSpec {
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
  Activation activation = Activation::relu;
  double dropout_rate = 0.0;
};

struct DenseLayer {
  LayerSpec spec;
  Matrix weights;  // out_dim x in_dim
  std::vector<double> bias;
  bool trainable = true;

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weights == b.weights && a.bias == b.bias && a.spec.in_dim == b.spec.in_dim &&
           a.spec.out_dim == b.spec.out_dim && a.spec.activation == b.spec.activation &&
           a.spec.dropout_rate == b.spec.dropout_rate;
  }
};

struct Head {
  std::string name;
  std::vector<DenseLayer> layers;
};

/// Parameters of a backbone plus named heads. Layers are addressed in a flat
/// order: backbone first, then each head's layers in head order.
struct NetworkParams {
  std::vector<DenseLayer> backbone;
  std::vector<Head> heads;

  std::size_t input_dim() const {
    if (!backbone.empty()) return backbone.front().spec.in_dim;
    return heads.at(0).layers.at(0).spec.in_dim;
  }
  std::size_t backbone_dim() const {
    return backbone.empty() ? input_dim() : backbone.back().spec.out_dim;
  }

  std::size_t layer_count() const {
    std::size_t n = backbone.size();
    for (const auto& h : heads) n += h.layers.size();
    return n;
  }

  DenseLayer& layer(std::size_t flat) {
    return const_cast<DenseLayer&>(static_cast<const NetworkParams&>(*this).layer(flat));
  }
  const DenseLayer& layer(std::size_t flat) const {
    if (flat < backbone.size()) return backbone[flat];
    flat -= backbone.size();
    for (const auto& h : heads) {
      if (flat < h.layers.size()) return h.layers[flat];
      flat -= h.layers.size();
    }
    throw DataError("layer index out of range");
  }

  std::size_t head_index(const std::string& name) const {
    for (std::size_t i = 0; i < heads.size(); ++i)
      if (heads[i].name == name) return i;
    throw DataError("network has no head '" + name + "'");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < layer_count(); ++i) n += layer(i).weights.size() + layer(i).bias.size();
    return n;
  }

  void set_backbone_trainable(bool trainable) {
    for (auto& l : backbone) l.trainable = trainable;
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    if (a.backbone != b.backbone || a.heads.size() != b.heads.size()) return false;
    for (std::size_t i = 0; i < a.heads.size(); ++i)
      if (a.heads[i].name != b.heads[i].name || a.heads[i].layers != b.heads[i].layers) return false;
    return true;
  }
};

/// Glorot-uniform weights, zero biases.
inline DenseLayer make_layer(const LayerSpec& spec, Rng& rng) {
  if (spec.in_dim < 1 || spec.out_dim < 1) throw ConfigError("layer dimensions must be >= 1");
  if (!(spec.dropout_rate >= 0.0 && spec.dropout_rate < 1.0))
    throw ConfigError("dropout rate must lie in [0, 1)");
  DenseLayer l{spec, Matrix(spec.out_dim, spec.in_dim), std::vector<double>(spec.out_dim, 0.0), true};
  const double limit = std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
  for (double& w : l.weights.data()) w = rng.uniform(-limit, limit);
  return l;
}

struct HeadSpec {
  std::string name;
  std::vector<LayerSpec> layers;
};

inline NetworkParams make_network(const std::vector<LayerSpec>& backbone,
                                  const std::vector<HeadSpec>& heads, Rng& rng) {
  NetworkParams p;
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    if (i > 0 && backbone[i].in_dim != backbone[i - 1].out_dim)
      throw ConfigError("backbone layer dimensions do not chain");
    p.backbone.push_back(make_layer(backbone[i], rng));
  }
  for (const auto& hs : heads) {
    Head h{hs.name, {}};
    for (std::size_t i = 0; i < hs.layers.size(); ++i) {
      const std::size_t expect = i == 0 ? (backbone.empty() ? hs.layers[0].in_dim : backbone.back().out_dim)
                                        : hs.layers[i - 1].out_dim;
      if (hs.layers[i].in_dim != expect) throw ConfigError("head '" + hs.name + "' dimensions do not chain");
      h.layers.push_back(make_layer(hs.layers[i], rng));
    }
    p.heads.push_back(std::move(h));
  }
  return p;
}

enum class Mode { train, infer };

struct LayerCache {
  Matrix input;
  Matrix activated;     // after activation, before dropout
  Matrix dropout_scale; // empty when dropout was not applied
};

struct ForwardCache {
  std::vector<LayerCache> layers;  // flat layer order
};

struct ForwardResult {
  std::vector<Matrix> head_outputs;
  ForwardCache cache;
};

namespace detail {

inline void apply_activation(Activation a, Matrix& z) {
  switch (a) {
    case Activation::relu:
      for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::sigmoid:
      for (double& v : z.data()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      break;
    case Activation::linear:
      break;
  }
}

inline Matrix layer_forward(const DenseLayer& layer, const Matrix& input, Mode mode, Rng* rng,
                            LayerCache* cache) {
  if (input.cols() != layer.spec.in_dim)
    throw DataError("forward: input has " + std::to_string(input.cols()) + " columns, layer expects " +
                    std::to_string(layer.spec.in_dim));
  Matrix z;
  matmul_transb(input, layer.weights, z);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
  }
  // Checked before the activation: relu would map NaN to 0.
  if (!z.all_finite()) throw NumericalError("forward: non-finite activation");
  apply_activation(layer.spec.activation, z);
  Matrix out = z;
  Matrix scale;
  if (mode == Mode::train && layer.spec.dropout_rate > 0.0) {
    if (!rng) throw ConfigError("forward: train mode with dropout needs an rng");
    const double keep = 1.0 - layer.spec.dropout_rate;
    scale = Matrix(z.rows(), z.cols());
    for (std::size_t i = 0; i < scale.size(); ++i) {
      scale.data()[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
      out.data()[i] *= scale.data()[i];
    }
  }
  if (cache) *cache = {input, std::move(z), std::move(scale)};
  return out;
}

}  // namespace detail

/// Runs the backbone then every head. Train mode samples dropout masks from `rng`.
inline ForwardResult forward(const NetworkParams& params, const Matrix& x, Mode mode, Rng* rng = nullptr,
                             bool keep_cache = true) {
  if (x.cols() != params.input_dim())
    throw DataError("forward: input has " + std::to_string(x.cols()) + " columns, network expects " +
                    std::to_string(params.input_dim()));
  ForwardResult res;
  if (keep_cache) res.cache.layers.resize(params.layer_count());
  std::size_t flat = 0;
  Matrix h = x;
  for (const auto& layer : params.backbone) {
    h = detail::layer_forward(layer, h, mode, rng, keep_cache ? &res.cache.layers[flat] : nullptr);
    ++flat;
  }
  for (const auto& head : params.heads) {
    Matrix o = h;
    for (const auto& layer : head.layers) {
      o = detail::layer_forward(layer, o, mode, rng, keep_cache ? &res.cache.layers[flat] : nullptr);
      ++flat;
    }
    res.head_outputs.push_back(std::move(o));
  }
  return res;
}

/// Dropout-free inference for one head.
inline Matrix infer_head(const NetworkParams& params, const Matrix& x, const std::string& head) {
  auto res = forward(params, x, Mode::infer, nullptr, false);
  return std::move(res.head_outputs.at(params.head_index(head)));
}

struct LayerGrad {
  Matrix weights;
  std::vector<double> bias;
};

using Gradients = std::vector<LayerGrad>;  // flat layer order

inline Gradients zero_gradients(const NetworkParams& p) {
  Gradients g(p.layer_count());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& l = p.layer(i);
    g[i] = {Matrix(l.weights.rows(), l.weights.cols()), std::vector<double>(l.bias.size(), 0.0)};
  }
  return g;
}

namespace detail {

/// Consumes dOut (gradient w.r.t. the layer's post-dropout output), accumulates
/// parameter gradients and returns the gradient w.r.t. the layer input.
inline Matrix layer_backward(const DenseLayer& layer, const LayerCache& cache, Matrix d_out,
                             LayerGrad& grad, bool need_input_grad) {
  if (d_out.rows() != cache.activated.rows() || d_out.cols() != cache.activated.cols())
    throw DataError("backward: gradient shape " + shape_string(d_out) + " does not match cached output " +
                    shape_string(cache.activated));
  if (!cache.dropout_scale.empty())
    for (std::size_t i = 0; i < d_out.size(); ++i) d_out.data()[i] *= cache.dropout_scale.data()[i];
  switch (layer.spec.activation) {
    case Activation::relu:
      for (std::size_t i = 0; i < d_out.size(); ++i)
        if (!(cache.activated.data()[i] > 0.0)) d_out.data()[i] = 0.0;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < d_out.size(); ++i) {
        const double s = cache.activated.data()[i];
        d_out.data()[i] *= s * (1.0 - s);
      }
      break;
    case Activation::linear:
      break;
  }
  matmul_transa_acc(d_out, cache.input, grad.weights);
  for (std::size_t r = 0; r < d_out.rows(); ++r) {
    auto row = d_out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) grad.bias[c] += row[c];
  }
  Matrix d_in;
  if (need_input_grad) matmul(d_out, layer.weights, d_in);
  return d_in;
}

}  // namespace detail

/// Gradients of a scalar loss whose partials w.r.t. each head output are given.
/// An empty matrix in `head_grads` means that head does not contribute. The
/// backbone receives the sum of every head's contribution.
inline Gradients backward(const NetworkParams& params, const ForwardCache& cache,
                          const std::vector<Matrix>& head_grads) {
  if (cache.layers.size() != params.layer_count())
    throw DataError("backward: cache does not match network (was forward run with keep_cache?)");
  if (head_grads.size() != params.heads.size())
    throw DataError("backward: expected " + std::to_string(params.heads.size()) + " head gradients");
  Gradients grads = zero_gradients(params);
  const std::size_t nb = params.backbone.size();
  const std::size_t batch = cache.layers.front().input.rows();
  Matrix d_backbone(batch, params.backbone_dim(), 0.0);
  bool any = false;

  std::size_t head_start = nb;
  for (std::size_t h = 0; h < params.heads.size(); ++h) {
    const auto& layers = params.heads[h].layers;
    if (!head_grads[h].empty()) {
      Matrix d = head_grads[h];
      for (std::size_t li = layers.size(); li-- > 0;) {
        const std::size_t flat = head_start + li;
        d = detail::layer_backward(layers[li], cache.layers[flat], std::move(d), grads[flat],
                                   li > 0 || nb > 0);
      }
      if (nb > 0) {
        for (std::size_t i = 0; i < d.size(); ++i) d_backbone.data()[i] += d.data()[i];
        any = true;
      }
    }
    head_start += layers.size();
  }
  if (any) {
    Matrix d = std::move(d_backbone);
    for (std::size_t li = nb; li-- > 0;)
      d = detail::layer_backward(params.backbone[li], cache.layers[li], std::move(d), grads[li], li > 0);
  }
  return grads;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  Gradients first_moment;
  Gradients second_moment;

  static AdamState for_network(const NetworkParams& p, AdamConfig cfg = {}) {
    return {cfg, 0, zero_gradients(p), zero_gradients(p)};
  }
};

/// One bias-corrected Adam update. Layers marked non-trainable are left
/// untouched, moments included.
inline void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state) {
  if (grads.size() != params.layer_count() || state.first_moment.size() != params.layer_count())
    throw DataError("adam_step: gradient/state layout does not match network");
  for (const auto& g : grads) {
    if (!g.weights.all_finite()) throw NumericalError("adam_step: non-finite gradient");
    for (double b : g.bias)
      if (!std::isfinite(b)) throw NumericalError("adam_step: non-finite gradient");
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> m,
                    std::span<double> v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  };
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& layer = params.layer(i);
    if (!layer.trainable) continue;
    if (!grads[i].weights.same_shape(layer.weights) || grads[i].bias.size() != layer.bias.size())
      throw DataError("adam_step: gradient shape mismatch at layer " + std::to_string(i));
    update(layer.weights.data(), grads[i].weights.data(), state.first_moment[i].weights.data(),
           state.second_moment[i].weights.data());
    update(layer.bias, grads[i].bias, state.first_moment[i].bias, state.second_moment[i].bias);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint: JSON with a shape header per layer; weights are row-major
// (out_dim x in_dim) and written with round-trip precision.

inline constexpr const char* kCheckpointFormat = "masktab-network";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json layer_to_json(const DenseLayer& l) {
  return {{"in_dim", l.spec.in_dim},
          {"out_dim", l.spec.out_dim},
          {"activation", to_string(l.spec.activation)},
          {"dropout_rate", l.spec.dropout_rate},
          {"weights", std::vector<double>(l.weights.data().begin(), l.weights.data().end())},
          {"bias", l.bias}};
}

inline DenseLayer layer_from_json(const nlohmann::json& j) {
  DenseLayer l;
  l.spec.in_dim = j.at("in_dim").get<std::size_t>();
  l.spec.out_dim = j.at("out_dim").get<std::size_t>();
  l.spec.activation = activation_from_string(j.at("activation").get<std::string>());
  l.spec.dropout_rate = j.at("dropout_rate").get<double>();
  const auto w = j.at("weights").get<std::vector<double>>();
  l.bias = j.at("bias").get<std::vector<double>>();
  if (w.size() != l.spec.in_dim * l.spec.out_dim || l.bias.size() != l.spec.out_dim)
    throw DataError("checkpoint layer shape header does not match its data");
  l.weights = Matrix(l.spec.out_dim, l.spec.in_dim);
  std::copy(w.begin(), w.end(), l.weights.data().begin());
  return l;
}

inline nlohmann::json network_to_json(const NetworkParams& p) {
  nlohmann::json backbone = nlohmann::json::array(), heads = nlohmann::json::array();
  for (const auto& l : p.backbone) backbone.push_back(layer_to_json(l));
  for (const auto& h : p.heads) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : h.layers) layers.push_back(layer_to_json(l));
    heads.push_back({{"name", h.name}, {"layers", layers}});
  }
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"input_dim", p.input_dim()},
          {"backbone", backbone},
          {"heads", heads}};
}

inline NetworkParams network_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kCheckpointFormat) throw DataError("not a masktab network checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + j.at("version").dump());
  NetworkParams p;
  for (const auto& l : j.at("backbone")) p.backbone.push_back(layer_from_json(l));
  for (const auto& h : j.at("heads")) {
    Head head{h.at("name").get<std::string>(), {}};
    for (const auto& l : h.at("layers")) head.layers.push_back(layer_from_json(l));
    p.heads.push_back(std::move(head));
  }
  if (p.layer_count() == 0) throw DataError("checkpoint has no layers");
  if (p.input_dim() != j.at("input_dim").get<std::size_t>())
    throw DataError("checkpoint input_dim header does not match first layer");
  return p;
}

}  // namespace masktab::nn
