#pragma once

#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "masktab.hpp"

namespace masktab::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("masktab_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

/// Mask with exactly round(frac * size) zeros at random positions.
inline Matrix random_mask(std::size_t r, std::size_t c, double frac_masked, Rng& rng) {
  Matrix m(r, c, 1.0);
  auto perm = rng.permutation(r * c);
  const auto n_zero = static_cast<std::size_t>(frac_masked * static_cast<double>(r * c) + 0.5);
  for (std::size_t i = 0; i < n_zero; ++i) m.data()[perm[i]] = 0.0;
  return m;
}

/// Small synthetic pipeline input: default generator shape, fewer lag days.
inline SynthConfig small_synth(std::uint64_t seed, std::size_t lag_days = 10) {
  SynthConfig c;
  c.seed = seed;
  c.weather_lag_days = lag_days;
  return c;
}

inline PreprocessedData preprocessed(const SynthConfig& cfg, std::uint64_t split_seed = 7) {
  SplitOptions so;
  so.seed = split_seed;
  return preprocess_with_split(generate(cfg), {}, so);
}

/// Training config small enough for unit tests.
inline TrainConfig quick_train(std::uint64_t seed, std::size_t epochs = 30) {
  TrainConfig c;
  c.seed = seed;
  c.hidden_dims = {16, 8};
  c.max_epochs = epochs;
  c.patience = std::min<std::size_t>(epochs, 10);
  c.ae.encoder_dims = {32, 16, 8};
  c.ae.max_epochs = epochs;
  c.ae.patience = std::min<std::size_t>(epochs, 5);
  return c;
}

/// Relative error with the denominator floored so near-zero pairs compare absolutely.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed an activation kink
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradFloor = 1e-6;

/// Central differences of `loss` over every entry of `values` against
/// `analytic`. `pattern` (optional) fingerprints the piecewise region; entries
/// whose perturbation changes it are skipped rather than compared.
inline void fd_compare(std::span<double> values, std::span<const double> analytic,
                       const std::function<double()>& loss,
                       const std::function<std::vector<bool>()>& pattern, GradCheck& out) {
  const auto base = pattern ? pattern() : std::vector<bool>{};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + kFdStep;
    const double up = loss();
    const bool up_same = !pattern || pattern() == base;
    values[i] = saved - kFdStep;
    const double down = loss();
    const bool down_same = !pattern || pattern() == base;
    values[i] = saved;
    if (!up_same || !down_same) {
      ++out.skipped;
      continue;
    }
    const double numeric = (up - down) / (2.0 * kFdStep);
    out.max_rel_err = std::max(out.max_rel_err, rel_err(analytic[i], numeric, kGradFloor));
    ++out.checked;
  }
}

/// Loss-level check: gradient of masked MSE or BCE with respect to y_hat.
inline GradCheck check_loss_gradient(bool bce, std::uint64_t seed, double frac_masked,
                                     std::size_t rows = 8, std::size_t cols = 5) {
  Rng rng(seed);
  Matrix y(rows, cols), y_hat(rows, cols);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y.data()[i] = bce ? static_cast<double>(rng.below(2)) : rng.uniform(0.0, 3.0);
    y_hat.data()[i] = bce ? rng.uniform(0.05, 0.95) : rng.uniform(-1.0, 4.0);
  }
  const Matrix mask = random_mask(rows, cols, frac_masked, rng);
  auto eval = [&] { return bce ? masked_bce({y, y_hat, mask}) : masked_mse({y, y_hat, mask}); };
  const auto analytic = eval().grad;
  GradCheck out;
  fd_compare(y_hat.data(), analytic.data(), [&] { return eval().loss; }, nullptr, out);
  return out;
}

/// Full two-head network (relu backbone with dropout, relu regression head,
/// sigmoid classification head) under the combined masked loss.
inline GradCheck check_network_gradient(std::uint64_t seed, double frac_masked) {
  Rng rng(seed);
  const std::size_t batch = 6, p = 7, k = 4;
  const std::vector<nn::LayerSpec> backbone{{p, 6, nn::Activation::relu, 0.3}, {6, 5, nn::Activation::relu, 0.3}};
  const std::vector<nn::HeadSpec> heads{{"regression", {{5, k, nn::Activation::relu, 0.0}}},
                                        {"classification", {{5, k, nn::Activation::sigmoid, 0.0}}}};
  auto net = nn::make_network(backbone, heads, rng);
  // Non-zero biases so relu units are not all pinned at the same side.
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    for (double& b : net.layer(l).bias) b = rng.uniform(-0.2, 0.4);
  const Matrix x = random_matrix(batch, p, rng, -2.0, 2.0);
  Matrix yc(batch, k), yb(batch, k);
  for (std::size_t i = 0; i < yc.size(); ++i) {
    yc.data()[i] = rng.uniform(0.0, 2.0);
    yb.data()[i] = static_cast<double>(rng.below(2));
  }
  const Matrix mask = random_mask(batch, k, frac_masked, rng);
  const std::uint64_t dropout_seed = rng.next_u64();

  auto run = [&] {
    Rng drop(dropout_seed);  // same dropout masks on every evaluation
    return nn::forward(net, x, nn::Mode::train, &drop);
  };
  auto loss_of = [&](const nn::ForwardResult& f) {
    return combined_loss({yc, f.head_outputs[0], mask}, {yb, f.head_outputs[1], mask});
  };
  auto pattern = [&] {
    const auto f = run();
    std::vector<bool> bits;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      if (net.layer(l).spec.activation != nn::Activation::relu) continue;
      for (double a : f.cache.layers[l].activated.data()) bits.push_back(a > 0.0);
    }
    return bits;
  };

  const auto f = run();
  const auto c = loss_of(f);
  const auto grads = nn::backward(net, f.cache, {c.regression_grad, c.classification_grad});
  GradCheck out;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& layer = net.layer(l);
    auto loss = [&] { return loss_of(run()).loss; };
    fd_compare(layer.weights.data(), grads[l].weights.data(), loss, pattern, out);
    fd_compare(layer.bias, grads[l].bias, loss, pattern, out);
  }
  return out;
}

}  // namespace masktab::testing
