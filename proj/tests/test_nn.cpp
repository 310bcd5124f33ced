#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace masktab;
using masktab::testing::check_network_gradient;

namespace {

nn::NetworkParams small_net(std::uint64_t seed, double dropout = 0.0) {
  Rng rng(seed);
  return nn::make_network({{4, 6, nn::Activation::relu, dropout}},
                          {{"regression", {{6, 3, nn::Activation::relu, 0.0}}},
                           {"classification", {{6, 3, nn::Activation::sigmoid, 0.0}}}},
                          rng);
}

}  // namespace

TEST(Network, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    for (double frac : {0.0, 0.5, 1.0}) {
      const auto r = check_network_gradient(seed, frac);
      EXPECT_LT(r.max_rel_err, 1e-4) << "seed " << seed << " masked " << frac;
      EXPECT_GT(r.checked, r.skipped);
    }
}

TEST(Network, GlorotInitialisation) {
  Rng rng(3);
  const auto l = nn::make_layer({30, 20, nn::Activation::relu, 0.0}, rng);
  const double limit = std::sqrt(6.0 / 50.0);
  double sum = 0.0;
  for (double w : l.weights.data()) {
    EXPECT_LE(std::abs(w), limit);
    sum += w * w;
  }
  // Uniform(-a, a) has variance a^2 / 3.
  EXPECT_NEAR(sum / 600.0, limit * limit / 3.0, 0.1 * limit * limit / 3.0);
  for (double b : l.bias) EXPECT_EQ(b, 0.0);
}

TEST(Network, InvalidSpecsRejected) {
  Rng rng(1);
  EXPECT_THROW(nn::make_layer({0, 3, nn::Activation::relu, 0.0}, rng), ConfigError);
  EXPECT_THROW(nn::make_layer({3, 3, nn::Activation::relu, 1.0}, rng), ConfigError);
  EXPECT_THROW(nn::make_network({{4, 6, nn::Activation::relu, 0.0}, {5, 2, nn::Activation::relu, 0.0}}, {}, rng),
               ConfigError);
  EXPECT_THROW(nn::make_network({{4, 6, nn::Activation::relu, 0.0}}, {{"h", {{5, 2, nn::Activation::relu, 0.0}}}}, rng),
               ConfigError);
}

TEST(Network, InputWidthChecked) {
  const auto net = small_net(1);
  EXPECT_THROW(nn::forward(net, Matrix(2, 5), nn::Mode::infer), DataError);
}

TEST(Network, NonFiniteActivationIsNumericalError) {
  const auto net = small_net(1);
  Matrix x(1, 4, 0.0);
  x(0, 0) = std::nan("");
  EXPECT_THROW(nn::forward(net, x, nn::Mode::infer), NumericalError);
}

TEST(Network, InferenceIsDeterministicAndDropoutFree) {
  const auto net = small_net(5, 0.5);
  Rng rng(9);
  const Matrix x = masktab::testing::random_matrix(10, 4, rng);
  const auto a = nn::infer_head(net, x, "regression");
  const auto b = nn::infer_head(net, x, "regression");
  EXPECT_EQ(a, b);
  auto no_drop = net;
  no_drop.backbone[0].spec.dropout_rate = 0.0;
  EXPECT_EQ(a, nn::infer_head(no_drop, x, "regression"));
}

TEST(Network, TrainModeNeedsRngForDropout) {
  const auto net = small_net(5, 0.5);
  EXPECT_THROW(nn::forward(net, Matrix(1, 4), nn::Mode::train, nullptr), ConfigError);
}

TEST(Dropout, InvertedScalingPreservesExpectation) {
  Rng init(2);
  auto layer = nn::make_layer({3, 8, nn::Activation::linear, 0.4}, init);
  for (double& b : layer.bias) b = 1.0;
  nn::NetworkParams net;
  net.backbone.push_back(layer);
  const Matrix x(1, 3, 0.5);
  const auto expected = nn::forward(net, x, nn::Mode::infer).cache.layers[0].activated;
  Rng rng(77);
  std::vector<double> mean(8, 0.0);
  const int draws = 10000;
  std::size_t dropped = 0;
  for (int d = 0; d < draws; ++d) {
    const auto f = nn::forward(net, x, nn::Mode::train, &rng);
    // Backbone-only network has no heads; read the cached post-dropout value.
    const auto& c = f.cache.layers[0];
    for (std::size_t j = 0; j < 8; ++j) {
      mean[j] += c.activated(0, j) * c.dropout_scale(0, j) / draws;
      dropped += c.dropout_scale(0, j) == 0.0;
    }
  }
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(mean[j], expected(0, j), 0.02 * std::abs(expected(0, j)));
  EXPECT_NEAR(static_cast<double>(dropped) / (8.0 * draws), 0.4, 0.01);
}

TEST(Backward, EmptyHeadGradientContributesNothing) {
  const auto net = small_net(4);
  Rng rng(1);
  const Matrix x = masktab::testing::random_matrix(5, 4, rng);
  const auto f = nn::forward(net, x, nn::Mode::infer);
  const Matrix g = masktab::testing::random_matrix(5, 3, rng);
  const auto only_reg = nn::backward(net, f.cache, {g, Matrix()});
  for (double v : only_reg[2].weights.data()) EXPECT_EQ(v, 0.0);  // classification head
  const auto both = nn::backward(net, f.cache, {g, g});
  const auto only_cls = nn::backward(net, f.cache, {Matrix(), g});
  for (std::size_t i = 0; i < both[0].weights.size(); ++i)
    EXPECT_NEAR(both[0].weights.data()[i], only_reg[0].weights.data()[i] + only_cls[0].weights.data()[i], 1e-12);
  EXPECT_THROW(nn::backward(net, f.cache, {g}), DataError);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  auto net = small_net(6);
  const auto before = net;
  auto grads = nn::zero_gradients(net);
  Rng rng(8);
  for (auto& g : grads) {
    for (double& v : g.weights.data()) v = rng.uniform(-2.0, 2.0);
    for (double& v : g.bias) v = rng.uniform(-2.0, 2.0);
  }
  auto state = nn::AdamState::for_network(net);
  nn::adam_step(net, grads, state);
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    for (std::size_t i = 0; i < grads[l].weights.size(); ++i) {
      const double g = grads[l].weights.data()[i];
      const double step = net.layer(l).weights.data()[i] - before.layer(l).weights.data()[i];
      // m_hat = g and v_hat = g^2 after one step.
      EXPECT_NEAR(step, -1e-3 * g / (std::abs(g) + 1e-8), 1e-15);
      EXPECT_NEAR(std::abs(step), 1e-3, 1e-3 * 1e-5);
    }
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FrozenLayersUntouched) {
  auto net = small_net(6);
  net.set_backbone_trainable(false);
  const auto before = net;
  auto grads = nn::zero_gradients(net);
  for (auto& g : grads)
    for (double& v : g.weights.data()) v = 0.5;
  auto state = nn::AdamState::for_network(net);
  for (int i = 0; i < 5; ++i) nn::adam_step(net, grads, state);
  EXPECT_EQ(net.backbone[0].weights, before.backbone[0].weights);
  EXPECT_EQ(net.backbone[0].bias, before.backbone[0].bias);
  for (double v : state.first_moment[0].weights.data()) EXPECT_EQ(v, 0.0);
  EXPECT_NE(net.heads[0].layers[0].weights, before.heads[0].layers[0].weights);
}

TEST(Adam, NonFiniteGradientRejected) {
  auto net = small_net(6);
  auto grads = nn::zero_gradients(net);
  grads[1].bias[0] = INFINITY;
  auto state = nn::AdamState::for_network(net);
  EXPECT_THROW(nn::adam_step(net, grads, state), NumericalError);
}

TEST(Checkpoint, NetworkJsonRoundTripIsExact) {
  auto net = small_net(12, 0.2);
  Rng rng(3);
  for (double& b : net.heads[1].layers[0].bias) b = rng.normal();
  const auto text = nn::network_to_json(net).dump();
  const auto back = nn::network_from_json(nlohmann::json::parse(text));
  EXPECT_TRUE(back == net);
  const Matrix x = masktab::testing::random_matrix(7, 4, rng);
  EXPECT_EQ(nn::infer_head(back, x, "classification"), nn::infer_head(net, x, "classification"));
}

TEST(Checkpoint, CorruptNetworkRejected) {
  auto j = nn::network_to_json(small_net(1));
  auto bad_format = j;
  bad_format["format"] = "other";
  EXPECT_THROW(nn::network_from_json(bad_format), DataError);
  auto bad_shape = j;
  bad_shape["backbone"][0]["out_dim"] = 7;
  EXPECT_THROW(nn::network_from_json(bad_shape), DataError);
  auto bad_version = j;
  bad_version["version"] = 99;
  EXPECT_THROW(nn::network_from_json(bad_version), DataError);
}
