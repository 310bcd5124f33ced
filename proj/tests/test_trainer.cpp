#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace masktab;
using masktab::testing::quick_train;

namespace {

const PreprocessedData& data() {
  static const auto d = masktab::testing::preprocessed(masktab::testing::small_synth(21));
  return d;
}

// One linear head on a 1-unit backbone; the loss script drives early stopping.
struct Scripted {
  std::vector<double> val_losses;  // first entry is the pre-training loss
  std::size_t calls = 0;
  std::vector<std::size_t> val_rows;

  BatchLoss operator()(const std::vector<Matrix>& outputs, const std::vector<std::size_t>& rows) {
    if (rows == val_rows) {
      const double v = val_losses.at(std::min(calls++, val_losses.size() - 1));
      return {v, v, 0.0, {}};
    }
    return {1.0, 1.0, 0.0, {Matrix(outputs[0].rows(), outputs[0].cols(), 1.0)}};
  }
};

nn::NetworkParams tiny_net() {
  Rng rng(1);
  return nn::make_network({{2, 3, nn::Activation::linear, 0.0}}, {{"out", {{3, 1, nn::Activation::linear, 0.0}}}}, rng);
}

}  // namespace

TEST(EarlyStopping, StrictImprovementAndPatience) {
  Rng rng(2);
  const Matrix x = masktab::testing::random_matrix(8, 2, rng);
  const std::vector<std::size_t> fit{0, 1, 2, 3, 4, 5}, val{6, 7};
  auto net = tiny_net();
  // Epoch losses: 4, 3, 3.5, 3 (tie is not an improvement), 3.2 -> stop.
  Scripted s{{5, 4, 3, 3.5, 3, 3.2, 1, 1}, 0, val};
  LoopConfig loop{1e-3, 50, 4, 3, false, 9};
  const auto h = run_training(net, x, fit, val, std::ref(s), loop);
  EXPECT_EQ(h.initial_val_loss, 5.0);
  EXPECT_EQ(h.best_epoch, 1u);
  EXPECT_EQ(h.stopped_epoch, 4u);
  EXPECT_EQ(h.epochs.size(), 5u);
  EXPECT_EQ(h.best_val_loss, 3.0);

  // Best-weight restoration: same run cut off right after the best epoch.
  auto net2 = tiny_net();
  Scripted s2{{5, 4, 3}, 0, val};
  LoopConfig short_loop = loop;
  short_loop.max_epochs = 2;
  run_training(net2, x, fit, val, std::ref(s2), short_loop);
  EXPECT_TRUE(net == net2);
  EXPECT_FALSE(net == tiny_net());
}

TEST(EarlyStopping, RunsToMaxEpochsWhileImproving) {
  Rng rng(2);
  const Matrix x = masktab::testing::random_matrix(8, 2, rng);
  const std::vector<std::size_t> fit{0, 1, 2, 3, 4, 5}, val{6, 7};
  auto net = tiny_net();
  Scripted s{{10, 9, 8, 7, 6, 5, 4}, 0, val};
  const auto h = run_training(net, x, fit, val, std::ref(s), {1e-3, 6, 4, 2, false, 1});
  EXPECT_EQ(h.epochs.size(), 6u);
  EXPECT_EQ(h.best_epoch, 5u);
}

TEST(EarlyStopping, NonFiniteLossIsNumericalError) {
  Rng rng(2);
  const Matrix x = masktab::testing::random_matrix(8, 2, rng);
  const std::vector<std::size_t> fit{0, 1, 2, 3, 4, 5}, val{6, 7};
  auto net = tiny_net();
  Scripted s{{5, NAN}, 0, val};
  EXPECT_THROW(run_training(net, x, fit, val, std::ref(s), {1e-3, 6, 4, 2, false, 1}), NumericalError);
  EXPECT_THROW(run_training(net, x, {}, val, std::ref(s), {}), DataError);
}

TEST(Baseline, LearnsAndIsDeterministic) {
  const auto& d = data();
  const auto cfg = quick_train(4, 40);
  const auto a = train_baseline(d.result.dataset, d.split, cfg);
  EXPECT_LT(a.history.best_val_loss, a.history.initial_val_loss);
  const auto b = train_baseline(d.result.dataset, d.split, cfg);
  EXPECT_TRUE(a.params == b.params);
  const auto c = train_baseline(d.result.dataset, d.split, quick_train(5, 40));
  EXPECT_FALSE(a.params == c.params);
  // Restored weights reproduce the recorded best validation loss.
  EXPECT_NEAR(evaluate_loss(a.params, d.result.dataset, d.split.val_rows).loss, a.history.best_val_loss, 1e-12);
}

TEST(Baseline, TestRowsNeverInfluenceTraining) {
  const auto& d = data();
  auto ds = d.result.dataset;
  const auto cfg = quick_train(4, 10);
  const auto a = train_baseline(ds, d.split, cfg);
  Rng rng(3);
  for (auto r : d.split.test_rows) {
    for (double& v : ds.x.row(r)) v = rng.normal();
    for (std::size_t j = 0; j < ds.n_responses(); ++j) ds.mask(r, j) = 1.0 - ds.mask(r, j);
  }
  const auto b = train_baseline(ds, d.split, cfg);
  EXPECT_TRUE(a.params == b.params);
}

TEST(Baseline, ShuffleIsSeeded) {
  const auto& d = data();
  auto cfg = quick_train(4, 5);
  cfg.shuffle = true;
  const auto a = train_baseline(d.result.dataset, d.split, cfg);
  const auto b = train_baseline(d.result.dataset, d.split, cfg);
  EXPECT_TRUE(a.params == b.params);
  cfg.shuffle = false;
  EXPECT_FALSE(a.params == train_baseline(d.result.dataset, d.split, cfg).params);
}

TEST(Baseline, PredictionsRespectHeadRanges) {
  const auto& d = data();
  const auto m = train_baseline(d.result.dataset, d.split, quick_train(7, 10));
  const auto p = predict(m.params, d.result.dataset.x);
  for (double v : p.concentration.data()) EXPECT_GE(v, 0.0);
  for (double v : p.probability.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Autoencoder, ExcludesTestRowsByDefault) {
  const auto& d = data();
  auto x = d.result.dataset.x;
  const auto cfg = quick_train(4, 8);
  const auto a = pretrain_autoencoder(x, d.split, cfg);
  EXPECT_LT(a.trained_holdout_loss, a.untrained_holdout_loss);
  Rng rng(5);
  for (auto r : d.split.test_rows)
    for (double& v : x.row(r)) v = rng.normal();
  const auto b = pretrain_autoencoder(x, d.split, cfg);
  EXPECT_TRUE(a.encoder == b.encoder);
  auto with_test = cfg;
  with_test.ae.include_test_rows = true;
  EXPECT_FALSE(pretrain_autoencoder(x, d.split, with_test).encoder == b.encoder);
}

TEST(Autoencoder, EncoderShape) {
  const auto& d = data();
  const auto e = pretrain_autoencoder(d.result.dataset.x, d.split, quick_train(4, 3));
  ASSERT_EQ(e.encoder.size(), 3u);
  EXPECT_EQ(e.encoder[0].spec.in_dim, d.result.dataset.n_features());
  EXPECT_EQ(e.encoder[0].spec.out_dim, 32u);
  EXPECT_EQ(e.encoder[2].spec.out_dim, 8u);
  for (const auto& l : e.encoder) EXPECT_EQ(l.spec.activation, nn::Activation::relu);
}

TEST(Finetune, FrozenKeepsEncoderUnfrozenMovesIt) {
  const auto& d = data();
  auto cfg = quick_train(4, 10);
  const auto enc = pretrain_autoencoder(d.result.dataset.x, d.split, cfg);
  cfg.finetune_mode = FinetuneMode::frozen;
  const auto frozen = finetune(enc.encoder, d.result.dataset, d.split, cfg);
  EXPECT_TRUE(frozen.params.backbone == enc.encoder);
  EXPECT_LT(frozen.history.best_val_loss, frozen.history.initial_val_loss);
  cfg.finetune_mode = FinetuneMode::unfrozen;
  const auto unfrozen = finetune(enc.encoder, d.result.dataset, d.split, cfg);
  EXPECT_FALSE(unfrozen.params.backbone == enc.encoder);
  for (const auto& l : frozen.params.backbone) EXPECT_TRUE(l.trainable);  // flags reset after training
}

TEST(Finetune, EncoderWidthChecked) {
  const auto& d = data();
  Rng rng(1);
  std::vector<nn::DenseLayer> enc{nn::make_layer({3, 4, nn::Activation::relu, 0.0}, rng)};
  EXPECT_THROW(finetune(enc, d.result.dataset, d.split, quick_train(1)), DataError);
  EXPECT_THROW(finetune({}, d.result.dataset, d.split, quick_train(1)), ConfigError);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.dropout = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.patience = c.max_epochs + 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.ae.encoder_dims.clear();
  EXPECT_THROW(bad.validate(), ConfigError);

  c.hidden_dims = {7, 5};
  c.loss_weights = {2.0, 0.5};
  c.finetune_mode = FinetuneMode::frozen;
  c.seed = 123456789012345ULL;
  const auto back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
  EXPECT_EQ(back.hidden_dims, c.hidden_dims);
  EXPECT_EQ(back.seed, c.seed);
}

TEST(TrainConfig, HeadDimMustMatchResponses) {
  const auto& d = data();
  auto cfg = quick_train(1, 2);
  cfg.head_dim = 3;
  EXPECT_THROW(train_baseline(d.result.dataset, d.split, cfg), ConfigError);
}
