#pragma once

// Training protocols: the baseline two-head network, autoencoder
// pre-training, and frozen/unfrozen fine-tuning of the pre-trained encoder.
// Every protocol trains on the split's fit rows (train minus validation),
// evaluates the full validation set after each epoch, stops after `patience`
// epochs without a strict improvement, and restores the best weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "masktab/data_model.hpp"
#include "masktab/error.hpp"
#include "masktab/masked_loss.hpp"
#include "masktab/nn.hpp"
#include "masktab/rng.hpp"

namespace masktab {

inline constexpr const char* kRegressionHead = "regression";
inline constexpr const char* kClassificationHead = "classification";
inline constexpr const char* kReconstructionHead = "reconstruction";

enum class FinetuneMode { frozen, unfrozen };

struct AutoencoderConfig {
  std::vector<std::size_t> encoder_dims{512, 256, 128};
  double dropout = 0.2;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  bool include_test_rows = false;
};

struct TrainConfig {
  std::vector<std::size_t> hidden_dims{128, 64};
  double dropout = 0.2;
  std::optional<std::size_t> head_dim;  // defaults to the dataset's response count
  double learning_rate = 1e-3;
  std::size_t max_epochs = 500;
  std::size_t batch_size = 32;
  std::size_t patience = 25;
  bool shuffle = false;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  AutoencoderConfig ae;
  FinetuneMode finetune_mode = FinetuneMode::unfrozen;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw ConfigError(std::string("train config: ") + name + " must be >= 1");
    };
    positive(max_epochs, "max_epochs");
    positive(batch_size, "batch_size");
    positive(ae.max_epochs, "ae.max_epochs");
    for (auto d : hidden_dims) positive(d, "hidden_dims");
    for (auto d : ae.encoder_dims) positive(d, "ae.encoder_dims");
    if (ae.encoder_dims.empty()) throw ConfigError("train config: ae.encoder_dims is empty");
    if (!(dropout >= 0.0 && dropout < 1.0) || !(ae.dropout >= 0.0 && ae.dropout < 1.0))
      throw ConfigError("train config: dropout must lie in [0, 1)");
    if (patience > max_epochs || ae.patience > ae.max_epochs)
      throw ConfigError("train config: patience exceeds max_epochs");
    if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
    if (head_dim && *head_dim < 1) throw ConfigError("train config: head_dim must be >= 1");
  }
};

inline const char* to_string(FinetuneMode m) { return m == FinetuneMode::frozen ? "frozen" : "unfrozen"; }

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j{{"hidden_dims", c.hidden_dims},
                   {"dropout", c.dropout},
                   {"learning_rate", c.learning_rate},
                   {"max_epochs", c.max_epochs},
                   {"batch_size", c.batch_size},
                   {"patience", c.patience},
                   {"shuffle", c.shuffle},
                   {"loss_weights", {c.loss_weights.regression, c.loss_weights.classification}},
                   {"seed", c.seed},
                   {"ae",
                    {{"encoder_dims", c.ae.encoder_dims},
                     {"dropout", c.ae.dropout},
                     {"max_epochs", c.ae.max_epochs},
                     {"patience", c.ae.patience},
                     {"include_test_rows", c.ae.include_test_rows}}},
                   {"finetune_mode", to_string(c.finetune_mode)}};
  j["head_dim"] = c.head_dim ? nlohmann::json(*c.head_dim) : nlohmann::json(nullptr);
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    auto get = [](const nlohmann::json& o, const char* key, auto& field) {
      if (o.contains(key)) o.at(key).get_to(field);
    };
    get(j, "hidden_dims", c.hidden_dims);
    get(j, "dropout", c.dropout);
    get(j, "learning_rate", c.learning_rate);
    get(j, "max_epochs", c.max_epochs);
    get(j, "batch_size", c.batch_size);
    get(j, "patience", c.patience);
    get(j, "shuffle", c.shuffle);
    get(j, "seed", c.seed);
    if (j.contains("head_dim") && !j.at("head_dim").is_null()) c.head_dim = j.at("head_dim").get<std::size_t>();
    if (j.contains("loss_weights")) {
      const auto w = j.at("loss_weights").get<std::vector<double>>();
      if (w.size() != 2) throw ConfigError("train config: loss_weights needs two entries");
      c.loss_weights = {w[0], w[1]};
    }
    if (j.contains("ae")) {
      const auto& a = j.at("ae");
      get(a, "encoder_dims", c.ae.encoder_dims);
      get(a, "dropout", c.ae.dropout);
      get(a, "max_epochs", c.ae.max_epochs);
      get(a, "patience", c.ae.patience);
      get(a, "include_test_rows", c.ae.include_test_rows);
    }
    if (j.contains("finetune_mode")) {
      const auto m = j.at("finetune_mode").get<std::string>();
      if (m == "frozen") c.finetune_mode = FinetuneMode::frozen;
      else if (m == "unfrozen") c.finetune_mode = FinetuneMode::unfrozen;
      else throw ConfigError("train config: finetune_mode must be frozen or unfrozen");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

struct EpochRecord {
  double train_loss = 0.0;
  double train_regression = 0.0;
  double train_classification = 0.0;
  double val_loss = 0.0;
  double val_regression = 0.0;
  double val_classification = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;  // epoch e = after e+1 passes over the fit rows
  double initial_val_loss = 0.0;    // before any update
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
  double best_val_loss = 0.0;
};

inline nlohmann::json history_to_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"train_loss", e.train_loss},
                      {"train_regression", e.train_regression},
                      {"train_classification", e.train_classification},
                      {"val_loss", e.val_loss},
                      {"val_regression", e.val_regression},
                      {"val_classification", e.val_classification}});
  return {{"initial_val_loss", h.initial_val_loss},
          {"best_epoch", h.best_epoch},
          {"stopped_epoch", h.stopped_epoch},
          {"best_val_loss", h.best_val_loss},
          {"epochs", epochs}};
}

struct TrainedModel {
  nn::NetworkParams params;
  TrainHistory history;
};

/// Loss over a set of rows given all head outputs for those rows.
struct BatchLoss {
  double loss = 0.0;
  double regression = 0.0;
  double classification = 0.0;
  std::vector<Matrix> head_grads;
};

struct LoopConfig {
  double learning_rate = 1e-3;
  std::size_t max_epochs = 500;
  std::size_t batch_size = 32;
  std::size_t patience = 25;
  bool shuffle = false;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& rows,
                                                          std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < rows.size(); s += batch_size)
    out.emplace_back(rows.begin() + static_cast<std::ptrdiff_t>(s),
                     rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), s + batch_size)));
  return out;
}

}  // namespace detail

/// Mini-batch Adam with early stopping and best-weight restoration.
/// `loss_fn(outputs, rows)` evaluates the objective for the given dataset rows.
template <typename LossFn>
TrainHistory run_training(nn::NetworkParams& params, const Matrix& x, const std::vector<std::size_t>& fit_rows,
                          const std::vector<std::size_t>& val_rows, LossFn&& loss_fn, const LoopConfig& cfg) {
  if (fit_rows.empty()) throw DataError("training: no fit rows");
  if (val_rows.empty()) throw DataError("training: empty validation set");
  const Matrix x_val = x.select_rows(val_rows);
  auto validation = [&](const nn::NetworkParams& p) {
    auto res = nn::forward(p, x_val, nn::Mode::infer, nullptr, false);
    return loss_fn(res.head_outputs, val_rows);
  };

  TrainHistory h;
  h.initial_val_loss = validation(params).loss;
  if (!std::isfinite(h.initial_val_loss)) throw NumericalError("training: non-finite initial validation loss");

  auto batches = detail::make_batches(fit_rows, cfg.batch_size);
  std::vector<Matrix> batch_x;
  for (const auto& b : batches) batch_x.push_back(x.select_rows(b));
  std::vector<std::size_t> order(batches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  Rng shuffle_rng(derive_seed(cfg.seed, "batch_order"));
  auto adam = nn::AdamState::for_network(params, {cfg.learning_rate});
  nn::NetworkParams best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t wait = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    if (cfg.shuffle) shuffle_rng.shuffle(order);
    EpochRecord rec;
    double seen = 0.0;
    for (auto b : order) {
      auto fwd = nn::forward(params, batch_x[b], nn::Mode::train, &dropout_rng);
      auto bl = loss_fn(fwd.head_outputs, batches[b]);
      if (!std::isfinite(bl.loss))
        throw NumericalError("training: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at row " +
                             std::to_string(batches[b].front()));
      const double w = static_cast<double>(batches[b].size());
      rec.train_loss += w * bl.loss;
      rec.train_regression += w * bl.regression;
      rec.train_classification += w * bl.classification;
      seen += w;
      auto grads = nn::backward(params, fwd.cache, bl.head_grads);
      nn::adam_step(params, grads, adam);
    }
    rec.train_loss /= seen;
    rec.train_regression /= seen;
    rec.train_classification /= seen;

    const auto val = validation(params);
    if (!std::isfinite(val.loss))
      throw NumericalError("training: non-finite validation loss at epoch " + std::to_string(epoch));
    rec.val_loss = val.loss;
    rec.val_regression = val.regression;
    rec.val_classification = val.classification;
    h.epochs.push_back(rec);
    h.stopped_epoch = epoch;

    if (val.loss < best_loss) {
      best_loss = val.loss;
      h.best_epoch = epoch;
      best = params;
      wait = 0;
    } else if (++wait >= cfg.patience) {
      break;
    }
  }
  params = std::move(best);
  h.best_val_loss = best_loss;
  return h;
}

/// Supervised two-head objective on the dataset's masked responses.
inline auto supervised_loss(const TabularDataset& ds, const nn::NetworkParams& shape, LossWeights w) {
  const std::size_t reg = shape.head_index(kRegressionHead);
  const std::size_t cls = shape.head_index(kClassificationHead);
  return [&ds, reg, cls, w, n_heads = shape.heads.size()](const std::vector<Matrix>& outputs,
                                                          const std::vector<std::size_t>& rows) {
    const Matrix yc = ds.y_cont.select_rows(rows);
    const Matrix yb = ds.y_bin.select_rows(rows);
    const Matrix m = ds.mask.select_rows(rows);
    auto c = combined_loss({yc, outputs[reg], m}, {yb, outputs[cls], m}, w);
    BatchLoss out{c.loss, c.regression_loss, c.classification_loss, std::vector<Matrix>(n_heads)};
    out.head_grads[reg] = std::move(c.regression_grad);
    out.head_grads[cls] = std::move(c.classification_grad);
    return out;
  };
}

inline LoopConfig supervised_loop(const TrainConfig& cfg, const char* stream) {
  return {cfg.learning_rate, cfg.max_epochs, cfg.batch_size, cfg.patience, cfg.shuffle,
          derive_seed(cfg.seed, stream)};
}

inline std::size_t resolve_head_dim(const TabularDataset& ds, const TrainConfig& cfg) {
  const std::size_t k = ds.n_responses();
  if (cfg.head_dim && *cfg.head_dim != k)
    throw ConfigError("train config: head_dim " + std::to_string(*cfg.head_dim) + " but dataset has " +
                      std::to_string(k) + " responses");
  return k;
}

inline std::vector<nn::HeadSpec> supervised_heads(std::size_t in_dim, std::size_t k) {
  return {{kRegressionHead, {{in_dim, k, nn::Activation::relu, 0.0}}},
          {kClassificationHead, {{in_dim, k, nn::Activation::sigmoid, 0.0}}}};
}

/// Baseline: input -> hidden layers (relu + dropout) -> regression (relu) and
/// classification (sigmoid) heads trained jointly on the combined masked loss.
inline TrainedModel train_baseline(const TabularDataset& ds, const SplitAssignment& split, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t k = resolve_head_dim(ds, cfg);
  std::vector<nn::LayerSpec> backbone;
  std::size_t in = ds.n_features();
  for (auto d : cfg.hidden_dims) {
    backbone.push_back({in, d, nn::Activation::relu, cfg.dropout});
    in = d;
  }
  Rng init(derive_seed(cfg.seed, "baseline_init"));
  TrainedModel m{nn::make_network(backbone, supervised_heads(in, k), init), {}};
  m.history = run_training(m.params, ds.x, split.fit_rows(), split.val_rows,
                           supervised_loss(ds, m.params, cfg.loss_weights), supervised_loop(cfg, "baseline_train"));
  return m;
}

struct PretrainedEncoder {
  std::vector<nn::DenseLayer> encoder;
  TrainHistory history;
  double untrained_holdout_loss = 0.0;
  double trained_holdout_loss = 0.0;
};

/// Symmetric autoencoder trained with plain MSE reconstruction; only the
/// encoder is returned. Fit/holdout rows come from the split (test rows are
/// added to the fit rows only when ae.include_test_rows is set).
inline PretrainedEncoder pretrain_autoencoder(const Matrix& x, const SplitAssignment& split, const TrainConfig& cfg) {
  cfg.validate();
  const auto& ae = cfg.ae;
  const std::size_t p = x.cols();
  std::vector<nn::LayerSpec> encoder;
  std::size_t in = p;
  for (auto d : ae.encoder_dims) {
    encoder.push_back({in, d, nn::Activation::relu, ae.dropout});
    in = d;
  }
  std::vector<nn::LayerSpec> decoder;
  for (std::size_t i = ae.encoder_dims.size() - 1; i-- > 0;) {
    decoder.push_back({in, ae.encoder_dims[i], nn::Activation::relu, ae.dropout});
    in = ae.encoder_dims[i];
  }
  decoder.push_back({in, p, nn::Activation::linear, 0.0});

  Rng init(derive_seed(cfg.seed, "ae_init"));
  auto net = nn::make_network(encoder, {{kReconstructionHead, decoder}}, init);

  auto fit = split.fit_rows();
  if (ae.include_test_rows) {
    fit.insert(fit.end(), split.test_rows.begin(), split.test_rows.end());
    std::sort(fit.begin(), fit.end());
  }
  auto loss_fn = [&x](const std::vector<Matrix>& outputs, const std::vector<std::size_t>& rows) {
    const Matrix target = x.select_rows(rows);
    const Matrix mask(rows.size(), target.cols(), 1.0);
    auto r = masked_mse({target, outputs[0], mask, 0.0});
    return BatchLoss{r.loss, r.loss, 0.0, {std::move(r.grad)}};
  };
  const LoopConfig loop{cfg.learning_rate, ae.max_epochs, cfg.batch_size, ae.patience, cfg.shuffle,
                        derive_seed(cfg.seed, "ae_train")};

  PretrainedEncoder out;
  out.history = run_training(net, x, fit, split.val_rows, loss_fn, loop);
  out.untrained_holdout_loss = out.history.initial_val_loss;
  out.trained_holdout_loss = out.history.best_val_loss;
  out.encoder = std::move(net.backbone);
  return out;
}

/// Attaches fresh regression/classification heads to a pre-trained encoder.
/// Frozen mode trains the heads only; unfrozen trains everything.
inline TrainedModel finetune(const std::vector<nn::DenseLayer>& encoder, const TabularDataset& ds,
                             const SplitAssignment& split, const TrainConfig& cfg) {
  cfg.validate();
  if (encoder.empty()) throw ConfigError("finetune: empty encoder");
  if (encoder.front().spec.in_dim != ds.n_features())
    throw DataError("finetune: encoder expects " + std::to_string(encoder.front().spec.in_dim) +
                    " inputs, dataset has " + std::to_string(ds.n_features()));
  const std::size_t k = resolve_head_dim(ds, cfg);
  Rng init(derive_seed(cfg.seed, "finetune_init"));
  TrainedModel m;
  m.params = nn::make_network({}, supervised_heads(encoder.back().spec.out_dim, k), init);
  m.params.backbone = encoder;
  m.params.set_backbone_trainable(cfg.finetune_mode == FinetuneMode::unfrozen);
  m.history = run_training(m.params, ds.x, split.fit_rows(), split.val_rows,
                           supervised_loss(ds, m.params, cfg.loss_weights), supervised_loop(cfg, "finetune_train"));
  m.params.set_backbone_trainable(true);
  return m;
}

struct Prediction {
  Matrix concentration;  // log(x+1) scale, >= 0
  Matrix probability;    // in (0, 1)
};

/// Deterministic, dropout-free inference.
inline Prediction predict(const nn::NetworkParams& params, const Matrix& x) {
  auto res = nn::forward(params, x, nn::Mode::infer, nullptr, false);
  return {std::move(res.head_outputs.at(params.head_index(kRegressionHead))),
          std::move(res.head_outputs.at(params.head_index(kClassificationHead)))};
}

/// Combined masked loss of a trained model on the given rows.
inline CombinedLoss evaluate_loss(const nn::NetworkParams& params, const TabularDataset& ds,
                                  const std::vector<std::size_t>& rows, LossWeights w = {}) {
  if (rows.empty()) throw DataError("evaluate_loss: empty row set");
  const auto pred = predict(params, ds.x.select_rows(rows));
  const Matrix yc = ds.y_cont.select_rows(rows), yb = ds.y_bin.select_rows(rows), m = ds.mask.select_rows(rows);
  return combined_loss({yc, pred.concentration, m}, {yb, pred.probability, m}, w);
}

}  // namespace masktab
