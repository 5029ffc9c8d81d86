#pragma once

// Independent training of one ensemble member on image-level labels with
// the composite objective  L = L_cls + lambda * L_dropout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "aax/backbone.hpp"
#include "aax/dataset.hpp"
#include "aax/error.hpp"
#include "aax/image.hpp"
#include "aax/rng.hpp"

namespace aax {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int max_epochs = 50;
  int patience = 5;
  double lambda = 0.1;
  int k_train_passes = 5;
  bool class_weighting = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
    if (patience < 1 || patience > max_epochs) {
      throw ConfigError("patience must be in [1, max_epochs]");
    }
    if (!(lambda >= 0)) throw ConfigError("lambda must be nonnegative");
    if (k_train_passes < 2) throw ConfigError("k_train_passes must be >= 2");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},       {"patience", c.patience},
                     {"lambda", c.lambda},               {"k_train_passes", c.k_train_passes},
                     {"class_weighting", c.class_weighting}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.lambda = j.value("lambda", d.lambda);
  c.k_train_passes = j.value("k_train_passes", d.k_train_passes);
  c.class_weighting = j.value("class_weighting", d.class_weighting);
}

inline std::string config_hash(const TrainConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(nlohmann::json(c).dump())));
  return buf;
}

struct TrainReport {
  int epochs_run = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;
  int best_epoch = 0;  // 1-based
  bool stopped_early = false;
  TrainConfig config;
};

inline void to_json(nlohmann::json& j, const TrainReport& r) {
  j = nlohmann::json{{"v", 1},
                     {"epochs_run", r.epochs_run},
                     {"train_loss", r.train_loss},
                     {"val_loss", r.val_loss},
                     {"val_accuracy", r.val_accuracy},
                     {"best_epoch", r.best_epoch},
                     {"stopped_early", r.stopped_early},
                     {"config", r.config}};
}

// --- composite loss ------------------------------------------------------

namespace detail {

inline void check_loss_inputs(std::span<const std::vector<double>> passes, int label,
                              double lambda) {
  if (passes.empty()) throw InputError("composite_loss: empty pass list");
  if (!(lambda >= 0)) throw InputError("composite_loss: lambda must be nonnegative");
  if (lambda > 0 && passes.size() < 2) {
    throw InputError("composite_loss: lambda > 0 needs at least 2 stochastic passes");
  }
  for (const auto& p : passes) {
    if (label < 0 || label >= static_cast<int>(p.size())) {
      throw InputError("composite_loss: label " + std::to_string(label) + " out of range");
    }
  }
}

inline constexpr double kProbFloor = 1e-12;

}  // namespace detail

// Cross-entropy of the mean probability vector against label, plus lambda
// times the population variance of the label-class probability across
// passes. class_weight scales the cross-entropy term.
inline double composite_loss(std::span<const std::vector<double>> probs_per_pass, int label,
                             double lambda, double class_weight = 1.0) {
  detail::check_loss_inputs(probs_per_pass, label, lambda);
  const double k = static_cast<double>(probs_per_pass.size());
  double mean = 0.0;
  for (const auto& p : probs_per_pass) mean += p[label];
  mean /= k;
  double var = 0.0;
  for (const auto& p : probs_per_pass) var += (p[label] - mean) * (p[label] - mean);
  var /= k;
  return class_weight * -std::log(std::max(mean, detail::kProbFloor)) + lambda * var;
}

// d composite_loss / d p_k[label] for every pass k.
inline std::vector<double> composite_loss_grad(std::span<const std::vector<double>> probs_per_pass,
                                               int label, double lambda,
                                               double class_weight = 1.0) {
  detail::check_loss_inputs(probs_per_pass, label, lambda);
  const double k = static_cast<double>(probs_per_pass.size());
  double mean = 0.0;
  for (const auto& p : probs_per_pass) mean += p[label];
  mean /= k;
  std::vector<double> g;
  g.reserve(probs_per_pass.size());
  const double ce = mean > detail::kProbFloor ? -class_weight / (mean * k) : 0.0;
  for (const auto& p : probs_per_pass) g.push_back(ce + lambda * 2.0 / k * (p[label] - mean));
  return g;
}

// --- early stopping -------------------------------------------------------

// Tracks the best (strictly lowest) validation loss; stop once `patience`
// consecutive epochs fail to improve on it.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  // Returns true when this epoch is the new best.
  bool observe(double val_loss) {
    ++epoch_;
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const noexcept { return stale_ >= patience_; }
  int best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_loss_; }
  int epoch() const noexcept { return epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int stale_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

// --- optimizer -------------------------------------------------------------

class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1 - b1_) * grads[i];
      v_[i] = b2_ * v_[i] + (1 - b2_) * grads[i] * grads[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

// --- training loop ---------------------------------------------------------

struct LabeledTensor {
  Tensor input;
  int label = 0;
};

// Loads and preprocesses images from training records only.
inline std::vector<LabeledTensor> load_training_tensors(const std::vector<TrainingRecord>& recs,
                                                        const BackboneSpec& spec) {
  std::vector<LabeledTensor> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back({preprocess(read_png(r.path).pixels, spec), r.label});
  return out;
}

// One sample: K stochastic passes sharing the deterministic trunk, composite
// loss, and gradient accumulation into param_grads (scaled by `scale`).
inline double accumulate_sample_gradient(const nn::Network& net, const Tensor& input, int label,
                                         const TrainConfig& cfg, double class_weight,
                                         std::uint64_t seed, nn::Workspace& ws,
                                         std::span<double> param_grads, double scale) {
  const std::size_t split = net.first_stochastic();
  const int out = net.output();
  const int k = cfg.k_train_passes;
  std::vector<std::vector<double>> probs;
  probs.reserve(k);
  for (int pass = 0; pass < k; ++pass) {
    net.forward(input, ws, {true, derive_seed(seed, pass)}, pass == 0 ? 0 : split);
    probs.push_back(nn::softmax(ws.values[out].values()));
  }
  const double loss = composite_loss(probs, label, cfg.lambda, class_weight);
  const auto dp = composite_loss_grad(probs, label, cfg.lambda, class_weight);

  ws.clear_grads();
  for (int pass = 0; pass < k; ++pass) {
    if (k > 1) net.forward(input, ws, {true, derive_seed(seed, pass)}, split);
    ws.clear_grads(split);
    // softmax Jacobian: dL/dz_i = dL/dp_y * p_y * (delta_iy - p_i)
    const auto& p = probs[pass];
    Tensor& gz = ws.grad(out, net.node(out).out);
    for (std::size_t i = 0; i < p.size(); ++i) {
      gz[i] += scale * dp[pass] * p[label] * ((static_cast<int>(i) == label ? 1.0 : 0.0) - p[i]);
    }
    net.backward(ws, split, net.size(), param_grads);
  }
  net.backward(ws, 0, std::min(split, net.size()), param_grads);
  return loss;
}

// Deterministic (dropout inactive) cross-entropy and accuracy.
inline std::pair<double, double> evaluate_loss(const nn::Network& net,
                                               const std::vector<LabeledTensor>& data) {
  nn::Workspace ws;
  double loss = 0.0;
  int correct = 0;
  for (const auto& s : data) {
    net.forward(s.input, ws, {false, 0});
    const auto p = nn::softmax(ws.values[net.output()].values());
    loss += -std::log(std::max(p[s.label], detail::kProbFloor));
    const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    correct += pred == s.label;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, data.size()));
  return {loss / n, correct / n};
}

inline std::vector<double> inverse_frequency_weights(const std::vector<TrainingRecord>& recs,
                                                     int num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  for (const auto& r : recs) counts[r.label] += 1.0;
  std::vector<double> w(num_classes, 1.0);
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] > 0) w[c] = static_cast<double>(recs.size()) / (num_classes * counts[c]);
  }
  return w;
}

// Adam over shuffled mini-batches; validation loss is the deterministic
// cross-entropy on val_set. Returns the weights of the epoch with the lowest
// validation loss.
inline std::pair<Backbone, TrainReport> train_model(Backbone backbone,
                                                    const std::vector<TrainingRecord>& train_set,
                                                    const std::vector<TrainingRecord>& val_set,
                                                    const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw ConfigError("training needs non-empty datasets");
  const int classes = backbone.num_classes();
  std::vector<int> per_class(classes, 0);
  for (const auto& r : train_set) {
    if (r.label < 0 || r.label >= classes) throw InputError("training label out of range");
    ++per_class[r.label];
  }
  if (std::count_if(per_class.begin(), per_class.end(), [](int n) { return n > 0; }) < 2) {
    throw ConfigError("training set contains a single class");
  }
  const auto weights = config.class_weighting ? inverse_frequency_weights(train_set, classes)
                                              : std::vector<double>(classes, 1.0);

  const auto train = load_training_tensors(train_set, backbone.spec());
  const auto val = load_training_tensors(val_set, backbone.spec());

  nn::Network& net = backbone.network();
  Adam adam(net.parameters().size(), config.learning_rate, config.adam_beta1, config.adam_beta2,
            config.adam_eps);
  std::vector<double> grads(net.parameters().size());
  std::vector<double> best(net.parameters().begin(), net.parameters().end());
  EarlyStopping stopper(config.patience);
  TrainReport report;
  report.config = config;
  nn::Workspace ws;

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng(derive_seed(seed, 0x5eed, epoch)).shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grads.begin(), grads.end(), 0.0);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = train[order[b]];
        epoch_loss += accumulate_sample_gradient(net, s.input, s.label, config, weights[s.label],
                                                 derive_seed(seed, epoch, order[b]), ws, grads,
                                                 scale);
      }
      adam.step(net.parameters(), grads);
    }
    epoch_loss /= static_cast<double>(train.size());
    const auto [val_loss, val_acc] = evaluate_loss(net, val);
    if (!std::isfinite(epoch_loss) || !std::isfinite(val_loss)) {
      throw TrainingError("non-finite loss", epoch);
    }
    report.train_loss.push_back(epoch_loss);
    report.val_loss.push_back(val_loss);
    report.val_accuracy.push_back(val_acc);
    report.epochs_run = epoch;
    if (stopper.observe(val_loss)) {
      best.assign(net.parameters().begin(), net.parameters().end());
    }
    if (stopper.should_stop() && epoch < config.max_epochs) {
      report.stopped_early = true;
      break;
    }
  }
  std::copy(best.begin(), best.end(), net.parameters().begin());
  report.best_epoch = stopper.best_epoch();
  return {std::move(backbone), std::move(report)};
}

inline std::pair<Backbone, TrainReport> train_model(Backbone backbone,
                                                    const DatasetManifest& train_set,
                                                    const DatasetManifest& val_set,
                                                    const TrainConfig& config, std::uint64_t seed) {
  return train_model(std::move(backbone), training_records(train_set), training_records(val_set),
                     config, seed);
}

}  // namespace aax
