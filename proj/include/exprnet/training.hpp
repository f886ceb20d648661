#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "exprnet/evaluation.hpp"

namespace exprnet {

struct TrainConfig {
  double learning_rate = 3e-3;
  std::int64_t batch_size = 256;
  std::int64_t epochs = 75;
  std::int64_t lr_step_epochs = 15;
  double lr_gamma = 0.1;
  double weight_decay = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 15;  // epochs; 0 disables periodic checkpoints

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be non-negative");
    if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
    if (lr_step_epochs < 1) throw ConfigError("train.lr_step_epochs must be at least 1");
    if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw ConfigError("train.lr_gamma must lie in (0,1]");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("train.beta1 and train.beta2 must lie in [0,1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
  }
};

/// Step schedule: learning_rate * lr_gamma^floor(epoch / lr_step_epochs),
/// with 0-based epochs.
inline double lr_at_epoch(const TrainConfig& config, std::int64_t epoch) {
  if (epoch < 0) throw ValueError("lr_at_epoch: epoch must be non-negative");
  const std::int64_t decays = epoch / config.lr_step_epochs;
  if (decays == 0) return config.learning_rate;
  const double raw = config.learning_rate * std::pow(config.lr_gamma, static_cast<double>(decays));
  // 3e-3 * 0.1 is 3.0000000000000003e-4 in binary64; snapping to 15
  // significant digits lands on the double nearest the decimal value.
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", raw);
  return std::strtod(buf, nullptr);
}

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;

  bool empty() const { return m.empty(); }
};

/// Adam with coupled L2 decay, per element:
///   g = grad + weight_decay * theta
///   m = beta1 m + (1 - beta1) g,  v = beta2 v + (1 - beta2) g^2
///   theta -= lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + epsilon)
template <typename T>
void adam_step(std::vector<Parameter<T>>& params, OptimizerState<T>& state, double lr, const TrainConfig& config) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw ValueError("adam_step: parameter '" + p.name + "' has no gradient");
  }
  if (state.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), T{0});
      state.v.emplace_back(p.tensor.numel(), T{0});
    }
  }
  if (state.m.size() != params.size()) throw ValueError("adam_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor.numel()) {
      throw ValueError("adam_step: optimizer state for '" + params[i].name + "' has the wrong size");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double b1 = config.beta1, b2 = config.beta2, wd = config.weight_decay;
  const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].tensor.mutable_data();
    auto grad = params[i].tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = static_cast<double>(grad[j]) + wd * static_cast<double>(theta[j]);
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      theta[j] = static_cast<T>(theta[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + config.epsilon));
    }
  }
}

/// Adds the optimizer moments under the reserved "optim." namespace.
template <typename T>
void append_optimizer_state(Checkpoint& ckpt, const std::vector<Parameter<T>>& params, const OptimizerState<T>& state) {
  if (state.empty()) return;
  ckpt.metadata["optim.step"] = std::to_string(state.step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params[i].tensor.shape();
    ckpt.tensors.push_back(CheckpointTensor::from("optim.m." + params[i].name, Tensor<T>(shape, state.m[i])));
    ckpt.tensors.push_back(CheckpointTensor::from("optim.v." + params[i].name, Tensor<T>(shape, state.v[i])));
  }
}

template <typename T>
OptimizerState<T> read_optimizer_state(const Checkpoint& ckpt, const std::vector<Parameter<T>>& params) {
  OptimizerState<T> state;
  const auto it = ckpt.metadata.find("optim.step");
  if (it == ckpt.metadata.end()) return state;
  state.step = parse_int(it->second, "optim.step");
  for (const auto& p : params) {
    for (auto [prefix, dst] : {std::pair{"optim.m.", &state.m}, std::pair{"optim.v.", &state.v}}) {
      const CheckpointTensor* t = ckpt.find(prefix + p.name);
      if (!t || t->shape != p.tensor.shape()) {
        throw CheckpointError("optimizer state for '" + p.name + "' is missing or mis-shaped");
      }
      dst->push_back(t->values<T>());
    }
  }
  return state;
}

struct EpochStats {
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  std::size_t batches = 0;
  std::size_t samples = 0;
};

/// Visiting order of manifest rows for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t rows, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, fnv1a("epoch"), static_cast<std::uint64_t>(epoch)));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

/// One pass over `manifest` in seeded order, batches of batch_size with the
/// final partial batch kept; one optimizer step per batch.
template <typename T>
EpochStats train_epoch(ResNet18<T>& model, const Manifest& manifest, const ImageSource<T>& source,
                       const std::array<double, kNumExpressions>& class_weights, const TrainConfig& config,
                       const AugmentConfig& augment, std::int64_t epoch, OptimizerState<T>& state) {
  if (manifest.empty()) throw DataError("cannot train on an empty manifest");
  config.validate();
  if (model.config().num_classes != kNumExpressions) {
    throw ConfigError("training needs a " + std::to_string(kNumExpressions) + "-class model, got " +
                      std::to_string(model.config().num_classes));
  }
  Tensor<T> weights({static_cast<std::size_t>(kNumExpressions)});
  for (std::size_t c = 0; c < class_weights.size(); ++c) weights.mutable_data()[c] = static_cast<T>(class_weights[c]);

  const double lr = lr_at_epoch(config, epoch);
  const auto order = epoch_order(manifest.size(), config.seed, epoch);
  auto params = model.parameters();
  const auto batch = static_cast<std::size_t>(config.batch_size);

  EpochStats stats;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t n = std::min(batch, order.size() - start);
    const std::span<const std::size_t> rows(order.data() + start, n);
    std::vector<SampleDraws> draws;
    std::vector<int> labels;
    for (std::size_t r : rows) {
      draws.push_back(SampleDraws::for_sample(augment.seed, static_cast<std::uint64_t>(epoch), r));
      labels.push_back(manifest[r].label);
    }
    const Tensor<T> inputs = assemble_batch(source, manifest, rows, augment, &draws);

    model.clear_grads();
    const Tensor<T> logits = model.forward(inputs, Mode::train);
    const Tensor<T> loss = weighted_cross_entropy(logits, labels, weights);
    backward(loss);
    adam_step(params, state, lr, config);

    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(n);
    const auto preds = argmax_rows(logits);
    for (std::size_t i = 0; i < n; ++i) correct += preds[i] == labels[i] ? 1 : 0;
    ++stats.batches;
  }
  model.clear_grads();
  stats.samples = order.size();
  stats.mean_loss = loss_sum / static_cast<double>(order.size());
  stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
  return stats;
}

struct HistoryRow {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  double val_score = 0.0;
};

inline constexpr std::string_view kHistoryHeader = "epoch,lr,train_loss,val_accuracy,val_macro_f1,val_score";

inline std::string format_history(const std::vector<HistoryRow>& rows) {
  std::string out(kHistoryHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + ',' + format_double(r.lr) + ',' + format_double(r.train_loss) + ',' +
           format_double(r.val_accuracy) + ',' + format_double(r.val_macro_f1) + ',' + format_double(r.val_score) + '\n';
  }
  return out;
}

struct FitOptions {
  std::optional<std::filesystem::path> out_dir;
  std::map<std::string, std::string> metadata;
  std::function<void(const HistoryRow&, const EpochStats&)> on_epoch;
};

template <typename T>
struct FitResult {
  std::vector<HistoryRow> history;
  double best_score = -1.0;
  std::int64_t best_epoch = -1;
  OptimizerState<T> optimizer;
};

/// Full training run. With an output directory it writes initial.expr1,
/// checkpoint_epoch_NNN.expr1 every checkpoint_every epochs, best.expr1
/// whenever the validation score improves, final.expr1 and history.csv.
template <typename T>
FitResult<T> fit(ResNet18<T>& model, const Manifest& train, const Manifest& val, const ImageSource<T>& source,
                 const TrainConfig& config, const AugmentConfig& augment, const FitOptions& options = {}) {
  config.validate();
  if (train.empty() || val.empty()) throw DataError("fit needs non-empty train and validation manifests");
  const auto weights = compute_class_weights(ClassDistribution::of(train));

  FitResult<T> result;
  auto save = [&](const std::string& file, std::map<std::string, std::string> extra, bool with_optimizer) {
    if (!options.out_dir) return;
    auto meta = options.metadata;
    for (auto& [k, v] : extra) meta[k] = v;
    Checkpoint ckpt = to_checkpoint(model, std::move(meta));
    if (with_optimizer) append_optimizer_state(ckpt, model.parameters(), result.optimizer);
    write_checkpoint(ckpt, *options.out_dir / file);
  };
  auto write_history = [&] {
    if (options.out_dir) write_text_file(*options.out_dir / "history.csv", format_history(result.history));
  };

  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);
  save("initial.expr1", {{"epoch", "-1"}}, false);
  write_history();

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    const EpochStats stats = train_epoch(model, train, source, weights, config, augment, epoch, result.optimizer);
    const Evaluation eval = evaluate(model, val, source, augment, static_cast<std::size_t>(config.batch_size));
    const HistoryRow row{epoch, lr_at_epoch(config, epoch), stats.mean_loss, eval.report.accuracy,
                         eval.report.macro_f1, eval.report.score};
    result.history.push_back(row);
    write_history();
    if (options.on_epoch) options.on_epoch(row, stats);

    if (eval.report.score > result.best_score) {
      result.best_score = eval.report.score;
      result.best_epoch = epoch;
      save("best.expr1", {{"epoch", std::to_string(epoch)}, {"val_score", format_double(eval.report.score)}}, false);
    }
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%03lld.expr1", static_cast<long long>(epoch));
      save(name, {{"epoch", std::to_string(epoch)}, {"val_score", format_double(eval.report.score)}}, true);
    }
  }
  if (config.epochs > 0) {
    save("final.expr1",
         {{"epoch", std::to_string(config.epochs - 1)},
          {"best_epoch", std::to_string(result.best_epoch)},
          {"best_val_score", format_double(result.best_score)}},
         true);
  }
  return result;
}

}  // namespace exprnet
