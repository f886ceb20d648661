#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "exprnet/checkpoint.hpp"
#include "exprnet/ops.hpp"
#include "exprnet/random.hpp"
#include "exprnet/ratio.hpp"

namespace exprnet {

struct ModelConfig {
  int num_classes = 7;
  int input_channels = 3;
  int input_size = 224;
  Ratio width_multiplier{1};
  double batchnorm_momentum = 0.1;
  double batchnorm_epsilon = 1e-5;

  static constexpr std::array<std::size_t, 4> kStageWidths{64, 128, 256, 512};

  void validate() const {
    if (num_classes < 2) throw ConfigError("model.num_classes must be at least 2");
    if (input_channels < 1) throw ConfigError("model.input_channels must be positive");
    if (input_size < 32) throw ConfigError("model.input_size must be at least 32");
    if (!width_multiplier.positive()) throw ConfigError("model.width_multiplier must be positive");
    for (std::size_t w : kStageWidths) {
      if (!width_multiplier.divides_evenly(static_cast<std::int64_t>(w))) {
        throw ConfigError("model.width_multiplier " + width_multiplier.to_string() +
                          " does not give an integer channel count for width " + std::to_string(w));
      }
    }
    if (!(batchnorm_epsilon > 0.0)) throw ConfigError("model.batchnorm_epsilon must be positive");
    if (!(batchnorm_momentum >= 0.0 && batchnorm_momentum <= 1.0)) {
      throw ConfigError("model.batchnorm_momentum must lie in [0,1]");
    }
  }

  std::size_t width(std::size_t base) const {
    return static_cast<std::size_t>(static_cast<std::int64_t>(base) * width_multiplier.num / width_multiplier.den);
  }
};

template <typename T>
struct ConvLayer {
  Tensor<T> weight;
  std::size_t stride = 1;
  std::size_t padding = 0;

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, Tensor<T>{}, stride, padding); }
};

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma, beta, running_mean, running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) const {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, mode, momentum, epsilon);
  }
};

template <typename T>
struct BasicBlock {
  ConvLayer<T> conv1;
  BatchNormLayer<T> bn1;
  ConvLayer<T> conv2;
  BatchNormLayer<T> bn2;
  bool has_downsample = false;
  ConvLayer<T> down_conv;
  BatchNormLayer<T> down_bn;

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) const {
    Tensor<T> out = relu(bn1(conv1(x), mode));
    out = bn2(conv2(out), mode);
    const Tensor<T> skip = has_downsample ? down_bn(down_conv(x), mode) : x;
    return relu(add(out, skip));
  }
};

enum class HeadPolicy { strict, reinit_head };

inline HeadPolicy parse_head_policy(std::string_view s) {
  if (s == "strict") return HeadPolicy::strict;
  if (s == "reinit_head") return HeadPolicy::reinit_head;
  throw ConfigError("unknown head policy '" + std::string(s) + "' (expected strict or reinit_head)");
}

inline const char* head_policy_str(HeadPolicy p) { return p == HeadPolicy::strict ? "strict" : "reinit_head"; }

/// ResNet-18 with a `num_classes`-way linear head:
///   conv7x7/2 - bn - relu - maxpool3x3/2 - 4 stages x 2 basic blocks
///   (widths 64,128,256,512 scaled by width_multiplier) - global avg pool - linear.
template <typename T>
class ResNet18 {
 public:
  ResNet18(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    const std::size_t stem = config_.width(64);
    stem_conv_ = make_conv("stem.conv", stem, static_cast<std::size_t>(config_.input_channels), 7, 2, 3);
    stem_bn_ = make_bn("stem.bn", stem);
    std::size_t in = stem;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t out = config_.width(ModelConfig::kStageWidths[s]);
      for (std::size_t b = 0; b < 2; ++b) {
        const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
        const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
        BasicBlock<T> block;
        block.conv1 = make_conv(prefix + ".conv1", out, in, 3, stride, 1);
        block.bn1 = make_bn(prefix + ".bn1", out);
        block.conv2 = make_conv(prefix + ".conv2", out, out, 3, 1, 1);
        block.bn2 = make_bn(prefix + ".bn2", out);
        if (stride != 1 || in != out) {
          block.has_downsample = true;
          block.down_conv = make_conv(prefix + ".downsample.conv", out, in, 1, stride, 0);
          block.down_bn = make_bn(prefix + ".downsample.bn", out);
        }
        blocks_.push_back(std::move(block));
        in = out;
      }
    }
    head_weight_ = add_param("head.weight", Tensor<T>({static_cast<std::size_t>(config_.num_classes), in}));
    head_bias_ = add_param("head.bias", Tensor<T>({static_cast<std::size_t>(config_.num_classes)}));
    reinitialize_head();
  }

  // Layers and the state table alias the same storage, so a member-wise copy
  // would silently share weights.
  ResNet18(const ResNet18&) = delete;
  ResNet18& operator=(const ResNet18&) = delete;
  ResNet18(ResNet18&&) noexcept = default;
  ResNet18& operator=(ResNet18&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  Tensor<T> forward(const Tensor<T>& batch, Mode mode) const {
    if (batch.ndim() != 4 || batch.dim(1) != static_cast<std::size_t>(config_.input_channels) ||
        batch.dim(2) != static_cast<std::size_t>(config_.input_size) ||
        batch.dim(3) != static_cast<std::size_t>(config_.input_size)) {
      throw ShapeError("ResNet18 expects N x " + std::to_string(config_.input_channels) + " x " +
                       std::to_string(config_.input_size) + " x " + std::to_string(config_.input_size) +
                       " input, got " + shape_str(batch.shape()));
    }
    Tensor<T> x = relu(stem_bn_(stem_conv_(batch), mode));
    x = max_pool2d(x, 3, 2, 1);
    for (const auto& block : blocks_) x = block(x, mode);
    return linear(global_avg_pool2d(x), head_weight_, head_bias_);
  }

  /// Trainable tensors in module order.
  std::vector<Parameter<T>> parameters() const {
    std::vector<Parameter<T>> out;
    for (const auto& p : state_) {
      if (p.tensor.requires_grad()) out.push_back(p);
    }
    return out;
  }

  /// Parameters plus batchnorm running statistics, in checkpoint order.
  const std::vector<Parameter<T>>& state() const { return state_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  Tensor<T> head_weight() const { return head_weight_; }
  Tensor<T> head_bias() const { return head_bias_; }

  /// Reseeds the classification head exactly as a fresh build would.
  void reinitialize_head() {
    const std::size_t features = head_weight_.dim(1);
    fill_uniform("head.weight", head_weight_, features);
    fill_uniform("head.bias", head_bias_, features);
  }

  /// Drops every gradient buffer.
  void clear_grads() {
    for (auto& p : state_) p.tensor.clear_grad();
  }

 private:
  Tensor<T> add_param(const std::string& name, Tensor<T> t, bool trainable = true) {
    t.set_requires_grad(trainable);
    state_.push_back({name, t});
    return t;
  }

  void fill_uniform(const std::string& name, Tensor<T>& t, std::size_t fan_in) {
    Rng rng(mix_seed(seed_, fnv1a(name)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }

  ConvLayer<T> make_conv(const std::string& prefix, std::size_t out, std::size_t in, std::size_t k,
                         std::size_t stride, std::size_t padding) {
    ConvLayer<T> layer{add_param(prefix + ".weight", Tensor<T>({out, in, k, k})), stride, padding};
    fill_uniform(prefix + ".weight", layer.weight, in * k * k);
    return layer;
  }

  BatchNormLayer<T> make_bn(const std::string& prefix, std::size_t channels) {
    BatchNormLayer<T> bn;
    bn.gamma = add_param(prefix + ".gamma", Tensor<T>({channels}, T{1}));
    bn.beta = add_param(prefix + ".beta", Tensor<T>({channels}, T{0}));
    bn.running_mean = add_param(prefix + ".running_mean", Tensor<T>({channels}, T{0}), false);
    bn.running_var = add_param(prefix + ".running_var", Tensor<T>({channels}, T{1}), false);
    bn.momentum = config_.batchnorm_momentum;
    bn.epsilon = config_.batchnorm_epsilon;
    return bn;
  }

  ModelConfig config_;
  std::uint64_t seed_;
  std::vector<Parameter<T>> state_;
  ConvLayer<T> stem_conv_;
  BatchNormLayer<T> stem_bn_;
  std::vector<BasicBlock<T>> blocks_;
  Tensor<T> head_weight_, head_bias_;
};

template <typename T = float>
ResNet18<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  return ResNet18<T>(config, seed);
}

inline bool is_head_tensor(std::string_view name) { return name.starts_with("head."); }
inline bool is_optimizer_tensor(std::string_view name) { return name.starts_with("optim."); }

/// Snapshot of the model's weights and running statistics.
template <typename T>
Checkpoint to_checkpoint(const ResNet18<T>& model, std::map<std::string, std::string> metadata = {}) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  ckpt.metadata.try_emplace("created-by", "exprnet");
  ckpt.metadata.try_emplace("source", "scratch");
  ckpt.metadata["num_classes"] = std::to_string(model.config().num_classes);
  ckpt.metadata["input_channels"] = std::to_string(model.config().input_channels);
  ckpt.metadata["width_multiplier"] = model.config().width_multiplier.to_string();
  for (const auto& p : model.state()) ckpt.tensors.push_back(CheckpointTensor::from(p.name, p.tensor));
  return ckpt;
}

/// Copies checkpoint values into the model. Validation happens before any
/// value is written, so a rejected checkpoint leaves the model untouched.
/// A checkpoint whose metadata carries head_policy=reinit_head is always
/// loaded with that policy. Returns the policy that was applied.
template <typename T>
HeadPolicy load_into(ResNet18<T>& model, const Checkpoint& ckpt, HeadPolicy policy) {
  if (auto it = ckpt.metadata.find("head_policy"); it != ckpt.metadata.end() && it->second == "reinit_head") {
    policy = HeadPolicy::reinit_head;
  }
  auto skipped = [&](std::string_view name) {
    return is_optimizer_tensor(name) || (policy == HeadPolicy::reinit_head && is_head_tensor(name));
  };

  std::vector<std::pair<Tensor<T>, const CheckpointTensor*>> plan;
  for (const auto& p : model.state()) {
    if (skipped(p.name)) continue;
    const CheckpointTensor* src = ckpt.find(p.name);
    if (!src) throw CheckpointError("checkpoint is missing parameter '" + p.name + "'");
    if (src->shape != p.tensor.shape()) {
      throw CheckpointError("parameter '" + p.name + "' has shape " + shape_str(src->shape) +
                            " in checkpoint but " + shape_str(p.tensor.shape()) + " in model");
    }
    plan.emplace_back(p.tensor, src);
  }
  for (const auto& t : ckpt.tensors) {
    if (skipped(t.name)) continue;
    bool known = false;
    for (const auto& p : model.state()) known = known || p.name == t.name;
    if (!known) throw CheckpointError("checkpoint has unexpected parameter '" + t.name + "'");
  }

  for (auto& [dst, src] : plan) {
    const std::vector<T> values = src->template values<T>();
    std::copy(values.begin(), values.end(), dst.mutable_data().begin());
  }
  if (policy == HeadPolicy::reinit_head) model.reinitialize_head();
  return policy;
}

template <typename T>
void save_checkpoint(const ResNet18<T>& model, const std::filesystem::path& path,
                     std::map<std::string, std::string> metadata = {}) {
  write_checkpoint(to_checkpoint(model, std::move(metadata)), path);
}

template <typename T>
HeadPolicy load_checkpoint(ResNet18<T>& model, const std::filesystem::path& path, HeadPolicy policy) {
  const Checkpoint ckpt = read_checkpoint(path);
  try {
    return load_into(model, ckpt, policy);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace exprnet
