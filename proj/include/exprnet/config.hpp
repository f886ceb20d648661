#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "exprnet/augment.hpp"
#include "exprnet/dataset.hpp"
#include "exprnet/resnet18.hpp"
#include "exprnet/training.hpp"

namespace exprnet {

struct SplitConfig {
  Ratio fraction{4, 5};  // share of frames on the train side; 1 means no internal split
  SplitGranularity granularity = SplitGranularity::video;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(Ratio(0) < fraction) || !(fraction <= Ratio(1))) {
      throw ConfigError("split.fraction must lie in (0,1], got " + fraction.to_string());
    }
  }
};

/// Every tunable of the pipeline. Defaults are the Table 2 setup.
struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  SamplerConfig sampler;
  SplitConfig split;

  void validate() const {
    model.validate();
    train.validate();
    augment.validate();
    sampler.validate();
    split.validate();
  }

  /// Image side length fed to the network.
  std::size_t image_size() const {
    return static_cast<std::size_t>(augment.target_size > 0 ? augment.target_size : model.input_size);
  }
};

namespace detail {

struct ConfigKey {
  std::string name;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, std::string_view)> set;
};

inline std::string join_doubles(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + format_double(values[i]);
  return out;
}

template <std::size_t N>
std::array<double, N> parse_double_list(std::string_view text, const std::string& key) {
  const auto parts = split(text, ',');
  if (parts.size() != N) {
    throw ConfigError(key + " needs " + std::to_string(N) + " comma-separated values, got " + std::to_string(parts.size()));
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_double(trim(parts[i]), key);
  return out;
}

inline std::uint64_t parse_seed(std::string_view text, const std::string& key) {
  const long long v = parse_int(text, key);
  if (v < 0) throw ConfigError(key + " must be non-negative");
  return static_cast<std::uint64_t>(v);
}

inline int parse_small_int(std::string_view text, const std::string& key) {
  const long long v = parse_int(text, key);
  if (v < INT32_MIN || v > INT32_MAX) throw ConfigError(key + " is out of range");
  return static_cast<int>(v);
}

#define EXPRNET_KEY_REAL(section, field)                                                                         \
  ConfigKey{#section "." #field, [](const PipelineConfig& c) { return format_double(c.section.field); },         \
            [](PipelineConfig& c, std::string_view v) { c.section.field = parse_double(v, #section "." #field); }}
#define EXPRNET_KEY_INT(section, field)                                                                          \
  ConfigKey{#section "." #field, [](const PipelineConfig& c) { return std::to_string(c.section.field); },        \
            [](PipelineConfig& c, std::string_view v) { c.section.field = parse_int(v, #section "." #field); }}
#define EXPRNET_KEY_SMALL(section, field)                                                                        \
  ConfigKey{#section "." #field, [](const PipelineConfig& c) { return std::to_string(c.section.field); },        \
            [](PipelineConfig& c, std::string_view v) { c.section.field = parse_small_int(v, #section "." #field); }}
#define EXPRNET_KEY_SEED(section)                                                                                \
  ConfigKey{#section ".seed", [](const PipelineConfig& c) { return std::to_string(c.section.seed); },            \
            [](PipelineConfig& c, std::string_view v) { c.section.seed = parse_seed(v, #section ".seed"); }}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      EXPRNET_KEY_SMALL(model, num_classes),
      EXPRNET_KEY_SMALL(model, input_channels),
      EXPRNET_KEY_SMALL(model, input_size),
      ConfigKey{"model.width_multiplier", [](const PipelineConfig& c) { return c.model.width_multiplier.to_string(); },
                [](PipelineConfig& c, std::string_view v) { c.model.width_multiplier = parse_ratio(v); }},
      EXPRNET_KEY_REAL(model, batchnorm_momentum),
      EXPRNET_KEY_REAL(model, batchnorm_epsilon),

      EXPRNET_KEY_REAL(train, learning_rate),
      EXPRNET_KEY_INT(train, batch_size),
      EXPRNET_KEY_INT(train, epochs),
      EXPRNET_KEY_INT(train, lr_step_epochs),
      EXPRNET_KEY_REAL(train, lr_gamma),
      EXPRNET_KEY_REAL(train, weight_decay),
      EXPRNET_KEY_REAL(train, beta1),
      EXPRNET_KEY_REAL(train, beta2),
      EXPRNET_KEY_REAL(train, epsilon),
      EXPRNET_KEY_SEED(train),
      EXPRNET_KEY_INT(train, checkpoint_every),

      EXPRNET_KEY_REAL(augment, flip_probability),
      EXPRNET_KEY_REAL(augment, max_rotation_degrees),
      ConfigKey{"augment.normalize_mean", [](const PipelineConfig& c) { return join_doubles(c.augment.normalize_mean); },
                [](PipelineConfig& c, std::string_view v) {
                  c.augment.normalize_mean = parse_double_list<3>(v, "augment.normalize_mean");
                }},
      ConfigKey{"augment.normalize_std", [](const PipelineConfig& c) { return join_doubles(c.augment.normalize_std); },
                [](PipelineConfig& c, std::string_view v) {
                  c.augment.normalize_std = parse_double_list<3>(v, "augment.normalize_std");
                }},
      EXPRNET_KEY_SMALL(augment, target_size),
      EXPRNET_KEY_SEED(augment),

      ConfigKey{"sampler.ratios",
                [](const PipelineConfig& c) {
                  std::string out;
                  for (std::size_t i = 0; i < c.sampler.ratios.size(); ++i) {
                    out += (i ? ", " : "") + c.sampler.ratios[i].to_string();
                  }
                  return out;
                },
                [](PipelineConfig& c, std::string_view v) {
                  const auto parts = split(v, ',');
                  if (parts.size() != kNumExpressions) {
                    throw ConfigError("sampler.ratios needs 7 comma-separated values, got " +
                                      std::to_string(parts.size()));
                  }
                  for (std::size_t i = 0; i < parts.size(); ++i) c.sampler.ratios[i] = parse_ratio(trim(parts[i]));
                }},
      EXPRNET_KEY_SEED(sampler),

      ConfigKey{"split.fraction", [](const PipelineConfig& c) { return c.split.fraction.to_string(); },
                [](PipelineConfig& c, std::string_view v) { c.split.fraction = parse_ratio(v); }},
      ConfigKey{"split.granularity", [](const PipelineConfig& c) { return std::string(granularity_str(c.split.granularity)); },
                [](PipelineConfig& c, std::string_view v) { c.split.granularity = parse_granularity(v); }},
      EXPRNET_KEY_SEED(split),
  };
  return keys;
}

#undef EXPRNET_KEY_REAL
#undef EXPRNET_KEY_INT
#undef EXPRNET_KEY_SMALL
#undef EXPRNET_KEY_SEED

}  // namespace detail

/// Applies one `section.key = value` assignment.
inline void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      try {
        k.set(config, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

inline std::string get_config_value(const PipelineConfig& config, std::string_view key) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) return k.get(config);
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// Parses flat config text on top of the defaults. Blank lines and `#`
/// comments are ignored; a repeated key keeps the last value.
inline PipelineConfig parse_config(std::string_view text, const std::string& source = "<config>") {
  PipelineConfig config;
  const auto lines = text_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(i + 1);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'section.key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (value.empty()) throw ConfigError(where + ": missing value for '" + std::string(key) + "'");
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path), path.string());
}

/// Canonical listing of every key with its effective value.
inline std::string format_config(const PipelineConfig& config) {
  std::string out = "# effective configuration\n";
  std::string section;
  for (const auto& k : detail::config_keys()) {
    const std::string s = k.name.substr(0, k.name.find('.'));
    if (s != section) {
      if (!section.empty()) out += '\n';
      section = s;
    }
    out += k.name + " = " + k.get(config) + '\n';
  }
  return out;
}

}  // namespace exprnet
