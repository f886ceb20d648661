#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "exprnet/config.hpp"
#include "exprnet/evaluation.hpp"
#include "exprnet/training.hpp"

namespace exprnet {

inline constexpr std::string_view kEffectiveConfigFile = "effective_config.txt";

// Decoded images are memoized while the whole set fits in this budget.
inline constexpr std::size_t kImageCacheBudgetBytes = std::size_t{1} << 30;

namespace detail {

inline PipelineConfig config_or_defaults(const std::optional<std::filesystem::path>& path) {
  PipelineConfig config = path ? load_config(*path) : PipelineConfig{};
  config.validate();
  return config;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

inline std::filesystem::path parent_or_cwd(const std::filesystem::path& file) {
  return file.has_parent_path() ? file.parent_path() : std::filesystem::path(".");
}

inline void echo_config(const PipelineConfig& config, const std::filesystem::path& dir) {
  ensure_dir(dir);
  write_text_file(dir / kEffectiveConfigFile, format_config(config));
}

inline std::string join3(const std::array<double, 3>& v) {
  return format_double(v[0]) + "," + format_double(v[1]) + "," + format_double(v[2]);
}

/// Warns when a checkpoint records input normalization that differs from
/// the configured one.
inline void check_normalization(const Checkpoint& ckpt, const AugmentConfig& augment, std::ostream& log) {
  const std::pair<const char*, const std::array<double, 3>*> keys[] = {{"normalize_mean", &augment.normalize_mean},
                                                                        {"normalize_std", &augment.normalize_std}};
  for (const auto& [key, expected] : keys) {
    const auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) continue;
    std::array<double, 3> recorded{};
    try {
      recorded = parse_double_list<3>(it->second, key);
    } catch (const Error&) {
      log << "warning: checkpoint metadata " << key << "='" << it->second << "' is not three numbers\n";
      continue;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      if (std::abs(recorded[c] - (*expected)[c]) > 1e-6) {
        log << "warning: checkpoint was produced with " << key << "=" << it->second << " but the config uses "
            << join3(*expected) << "\n";
        break;
      }
    }
  }
}

inline std::size_t distinct_paths(const Manifest& m) {
  std::set<std::string> paths;
  for (const auto& r : m) paths.insert(r.path);
  return paths.size();
}

template <typename T>
FileImageSource<T> make_source(std::size_t size, std::size_t distinct) {
  const std::size_t per_image = 3 * size * size * sizeof(T);
  return FileImageSource<T>(size, distinct * per_image <= kImageCacheBudgetBytes);
}

inline ResNet18<float> load_model(const PipelineConfig& config, const std::filesystem::path& weights, std::ostream& log) {
  ResNet18<float> model = build_model<float>(config.model, config.train.seed);
  const Checkpoint ckpt = read_checkpoint(weights);
  check_normalization(ckpt, config.augment, log);
  try {
    load_into(model, ckpt, HeadPolicy::strict);
  } catch (const CheckpointError& e) {
    throw CheckpointError(weights.string() + ": " + e.what());
  }
  return model;
}

inline std::filesystem::path json_sibling(const std::filesystem::path& report) {
  std::filesystem::path out = report;
  if (out.extension() == ".json") return out += ".json";
  return out.replace_extension(".json");
}

inline void write_report(const MetricsReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  write_text_file(path, format_report_text(report));
  write_text_file(json_sibling(path), report_to_json(report).dump(2) + "\n");
}

/// CSV with a header row; columns are looked up by name.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string source;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw FormatError(source + ": missing column '" + std::string(name) + "'");
  }
};

inline CsvTable read_csv_table(const std::filesystem::path& path) {
  CsvTable t;
  t.source = path.string();
  const std::string text = read_text_file(path);
  const auto lines = text_lines(text);
  if (lines.empty()) throw FormatError(t.source + ": empty file");
  t.header = csv::split_row(lines[0]);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto row = csv::split_row(lines[i]);
    if (row.size() != t.header.size()) {
      throw FormatError(t.source + ": row " + std::to_string(i + 1) + " has " + std::to_string(row.size()) +
                        " fields, expected " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png" || ext == ".bmp";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// prepare

struct PrepareOptions {
  std::filesystem::path images;
  std::filesystem::path annotations;
  std::filesystem::path out;
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;  // overrides sampler.seed and split.seed
};

struct PrepareResult {
  Manifest train;  // resampled
  Manifest val;
  ClassDistribution original;
  ClassDistribution sampled;
  ClassDistribution validation;
  std::array<double, kNumExpressions> class_weights{};
  ReconcileReport reconcile;
};

/// Three-row class table in the layout of the published distribution table.
inline std::string format_distribution_report(const ClassDistribution& original, const ClassDistribution& sampled,
                                              const ClassDistribution& validation) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"Data set"};
  for (auto name : kExpressionNames) head.emplace_back(name);
  head.emplace_back("Total");
  rows.push_back(head);
  auto add = [&](const char* label, const ClassDistribution& d) {
    std::vector<std::string> row{label};
    for (auto n : d.counts) row.push_back(std::to_string(n));
    row.push_back(std::to_string(d.total));
    rows.push_back(row);
  };
  add("Original Train Set", original);
  add("Sampled Train Set", sampled);
  add("Validation Set", validation);

  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i == 0) {
        line += r[i] + std::string(width[i] - r[i].size(), ' ');
      } else {
        line += "  " + std::string(width[i] - r[i].size(), ' ') + r[i];
      }
    }
    out += line + '\n';
  }
  return out;
}

inline std::string format_class_weights(const ClassDistribution& sampled, const std::array<double, kNumExpressions>& w) {
  std::string out = "class,name,count,weight\n";
  for (std::size_t c = 0; c < w.size(); ++c) {
    out += std::to_string(c) + ',' + std::string(kExpressionNames[c]) + ',' + std::to_string(sampled.counts[c]) + ',' +
           format_double(w[c]) + '\n';
  }
  return out;
}

/// parse -> reconcile -> filter -> split -> resample -> weights. The split is
/// taken before resampling so duplicated frames never straddle train and
/// validation.
inline PrepareResult cmd_prepare(const PrepareOptions& opt, std::ostream& log = std::cerr) {
  PipelineConfig config = detail::config_or_defaults(opt.config);
  if (opt.seed) {
    config.sampler.seed = *opt.seed;
    config.split.seed = *opt.seed;
  }
  if (!std::filesystem::is_directory(opt.images)) throw IoError("images directory '" + opt.images.string() + "' not found");
  if (!std::filesystem::is_directory(opt.annotations)) {
    throw IoError("annotations directory '" + opt.annotations.string() + "' not found");
  }

  PrepareResult result;
  ReconcileResult ingested = ingest_tree(opt.images, opt.annotations);
  result.reconcile = ingested.report;
  if (ingested.manifest.empty()) throw DataError("no usable frames under '" + opt.images.string() + "'");

  Manifest train;
  if (config.split.fraction == Ratio(1)) {
    train = std::move(ingested.manifest);
  } else {
    SplitResult split = split_train_val(ingested.manifest, config.split.fraction, config.split.seed, config.split.granularity);
    train = std::move(split.train);
    result.val = std::move(split.val);
  }
  result.original = ClassDistribution::of(train);
  result.train = resample(train, config.sampler);
  result.sampled = ClassDistribution::of(result.train);
  result.validation = ClassDistribution::of(result.val);
  result.class_weights = compute_class_weights(result.sampled);

  detail::ensure_dir(opt.out);
  write_manifest(result.train, opt.out / "train_manifest.csv");
  write_manifest(result.val, opt.out / "val_manifest.csv");
  write_text_file(opt.out / "class_weights.txt", format_class_weights(result.sampled, result.class_weights));
  write_text_file(opt.out / "distribution_report.txt",
                  format_distribution_report(result.original, result.sampled, result.validation));
  write_text_file(opt.out / "reconcile_report.txt", result.reconcile.to_text());
  detail::echo_config(config, opt.out);

  log << "prepared " << result.train.size() << " train and " << result.val.size() << " validation frames in "
      << opt.out.string() << "\n";
  return result;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::filesystem::path manifest;
  std::filesystem::path val_manifest;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> init_weights;
  HeadPolicy head_policy = HeadPolicy::strict;
  std::filesystem::path out;
  std::optional<std::int64_t> epochs;  // overrides train.epochs
};

inline FitResult<float> cmd_train(const TrainOptions& opt, std::ostream& log = std::cerr) {
  PipelineConfig config = detail::config_or_defaults(opt.config);
  if (opt.epochs) {
    config.train.epochs = *opt.epochs;
    config.validate();
  }
  const Manifest train = read_manifest(opt.manifest);
  const Manifest val = read_manifest(opt.val_manifest);
  if (train.empty()) throw DataError(opt.manifest.string() + ": manifest has no rows");
  if (val.empty()) throw DataError(opt.val_manifest.string() + ": manifest has no rows");

  ResNet18<float> model = build_model<float>(config.model, config.train.seed);
  std::map<std::string, std::string> metadata{{"seed", std::to_string(config.train.seed)},
                                              {"normalize_mean", detail::join3(config.augment.normalize_mean)},
                                              {"normalize_std", detail::join3(config.augment.normalize_std)}};
  if (opt.init_weights) {
    const Checkpoint ckpt = read_checkpoint(*opt.init_weights);
    detail::check_normalization(ckpt, config.augment, log);
    HeadPolicy applied = opt.head_policy;
    try {
      applied = load_into(model, ckpt, opt.head_policy);
    } catch (const CheckpointError& e) {
      throw CheckpointError(opt.init_weights->string() + ": " + e.what());
    }
    if (applied != opt.head_policy) log << "warning: checkpoint requests head reinitialization; head re-drawn\n";
    metadata["source"] = "finetune";
    metadata["init_head_policy"] = head_policy_str(applied);
  }

  detail::echo_config(config, opt.out);
  const std::size_t size = config.image_size();
  Manifest both = train;
  both.insert(both.end(), val.begin(), val.end());
  const auto source = detail::make_source<float>(size, detail::distinct_paths(both));

  FitOptions fit_options;
  fit_options.out_dir = opt.out;
  fit_options.metadata = metadata;
  fit_options.on_epoch = [&](const HistoryRow& row, const EpochStats& stats) {
    log << "epoch " << row.epoch << " lr " << format_double(row.lr, 6) << " loss " << format_fixed(row.train_loss, 6)
        << " train_acc " << format_fixed(stats.train_accuracy, 4) << " val_score " << format_fixed(row.val_score, 6)
        << "\n";
  };
  return fit(model, train, val, source, config.train, config.augment, fit_options);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::filesystem::path manifest;
  std::filesystem::path weights;
  std::optional<std::filesystem::path> config;
  std::filesystem::path report;
};

inline MetricsReport cmd_evaluate(const EvaluateOptions& opt, std::ostream& log = std::cerr) {
  const PipelineConfig config = detail::config_or_defaults(opt.config);
  const Manifest manifest = read_manifest(opt.manifest);
  const ResNet18<float> model = detail::load_model(config, opt.weights, log);
  const auto source = detail::make_source<float>(config.image_size(), 0);
  const Evaluation eval =
      evaluate(model, manifest, source, config.augment, static_cast<std::size_t>(config.train.batch_size));
  detail::write_report(eval.report, opt.report);
  detail::echo_config(config, detail::parent_or_cwd(opt.report));
  return eval.report;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOptions {
  std::filesystem::path images;
  std::filesystem::path weights;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
};

struct Prediction {
  std::string path;
  int pred = -1;  // -1: image could not be decoded
  std::vector<double> probabilities;
};

inline std::string format_predictions(const std::vector<Prediction>& rows, std::size_t num_classes) {
  std::string out = "path,pred";
  for (std::size_t c = 0; c < num_classes; ++c) out += ",prob_" + std::to_string(c);
  out += '\n';
  for (const auto& r : rows) {
    out += csv::escape(r.path) + ',' + std::to_string(r.pred);
    for (std::size_t c = 0; c < num_classes; ++c) {
      out += ',';
      if (!r.probabilities.empty()) out += format_double(r.probabilities[c]);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<Prediction> cmd_predict(const PredictOptions& opt, std::ostream& log = std::cerr) {
  namespace fs = std::filesystem;
  const PipelineConfig config = detail::config_or_defaults(opt.config);
  if (!fs::is_directory(opt.images)) throw IoError("images directory '" + opt.images.string() + "' not found");
  const ResNet18<float> model = detail::load_model(config, opt.weights, log);

  std::vector<std::string> paths;
  for (const auto& entry : fs::recursive_directory_iterator(opt.images)) {
    if (entry.is_regular_file() && detail::has_image_extension(entry.path())) paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());

  const std::size_t size = config.image_size();
  const std::size_t classes = static_cast<std::size_t>(config.model.num_classes);
  const auto batch = static_cast<std::size_t>(config.train.batch_size);
  std::vector<Prediction> out(paths.size());
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < paths.size(); start += batch) {
    const std::size_t end = std::min(paths.size(), start + batch);
    std::vector<std::size_t> ok;
    std::vector<float> values;
    for (std::size_t i = start; i < end; ++i) {
      out[i].path = paths[i];
      try {
        const Tensor<float> image = prepare_for_eval(decode_and_resize<float>(paths[i], size), config.augment);
        values.insert(values.end(), image.data().begin(), image.data().end());
        ok.push_back(i);
      } catch (const DataError& e) {
        log << "warning: skipping undecodable image: " << e.what() << "\n";
      }
    }
    if (ok.empty()) continue;
    const Tensor<float> logits = model.forward(Tensor<float>({ok.size(), 3, size, size}, std::move(values)), Mode::eval);
    const Tensor<float> probs = softmax(logits);
    const auto preds = argmax_rows(probs);
    for (std::size_t j = 0; j < ok.size(); ++j) {
      Prediction& p = out[ok[j]];
      p.pred = preds[j];
      for (std::size_t c = 0; c < classes; ++c) p.probabilities.push_back(probs.data()[j * classes + c]);
    }
  }

  if (opt.out.has_parent_path()) detail::ensure_dir(opt.out.parent_path());
  write_text_file(opt.out, format_predictions(out, classes));
  detail::echo_config(config, detail::parent_or_cwd(opt.out));
  return out;
}

// ---------------------------------------------------------------------------
// score

struct ScoreOptions {
  std::filesystem::path predictions;
  std::filesystem::path labels;
  std::filesystem::path report;
};

/// Scores a predictions CSV (path,pred,...) against any CSV with path and
/// label columns, such as a manifest. Rows pair up by path; a label file may
/// repeat a path only with the same label.
inline MetricsReport cmd_score(const ScoreOptions& opt, std::ostream& log = std::cerr) {
  const detail::CsvTable preds = detail::read_csv_table(opt.predictions);
  const detail::CsvTable labels = detail::read_csv_table(opt.labels);
  if (preds.rows.empty()) throw DataError(opt.predictions.string() + ": no predictions to score");

  std::map<std::string, int> truth;
  {
    const std::size_t path_col = labels.column("path"), label_col = labels.column("label");
    for (std::size_t i = 0; i < labels.rows.size(); ++i) {
      const auto& row = labels.rows[i];
      const int label = static_cast<int>(parse_int(row[label_col], labels.source + ": row " + std::to_string(i + 2)));
      const auto [it, inserted] = truth.emplace(row[path_col], label);
      if (!inserted && it->second != label) {
        throw DataError(labels.source + ": path '" + row[path_col] + "' appears with labels " +
                        std::to_string(it->second) + " and " + std::to_string(label));
      }
    }
  }

  std::vector<int> p, y;
  std::set<std::string> seen;
  const std::size_t path_col = preds.column("path"), pred_col = preds.column("pred");
  for (std::size_t i = 0; i < preds.rows.size(); ++i) {
    const auto& row = preds.rows[i];
    const std::string where = preds.source + ": row " + std::to_string(i + 2);
    const auto it = truth.find(row[path_col]);
    if (it == truth.end()) throw DataError(where + ": path '" + row[path_col] + "' has no label in " + labels.source);
    if (!seen.insert(row[path_col]).second) throw DataError(where + ": duplicate prediction for '" + row[path_col] + "'");
    const int pred = static_cast<int>(parse_int(row[pred_col], where));
    if (pred < 0) throw DataError(where + ": no prediction for '" + row[path_col] + "' (pred " + std::to_string(pred) + ")");
    p.push_back(pred);
    y.push_back(it->second);
  }
  if (seen.size() != truth.size()) {
    for (const auto& [path, label] : truth) {
      if (!seen.count(path)) throw DataError(labels.source + ": path '" + path + "' has no prediction");
    }
  }
  const MetricsReport report = score_predictions(p, y);
  detail::write_report(report, opt.report);
  log << format_report_text(report);
  return report;
}

}  // namespace exprnet
