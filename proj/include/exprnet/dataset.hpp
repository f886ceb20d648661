#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "exprnet/random.hpp"
#include "exprnet/ratio.hpp"
#include "exprnet/text.hpp"

namespace exprnet {

inline constexpr int kNumExpressions = 7;

/// Label order used throughout: index i is the i-th name.
inline constexpr std::array<std::string_view, kNumExpressions> kExpressionNames{
    "Neutral", "Anger", "Disgust", "Fear", "Happiness", "Sadness", "Surprise"};

struct FrameRecord {
  std::string path;
  std::string video_id;
  std::int64_t frame_index = 0;
  int label = 0;
  int duplicate_ordinal = 0;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

using Manifest = std::vector<FrameRecord>;

struct ClassDistribution {
  std::array<std::int64_t, kNumExpressions> counts{};
  std::int64_t total = 0;

  static ClassDistribution of(const Manifest& manifest) {
    ClassDistribution d;
    for (const auto& r : manifest) ++d.counts.at(static_cast<std::size_t>(r.label));
    d.total = static_cast<std::int64_t>(manifest.size());
    return d;
  }

  static ClassDistribution from_counts(const std::array<std::int64_t, kNumExpressions>& counts) {
    ClassDistribution d;
    d.counts = counts;
    d.total = std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
    return d;
  }
};

struct SamplerConfig {
  // Reproduces the published sampled train counts from the original ones
  // under round-half-up.
  std::array<Ratio, kNumExpressions> ratios{Ratio(1, 5), Ratio(7, 4), Ratio(21, 8), Ratio(3),
                                            Ratio(1, 4), Ratio(1, 3), Ratio(1)};
  std::uint64_t seed = 0;

  void validate() const {
    for (const auto& r : ratios) {
      if (!r.positive()) throw ConfigError("sampler.ratios must all be positive, got " + r.to_string());
    }
  }
};

// ---------------------------------------------------------------------------
// Annotation files

/// Parses annotation text: one label in {-1..6} per line, line i describing
/// frame i (1-based). An optional first line of comma-separated class names
/// is skipped. Trailing blank lines are ignored.
inline std::vector<int> parse_annotations(std::string_view text, const std::string& source = "<annotations>") {
  auto lines = text_lines(text);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  std::vector<int> labels;
  labels.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view line = trim(lines[i]);
    if (i == 0 && line.find_first_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ") != std::string_view::npos) {
      continue;
    }
    const std::string where = source + ":" + std::to_string(i + 1);
    long long v;
    try {
      v = parse_int(line, where);
    } catch (const ValueError& e) {
      throw DataError(e.what());
    }
    if (v < -1 || v >= kNumExpressions) {
      throw DataError(where + ": label " + std::to_string(v) + " outside {-1..6}");
    }
    labels.push_back(static_cast<int>(v));
  }
  return labels;
}

inline std::vector<int> parse_annotation_file(const std::filesystem::path& path) {
  return parse_annotations(read_text_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Reconciliation of frame files against labels

struct ReconcileReport {
  std::int64_t images_found = 0;
  std::int64_t labels_read = 0;
  std::int64_t kept = 0;
  std::int64_t dropped_missing_image = 0;
  std::int64_t dropped_missing_label = 0;
  std::int64_t dropped_invalid_label = 0;
  std::int64_t skipped_unparseable_filename = 0;
  std::int64_t skipped_duplicate_frame = 0;
  std::int64_t videos = 0;
  std::int64_t videos_without_annotations = 0;

  ReconcileReport& operator+=(const ReconcileReport& o) {
    images_found += o.images_found;
    labels_read += o.labels_read;
    kept += o.kept;
    dropped_missing_image += o.dropped_missing_image;
    dropped_missing_label += o.dropped_missing_label;
    dropped_invalid_label += o.dropped_invalid_label;
    skipped_unparseable_filename += o.skipped_unparseable_filename;
    skipped_duplicate_frame += o.skipped_duplicate_frame;
    videos += o.videos;
    videos_without_annotations += o.videos_without_annotations;
    return *this;
  }

  std::vector<std::pair<std::string, std::int64_t>> fields() const {
    return {{"videos", videos},
            {"videos_without_annotations", videos_without_annotations},
            {"images_found", images_found},
            {"labels_read", labels_read},
            {"kept", kept},
            {"dropped_missing_image", dropped_missing_image},
            {"dropped_missing_label", dropped_missing_label},
            {"dropped_invalid_label", dropped_invalid_label},
            {"skipped_unparseable_filename", skipped_unparseable_filename},
            {"skipped_duplicate_frame", skipped_duplicate_frame}};
  }

  /// Plain-text summary followed by a `key=value` block.
  std::string to_text() const {
    std::string out = "Reconciliation summary\n";
    out += "  kept " + std::to_string(kept) + " of " + std::to_string(images_found) + " frame images (" +
           std::to_string(labels_read) + " labels read)\n";
    out += "  dropped: " + std::to_string(dropped_missing_image) + " labels without image, " +
           std::to_string(dropped_missing_label) + " images without label, " + std::to_string(dropped_invalid_label) +
           " images labelled -1\n";
    out += "  skipped: " + std::to_string(skipped_unparseable_filename) + " unparseable filenames, " +
           std::to_string(skipped_duplicate_frame) + " duplicate frames\n";
    out += "\n[reconcile]\n";
    for (const auto& [k, v] : fields()) out += k + "=" + std::to_string(v) + "\n";
    return out;
  }
};

struct ReconcileResult {
  Manifest manifest;
  ReconcileReport report;
};

namespace detail {

/// Frame number from a name like "00042.jpg"; 0 when the name does not
/// follow the zero-padded 1-based pattern.
inline std::int64_t parse_frame_filename(const std::string& name) {
  const auto dot = name.rfind('.');
  if (dot == std::string::npos || dot == 0) return 0;
  std::string ext = name.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext != "jpg" && ext != "jpeg" && ext != "png" && ext != "bmp") return 0;
  std::int64_t v = 0;
  for (std::size_t i = 0; i < dot; ++i) {
    const char c = name[i];
    if (c < '0' || c > '9') return 0;
    if (v > 1'000'000'000'000LL) return 0;
    v = v * 10 + (c - '0');
  }
  return v;
}

}  // namespace detail

/// Pairs frame images in `image_dir` with `labels` by frame index. A frame is
/// kept when its image exists, a label exists at its index, and that label
/// is not -1.
inline ReconcileResult reconcile(const std::filesystem::path& image_dir, const std::vector<int>& labels,
                                 std::string video_id = {}) {
  namespace fs = std::filesystem;
  if (video_id.empty()) video_id = image_dir.filename().string();
  ReconcileResult result;
  auto& rep = result.report;
  rep.videos = 1;
  rep.labels_read = static_cast<std::int64_t>(labels.size());

  std::vector<std::string> names;
  if (fs::exists(image_dir)) {
    if (!fs::is_directory(image_dir)) throw IoError("'" + image_dir.string() + "' is not a directory");
    for (const auto& entry : fs::directory_iterator(image_dir)) {
      if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());

  std::map<std::int64_t, std::string> frames;
  for (const auto& name : names) {
    const std::int64_t index = detail::parse_frame_filename(name);
    if (index <= 0) {
      ++rep.skipped_unparseable_filename;
      continue;
    }
    if (!frames.emplace(index, name).second) {
      ++rep.skipped_duplicate_frame;
      continue;
    }
    ++rep.images_found;
  }

  for (const auto& [index, name] : frames) {
    if (index > static_cast<std::int64_t>(labels.size())) {
      ++rep.dropped_missing_label;
      continue;
    }
    const int label = labels[static_cast<std::size_t>(index - 1)];
    if (label == -1) {
      ++rep.dropped_invalid_label;
      continue;
    }
    result.manifest.push_back({(image_dir / name).generic_string(), video_id, index, label, 0});
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!frames.count(static_cast<std::int64_t>(i + 1))) ++rep.dropped_missing_image;
  }
  rep.kept = static_cast<std::int64_t>(result.manifest.size());
  return result;
}

/// Walks an image root of per-video frame directories and an annotation
/// root of `<video_id>.txt` files. Videos are visited in sorted id order.
inline ReconcileResult ingest_tree(const std::filesystem::path& images_root, const std::filesystem::path& annotations_root) {
  namespace fs = std::filesystem;
  for (const auto& dir : {images_root, annotations_root}) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  }
  std::vector<std::string> annotated;
  for (const auto& entry : fs::directory_iterator(annotations_root)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") annotated.push_back(entry.path().stem().string());
  }
  std::sort(annotated.begin(), annotated.end());

  ReconcileResult all;
  for (const auto& video : annotated) {
    const auto labels = parse_annotation_file(annotations_root / (video + ".txt"));
    auto part = reconcile(images_root / video, labels, video);
    all.manifest.insert(all.manifest.end(), part.manifest.begin(), part.manifest.end());
    all.report += part.report;
  }
  for (const auto& entry : fs::directory_iterator(images_root)) {
    if (entry.is_directory() &&
        !std::binary_search(annotated.begin(), annotated.end(), entry.path().filename().string())) {
      ++all.report.videos_without_annotations;
    }
  }
  return all;
}

// ---------------------------------------------------------------------------
// Train/validation split

enum class SplitGranularity { video, frame };

inline SplitGranularity parse_granularity(std::string_view s) {
  if (s == "video") return SplitGranularity::video;
  if (s == "frame") return SplitGranularity::frame;
  throw ConfigError("unknown split granularity '" + std::string(s) + "' (expected video or frame)");
}

inline const char* granularity_str(SplitGranularity g) { return g == SplitGranularity::video ? "video" : "frame"; }

struct SplitResult {
  Manifest train;
  Manifest val;
};

/// Seeded split with `fraction` of the frames going to the train side. Both
/// sides keep the input order and are non-empty.
inline SplitResult split_train_val(const Manifest& manifest, Ratio fraction, std::uint64_t seed,
                                   SplitGranularity granularity) {
  if (!(Ratio(0) < fraction) || !(fraction < Ratio(1))) {
    throw ConfigError("split fraction must lie strictly between 0 and 1, got " + fraction.to_string());
  }
  const auto total = static_cast<std::int64_t>(manifest.size());
  std::vector<char> to_train(manifest.size(), 0);
  Rng rng(mix_seed(seed, fnv1a("split")));

  if (granularity == SplitGranularity::frame) {
    const std::int64_t n_train = fraction.round_half_up_times(total);
    if (n_train <= 0 || n_train >= total) {
      throw DataError("cannot split " + std::to_string(total) + " frames at fraction " + fraction.to_string() +
                      " into two non-empty sides");
    }
    std::vector<std::size_t> order(manifest.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::int64_t i = 0; i < n_train; ++i) to_train[order[static_cast<std::size_t>(i)]] = 1;
  } else {
    std::map<std::string, std::int64_t> sizes;
    for (const auto& r : manifest) ++sizes[r.video_id];
    if (sizes.size() < 2) {
      throw DataError("video-level split needs at least two videos, manifest has " + std::to_string(sizes.size()));
    }
    std::vector<std::string> videos;
    for (const auto& [v, n] : sizes) videos.push_back(v);
    rng.shuffle(std::span<std::string>(videos));

    // Distances are compared as |den*count - num*total| to stay exact.
    auto gap = [&](std::int64_t count) {
      const __int128 d = static_cast<__int128>(fraction.den) * count - static_cast<__int128>(fraction.num) * total;
      return d < 0 ? -d : d;
    };
    std::map<std::string, bool> side;
    std::int64_t train_frames = 0;
    std::string last_train, first_val;
    for (const auto& v : videos) {
      const std::int64_t n = sizes[v];
      const bool take = gap(train_frames + n) < gap(train_frames);
      side[v] = take;
      if (take) {
        train_frames += n;
        last_train = v;
      } else if (first_val.empty()) {
        first_val = v;
      }
    }
    if (first_val.empty()) side[last_train] = false;
    if (last_train.empty()) side[first_val] = true;
    for (std::size_t i = 0; i < manifest.size(); ++i) to_train[i] = side[manifest[i].video_id] ? 1 : 0;
  }

  SplitResult out;
  for (std::size_t i = 0; i < manifest.size(); ++i) (to_train[i] ? out.train : out.val).push_back(manifest[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Rebalancing

/// Per class c with n_c records and target t_c = round_half_up(n_c * ratio_c):
/// ratio <= 1 keeps the first t_c records of a seeded shuffle; ratio > 1
/// repeats every record floor(t_c / n_c) times and adds the first
/// t_c mod n_c records of a seeded shuffle. The result is globally shuffled
/// and duplicate ordinals are renumbered per (video_id, frame_index).
inline Manifest resample(const Manifest& manifest, const SamplerConfig& config) {
  config.validate();
  std::array<std::vector<std::size_t>, kNumExpressions> members;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const int label = manifest[i].label;
    if (label < 0 || label >= kNumExpressions) {
      throw DataError("record " + std::to_string(i) + " has label " + std::to_string(label) + " outside [0,6]");
    }
    members[static_cast<std::size_t>(label)].push_back(i);
  }

  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& idx = members[c];
    const auto n = static_cast<std::int64_t>(idx.size());
    if (n == 0) continue;
    const Ratio ratio = config.ratios[c];
    const std::int64_t target = ratio.round_half_up_times(n);
    Rng rng(mix_seed(config.seed, fnv1a("resample"), c));
    std::vector<std::size_t> shuffled = idx;
    rng.shuffle(std::span<std::size_t>(shuffled));
    if (ratio <= Ratio(1)) {
      picked.insert(picked.end(), shuffled.begin(), shuffled.begin() + target);
    } else {
      for (std::int64_t copy = 0; copy < target / n; ++copy) picked.insert(picked.end(), idx.begin(), idx.end());
      picked.insert(picked.end(), shuffled.begin(), shuffled.begin() + target % n);
    }
  }

  Rng global(mix_seed(config.seed, fnv1a("resample"), kNumExpressions));
  global.shuffle(std::span<std::size_t>(picked));

  Manifest out;
  out.reserve(picked.size());
  std::map<std::pair<std::string, std::int64_t>, int> ordinals;
  for (std::size_t i : picked) {
    FrameRecord r = manifest[i];
    r.duplicate_ordinal = ordinals[{r.video_id, r.frame_index}]++;
    out.push_back(std::move(r));
  }
  return out;
}

/// Inverse-frequency weights w_c = total / (7 * count_c).
inline std::array<double, kNumExpressions> compute_class_weights(const ClassDistribution& dist) {
  std::array<double, kNumExpressions> w{};
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (dist.counts[c] <= 0) {
      throw DataError("class " + std::string(kExpressionNames[c]) + " has no samples; class weights undefined");
    }
    w[c] = static_cast<double>(dist.total) / (static_cast<double>(kNumExpressions) * static_cast<double>(dist.counts[c]));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Manifest CSV

inline constexpr std::string_view kManifestHeader = "path,label,video_id,frame_index,duplicate_ordinal";

inline std::string format_manifest(const Manifest& manifest) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& r : manifest) {
    out += csv::escape(r.path) + ',' + std::to_string(r.label) + ',' + csv::escape(r.video_id) + ',' +
           std::to_string(r.frame_index) + ',' + std::to_string(r.duplicate_ordinal) + '\n';
  }
  return out;
}

inline Manifest parse_manifest(std::string_view text, const std::string& source = "<manifest>") {
  const auto lines = text_lines(text);
  if (lines.empty() || lines[0] != kManifestHeader) {
    throw FormatError(source + ": expected header '" + std::string(kManifestHeader) + "'");
  }
  Manifest out;
  out.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = source + ": row " + std::to_string(i + 1);
    std::vector<std::string> f;
    try {
      f = csv::split_row(lines[i]);
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (f.size() != 5) throw FormatError(where + ": expected 5 fields, got " + std::to_string(f.size()));
    FrameRecord r;
    try {
      r.path = f[0];
      const long long label = parse_int(f[1], "label");
      if (label < 0 || label >= kNumExpressions) throw ValueError("label " + f[1] + " outside [0,6]");
      r.label = static_cast<int>(label);
      r.video_id = f[2];
      r.frame_index = parse_int(f[3], "frame_index");
      if (r.frame_index < 0) throw ValueError("negative frame_index");
      const long long ordinal = parse_int(f[4], "duplicate_ordinal");
      if (ordinal < 0 || ordinal > INT32_MAX) throw ValueError("duplicate_ordinal out of range");
      r.duplicate_ordinal = static_cast<int>(ordinal);
    } catch (const ValueError& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (r.path.empty()) throw FormatError(where + ": empty path");
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  write_text_file(path, format_manifest(manifest));
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text_file(path), path.string());
}

}  // namespace exprnet
