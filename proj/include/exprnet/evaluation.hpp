#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "exprnet/image_source.hpp"
#include "exprnet/metrics.hpp"
#include "exprnet/resnet18.hpp"

namespace exprnet {

struct Evaluation {
  MetricsReport report;
  std::vector<int> predictions;
  std::vector<int> labels;
};

/// Eval-mode pass over every frame of `manifest` (normalization only, no
/// augmentation), argmax with lowest-index tie-break. Leaves weights and
/// running statistics untouched.
template <typename T>
Evaluation evaluate(const ResNet18<T>& model, const Manifest& manifest, const ImageSource<T>& source,
                    const AugmentConfig& augment, std::size_t batch_size) {
  if (manifest.empty()) throw DataError("cannot evaluate on an empty manifest");
  if (batch_size == 0) throw ConfigError("evaluation batch size must be positive");
  NoGradGuard no_grad;
  Evaluation out;
  out.predictions.reserve(manifest.size());
  std::vector<std::size_t> rows(manifest.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, rows.size() - start);
    const std::span<const std::size_t> chunk(rows.data() + start, n);
    const Tensor<T> logits = model.forward(assemble_batch(source, manifest, chunk, augment), Mode::eval);
    const auto preds = argmax_rows(logits);
    out.predictions.insert(out.predictions.end(), preds.begin(), preds.end());
  }
  for (const auto& r : manifest) out.labels.push_back(r.label);
  out.report = score_predictions(out.predictions, out.labels, static_cast<std::size_t>(model.config().num_classes));
  return out;
}

}  // namespace exprnet
