#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "exprnet/augment.hpp"
#include "exprnet/dataset.hpp"

namespace exprnet {

/// Supplies the decoded, resized 3 x S x S image in [0,1] for a record.
template <typename T>
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual Tensor<T> load(const FrameRecord& record) const = 0;
  virtual std::size_t image_size() const = 0;
};

/// Reads frames from disk, optionally memoizing the decoded tensors.
template <typename T>
class FileImageSource final : public ImageSource<T> {
 public:
  explicit FileImageSource(std::size_t size, bool cache = false) : size_(size), cache_(cache) {}

  Tensor<T> load(const FrameRecord& record) const override {
    if (!cache_) return decode_and_resize<T>(record.path, size_);
    auto it = memo_.find(record.path);
    if (it == memo_.end()) it = memo_.emplace(record.path, decode_and_resize<T>(record.path, size_)).first;
    return it->second;
  }

  std::size_t image_size() const override { return size_; }

 private:
  std::size_t size_;
  bool cache_;
  mutable std::map<std::string, Tensor<T>> memo_;
};

/// Stacks a set of manifest rows into an N x 3 x S x S batch. With `draws`
/// given (training) each sample is flipped, rotated and normalized using its
/// own draws; otherwise it is only normalized.
template <typename T>
Tensor<T> assemble_batch(const ImageSource<T>& source, const Manifest& manifest, std::span<const std::size_t> rows,
                         const AugmentConfig& augment, const std::vector<SampleDraws>* draws = nullptr) {
  const std::size_t s = source.image_size();
  const std::size_t per = 3 * s * s;
  std::vector<T> values(rows.size() * per);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor<T> image = source.load(manifest.at(rows[i]));
    if (image.shape() != Shape{3, s, s}) {
      throw ShapeError("image source returned " + shape_str(image.shape()) + " for '" + manifest[rows[i]].path + "'");
    }
    const Tensor<T> ready = draws ? augment_for_training(image, augment, (*draws)[i]) : prepare_for_eval(image, augment);
    std::copy(ready.data().begin(), ready.data().end(), values.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor<T>({rows.size(), 3, s, s}, std::move(values));
}

}  // namespace exprnet
