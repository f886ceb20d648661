#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>

#include "exprnet/image_io.hpp"
#include "exprnet/random.hpp"
#include "exprnet/tensor.hpp"

namespace exprnet {

struct AugmentConfig {
  double flip_probability = 0.5;
  double max_rotation_degrees = 10.0;
  std::array<double, 3> normalize_mean{0.5, 0.5, 0.5};
  std::array<double, 3> normalize_std{0.5, 0.5, 0.5};
  int target_size = 0;  // 0: follow the model input size
  std::uint64_t seed = 0;

  void validate() const {
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
      throw ConfigError("augment.flip_probability must lie in [0,1]");
    }
    if (!(max_rotation_degrees >= 0.0)) throw ConfigError("augment.max_rotation_degrees must be non-negative");
    for (double s : normalize_std) {
      if (!(s > 0.0)) throw ConfigError("augment.normalize_std components must be positive");
    }
    if (target_size < 0) throw ConfigError("augment.target_size must be non-negative");
  }
};

namespace detail {

// a + t*(b-a) reproduces a exactly when a == b, so constant regions survive
// interpolation bit-for-bit.
inline double lerp(double a, double b, double t) { return a + t * (b - a); }

inline void require_chw(const Shape& s, const char* op) {
  if (s.size() != 3) throw ShapeError(std::string(op) + ": expected a C x H x W image, got " + shape_str(s));
}

}  // namespace detail

/// 3 x H x W tensor in [0,1]; grayscale is replicated to three channels.
template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
  const std::size_t h = image.height, w = image.width;
  std::vector<T> out(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src_c = image.channels == 1 ? 0 : c;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = static_cast<T>(image.at(y, x, src_c) / 255.0);
    }
  }
  return Tensor<T>({3, h, w}, std::move(out));
}

/// Bilinear resize with half-pixel centres and edge clamping.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& image, std::size_t out_h, std::size_t out_w) {
  detail::require_chw(image.shape(), "resize_bilinear");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image.clone();
  auto coord = [](std::size_t dst, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  auto src = image.data();
  std::vector<T> out(c * out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = coord(y, h, out_h);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = coord(x, w, out_w);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* p = src.data() + ch * h * w;
        const double top = detail::lerp(p[y0 * w + x0], p[y0 * w + x1], fx);
        const double bottom = detail::lerp(p[y1 * w + x0], p[y1 * w + x1], fx);
        out[(ch * out_h + y) * out_w + x] = static_cast<T>(detail::lerp(top, bottom, fy));
      }
    }
  }
  return Tensor<T>({c, out_h, out_w}, std::move(out));
}

template <typename T>
Tensor<T> decode_and_resize(const std::filesystem::path& path, std::size_t target_size) {
  if (target_size == 0) throw ValueError("decode_and_resize: target size must be positive");
  return resize_bilinear(image_to_tensor<T>(decode_image(path)), target_size, target_size);
}

template <typename T>
Tensor<T> horizontal_flip(const Tensor<T>& image) {
  detail::require_chw(image.shape(), "horizontal_flip");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  auto src = image.data();
  std::vector<T> out(src.size());
  for (std::size_t row = 0; row < c * h; ++row) {
    for (std::size_t x = 0; x < w; ++x) out[row * w + x] = src[row * w + (w - 1 - x)];
  }
  return Tensor<T>(image.shape(), std::move(out));
}

/// Mirrors horizontally iff draw < p.
template <typename T>
Tensor<T> random_flip(const Tensor<T>& image, double p, double draw) {
  return draw < p ? horizontal_flip(image) : image.clone();
}

/// Rotates counter-clockwise by `degrees` about the image centre, sampling
/// bilinearly and filling with 0 where the source lies outside the image.
template <typename T>
Tensor<T> rotate(const Tensor<T>& image, double degrees) {
  detail::require_chw(image.shape(), "rotate");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  auto src = image.data();
  std::vector<T> out(src.size(), T{0});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      double sx = cx + cos_t * dx - sin_t * dy;
      double sy = cy + sin_t * dx + cos_t * dy;
      // Rounding in cos/sin can push an exact border sample a hair outside.
      constexpr double slack = 1e-9;
      if (sx < -slack || sy < -slack || sx > (w - 1) + slack || sy > (h - 1) + slack) continue;
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* p = src.data() + ch * h * w;
        const double top = detail::lerp(p[y0 * w + x0], p[y0 * w + x1], fx);
        const double bottom = detail::lerp(p[y1 * w + x0], p[y1 * w + x1], fx);
        out[(ch * h + y) * w + x] = static_cast<T>(detail::lerp(top, bottom, fy));
      }
    }
  }
  return Tensor<T>(image.shape(), std::move(out));
}

/// Angle (2*draw - 1) * max_deg, so draw 0.5 is the identity.
inline double rotation_angle(double max_deg, double draw) { return (2.0 * draw - 1.0) * max_deg; }

template <typename T>
Tensor<T> random_rotation(const Tensor<T>& image, double max_deg, double draw) {
  if (!(max_deg >= 0.0)) throw ValueError("random_rotation: max_deg must be non-negative");
  const double angle = rotation_angle(max_deg, draw);
  return angle == 0.0 ? image.clone() : rotate(image, angle);
}

template <typename T>
Tensor<T> normalize(const Tensor<T>& image, const std::array<double, 3>& mean, const std::array<double, 3>& std_dev) {
  detail::require_chw(image.shape(), "normalize");
  if (image.dim(0) != 3) throw ShapeError("normalize: expected 3 channels, got " + shape_str(image.shape()));
  const std::size_t plane = image.dim(1) * image.dim(2);
  auto src = image.data();
  std::vector<T> out(src.size());
  for (std::size_t c = 0; c < 3; ++c) {
    if (!(std_dev[c] > 0.0)) throw ValueError("normalize: std must be positive");
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = static_cast<T>((src[c * plane + i] - mean[c]) / std_dev[c]);
  }
  return Tensor<T>(image.shape(), std::move(out));
}

template <typename T>
Tensor<T> denormalize(const Tensor<T>& image, const std::array<double, 3>& mean, const std::array<double, 3>& std_dev) {
  const std::size_t plane = image.dim(1) * image.dim(2);
  auto src = image.data();
  std::vector<T> out(src.size());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = static_cast<T>(src[c * plane + i] * std_dev[c] + mean[c]);
  }
  return Tensor<T>(image.shape(), std::move(out));
}

/// Per-sample random draws, a pure function of (seed, epoch, manifest row).
struct SampleDraws {
  double flip = 0.0;
  double rotation = 0.5;

  static SampleDraws for_sample(std::uint64_t seed, std::uint64_t epoch, std::uint64_t row) {
    return {counter_uniform(seed, epoch, row, 0), counter_uniform(seed, epoch, row, 1)};
  }
};

/// Training path: flip, rotate, normalize.
template <typename T>
Tensor<T> augment_for_training(const Tensor<T>& image, const AugmentConfig& config, const SampleDraws& draws) {
  Tensor<T> x = random_flip(image, config.flip_probability, draws.flip);
  x = random_rotation(x, config.max_rotation_degrees, draws.rotation);
  return normalize(x, config.normalize_mean, config.normalize_std);
}

/// Evaluation path: normalize only.
template <typename T>
Tensor<T> prepare_for_eval(const Tensor<T>& image, const AugmentConfig& config) {
  return normalize(image, config.normalize_mean, config.normalize_std);
}

}  // namespace exprnet
