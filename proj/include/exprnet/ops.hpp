#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "exprnet/tensor.hpp"

namespace exprnet {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kernel_h * kernel_w; }
  std::size_t positions() const { return out_h * out_w; }
};

// Unfolds one CHW image into a (C*kh*kw) x (OH*OW) row-major matrix.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oh * g.stride + i) - pad;
          T* dst = row + oh * g.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ow * g.stride + j) - pad;
            dst[ow] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) ? T{0} : src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.positions();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oh * g.stride + i) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = image + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ow * g.stride + j) - pad;
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width)) dst[x] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation over NCHW input with an OIHW kernel. `bias` may be an
/// undefined tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  using detail::require;
  const std::string op = "conv2d";
  require(input.ndim() == 4, op, "input must be NCHW, got " + shape_str(input.shape()));
  require(weight.ndim() == 4, op, "weight must be OIHW, got " + shape_str(weight.shape()));
  require(stride >= 1, op, "stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  require(weight.dim(1) == c, op,
          "input has " + std::to_string(c) + " channels but weight expects " + std::to_string(weight.dim(1)));
  require(h + 2 * padding >= kh && w + 2 * padding >= kw, op,
          "kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " exceeds padded input " +
              std::to_string(h + 2 * padding) + "x" + std::to_string(w + 2 * padding));
  if (bias.defined()) {
    require(bias.ndim() == 1 && bias.dim(0) == o, op,
            "bias must have shape [" + std::to_string(o) + "], got " + shape_str(bias.shape()));
  }

  const detail::ConvGeometry g{c, h, w, kh, kw, stride, padding,
                               (h + 2 * padding - kh) / stride + 1, (w + 2 * padding - kw) / stride + 1};
  const std::size_t in_sample = c * h * w;
  const std::size_t out_sample = o * g.positions();

  std::vector<T> out(n * out_sample);
  std::vector<T> col(g.patch() * g.positions());
  detail::ConstMatrixMap<T> wmat(weight.data().data(), o, g.patch());
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(input.data().data() + s * in_sample, g, col.data());
    detail::ConstMatrixMap<T> cmat(col.data(), g.patch(), g.positions());
    detail::MatrixMap<T> omat(out.data() + s * out_sample, o, g.positions());
    omat.noalias() = wmat * cmat;
    if (bias.defined()) {
      for (std::size_t k = 0; k < o; ++k) omat.row(k).array() += bias[k];
    }
  }
  detail::ensure_finite<T>(out, "conv2d");

  std::vector<std::shared_ptr<TensorNode<T>>> inputs{input.node(), weight.node()};
  if (bias.defined()) inputs.push_back(bias.node());
  return Tensor<T>::from_op(
      {n, o, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [g, n, o, in_sample, out_sample](TensorNode<T>& self) {
        auto& x = *self.inputs[0];
        auto& wt = *self.inputs[1];
        detail::ConstMatrixMap<T> wmat(wt.data.data(), o, g.patch());
        std::vector<T> col(g.patch() * g.positions());
        std::vector<T> dcol(g.patch() * g.positions());
        for (std::size_t s = 0; s < n; ++s) {
          detail::ConstMatrixMap<T> dout(self.grad.data() + s * out_sample, o, g.positions());
          if (wt.requires_grad) {
            detail::im2col(x.data.data() + s * in_sample, g, col.data());
            detail::ConstMatrixMap<T> cmat(col.data(), g.patch(), g.positions());
            detail::MatrixMap<T> dw(wt.grad_buffer().data(), o, g.patch());
            dw.noalias() += dout * cmat.transpose();
          }
          if (x.requires_grad) {
            detail::MatrixMap<T> dc(dcol.data(), g.patch(), g.positions());
            dc.noalias() = wmat.transpose() * dout;
            detail::col2im_add(dcol.data(), g, x.grad_buffer().data() + s * in_sample);
          }
          if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
            auto& db = self.inputs[2]->grad_buffer();
            for (std::size_t k = 0; k < o; ++k) {
              double acc = 0.0;
              for (std::size_t p = 0; p < g.positions(); ++p) acc += dout(k, p);
              db[k] += static_cast<T>(acc);
            }
          }
        }
      });
}

/// Batch normalization over N,H,W per channel. Train mode normalizes with
/// batch statistics and, when running buffers are given, folds the batch
/// mean and unbiased variance into them with the momentum rule.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tensor<T> running_mean, Tensor<T> running_var, Mode mode, double momentum,
                       double epsilon) {
  using detail::require;
  const std::string op = "batch_norm2d";
  require(input.ndim() == 4, op, "input must be NCHW, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  require(gamma.numel() == c && beta.numel() == c, op,
          "gamma/beta must have " + std::to_string(c) + " entries");
  if (!(epsilon > 0.0)) throw ValueError("batch_norm2d: epsilon must be positive");
  if (mode == Mode::eval && (!running_mean.defined() || !running_var.defined())) {
    throw ValueError("batch_norm2d: eval mode needs initialized running statistics");
  }
  for (const Tensor<T>* stat : {&running_mean, &running_var}) {
    if (stat->defined()) require(stat->numel() == c, op, "running statistics must have " + std::to_string(c) + " entries");
  }

  const std::size_t count = n * hw;
  std::vector<double> mean(c), invstd(c);
  auto x = input.data();
  if (mode == Mode::train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* p = x.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* p = x.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(var + epsilon);
      if (running_mean.defined()) {
        auto rm = running_mean.mutable_data();
        auto rv = running_var.mutable_data();
        const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
        rm[ch] = static_cast<T>((1.0 - momentum) * rm[ch] + momentum * mu);
        rv[ch] = static_cast<T>((1.0 - momentum) * rv[ch] + momentum * unbiased);
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      invstd[ch] = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + epsilon);
    }
  }

  std::vector<T> out(x.size());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * hw;
      const double g = gamma[ch], b = beta[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        out[base + i] = static_cast<T>(g * (x[base + i] - mean[ch]) * invstd[ch] + b);
      }
    }
  }
  detail::ensure_finite<T>(out, "batch_norm2d");

  return Tensor<T>::from_op(
      input.shape(), std::move(out), {input.node(), gamma.node(), beta.node()},
      [n, c, hw, count, mode, mean = std::move(mean), invstd = std::move(invstd)](TensorNode<T>& self) {
        auto& xin = *self.inputs[0];
        auto& gm = *self.inputs[1];
        auto& bt = *self.inputs[2];
        const auto& dy = self.grad;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double xhat = (xin.data[base + i] - mean[ch]) * invstd[ch];
              sum_dy += dy[base + i];
              sum_dy_xhat += dy[base + i] * xhat;
            }
          }
          if (gm.requires_grad) gm.grad_buffer()[ch] += static_cast<T>(sum_dy_xhat);
          if (bt.requires_grad) bt.grad_buffer()[ch] += static_cast<T>(sum_dy);
          if (!xin.requires_grad) continue;
          auto& dx = xin.grad_buffer();
          const double scale = gm.data[ch] * invstd[ch];
          const double m = static_cast<double>(count);
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (mode == Mode::eval) {
                dx[base + i] += static_cast<T>(scale * dy[base + i]);
              } else {
                const double xhat = (xin.data[base + i] - mean[ch]) * invstd[ch];
                dx[base + i] += static_cast<T>(scale / m * (m * dy[base + i] - sum_dy - xhat * sum_dy_xhat));
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return Tensor<T>::from_op(input.shape(), std::move(out), {input.node()}, [](TensorNode<T>& self) {
    auto& in = *self.inputs[0];
    auto& dx = in.grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (in.data[i] > T{0}) dx[i] += self.grad[i];
    }
  });
}

/// Windowed maximum with -inf padding. Gradient goes to the first row-major
/// argmax of each window.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t kernel, std::size_t stride, std::size_t padding) {
  using detail::require;
  const std::string op = "max_pool2d";
  require(input.ndim() == 4, op, "input must be NCHW, got " + shape_str(input.shape()));
  require(kernel >= 1 && stride >= 1, op, "kernel and stride must be positive");
  require(2 * padding <= kernel, op, "padding must be at most half the kernel size");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(h + 2 * padding >= kernel && w + 2 * padding >= kernel, op,
          "window " + std::to_string(kernel) + " larger than padded input " + std::to_string(h + 2 * padding) +
              "x" + std::to_string(w + 2 * padding));
  const std::size_t oh = (h + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kernel) / stride + 1;

  auto x = input.data();
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = x.data() + plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t where = 0;
        bool found = false;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * stride + ki) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * stride + kj) - pad;
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(xx);
            if (!found || src[idx] > best) {
              best = src[idx];
              where = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (plane * oh + i) * ow + j;
        out[o] = best;
        argmax[o] = plane * h * w + where;
      }
    }
  }
  detail::ensure_finite<T>(out, "max_pool2d");

  return Tensor<T>::from_op({n, c, oh, ow}, std::move(out), {input.node()},
                            [argmax = std::move(argmax)](TensorNode<T>& self) {
                              auto& dx = self.inputs[0]->grad_buffer();
                              for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += self.grad[o];
                            });
}

template <typename T>
Tensor<T> global_avg_pool2d(const Tensor<T>& input) {
  detail::require(input.ndim() == 4, "global_avg_pool2d", "input must be NCHW, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  auto x = input.data();
  std::vector<T> out(n * c);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += x[plane * hw + i];
    out[plane] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return Tensor<T>::from_op({n, c}, std::move(out), {input.node()}, [hw](TensorNode<T>& self) {
    auto& dx = self.inputs[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t plane = 0; plane < self.grad.size(); ++plane) {
      const T g = static_cast<T>(self.grad[plane] * inv);
      for (std::size_t i = 0; i < hw; ++i) dx[plane * hw + i] += g;
    }
  });
}

/// input (N x F) times weight (K x F) transposed, plus bias (K). `bias` may be
/// undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  using detail::require;
  const std::string op = "linear";
  require(input.ndim() == 2, op, "input must be N x F, got " + shape_str(input.shape()));
  require(weight.ndim() == 2, op, "weight must be K x F, got " + shape_str(weight.shape()));
  const std::size_t n = input.dim(0), f = input.dim(1), k = weight.dim(0);
  require(weight.dim(1) == f, op,
          "input has " + std::to_string(f) + " features but weight expects " + std::to_string(weight.dim(1)));
  if (bias.defined()) {
    require(bias.ndim() == 1 && bias.dim(0) == k, op,
            "bias must have shape [" + std::to_string(k) + "], got " + shape_str(bias.shape()));
  }

  std::vector<T> out(n * k);
  detail::ConstMatrixMap<T> xm(input.data().data(), n, f);
  detail::ConstMatrixMap<T> wm(weight.data().data(), k, f);
  detail::MatrixMap<T> om(out.data(), n, k);
  om.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) om(r, j) += bias[j];
    }
  }
  detail::ensure_finite<T>(out, "linear");

  std::vector<std::shared_ptr<TensorNode<T>>> inputs{input.node(), weight.node()};
  if (bias.defined()) inputs.push_back(bias.node());
  return Tensor<T>::from_op({n, k}, std::move(out), std::move(inputs), [n, f, k](TensorNode<T>& self) {
    auto& x = *self.inputs[0];
    auto& wt = *self.inputs[1];
    detail::ConstMatrixMap<T> dout(self.grad.data(), n, k);
    if (x.requires_grad) {
      detail::MatrixMap<T> dx(x.grad_buffer().data(), n, f);
      dx.noalias() += dout * detail::ConstMatrixMap<T>(wt.data.data(), k, f);
    }
    if (wt.requires_grad) {
      detail::MatrixMap<T> dw(wt.grad_buffer().data(), k, f);
      dw.noalias() += dout.transpose() * detail::ConstMatrixMap<T>(x.data.data(), n, f);
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      auto& db = self.inputs[2]->grad_buffer();
      for (std::size_t j = 0; j < k; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < n; ++r) acc += dout(r, j);
        db[j] += static_cast<T>(acc);
      }
    }
  });
}

/// Weighted-mean cross-entropy:
///   sum_i w[y_i] * -log softmax(logits_i)[y_i]  /  sum_i w[y_i]
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                                 const Tensor<T>& class_weights) {
  using detail::require;
  const std::string op = "weighted_cross_entropy";
  require(logits.ndim() == 2, op, "logits must be N x K, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  require(labels.size() == n, op, std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  require(class_weights.numel() == k, op,
          "expected " + std::to_string(k) + " class weights, got " + std::to_string(class_weights.numel()));
  for (std::size_t j = 0; j < k; ++j) {
    if (!(class_weights[j] > T{0})) throw ValueError(op + ": class weights must be strictly positive");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ValueError(op + ": label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside [0," + std::to_string(k) + ")");
    }
  }

  auto z = logits.data();
  std::vector<double> probs(n * k);
  double weighted = 0.0, total_weight = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data() + i * k;
    const double peak = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - peak);
    const double lse = peak + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
    const double wy = class_weights[static_cast<std::size_t>(labels[i])];
    weighted += wy * (lse - row[labels[i]]);
    total_weight += wy;
  }
  const double loss = weighted / total_weight;
  if (!std::isfinite(loss)) throw NumericError(op + " produced a non-finite loss");

  std::vector<int> label_copy(labels.begin(), labels.end());
  std::vector<double> sample_weight(n);
  for (std::size_t i = 0; i < n; ++i) sample_weight[i] = class_weights[static_cast<std::size_t>(labels[i])] / total_weight;
  return Tensor<T>::from_op(
      Shape{}, std::vector<T>{static_cast<T>(loss)}, {logits.node()},
      [n, k, probs = std::move(probs), label_copy = std::move(label_copy),
       sample_weight = std::move(sample_weight)](TensorNode<T>& self) {
        auto& dz = self.inputs[0]->grad_buffer();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const double target = static_cast<int>(j) == label_copy[i] ? 1.0 : 0.0;
            dz[i * k + j] += static_cast<T>(g * sample_weight[i] * (probs[i * k + j] - target));
          }
        }
      });
}

template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                 const Tensor<T>& class_weights) {
  return weighted_cross_entropy(logits, std::span<const int>(labels), class_weights);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  detail::ensure_finite<T>(out, "add");
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()}, [](TensorNode<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& d = in->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  detail::ensure_finite<T>(out, "mul");
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()}, [](TensorNode<T>& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) {
      auto& d = x.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * y.data[i];
    }
    if (y.requires_grad) {
      auto& d = y.grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * x.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  detail::ensure_finite<T>(out, "scale");
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node()}, [factor](TensorNode<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double acc = 0.0;
  for (T v : a.data()) acc += v;
  return Tensor<T>::from_op(Shape{}, std::vector<T>{static_cast<T>(acc)}, {a.node()}, [](TensorNode<T>& self) {
    auto& d = self.inputs[0]->grad_buffer();
    for (auto& v : d) v += self.grad[0];
  });
}

/// Row-wise softmax of an N x K tensor (no gradient).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  detail::require(logits.ndim() == 2, "softmax", "logits must be N x K, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto z = logits.data();
  std::vector<T> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data() + i * k;
    const double peak = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - peak);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = static_cast<T>(std::exp(row[j] - peak) / sum);
  }
  return Tensor<T>(logits.shape(), std::move(out));
}

/// Row-wise argmax of an N x K tensor; ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  detail::require(logits.ndim() == 2, "argmax_rows", "logits must be N x K, got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace exprnet
