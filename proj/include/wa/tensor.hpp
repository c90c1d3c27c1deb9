// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file tensor.hpp
 * @brief Dense row-major N-D tensor and the math primitives built on it.
 *
 * Activations, weights and gradients all share this one value type. The
 * heavy lifting (matmul, patch extraction feeding matmul) maps the flat
 * storage into Eigen without copying. Variance is population variance
 * throughout (divisor = element count).
 */

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace wa {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index e : s) {
    if (e <= 0) fail("tensor extent must be positive, got " + std::to_string(e));
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename S>
class Tensor {
 public:
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;
  using ArrayMap = Eigen::Map<Storage>;
  using ConstArrayMap = Eigen::Map<const Storage>;
  using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<MatrixRM>;
  using ConstMatMap = Eigen::Map<const MatrixRM>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = Storage::Zero(shape_numel(shape_));
  }

  Tensor(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
    Index n = shape_numel(shape_);
    if (n != static_cast<Index>(values.size()))
      fail("tensor data length " + std::to_string(values.size()) +
           " does not match shape " + shape_str(shape_));
    data_ = ConstArrayMap(values.data(), n);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, S v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor ones(Shape shape) { return constant(std::move(shape), S(1)); }

  static Tensor scalar(S v) { return Tensor({}, {v}); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index extent(Index d) const { return shape_.at(d); }
  Index size() const { return data_.size(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  /// Scalar accessor for rank-0 / single-element tensors.
  S value() const {
    if (size() != 1) fail("value() on non-scalar tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  // 2-D / 4-D flat-index helpers (row-major).
  S& operator()(Index i, Index j) { return data_[i * shape_[1] + j]; }
  S operator()(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  S& operator()(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  S operator()(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  ArrayMap array() { return ArrayMap(data_.data(), data_.size()); }
  ConstArrayMap array() const { return ConstArrayMap(data_.data(), data_.size()); }

  /// View the flat storage as a rows x cols row-major matrix.
  MatMap mat(Index rows, Index cols) {
    if (rows * cols != size())
      fail("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
           " does not cover tensor of " + std::to_string(size()) + " elements");
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap mat(Index rows, Index cols) const {
    if (rows * cols != size())
      fail("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
           " does not cover tensor of " + std::to_string(size()) + " elements");
    return ConstMatMap(data_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      fail("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    data_ += o.data_;
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o, "-=");
    data_ -= o.data_;
    return *this;
  }
  Tensor& operator*=(S v) {
    data_ *= v;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, S v) { return a *= v; }
  friend Tensor operator*(S v, Tensor a) { return a *= v; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  void require_same_shape(const Tensor& o, const char* op) const {
    if (!same_shape(o))
      fail(std::string("elementwise ") + op + " requires equal shapes, got " +
           shape_str(shape_) + " vs " + shape_str(o.shape_));
  }

  Shape shape_;
  Storage data_;
};

/// N,C,H,W layout of an activation tensor.
struct Shape4 {
  Index n = 0, c = 0, h = 0, w = 0;

  template <typename S>
  static Shape4 of(const Tensor<S>& t) {
    if (t.rank() != 4)
      fail("expected NCHW tensor, got rank " + std::to_string(t.rank()) +
           " shape " + shape_str(t.shape()));
    return {t.extent(0), t.extent(1), t.extent(2), t.extent(3)};
  }

  Shape vec() const { return {n, c, h, w}; }
};

/// Output extent of a strided convolution; errors when it does not divide.
inline Index conv_out_extent(Index in, Index k, Index stride, Index pad) {
  if (stride < 1) fail("stride must be >= 1");
  if (pad < 0) fail("padding must be >= 0");
  Index span = in + 2 * pad - k;
  if (span < 0)
    fail("kernel " + std::to_string(k) + " does not fit input extent " +
         std::to_string(in) + " with padding " + std::to_string(pad));
  if (span % stride != 0)
    fail("convolution output extent is not integral: (" + std::to_string(in) +
         " + 2*" + std::to_string(pad) + " - " + std::to_string(k) + ") % " +
         std::to_string(stride) + " != 0");
  return span / stride + 1;
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    fail("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
         shape_str(b.shape()));
  if (a.extent(1) != b.extent(0))
    fail("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
         shape_str(b.shape()));
  Tensor<S> out({a.extent(0), b.extent(1)});
  out.mat(a.extent(0), b.extent(1)).noalias() =
      a.mat(a.extent(0), a.extent(1)) * b.mat(b.extent(0), b.extent(1));
  return out;
}

/**
 * Extract convolution patches of one sample into a (C*k*k) x (Ho*Wo) matrix.
 * Column t holds the receptive field of output position t; zero padding.
 */
template <typename S>
void im2col(const Tensor<S>& x, Index n, Index k, Index stride, Index pad,
            typename Tensor<S>::MatMap cols) {
  const Shape4 s = Shape4::of(x);
  const Index ho = conv_out_extent(s.h, k, stride, pad);
  const Index wo = conv_out_extent(s.w, k, stride, pad);
  for (Index c = 0; c < s.c; ++c) {
    for (Index kh = 0; kh < k; ++kh) {
      for (Index kw = 0; kw < k; ++kw) {
        const Index row = (c * k + kh) * k + kw;
        for (Index oh = 0; oh < ho; ++oh) {
          const Index ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= s.h) {
            cols.row(row).segment(oh * wo, wo).setZero();
            continue;
          }
          for (Index ow = 0; ow < wo; ++ow) {
            const Index iw = ow * stride - pad + kw;
            cols(row, oh * wo + ow) =
                (iw < 0 || iw >= s.w) ? S(0) : x(n, c, ih, iw);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add patch columns back into an image.
template <typename S>
void col2im(typename Tensor<S>::ConstMatMap cols, Index n, Index k, Index stride,
            Index pad, Tensor<S>& x) {
  const Shape4 s = Shape4::of(x);
  const Index ho = conv_out_extent(s.h, k, stride, pad);
  const Index wo = conv_out_extent(s.w, k, stride, pad);
  for (Index c = 0; c < s.c; ++c) {
    for (Index kh = 0; kh < k; ++kh) {
      for (Index kw = 0; kw < k; ++kw) {
        const Index row = (c * k + kh) * k + kw;
        for (Index oh = 0; oh < ho; ++oh) {
          const Index ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= s.h) continue;
          for (Index ow = 0; ow < wo; ++ow) {
            const Index iw = ow * stride - pad + kw;
            if (iw < 0 || iw >= s.w) continue;
            x(n, c, ih, iw) += cols(row, oh * wo + ow);
          }
        }
      }
    }
  }
}

/**
 * 2-D convolution: out[n,f,oh,ow] = sum_{c,kh,kw} w[f,c,kh,kw] * patch + b[f].
 * Implemented as patch extraction feeding a matrix product.
 *
 * @param weights rank-4 tensor [Cout, C, k, k] (square kernels).
 * @param bias    optional rank-1 tensor [Cout].
 */
template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& x, const Tensor<S>& weights,
                         const std::optional<Tensor<std::type_identity_t<S>>>& bias,
                         Index stride, Index pad) {
  const Shape4 s = Shape4::of(x);
  if (weights.rank() != 4)
    fail("conv weights must be rank-4 [Cout,C,k,k], got " + shape_str(weights.shape()));
  const Index cout = weights.extent(0);
  const Index k = weights.extent(2);
  if (weights.extent(2) != weights.extent(3))
    fail("conv kernels must be square, got " + shape_str(weights.shape()));
  if (weights.extent(1) != s.c)
    fail("conv weight channels " + std::to_string(weights.extent(1)) +
         " do not match input channels " + std::to_string(s.c));
  if (bias && (bias->rank() != 1 || bias->extent(0) != cout))
    fail("conv bias must be rank-1 [Cout]");
  const Index ho = conv_out_extent(s.h, k, stride, pad);
  const Index wo = conv_out_extent(s.w, k, stride, pad);
  const Index patch = s.c * k * k;

  Tensor<S> out({s.n, cout, ho, wo});
  Tensor<S> cols({patch, ho * wo});
  auto wmat = weights.mat(cout, patch);
  for (Index n = 0; n < s.n; ++n) {
    im2col(x, n, k, stride, pad, cols.mat(patch, ho * wo));
    Eigen::Map<typename Tensor<S>::MatrixRM> outn(out.data() + n * cout * ho * wo,
                                                  cout, ho * wo);
    outn.noalias() = wmat * cols.mat(patch, ho * wo);
    if (bias)
      for (Index f = 0; f < cout; ++f) outn.row(f).array() += (*bias)[f];
  }
  return out;
}

/**
 * Mean and population variance over the given axes (duplicates rejected).
 * Result shape is the input shape with the reduced axes removed; reducing
 * every axis yields rank-0 scalars. Two-pass evaluation.
 */
template <typename S>
std::pair<Tensor<S>, Tensor<S>> reduce_stats(const Tensor<S>& x,
                                             const std::vector<int>& axes) {
  if (axes.empty()) fail("reduce_stats requires at least one axis");
  std::vector<bool> reduced(x.rank(), false);
  for (int a : axes) {
    if (a < 0 || a >= x.rank())
      fail("reduce axis " + std::to_string(a) + " out of range for rank " +
           std::to_string(x.rank()));
    if (reduced[a]) fail("duplicate reduce axis " + std::to_string(a));
    reduced[a] = true;
  }

  Shape out_shape;
  Index count = 1;
  for (Index d = 0; d < x.rank(); ++d) {
    if (reduced[d])
      count *= x.extent(d);
    else
      out_shape.push_back(x.extent(d));
  }

  // Strides of the kept axes within the output tensor.
  std::vector<Index> out_stride(x.rank(), 0);
  Index acc = 1;
  for (Index d = x.rank() - 1; d >= 0; --d) {
    if (!reduced[d]) {
      out_stride[d] = acc;
      acc *= x.extent(d);
    }
  }

  Tensor<S> mean(out_shape), var(out_shape);
  std::vector<Index> idx(x.rank(), 0);
  auto out_index = [&] {
    Index o = 0;
    for (Index d = 0; d < x.rank(); ++d) o += idx[d] * out_stride[d];
    return o;
  };
  auto walk = [&](auto&& visit) {
    std::fill(idx.begin(), idx.end(), 0);
    for (Index flat = 0; flat < x.size(); ++flat) {
      visit(flat, out_index());
      for (Index d = x.rank() - 1; d >= 0; --d) {
        if (++idx[d] < x.extent(d)) break;
        idx[d] = 0;
      }
    }
  };

  walk([&](Index flat, Index o) { mean[o] += x[flat]; });
  mean.array() /= S(count);
  walk([&](Index flat, Index o) {
    S d = x[flat] - mean[o];
    var[o] += d * d;
  });
  var.array() /= S(count);
  return {std::move(mean), std::move(var)};
}

}  // namespace wa
