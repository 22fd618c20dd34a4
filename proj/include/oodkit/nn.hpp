/**
 * Copyright 2026 The oodkit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Templated layer engine behind the network module. float drives training and
// inference; double is used for finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "oodkit/error.hpp"
#include "oodkit/network.hpp"
#include "oodkit/tensor.hpp"

namespace oodkit::net {

template <class T>
struct Batch {
  int n = 0;
  Geometry g;
  std::vector<T> data;

  Batch() = default;
  Batch(int n_, Geometry g_) : n(n_), g(g_), data(static_cast<std::size_t>(n_) * g_.numel(), T(0)) {}

  std::size_t stride() const { return static_cast<std::size_t>(g.numel()); }
  T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * stride(); }
  const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * stride(); }
};

template <class T>
struct Param {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;
};

namespace kernels {

inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
inline int ceil_div(int a, int b) { return -floor_div(-a, b); }

/// Output columns q with 0 <= q*stride + kw - pad < w.
inline void col_range(int w, int ow, int kw, int stride, int pad, int& lo, int& hi) {
  lo = std::max(0, ceil_div(pad - kw, stride));
  hi = std::min(ow, floor_div(w - 1 + pad - kw, stride) + 1);
}

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// y (oc x oh x ow) must hold the bias; accumulates in A with the summation
/// order input channel, kernel row, kernel column.
template <class A, class X, class W>
void conv_forward(const X* x, int c, int h, int w, const W* wt, int oc, int k, int stride, int pad, int oh,
                  int ow, A* y) {
  for (int o = 0; o < oc; ++o) {
    A* yo = y + static_cast<std::size_t>(o) * oh * ow;
    for (int i = 0; i < c; ++i) {
      const X* xi = x + static_cast<std::size_t>(i) * h * w;
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const A wv = static_cast<A>(wt[((static_cast<std::size_t>(o) * c + i) * k + kh) * k + kw]);
          int lo, hi;
          col_range(w, ow, kw, stride, pad, lo, hi);
          for (int r = 0; r < oh; ++r) {
            const int ir = r * stride + kh - pad;
            if (ir < 0 || ir >= h) continue;
            const X* xr = xi + static_cast<std::size_t>(ir) * w + kw - pad;
            A* yr = yo + static_cast<std::size_t>(r) * ow;
            for (int q = lo; q < hi; ++q) yr[q] += wv * static_cast<A>(xr[q * stride]);
          }
        }
      }
    }
  }
}

/// Accumulates dx (if non-null), dw and db from gy.
template <class T>
void conv_backward(const T* x, int c, int h, int w, const T* wt, int oc, int k, int stride, int pad, int oh,
                   int ow, const T* gy, T* dx, T* dw, T* db) {
  for (int o = 0; o < oc; ++o) {
    const T* go = gy + static_cast<std::size_t>(o) * oh * ow;
    T bsum = 0;
    for (int j = 0; j < oh * ow; ++j) bsum += go[j];
    db[o] += bsum;
    for (int i = 0; i < c; ++i) {
      const T* xi = x + static_cast<std::size_t>(i) * h * w;
      T* dxi = dx ? dx + static_cast<std::size_t>(i) * h * w : nullptr;
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const std::size_t widx = ((static_cast<std::size_t>(o) * c + i) * k + kh) * k + kw;
          const T wv = wt[widx];
          int lo, hi;
          col_range(w, ow, kw, stride, pad, lo, hi);
          T acc = 0;
          for (int r = 0; r < oh; ++r) {
            const int ir = r * stride + kh - pad;
            if (ir < 0 || ir >= h) continue;
            const std::size_t off = static_cast<std::size_t>(ir) * w + kw - pad;
            const T* gr = go + static_cast<std::size_t>(r) * ow;
            const T* xr = xi + off;
            for (int q = lo; q < hi; ++q) acc += gr[q] * xr[q * stride];
            if (dxi) {
              T* dr = dxi + off;
              for (int q = lo; q < hi; ++q) dr[q * stride] += wv * gr[q];
            }
          }
          dw[widx] += acc;
        }
      }
    }
  }
}

/// y[o] = b[o] + sum_i w[o][i] x[i], accumulated in A.
template <class A, class X, class W, class B>
void dense_forward(const X* x, int in, const W* wt, const B* b, int out, A* y) {
  for (int o = 0; o < out; ++o) {
    A acc = static_cast<A>(b[o]);
    const W* wr = wt + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += static_cast<A>(wr[i]) * static_cast<A>(x[i]);
    y[o] = acc;
  }
}

}  // namespace kernels

template <class T>
class Layer {
 public:
  Layer(Geometry in, Geometry out) : in_(in), out_(out) {}
  virtual ~Layer() = default;

  const Geometry& in_geometry() const { return in_; }
  const Geometry& out_geometry() const { return out_; }

  virtual LayerKind kind() const = 0;
  /// Stateless pass; BatchNorm uses running statistics.
  virtual Batch<T> infer(const Batch<T>& x) const = 0;
  /// Caching pass for backward(); BatchNorm uses batch statistics when training.
  virtual Batch<T> forward(const Batch<T>& x, bool training) {
    (void)training;
    return infer(x);
  }
  /// Gradient w.r.t. the input of the last forward(); accumulates into params.
  virtual Batch<T> backward(const Batch<T>& gy) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }

 protected:
  void check_input(const Batch<T>& x) const {
    if (x.g.numel() != in_.numel()) {
      throw ShapeError("layer " + std::string(to_string(kind())) + " expects " + to_string(in_) + ", got " +
                       to_string(x.g));
    }
  }

  Geometry in_;
  Geometry out_;
};

template <class T>
Param<T> make_param(std::string name, Shape shape, bool trainable = true) {
  Param<T> p;
  p.name = std::move(name);
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  p.shape = std::move(shape);
  p.value.assign(n, T(0));
  p.grad.assign(n, T(0));
  p.trainable = trainable;
  return p;
}

template <class T>
class Conv2DLayer final : public Layer<T> {
 public:
  Conv2DLayer(const std::string& prefix, Geometry in, const LayerSpec& s)
      : Layer<T>(in, {s.out_channels, kernels::conv_out(in.h, s.kernel, s.stride, s.padding),
                      kernels::conv_out(in.w, s.kernel, s.stride, s.padding)}),
        k_(s.kernel),
        stride_(s.stride),
        pad_(s.padding),
        w_(make_param<T>(prefix + ".w", {s.out_channels, in.c, s.kernel, s.kernel})),
        b_(make_param<T>(prefix + ".b", {s.out_channels})) {}

  LayerKind kind() const override { return LayerKind::kConv2D; }

  Batch<T> infer(const Batch<T>& x) const override {
    this->check_input(x);
    const Geometry& i = this->in_;
    const Geometry& o = this->out_;
    Batch<T> y(x.n, o);
    for (int n = 0; n < x.n; ++n) {
      T* yn = y.sample(n);
      for (int c = 0; c < o.c; ++c) std::fill(yn + static_cast<std::size_t>(c) * o.h * o.w,
                                              yn + static_cast<std::size_t>(c + 1) * o.h * o.w, b_.value[c]);
      kernels::conv_forward<T>(x.sample(n), i.c, i.h, i.w, w_.value.data(), o.c, k_, stride_, pad_, o.h, o.w, yn);
    }
    return y;
  }

  Batch<T> forward(const Batch<T>& x, bool) override {
    x_ = x;
    return infer(x);
  }

  Batch<T> backward(const Batch<T>& gy) override {
    const Geometry& i = this->in_;
    const Geometry& o = this->out_;
    Batch<T> gx(x_.n, x_.g);
    for (int n = 0; n < x_.n; ++n) {
      kernels::conv_backward<T>(x_.sample(n), i.c, i.h, i.w, w_.value.data(), o.c, k_, stride_, pad_, o.h, o.w,
                                gy.sample(n), gx.sample(n), w_.grad.data(), b_.grad.data());
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&w_, &b_}; }

 private:
  int k_, stride_, pad_;
  Param<T> w_, b_;
  Batch<T> x_;
};

template <class T>
class DenseLayer final : public Layer<T> {
 public:
  DenseLayer(const std::string& prefix, Geometry in, int out_dim)
      : Layer<T>(in, {out_dim, 1, 1}),
        w_(make_param<T>(prefix + ".w", {out_dim, in.numel()})),
        b_(make_param<T>(prefix + ".b", {out_dim})) {}

  LayerKind kind() const override { return LayerKind::kDense; }

  Batch<T> infer(const Batch<T>& x) const override {
    this->check_input(x);
    const int in = static_cast<int>(this->in_.numel());
    const int out = this->out_.c;
    Batch<T> y(x.n, this->out_);
    for (int n = 0; n < x.n; ++n) {
      kernels::dense_forward<T>(x.sample(n), in, w_.value.data(), b_.value.data(), out, y.sample(n));
    }
    return y;
  }

  Batch<T> forward(const Batch<T>& x, bool) override {
    x_ = x;
    return infer(x);
  }

  Batch<T> backward(const Batch<T>& gy) override {
    const int in = static_cast<int>(this->in_.numel());
    const int out = this->out_.c;
    Batch<T> gx(x_.n, x_.g);
    for (int n = 0; n < x_.n; ++n) {
      const T* xn = x_.sample(n);
      const T* gn = gy.sample(n);
      T* dxn = gx.sample(n);
      for (int o = 0; o < out; ++o) {
        const T g = gn[o];
        b_.grad[o] += g;
        T* dw = w_.grad.data() + static_cast<std::size_t>(o) * in;
        const T* wr = w_.value.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
          dw[i] += g * xn[i];
          dxn[i] += g * wr[i];
        }
      }
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&w_, &b_}; }

 private:
  Param<T> w_, b_;
  Batch<T> x_;
};

template <class T>
class ReLULayer final : public Layer<T> {
 public:
  explicit ReLULayer(Geometry g) : Layer<T>(g, g) {}
  LayerKind kind() const override { return LayerKind::kReLU; }

  Batch<T> infer(const Batch<T>& x) const override {
    this->check_input(x);
    Batch<T> y = x;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    return y;
  }

  Batch<T> forward(const Batch<T>& x, bool) override {
    y_ = infer(x);
    return y_;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    Batch<T> gx = gy;
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
      if (!(y_.data[i] > T(0))) gx.data[i] = T(0);
    }
    return gx;
  }

 private:
  Batch<T> y_;
};

template <class T>
class MaxPoolLayer final : public Layer<T> {
 public:
  MaxPoolLayer(Geometry in, int k) : Layer<T>(in, {in.c, in.h / k, in.w / k}), k_(k) {}
  LayerKind kind() const override { return LayerKind::kMaxPool2D; }

  Batch<T> infer(const Batch<T>& x) const override {
    std::vector<std::size_t> idx;
    return run(x, idx);
  }

  Batch<T> forward(const Batch<T>& x, bool) override {
    in_n_ = x.n;
    in_g_ = x.g;
    return run(x, argmax_);
  }

  Batch<T> backward(const Batch<T>& gy) override {
    Batch<T> gx(in_n_, in_g_);
    for (std::size_t j = 0; j < gy.data.size(); ++j) gx.data[argmax_[j]] += gy.data[j];
    return gx;
  }

 private:
  Batch<T> run(const Batch<T>& x, std::vector<std::size_t>& argmax) const {
    this->check_input(x);
    const Geometry& i = this->in_;
    const Geometry& o = this->out_;
    Batch<T> y(x.n, o);
    argmax.assign(y.data.size(), 0);
    std::size_t j = 0;
    for (int n = 0; n < x.n; ++n) {
      const std::size_t base = static_cast<std::size_t>(n) * x.stride();
      for (int c = 0; c < o.c; ++c) {
        for (int r = 0; r < o.h; ++r) {
          for (int q = 0; q < o.w; ++q, ++j) {
            std::size_t best = base + (static_cast<std::size_t>(c) * i.h + r * k_) * i.w + q * k_;
            for (int a = 0; a < k_; ++a) {
              for (int b = 0; b < k_; ++b) {
                const std::size_t at = base + (static_cast<std::size_t>(c) * i.h + r * k_ + a) * i.w + q * k_ + b;
                if (x.data[at] > x.data[best]) best = at;
              }
            }
            y.data[j] = x.data[best];
            argmax[j] = best;
          }
        }
      }
    }
    return y;
  }

  int k_;
  int in_n_ = 0;
  Geometry in_g_;
  std::vector<std::size_t> argmax_;
};

/// Flatten and Reshape: a geometry relabeling.
template <class T>
class ReshapeLayer final : public Layer<T> {
 public:
  ReshapeLayer(Geometry in, Geometry out, LayerKind kind) : Layer<T>(in, out), kind_(kind) {}
  LayerKind kind() const override { return kind_; }

  Batch<T> infer(const Batch<T>& x) const override {
    this->check_input(x);
    Batch<T> y = x;
    y.g = this->out_;
    return y;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    Batch<T> gx = gy;
    gx.g = this->in_;
    return gx;
  }

 private:
  LayerKind kind_;
};

/// Nearest-neighbour resampling to a fixed size (center-aligned).
template <class T>
class UpsampleLayer final : public Layer<T> {
 public:
  UpsampleLayer(Geometry in, int h, int w) : Layer<T>(in, {in.c, h, w}) {
    for (int r = 0; r < h; ++r) rows_.push_back(static_cast<int>((2LL * r + 1) * in.h / (2LL * h)));
    for (int q = 0; q < w; ++q) cols_.push_back(static_cast<int>((2LL * q + 1) * in.w / (2LL * w)));
  }
  LayerKind kind() const override { return LayerKind::kUpsample; }

  Batch<T> infer(const Batch<T>& x) const override {
    this->check_input(x);
    const Geometry& i = this->in_;
    const Geometry& o = this->out_;
    Batch<T> y(x.n, o);
    for (int n = 0; n < x.n; ++n) {
      const T* xs = x.sample(n);
      T* ys = y.sample(n);
      for (int c = 0; c < o.c; ++c) {
        for (int r = 0; r < o.h; ++r) {
          const T* xr = xs + (static_cast<std::size_t>(c) * i.h + rows_[r]) * i.w;
          T* yr = ys + (static_cast<std::size_t>(c) * o.h + r) * o.w;
          for (int q = 0; q < o.w; ++q) yr[q] = xr[cols_[q]];
        }
      }
    }
    return y;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    const Geometry& i = this->in_;
    const Geometry& o = this->out_;
    Batch<T> gx(gy.n, i);
    for (int n = 0; n < gy.n; ++n) {
      const T* gs = gy.sample(n);
      T* xs = gx.sample(n);
      for (int c = 0; c < o.c; ++c) {
        for (int r = 0; r < o.h; ++r) {
          T* xr = xs + (static_cast<std::size_t>(c) * i.h + rows_[r]) * i.w;
          const T* gr = gs + (static_cast<std::size_t>(c) * o.h + r) * o.w;
          for (int q = 0; q < o.w; ++q) xr[cols_[q]] += gr[q];
        }
      }
    }
    return gx;
  }

 private:
  std::vector<int> rows_, cols_;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <class T>
class BatchNormLayer final : public Layer<T> {
 public:
  BatchNormLayer(const std::string& prefix, Geometry g)
      : Layer<T>(g, g),
        gamma_(make_param<T>(prefix + ".gamma", {g.c})),
        beta_(make_param<T>(prefix + ".beta", {g.c})),
        mean_(make_param<T>(prefix + ".running_mean", {g.c}, false)),
        var_(make_param<T>(prefix + ".running_var", {g.c}, false)) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    std::fill(var_.value.begin(), var_.value.end(), T(1));
  }
  LayerKind kind() const override { return LayerKind::kBatchNorm2D; }

  Batch<T> infer(const Batch<T>& x) const override {
    this->check_input(x);
    const Geometry& g = this->in_;
    const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
    Batch<T> y(x.n, g);
    for (int c = 0; c < g.c; ++c) {
      const T inv = T(1) / std::sqrt(var_.value[c] + T(kBatchNormEps));
      const T scale = gamma_.value[c] * inv;
      const T shift = beta_.value[c] - mean_.value[c] * scale;
      for (int n = 0; n < x.n; ++n) {
        const T* xs = x.sample(n) + c * plane;
        T* ys = y.sample(n) + c * plane;
        for (std::size_t j = 0; j < plane; ++j) ys[j] = xs[j] * scale + shift;
      }
    }
    return y;
  }

  Batch<T> forward(const Batch<T>& x, bool training) override {
    if (!training) return infer(x);
    this->check_input(x);
    const Geometry& g = this->in_;
    const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
    const double m = static_cast<double>(plane) * x.n;
    xhat_ = Batch<T>(x.n, g);
    inv_std_.assign(g.c, T(0));
    Batch<T> y(x.n, g);
    for (int c = 0; c < g.c; ++c) {
      T mean = 0;
      for (int n = 0; n < x.n; ++n) {
        const T* xs = x.sample(n) + c * plane;
        for (std::size_t j = 0; j < plane; ++j) mean += xs[j];
      }
      mean /= static_cast<T>(m);
      T var = 0;
      for (int n = 0; n < x.n; ++n) {
        const T* xs = x.sample(n) + c * plane;
        for (std::size_t j = 0; j < plane; ++j) var += (xs[j] - mean) * (xs[j] - mean);
      }
      const T unbiased = m > 1 ? var / static_cast<T>(m - 1) : T(0);
      var /= static_cast<T>(m);
      const T inv = T(1) / std::sqrt(var + T(kBatchNormEps));
      inv_std_[c] = inv;
      for (int n = 0; n < x.n; ++n) {
        const T* xs = x.sample(n) + c * plane;
        T* hs = xhat_.sample(n) + c * plane;
        T* ys = y.sample(n) + c * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          hs[j] = (xs[j] - mean) * inv;
          ys[j] = gamma_.value[c] * hs[j] + beta_.value[c];
        }
      }
      const T mom = T(kBatchNormMomentum);
      mean_.value[c] = (T(1) - mom) * mean_.value[c] + mom * mean;
      var_.value[c] = (T(1) - mom) * var_.value[c] + mom * unbiased;
    }
    return y;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    const Geometry& g = this->in_;
    const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
    const int nb = xhat_.n;
    const T m = static_cast<T>(plane * nb);
    Batch<T> gx(nb, g);
    for (int c = 0; c < g.c; ++c) {
      T sum_g = 0, sum_gh = 0;
      for (int n = 0; n < nb; ++n) {
        const T* gs = gy.sample(n) + c * plane;
        const T* hs = xhat_.sample(n) + c * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          sum_g += gs[j];
          sum_gh += gs[j] * hs[j];
        }
      }
      gamma_.grad[c] += sum_gh;
      beta_.grad[c] += sum_g;
      const T k = gamma_.value[c] * inv_std_[c] / m;
      for (int n = 0; n < nb; ++n) {
        const T* gs = gy.sample(n) + c * plane;
        const T* hs = xhat_.sample(n) + c * plane;
        T* out = gx.sample(n) + c * plane;
        for (std::size_t j = 0; j < plane; ++j) out[j] = k * (m * gs[j] - sum_g - hs[j] * sum_gh);
      }
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&gamma_, &beta_, &mean_, &var_}; }

 private:
  Param<T> gamma_, beta_, mean_, var_;
  Batch<T> xhat_;
  std::vector<T> inv_std_;
};

/// Geometry after applying `s` to `in`; throws ShapeError when invalid.
Geometry layer_output(const LayerSpec& s, const Geometry& in);

template <class T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& s, const Geometry& in, const std::string& prefix) {
  const Geometry out = layer_output(s, in);
  switch (s.kind) {
    case LayerKind::kConv2D: return std::make_unique<Conv2DLayer<T>>(prefix, in, s);
    case LayerKind::kDense: return std::make_unique<DenseLayer<T>>(prefix, in, s.out_dim);
    case LayerKind::kReLU: return std::make_unique<ReLULayer<T>>(in);
    case LayerKind::kMaxPool2D: return std::make_unique<MaxPoolLayer<T>>(in, s.kernel);
    case LayerKind::kBatchNorm2D: return std::make_unique<BatchNormLayer<T>>(prefix, in);
    case LayerKind::kFlatten:
    case LayerKind::kReshape: return std::make_unique<ReshapeLayer<T>>(in, out, s.kind);
    case LayerKind::kUpsample: return std::make_unique<UpsampleLayer<T>>(in, s.h, s.w);
  }
  throw ArgumentError("unhandled layer kind");
}

template <class T>
T decode_variance(VarianceParam p, T h) {
  switch (p) {
    case VarianceParam::kLogVar: return std::exp(h);
    case VarianceParam::kNegLogVar: return std::exp(-h);
    case VarianceParam::kVar: return std::max(h, T(kVarFloor));
  }
  return h;
}

/// d sigma^2 / d h at h.
template <class T>
T variance_slope(VarianceParam p, T h) {
  switch (p) {
    case VarianceParam::kLogVar: return std::exp(h);
    case VarianceParam::kNegLogVar: return -std::exp(-h);
    case VarianceParam::kVar: return h > T(kVarFloor) ? T(1) : T(0);
  }
  return T(0);
}

/// Encoder body, mu/variance heads and mirrored decoder with explicit
/// forward/backward for training.
template <class T>
class VaeGraph {
 public:
  struct Posterior {
    Batch<T> mu;
    Batch<T> h;    // variance head output (after its ReLU when enabled)
    Batch<T> var;  // sigma^2
  };

  /// An empty weight map leaves parameters at their defaults (zeros, unit
  /// BatchNorm scale and running variance).
  VaeGraph(const ModelSpec& spec, const std::map<std::string, Tensor>& weights) : spec_(spec) {
    spec_.validate();
    Geometry g = spec_.input;
    for (std::size_t i = 0; i < spec_.encoder.size(); ++i) {
      body_.push_back(make_layer<T>(spec_.encoder[i], g, "enc." + std::to_string(i)));
      g = body_.back()->out_geometry();
    }
    mu_ = std::make_unique<DenseLayer<T>>("mu", g, spec_.n_latent);
    var_ = std::make_unique<DenseLayer<T>>("var", g, spec_.n_latent);
    if (spec_.variance_relu) var_relu_ = std::make_unique<ReLULayer<T>>(Geometry{spec_.n_latent, 1, 1});
    Geometry d{spec_.n_latent, 1, 1};
    const auto dec = spec_.decoder_layers();
    for (std::size_t i = 0; i < dec.size(); ++i) {
      dec_.push_back(make_layer<T>(dec[i], d, "dec." + std::to_string(i)));
      d = dec_.back()->out_geometry();
    }
    if (!(d == spec_.input)) {
      throw ShapeError("decoder output " + to_string(d) + " does not match input " + to_string(spec_.input));
    }
    if (weights.empty()) return;
    for (Param<T>* p : params()) {
      auto it = weights.find(p->name);
      if (it == weights.end()) throw Error("missing weight tensor '" + p->name + "'");
      if (it->second.shape() != p->shape) {
        throw ShapeError("weight '" + p->name + "' has shape " + shape_to_string(it->second.shape()) +
                         ", expected " + shape_to_string(p->shape));
      }
      const auto v = it->second.to_f32();
      std::transform(v.begin(), v.end(), p->value.begin(), [](float f) { return static_cast<T>(f); });
    }
  }

  const ModelSpec& spec() const { return spec_; }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    auto add = [&](Layer<T>& l) {
      for (Param<T>* p : l.params()) out.push_back(p);
    };
    for (auto& l : body_) add(*l);
    add(*mu_);
    add(*var_);
    for (auto& l : dec_) add(*l);
    return out;
  }

  void zero_grad() {
    for (Param<T>* p : params()) std::fill(p->grad.begin(), p->grad.end(), T(0));
  }

  std::map<std::string, Tensor> export_weights() {
    std::map<std::string, Tensor> out;
    for (Param<T>* p : params()) {
      std::vector<float> v(p->value.begin(), p->value.end());
      out.emplace(p->name, Tensor::f32(p->shape, std::move(v)));
    }
    return out;
  }

  Posterior encode(const Batch<T>& x, bool training) {
    Batch<T> a = x;
    for (auto& l : body_) a = l->forward(a, training);
    Posterior post;
    post.mu = mu_->forward(a, training);
    post.h = var_->forward(a, training);
    if (var_relu_) post.h = var_relu_->forward(post.h, training);
    post.var = post.h;
    for (auto& v : post.var.data) v = decode_variance(spec_.variance, v);
    return post;
  }

  /// Stateless encoder pass. hook(site, activations) runs on the input and
  /// after every layer; sites are "input", "enc.<i>", "mu" and "var".
  template <class Hook>
  Posterior infer(const Batch<T>& x, Hook&& hook) const {
    Batch<T> a = x;
    hook(std::string("input"), a);
    for (std::size_t i = 0; i < body_.size(); ++i) {
      a = body_[i]->infer(a);
      hook("enc." + std::to_string(i), a);
    }
    Posterior post;
    post.mu = mu_->infer(a);
    hook(std::string("mu"), post.mu);
    post.h = var_->infer(a);
    if (var_relu_) post.h = var_relu_->infer(post.h);
    hook(std::string("var"), post.h);
    post.var = post.h;
    for (auto& v : post.var.data) v = decode_variance(spec_.variance, v);
    return post;
  }

  Posterior infer(const Batch<T>& x) const {
    return infer(x, [](const std::string&, Batch<T>&) {});
  }

  Batch<T> infer_decode(const Batch<T>& z) const {
    Batch<T> a = z;
    for (const auto& l : dec_) a = l->infer(a);
    return a;
  }

  Batch<T> decode(const Batch<T>& z, bool training) {
    Batch<T> a = z;
    for (auto& l : dec_) a = l->forward(a, training);
    return a;
  }

  /// Forward pass of the batch-mean loss with reparametrization noise
  /// (n x n_latent). Caches everything backward() needs.
  LossTerms loss(const Batch<T>& x, const std::vector<T>& noise, double beta, Reduction recon) {
    x_ = x;
    beta_ = beta;
    recon_ = recon;
    noise_ = noise;
    post_ = encode(x, true);
    const int n = x.n;
    const int L = spec_.n_latent;
    Batch<T> z(n, {L, 1, 1});
    for (std::size_t j = 0; j < z.data.size(); ++j) {
      z.data[j] = post_.mu.data[j] + std::sqrt(post_.var.data[j]) * noise[j];
    }
    xhat_ = decode(z, true);
    LossTerms t;
    const double pixels = static_cast<double>(x.stride());
    for (int s = 0; s < n; ++s) {
      double se = 0;
      const T* a = x.sample(s);
      const T* b = xhat_.sample(s);
      for (std::size_t j = 0; j < x.stride(); ++j) se += static_cast<double>((b[j] - a[j]) * (b[j] - a[j]));
      t.recon += recon == Reduction::kMean ? se / pixels : se;
      double kl = 0;
      for (int j = 0; j < L; ++j) {
        const double m = post_.mu.sample(s)[j];
        const double v = post_.var.sample(s)[j];
        kl += 0.5 * (m * m + v - std::log(v) - 1.0);
      }
      t.kl += kl;
    }
    t.recon /= n;
    t.kl /= n;
    t.total = t.recon + beta * t.kl;
    return t;
  }

  /// Accumulates parameter gradients of the last loss() call.
  void backward() {
    const int n = x_.n;
    const int L = spec_.n_latent;
    const T norm = static_cast<T>(recon_ == Reduction::kMean ? static_cast<double>(n) * x_.stride() : n);
    Batch<T> g = xhat_;
    for (std::size_t j = 0; j < g.data.size(); ++j) g.data[j] = T(2) * (xhat_.data[j] - x_.data[j]) / norm;
    for (auto it = dec_.rbegin(); it != dec_.rend(); ++it) g = (*it)->backward(g);
    Batch<T> gmu(n, {L, 1, 1});
    Batch<T> gh(n, {L, 1, 1});
    const T kb = static_cast<T>(beta_ / n);
    for (std::size_t j = 0; j < gmu.data.size(); ++j) {
      const T mu = post_.mu.data[j];
      const T var = post_.var.data[j];
      gmu.data[j] = g.data[j] + kb * mu;
      const T gvar = g.data[j] * noise_[j] / (T(2) * std::sqrt(var)) + kb * T(0.5) * (T(1) - T(1) / var);
      gh.data[j] = gvar * variance_slope(spec_.variance, post_.h.data[j]);
    }
    if (var_relu_) gh = var_relu_->backward(gh);
    Batch<T> gb = mu_->backward(gmu);
    const Batch<T> gb2 = var_->backward(gh);
    for (std::size_t j = 0; j < gb.data.size(); ++j) gb.data[j] += gb2.data[j];
    for (auto it = body_.rbegin(); it != body_.rend(); ++it) gb = (*it)->backward(gb);
  }

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer<T>>> body_;
  std::unique_ptr<DenseLayer<T>> mu_, var_;
  std::unique_ptr<ReLULayer<T>> var_relu_;
  std::vector<std::unique_ptr<Layer<T>>> dec_;

  Batch<T> x_, xhat_;
  Posterior post_;
  std::vector<T> noise_;
  double beta_ = 1.0;
  Reduction recon_ = Reduction::kMean;
};

}  // namespace oodkit::net
