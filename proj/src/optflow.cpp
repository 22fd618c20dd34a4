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

#include "oodkit/optflow.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include "oodkit/error.hpp"

namespace oodkit::optflow {

FloatImage to_float_gray(const imaging::Image& img) {
  const auto gray = imaging::to_grayscale(img);
  FloatImage out(gray.width(), gray.height());
  std::transform(gray.pixels().begin(), gray.pixels().end(), out.data.begin(),
                 [](std::uint8_t p) { return static_cast<float>(p); });
  return out;
}

void FarnebackParams::validate() const {
  if (window_size < 3 || window_size % 2 == 0) throw ArgumentError("window_size must be odd and >= 3");
  if (iterations < 1) throw ArgumentError("iterations must be >= 1");
  if (pyramid_levels < 1) throw ArgumentError("pyramid_levels must be >= 1");
  if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0)) throw ArgumentError("pyramid_scale must be in (0, 1)");
  if (poly_n < 3 || poly_n % 2 == 0) throw ArgumentError("poly_n must be odd and >= 3");
  if (!(poly_sigma > 0.0)) throw ArgumentError("poly_sigma must be positive");
}

namespace {

std::vector<double> gaussian_kernel(int radius, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable correlation with replicated borders, in place.
void blur(std::vector<float>& plane, int w, int h, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<float> tmp(plane.size());
  for (int y = 0; y < h; ++y) {
    const float* row = plane.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * row[std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      }
      plane[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  }
}

using Mat6 = std::array<std::array<double, 6>, 6>;

Mat6 invert6(Mat6 a) {
  Mat6 inv{};
  for (int i = 0; i < 6; ++i) inv[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
  for (std::size_t col = 0; col < 6; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < 6; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(inv[col], inv[piv]);
    const double d = a[col][col];
    for (std::size_t j = 0; j < 6; ++j) {
      a[col][j] /= d;
      inv[col][j] /= d;
    }
    for (std::size_t r = 0; r < 6; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < 6; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

float sample_bilinear(const std::vector<float>& plane, int w, int h, float x, float y) {
  x = std::clamp(x, 0.0f, static_cast<float>(w - 1));
  y = std::clamp(y, 0.0f, static_cast<float>(h - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const float fx = x - x0;
  const float fy = y - y0;
  auto at = [&](int xx, int yy) { return plane[static_cast<std::size_t>(yy) * w + xx]; };
  return (at(x0, y0) * (1 - fx) + at(x1, y0) * fx) * (1 - fy) + (at(x0, y1) * (1 - fx) + at(x1, y1) * fx) * fy;
}

/// Resample a plane to a new size with bilinear center-aligned sampling.
std::vector<float> resample(const std::vector<float>& plane, int w, int h, int nw, int nh) {
  std::vector<float> out(static_cast<std::size_t>(nw) * nh);
  const float sx = static_cast<float>(w) / nw;
  const float sy = static_cast<float>(h) / nh;
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x)
      out[static_cast<std::size_t>(y) * nw + x] = sample_bilinear(plane, w, h, (x + 0.5f) * sx - 0.5f, (y + 0.5f) * sy - 0.5f);
  return out;
}

}  // namespace

PolyCoeffs polynomial_expansion(const FloatImage& img, int poly_n, double poly_sigma) {
  if (poly_n < 3 || poly_n % 2 == 0) throw ArgumentError("poly_n must be odd and >= 3");
  const int n = poly_n / 2;
  const int w = img.width;
  const int h = img.height;

  std::vector<double> g(static_cast<std::size_t>(2 * n + 1));
  for (int i = -n; i <= n; ++i) g[static_cast<std::size_t>(i + n)] = std::exp(-(i * i) / (2.0 * poly_sigma * poly_sigma));

  // Gram matrix of the basis {1, x, y, x^2, y^2, xy} under the weights.
  Mat6 gram{};
  for (int y = -n; y <= n; ++y) {
    for (int x = -n; x <= n; ++x) {
      const double wgt = g[static_cast<std::size_t>(x + n)] * g[static_cast<std::size_t>(y + n)];
      const std::array<double, 6> b = {1.0, double(x), double(y), double(x * x), double(y * y), double(x * y)};
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) gram[i][j] += wgt * b[i] * b[j];
    }
  }
  const Mat6 ginv = invert6(gram);

  // Horizontal pass: zeroth, first and second moments along x.
  const auto npx = static_cast<std::size_t>(w) * h;
  std::vector<double> r0(npx), r1(npx), r2(npx);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s0 = 0, s1 = 0, s2 = 0;
      for (int i = -n; i <= n; ++i) {
        const double f = img.at(std::clamp(x + i, 0, w - 1), y) * g[static_cast<std::size_t>(i + n)];
        s0 += f;
        s1 += f * i;
        s2 += f * i * i;
      }
      const auto idx = static_cast<std::size_t>(y) * w + x;
      r0[idx] = s0;
      r1[idx] = s1;
      r2[idx] = s2;
    }
  }

  PolyCoeffs out;
  out.width = w;
  out.height = h;
  for (auto* p : {&out.c, &out.bx, &out.by, &out.axx, &out.ayy, &out.axy}) p->resize(npx);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<double, 6> m{};
      for (int j = -n; j <= n; ++j) {
        const auto src = static_cast<std::size_t>(std::clamp(y + j, 0, h - 1)) * w + x;
        const double gj = g[static_cast<std::size_t>(j + n)];
        m[0] += gj * r0[src];
        m[1] += gj * r1[src];
        m[2] += gj * j * r0[src];
        m[3] += gj * r2[src];
        m[4] += gj * j * j * r0[src];
        m[5] += gj * j * r1[src];
      }
      std::array<double, 6> r{};
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t k = 0; k < 6; ++k) r[i] += ginv[i][k] * m[k];
      const auto idx = static_cast<std::size_t>(y) * w + x;
      out.c[idx] = static_cast<float>(r[0]);
      out.bx[idx] = static_cast<float>(r[1]);
      out.by[idx] = static_cast<float>(r[2]);
      out.axx[idx] = static_cast<float>(r[3]);
      out.ayy[idx] = static_cast<float>(r[4]);
      out.axy[idx] = static_cast<float>(r[5] / 2.0);
    }
  }
  return out;
}

namespace {

/// One displacement update at a single pyramid level.
void update_flow(const PolyCoeffs& r1, const PolyCoeffs& r2, FlowField& flow, const std::vector<double>& win) {
  const int w = r1.width;
  const int h = r1.height;
  const auto npx = static_cast<std::size_t>(w) * h;
  std::vector<float> g11(npx), g12(npx), g22(npx), h1(npx), h2(npx);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto i = static_cast<std::size_t>(y) * w + x;
      const float du = flow.u[i];
      const float dv = flow.v[i];
      const float sx = x + du;
      const float sy = y + dv;
      const float a11 = 0.5f * (r1.axx[i] + sample_bilinear(r2.axx, w, h, sx, sy));
      const float a22 = 0.5f * (r1.ayy[i] + sample_bilinear(r2.ayy, w, h, sx, sy));
      const float a12 = 0.5f * (r1.axy[i] + sample_bilinear(r2.axy, w, h, sx, sy));
      const float db1 = -0.5f * (sample_bilinear(r2.bx, w, h, sx, sy) - r1.bx[i]) + a11 * du + a12 * dv;
      const float db2 = -0.5f * (sample_bilinear(r2.by, w, h, sx, sy) - r1.by[i]) + a12 * du + a22 * dv;
      g11[i] = a11 * a11 + a12 * a12;
      g12[i] = a11 * a12 + a12 * a22;
      g22[i] = a12 * a12 + a22 * a22;
      h1[i] = a11 * db1 + a12 * db2;
      h2[i] = a12 * db1 + a22 * db2;
    }
  }
  for (auto* p : {&g11, &g12, &g22, &h1, &h2}) blur(*p, w, h, win);
  for (std::size_t i = 0; i < npx; ++i) {
    const double lambda = 1e-6 * (static_cast<double>(g11[i]) + g22[i]) + 1e-12;
    const double a = g11[i] + lambda;
    const double d = g22[i] + lambda;
    const double b = g12[i];
    const double det = a * d - b * b;
    flow.u[i] = static_cast<float>((d * h1[i] - b * h2[i]) / det);
    flow.v[i] = static_cast<float>((a * h2[i] - b * h1[i]) / det);
  }
}

}  // namespace

FlowField farneback_flow(const FloatImage& prev, const FloatImage& next, const FarnebackParams& p) {
  p.validate();
  if (prev.width != next.width || prev.height != next.height) {
    throw ShapeError("farneback_flow: frame sizes differ (" + std::to_string(prev.width) + "x" +
                     std::to_string(prev.height) + " vs " + std::to_string(next.width) + "x" +
                     std::to_string(next.height) + ")");
  }
  // Pyramid, finest first. Levels that would be smaller than the expansion
  // window are dropped.
  struct Level {
    int w, h;
    std::vector<float> a, b;
  };
  std::vector<Level> pyr;
  pyr.push_back({prev.width, prev.height, prev.data, next.data});
  const double pre_sigma = (1.0 / p.pyramid_scale - 1.0) * 0.5;
  const auto pre_kernel = gaussian_kernel(std::max(1, static_cast<int>(std::ceil(pre_sigma * 3))), pre_sigma);
  for (int k = 1; k < p.pyramid_levels; ++k) {
    const double s = std::pow(p.pyramid_scale, k);
    const int nw = static_cast<int>(std::lround(prev.width * s));
    const int nh = static_cast<int>(std::lround(prev.height * s));
    if (nw < p.poly_n + 2 || nh < p.poly_n + 2) break;
    const auto& up = pyr.back();
    auto a = up.a;
    auto b = up.b;
    blur(a, up.w, up.h, pre_kernel);
    blur(b, up.w, up.h, pre_kernel);
    pyr.push_back({nw, nh, resample(a, up.w, up.h, nw, nh), resample(b, up.w, up.h, nw, nh)});
  }

  const int half = p.window_size / 2;
  const auto win = gaussian_kernel(half, std::max(0.3 * half, 0.5));
  FlowField flow;
  for (auto level = pyr.rbegin(); level != pyr.rend(); ++level) {
    if (flow.width == 0) {
      flow = FlowField(level->w, level->h);
    } else {
      FlowField up(level->w, level->h);
      up.u = resample(flow.u, flow.width, flow.height, level->w, level->h);
      up.v = resample(flow.v, flow.width, flow.height, level->w, level->h);
      const float fx = static_cast<float>(level->w) / flow.width;
      const float fy = static_cast<float>(level->h) / flow.height;
      for (auto& u : up.u) u *= fx;
      for (auto& v : up.v) v *= fy;
      flow = std::move(up);
    }
    FloatImage ia(level->w, level->h);
    FloatImage ib(level->w, level->h);
    ia.data = level->a;
    ib.data = level->b;
    const auto r1 = polynomial_expansion(ia, p.poly_n, p.poly_sigma);
    const auto r2 = polynomial_expansion(ib, p.poly_n, p.poly_sigma);
    for (int it = 0; it < p.iterations; ++it) update_flow(r1, r2, flow, win);
  }
  return flow;
}

FlowField farneback_flow(const imaging::Image& prev, const imaging::Image& next, const FarnebackParams& p) {
  if (prev.width() != next.width() || prev.height() != next.height()) {
    throw ShapeError("farneback_flow: frame sizes differ");
  }
  return farneback_flow(to_float_gray(prev), to_float_gray(next), p);
}

std::optional<FlowStack> stack_flows(std::span<const FlowField> flows, int depth) {
  if (depth < 1) throw ArgumentError("flow depth must be positive");
  if (flows.size() < static_cast<std::size_t>(depth)) return std::nullopt;
  const auto recent = flows.subspan(flows.size() - static_cast<std::size_t>(depth));
  const int w = recent.front().width;
  const int h = recent.front().height;
  const auto plane = static_cast<std::size_t>(w) * h;
  std::vector<float> u(plane * static_cast<std::size_t>(depth));
  std::vector<float> v(u.size());
  for (std::size_t k = 0; k < recent.size(); ++k) {
    if (recent[k].width != w || recent[k].height != h) throw ShapeError("stack_flows: flows differ in size");
    std::copy(recent[k].u.begin(), recent[k].u.end(), u.begin() + static_cast<std::ptrdiff_t>(k * plane));
    std::copy(recent[k].v.begin(), recent[k].v.end(), v.begin() + static_cast<std::ptrdiff_t>(k * plane));
  }
  const Shape shape = {depth, h, w};
  return FlowStack{Tensor::f32(shape, std::move(u)), Tensor::f32(shape, std::move(v))};
}

// .flo

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

std::vector<std::uint8_t> write_flo(const FlowField& flow) {
  std::vector<std::uint8_t> out = {'P', 'I', 'E', 'H'};
  out.reserve(12 + flow.u.size() * 8);
  put_u32(out, static_cast<std::uint32_t>(flow.width));
  put_u32(out, static_cast<std::uint32_t>(flow.height));
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    if (!std::isfinite(flow.u[i]) || !std::isfinite(flow.v[i])) {
      throw FormatError(FormatErrc::kNonFinite, "flow element " + std::to_string(i));
    }
    put_u32(out, std::bit_cast<std::uint32_t>(flow.u[i]));
    put_u32(out, std::bit_cast<std::uint32_t>(flow.v[i]));
  }
  return out;
}

FlowField read_flo(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PIEH", 4) != 0) {
    throw FormatError(FormatErrc::kBadMagic, ".flo magic must be PIEH");
  }
  if (bytes.size() < 12) throw FormatError(FormatErrc::kTruncated, ".flo header");
  const auto w = static_cast<std::int32_t>(get_u32(bytes.data() + 4));
  const auto h = static_cast<std::int32_t>(get_u32(bytes.data() + 8));
  if (w < 0 || h < 0 || static_cast<std::int64_t>(w) * h > (1LL << 28)) {
    throw FormatError(FormatErrc::kBadHeader, ".flo extents");
  }
  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() < 12 + n * 8) throw FormatError(FormatErrc::kTruncated, ".flo payload");
  FlowField f(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    f.u[i] = std::bit_cast<float>(get_u32(bytes.data() + 12 + 8 * i));
    f.v[i] = std::bit_cast<float>(get_u32(bytes.data() + 16 + 8 * i));
  }
  return f;
}

}  // namespace oodkit::optflow
