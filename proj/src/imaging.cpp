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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "oodkit/error.hpp"
#include "oodkit/imaging.hpp"

namespace oodkit::imaging {

Image::Image(int width, int height, int channels, std::uint8_t fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 0 || height < 0) throw ShapeError("image extents must be non-negative");
  if (channels != 1 && channels != 3) throw ShapeError("image channels must be 1 or 3");
  pixels_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Image::Image(int width, int height, int channels, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), channels_(channels), pixels_(std::move(pixels)) {
  if (width < 0 || height < 0) throw ShapeError("image extents must be non-negative");
  if (channels != 1 && channels != 3) throw ShapeError("image channels must be 1 or 3");
  if (pixels_.size() != static_cast<std::size_t>(width) * height * channels) {
    throw ShapeError("pixel buffer length " + std::to_string(pixels_.size()) + " != " +
                     std::to_string(width) + "x" + std::to_string(height) + "x" +
                     std::to_string(channels));
  }
}

// PNM

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int read_int(const char* what) {
    skip_space_and_comments();
    if (pos_ >= b_.size()) throw FormatError(FormatErrc::kTruncated, std::string("PNM header ends before ") + what);
    if (!std::isdigit(b_[pos_])) throw FormatError(FormatErrc::kBadHeader, std::string("PNM ") + what + " is not a number");
    long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (1 << 24)) throw FormatError(FormatErrc::kBadHeader, std::string("PNM ") + what + " too large");
      ++pos_;
    }
    return static_cast<int>(v);
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }
  bool at_end() const { return pos_ >= b_.size(); }
  std::uint8_t peek() const { return b_[pos_]; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
};

}  // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError(FormatErrc::kBadMagic, "expected binary PNM magic P5 or P6");
  }
  const int channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader r(bytes);
  const int w = r.read_int("width");
  const int h = r.read_int("height");
  const int maxval = r.read_int("maxval");
  if (w <= 0 || h <= 0) throw FormatError(FormatErrc::kBadHeader, "PNM extents must be positive");
  if (maxval != 255) throw FormatError(FormatErrc::kUnsupported, "PNM maxval must be 255");
  if (r.at_end()) throw FormatError(FormatErrc::kTruncated, "PNM payload missing");
  if (!std::isspace(r.peek())) throw FormatError(FormatErrc::kBadHeader, "PNM maxval not followed by whitespace");
  r.advance();
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() - r.pos() < need) {
    throw FormatError(FormatErrc::kTruncated, "PNM payload has " + std::to_string(bytes.size() - r.pos()) +
                                                  " bytes, expected " + std::to_string(need));
  }
  auto first = bytes.begin() + static_cast<std::ptrdiff_t>(r.pos());
  return Image(w, h, channels, std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(need)));
}

std::vector<std::uint8_t> encode_pnm(const Image& img) {
  const std::string header = std::string(img.channels() == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels().begin(), img.pixels().end());
  return out;
}

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pnm(bytes);
}

void write_pnm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  const auto bytes = encode_pnm(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Color and intensity

namespace {

std::uint8_t clamp_round(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

}  // namespace

Image to_grayscale(const Image& img) {
  if (img.channels() == 1) return img;
  Image out(img.width(), img.height(), 1);
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = clamp_round(0.299 * src[3 * i] + 0.587 * src[3 * i + 1] + 0.114 * src[3 * i + 2]);
  }
  return out;
}

Image adjust_brightness(const Image& img, double factor) {
  if (factor < -1.0 || factor > 1.0) throw ArgumentError("brightness factor outside [-1, 1]");
  Image out = img;
  for (auto& p : out.pixels()) p = clamp_round(p * (1.0 + factor));
  return out;
}

// Resampling

const char* to_string(Interpolation m) {
  switch (m) {
    case Interpolation::kNearest: return "nearest";
    case Interpolation::kBilinear: return "bilinear";
    case Interpolation::kBicubic: return "bicubic";
    case Interpolation::kArea: return "area";
  }
  return "?";
}

Interpolation interpolation_from_string(const std::string& name) {
  if (name == "nearest") return Interpolation::kNearest;
  if (name == "bilinear") return Interpolation::kBilinear;
  if (name == "bicubic") return Interpolation::kBicubic;
  if (name == "area") return Interpolation::kArea;
  throw ArgumentError("unknown interpolation '" + name + "'");
}

namespace {

struct Tap {
  int index;
  double weight;
};

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

/// Per-output-index source taps along one axis.
std::vector<std::vector<Tap>> axis_taps(int in, int out, Interpolation method) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    auto& t = taps[static_cast<std::size_t>(d)];
    switch (method) {
      case Interpolation::kNearest: {
        const long long idx = (2LL * d + 1) * in / (2LL * out);
        t.push_back({static_cast<int>(std::min<long long>(idx, in - 1)), 1.0});
        break;
      }
      case Interpolation::kBilinear: {
        const double src = std::clamp((d + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
        const int x0 = static_cast<int>(std::floor(src));
        const double f = src - x0;
        const int x1 = std::min(x0 + 1, in - 1);
        t.push_back({x0, 1.0 - f});
        if (f > 0.0) t.push_back({x1, f});
        break;
      }
      case Interpolation::kBicubic: {
        const double src = (d + 0.5) * scale - 0.5;
        const int x0 = static_cast<int>(std::floor(src));
        const double f = src - x0;
        for (int k = -1; k <= 2; ++k) {
          const double w = cubic_weight(k - f);
          if (w != 0.0) t.push_back({std::clamp(x0 + k, 0, in - 1), w});
        }
        break;
      }
      case Interpolation::kArea: {
        const double lo = d * scale;
        const double hi = (d + 1) * scale;
        const int first = static_cast<int>(std::floor(lo));
        const int last = std::min(static_cast<int>(std::ceil(hi)), in);
        for (int i = first; i < last; ++i) {
          const double cover = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
          if (cover > 1e-12) t.push_back({i, cover / scale});
        }
        break;
      }
    }
  }
  return taps;
}

}  // namespace

Image resize(const Image& img, int out_w, int out_h, Interpolation method) {
  if (out_w < 1 || out_h < 1) throw ArgumentError("resize target must be at least 1x1");
  if (img.empty()) throw ArgumentError("resize of an empty image");
  const int in_w = img.width();
  const int in_h = img.height();
  const int ch = img.channels();
  const auto xt = axis_taps(in_w, out_w, method);
  const auto yt = axis_taps(in_h, out_h, method);

  // Horizontal pass into a real-valued buffer, then vertical pass.
  std::vector<double> tmp(static_cast<std::size_t>(out_w) * in_h * ch);
  auto px = img.pixels();
  for (int y = 0; y < in_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (const auto& tap : xt[static_cast<std::size_t>(x)]) {
          acc += tap.weight * px[(static_cast<std::size_t>(y) * in_w + tap.index) * ch + c];
        }
        tmp[(static_cast<std::size_t>(y) * out_w + x) * ch + c] = acc;
      }
    }
  }
  Image out(out_w, out_h, ch);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (const auto& tap : yt[static_cast<std::size_t>(y)]) {
          acc += tap.weight * tmp[(static_cast<std::size_t>(tap.index) * out_w + x) * ch + c];
        }
        out.at(x, y, c) = clamp_round(acc);
      }
    }
  }
  return out;
}

Image sharpen(const Image& img) {
  Image out(img.width(), img.height(), img.channels());
  const int w = img.width();
  const int h = img.height();
  for (int y = 0; y < h; ++y) {
    const int ym = std::max(y - 1, 0);
    const int yp = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xm = std::max(x - 1, 0);
      const int xp = std::min(x + 1, w - 1);
      for (int c = 0; c < img.channels(); ++c) {
        const int v = 5 * img.at(x, y, c) - img.at(xm, y, c) - img.at(xp, y, c) - img.at(x, ym, c) -
                      img.at(x, yp, c);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
      }
    }
  }
  return out;
}

Image crop(const Image& img, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > img.width() || y + h > img.height()) {
    throw ArgumentError("crop rectangle (" + std::to_string(x) + "," + std::to_string(y) + "," +
                        std::to_string(w) + "," + std::to_string(h) + ") outside " +
                        std::to_string(img.width()) + "x" + std::to_string(img.height()));
  }
  Image out(w, h, img.channels());
  const auto row = static_cast<std::size_t>(w) * img.channels();
  for (int r = 0; r < h; ++r) {
    const auto* src = img.pixels().data() + (static_cast<std::size_t>(y + r) * img.width() + x) * img.channels();
    std::copy(src, src + row, out.pixels().data() + static_cast<std::size_t>(r) * row);
  }
  return out;
}

}  // namespace oodkit::imaging
