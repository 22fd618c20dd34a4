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
#include <array>
#include <cmath>

#include "oodkit/error.hpp"
#include "oodkit/imaging.hpp"
#include "oodkit/random.hpp"

namespace oodkit::imaging {

namespace {

constexpr std::uint64_t kRainStream = 0x7261696E;
constexpr std::uint64_t kSnowStream = 0x736E6F77;

void check_strength(double s) {
  if (!(s >= 0.0 && s <= 0.01)) throw ArgumentError("augmentation strength outside [0, 0.01]");
}

void blend(Image& img, int x, int y, double alpha, std::uint8_t target) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  for (int c = 0; c < img.channels(); ++c) {
    auto& p = img.at(x, y, c);
    p = static_cast<std::uint8_t>(std::lround(p + alpha * (target - p)));
  }
}

}  // namespace

Image augment_rain(const Image& img, double strength, std::uint64_t seed) {
  check_strength(strength);
  const auto count = std::lround(strength * img.width() * img.height());
  if (count == 0) return img;
  Image out = img;
  auto rng = make_rng(seed, kRainStream);
  const int base_len = std::max(3, img.height() / 10);
  constexpr double kPi = 3.14159265358979323846;
  for (long i = 0; i < count; ++i) {
    const double x0 = uniform(rng, 0.0, img.width());
    const double y0 = uniform(rng, 0.0, img.height());
    const int len = base_len + static_cast<int>(uniform_int(rng, -1, 1));
    const double angle = (75.0 + uniform(rng, -10.0, 10.0)) * kPi / 180.0;
    const double dx = -std::cos(angle);
    const double dy = std::sin(angle);
    int last_x = -1;
    int last_y = -1;
    for (int t = 0; t < len; ++t) {
      const int x = static_cast<int>(std::lround(x0 + t * dx));
      const int y = static_cast<int>(std::lround(y0 + t * dy));
      if (x == last_x && y == last_y) continue;
      blend(out, x, y, 0.6, 235);
      last_x = x;
      last_y = y;
    }
  }
  return out;
}

Image augment_snow(const Image& img, double strength, std::uint64_t seed) {
  check_strength(strength);
  const auto count = std::lround(strength * img.width() * img.height());
  if (count == 0) return img;
  Image out = img;
  auto rng = make_rng(seed, kSnowStream);
  for (long i = 0; i < count; ++i) {
    const int cx = static_cast<int>(uniform_int(rng, 0, img.width() - 1));
    const int cy = static_cast<int>(uniform_int(rng, 0, img.height() - 1));
    const int r = 1 + static_cast<int>(uniform_int(rng, 0, 1));
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (dx * dx + dy * dy <= r * r) blend(out, cx + dx, cy + dy, 0.85, 250);
      }
    }
  }
  return out;
}

void AugmentationParams::validate() const {
  check_strength(rain_strength);
  check_strength(snow_strength);
  if (brightness < -1.0 || brightness > 1.0) throw ArgumentError("brightness outside [-1, 1]");
}

Image apply_augmentation(const Image& img, const AugmentationParams& p) {
  p.validate();
  Image out = p.brightness != 0.0 ? adjust_brightness(img, p.brightness) : img;
  out = augment_rain(out, p.rain_strength, p.seed);
  return augment_snow(out, p.snow_strength, p.seed);
}

// Synthetic scenes

namespace {

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  const auto h = stream_seed(seed ^ static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ull,
                             static_cast<std::uint64_t>(iy));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Value noise on an integer lattice with cell size `cell`, in [0, 1].
double value_noise(double x, double y, double cell, std::uint64_t seed) {
  const double fx = x / cell;
  const double fy = y / cell;
  const auto ix = static_cast<std::int64_t>(std::floor(fx));
  const auto iy = static_cast<std::int64_t>(std::floor(fy));
  const double tx = smoothstep(fx - static_cast<double>(ix));
  const double ty = smoothstep(fy - static_cast<double>(iy));
  const double a = lattice(ix, iy, seed);
  const double b = lattice(ix + 1, iy, seed);
  const double c = lattice(ix, iy + 1, seed);
  const double d = lattice(ix + 1, iy + 1, seed);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

double fbm(double x, double y, double cell, std::uint64_t seed) {
  return 0.55 * value_noise(x, y, cell, seed) + 0.3 * value_noise(x, y, cell / 2, seed + 1) +
         0.15 * value_noise(x, y, cell / 4, seed + 2);
}

struct Palette {
  std::array<double, 3> a;
  std::array<double, 3> b;
  double cell;
};

Palette scene_palette(int scene_id) {
  static const std::array<Palette, 5> kBase = {{
      {{40, 90, 160}, {180, 210, 240}, 14.0},   // sky
      {{30, 100, 40}, {150, 200, 90}, 9.0},     // foliage
      {{120, 60, 40}, {220, 160, 120}, 6.0},    // brick
      {{60, 60, 70}, {200, 200, 190}, 18.0},    // concrete
      {{110, 40, 120}, {240, 180, 90}, 11.0},   // mural
  }};
  if (scene_id < static_cast<int>(kBase.size())) return kBase[static_cast<std::size_t>(scene_id)];
  auto rng = make_rng(static_cast<std::uint64_t>(scene_id), 0x706C);
  Palette p{};
  for (int c = 0; c < 3; ++c) {
    p.a[static_cast<std::size_t>(c)] = uniform(rng, 20, 120);
    p.b[static_cast<std::size_t>(c)] = uniform(rng, 130, 250);
  }
  p.cell = uniform(rng, 6, 18);
  return p;
}

}  // namespace

Image synth_scene(int scene_id, std::int64_t frame_index, const SceneParams& params) {
  if (scene_id < 0 || scene_id >= params.n_scenes) {
    throw ArgumentError("scene id " + std::to_string(scene_id) + " outside [0, " +
                        std::to_string(params.n_scenes) + ")");
  }
  const int w = params.width;
  const int h = params.height;
  Image out(w, h, 3);
  const Palette pal = scene_palette(scene_id);
  const auto seed = stream_seed(0x5CE4E, static_cast<std::uint64_t>(scene_id));
  const std::int64_t offset = frame_index * params.shift_px;
  const int horizon = static_cast<int>(0.55 * h);
  const int lane_y = horizon + (h - horizon) / 2;
  const int lane_half = std::max(1, h / 48);
  const int edge_y = h - 1 - std::max(1, h / 24);
  const double dash_period = std::max(8.0, w / 6.0);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double wx = static_cast<double>(x - offset);
      std::array<double, 3> rgb{};
      if (y < horizon) {
        const double n = fbm(wx, y, pal.cell, seed);
        const double shade = 0.85 + 0.15 * (1.0 - static_cast<double>(y) / horizon);
        for (std::size_t c = 0; c < 3; ++c) rgb[c] = shade * (pal.a[c] + (pal.b[c] - pal.a[c]) * n);
      } else {
        const double n = fbm(wx, y, 5.0, seed + 17);
        const double g = 60.0 + 40.0 * n;
        rgb = {g, g, g + 4.0};
        const double phase = std::fmod(std::fmod(wx, dash_period) + dash_period, dash_period);
        if (std::abs(y - lane_y) <= lane_half && phase < 0.5 * dash_period) rgb = {230, 200, 40};
        if (y >= edge_y) rgb = {225, 225, 225};
      }
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(rgb[static_cast<std::size_t>(c)]), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace oodkit::imaging
