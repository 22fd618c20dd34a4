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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace oodkit::imaging {

/// 8-bit raster, row-major, channel-interleaved. One (gray) or three (RGB)
/// channels.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, std::uint8_t fill = 0);
  Image(int width, int height, int channels, std::vector<std::uint8_t> pixels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// PNM (binary P5 / P6, maxval 255)

Image decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const Image& img);
Image read_pnm(const std::string& path);
void write_pnm(const Image& img, const std::string& path);

// Preprocessing operators

enum class Interpolation { kNearest, kBilinear, kBicubic, kArea };

const char* to_string(Interpolation m);
Interpolation interpolation_from_string(const std::string& name);

/// BT.601 luma, rounded. Gray input is returned unchanged.
Image to_grayscale(const Image& img);

/// Center-aligned resampling: src = (dst + 0.5) * in / out - 0.5, with
/// coordinates clamped to the image. Bicubic is Catmull-Rom (a = -0.5);
/// area averages each destination pixel's footprint weighted by coverage.
Image resize(const Image& img, int out_w, int out_h, Interpolation method);

/// 3x3 Laplacian sharpen [[0,-1,0],[-1,5,-1],[0,-1,0]] with replicated borders.
Image sharpen(const Image& img);

Image crop(const Image& img, int x, int y, int w, int h);

/// p' = clamp(round(p * (1 + factor)), 0, 255), factor in [-1, 1].
Image adjust_brightness(const Image& img, double factor);

// Augmentations. Strength is in [0, 0.01]; the number of drawn primitives is
// round(strength * width * height). Strength 0 is the identity.

Image augment_rain(const Image& img, double strength, std::uint64_t seed);
Image augment_snow(const Image& img, double strength, std::uint64_t seed);

struct AugmentationParams {
  double rain_strength = 0.0;
  double snow_strength = 0.0;
  double brightness = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Brightness, then rain, then snow.
Image apply_augmentation(const Image& img, const AugmentationParams& p);

// Synthetic scenes

struct SceneParams {
  int width = 96;
  int height = 72;
  int n_scenes = 5;
  /// Horizontal content motion per frame, in pixels (constant forward speed).
  int shift_px = 2;
};

/// Deterministic RGB frame: scene-dependent textured background over a road
/// band with dashed lane markings. Content at frame k+1 equals content at
/// frame k translated by +shift_px along x.
Image synth_scene(int scene_id, std::int64_t frame_index, const SceneParams& params);

}  // namespace oodkit::imaging
