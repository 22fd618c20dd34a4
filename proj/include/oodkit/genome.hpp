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

#include <compare>
#include <string>
#include <vector>

#include "oodkit/imaging.hpp"

namespace oodkit::ga {

enum class Family { kBvae, kOptflow };
enum class ColorSpace { kRgb, kGray };
enum class Bucket { kSmall, kMedium, kLarge };

const char* to_string(Family f);
const char* to_string(ColorSpace c);
const char* to_string(Bucket b);
Family family_from_string(const std::string& s);
ColorSpace color_from_string(const std::string& s);
/// Accepts "S"/"M"/"L" as well as "small"/"medium"/"large".
Bucket bucket_from_string(const std::string& s);

/// One preprocessing configuration. BVAE genomes are square (width ==
/// height) and carry a color space; optical-flow genomes carry a flow depth.
struct Genome {
  Family family = Family::kBvae;
  int width = 32;
  int height = 32;
  imaging::Interpolation interpolation = imaging::Interpolation::kBilinear;
  ColorSpace color = ColorSpace::kGray;
  int flow_depth = 0;

  int area() const { return width * height; }
  int channels() const;
  /// Canonical text form, e.g. "bvae:32x32:bilinear:gray" or
  /// "optflow:48x64:area:d6" (height x width).
  std::string key() const;
  static Genome parse(const std::string& key);
  void validate() const;

  auto operator<=>(const Genome&) const = default;
};

/// Allele lists of one bucket. Sizes are (height, width) pairs.
struct BucketAlleles {
  std::vector<std::pair<int, int>> sizes;
  std::vector<imaging::Interpolation> interpolations;
  std::vector<ColorSpace> colors;
  std::vector<int> flow_depths;

  std::size_t space_size() const;
  bool contains(const Genome& g) const;
  void validate(Family family) const;
};

/// BVAE: square widths 3-76 / 77-150 / 151-224, three interpolations, RGB or
/// gray. Optical flow: {24x32, 48x64} / {72x96, 96x128} / {120x160, 150x200},
/// four interpolations, depth 2-6. `width_step` > 1 thins the BVAE width
/// grid to lo, lo + step, ... for desk-scale searches.
BucketAlleles default_alleles(Family family, Bucket bucket, int width_step = 1);

/// Every genome of the bucket, in canonical order.
std::vector<Genome> enumerate(Family family, const BucketAlleles& alleles);

}  // namespace oodkit::ga
