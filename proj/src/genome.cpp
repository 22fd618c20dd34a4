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

#include "oodkit/genome.hpp"

#include <algorithm>
#include <sstream>

#include "oodkit/error.hpp"

namespace oodkit::ga {

using imaging::Interpolation;

const char* to_string(Family f) { return f == Family::kBvae ? "bvae" : "optflow"; }
const char* to_string(ColorSpace c) { return c == ColorSpace::kRgb ? "rgb" : "gray"; }

const char* to_string(Bucket b) {
  switch (b) {
    case Bucket::kSmall: return "S";
    case Bucket::kMedium: return "M";
    case Bucket::kLarge: return "L";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  if (s == "bvae") return Family::kBvae;
  if (s == "optflow" || s == "of") return Family::kOptflow;
  throw ArgumentError("unknown detector family '" + s + "'");
}

ColorSpace color_from_string(const std::string& s) {
  if (s == "rgb") return ColorSpace::kRgb;
  if (s == "gray") return ColorSpace::kGray;
  throw ArgumentError("unknown color space '" + s + "'");
}

Bucket bucket_from_string(const std::string& s) {
  if (s == "S" || s == "small") return Bucket::kSmall;
  if (s == "M" || s == "medium") return Bucket::kMedium;
  if (s == "L" || s == "large") return Bucket::kLarge;
  throw ArgumentError("unknown bucket '" + s + "'");
}

int Genome::channels() const {
  if (family == Family::kOptflow) return flow_depth;
  return color == ColorSpace::kRgb ? 3 : 1;
}

std::string Genome::key() const {
  std::ostringstream os;
  os << to_string(family) << ':' << height << 'x' << width << ':' << imaging::to_string(interpolation) << ':';
  if (family == Family::kBvae) {
    os << to_string(color);
  } else {
    os << 'd' << flow_depth;
  }
  return os.str();
}

Genome Genome::parse(const std::string& key) {
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() != 4) throw ArgumentError("malformed genome '" + key + "'");
  Genome g;
  g.family = family_from_string(parts[0]);
  const auto x = parts[1].find('x');
  if (x == std::string::npos) throw ArgumentError("malformed genome size in '" + key + "'");
  try {
    g.height = std::stoi(parts[1].substr(0, x));
    g.width = std::stoi(parts[1].substr(x + 1));
    g.interpolation = imaging::interpolation_from_string(parts[2]);
    if (g.family == Family::kBvae) {
      g.color = color_from_string(parts[3]);
    } else {
      g.color = ColorSpace::kGray;
      if (parts[3].empty() || parts[3][0] != 'd') throw ArgumentError("missing flow depth");
      g.flow_depth = std::stoi(parts[3].substr(1));
    }
  } catch (const std::logic_error&) {
    throw ArgumentError("malformed genome '" + key + "'");
  }
  g.validate();
  return g;
}

void Genome::validate() const {
  if (width < 1 || height < 1) throw ArgumentError("genome size must be positive: " + key());
  if (family == Family::kBvae) {
    if (width != height) throw ArgumentError("BVAE genomes are square: " + key());
    if (interpolation == Interpolation::kArea) throw ArgumentError("BVAE genomes do not use area interpolation");
    if (flow_depth != 0) throw ArgumentError("BVAE genomes carry no flow depth");
  } else {
    if (flow_depth < 2 || flow_depth > 6) throw ArgumentError("flow depth must lie in [2, 6]: " + key());
    if (color != ColorSpace::kGray) throw ArgumentError("optical-flow genomes are grayscale");
  }
}

std::size_t BucketAlleles::space_size() const {
  return sizes.size() * interpolations.size() * colors.size() * flow_depths.size();
}

bool BucketAlleles::contains(const Genome& g) const {
  auto has = [](const auto& v, const auto& x) { return std::find(v.begin(), v.end(), x) != v.end(); };
  return has(sizes, std::make_pair(g.height, g.width)) && has(interpolations, g.interpolation) &&
         has(colors, g.color) && has(flow_depths, g.flow_depth);
}

void BucketAlleles::validate(Family family) const {
  if (space_size() == 0) throw ArgumentError("bucket has an empty allele list");
  for (const auto& g : enumerate(family, *this)) g.validate();
}

BucketAlleles default_alleles(Family family, Bucket bucket, int width_step) {
  if (width_step < 1) throw ArgumentError("width_step must be >= 1");
  BucketAlleles a;
  if (family == Family::kBvae) {
    const int lo = bucket == Bucket::kSmall ? 3 : bucket == Bucket::kMedium ? 77 : 151;
    const int hi = bucket == Bucket::kSmall ? 76 : bucket == Bucket::kMedium ? 150 : 224;
    for (int w = lo; w <= hi; w += width_step) a.sizes.emplace_back(w, w);
    a.interpolations = {Interpolation::kNearest, Interpolation::kBilinear, Interpolation::kBicubic};
    a.colors = {ColorSpace::kRgb, ColorSpace::kGray};
    a.flow_depths = {0};
  } else {
    switch (bucket) {
      case Bucket::kSmall: a.sizes = {{24, 32}, {48, 64}}; break;
      case Bucket::kMedium: a.sizes = {{72, 96}, {96, 128}}; break;
      case Bucket::kLarge: a.sizes = {{120, 160}, {150, 200}}; break;
    }
    a.interpolations = {Interpolation::kNearest, Interpolation::kBilinear, Interpolation::kBicubic,
                        Interpolation::kArea};
    a.colors = {ColorSpace::kGray};
    a.flow_depths = {2, 3, 4, 5, 6};
  }
  return a;
}

std::vector<Genome> enumerate(Family family, const BucketAlleles& alleles) {
  std::vector<Genome> out;
  for (const auto& [h, w] : alleles.sizes)
    for (auto interp : alleles.interpolations)
      for (auto color : alleles.colors)
        for (int d : alleles.flow_depths) {
          Genome g;
          g.family = family;
          g.height = h;
          g.width = w;
          g.interpolation = interp;
          g.color = color;
          g.flow_depth = d;
          out.push_back(g);
        }
  return out;
}

}  // namespace oodkit::ga
