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

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include "json.hpp"

#include "oodkit/network.hpp"

namespace oodkit::net {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'O', 'O', 'D', 'M'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

json layer_to_json(const LayerSpec& l) {
  json j{{"kind", to_string(l.kind)}};
  switch (l.kind) {
    case LayerKind::kConv2D:
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::kMaxPool2D: j["kernel"] = l.kernel; break;
    case LayerKind::kDense: j["out_dim"] = l.out_dim; break;
    case LayerKind::kUpsample:
      j["h"] = l.h;
      j["w"] = l.w;
      break;
    case LayerKind::kReshape:
      j["c"] = l.c;
      j["h"] = l.h;
      j["w"] = l.w;
      break;
    default: break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  switch (layer_kind_from_string(j.at("kind").get<std::string>())) {
    case LayerKind::kConv2D:
      return LayerSpec::conv2d(j.at("out_channels"), j.at("kernel"), j.at("stride"), j.at("padding"));
    case LayerKind::kMaxPool2D: return LayerSpec::maxpool2d(j.at("kernel"));
    case LayerKind::kDense: return LayerSpec::dense(j.at("out_dim"));
    case LayerKind::kReLU: return LayerSpec::relu();
    case LayerKind::kBatchNorm2D: return LayerSpec::batchnorm2d();
    case LayerKind::kFlatten: return LayerSpec::flatten();
    case LayerKind::kUpsample: return LayerSpec::upsample(j.at("h"), j.at("w"));
    case LayerKind::kReshape: return LayerSpec::reshape(j.at("c"), j.at("h"), j.at("w"));
  }
  throw FormatError(FormatErrc::kUnknownLayer, "unhandled layer kind");
}

json spec_to_json(const ModelSpec& s) {
  json enc = json::array(), dec = json::array();
  for (const auto& l : s.encoder) enc.push_back(layer_to_json(l));
  for (const auto& l : s.decoder) dec.push_back(layer_to_json(l));
  return {{"input", {{"c", s.input.c}, {"h", s.input.h}, {"w", s.input.w}}},
          {"encoder", enc},
          {"decoder", dec},
          {"n_latent", s.n_latent},
          {"beta", s.beta},
          {"variance", to_string(s.variance)},
          {"variance_relu", s.variance_relu}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  const json& in = j.at("input");
  s.input = {in.at("c"), in.at("h"), in.at("w")};
  for (const auto& l : j.at("encoder")) s.encoder.push_back(layer_from_json(l));
  for (const auto& l : j.at("decoder")) s.decoder.push_back(layer_from_json(l));
  s.n_latent = j.at("n_latent");
  s.beta = j.at("beta");
  s.variance = variance_param_from_string(j.at("variance"));
  s.variance_relu = j.at("variance_relu");
  return s;
}

}  // namespace

std::uint32_t model_checksum(const DetectorModel& model) {
  std::vector<std::uint8_t> payload;
  for (const auto& [name, t] : model.weights) {
    const auto b = t.payload_bytes();
    payload.insert(payload.end(), b.begin(), b.end());
  }
  return crc32_of(payload);
}

std::vector<std::uint8_t> save_model(const DetectorModel& model) {
  json tensors = json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& [name, t] : model.weights) {
    const auto b = t.payload_bytes();
    json e{{"name", name},
           {"dtype", to_string(t.dtype())},
           {"shape", t.shape()},
           {"offset", payload.size()},
           {"nbytes", b.size()}};
    if (t.quant()) {
      e["scale"] = t.quant()->scale;
      e["zero_point"] = t.quant()->zero_point;
    }
    tensors.push_back(std::move(e));
    payload.insert(payload.end(), b.begin(), b.end());
  }
  json act = json::object();
  for (const auto& [site, qp] : model.activation_quant) act[site] = {{"scale", qp.scale}, {"zero_point", qp.zero_point}};
  const json header{{"spec", spec_to_json(model.spec)},
                    {"precision", to_string(model.precision)},
                    {"tensors", tensors},
                    {"activation_quant", act},
                    {"metadata", model.metadata}};
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kModelFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32_of(payload));
  return out;
}

DetectorModel load_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(FormatErrc::kBadMagic, "not an OODM model file");
  }
  if (bytes.size() < 12) throw FormatError(FormatErrc::kTruncated, "model file ends inside the preamble");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kModelFormatVersion) {
    throw FormatError(FormatErrc::kVersionMismatch, "model format version " + std::to_string(version) +
                                                        ", expected " + std::to_string(kModelFormatVersion));
  }
  const std::size_t hlen = get_u32(bytes.data() + 8);
  if (bytes.size() < 12 + hlen) throw FormatError(FormatErrc::kTruncated, "model file ends inside the header");
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const json::exception& e) {
    throw FormatError(FormatErrc::kBadHeader, std::string("model header is not valid JSON: ") + e.what());
  }
  DetectorModel m;
  try {
    m.spec = spec_from_json(header.at("spec"));
    m.precision = dtype_from_string(header.at("precision"));
    for (const auto& [site, q] : header.at("activation_quant").items()) {
      m.activation_quant[site] = QuantParams{q.at("scale").get<float>(), q.at("zero_point").get<std::int32_t>()};
    }
    m.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
    std::size_t payload_size = 0;
    for (const auto& e : header.at("tensors")) {
      payload_size = std::max(payload_size, e.at("offset").get<std::size_t>() + e.at("nbytes").get<std::size_t>());
    }
    const std::size_t start = 12 + hlen;
    if (bytes.size() < start + payload_size + 4) {
      throw FormatError(FormatErrc::kTruncated, "model payload is shorter than its tensor directory");
    }
    const auto payload = bytes.subspan(start, payload_size);
    const std::uint32_t stored = get_u32(bytes.data() + start + payload_size);
    if (stored != crc32_of(payload)) throw FormatError(FormatErrc::kChecksumMismatch, "model payload CRC32 mismatch");
    for (const auto& e : header.at("tensors")) {
      std::optional<QuantParams> qp;
      if (e.contains("scale")) qp = QuantParams{e.at("scale").get<float>(), e.at("zero_point").get<std::int32_t>()};
      const auto off = e.at("offset").get<std::size_t>();
      const auto nb = e.at("nbytes").get<std::size_t>();
      m.weights.emplace(e.at("name").get<std::string>(),
                        Tensor::from_payload(e.at("shape").get<Shape>(), dtype_from_string(e.at("dtype")),
                                             payload.subspan(off, nb), qp));
    }
  } catch (const json::exception& e) {
    throw FormatError(FormatErrc::kBadHeader, std::string("malformed model header: ") + e.what());
  }
  m.spec.validate();
  return m;
}

void save_model_file(const DetectorModel& model, const std::string& path) {
  const auto bytes = save_model(model);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing '" + path + "'");
}

DetectorModel load_model_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open model '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return load_model(bytes);
}

}  // namespace oodkit::net
