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
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oodkit/error.hpp"
#include "oodkit/tensor.hpp"

namespace oodkit::net {

enum class LayerKind { kConv2D, kMaxPool2D, kDense, kReLU, kBatchNorm2D, kFlatten, kUpsample, kReshape };

const char* to_string(LayerKind kind);
/// Throws FormatError(kUnknownLayer) naming the offending kind.
LayerKind layer_kind_from_string(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::kReLU;
  int out_channels = 0;  // conv
  int kernel = 0;        // conv, maxpool
  int stride = 1;        // conv
  int padding = 0;       // conv (zero padding on every side)
  int out_dim = 0;       // dense
  int c = 0, h = 0, w = 0;  // upsample / reshape target

  static LayerSpec conv2d(int out_channels, int kernel, int stride = 1, int padding = 0);
  static LayerSpec maxpool2d(int kernel);
  static LayerSpec dense(int out_dim);
  static LayerSpec relu();
  static LayerSpec batchnorm2d();
  static LayerSpec flatten();
  static LayerSpec upsample(int h, int w);
  static LayerSpec reshape(int c, int h, int w);

  bool operator==(const LayerSpec&) const = default;
};

/// Activation geometry of one sample (channels x height x width). Dense
/// outputs are (dim x 1 x 1).
struct Geometry {
  int c = 0;
  int h = 0;
  int w = 0;

  std::int64_t numel() const { return static_cast<std::int64_t>(c) * h * w; }
  bool operator==(const Geometry&) const = default;
};

std::string to_string(const Geometry& g);

/// How the variance head output h is turned into sigma^2.
enum class VarianceParam {
  kLogVar,     // sigma^2 = exp(h)
  kNegLogVar,  // sigma^2 = exp(-h)
  kVar,        // sigma^2 = max(h, kVarFloor)
};

inline constexpr double kVarFloor = 1e-6;

const char* to_string(VarianceParam v);
VarianceParam variance_param_from_string(const std::string& name);

/// Encoder body plus two dense heads (mu and variance) of size n_latent. The
/// decoder is derived as the mirror image of the body.
struct ModelSpec {
  Geometry input;
  std::vector<LayerSpec> encoder;
  int n_latent = 8;
  double beta = 1.0;
  VarianceParam variance = VarianceParam::kVar;
  /// ReLU on the variance head output.
  bool variance_relu = true;
  /// Explicit decoder layers; empty means the mirror of `encoder`.
  std::vector<LayerSpec> decoder;

  /// Output geometry after each encoder layer. Throws ShapeError when the
  /// chain is inconsistent.
  std::vector<Geometry> encoder_shapes() const;
  Geometry body_output() const;
  std::vector<LayerSpec> mirror_decoder() const;
  std::vector<LayerSpec> decoder_layers() const { return decoder.empty() ? mirror_decoder() : decoder; }
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Desk-scale beta-VAE: conv 3x3 (same padding) + ReLU + maxpool 2 blocks of
/// depth 16/16/8/8, dense 128, heads of n_latent. Pooling is skipped once the
/// spatial extent drops below 2, so inputs as small as 3x3 remain valid.
ModelSpec bvae_spec(Geometry input, int n_latent = 8, double beta = 2.32,
                    VarianceParam variance = VarianceParam::kVar);

/// Desk-scale optical-flow encoder: four 5x5 stride-3 conv + BatchNorm + ReLU
/// blocks of depth 8/16/16/32 followed by heads of n_latent.
ModelSpec optflow_spec(Geometry input, int n_latent = 12, double beta = 1.0);

/// Latent posterior of one sample.
struct LatentOutput {
  std::vector<float> mu;
  std::vector<float> var;  // sigma^2, elementwise > 0
  DType precision = DType::kF32;
};

struct DetectorModel {
  ModelSpec spec;
  std::map<std::string, Tensor> weights;
  DType precision = DType::kF32;
  /// Activation quantization per recorded site ("input", "enc.<i>", "mu",
  /// "var"); present iff precision is qint8.
  std::map<std::string, QuantParams> activation_quant;
  std::map<std::string, std::string> metadata;

  const Tensor& weight(const std::string& name) const;
  bool operator==(const DetectorModel& other) const;
};

/// Fresh model with He-normal weights drawn from `seed`.
DetectorModel init_model(const ModelSpec& spec, std::uint64_t seed);

// Tensor-level layer operators. Activations are CHW (one sample) or NCHW.

/// Cross-correlation. f32 inputs give f32 output; f16 weights accumulate in
/// f32 and store the output as f16; qint8 input and weights accumulate in
/// int32 and requantize to `out_qp` (required in that case).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding,
              std::optional<QuantParams> out_qp = std::nullopt);
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b,
             std::optional<QuantParams> out_qp = std::nullopt);
Tensor maxpool2d(const Tensor& x, int kernel);
Tensor relu(const Tensor& x);

enum class BatchNormMode { kTraining, kInference };

/// Training mode normalizes with batch statistics (x must be NCHW) and
/// updates the running statistics in place with `momentum`.
Tensor batchnorm2d(const Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                   std::vector<float>& running_mean, std::vector<float>& running_var, double eps,
                   BatchNormMode mode, double momentum = 0.1);

// Inference

/// Prepared inference engine for one model at its stored precision. Cheap to
/// share between threads; encode() is const.
class Encoder {
 public:
  explicit Encoder(const DetectorModel& model);
  ~Encoder();
  Encoder(Encoder&&) noexcept;
  Encoder& operator=(Encoder&&) noexcept;

  const Geometry& input() const noexcept;
  DType precision() const noexcept;
  int n_latent() const noexcept;

  /// x: CHW tensor with the model's input geometry.
  LatentOutput encode(const Tensor& x) const;
  std::vector<LatentOutput> encode_batch(std::span<const Tensor> xs) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

LatentOutput encode(const DetectorModel& model, const Tensor& x);

/// Decoder pass for one latent vector; output has the input geometry.
Tensor decode(const DetectorModel& model, std::span<const float> z);

// Loss and training

enum class Reduction { kMean, kSum };

struct LossTerms {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

/// KL of a diagonal Gaussian to N(0, I): 1/2 * sum(mu^2 + var - ln var - 1).
double gaussian_kl(std::span<const float> mu, std::span<const float> var);

/// recon = squared error averaged (kMean) or summed (kSum) over pixels;
/// total = recon + beta * kl.
LossTerms beta_vae_loss(std::span<const float> x, std::span<const float> x_hat, const LatentOutput& latent,
                        double beta, Reduction recon = Reduction::kMean);

enum class Optimizer { kAdam, kSgd };

struct TrainOptions {
  int epochs = 30;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kAdam;
  Reduction recon = Reduction::kSum;
};

struct TrainResult {
  DetectorModel model;
  std::vector<double> loss_history;  // mean total loss per epoch
};

/// Deterministic given options.seed. Throws on empty data, geometry mismatch
/// or a non-finite loss.
TrainResult train(const ModelSpec& spec, std::span<const Tensor> data, const TrainOptions& opts);
TrainResult train(const DetectorModel& init, std::span<const Tensor> data, const TrainOptions& opts);

// Precision conversion

/// Folds every BatchNorm2D that directly follows a Conv2D into that conv.
DetectorModel fold_batchnorm(const DetectorModel& model);

/// Static int8: folds BatchNorm, quantizes weights symmetrically per tensor
/// and observes activation ranges (asymmetric) over the calibration inputs.
DetectorModel quantize_model(const DetectorModel& model, std::span<const Tensor> calibration);

DetectorModel cast_model_f16(const DetectorModel& model);

// Disentanglement

/// MIG from precomputed latent means (samples x dims) and integer factor
/// labels (samples x factors).
double mig_score(std::span<const std::vector<float>> latent_means,
                 std::span<const std::vector<int>> factor_labels, int n_bins);
double mig_score(const DetectorModel& model, std::span<const Tensor> probes,
                 std::span<const std::vector<int>> factor_labels, int n_bins);

// Serialization ("OODM" v1)

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::vector<std::uint8_t> save_model(const DetectorModel& model);
DetectorModel load_model(std::span<const std::uint8_t> bytes);
void save_model_file(const DetectorModel& model, const std::string& path);
DetectorModel load_model_file(const std::string& path);

/// CRC32 of the tensor payload as written by save_model.
std::uint32_t model_checksum(const DetectorModel& model);

}  // namespace oodkit::net
