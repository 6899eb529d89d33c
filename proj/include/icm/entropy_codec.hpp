#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "icm/nn.hpp"
#include "icm/range_coder.hpp"

namespace icm {

constexpr float kScaleFloor = 0.11f;
constexpr double kLikelihoodFloor = 1e-9;
constexpr int kSymbolMax = 127;  // direct support is [-127, 127]

enum class QuantMode { noise, round };

/// noise: y + U(-0.5, 0.5) drawn from `seed` (gradient passes to y);
/// round: nearest integer, ties away from zero (no gradient).
Tensor quantize(const Tensor& y, QuantMode mode, std::uint64_t seed = 0);

namespace gauss {

template <class S>
S cdf(S x) {
  return S(0.5) * std::erfc(-x / std::sqrt(S(2)));
}

template <class S>
S pdf(S x) {
  return std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * S(M_PI));
}

/// Mass of N(mu, sigma) on [y - 0.5, y + 0.5], evaluated on the lower tail
/// for accuracy.
template <class S>
S likelihood(S y, S mu, S sigma) {
  const S v = std::abs(y - mu);
  return cdf((S(0.5) - v) / sigma) - cdf((S(-0.5) - v) / sigma);
}

template <class S>
struct BitsGrad {
  S bits, dy, dmu, dsigma;
};

/// -log2(max(p, floor)) and its derivatives. Below the floor the gradient of
/// p is still used so that outliers keep being pulled in.
template <class S>
BitsGrad<S> bits_with_grad(S y, S mu, S sigma, S floor = S(kLikelihoodFloor)) {
  const S d = y - mu;
  const S v = std::abs(d);
  const S a = (S(0.5) - v) / sigma;
  const S b = (S(-0.5) - v) / sigma;
  const S p = cdf(a) - cdf(b);
  const S pb = std::max(p, floor);
  const S dp_dv = (pdf(b) - pdf(a)) / sigma;
  const S dp_dsigma = -(pdf(a) * a - pdf(b) * b) / sigma;
  const S sgn = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
  const S k = S(-1) / (pb * std::log(S(2)));
  return {-std::log2(pb), k * dp_dv * sgn, -k * dp_dv * sgn, k * dp_dsigma};
}

}  // namespace gauss

/// Sum over elements of -log2 max(p, 1e-9); differentiable in all inputs.
Tensor gaussian_bits(const Tensor& yhat, const Tensor& mu, const Tensor& sigma);

/// 1 at checkerboard anchors ((i + j) even), else 0; shape [B, C, h, w].
Tensor anchor_mask(int batch, int channels, int h, int w);

struct GaussianParams {
  Tensor mu, sigma;  // [B, C, h, w]
};

/// Checkerboard two-pass entropy model: anchors under a learned per-channel
/// Gaussian, non-anchors under a conv context net fed with anchors only.
class DualSpatialModel {
 public:
  DualSpatialModel() = default;
  DualSpatialModel(int channels, int hidden, Rng& rng);

  int channels() const { return channels_; }
  GaussianParams params(const Tensor& yhat) const;
  /// Same as params() but only reads anchor positions of yhat by contract.
  Tensor likelihoods(const Tensor& yhat) const;
  Tensor rate_bits(const Tensor& yhat) const;
  ParamList parameters() const;
  std::uint64_t hash() const;
  /// Elements whose scale hit the floor in the last params() call.
  std::int64_t clamped_scales() const { return clamped_; }

 private:
  int channels_ = 0;
  Tensor anchor_mean_, anchor_scale_raw_;
  Conv2d ctx1_, ctx2_;
  mutable std::int64_t clamped_ = 0;
};

double estimate_rate_bpp(const Tensor& yhat, const DualSpatialModel& model, int image_h, int image_w);

struct Bitstream {
  static constexpr char kMagic[4] = {'I', 'C', 'M', '1'};
  static constexpr std::uint8_t kVersion = 1;
  static constexpr size_t kHeaderBytes = 25;

  std::uint8_t version = kVersion;
  std::uint8_t task_id = 0;
  std::uint8_t lambda_index = 0;
  std::uint16_t height = 0, width = 0, channels = 0;
  std::uint64_t cdf_hash = 0;
  std::vector<std::uint8_t> payload;

  std::vector<std::uint8_t> serialize() const;
  static Bitstream parse(std::span<const std::uint8_t> bytes);
  size_t total_bytes() const { return kHeaderBytes + payload.size(); }
};

void write_bitstream(const std::filesystem::path& path, const Bitstream& bs);
Bitstream read_bitstream(const std::filesystem::path& path);

/// Codes a single rounded latent [1, C, H/16, W/16]; anchors first, then
/// non-anchors, channel-major raster order within each pass.
Bitstream encode_latent(const Tensor& yhat, const DualSpatialModel& model, int image_h, int image_w,
                        std::uint8_t task_id, std::uint8_t lambda_index);
Tensor decode_latent(const Bitstream& bs, const DualSpatialModel& model);

/// Cumulative frequency of symbol index `idx` in [0, 256] for a quantized
/// Gaussian; index 255 is the escape bucket.
std::uint32_t symbol_cum(int idx, double mu, double sigma);

}  // namespace icm
