#include "icm/entropy_codec.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "icm/errors.hpp"
#include "icm/ops.hpp"

namespace icm {

Tensor quantize(const Tensor& y, QuantMode mode, std::uint64_t seed) {
  for (float v : y.data()) {
    if (!std::isfinite(v)) throw NumericalError("quantize: non-finite latent value");
  }
  if (mode == QuantMode::round) {
    FloatVec out(y.data().begin(), y.data().end());
    for (float& v : out) v = std::round(v);
    return Tensor(y.shape(), std::move(out));
  }
  Rng rng(mix_seed(seed, 0x901de));
  FloatVec noise(static_cast<size_t>(y.numel()));
  for (float& v : noise) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  return ops::add(y, Tensor(y.shape(), std::move(noise)));
}

Tensor gaussian_bits(const Tensor& yhat, const Tensor& mu, const Tensor& sigma) {
  if (yhat.shape() != mu.shape() || yhat.shape() != sigma.shape()) {
    throw ShapeError("gaussian_bits: shape mismatch " + shape_str(yhat.shape()) + " / " + shape_str(mu.shape()) +
                     " / " + shape_str(sigma.shape()));
  }
  const size_t n = static_cast<size_t>(yhat.numel());
  double total = 0.0;
  FloatVec gy(n), gm(n), gs(n);
  for (size_t i = 0; i < n; ++i) {
    const auto r = gauss::bits_with_grad<double>(yhat.at(static_cast<std::int64_t>(i)), mu.at(static_cast<std::int64_t>(i)),
                                                 sigma.at(static_cast<std::int64_t>(i)));
    total += r.bits;
    gy[i] = static_cast<float>(r.dy);
    gm[i] = static_cast<float>(r.dmu);
    gs[i] = static_cast<float>(r.dsigma);
  }
  return make_result({1}, {static_cast<float>(total)}, {yhat, mu, sigma}, [=](Node& self) {
    const float g = self.grad[0];
    const FloatVec* grads[3] = {&gy, &gm, &gs};
    for (int p = 0; p < 3; ++p) {
      Node& par = *self.parents[static_cast<size_t>(p)];
      if (!par.requires_grad) continue;
      float* dst = par.grad_ptr();
      for (size_t i = 0; i < n; ++i) dst[i] += g * (*grads[p])[i];
    }
  });
}

Tensor anchor_mask(int batch, int channels, int h, int w) {
  FloatVec m(static_cast<size_t>(batch) * channels * h * w);
  size_t k = 0;
  for (int b = 0; b < batch * channels; ++b) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) m[k++] = (i + j) % 2 == 0 ? 1.0f : 0.0f;
    }
  }
  return Tensor({batch, channels, h, w}, std::move(m));
}

DualSpatialModel::DualSpatialModel(int channels, int hidden, Rng& rng)
    : channels_(channels),
      anchor_mean_({channels}, 0.0f, true),
      anchor_scale_raw_({channels}, std::log(std::expm1(1.0f)), true),
      ctx1_(channels, hidden, 3, 1, 1, rng),
      ctx2_(hidden, 2 * channels, 3, 1, 1, rng) {}

GaussianParams DualSpatialModel::params(const Tensor& yhat) const {
  if (yhat.rank() != 4 || yhat.dim(1) != channels_) {
    throw ShapeError("entropy model expects " + std::to_string(channels_) + " channels, got " +
                     shape_str(yhat.shape()));
  }
  const int b = yhat.dim(0), h = yhat.dim(2), w = yhat.dim(3);
  const Tensor anchors = anchor_mask(b, channels_, h, w);
  FloatVec inv(anchors.data().begin(), anchors.data().end());
  for (float& v : inv) v = 1.0f - v;
  const Tensor non_anchors(anchors.shape(), std::move(inv));

  const Tensor ctx = ctx2_.forward(ops::gelu(ctx1_.forward(ops::mul(yhat, anchors))));
  const Tensor ctx_mu = ops::slice_channels(ctx, 0, channels_);
  const Tensor ctx_scale_pre = ops::softplus(ops::slice_channels(ctx, channels_, channels_));
  const Tensor anchor_scale_pre = ops::softplus(anchor_scale_raw_);

  clamped_ = 0;
  for (int i = 0; i < ctx_scale_pre.numel(); ++i) {
    if (non_anchors.at(i) > 0.0f && ctx_scale_pre.at(i) < kScaleFloor) ++clamped_;
  }
  for (int c = 0; c < channels_; ++c) {
    if (anchor_scale_pre.at(c) < kScaleFloor) clamped_ += static_cast<std::int64_t>(b) * ((h * w + 1) / 2);
  }

  GaussianParams out;
  out.mu = ops::add(ops::mul(ops::broadcast_channels(anchor_mean_, b, h, w), anchors), ops::mul(ctx_mu, non_anchors));
  const Tensor sig_a = ops::broadcast_channels(ops::lower_bound(anchor_scale_pre, kScaleFloor), b, h, w);
  const Tensor sig_n = ops::lower_bound(ctx_scale_pre, kScaleFloor);
  out.sigma = ops::add(ops::mul(sig_a, anchors), ops::mul(sig_n, non_anchors));
  return out;
}

Tensor DualSpatialModel::likelihoods(const Tensor& yhat) const {
  NoGradGuard ng;
  const GaussianParams p = params(yhat);
  FloatVec out(static_cast<size_t>(yhat.numel()));
  for (size_t i = 0; i < out.size(); ++i) {
    const auto k = static_cast<std::int64_t>(i);
    out[i] = static_cast<float>(
        std::max(kLikelihoodFloor, gauss::likelihood<double>(yhat.at(k), p.mu.at(k), p.sigma.at(k))));
  }
  return Tensor(yhat.shape(), std::move(out));
}

Tensor DualSpatialModel::rate_bits(const Tensor& yhat) const {
  const GaussianParams p = params(yhat);
  return gaussian_bits(yhat, p.mu, p.sigma);
}

ParamList DualSpatialModel::parameters() const {
  ParamList out{{"entropy.anchor_mean", anchor_mean_}, {"entropy.anchor_scale_raw", anchor_scale_raw_}};
  ctx1_.collect("entropy.ctx1", out);
  ctx2_.collect("entropy.ctx2", out);
  return out;
}

std::uint64_t DualSpatialModel::hash() const {
  std::vector<Tensor> ts;
  for (const auto& p : parameters()) ts.push_back(p.tensor);
  std::uint64_t h = hash_tensors(ts);
  const double consts[] = {kScaleFloor, kLikelihoodFloor, kSymbolMax, rc::kTotalBits};
  return fnv1a({reinterpret_cast<const std::uint8_t*>(consts), sizeof(consts)}, h);
}

double estimate_rate_bpp(const Tensor& yhat, const DualSpatialModel& model, int image_h, int image_w) {
  if (image_h <= 0 || image_w <= 0) throw ArgumentError("estimate_rate_bpp: image extent must be positive");
  NoGradGuard ng;
  const double bits = model.rate_bits(yhat).item();
  return bits / (static_cast<double>(yhat.dim(0)) * image_h * image_w);
}

// ---------------------------------------------------------------- coding

namespace {

constexpr double kCdfScale = 65280.0;  // 2^16 - 256, leaving one count per symbol
constexpr int kEscape = 2 * kSymbolMax + 1;

struct QuantizedGaussian {
  double mu, sigma, f0;
  QuantizedGaussian(double m, double s) : mu(m), sigma(s), f0(raw(0)) {}
  double raw(int idx) const {
    return std::floor(gauss::cdf<double>((idx - kSymbolMax - 0.5 - mu) / sigma) * kCdfScale);
  }
  std::uint32_t cum(int idx) const {
    if (idx >= kEscape + 1) return rc::kTotal;
    return static_cast<std::uint32_t>(idx + static_cast<std::int64_t>(raw(idx) - f0));
  }
};

int floor_log2(std::uint64_t v) {
  int n = 0;
  while (v >>= 1) ++n;
  return n;
}

void encode_symbol(rc::Encoder& enc, std::int64_t value, double mu, double sigma) {
  const QuantizedGaussian q(mu, sigma);
  const bool escape = value < -kSymbolMax || value > kSymbolMax;
  const int idx = escape ? kEscape : static_cast<int>(value + kSymbolMax);
  const std::uint32_t lo = q.cum(idx), hi = q.cum(idx + 1);
  enc.encode(lo, hi - lo);
  if (escape) {
    enc.encode_bits(value < 0 ? 1 : 0, 1);
    const std::uint64_t n = static_cast<std::uint64_t>(std::abs(value)) - kSymbolMax;
    const int nb = floor_log2(n);
    enc.encode_bits(0, nb);
    enc.encode_bits(n, nb + 1);
  }
}

std::int64_t decode_symbol(rc::Decoder& dec, double mu, double sigma) {
  const QuantizedGaussian q(mu, sigma);
  const std::uint32_t target = dec.peek();
  int lo = 0, hi = kEscape;  // find largest idx with cum(idx) <= target
  while (lo < hi) {
    const int mid = (lo + hi + 1) / 2;
    if (q.cum(mid) <= target) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  const std::uint32_t start = q.cum(lo), end = q.cum(lo + 1);
  dec.consume(start, end - start);
  if (lo != kEscape) return lo - kSymbolMax;
  const bool negative = dec.decode_bits(1) != 0;
  int nb = 0;
  while (dec.decode_bits(1) == 0) {
    if (++nb > 62) throw CorruptStreamError("escape code too long");
  }
  const std::uint64_t n = (std::uint64_t{1} << nb) | (nb > 0 ? dec.decode_bits(nb) : 0);
  const auto mag = static_cast<std::int64_t>(n) + kSymbolMax;
  return negative ? -mag : mag;
}

template <class F>
void for_each_position(int c, int h, int w, bool anchors, F&& fn) {
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        if (((i + j) % 2 == 0) == anchors) fn((static_cast<size_t>(ch) * h + i) * w + j);
      }
    }
  }
}

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, size_t& pos, int bytes) {
  if (pos + static_cast<size_t>(bytes) > in.size()) throw CorruptStreamError("bitstream header truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[pos + static_cast<size_t>(i)]) << (8 * i);
  pos += static_cast<size_t>(bytes);
  return v;
}

}  // namespace

std::uint32_t symbol_cum(int idx, double mu, double sigma) { return QuantizedGaussian(mu, sigma).cum(idx); }

std::vector<std::uint8_t> Bitstream::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, version, 1);
  put_le(out, task_id, 1);
  put_le(out, lambda_index, 1);
  put_le(out, height, 2);
  put_le(out, width, 2);
  put_le(out, channels, 2);
  put_le(out, cdf_hash, 8);
  put_le(out, payload.size(), 4);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Bitstream Bitstream::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw CorruptStreamError("bitstream shorter than its header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CorruptStreamError("bad bitstream magic");
  size_t pos = 4;
  Bitstream bs;
  bs.version = static_cast<std::uint8_t>(get_le(bytes, pos, 1));
  if (bs.version != kVersion) throw CorruptStreamError("unsupported bitstream version " + std::to_string(bs.version));
  bs.task_id = static_cast<std::uint8_t>(get_le(bytes, pos, 1));
  bs.lambda_index = static_cast<std::uint8_t>(get_le(bytes, pos, 1));
  bs.height = static_cast<std::uint16_t>(get_le(bytes, pos, 2));
  bs.width = static_cast<std::uint16_t>(get_le(bytes, pos, 2));
  bs.channels = static_cast<std::uint16_t>(get_le(bytes, pos, 2));
  bs.cdf_hash = get_le(bytes, pos, 8);
  const auto len = static_cast<size_t>(get_le(bytes, pos, 4));
  if (bytes.size() - pos != len) throw CorruptStreamError("payload length does not match stream size");
  bs.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return bs;
}

void write_bitstream(const std::filesystem::path& path, const Bitstream& bs) {
  const auto bytes = bs.serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Bitstream read_bitstream(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return Bitstream::parse(bytes);
}

Bitstream encode_latent(const Tensor& yhat, const DualSpatialModel& model, int image_h, int image_w,
                        std::uint8_t task_id, std::uint8_t lambda_index) {
  if (yhat.rank() != 4 || yhat.dim(0) != 1 || yhat.dim(1) != model.channels()) {
    throw ShapeError("encode_latent: expected [1, " + std::to_string(model.channels()) + ", h, w], got " +
                     shape_str(yhat.shape()));
  }
  if (image_h % 16 != 0 || image_w % 16 != 0 || image_h / 16 != yhat.dim(2) || image_w / 16 != yhat.dim(3) ||
      image_h > 65535 || image_w > 65535) {
    throw ShapeError("encode_latent: latent grid does not match a stride-16 image of " + std::to_string(image_h) +
                     "x" + std::to_string(image_w));
  }
  for (float v : yhat.data()) {
    if (v != std::round(v) || std::abs(v) > 1e9f) throw ArgumentError("encode_latent: latent must be integer-valued");
  }
  NoGradGuard ng;
  const GaussianParams p = model.params(yhat);
  const int c = yhat.dim(1), h = yhat.dim(2), w = yhat.dim(3);
  rc::Encoder enc;
  for (bool anchors : {true, false}) {
    for_each_position(c, h, w, anchors, [&](size_t i) {
      const auto k = static_cast<std::int64_t>(i);
      encode_symbol(enc, static_cast<std::int64_t>(yhat.at(k)), p.mu.at(k), p.sigma.at(k));
    });
  }
  Bitstream bs;
  bs.task_id = task_id;
  bs.lambda_index = lambda_index;
  bs.height = static_cast<std::uint16_t>(image_h);
  bs.width = static_cast<std::uint16_t>(image_w);
  bs.channels = static_cast<std::uint16_t>(c);
  bs.cdf_hash = model.hash();
  bs.payload = enc.finish();
  return bs;
}

Tensor decode_latent(const Bitstream& bs, const DualSpatialModel& model) {
  if (bs.cdf_hash != model.hash() || bs.channels != model.channels()) {
    throw IncompatibleModelError("bitstream was produced by a different entropy model");
  }
  if (bs.height % 16 != 0 || bs.width % 16 != 0 || bs.height == 0 || bs.width == 0) {
    throw CorruptStreamError("bitstream image extent is not a positive multiple of 16");
  }
  NoGradGuard ng;
  const int c = bs.channels, h = bs.height / 16, w = bs.width / 16;
  Tensor yhat({1, c, h, w}, 0.0f);
  rc::Decoder dec(bs.payload);
  // Pass 1: anchors need no context, so any non-anchor fill gives the same params.
  const GaussianParams pa = model.params(yhat);
  for_each_position(c, h, w, true, [&](size_t i) {
    const auto k = static_cast<std::int64_t>(i);
    yhat.ptr()[i] = static_cast<float>(decode_symbol(dec, pa.mu.at(k), pa.sigma.at(k)));
  });
  const GaussianParams pn = model.params(yhat);
  for_each_position(c, h, w, false, [&](size_t i) {
    const auto k = static_cast<std::int64_t>(i);
    yhat.ptr()[i] = static_cast<float>(decode_symbol(dec, pn.mu.at(k), pn.sigma.at(k)));
  });
  if (!dec.exhausted()) throw CorruptStreamError("trailing bytes after payload");
  return yhat;
}

}  // namespace icm
