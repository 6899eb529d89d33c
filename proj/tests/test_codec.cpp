#include <gtest/gtest.h>

#include <random>

#include "icm/errors.hpp"
#include "icm/entropy_codec.hpp"
#include "icm/ops.hpp"
#include "support/latents.hpp"

using namespace icm;

namespace {

// softplus^-1
float raw_scale(double sigma) { return static_cast<float>(std::log(std::expm1(sigma))); }

Tensor* find(const ParamList& params, const std::string& name) {
  for (const auto& p : params) {
    if (p.name == name) return const_cast<Tensor*>(&p.tensor);
  }
  return nullptr;
}

// Every element coded under N(0, sigma): zero context weights, constant biases.
DualSpatialModel constant_model(int channels, double sigma) {
  Rng rng(0);
  DualSpatialModel m(channels, 8, rng);
  const ParamList ps = m.parameters();
  for (const auto& p : ps) std::fill(const_cast<Tensor&>(p.tensor).data().begin(), const_cast<Tensor&>(p.tensor).data().end(), 0.0f);
  std::fill(find(ps, "entropy.anchor_scale_raw")->data().begin(), find(ps, "entropy.anchor_scale_raw")->data().end(),
            raw_scale(sigma));
  auto bias = find(ps, "entropy.ctx2.bias")->data();
  std::fill(bias.begin() + channels, bias.end(), raw_scale(sigma));
  return m;
}

}  // namespace

TEST(Quantize, RoundingExamples) {
  const Tensor y({4}, std::vector<float>{2.4f, -1.6f, 3.0f, -7.0f});
  const Tensor q = quantize(y, QuantMode::round);
  EXPECT_EQ(q.at(0), 2.0f);
  EXPECT_EQ(q.at(1), -2.0f);
  EXPECT_EQ(q.at(2), 3.0f);
  EXPECT_EQ(q.at(3), -7.0f);
  EXPECT_THROW(quantize(Tensor({1}, std::vector<float>{NAN}), QuantMode::round), NumericalError);
}

TEST(Quantize, NoiseIsSeededAndBounded) {
  Rng rng(1);
  const Tensor y = uniform_tensor({200}, 5.0f, rng, false);
  const Tensor a = quantize(y, QuantMode::noise, 3), b = quantize(y, QuantMode::noise, 3);
  const Tensor c = quantize(y, QuantMode::noise, 4);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_LE(std::abs(a.at(i) - y.at(i)), 0.5f);
}

TEST(Likelihood, NumericalIntegrationOracle) {
  // Frozen from tools/oracles.py (mpmath quadrature of the Gaussian density).
  EXPECT_NEAR(gauss::likelihood<double>(0, 0, 1e6), 3.9894228040141607e-07, 1e-16);
  EXPECT_NEAR(gauss::likelihood<double>(0, 0, 1), 0.38292492254802618, 1e-14);
  EXPECT_NEAR(gauss::likelihood<double>(3, 0.25, 0.7), 0.00065212928430332696, 1e-15);
  EXPECT_NEAR(gauss::likelihood<double>(-2, 1.5, 2.0), 0.044057069320678856, 1e-14);
  EXPECT_NEAR(gauss::likelihood<double>(40, -3, 9), 4.9507947006162429e-07, 1e-17);
}

TEST(Likelihood, MaximalAtTheMean) {
  for (int k = -5; k <= 5; ++k) {
    const double at = gauss::likelihood<double>(k, k, 1.3);
    for (int j = -12; j <= 12; ++j) {
      if (j != k) EXPECT_GT(at, gauss::likelihood<double>(j, k, 1.3));
    }
  }
}

TEST(Rate, HalfProbabilityElementsGiveClosedFormBpp) {
  const DualSpatialModel m = constant_model(16, 0.74130110925280093);
  const Tensor y({1, 16, 4, 4}, 0.0f);  // 256 elements
  EXPECT_NEAR(estimate_rate_bpp(y, m, 64, 64), 256.0 / 4096.0, 1e-6);
}

TEST(Rate, NearDeterministicPmfIsNearlyFree) {
  const DualSpatialModel m = constant_model(8, 0.01);  // clamped to the floor
  const Tensor y({1, 8, 4, 4}, 0.0f);
  EXPECT_LT(estimate_rate_bpp(y, m, 64, 64), 1e-3);
  EXPECT_GT(m.clamped_scales(), 0);
}

TEST(Rate, ChannelPermutationInvariance) {
  Rng rng(2);
  const int c = 6;
  DualSpatialModel a(c, 5, rng), b(c, 5, rng);
  const std::vector<int> perm{3, 0, 5, 1, 4, 2};
  const ParamList pa = a.parameters(), pb = b.parameters();
  auto copy_perm = [&](const std::string& name, auto index) {
    const Tensor& src = *find(pa, name);
    Tensor& dst = *find(pb, name);
    for (std::int64_t i = 0; i < src.numel(); ++i) dst.data()[index(i)] = src.at(i);
  };
  copy_perm("entropy.anchor_mean", [&](std::int64_t i) { return perm[i]; });
  copy_perm("entropy.anchor_scale_raw", [&](std::int64_t i) { return perm[i]; });
  copy_perm("entropy.ctx1.bias", [](std::int64_t i) { return i; });
  // ctx1 weight [hidden, C, 3, 3]: permute the input-channel axis.
  copy_perm("entropy.ctx1.weight", [&](std::int64_t i) {
    const std::int64_t o = i / (c * 9), ch = (i / 9) % c, r = i % 9;
    return (o * c + perm[ch]) * 9 + r;
  });
  // ctx2 weight [2C, hidden, 3, 3]: permute both output halves.
  copy_perm("entropy.ctx2.weight", [&](std::int64_t i) {
    const std::int64_t o = i / (5 * 9), rest = i % (5 * 9);
    const std::int64_t po = o < c ? perm[o] : c + perm[o - c];
    return po * 5 * 9 + rest;
  });
  copy_perm("entropy.ctx2.bias", [&](std::int64_t o) { return o < c ? perm[o] : c + perm[o - c]; });
  const Tensor y = support::sample_latent(a, 4, 4, rng, 2.0);
  Tensor yp({1, c, 4, 4});
  for (int ch = 0; ch < c; ++ch) {
    for (int k = 0; k < 16; ++k) yp.data()[perm[ch] * 16 + k] = y.at(ch * 16 + k);
  }
  EXPECT_NEAR(estimate_rate_bpp(y, a, 64, 64), estimate_rate_bpp(yp, b, 64, 64), 1e-5);
}

TEST(Rate, AnchorsNeverDependOnNonAnchors) {
  Rng rng(3);
  DualSpatialModel m(5, 6, rng);
  Tensor y = support::sample_latent(m, 6, 6, rng, 2.0);
  const Tensor before = m.likelihoods(y);
  const GaussianParams p0 = m.params(y);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      if ((i + j) % 2 == 1) y.ptr()[(2 * 6 + i) * 6 + j] += 7.0f;
    }
  }
  const Tensor after = m.likelihoods(y);
  const GaussianParams p1 = m.params(y);
  for (int c = 0; c < 5; ++c) {
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        const int k = (c * 6 + i) * 6 + j;
        if ((i + j) % 2 == 0) EXPECT_EQ(before.at(k), after.at(k));
        // Parameters of every position depend on anchors only.
        EXPECT_EQ(p0.mu.at(k), p1.mu.at(k));
        EXPECT_EQ(p0.sigma.at(k), p1.sigma.at(k));
      }
    }
  }
}

TEST(Rate, BitsGradientMatchesFiniteDifferences) {
  std::mt19937_64 g(4);
  std::uniform_real_distribution<double> u(-3, 3), s(0.2, 4);
  const double h = 1e-6;
  for (int t = 0; t < 50; ++t) {
    const double y = std::round(u(g)) + u(g) / 6.0, mu = u(g), sigma = s(g);
    const auto r = gauss::bits_with_grad<double>(y, mu, sigma);
    auto f = [](double a, double b, double c) { return gauss::bits_with_grad<double>(a, b, c).bits; };
    const double fy = (f(y + h, mu, sigma) - f(y - h, mu, sigma)) / (2 * h);
    const double fm = (f(y, mu + h, sigma) - f(y, mu - h, sigma)) / (2 * h);
    const double fs = (f(y, mu, sigma + h) - f(y, mu, sigma - h)) / (2 * h);
    EXPECT_NEAR(r.dy, fy, 1e-3 * std::max(1.0, std::abs(fy)));
    EXPECT_NEAR(r.dmu, fm, 1e-3 * std::max(1.0, std::abs(fm)));
    EXPECT_NEAR(r.dsigma, fs, 1e-3 * std::max(1.0, std::abs(fs)));
  }
}

TEST(Rate, ModelGradientReachesParametersAndLatent) {
  Rng rng(5);
  DualSpatialModel m(3, 4, rng);
  Tensor y = uniform_tensor({1, 3, 4, 4}, 2.0f, rng, true);
  Tensor bits = m.rate_bits(quantize(y, QuantMode::noise, 1));
  bits.backward();
  ASSERT_TRUE(y.has_grad());
  for (const auto& p : m.parameters()) EXPECT_TRUE(p.tensor.has_grad()) << p.name;
  // Single-coordinate check of the anchor mean in float.
  const ParamList ps = m.parameters();
  Tensor& mean = *find(ps, "entropy.anchor_mean");
  const float g = mean.grad()[1];
  const Tensor yq = quantize(y, QuantMode::noise, 1).detach();
  const float keep = mean.data()[1];
  const float h = 1e-2f;
  mean.data()[1] = keep + h;
  const double up = m.rate_bits(yq).item();
  mean.data()[1] = keep - h;
  const double dn = m.rate_bits(yq).item();
  mean.data()[1] = keep;
  EXPECT_NEAR(g, (up - dn) / (2 * h), 2e-2 * std::max(1.0, std::abs(double(g))));
}

TEST(RangeCoder, ArbitraryIntervalsAndBypassBits) {
  std::mt19937_64 g(6);
  struct Sym {
    std::uint32_t start, size;
    std::uint64_t bits;
    int nbits;
  };
  std::vector<Sym> syms;
  rc::Encoder enc;
  for (int i = 0; i < 5000; ++i) {
    const std::uint32_t size = 1 + static_cast<std::uint32_t>(g() % (i % 7 == 0 ? 65535 : 40));
    const std::uint32_t start = static_cast<std::uint32_t>(g() % (rc::kTotal - size + 1));
    const int nb = static_cast<int>(g() % 20);
    const std::uint64_t bits = nb ? g() & ((std::uint64_t{1} << nb) - 1) : 0;
    syms.push_back({start, size, bits, nb});
    enc.encode(start, size);
    enc.encode_bits(bits, nb);
  }
  const auto bytes = enc.finish();
  rc::Decoder dec(bytes);
  for (const auto& s : syms) {
    const std::uint32_t t = dec.peek();
    ASSERT_GE(t, s.start);
    ASSERT_LT(t, s.start + s.size);
    dec.consume(s.start, s.size);
    ASSERT_EQ(dec.decode_bits(s.nbits), s.bits);
  }
  EXPECT_TRUE(dec.exhausted());
}

TEST(RangeCoder, ReadingFarPastTheEndIsCorrupt) {
  rc::Encoder enc;
  enc.encode(0, 1);
  const auto bytes = enc.finish();
  rc::Decoder dec(bytes);
  EXPECT_THROW(
      {
        for (int i = 0; i < 64; ++i) {
          dec.peek();
          dec.consume(0, 1);
        }
      },
      CorruptStreamError);
}

TEST(Cdf, MonotoneWithRoomForEverySymbol) {
  for (double mu : {-200.0, -3.3, 0.0, 0.4, 126.9, 500.0}) {
    for (double sigma : {0.11, 0.7, 5.0, 80.0}) {
      EXPECT_EQ(symbol_cum(0, mu, sigma), 0u);
      EXPECT_EQ(symbol_cum(256, mu, sigma), rc::kTotal);
      for (int i = 0; i < 256; ++i) EXPECT_GE(symbol_cum(i + 1, mu, sigma), symbol_cum(i, mu, sigma) + 1);
    }
  }
}

TEST(Codec, RoundTripIncludingEscapes) {
  Rng rng(7);
  DualSpatialModel m(12, 8, rng);
  for (int t = 0; t < 40; ++t) {
    Tensor y = support::sample_latent(m, 4, 8, rng, 1.0 + t % 4);
    if (t % 2 == 0) support::plant_extremes(y, rng);
    const Bitstream bs = encode_latent(y, m, 64, 128, 2, 3);
    const Bitstream parsed = Bitstream::parse(bs.serialize());
    EXPECT_EQ(parsed.height, 64);
    EXPECT_EQ(parsed.width, 128);
    EXPECT_EQ(parsed.task_id, 2);
    EXPECT_EQ(parsed.lambda_index, 3);
    EXPECT_EQ(parsed.channels, 12);
    const Tensor d = decode_latent(parsed, m);
    ASSERT_TRUE(std::equal(y.data().begin(), y.data().end(), d.data().begin())) << "latent " << t;
  }
}

TEST(Codec, RateGapOnModelSampledLatents) {
  Rng rng(8);
  DualSpatialModel m(16, 8, rng);
  for (int t = 0; t < 30; ++t) {
    const Tensor y = support::sample_latent(m, 4, 4, rng, 1.0 + t % 3);
    const Bitstream bs = encode_latent(y, m, 64, 64, 0, 0);
    NoGradGuard ng;
    const double est = m.rate_bits(y).item();
    EXPECT_LE(8.0 * bs.total_bytes(), est * 1.02 + 8.0 * 64) << "latent " << t;
    EXPECT_LE(8.0 * bs.payload.size(), est * 1.02 + 48.0) << "latent " << t;
  }
}

TEST(Codec, RejectsWrongModelAndDamagedStreams) {
  Rng rng(9);
  DualSpatialModel m(4, 8, rng), other(4, 8, rng);
  const Tensor y = support::sample_latent(m, 4, 4, rng, 3.0);
  const auto bytes = encode_latent(y, m, 64, 64, 0, 0).serialize();
  EXPECT_THROW(decode_latent(Bitstream::parse(bytes), other), IncompatibleModelError);
  DualSpatialModel wider(5, 8, rng);
  EXPECT_THROW(decode_latent(Bitstream::parse(bytes), wider), IncompatibleModelError);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(Bitstream::parse(truncated), CorruptStreamError);
  EXPECT_THROW(Bitstream::parse(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10)), CorruptStreamError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(Bitstream::parse(bad_magic), CorruptStreamError);
  auto padded = bytes;
  padded.push_back(0x55);
  EXPECT_THROW(Bitstream::parse(padded), CorruptStreamError);

  Bitstream bs = Bitstream::parse(bytes);
  bs.payload.insert(bs.payload.end(), 8, 0xAB);
  EXPECT_THROW(decode_latent(bs, m), CorruptStreamError);
}

TEST(Codec, RejectsNonIntegerAndMisshapenLatents) {
  Rng rng(10);
  DualSpatialModel m(2, 4, rng);
  EXPECT_THROW(encode_latent(Tensor({1, 2, 4, 4}, 0.5f), m, 64, 64, 0, 0), ArgumentError);
  EXPECT_THROW(encode_latent(Tensor({1, 2, 4, 4}), m, 48, 64, 0, 0), ShapeError);
  EXPECT_THROW(encode_latent(Tensor({1, 3, 4, 4}), m, 64, 64, 0, 0), ShapeError);
}
