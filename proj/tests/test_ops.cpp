#include <gtest/gtest.h>

#include <functional>

#include "icm/errors.hpp"
#include "icm/nn.hpp"
#include "icm/ops.hpp"
#include "icm/prelim_decoder.hpp"

using namespace icm;

namespace {

// Central differences in float against the autograd result. The loss is a
// random projection of the op output so every output element contributes.
void gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
               float h = 1e-2f, double tol = 2e-2) {
  Rng rng(99);
  const Tensor probe_shape = f(inputs);
  const Tensor w = uniform_tensor(probe_shape.shape(), 1.0f, rng, false);
  auto loss = [&]() { return ops::sum(ops::mul(f(inputs), w)); };
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k];
    if (!x.requires_grad()) continue;
    ASSERT_TRUE(x.has_grad()) << "input " << k;
    const std::vector<float> g(x.grad().begin(), x.grad().end());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      const float keep = x.data()[i];
      x.data()[i] = keep + h;
      const double up = loss().item();
      x.data()[i] = keep - h;
      const double dn = loss().item();
      x.data()[i] = keep;
      const double fd = (up - dn) / (2.0 * h);
      EXPECT_NEAR(g[i], fd, tol * std::max(1.0, std::abs(fd))) << "input " << k << " element " << i;
    }
  }
}

Tensor rand(Shape s, std::uint64_t seed, float bound = 1.0f, bool grad = true) {
  Rng rng(seed);
  return uniform_tensor(s, bound, rng, grad);
}

}  // namespace

TEST(Gradients, Elementwise) {
  gradcheck([](const auto& in) { return ops::gelu(in[0]); }, {rand({2, 5}, 1, 2.0f)});
  gradcheck([](const auto& in) { return ops::softplus(in[0]); }, {rand({7}, 2, 3.0f)});
  gradcheck([](const auto& in) { return ops::mul(in[0], in[1]); }, {rand({3, 3}, 3), rand({3, 3}, 4)});
  gradcheck([](const auto& in) { return ops::sub(ops::scale(in[0], 3.0f), in[1]); }, {rand({4}, 5), rand({4}, 6)});
}

TEST(Gradients, LinearAlgebra) {
  gradcheck([](const auto& in) { return ops::linear(in[0], in[1], in[2]); },
            {rand({2, 3, 4}, 1), rand({4, 5}, 2), rand({5}, 3)});
  gradcheck([](const auto& in) { return ops::matmul(in[0], in[1]); }, {rand({3, 4}, 4), rand({4, 2}, 5)});
  gradcheck([](const auto& in) { return ops::layer_norm(in[0], in[1], in[2]); },
            {rand({2, 3, 6}, 6), rand({6}, 7), rand({6}, 8)}, 1e-2f, 3e-2);
  gradcheck([](const auto& in) { return ops::softmax_lastdim(in[0]); }, {rand({2, 5}, 9, 2.0f)});
}

TEST(Gradients, Convolutions) {
  gradcheck([](const auto& in) { return ops::conv2d(in[0], in[1], in[2], 2, 1); },
            {rand({1, 2, 5, 5}, 1), rand({3, 2, 3, 3}, 2), rand({3}, 3)});
  gradcheck([](const auto& in) { return ops::depthwise_conv2d(in[0], in[1], in[2], 2, 1); },
            {rand({2, 3, 6, 6}, 4), rand({3, 1, 3, 3}, 5), rand({3}, 6)});
  gradcheck([](const auto& in) { return ops::depthwise_conv2d(in[0], in[1], std::nullopt, 4, 0); },
            {rand({1, 2, 8, 8}, 7), rand({2, 1, 4, 4}, 8)});
}

TEST(Gradients, BatchNormTrainingMode) {
  Tensor rm({3}, 0.0f), rv({3}, 1.0f);
  gradcheck(
      [&](const auto& in) {
        Tensor m = rm.clone(), v = rv.clone();
        return ops::batch_norm2d(in[0], in[1], in[2], m, v, true);
      },
      {rand({2, 3, 3, 3}, 1, 2.0f), rand({3}, 2), rand({3}, 3)}, 1e-2f, 5e-2);
}

TEST(Gradients, ResizeAndTokens) {
  gradcheck([](const auto& in) { return ops::bicubic_resize(in[0], 7, 5); }, {rand({1, 2, 3, 4}, 1)});
  gradcheck([](const auto& in) { return ops::token_mean(ops::to_tokens(in[0])); }, {rand({2, 3, 2, 2}, 2)});
  gradcheck([](const auto& in) { return ops::slice_channels(ops::concat_channels({in[0], in[1]}), 1, 3); },
            {rand({1, 2, 2, 2}, 3), rand({1, 3, 2, 2}, 4)});
}

TEST(Gradients, Attention) {
  gradcheck([](const auto& in) { return ops::attention_scores(in[0], in[1], 2); }, {rand({1, 4, 4}, 1), rand({1, 3, 4}, 2)});
  gradcheck([](const auto& in) { return ops::attention_context(ops::softmax_lastdim(in[0]), in[1], 2); },
            {rand({1, 2, 4, 3}, 3), rand({1, 3, 4}, 4)});
  gradcheck([](const auto& in) { return ops::fuse_scores(in[0], in[1], in[2], 4, 4, 2, 2); },
            {rand({1, 2, 16, 3}, 5), rand({1, 2, 4, 3}, 6), Tensor({1}, std::vector<float>{0.7f}, true)});
}

TEST(Gradients, LowerBoundPassesUpwardPush) {
  Tensor x({3}, std::vector<float>{0.05f, 0.5f, 0.0f}, true);
  const Tensor y = ops::lower_bound(x, 0.11f);
  EXPECT_FLOAT_EQ(y.at(0), 0.11f);
  EXPECT_FLOAT_EQ(y.at(1), 0.5f);
  // d(-y)/dx pushes x upward everywhere; d(+y)/dx is blocked below the floor.
  ops::sum(ops::scale(y, -1.0f)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], -1.0f);
  x.zero_grad();
  ops::sum(ops::lower_bound(x, 0.11f)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 0.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 1.0f);
}

TEST(Bicubic, RampMatchesScalarFormulaOracle) {
  // Frozen from tools/oracles.py (Keys a = -0.5, half-pixel centres, clamped).
  const std::vector<float> expect{-0.0703125f, 0.1796875f, 0.7265625f, 1.25f, 1.75f, 2.2734375f, 2.8203125f, 3.0703125f};
  const Tensor ramp({1, 1, 1, 4}, std::vector<float>{0, 1, 2, 3});
  const Tensor up = ops::bicubic_resize(ramp, 1, 8);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(up.at(i), expect[i], 1e-6);
  const std::vector<float> quad{-0.0703125f, 0.1328125f, 0.5859375f, 1.5625f,   3.0625f,
                                5.0625f,     7.5625f,    10.7734375f, 14.6953125f, 16.4921875f};
  const Tensor sq = bicubic_scale(Tensor({1, 1, 5, 1}, std::vector<float>{0, 1, 4, 9, 16}), 2);
  ASSERT_EQ(sq.dim(2), 10);
  ASSERT_EQ(sq.dim(3), 2);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(sq.at(2 * i), quad[i], 1e-5);
}

TEST(Bicubic, IdentityAndConstantPreservation) {
  const Tensor x = rand({2, 3, 5, 4}, 1, 1.0f, false);
  const Tensor same = bicubic_scale(x, 1);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), same.data().begin()));
  const Tensor c({1, 2, 3, 3}, 0.37f);
  for (auto [n, d] : std::vector<std::pair<int, int>>{{2, 1}, {16, 1}, {1, 3}, {5, 2}}) {
    const Tensor y = bicubic_scale(c, n, d);
    for (float v : y.data()) EXPECT_NEAR(v, 0.37f, 1e-6);
  }
  EXPECT_THROW(bicubic_scale(c, 0), ArgumentError);
  EXPECT_THROW(bicubic_scale(c, 2, -1), ArgumentError);
}

TEST(FuseScores, BilinearOracleOnFourByFourGrid) {
  // Per-axis taps for 4 -> 8, frozen from tools/oracles.py: (i0, i1, frac).
  const int i0[8] = {0, 0, 0, 1, 1, 2, 2, 3}, i1[8] = {1, 1, 1, 2, 2, 3, 3, 3};
  const double fr[8] = {0.0, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25};
  const int nk = 3;
  const Tensor prev = rand({1, 1, 16, nk}, 3, 2.0f, false);
  const Tensor a({1, 1, 64, nk}, 0.0f);
  const Tensor alpha({1}, std::vector<float>{1.0f});
  const Tensor out = ops::fuse_scores(a, prev, alpha, 8, 8, 4, 4);
  auto p = [&](int y, int x, int t) { return double(prev.at((y * 4 + x) * nk + t)); };
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int t = 0; t < nk; ++t) {
        const double top = (1 - fr[x]) * p(i0[y], i0[x], t) + fr[x] * p(i0[y], i1[x], t);
        const double bot = (1 - fr[x]) * p(i1[y], i0[x], t) + fr[x] * p(i1[y], i1[x], t);
        const double want = (1 - fr[y]) * top + fr[y] * bot;
        EXPECT_NEAR(out.at((y * 8 + x) * nk + t), want, 1e-5);
      }
    }
  }
}

TEST(FuseScores, ZeroAlphaIsBitwiseAndConstantAddsAlphaC) {
  const Tensor a = rand({1, 2, 16, 4}, 1, 3.0f, false);
  const Tensor prev = rand({1, 2, 4, 4}, 2, 3.0f, false);
  const Tensor zero({1}, std::vector<float>{0.0f});
  const Tensor y = ops::fuse_scores(a, prev, zero, 4, 4, 2, 2);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), y.data().begin()));
  const Tensor c({1, 2, 4, 4}, 1.5f);
  const Tensor al({1}, std::vector<float>{0.4f});
  const Tensor z = ops::fuse_scores(a, c, al, 4, 4, 2, 2);
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(z.at(i), a.at(i) + 0.4f * 1.5f, 1e-6);
  EXPECT_THROW(ops::fuse_scores(a, rand({1, 2, 4, 5}, 3, 1.0f, false), al, 4, 4, 2, 2), ShapeError);
}

TEST(Autograd, NoGradGuardSkipsGraph) {
  Tensor x = rand({3}, 1);
  {
    NoGradGuard ng;
    const Tensor y = ops::gelu(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ops::gelu(x).requires_grad());
}
