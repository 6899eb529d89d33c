#include "icm/nn.hpp"

#include <cmath>

#include "icm/errors.hpp"
#include "icm/ops.hpp"

namespace icm {

double Rng::uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // Box-Muller; u1 kept away from zero.
  const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over the combined words
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor uniform_tensor(const Shape& shape, float bound, Rng& rng, bool requires_grad) {
  FloatVec v(static_cast<size_t>(shape_numel(shape)));
  for (float& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor(shape, std::move(v), requires_grad);
}

Tensor normal_tensor(const Shape& shape, float stddev, Rng& rng, bool requires_grad) {
  FloatVec v(static_cast<size_t>(shape_numel(shape)));
  for (float& x : v) x = static_cast<float>(rng.normal() * stddev);
  return Tensor(shape, std::move(v), requires_grad);
}

Linear::Linear(int in, int out, Rng& rng)
    : weight(uniform_tensor({in, out}, 1.0f / std::sqrt(static_cast<float>(in)), rng)),
      bias(Shape{out}, 0.0f, true) {}

Tensor Linear::forward(const Tensor& x) const {
  if (adapter) return adapter->forward(x, weight, bias);
  return ops::linear(x, weight, bias);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(int c) : gamma(Shape{c}, 1.0f, true), beta(Shape{c}, 0.0f, true) {}

Tensor LayerNorm::forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

Conv2d::Conv2d(int in, int out, int k, int s, int p, Rng& rng)
    : weight(uniform_tensor({out, in, k, k}, 1.0f / std::sqrt(static_cast<float>(in * k * k)), rng)),
      bias(Shape{out}, 0.0f, true),
      stride(s),
      pad(p) {}

Tensor Conv2d::forward(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, pad); }

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

DepthwiseConv2d::DepthwiseConv2d(int c, int k, int s, int p, Rng& rng)
    : weight(uniform_tensor({c, 1, k, k}, 1.0f / static_cast<float>(k), rng)),
      bias(Shape{c}, 0.0f, true),
      stride(s),
      pad(p) {}

Tensor DepthwiseConv2d::forward(const Tensor& x) const {
  return ops::depthwise_conv2d(x, weight, bias, stride, pad);
}

void DepthwiseConv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

BatchNorm2d::BatchNorm2d(int c)
    : gamma(Shape{c}, 1.0f, true),
      beta(Shape{c}, 0.0f, true),
      running_mean(Shape{c}, 0.0f),
      running_var(Shape{c}, 1.0f) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  return ops::batch_norm2d(x, gamma, beta, running_mean, running_var, training);
}

void BatchNorm2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".running_mean", running_mean});
  out.push_back({prefix + ".running_var", running_var});
}

void set_trainable(const ParamList& params, bool on) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(on);
    if (!on) t.zero_grad();
  }
}

std::int64_t count_elements(const ParamList& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void deep_copy_into(const ParamList& src, const ParamList& dst) {
  if (src.size() != dst.size()) throw ShapeError("deep_copy_into: parameter lists differ");
  for (size_t i = 0; i < src.size(); ++i) {
    Tensor d = dst[i].tensor;
    if (src[i].tensor.shape() != d.shape()) throw ShapeError("deep_copy_into: shape mismatch at " + src[i].name);
    std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), d.data().begin());
  }
}

}  // namespace icm
