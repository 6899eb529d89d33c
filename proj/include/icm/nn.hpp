#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "icm/tensor.hpp"

namespace icm {

/// Portable seeded generator: mt19937_64 with hand-rolled uniform/normal
/// transforms so draws do not depend on the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t next() { return gen_(); }
  int below(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }

 private:
  std::mt19937_64 gen_;
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

Tensor uniform_tensor(const Shape& shape, float bound, Rng& rng, bool requires_grad = true);
Tensor normal_tensor(const Shape& shape, float stddev, Rng& rng, bool requires_grad = true);

/// Hook for wrapping a frozen linear projection (LoRA, DoRA).
class LinearAdapter {
 public:
  virtual ~LinearAdapter() = default;
  virtual Tensor forward(const Tensor& x, const Tensor& base_weight, const Tensor& base_bias) const = 0;
  virtual void collect(const std::string& prefix, ParamList& out) const = 0;
  virtual std::int64_t trainable_count() const = 0;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  std::shared_ptr<LinearAdapter> adapter;

  Linear() = default;
  Linear(int in, int out, Rng& rng);
  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
  Tensor gamma, beta;
  LayerNorm() = default;
  explicit LayerNorm(int c);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv2d {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;
  int stride = 1;
  int pad = 0;
  Conv2d() = default;
  Conv2d(int in, int out, int k, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct DepthwiseConv2d {
  Tensor weight;  // [c, 1, k, k]
  Tensor bias;
  int stride = 1;
  int pad = 0;
  DepthwiseConv2d() = default;
  DepthwiseConv2d(int c, int k, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BatchNorm2d {
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // buffers, never trainable
  BatchNorm2d() = default;
  explicit BatchNorm2d(int c);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  void collect_buffers(const std::string& prefix, ParamList& out) const;
};

void set_trainable(const ParamList& params, bool on);
std::int64_t count_elements(const ParamList& params);
/// Independent copies of every tensor (used for fine-tuning a private copy).
void deep_copy_into(const ParamList& src, const ParamList& dst);

}  // namespace icm
