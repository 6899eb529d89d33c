#include "icm/optim.hpp"

#include <cmath>

#include "icm/errors.hpp"

namespace icm {

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    if (!p.tensor.requires_grad()) throw ConfigError("optimizer given a frozen tensor: " + p.name);
    m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0f);
    v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(cfg_.beta1);
  const float b2 = static_cast<float>(cfg_.beta2);
  const float step_size = static_cast<float>(cfg_.lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(cfg_.eps);
  const float wd = static_cast<float>(cfg_.weight_decay);
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor t = params_[k].tensor;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < w.size(); ++i) {
      const float gi = g[i] + wd * w[i];
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_bc2 + eps);
    }
  }
}

void Adam::zero_grad() {
  for (const auto& p : params_) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

double poly_lr(long step, long total, double lr0, double power) {
  if (total <= 0) throw ArgumentError("poly_lr: total iterations must be positive");
  if (step < 0 || step > total) {
    throw ArgumentError("poly_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  return lr0 * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total), power);
}

}  // namespace icm
