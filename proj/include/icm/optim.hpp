#pragma once

#include <vector>

#include "icm/nn.hpp"

namespace icm {

struct AdamConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;  // L2 term added to the gradient
};

class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  void step();
  void zero_grad();
  const ParamList& params() const { return params_; }
  long steps() const { return t_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  long t_ = 0;
};

/// lr0 · (1 - step/total)^power
double poly_lr(long step, long total, double lr0, double power = 0.9);

}  // namespace icm
