#pragma once

#include <string>

#include "icm/nn.hpp"
#include "icm/task.hpp"

namespace icm {

/// Bicubic resize by the rational factor num/den; output extent is
/// floor(extent * num / den), at least 1.
Tensor bicubic_scale(const Tensor& x, int num, int den = 1);

struct ConvBNGELU {
  Conv2d conv;
  BatchNorm2d bn;
  ConvBNGELU() = default;
  ConvBNGELU(int in, int out, Rng& rng);
  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  void collect_buffers(const std::string& prefix, ParamList& out) const;
};

struct PrelimOutput {
  Tensor task_features;   // [B, C_feat, h, w]
  Tensor prelim_pred;     // [B, task_channels, h, w]
  Tensor upsampled_pred;  // [B, task_channels, 16h, 16w]
};

/// Two Conv-BN-GELU units and a 1x1 prediction head on stride-16 features.
class PrelimDecoder {
 public:
  PrelimDecoder() = default;
  PrelimDecoder(int in_channels, int feat_channels, const TaskSpec& task, Rng& rng);

  PrelimOutput forward(const Tensor& features, bool training);
  ParamList parameters() const;
  ParamList buffers() const;
  int in_channels() const { return in_channels_; }
  int feat_channels() const { return feat_channels_; }
  int task_channels() const { return task_channels_; }

 private:
  int in_channels_ = 0, feat_channels_ = 0, task_channels_ = 0;
  ConvBNGELU unit1_, unit2_;
  Conv2d head_;
};

}  // namespace icm
