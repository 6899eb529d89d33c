#include "icm/prelim_decoder.hpp"

#include "icm/errors.hpp"
#include "icm/ops.hpp"

namespace icm {

Tensor bicubic_scale(const Tensor& x, int num, int den) {
  if (num <= 0 || den <= 0) throw ArgumentError("bicubic_scale: scale must be positive");
  if (x.rank() != 4) throw ShapeError("bicubic_scale: expected NCHW, got " + shape_str(x.shape()));
  const auto extent = [&](int n) {
    return std::max(1, static_cast<int>(static_cast<long long>(n) * num / den));
  };
  return ops::bicubic_resize(x, extent(x.dim(2)), extent(x.dim(3)));
}

ConvBNGELU::ConvBNGELU(int in, int out, Rng& rng) : conv(in, out, 3, 1, 1, rng), bn(out) {}

Tensor ConvBNGELU::forward(const Tensor& x, bool training) {
  return ops::gelu(bn.forward(conv.forward(x), training));
}

void ConvBNGELU::collect(const std::string& prefix, ParamList& out) const {
  conv.collect(prefix + ".conv", out);
  bn.collect(prefix + ".bn", out);
}

void ConvBNGELU::collect_buffers(const std::string& prefix, ParamList& out) const {
  bn.collect_buffers(prefix + ".bn", out);
}

PrelimDecoder::PrelimDecoder(int in_channels, int feat_channels, const TaskSpec& task, Rng& rng)
    : in_channels_(in_channels),
      feat_channels_(feat_channels),
      task_channels_(task.channels),
      unit1_(in_channels, feat_channels, rng),
      unit2_(feat_channels, feat_channels, rng),
      head_(feat_channels, task.channels, 1, 1, 0, rng) {}

PrelimOutput PrelimDecoder::forward(const Tensor& features, bool training) {
  if (features.rank() != 4 || features.dim(1) != in_channels_) {
    throw ShapeError("prelim decoder expects " + std::to_string(in_channels_) + " input channels, got " +
                     shape_str(features.shape()));
  }
  PrelimOutput out;
  out.task_features = unit2_.forward(unit1_.forward(features, training), training);
  out.prelim_pred = head_.forward(out.task_features);
  out.upsampled_pred = bicubic_scale(out.prelim_pred, 16);
  return out;
}

ParamList PrelimDecoder::parameters() const {
  ParamList out;
  unit1_.collect("prelim.unit1", out);
  unit2_.collect("prelim.unit2", out);
  head_.collect("prelim.head", out);
  return out;
}

ParamList PrelimDecoder::buffers() const {
  ParamList out;
  unit1_.collect_buffers("prelim.unit1", out);
  unit2_.collect_buffers("prelim.unit2", out);
  return out;
}

}  // namespace icm
