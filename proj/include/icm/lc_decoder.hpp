#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "icm/nn.hpp"
#include "icm/task.hpp"

namespace icm {

struct StageTrace {
  int stage = 0;          // 1-based
  int height = 0, width = 0, channels = 0;
  int kv_stride = 0;      // k_s
  int queries = 0;        // per image
  int kv_tokens = 0;      // per image
  Shape scores;           // [B, heads, queries, kv_tokens]
  bool fused = false;
};

struct DecoderTrace {
  std::vector<StageTrace> stages;
  Shape output;
};

/// One decoder stage: pre-norm attention (optionally with strided queries and
/// keys/values), pre-norm MLP, then 2x bicubic upsampling and a 1x1
/// projection to the next width.
struct AttentionStage {
  int index = 1;
  int channels = 0;
  int heads = 2;
  int q_stride = 2;
  int kv_stride = 4;
  LayerNorm norm1, norm2;
  DepthwiseConv2d q_down, kv_down;
  Linear wq, wk, wv, proj, up, down;
  Tensor alpha;  // scalar fusion weight, zero at init
  Conv2d out_proj;

  AttentionStage() = default;
  AttentionStage(int index, int channels, int out_channels, int heads, int mlp_ratio, int q_stride, int kv_stride,
                 Rng& rng);

  struct Result {
    Tensor features;  // [B, C_{s+1}, 2H, 2W]
    Tensor scores;    // pre-softmax, after fusion
  };
  /// prev: pre-softmax scores of the previous stage, or nullptr.
  Result forward(const Tensor& x, const Tensor* prev, int prev_qh, int prev_qw, StageTrace* trace) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct DecoderConfig {
  std::vector<int> stage_channels{64, 32, 16};
  int heads = 2;
  int mlp_ratio = 4;
  bool fusion = true;
  /// Full-attention variant: four stages, no query/key downsampling, no fusion.
  bool full = false;
  std::int64_t score_budget = std::int64_t{1} << 24;  // elements of one score tensor

  static DecoderConfig full_variant();
};

class LCDecoder {
 public:
  LCDecoder() = default;
  LCDecoder(int latent_channels, const TaskSpec& task, const DecoderConfig& cfg, Rng& rng);

  /// latent [B, C, h, w] at stride 16 -> prediction [B, task_channels, 16h, 16w].
  Tensor forward(const Tensor& latent, DecoderTrace* trace = nullptr) const;
  /// Final 1x1 projection to task channels, then 2x bicubic (LC variant only).
  Tensor decode_final(const Tensor& features) const;
  ParamList parameters() const;
  const DecoderConfig& config() const { return cfg_; }
  std::vector<AttentionStage>& stages() { return stages_; }
  const std::vector<AttentionStage>& stages() const { return stages_; }
  /// Throws ShapeError if the latent grid cannot pass through every stage.
  void check_latent(int h, int w) const;

 private:
  DecoderConfig cfg_;
  int latent_channels_ = 0;
  Conv2d stem_;
  std::vector<AttentionStage> stages_;
  Conv2d head_;
};

/// Analytic multiply-accumulate count of a decoder on a latent of h x w.
std::int64_t decoder_macs(const DecoderConfig& cfg, int latent_channels, int task_channels, int h, int w);

}  // namespace icm
