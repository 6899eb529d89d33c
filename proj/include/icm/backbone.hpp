#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "icm/io.hpp"
#include "icm/nn.hpp"

namespace icm {

// Four-stage hierarchical transformer. Stage 1 embeds 4x4 patches, stages 2
// and 3 merge 2x2 neighbourhoods, stage 4 widens channels at constant
// resolution, so the output stride is 16.
struct BackboneConfig {
  std::vector<int> stage_channels{32, 64, 96, 128};
  std::vector<int> stage_depths{1, 1, 1, 1};
  int num_heads = 2;
  int patch_size = 4;
  int merge_factor = 2;
  int input_channels = 3;
  int mlp_ratio = 4;

  void validate() const;
  int output_stride() const;
  json to_json() const;
  static BackboneConfig from_json(const json& j);
};

struct TransformerBlock {
  LayerNorm norm1, norm2;
  Linear query, key, value, proj;
  Linear up_proj, down_proj;
  int heads = 1;

  TransformerBlock() = default;
  TransformerBlock(int channels, int heads, int mlp_ratio, Rng& rng);
  Tensor forward(const Tensor& tokens) const;
  void collect(const std::string& prefix, ParamList& out) const;
  Linear* projection(const std::string& target);
};

struct BackboneStage {
  Conv2d embed;  // patch embedding / merge / widening
  std::vector<TransformerBlock> blocks;
};

class Backbone {
 public:
  BackboneConfig config;
  std::vector<BackboneStage> stages;
  LayerNorm final_norm;
  bool frozen = false;
  std::string pretrain_fingerprint;

  ParamList parameters() const;
  /// images [B, 3, H, W] -> features [B, C4, H/16, W/16]
  Tensor forward(const Tensor& images) const;
  void freeze();
  void unfreeze();
  /// Private copy of every parameter; adapters are not copied.
  Backbone deep_clone() const;
  std::uint64_t parameter_hash() const;
};

Backbone build_backbone(const BackboneConfig& config, std::uint64_t seed);

struct PretextTaskConfig {
  int num_train = 512;
  int num_val = 128;
  int image_size = 64;
  int num_shape_classes = 4;
  int batch_size = 4;
  double lr = 1e-3;
  std::uint64_t data_seed = 1234;

  json to_json() const;
  static PretextTaskConfig from_json(const json& j);
};

struct PretextReport {
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
};

/// Trains on synthetic-scene classification (class of the largest object),
/// then freezes. steps = 0 only freezes and fingerprints.
Backbone pretrain_backbone(Backbone backbone, const PretextTaskConfig& pretext, int steps, std::uint64_t seed,
                           PretextReport* report = nullptr);

/// Pure function of (parameters, image); requires H and W divisible by 16.
Tensor extract_features(const Backbone& backbone, const Tensor& images);

void save_backbone(const std::filesystem::path& path, const Backbone& backbone);
Backbone load_backbone(const std::filesystem::path& path);

}  // namespace icm
