#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icm/adaptation.hpp"
#include "icm/backbone.hpp"
#include "icm/entropy_codec.hpp"
#include "icm/io.hpp"
#include "icm/lc_decoder.hpp"
#include "icm/prelim_decoder.hpp"
#include "icm/synth_data.hpp"
#include "icm/task.hpp"

namespace icm {

// ------------------------------------------------------------------ losses

/// Pixel cross-entropy over logits [B, K, H, W]; labels [B, 1, H, W] hold
/// class ids, 255 is ignored. Throws EmptyError if nothing is labelled.
Tensor cross_entropy_loss(const Tensor& logits, const Tensor& labels, int ignore = kIgnoreLabel);
/// Mean |pred - label| over valid pixels.
Tensor masked_l1_loss(const Tensor& pred, const Tensor& label, const Tensor& valid);
/// Mean (1 - cos) between per-pixel 3-vectors; pixels with a zero label are skipped.
Tensor cosine_loss(const Tensor& pred, const Tensor& label, const Tensor& valid);
/// Binary cross-entropy on logits with positive weight min(neg/pos, cap).
Tensor weighted_bce_loss(const Tensor& logits, const Tensor& label, const Tensor& valid, float cap = 50.0f);

Tensor task_loss(const Tensor& pred, const Batch& batch, const TaskSpec& task);

struct LossBreakdown {
  double rate_bpp = 0.0;
  double task_final = 0.0;
  double task_prelim = 0.0;
  double total = 0.0;
};

/// rate + lambda * (final + mu * prelim); the prelim term is dropped when
/// intermediate supervision is off.
double compose_loss(double rate_bpp, double task_final, double task_prelim, double lambda, double mu, bool inter_sup);

// ------------------------------------------------------------------ config

enum class TrainMode { full_ft, dora_ft, fixed, scratch };

TrainMode parse_mode(const std::string& s);
std::string to_string(TrainMode m);
/// Legend label, e.g. "DoRA FT", "DoRA No InterSup", "DoRA Full Dec".
std::string series_label(TrainMode m, bool inter_sup, bool full_decoder);

struct DataConfig {
  int n_train = 200;
  int n_val = 50;
  int image_size = 64;
  int num_shape_classes = 4;
  std::uint64_t seed = 7;
};

struct BackboneSource {
  std::string path;  // pretrained checkpoint; empty = build and pretrain in process
  BackboneConfig config;
  std::uint64_t seed = 0;
  int pretrain_steps = 2000;
  PretextTaskConfig pretext;
};

struct TrainConfig {
  TaskId task = TaskId::semseg;
  double lambda = 0.1;
  int iterations = 5000;
  int batch_size = 2;
  double lr = 2e-5;
  double weight_decay = 1e-6;
  double poly_power = 0.9;
  TrainMode mode = TrainMode::dora_ft;
  bool inter_sup = true;
  std::string decoder = "lc";
  std::uint64_t seed = 0;
  double mu = 1.0;
  int log_interval = 50;
  AdapterPlan adapter;
  int prelim_channels = 64;
  int entropy_hidden = 64;
  DataConfig data;
  BackboneSource backbone;
  std::vector<double> lambdas{0.01, 0.05, 0.1, 0.5, 1.0};
  std::vector<std::uint64_t> seeds{0};

  void validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& j);
};

TrainConfig load_config(const std::filesystem::path& path);

// ------------------------------------------------------------------ model

Backbone obtain_backbone(const BackboneSource& src);

/// Backbone (frozen, adapted, or trainable per mode), preliminary decoder,
/// entropy model and receiver-side decoder for one task.
class IcmModel {
 public:
  IcmModel(const TrainConfig& cfg, const Backbone& pretrained);

  struct Output {
    PrelimOutput prelim;
    Tensor y;     // concatenated task features and preliminary prediction
    Tensor yhat;  // quantized
    Tensor rate_bits;
    Tensor prediction;  // full resolution
  };

  Tensor features(const Tensor& images) const;
  /// training: batch-stat BN and noise quantization; otherwise running stats
  /// and rounding.
  Output forward(const Tensor& images, bool training, std::uint64_t noise_seed = 0);
  /// Encoder side up to the quantized latent (round mode, eval).
  Tensor encode_latent(const Tensor& images);
  /// Receiver side: prediction from a decoded latent.
  Tensor decode_prediction(const Tensor& yhat) const;

  ParamList trainable() const;
  ParamList buffers() const;
  /// Base backbone parameters (frozen in fixed/dora modes).
  ParamList backbone_parameters() const;
  int latent_channels() const { return latent_channels_; }

  const TrainConfig& config() const { return cfg_; }
  const TaskSpec& task() const { return task_; }
  const Backbone& backbone() const { return backbone_; }
  const AdaptedBackbone* adapted() const { return adapted_.get(); }
  const DualSpatialModel& entropy() const { return entropy_; }
  const LCDecoder& decoder() const { return decoder_; }
  LCDecoder& decoder() { return decoder_; }
  PrelimDecoder& prelim() { return prelim_; }

 private:
  TrainConfig cfg_;
  TaskSpec task_;
  Backbone backbone_;
  std::unique_ptr<AdaptedBackbone> adapted_;
  PrelimDecoder prelim_;
  DualSpatialModel entropy_;
  LCDecoder decoder_;
  int latent_channels_ = 0;
};

struct LogRecord {
  int step = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double frozen_grad_norm = 0.0;
  json to_json() const;
};

struct TrainResult {
  std::vector<LogRecord> log;
  double seconds = 0.0;
};

struct Dataset {
  std::vector<synth::SyntheticScene> train, val;
};
Dataset build_dataset(const DataConfig& cfg);

/// Adam + poly schedule on the mode's trainable set. Writes log.jsonl and the
/// checkpoint into out_dir when it is non-empty.
TrainResult train(IcmModel& model, const Dataset& data, const std::filesystem::path& out_dir = {});

/// model.icma holds trainable arrays and BN buffers only; frozen backbone
/// parameters are referenced by path and fingerprint.
void save_checkpoint(const std::filesystem::path& dir, const IcmModel& model);
std::unique_ptr<IcmModel> load_checkpoint(const std::filesystem::path& dir);

}  // namespace icm
