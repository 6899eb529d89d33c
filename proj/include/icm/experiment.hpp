#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "icm/training.hpp"

namespace icm {

struct EvalResult {
  std::string metric_name;
  double metric = 0.0;
  bool higher_better = true;
  double bpp_est = 0.0;     // model estimate, -log2 p summed
  double bpp_actual = 0.0;  // range-coded payload bits
  double header_bpp = 0.0;
  int n_images = 0;
  double adapter_param_fraction = 0.0;
  json to_json() const;
};

/// Runs every scene through encoder, bitstream, decoder and the task metric.
/// Decoded latents are checked against the encoder's latents.
EvalResult evaluate(IcmModel& model, const std::vector<synth::SyntheticScene>& scenes, std::uint8_t lambda_index = 0);

/// Per-scene predictions [1, C, H, W] from decoded bitstreams.
struct CodedPrediction {
  Bitstream stream;
  Tensor prediction;
};
CodedPrediction compress_and_decode(IcmModel& model, const Tensor& image, std::uint8_t lambda_index = 0);

/// Column order of the CSV is fixed: lambda,bpp_est,bpp_actual,metric,task,mode,seed.
struct RDPoint {
  double lambda = 0.0;
  double bpp_est = 0.0;
  double bpp_actual = 0.0;
  double metric = 0.0;
  std::string task;
  std::string mode;  // training mode, with "/no_intersup" or "/full_dec" for the ablation variants
  std::uint64_t seed = 0;
};

std::string mode_key(const TrainConfig& cfg);
std::string mode_label(const std::string& key);

void write_rd_csv(const std::filesystem::path& path, const std::vector<RDPoint>& rows);
std::vector<RDPoint> read_rd_csv(const std::filesystem::path& path);
json rd_to_json(const std::vector<RDPoint>& rows);

double spearman(const std::vector<double>& a, const std::vector<double>& b);
double median(std::vector<double> v);

/// Trains one model per (seed, lambda) and evaluates it on the validation set.
/// Writes runs/<...>/, rd.csv and rd.json under out_dir.
std::vector<RDPoint> run_sweep(const TrainConfig& cfg, const Backbone& pretrained, const std::filesystem::path& out_dir,
                               bool verbose = false);

}  // namespace icm
