#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace icm::metrics {

struct MetricResult {
  std::string name;
  double value = 0.0;
  bool higher_better = true;
  int n_images = 0;
};

/// Dataset-level confusion matrix; labels equal to `ignore` are skipped.
class Confusion {
 public:
  explicit Confusion(int num_classes, int ignore = 255);
  void add(std::span<const int> pred, std::span<const int> label);
  /// Mean IoU over classes that occur in the labels.
  double miou() const;
  std::int64_t at(int label, int pred) const { return m_[static_cast<size_t>(label) * k_ + pred]; }

 private:
  int k_, ignore_;
  std::vector<std::int64_t> m_;
  std::vector<std::int64_t> label_only_;  // label pixels whose prediction is out of range
  std::int64_t valid_ = 0;
};

double miou(std::span<const int> pred, std::span<const int> label, int num_classes, int ignore = 255);
double rmse(std::span<const double> pred, std::span<const double> label, std::span<const std::uint8_t> valid);
/// Vectors are interleaved xyz triples; pairs with a zero vector are skipped.
double mean_angular_error(std::span<const double> pred, std::span<const double> label);

/// Thresholds t_k = lo + k/levels·(hi - lo), k = 0..levels-1, where [lo, hi]
/// is the score range over the dataset; a pixel is positive iff score > t_k.
std::vector<double> sweep_thresholds(double lo, double hi, int levels);

double f_beta(double precision, double recall, double beta2);

/// Maximal F-measure (beta^2 = 0.3) over the threshold sweep with
/// dataset-aggregated precision and recall.
double max_f_measure(std::span<const double> scores, std::span<const std::uint8_t> label, int levels = 255,
                     double beta2 = 0.3);

struct BoundaryImage {
  int height = 0, width = 0;
  std::vector<double> scores;
  std::vector<std::uint8_t> label;
};

/// Optimal-dataset-scale F1: a predicted pixel is a hit if a label pixel lies
/// within `tolerance` (Chebyshev), a label pixel is recalled if a prediction
/// lies within `tolerance`.
double ods_f_measure(const std::vector<BoundaryImage>& images, int levels = 99, int tolerance = 1);

}  // namespace icm::metrics
