#include "icm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "icm/errors.hpp"

namespace icm::metrics {

Confusion::Confusion(int num_classes, int ignore)
    : k_(num_classes), ignore_(ignore), m_(static_cast<size_t>(num_classes) * num_classes, 0),
      label_only_(static_cast<size_t>(num_classes), 0) {
  if (num_classes < 1) throw ArgumentError("confusion matrix needs at least one class");
}

void Confusion::add(std::span<const int> pred, std::span<const int> label) {
  if (pred.size() != label.size()) throw ShapeError("miou: prediction and label sizes differ");
  for (size_t i = 0; i < label.size(); ++i) {
    const int l = label[i];
    if (l == ignore_) continue;
    if (l < 0 || l >= k_) throw ArgumentError("miou: label " + std::to_string(l) + " out of range");
    ++valid_;
    const int p = pred[i];
    if (p < 0 || p >= k_) {
      ++label_only_[static_cast<size_t>(l)];
    } else {
      ++m_[static_cast<size_t>(l) * k_ + p];
    }
  }
}

double Confusion::miou() const {
  if (valid_ == 0) throw EmptyError("miou: no valid label pixels");
  double total = 0.0;
  int present = 0;
  for (int c = 0; c < k_; ++c) {
    std::int64_t row = label_only_[static_cast<size_t>(c)], col = 0;
    for (int j = 0; j < k_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    if (row == 0) continue;
    const std::int64_t tp = at(c, c);
    total += static_cast<double>(tp) / static_cast<double>(row + col - tp);
    ++present;
  }
  return total / present;
}

double miou(std::span<const int> pred, std::span<const int> label, int num_classes, int ignore) {
  Confusion c(num_classes, ignore);
  c.add(pred, label);
  return c.miou();
}

double rmse(std::span<const double> pred, std::span<const double> label, std::span<const std::uint8_t> valid) {
  if (pred.size() != label.size() || pred.size() != valid.size()) throw ShapeError("rmse: size mismatch");
  double acc = 0.0;
  std::int64_t n = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    const double d = pred[i] - label[i];
    acc += d * d;
    ++n;
  }
  if (n == 0) throw EmptyError("rmse: no valid pixels");
  return std::sqrt(acc / static_cast<double>(n));
}

double mean_angular_error(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size() || pred.size() % 3 != 0) throw ShapeError("mean_angular_error: size mismatch");
  double acc = 0.0;
  std::int64_t n = 0;
  for (size_t i = 0; i < pred.size(); i += 3) {
    const double np = std::sqrt(pred[i] * pred[i] + pred[i + 1] * pred[i + 1] + pred[i + 2] * pred[i + 2]);
    const double nl = std::sqrt(label[i] * label[i] + label[i + 1] * label[i + 1] + label[i + 2] * label[i + 2]);
    if (np == 0.0 || nl == 0.0) continue;
    double dot = (pred[i] * label[i] + pred[i + 1] * label[i + 1] + pred[i + 2] * label[i + 2]) / (np * nl);
    dot = std::clamp(dot, -1.0, 1.0);
    acc += std::acos(dot) * 180.0 / M_PI;
    ++n;
  }
  if (n == 0) throw EmptyError("mean_angular_error: no non-zero vector pairs");
  return acc / static_cast<double>(n);
}

std::vector<double> sweep_thresholds(double lo, double hi, int levels) {
  if (levels < 1) throw ArgumentError("threshold sweep needs at least one level");
  std::vector<double> t(static_cast<size_t>(levels));
  for (int k = 0; k < levels; ++k) t[static_cast<size_t>(k)] = lo + (static_cast<double>(k) / levels) * (hi - lo);
  return t;
}

double f_beta(double precision, double recall, double beta2) {
  const double den = beta2 * precision + recall;
  return den > 0.0 ? (1.0 + beta2) * precision * recall / den : 0.0;
}

double max_f_measure(std::span<const double> scores, std::span<const std::uint8_t> label, int levels, double beta2) {
  if (scores.size() != label.size()) throw ShapeError("max_f_measure: size mismatch");
  std::int64_t positives = 0;
  for (auto l : label) positives += l ? 1 : 0;
  if (positives == 0) throw EmptyError("max_f_measure: no positive labels");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  // Sort once so every threshold is a binary search.
  std::vector<std::pair<double, std::uint8_t>> sorted(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) sorted[i] = {scores[i], label[i]};
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::int64_t> pos_suffix(sorted.size() + 1, 0);
  for (size_t i = sorted.size(); i-- > 0;) pos_suffix[i] = pos_suffix[i + 1] + (sorted[i].second ? 1 : 0);
  double best = 0.0;
  for (double t : sweep_thresholds(*lo, *hi, levels)) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), std::make_pair(t, std::uint8_t{255}));
    const auto first = static_cast<size_t>(it - sorted.begin());
    const auto predicted = static_cast<std::int64_t>(sorted.size() - first);
    if (predicted == 0) continue;
    const std::int64_t tp = pos_suffix[first];
    best = std::max(best, f_beta(static_cast<double>(tp) / predicted, static_cast<double>(tp) / positives, beta2));
  }
  return best;
}

namespace {

std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& mask, int h, int w, int r) {
  if (r == 0) return mask;
  std::vector<std::uint8_t> out(mask.size(), 0);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (!mask[static_cast<size_t>(i) * w + j]) continue;
      for (int di = std::max(0, i - r); di <= std::min(h - 1, i + r); ++di) {
        for (int dj = std::max(0, j - r); dj <= std::min(w - 1, j + r); ++dj) out[static_cast<size_t>(di) * w + dj] = 1;
      }
    }
  }
  return out;
}

}  // namespace

double ods_f_measure(const std::vector<BoundaryImage>& images, int levels, int tolerance) {
  if (tolerance < 0) throw ArgumentError("ods_f_measure: tolerance must be non-negative");
  std::int64_t label_total = 0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::vector<std::vector<std::uint8_t>> label_dilated;
  for (const auto& im : images) {
    const size_t n = static_cast<size_t>(im.height) * im.width;
    if (im.scores.size() != n || im.label.size() != n) throw ShapeError("ods_f_measure: image size mismatch");
    for (auto l : im.label) label_total += l ? 1 : 0;
    for (double s : im.scores) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    std::vector<std::uint8_t> lab(im.label.size());
    for (size_t i = 0; i < lab.size(); ++i) lab[i] = im.label[i] ? 1 : 0;
    label_dilated.push_back(dilate(lab, im.height, im.width, tolerance));
  }
  if (label_total == 0) throw EmptyError("ods_f_measure: no boundary pixels in the dataset");
  double best = 0.0;
  for (double t : sweep_thresholds(lo, hi, levels)) {
    std::int64_t pred_total = 0, pred_hit = 0, label_hit = 0;
    for (size_t k = 0; k < images.size(); ++k) {
      const auto& im = images[k];
      std::vector<std::uint8_t> pred(im.scores.size());
      for (size_t i = 0; i < pred.size(); ++i) pred[i] = im.scores[i] > t ? 1 : 0;
      const auto pred_dilated = dilate(pred, im.height, im.width, tolerance);
      for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i]) {
          ++pred_total;
          pred_hit += label_dilated[k][i];
        }
        if (im.label[i] && pred_dilated[i]) ++label_hit;
      }
    }
    if (pred_total == 0) continue;
    best = std::max(best, f_beta(static_cast<double>(pred_hit) / pred_total,
                                 static_cast<double>(label_hit) / label_total, 1.0));
  }
  return best;
}

}  // namespace icm::metrics
