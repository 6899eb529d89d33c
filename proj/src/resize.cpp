#include "icm/resize.hpp"

#include <algorithm>
#include <cmath>

#include "icm/errors.hpp"

namespace icm {

double cubic_kernel(double x, double a) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

std::vector<std::array<Tap, 4>> cubic_taps(int in, int out) {
  if (in <= 0 || out <= 0) throw ArgumentError("resize extents must be positive");
  std::vector<std::array<Tap, 4>> taps(static_cast<size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) * ratio - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    const int i0 = static_cast<int>(base);
    for (int k = 0; k < 4; ++k) {
      const int idx = std::clamp(i0 - 1 + k, 0, in - 1);
      taps[o][k] = {idx, static_cast<float>(cubic_kernel(t - (k - 1)))};
    }
  }
  return taps;
}

std::vector<std::array<Tap, 2>> linear_taps(int in, int out) {
  if (in <= 0 || out <= 0) throw ArgumentError("resize extents must be positive");
  std::vector<std::array<Tap, 2>> taps(static_cast<size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = std::max(0.0, (o + 0.5) * ratio - 0.5);
    const int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    const double t = src - i0;
    taps[o][0] = {i0, static_cast<float>(1.0 - t)};
    taps[o][1] = {i1, static_cast<float>(t)};
  }
  return taps;
}

}  // namespace icm
