#pragma once

#include <array>
#include <vector>

namespace icm {

struct Tap {
  int index;
  float weight;
};

/// Keys cubic-convolution kernel.
double cubic_kernel(double x, double a = -0.5);

/// Per-output-index taps for resizing one axis of length `in` to `out` with
/// half-pixel centres and clamped borders.
std::vector<std::array<Tap, 4>> cubic_taps(int in, int out);
std::vector<std::array<Tap, 2>> linear_taps(int in, int out);

}  // namespace icm
