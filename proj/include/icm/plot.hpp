#pragma once

#include <filesystem>
#include <vector>

#include "icm/experiment.hpp"

namespace icm {

/// One rate-accuracy SVG per task (median over seeds per lambda, one series
/// per mode) and one bar chart per task comparing modes at the largest
/// lambda. Output bytes depend only on the rows.
std::vector<std::filesystem::path> plot_rd(const std::vector<RDPoint>& rows, const std::filesystem::path& out_dir);

}  // namespace icm
