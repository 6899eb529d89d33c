#include "icm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "icm/errors.hpp"

namespace icm {

namespace {

constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

void pad_range(double& lo, double& hi) {
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

void axes(std::ostringstream& s, const Frame& f, const std::string& title, const std::string& xl, const std::string& yl,
          bool numeric_x) {
  s << "<text x=\"" << fmt(kW / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
    << "</text>\n";
  s << "<line x1=\"" << fmt(kLeft) << "\" y1=\"" << fmt(kH - kBottom) << "\" x2=\"" << fmt(kW - kRight) << "\" y2=\""
    << fmt(kH - kBottom) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << fmt(kLeft) << "\" y1=\"" << fmt(kTop) << "\" x2=\"" << fmt(kLeft) << "\" y2=\""
    << fmt(kH - kBottom) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<text x=\"" << fmt(kLeft - 6) << "\" y=\"" << fmt(f.py(yv) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
      << fmt(yv) << "</text>\n";
    if (numeric_x) {
      const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
      s << "<text x=\"" << fmt(f.px(xv)) << "\" y=\"" << fmt(kH - kBottom + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(xv) << "</text>\n";
    }
  }
  s << "<text x=\"" << fmt((kLeft + kW - kRight) / 2) << "\" y=\"" << fmt(kH - 16)
    << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(xl) << "</text>\n";
  s << "<text x=\"18\" y=\"" << fmt((kTop + kH - kBottom) / 2) << "\" text-anchor=\"middle\" font-size=\"13\" "
    << "transform=\"rotate(-90 18 " << fmt((kTop + kH - kBottom) / 2) << ")\">" << escape(yl) << "</text>\n";
}

std::string open_svg() {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(kW) << "\" height=\"" << fmt(kH)
    << "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return s.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
}

const char* metric_of(const std::string& task) {
  if (task == "semseg") return "mIoU";
  if (task == "depth") return "RMSE";
  if (task == "normal") return "mErr (deg)";
  if (task == "boundary") return "odsF";
  if (task == "saliency") return "maxF";
  return "metric";
}

}  // namespace

std::vector<std::filesystem::path> plot_rd(const std::vector<RDPoint>& rows, const std::filesystem::path& out_dir) {
  if (rows.empty()) throw EmptyError("plot_rd: no rows to plot");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  std::set<std::string> tasks;
  for (const auto& r : rows) tasks.insert(r.task);
  for (const auto& task : tasks) {
    // series label -> lambda -> (bpp values, metric values)
    std::map<std::string, std::map<double, std::pair<std::vector<double>, std::vector<double>>>> series;
    for (const auto& r : rows) {
      if (r.task != task) continue;
      auto& cell = series[mode_label(r.mode)][r.lambda];
      cell.first.push_back(r.bpp_actual);
      cell.second.push_back(r.metric);
    }
    std::map<std::string, std::vector<std::pair<double, double>>> curves;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& [label, by_lambda] : series) {
      for (const auto& [lam, cell] : by_lambda) {
        const double x = median(cell.first), y = median(cell.second);
        curves[label].push_back({x, y});
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
      }
      std::sort(curves[label].begin(), curves[label].end());
    }
    pad_range(x0, x1);
    pad_range(y0, y1);
    const Frame f{x0, x1, y0, y1};
    std::ostringstream s;
    s << open_svg();
    axes(s, f, "Rate-accuracy: " + task, "bpp (coded payload)", metric_of(task), true);
    int ci = 0;
    for (const auto& [label, pts] : curves) {
      const char* color = kColors[ci % 7];
      s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (size_t i = 0; i < pts.size(); ++i) s << (i ? " " : "") << fmt(f.px(pts[i].first)) << "," << fmt(f.py(pts[i].second));
      s << "\"/>\n";
      for (const auto& p : pts) {
        s << "<circle cx=\"" << fmt(f.px(p.first)) << "\" cy=\"" << fmt(f.py(p.second)) << "\" r=\"3.5\" fill=\"" << color
          << "\"/>\n";
      }
      const double ly = kTop + 18 * ci;
      s << "<rect x=\"" << fmt(kW - kRight + 12) << "\" y=\"" << fmt(ly) << "\" width=\"12\" height=\"12\" fill=\""
        << color << "\"/>\n<text x=\"" << fmt(kW - kRight + 30) << "\" y=\"" << fmt(ly + 10)
        << "\" font-size=\"12\">" << escape(label) << "</text>\n";
      ++ci;
    }
    s << "</svg>\n";
    const auto rd_path = out_dir / ("rd_" + task + ".svg");
    write_text(rd_path, s.str());
    written.push_back(rd_path);

    // Ablation bars at the largest lambda each series has.
    std::vector<std::pair<std::string, double>> bars;
    double b0 = 1e300, b1 = -1e300;
    for (const auto& [label, by_lambda] : series) {
      const double v = median(by_lambda.rbegin()->second.second);
      bars.push_back({label, v});
      b0 = std::min(b0, v);
      b1 = std::max(b1, v);
    }
    b0 = std::min(b0, 0.0);
    pad_range(b0, b1);
    const Frame g{0.0, static_cast<double>(bars.size()), b0, b1};
    std::ostringstream a;
    a << open_svg();
    axes(a, g, "Ablation at largest lambda: " + task, "", metric_of(task), false);
    for (size_t i = 0; i < bars.size(); ++i) {
      const double xl = g.px(static_cast<double>(i) + 0.15), xr = g.px(static_cast<double>(i) + 0.85);
      const double yt = g.py(bars[i].second), yb = g.py(std::max(b0, 0.0));
      a << "<rect x=\"" << fmt(xl) << "\" y=\"" << fmt(std::min(yt, yb)) << "\" width=\"" << fmt(xr - xl)
        << "\" height=\"" << fmt(std::abs(yb - yt)) << "\" fill=\"" << kColors[i % 7] << "\"/>\n";
      a << "<text x=\"" << fmt((xl + xr) / 2) << "\" y=\"" << fmt(kH - kBottom + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(bars[i].first) << "</text>\n";
      a << "<text x=\"" << fmt((xl + xr) / 2) << "\" y=\"" << fmt(std::min(yt, yb) - 4)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(bars[i].second) << "</text>\n";
    }
    a << "</svg>\n";
    const auto ab_path = out_dir / ("ablation_" + task + ".svg");
    write_text(ab_path, a.str());
    written.push_back(ab_path);
  }
  return written;
}

}  // namespace icm
