#include "icm/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "icm/errors.hpp"
#include "icm/io.hpp"
#include "icm/nn.hpp"

namespace icm::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kSplitStride = 1 << 20;
constexpr int kValOffset = 1 << 19;

struct Rgb {
  double r, g, b;
};

Rgb class_color(int cls) {
  static const Rgb palette[] = {{0.85, 0.25, 0.20}, {0.20, 0.75, 0.30}, {0.20, 0.35, 0.85}, {0.90, 0.80, 0.20}};
  if (cls >= 1 && cls <= 4) return palette[cls - 1];
  // Extra classes: evenly spaced hues.
  const double hue = std::fmod(cls * 0.618033988749895, 1.0) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(hue, 2.0) - 1.0);
  const int sector = static_cast<int>(hue);
  Rgb c{0, 0, 0};
  switch (sector) {
    case 0: c = {1, x, 0}; break;
    case 1: c = {x, 1, 0}; break;
    case 2: c = {0, 1, x}; break;
    case 3: c = {0, x, 1}; break;
    case 4: c = {x, 0, 1}; break;
    default: c = {1, 0, x}; break;
  }
  return {0.15 + 0.7 * c.r, 0.15 + 0.7 * c.g, 0.15 + 0.7 * c.b};
}

// Class-specific pattern in [-1, 1].
double class_pattern(int cls, double x, double y, double phase) {
  switch ((cls - 1) % 4) {
    case 0: return std::sin(2.0 * kPi * y / 6.0 + phase);
    case 1: return std::sin(2.0 * kPi * x / 6.0 + phase);
    case 2: return std::sin(2.0 * kPi * x / 8.0 + phase) * std::sin(2.0 * kPi * y / 8.0 + phase);
    default: return std::sin(2.0 * kPi * (x + y) / 7.0 + phase);
  }
}

bool covers(const Primitive& p, double x, double y) {
  switch (p.kind) {
    case PrimitiveKind::disc: {
      const double dx = x - p.cx, dy = y - p.cy;
      return dx * dx + dy * dy <= p.radius * p.radius;
    }
    case PrimitiveKind::rectangle:
      return std::abs(x - p.cx) <= p.half_w && std::abs(y - p.cy) <= p.half_h;
    case PrimitiveKind::triangle: {
      auto edge = [&](int a, int b) {
        return (p.vx[b] - p.vx[a]) * (y - p.vy[a]) - (p.vy[b] - p.vy[a]) * (x - p.vx[a]);
      };
      const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

void plane_normal(double su, double sv, float* n) {
  if (su == 0.0 && sv == 0.0) {
    n[0] = 0.0f;
    n[1] = 0.0f;
    n[2] = 1.0f;
    return;
  }
  const double len = std::sqrt(su * su + sv * sv + 1.0);
  n[0] = static_cast<float>(-su / len);
  n[1] = static_cast<float>(-sv / len);
  n[2] = static_cast<float>(1.0 / len);
}

}  // namespace

SceneLayout sample_layout(std::uint64_t seed, int height, int width, int num_shape_classes) {
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
    throw ShapeError("scene dimensions must be positive multiples of 16, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  if (num_shape_classes < 1 || num_shape_classes > 250) throw ArgumentError("num_shape_classes out of range");
  Rng rng(mix_seed(seed, 0x5ce7e));
  SceneLayout layout;
  layout.height = height;
  layout.width = width;
  layout.num_shape_classes = num_shape_classes;
  layout.bg_slope_u = rng.uniform(-0.2, 0.2);
  layout.bg_slope_v = rng.uniform(-0.2, 0.2);
  layout.bg_phase = rng.uniform(0.0, 2.0 * kPi);
  layout.noise_seed = rng.next();
  const int count = 2 + rng.below(5);
  const double s = std::min(height, width);
  for (int i = 0; i < count; ++i) {
    Primitive p;
    p.kind = static_cast<PrimitiveKind>(rng.below(3));
    p.cls = 1 + rng.below(num_shape_classes);
    p.cx = rng.uniform(0.15, 0.85) * width;
    p.cy = rng.uniform(0.15, 0.85) * height;
    p.radius = rng.uniform(0.12, 0.3) * s;
    p.half_w = rng.uniform(0.1, 0.3) * s;
    p.half_h = rng.uniform(0.1, 0.3) * s;
    const double r = rng.uniform(0.18, 0.38) * s;
    const double a0 = rng.uniform(0.0, 2.0 * kPi);
    for (int v = 0; v < 3; ++v) {
      const double a = a0 + v * 2.0 * kPi / 3.0 + rng.uniform(-0.4, 0.4);
      p.vx[v] = p.cx + r * std::cos(a);
      p.vy[v] = p.cy + r * std::sin(a);
    }
    // Layer spacing 1.2 exceeds the 1.0 total slope excursion, so painter's
    // order and depth order agree everywhere.
    p.depth0 = 7.5 - 1.2 * i;
    if (rng.uniform() < 0.3) {
      p.slope_u = p.slope_v = 0.0;
    } else {
      p.slope_u = rng.uniform(-0.25, 0.25);
      p.slope_v = rng.uniform(-0.25, 0.25);
    }
    p.texture_phase = rng.uniform(0.0, 2.0 * kPi);
    layout.layers.push_back(p);
  }
  return layout;
}

SyntheticScene render_scene(const SceneLayout& layout) {
  const int h = layout.height, w = layout.width;
  if (h <= 0 || w <= 0 || h % 16 != 0 || w % 16 != 0) throw ShapeError("scene dimensions must be multiples of 16");
  const size_t hw = static_cast<size_t>(h) * w;
  SyntheticScene sc;
  sc.height = h;
  sc.width = w;
  sc.num_classes = layout.num_shape_classes + 1;
  sc.image.assign(3 * hw, 0.0f);
  sc.semseg.assign(hw, 0);
  sc.depth.assign(hw, 0.0f);
  sc.normals.assign(3 * hw, 0.0f);
  sc.boundary.assign(hw, 0);
  sc.saliency.assign(hw, 0);
  std::vector<int> owner(hw, -1);
  Rng noise(layout.noise_seed);
  const double lx = 0.3, ly = -0.4, lz = std::sqrt(1.0 - 0.09 - 0.16);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const double px = x + 0.5, py = y + 0.5;
      const double u = px / w * 2.0 - 1.0, v = py / h * 2.0 - 1.0;
      int top = -1;
      for (int k = static_cast<int>(layout.layers.size()) - 1; k >= 0; --k) {
        if (covers(layout.layers[static_cast<size_t>(k)], px, py)) {
          top = k;
          break;
        }
      }
      owner[i] = top;
      float n[3];
      double rgb[3];
      if (top < 0) {
        sc.depth[i] = static_cast<float>(layout.bg_depth + layout.bg_slope_u * u + layout.bg_slope_v * v);
        plane_normal(layout.bg_slope_u, layout.bg_slope_v, n);
        const double g = 0.45 + 0.1 * std::sin(u * 2.3 + layout.bg_phase) * std::cos(v * 1.7 - layout.bg_phase);
        rgb[0] = rgb[1] = rgb[2] = g;
      } else {
        const Primitive& p = layout.layers[static_cast<size_t>(top)];
        sc.semseg[i] = static_cast<std::uint8_t>(p.cls);
        sc.depth[i] = static_cast<float>(p.depth0 + p.slope_u * u + p.slope_v * v);
        plane_normal(p.slope_u, p.slope_v, n);
        const Rgb c = class_color(p.cls);
        const double pat = 0.75 + 0.25 * class_pattern(p.cls, px, py, p.texture_phase);
        rgb[0] = c.r * pat;
        rgb[1] = c.g * pat;
        rgb[2] = c.b * pat;
      }
      const double shade = 0.55 + 0.45 * std::max(0.0, n[0] * lx + n[1] * ly + n[2] * lz);
      for (int ch = 0; ch < 3; ++ch) {
        const double val = rgb[ch] * shade + layout.noise_amplitude * noise.uniform(-1.0, 1.0);
        sc.image[static_cast<size_t>(ch) * hw + i] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        sc.normals[static_cast<size_t>(ch) * hw + i] = n[ch];
      }
    }
  }
  // Boundary: label transitions in the 4-neighbourhood.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const std::uint8_t l = sc.semseg[i];
      const bool edge = (x > 0 && sc.semseg[i - 1] != l) || (x + 1 < w && sc.semseg[i + 1] != l) ||
                        (y > 0 && sc.semseg[i - w] != l) || (y + 1 < h && sc.semseg[i + w] != l);
      sc.boundary[i] = edge ? 1 : 0;
    }
  }
  // Saliency: visible pixels of the largest visible primitive.
  std::vector<size_t> area(layout.layers.size(), 0);
  for (int o : owner) {
    if (o >= 0) ++area[static_cast<size_t>(o)];
  }
  int best = -1;
  for (size_t k = 0; k < area.size(); ++k) {
    if (area[k] > 0 && (best < 0 || area[k] > area[static_cast<size_t>(best)])) best = static_cast<int>(k);
  }
  if (best >= 0) {
    for (size_t i = 0; i < hw; ++i) sc.saliency[i] = owner[i] == best ? 1 : 0;
    sc.category = layout.layers[static_cast<size_t>(best)].cls - 1;
  }
  return sc;
}

SyntheticScene generate_scene(std::uint64_t seed, int height, int width, int num_shape_classes) {
  SyntheticScene sc = render_scene(sample_layout(seed, height, width, num_shape_classes));
  sc.seed = seed;
  return sc;
}

DatasetSplit make_split(int n_train, int n_val, std::uint64_t seed) {
  if (n_train < 1 || n_val < 1) throw ArgumentError("make_split: need at least one train and one val scene");
  if (n_train > kValOffset || n_val > kSplitStride - kValOffset) {
    throw ArgumentError("make_split: requested sizes would overlap the train/val seed ranges");
  }
  const std::uint64_t base = seed * static_cast<std::uint64_t>(kSplitStride);
  DatasetSplit split;
  for (int i = 0; i < n_train; ++i) split.train.push_back({i, base + static_cast<std::uint64_t>(i), "train"});
  for (int i = 0; i < n_val; ++i) {
    split.val.push_back({n_train + i, base + kValOffset + static_cast<std::uint64_t>(i), "val"});
  }
  return split;
}

void write_manifest(const std::filesystem::path& path, const DatasetSplit& split) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto* part : {&split.train, &split.val}) {
    for (const auto& e : *part) {
      os << json{{"scene_id", e.scene_id}, {"seed", e.seed}, {"split", e.split}}.dump() << '\n';
    }
  }
}

DatasetSplit read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  DatasetSplit split;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e{j.at("scene_id").get<int>(), j.at("seed").get<std::uint64_t>(), j.at("split").get<std::string>()};
      (e.split == "train" ? split.train : split.val).push_back(e);
    } catch (const json::exception& ex) {
      throw DataError("bad manifest line: " + std::string(ex.what()));
    }
  }
  return split;
}

void save_scene(const std::filesystem::path& path, const SyntheticScene& s) {
  auto as_float = [](const std::vector<std::uint8_t>& v) { return std::vector<float>(v.begin(), v.end()); };
  const int h = s.height, w = s.width;
  ParamList arrays{{"image", Tensor({3, h, w}, s.image)},
                   {"semseg", Tensor({h, w}, as_float(s.semseg))},
                   {"depth", Tensor({h, w}, s.depth)},
                   {"normals", Tensor({3, h, w}, s.normals)},
                   {"boundary", Tensor({h, w}, as_float(s.boundary))},
                   {"saliency", Tensor({h, w}, as_float(s.saliency))}};
  save_arrays(path, json{{"scene_id", s.scene_id}, {"seed", s.seed}, {"num_classes", s.num_classes},
                         {"category", s.category}},
              arrays);
}

SyntheticScene load_scene(const std::filesystem::path& path) {
  const ArrayFile f = load_arrays(path);
  auto need = [&](const char* name) -> const Tensor& {
    const Tensor* t = f.find(name);
    if (!t) throw DataError(std::string("scene file lacks ") + name);
    return *t;
  };
  auto as_u8 = [](const Tensor& t) {
    std::vector<std::uint8_t> v(static_cast<size_t>(t.numel()));
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::uint8_t>(t.at(static_cast<std::int64_t>(i)));
    return v;
  };
  SyntheticScene s;
  const Tensor& img = need("image");
  s.height = img.dim(1);
  s.width = img.dim(2);
  s.image.assign(img.data().begin(), img.data().end());
  s.semseg = as_u8(need("semseg"));
  s.depth.assign(need("depth").data().begin(), need("depth").data().end());
  s.normals.assign(need("normals").data().begin(), need("normals").data().end());
  s.boundary = as_u8(need("boundary"));
  s.saliency = as_u8(need("saliency"));
  s.scene_id = f.header.value("scene_id", 0);
  s.seed = f.header.value("seed", std::uint64_t{0});
  s.num_classes = f.header.value("num_classes", 0);
  s.category = f.header.value("category", 0);
  return s;
}

}  // namespace icm::synth
