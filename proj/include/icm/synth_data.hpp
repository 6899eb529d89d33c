#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace icm::synth {

enum class PrimitiveKind { disc, rectangle, triangle };

// One painter's-order layer. Geometry is in pixel units; depth is the plane
// z = depth0 + slope_u·u + slope_v·v over normalised coordinates u, v ∈ [-1, 1].
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::rectangle;
  int cls = 1;
  double cx = 0, cy = 0;
  double half_w = 0, half_h = 0;  // rectangle
  double radius = 0;              // disc
  double vx[3] = {0, 0, 0}, vy[3] = {0, 0, 0};  // triangle
  double depth0 = 5.0;
  double slope_u = 0.0, slope_v = 0.0;
  double texture_phase = 0.0;
};

struct SceneLayout {
  int height = 64;
  int width = 64;
  int num_shape_classes = 4;
  double bg_depth = 9.5;
  double bg_slope_u = 0.0, bg_slope_v = 0.0;
  double bg_phase = 0.0;
  double noise_amplitude = 0.03;
  std::uint64_t noise_seed = 0;
  std::vector<Primitive> layers;  // back to front
};

struct SyntheticScene {
  int height = 0;
  int width = 0;
  int num_classes = 0;               // background + shape classes
  std::vector<float> image;          // 3·H·W, values in [0, 1]
  std::vector<std::uint8_t> semseg;  // H·W class ids
  std::vector<float> depth;          // H·W, near = small
  std::vector<float> normals;        // 3·H·W unit vectors
  std::vector<std::uint8_t> boundary;
  std::vector<std::uint8_t> saliency;
  int category = 0;  // class of the largest visible object minus one (pretext label)
  int scene_id = 0;
  std::uint64_t seed = 0;
};

SceneLayout sample_layout(std::uint64_t seed, int height, int width, int num_shape_classes);
SyntheticScene render_scene(const SceneLayout& layout);
SyntheticScene generate_scene(std::uint64_t seed, int height, int width, int num_shape_classes);

struct ManifestEntry {
  int scene_id = 0;
  std::uint64_t seed = 0;
  std::string split;
};

struct DatasetSplit {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> val;
};

/// Disjoint seed ranges: train at base + i, val at base + 2^19 + i with base = seed·2^20.
DatasetSplit make_split(int n_train, int n_val, std::uint64_t seed);

void write_manifest(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_manifest(const std::filesystem::path& path);

void save_scene(const std::filesystem::path& path, const SyntheticScene& scene);
SyntheticScene load_scene(const std::filesystem::path& path);

}  // namespace icm::synth
