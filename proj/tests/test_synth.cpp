#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "icm/errors.hpp"
#include "icm/synth_data.hpp"

using namespace icm;
using namespace icm::synth;

namespace {

bool same_scene(const SyntheticScene& a, const SyntheticScene& b) {
  return a.image == b.image && a.semseg == b.semseg && a.depth == b.depth && a.normals == b.normals &&
         a.boundary == b.boundary && a.saliency == b.saliency && a.category == b.category;
}

}  // namespace

TEST(Synth, SameSeedSameScene) {
  EXPECT_TRUE(same_scene(generate_scene(11, 64, 64, 4), generate_scene(11, 64, 64, 4)));
  EXPECT_FALSE(same_scene(generate_scene(11, 64, 64, 4), generate_scene(12, 64, 64, 4)));
}

TEST(Synth, InvalidDimensions) {
  EXPECT_THROW(generate_scene(0, 60, 64, 4), ShapeError);
  EXPECT_THROW(generate_scene(0, 64, 0, 4), ShapeError);
  EXPECT_THROW(generate_scene(0, 64, 64, 0), ArgumentError);
}

TEST(Synth, FlatFrontalRectangleHasExactNormals) {
  SceneLayout layout;
  Primitive rect;
  rect.kind = PrimitiveKind::rectangle;
  rect.cx = 32;
  rect.cy = 32;
  rect.half_w = 10;
  rect.half_h = 8;
  layout.layers = {rect};
  layout.bg_slope_u = 0.1;
  const SyntheticScene s = render_scene(layout);
  const size_t hw = 64 * 64;
  int inside = 0;
  for (size_t i = 0; i < hw; ++i) {
    if (s.semseg[i] != rect.cls) continue;
    ++inside;
    EXPECT_EQ(s.normals[i], 0.0f);
    EXPECT_EQ(s.normals[hw + i], 0.0f);
    EXPECT_EQ(s.normals[2 * hw + i], 1.0f);
  }
  EXPECT_EQ(inside, 20 * 16);
}

class SceneConsistency : public ::testing::TestWithParam<int> {};

TEST_P(SceneConsistency, LabelsAgree) {
  const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(GetParam());
  const SceneLayout layout = sample_layout(seed, 64, 64, 4);
  const SyntheticScene s = render_scene(layout);
  const int h = s.height, w = s.width;
  const size_t hw = static_cast<size_t>(h) * w;
  EXPECT_GE(layout.layers.size(), 2u);
  EXPECT_LE(layout.layers.size(), 6u);
  for (size_t i = 0; i < hw; ++i) {
    // Unit normals.
    const double n = std::hypot(s.normals[i], s.normals[hw + i], s.normals[2 * hw + i]);
    EXPECT_NEAR(n, 1.0, 1e-6);
    // Saliency lies on the foreground.
    if (s.saliency[i]) EXPECT_NE(s.semseg[i], 0);
    for (int c = 0; c < 3; ++c) {
      EXPECT_GE(s.image[c * hw + i], 0.0f);
      EXPECT_LE(s.image[c * hw + i], 1.0f);
    }
  }
  // Independent boundary oracle: any 4-neighbour with a different label.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool edge = false;
      const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int yy = y + dy[k], xx = x + dx[k];
        if (yy >= 0 && yy < h && xx >= 0 && xx < w && s.semseg[yy * w + xx] != s.semseg[y * w + x]) edge = true;
      }
      EXPECT_EQ(s.boundary[y * w + x], edge ? 1 : 0);
    }
  }
  // Saliency marks one primitive: its pixels all share a class.
  std::set<int> sal_classes;
  for (size_t i = 0; i < hw; ++i) {
    if (s.saliency[i]) sal_classes.insert(s.semseg[i]);
  }
  EXPECT_LE(sal_classes.size(), 1u);
  if (!sal_classes.empty()) EXPECT_EQ(*sal_classes.begin(), s.category + 1);
}

INSTANTIATE_TEST_SUITE_P(Seeds, SceneConsistency, ::testing::Range(0, 12));

TEST(Split, DisjointSeedsAndManifestRoundTrip) {
  const DatasetSplit sp = make_split(100, 20, 7);
  std::set<std::uint64_t> train, val;
  for (const auto& e : sp.train) train.insert(e.seed);
  for (const auto& e : sp.val) val.insert(e.seed);
  EXPECT_EQ(train.size(), 100u);
  EXPECT_EQ(val.size(), 20u);
  for (auto s : val) EXPECT_EQ(train.count(s), 0u);
  EXPECT_THROW(make_split(0, 5, 1), ArgumentError);
  EXPECT_THROW(make_split(1 << 20, 5, 1), ArgumentError);

  const auto path = std::filesystem::temp_directory_path() / "icm_test_manifest.jsonl";
  write_manifest(path, sp);
  const DatasetSplit back = read_manifest(path);
  ASSERT_EQ(back.train.size(), sp.train.size());
  ASSERT_EQ(back.val.size(), sp.val.size());
  for (size_t i = 0; i < sp.val.size(); ++i) {
    EXPECT_EQ(back.val[i].seed, sp.val[i].seed);
    EXPECT_TRUE(same_scene(generate_scene(back.val[i].seed, 32, 32, 4), generate_scene(sp.val[i].seed, 32, 32, 4)));
  }
  std::filesystem::remove(path);
}

TEST(SceneFile, RoundTrip) {
  const SyntheticScene s = generate_scene(5, 32, 48, 4);
  const auto path = std::filesystem::temp_directory_path() / "icm_test_scene.icma";
  save_scene(path, s);
  EXPECT_TRUE(same_scene(load_scene(path), s));
  std::filesystem::remove(path);
}
