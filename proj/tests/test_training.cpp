#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "icm/errors.hpp"
#include "icm/optim.hpp"
#include "icm/training.hpp"

using namespace icm;

namespace {

TrainConfig tiny_config(TrainMode mode, std::uint64_t seed = 0) {
  TrainConfig c;
  c.mode = mode;
  c.seed = seed;
  c.iterations = 10;
  c.batch_size = 1;
  c.lr = 1e-3;
  c.log_interval = 1;
  c.lambda = 0.5;
  c.prelim_channels = 16;
  c.entropy_hidden = 16;
  c.data.n_train = 4;
  c.data.n_val = 2;
  c.backbone.pretrain_steps = 0;
  return c;
}

const Backbone& frozen_backbone() {
  static const Backbone bb = obtain_backbone(tiny_config(TrainMode::fixed).backbone);
  return bb;
}

const Dataset& tiny_data() {
  static const Dataset d = build_dataset(tiny_config(TrainMode::fixed).data);
  return d;
}

bool same(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Losses, ConfidentCorrectLogitsGiveTinyCrossEntropy) {
  const int k = 5, h = 2, w = 3;
  Tensor logits({1, k, h, w}, -20.0f);
  Tensor labels({1, 1, h, w}, 0.0f);
  for (int i = 0; i < h * w; ++i) {
    const int cls = i % k;
    labels.ptr()[i] = static_cast<float>(cls);
    logits.ptr()[cls * h * w + i] = 20.0f;
  }
  EXPECT_LE(cross_entropy_loss(logits, labels).item(), 1e-3f);
  Tensor ignored({1, 1, h, w}, static_cast<float>(kIgnoreLabel));
  EXPECT_THROW(cross_entropy_loss(logits, ignored), EmptyError);
}

TEST(Losses, L1AndCosineExtremes) {
  Rng rng(3);
  const Tensor pred = uniform_tensor({1, 1, 4, 4}, 2.0f, rng, false);
  const Tensor valid({1, 1, 4, 4}, 1.0f);
  EXPECT_EQ(masked_l1_loss(pred, pred, valid).item(), 0.0f);
  Tensor n({1, 3, 4, 4}, 0.0f), neg({1, 3, 4, 4}, 0.0f);
  for (int i = 0; i < 16; ++i) {
    n.ptr()[32 + i] = 1.0f;
    neg.ptr()[32 + i] = -1.0f;
  }
  EXPECT_NEAR(cosine_loss(neg, n, valid).item(), 2.0f, 1e-6f);
  EXPECT_NEAR(cosine_loss(n, n, valid).item(), 0.0f, 1e-6f);
  EXPECT_THROW(masked_l1_loss(pred, pred, Tensor({1, 1, 4, 4}, 0.0f)), EmptyError);
}

TEST(Losses, ComposeLoss) {
  EXPECT_DOUBLE_EQ(compose_loss(0.5, 2.0, 1.0, 1.0, 1.0, true), 3.5);
  EXPECT_DOUBLE_EQ(compose_loss(0.5, 2.0, 1.0, 0.0, 1.0, true), 0.5);
  EXPECT_DOUBLE_EQ(compose_loss(0.5, 2.0, 1.0, 1.0, 1.0, false), 2.5);
  EXPECT_DOUBLE_EQ(compose_loss(0.5, 2.0, 1.0, 2.0, 0.5, true), 0.5 + 2.0 * 2.5);
}

TEST(PolyLr, Schedule) {
  EXPECT_DOUBLE_EQ(poly_lr(0, 100, 1e-3, 0.9), 1e-3);
  EXPECT_DOUBLE_EQ(poly_lr(100, 100, 1e-3, 0.9), 0.0);
  EXPECT_DOUBLE_EQ(poly_lr(50, 100, 1e-3, 1.0), 5e-4);
  EXPECT_LT(poly_lr(60, 100, 1e-3, 0.9), poly_lr(50, 100, 1e-3, 0.9));
  EXPECT_THROW(poly_lr(101, 100, 1e-3), ArgumentError);
  EXPECT_THROW(poly_lr(-1, 100, 1e-3), ArgumentError);
  EXPECT_THROW(poly_lr(0, 0, 1e-3), ArgumentError);
}

TEST(TrainConfig, ValidationAndRoundTrip) {
  const TrainConfig c = tiny_config(TrainMode::dora_ft);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  auto bad = [&](auto mutate) {
    TrainConfig b = c;
    mutate(b);
    EXPECT_THROW(b.validate(), ConfigError);
  };
  bad([](TrainConfig& b) { b.lambda = 0.0; });
  bad([](TrainConfig& b) { b.iterations = 0; });
  bad([](TrainConfig& b) { b.decoder = "dense"; });
  bad([](TrainConfig& b) { b.data.image_size = 48; });
  bad([](TrainConfig& b) { b.adapter.rank = 0; });
  bad([](TrainConfig& b) { b.adapter.targets = {"mlp"}; });
  bad([](TrainConfig& b) { b.lambdas = {0.1, -1.0}; });
  EXPECT_THROW(parse_mode("frozen"), ConfigError);
  for (auto m : {TrainMode::full_ft, TrainMode::dora_ft, TrainMode::fixed, TrainMode::scratch}) {
    EXPECT_EQ(parse_mode(to_string(m)), m);
  }
  json j = c.to_json();
  j["lambda"] = "big";
  EXPECT_THROW(TrainConfig::from_json(j), ConfigError);
}

TEST(TrainModes, FixedLeavesBackboneUntouched) {
  IcmModel model(tiny_config(TrainMode::fixed), frozen_backbone());
  const auto before = model.backbone().parameter_hash();
  const auto result = train(model, tiny_data());
  EXPECT_EQ(model.backbone().parameter_hash(), before);
  EXPECT_EQ(frozen_backbone().parameter_hash(), before);
  ASSERT_EQ(result.log.size(), 10u);
  for (const auto& r : result.log) {
    EXPECT_EQ(r.frozen_grad_norm, 0.0);
    EXPECT_TRUE(std::isfinite(r.loss.total));
  }
}

TEST(TrainModes, DoraTrainsOnlyAdapters) {
  IcmModel model(tiny_config(TrainMode::dora_ft), frozen_backbone());
  const auto before = model.backbone().parameter_hash();
  const auto result = train(model, tiny_data());
  EXPECT_EQ(model.backbone().parameter_hash(), before);
  for (const auto& r : result.log) EXPECT_EQ(r.frozen_grad_norm, 0.0);
  bool moved = false;
  for (const auto& p : model.adapted()->adapter_parameters()) {
    if (p.name.find(".B") == std::string::npos) continue;
    for (float v : p.tensor.data()) moved = moved || v != 0.0f;
  }
  EXPECT_TRUE(moved);
}

TEST(TrainModes, ScratchAndFullFtUpdateTheirOwnCopy) {
  const auto original = frozen_backbone().parameter_hash();
  for (auto mode : {TrainMode::scratch, TrainMode::full_ft}) {
    IcmModel model(tiny_config(mode), frozen_backbone());
    const auto before = model.backbone().parameter_hash();
    train(model, tiny_data());
    EXPECT_NE(model.backbone().parameter_hash(), before);
    EXPECT_EQ(frozen_backbone().parameter_hash(), original);
  }
}

TEST(TrainModes, FixedAndDoraRequireFrozenBackbone) {
  Backbone loose = frozen_backbone().deep_clone();
  loose.unfreeze();
  EXPECT_THROW(IcmModel(tiny_config(TrainMode::fixed), loose), ConfigError);
  EXPECT_THROW(IcmModel(tiny_config(TrainMode::dora_ft), loose), ConfigError);
}

TEST(Training, DeterministicForFixedSeed) {
  IcmModel a(tiny_config(TrainMode::dora_ft, 4), frozen_backbone());
  IcmModel b(tiny_config(TrainMode::dora_ft, 4), frozen_backbone());
  const auto ra = train(a, tiny_data());
  const auto rb = train(b, tiny_data());
  ASSERT_EQ(ra.log.size(), rb.log.size());
  for (size_t i = 0; i < ra.log.size(); ++i) EXPECT_EQ(ra.log[i].loss.total, rb.log[i].loss.total);
  const Batch batch = make_batch({&tiny_data().val[0]}, TaskId::semseg);
  EXPECT_TRUE(same(a.encode_latent(batch.images), b.encode_latent(batch.images)));
}

TEST(Checkpoint, RoundTripReproducesPredictions) {
  const auto dir = std::filesystem::temp_directory_path() / "icm_test_ckpt";
  std::filesystem::remove_all(dir);
  IcmModel model(tiny_config(TrainMode::dora_ft, 9), frozen_backbone());
  train(model, tiny_data(), dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "log.jsonl"));
  auto loaded = load_checkpoint(dir);
  const Batch batch = make_batch({&tiny_data().val[0], &tiny_data().val[1]}, TaskId::semseg);
  const Tensor y = model.encode_latent(batch.images);
  EXPECT_TRUE(same(loaded->encode_latent(batch.images), y));
  NoGradGuard ng;
  EXPECT_TRUE(same(loaded->decode_prediction(y), model.decode_prediction(y)));
  std::filesystem::remove_all(dir);
}

TEST(Training, EmptyTrainingSetIsRejected) {
  IcmModel model(tiny_config(TrainMode::fixed), frozen_backbone());
  EXPECT_THROW(train(model, Dataset{}), DataError);
}
