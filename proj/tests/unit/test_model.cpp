#include <gtest/gtest.h>

#include <fstream>

#include "evx/error.hpp"
#include "evx/model.hpp"
#include "helpers.hpp"

namespace evx {
namespace {

ModelConfig scratch_config(std::size_t classes, std::size_t size = 16) {
  ModelConfig c;
  c.backbone_id = "evnet-scratch";
  c.num_classes = classes;
  c.input_size = size;
  return c;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IoError;
}

TEST(ModelConfig, PaperDefaults) {
  const ModelConfig c;
  EXPECT_EQ(c.epochs, 10u);
  EXPECT_EQ(c.batch_size, 120u);
  EXPECT_EQ(c.lr_backbone, 1e-5);
  EXPECT_EQ(c.lr_head, 1e-3);
  EXPECT_EQ(c.input_size, 299u);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = scratch_config(3);
  c.epochs = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ConfigError);
  c = scratch_config(3);
  c.batch_size = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ConfigError);
  c = scratch_config(3);
  c.lr_backbone = c.lr_head;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ConfigError);
  c = scratch_config(1);
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
  ModelConfig c = scratch_config(7, 32);
  c.target_layer = "block2_conv_act";
  c.seed = 99;
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
}

TEST(Build, LogitWidthFollowsClassCount) {
  for (std::size_t classes : {4u, 10u}) {
    const ModelBundle b = build(scratch_config(classes));
    const Tensor logits = b.logits(Tensor({2, 16, 16, 3}));
    EXPECT_EQ(logits.shape(), (Shape{2, classes}));
  }
}

TEST(Build, ZeroBatchGivesFiniteLogits) {
  const ModelBundle b = build(scratch_config(4, 299));
  const Tensor logits = b.logits(Tensor({1, 299, 299, 3}));
  EXPECT_TRUE(logits.all_finite());
}

TEST(Build, ShippedBackboneLoads) {
  ModelConfig c;
  c.num_classes = 3;
  c.input_size = 64;
  const ModelBundle b = build(c, {"circle", "square", "triangle"});
  EXPECT_EQ(b.config.target_layer, "block4_conv_act");
  EXPECT_TRUE(b.has_gap_dense_head());
  // Fresh head on a pretrained backbone starts at zero: uniform predictions.
  const Prediction p = predict(b, Tensor({1, 64, 64, 3}));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p.probabilities[k], 1.0 / 3.0, 1e-12);
}

TEST(Build, UnknownBackboneListsIds) {
  ModelConfig c = scratch_config(3);
  c.backbone_id = "xception";
  try {
    build(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownBackbone);
    EXPECT_NE(std::string(e.what()).find("evnet-scratch"), std::string::npos);
  }
}

TEST(Build, UnknownLayerListsNames) {
  ModelConfig c = scratch_config(3);
  c.target_layer = "block14_sepconv2_act";
  try {
    build(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownLayer);
    EXPECT_NE(std::string(e.what()).find("block2_conv_act"), std::string::npos);
  }
}

TEST(Build, EarlierTargetLayerCutsNothing) {
  ModelConfig c = scratch_config(3);
  c.target_layer = "block2_conv_act";
  const ModelBundle b = build(c);
  EXPECT_FALSE(b.has_gap_dense_head());
  EXPECT_EQ(b.network.layer(b.target_activation_index() - 1).name(), "block2_conv_act");
}

TEST(Build, ClassNameCountMustMatch) {
  EXPECT_EQ(code_of([] { build(scratch_config(3), {"a", "b"}); }), ErrorCode::ClassCountMismatch);
}

TEST(Predict, RowsSumToOneAndArgmax) {
  const ModelBundle b = build(scratch_config(5));
  Rng rng(3);
  Tensor x({6, 16, 16, 3});
  for (double& v : x.values()) v = rng.uniform(-1, 1);
  const Prediction p = predict(b, x);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += p.probabilities[i * 5 + k];
    EXPECT_NEAR(s, 1.0, 1e-5);
    const std::span<const double> row(p.probabilities.data() + i * 5, 5);
    EXPECT_EQ(p.class_ids[i], static_cast<int>(argmax(row)));
  }
}

TEST(Predict, WrongShapeRejected) {
  const ModelBundle b = build(scratch_config(3));
  EXPECT_EQ(code_of([&] { predict(b, Tensor({1, 15, 16, 3})); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { predict(b, Tensor({1, 16, 16, 1})); }), ErrorCode::ShapeMismatch);
}

TEST(Checkpoint, RoundTripReproducesLogits) {
  const auto dir = testing::temp_dir();
  ModelConfig c = scratch_config(4);
  c.seed = 5;
  const ModelBundle b = build(c, {"earthquake", "floods", "thunder_storm", "wildfires"});
  save_checkpoint(b, dir / "m.ckpt");
  const ModelBundle r = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(r.config, b.config);
  EXPECT_EQ(r.class_names, b.class_names);
  Rng rng(8);
  Tensor x({3, 16, 16, 3});
  for (double& v : x.values()) v = rng.uniform(-1, 1);
  const Tensor a = b.logits(x), z = r.logits(x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], z[i], 1e-6);
}

TEST(Checkpoint, GarbageRejected) {
  const auto dir = testing::temp_dir();
  std::ofstream(dir / "bad.ckpt") << "hello";
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "bad.ckpt"); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "missing.ckpt"); }), ErrorCode::IoError);
}

TEST(Checkpoint, FileBackboneReusesWeights) {
  const auto dir = testing::temp_dir();
  const ModelBundle b = build(scratch_config(3));
  save_checkpoint(b, dir / "m.ckpt");
  ModelConfig c = scratch_config(2);
  c.backbone_id = "file:" + (dir / "m.ckpt").string();
  const ModelBundle reused = build(c);
  const auto idx = reused.network.find("block1_conv");
  ASSERT_TRUE(idx);
  EXPECT_EQ(*reused.network.layer(*idx).params()[0], *b.network.layer(*idx).params()[0]);
}

}  // namespace
}  // namespace evx
