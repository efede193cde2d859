#include <gtest/gtest.h>

#include "glcf/backbone.hpp"
#include "glcf/errors.hpp"
#include "glcf/tensor_archive.hpp"
#include "test_support.hpp"

using namespace glcf;

TEST(Backbone, LevelShapesFollowStrides) {
  BackboneConfig cfg;
  auto net = make_backbone(cfg);
  auto p = extract_features(torch::randn({2, 3, 224, 224}), net);
  const int64_t expect[3] = {56, 28, 14};
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(p[i].sizes(), (std::vector<int64_t>{2, cfg.stage_channels[i], expect[i], expect[i]}));
  }
  auto q = extract_features(torch::randn({1, 3, 64, 64}), net);
  EXPECT_EQ(q[0].size(2), 16);
  EXPECT_EQ(q[2].size(3), 4);
}

TEST(Backbone, ZeroImageIsFinite) {
  auto net = make_backbone({});
  EXPECT_TRUE(extract_features(torch::zeros({1, 3, 64, 64}), net).all_finite());
}

TEST(Backbone, DeterministicForSameInput) {
  auto net = make_backbone({});
  auto x = torch::randn({2, 3, 64, 64});
  auto a = extract_features(x, net);
  auto b = extract_features(x, net);
  for (size_t i = 0; i < 3; ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
}

TEST(Backbone, RandomFrozenIsAFunctionOfTheSeed) {
  BackboneConfig cfg;
  auto a = make_backbone(cfg);
  auto b = make_backbone(cfg);
  EXPECT_EQ(parameter_digest(*a), parameter_digest(*b));
  cfg.seed = 8;
  EXPECT_NE(parameter_digest(*a), parameter_digest(*make_backbone(cfg)));
}

TEST(Backbone, ParametersAreFrozen) {
  auto net = make_backbone({});
  for (const auto& p : net->parameters()) EXPECT_FALSE(p.requires_grad());
  EXPECT_FALSE(net->is_training());
}

TEST(Backbone, NonDivisibleInputIsConfigError) {
  auto net = make_backbone({});
  EXPECT_THROW(extract_features(torch::randn({1, 3, 60, 64}), net), ConfigError);
  EXPECT_THROW(extract_features(torch::randn({3, 64, 64}), net), ConfigError);
}

TEST(Backbone, NonFiniteInputIsNumericFault) {
  auto net = make_backbone({});
  auto x = torch::zeros({1, 3, 64, 64});
  x[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(extract_features(x, net), NumericFault);
}

TEST(Backbone, ImportsWeightsFromArchive) {
  const auto dir = glcf::testing::scratch_dir("backbone_import");
  BackboneConfig src_cfg;
  src_cfg.seed = 99;
  auto src = make_backbone(src_cfg);
  TensorArchive ar;
  for (const auto& item : src->named_parameters()) ar.tensors["backbone." + item.key()] = item.value().detach();
  save_tensor_archive(dir / "bb.glcf", ar);

  BackboneConfig cfg;
  cfg.source = WeightSource::kArchive;
  cfg.archive_path = dir / "bb.glcf";
  auto imported = make_backbone(cfg);
  EXPECT_EQ(parameter_digest(*imported), parameter_digest(*src));

  ar.tensors.erase(ar.tensors.begin());
  save_tensor_archive(dir / "partial.glcf", ar);
  cfg.archive_path = dir / "partial.glcf";
  EXPECT_THROW(make_backbone(cfg), ConfigError);
}

TEST(Backbone, ConfigIsStrict) {
  EXPECT_THROW(nlohmann::json({{"stage_chanels", {1, 2, 3, 4}}}).get<BackboneConfig>(), ConfigError);
  auto cfg = nlohmann::json({{"seed", 3}}).get<BackboneConfig>();
  EXPECT_EQ(cfg.seed, 3u);
  BackboneConfig back = nlohmann::json(cfg).get<BackboneConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(cfg));
}
