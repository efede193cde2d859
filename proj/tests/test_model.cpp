#include <gtest/gtest.h>

#include "glcf/bottleneck.hpp"
#include "glcf/checkpoint.hpp"
#include "glcf/errors.hpp"
#include "glcf/heads.hpp"
#include "glcf/model.hpp"
#include "test_support.hpp"

using namespace glcf;

namespace {

ModelConfig model_config(SamVariant v, int64_t resolution = 64) {
  ModelConfig cfg;
  cfg.bottleneck.variant = v;
  cfg.resolution = resolution;
  return cfg;
}

int64_t count(const TensorMap& m) {
  int64_t n = 0;
  for (const auto& [_, t] : m) {
    if (_.rfind("bottleneck.", 0) == 0) n += t.numel();
  }
  return n;
}

}  // namespace

class AllVariants : public ::testing::TestWithParam<SamVariant> {};

TEST_P(AllVariants, ThetaOmegaShapes) {
  torch::manual_seed(0);
  GlcfModel model(model_config(GetParam()));
  auto out = model->forward(torch::randn({2, 3, 64, 64}));
  const auto n = model->config().token_grid();
  EXPECT_EQ(n, (std::array<int64_t, 2>{4, 4}));
  EXPECT_EQ(out.bottleneck.theta.sizes(), (std::vector<int64_t>{2, 16, 64}));
  EXPECT_EQ(out.bottleneck.omega.sizes(), (std::vector<int64_t>{2, 16, 64}));
  require_same_shape(out.local, out.global, "phi_g");
  require_same_shape(out.local, out.local_est, "psi_l");
  require_same_shape(out.local, out.global_est, "psi_g");
}

TEST_P(AllVariants, ParameterCountMatchesClosedForm) {
  auto cfg = model_config(GetParam());
  GlcfModel model(cfg);
  const auto& ch = cfg.backbone.stage_channels;
  EXPECT_EQ(count(model->trainable_state()), bottleneck_parameter_count(cfg.bottleneck, {ch[0], ch[1], ch[2]}, 16));
}

INSTANTIATE_TEST_SUITE_P(Sam, AllVariants,
                         ::testing::Values(SamVariant::kPS, SamVariant::kPGS, SamVariant::kPSS, SamVariant::kNoSam),
                         [](const auto& info) {
                           auto s = to_string(info.param);
                           s.erase(std::remove(s.begin(), s.end(), '-'), s.end());
                           return s;
                         });

TEST(Bottleneck, SequenceLengths) {
  using S = SemanticAggregationImpl;
  EXPECT_EQ(S::sequence_lengths(SamVariant::kPS, 16), (std::array<int64_t, 2>{32, 32}));
  EXPECT_EQ(S::sequence_lengths(SamVariant::kPGS, 16), (std::array<int64_t, 2>{17, 33}));
  EXPECT_EQ(S::sequence_lengths(SamVariant::kPSS, 16), (std::array<int64_t, 2>{32, 48}));
  EXPECT_EQ(S::sequence_lengths(SamVariant::kNoSam, 16), (std::array<int64_t, 2>{16, 16}));
}

TEST(Bottleneck, MsPemSumsThreeEqualLengthSequences) {
  torch::manual_seed(1);
  BottleneckConfig cfg;
  SemanticBottleneck sb(std::array<int64_t, 3>{32, 64, 128}, cfg, std::array<int64_t, 2>{4, 4});
  auto p = glcf::testing::random_pyramid(2, {32, 64, 128}, {16, 8, 4}, torch::kFloat32);
  auto grid = ms_pem_embed(p, sb);
  EXPECT_EQ(grid.tokens.sizes(), (std::vector<int64_t>{2, 16, 64}));

  // Biases start at zero, so an all-zero pyramid embeds to the position encoding alone.
  FeaturePyramid zero;
  for (size_t i = 0; i < 3; ++i) zero[i] = torch::zeros_like(p[i]);
  auto pos = sb->embed(zero).tokens;
  EXPECT_TRUE(torch::allclose(pos, ms_pem_embed(zero, sb).tokens));

  // Each level contributes additively: the embedding of p equals the sum of the
  // single-level embeddings minus the extra copies of the position term.
  torch::Tensor acc = -2 * pos;
  for (size_t i = 0; i < 3; ++i) {
    auto single = zero;
    single[i] = p[i];
    acc = acc + sb->embed(single).tokens;
  }
  EXPECT_TRUE(torch::allclose(acc, grid.tokens, 1e-5, 1e-5));
}

TEST(Bottleneck, DisabledPassesLevelThreeEmbeddingThrough) {
  BottleneckConfig cfg;
  cfg.enabled = false;
  SemanticBottleneck sb(std::array<int64_t, 3>{32, 64, 128}, cfg, std::array<int64_t, 2>{4, 4});
  auto p = glcf::testing::random_pyramid(1, {32, 64, 128}, {16, 8, 4}, torch::kFloat32);
  auto out = sb->forward(p);
  EXPECT_TRUE(torch::equal(out.theta, out.omega));
}

TEST(Bottleneck, NonTilingPyramidIsConfigError) {
  BottleneckConfig cfg;
  SemanticBottleneck sb(std::array<int64_t, 3>{32, 64, 128}, cfg, std::array<int64_t, 2>{4, 4});
  auto p = glcf::testing::random_pyramid(1, {32, 64, 128}, {16, 8, 5}, torch::kFloat32);
  EXPECT_THROW(sb->embed(p), ConfigError);
  cfg.depth = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Bottleneck, ConfigParsesVariantNames) {
  auto c = nlohmann::json({{"variant", "PGS"}}).get<BottleneckConfig>();
  EXPECT_EQ(c.variant, SamVariant::kPGS);
  EXPECT_THROW(nlohmann::json({{"variant", "XYZ"}}).get<BottleneckConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"dimension", 3}}).get<BottleneckConfig>(), ConfigError);
}

TEST(Heads, UpsampleIsNearestNeighbour) {
  auto x = torch::arange(4, torch::kFloat32).view({1, 2, 2, 1});
  auto y = upsample2x(x);
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 4, 4, 1}));
  EXPECT_EQ(y[0][0][1][0].item<float>(), 0.0f);
  EXPECT_EQ(y[0][1][2][0].item<float>(), 1.0f);
  EXPECT_EQ(y[0][3][3][0].item<float>(), 3.0f);
}

TEST(Model, TrainableStateExcludesBackbone) {
  GlcfModel model(ModelConfig{});
  for (const auto& [name, _] : model->trainable_state()) EXPECT_NE(name.rfind("backbone.", 0), 0u) << name;
  int64_t all = 0;
  for (const auto& p : model->parameters()) all += p.numel();
  int64_t backbone = 0;
  for (const auto& p : model->backbone->parameters()) backbone += p.numel();
  int64_t trainable = 0;
  for (const auto& p : model->trainable_parameters()) trainable += p.numel();
  EXPECT_EQ(all, backbone + trainable);
}

TEST(Model, LoadRejectsMissingOrMisShapedState) {
  GlcfModel model(ModelConfig{});
  auto state = model->trainable_state();
  auto missing = state;
  missing.erase(missing.begin());
  EXPECT_THROW(model->load_trainable_state(missing), ContractError);
  auto bad = state;
  bad.begin()->second = torch::zeros({1});
  EXPECT_THROW(model->load_trainable_state(bad), ContractError);
}

class CheckpointRoundtrip : public ::testing::TestWithParam<std::tuple<SamVariant, int64_t>> {};

TEST_P(CheckpointRoundtrip, ProbeOutputsAreBitIdentical) {
  const auto [variant, res] = GetParam();
  const auto dir = glcf::testing::scratch_dir("ckpt_" + to_string(variant) + std::to_string(res));
  RunConfig cfg;
  cfg.bottleneck.variant = variant;
  cfg.data.resolution = res;
  cfg.training.seed = 5;
  GlcfModel model(cfg.model(), 5);
  // Perturb so a fresh init cannot pass by accident.
  {
    torch::NoGradGuard g;
    for (auto& p : model->trainable_parameters()) p.add_(torch::randn_like(p) * 0.01);
  }
  save_checkpoint(dir / "c.glcf", model, cfg, {{1, 1.0, 2.0, 3.0, 6.0}});
  auto ck = load_checkpoint(dir / "c.glcf");
  ASSERT_EQ(ck.history.size(), 1u);
  EXPECT_EQ(ck.history[0].total, 6.0);
  EXPECT_EQ(nlohmann::json(ck.config), nlohmann::json(cfg));

  torch::manual_seed(3);
  auto probe = torch::randn({2, 3, res, res});
  model->eval();
  torch::NoGradGuard g;
  auto a = model->forward(probe);
  auto b = ck.model->forward(probe);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(torch::equal(a.global[i], b.global[i]));
    EXPECT_TRUE(torch::equal(a.local_est[i], b.local_est[i]));
    EXPECT_TRUE(torch::equal(a.global_est[i], b.global_est[i]));
  }
}

INSTANTIATE_TEST_SUITE_P(Sizes, CheckpointRoundtrip,
                         ::testing::Combine(::testing::Values(SamVariant::kPS, SamVariant::kPGS, SamVariant::kPSS),
                                            ::testing::Values(int64_t{64}, int64_t{224})));

TEST(Checkpoint, BackboneDigestMismatchIsContractError) {
  const auto dir = glcf::testing::scratch_dir("ckpt_digest");
  RunConfig cfg;
  GlcfModel model(cfg.model(), 0);
  save_checkpoint(dir / "c.glcf", model, cfg, {});
  auto ar = read_tensor_archive(dir / "c.glcf");
  ar.metadata["backbone"]["digest"] = "0000";
  save_tensor_archive(dir / "c.glcf", ar);
  EXPECT_THROW(load_checkpoint(dir / "c.glcf"), ContractError);
}
