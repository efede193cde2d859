#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "glcf/errors.hpp"
#include "glcf/metrics.hpp"
#include "glcf/scoring.hpp"
#include "glcf/training.hpp"

using namespace glcf;

namespace {

CalibrationStats unit_stats() {
  CalibrationStats s;
  for (size_t i = 0; i < 3; ++i) s.local[i] = s.global[i] = {1.0, 1.0};
  return s;
}

}  // namespace

TEST(Scoring, SquaredErrorMapZeroIffEqual) {
  torch::manual_seed(1);
  auto a = torch::randn({2, 5, 4, 4}, torch::kDouble);
  EXPECT_EQ(squared_error_map(a, a).abs().max().item<double>(), 0.0);
  auto b = a.clone();
  b.index_put_({1, 3, 2, 1}, b.index({1, 3, 2, 1}) + 0.5);
  auto m = squared_error_map(a, b);
  EXPECT_DOUBLE_EQ(m.index({1, 2, 1}).item<double>(), 0.25);
  EXPECT_EQ((m > 0).sum().item<int64_t>(), 1);
  EXPECT_TRUE((m >= 0).all().item<bool>());
}

TEST(Scoring, SquaredErrorMapMatchesLoop) {
  torch::manual_seed(2);
  auto a = torch::randn({1, 3, 2, 2}, torch::kDouble);
  auto b = torch::randn({1, 3, 2, 2}, torch::kDouble);
  auto m = squared_error_map(a, b);
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < 2; ++w) {
      double s = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = a[0][c][h][w].item<double>() - b[0][c][h][w].item<double>();
        s += d * d;
      }
      EXPECT_NEAR(m[0][h][w].item<double>(), s, 1e-12);
    }
}

TEST(Scoring, FuseScaleSubstitution) {
  FusionConfig cfg;
  CalibrationStats stats;
  stats.local[0] = {1.0, 0.5};
  stats.global[0] = {3.0, 1.0};
  auto local = torch::full({1, 1, 1}, 2.0, torch::kDouble);
  auto global = torch::full({1, 1, 1}, 3.0, torch::kDouble);
  EXPECT_DOUBLE_EQ(fuse_scale(local, global, stats, cfg, 0).item<double>(), 10.0);
  cfg.local_only = true;
  EXPECT_DOUBLE_EQ(fuse_scale(local, global, stats, cfg, 0).item<double>(), 2.0);
  EXPECT_THROW(fuse_scale(local, global, stats, cfg, 3), ContractError);
}

TEST(Scoring, FuseScaleCentredInputsGiveZero) {
  auto stats = unit_stats();
  stats.local[1] = {0.7, 2.0};
  stats.global[1] = {-1.5, 0.3};
  auto z = fuse_scale(torch::full({2, 3, 3}, 0.7, torch::kDouble), torch::full({2, 3, 3}, -1.5, torch::kDouble), stats,
                      FusionConfig{}, 1);
  EXPECT_EQ(z.abs().max().item<double>(), 0.0);
  auto neg = fuse_scale(torch::zeros({1, 1, 1}, torch::kDouble), torch::full({1, 1, 1}, -1.5, torch::kDouble), stats,
                        FusionConfig{}, 1);
  EXPECT_LT(neg.item<double>(), 0.0);
}

TEST(Scoring, RescaledMapsKeepImageRankingAfterRecalibration) {
  torch::manual_seed(12);
  const int64_t n = 12;
  std::array<torch::Tensor, 3> local, global;
  const std::array<int64_t, 3> sizes{16, 8, 4};
  for (size_t i = 0; i < 3; ++i) {
    local[i] = torch::rand({n, sizes[i], sizes[i]}, torch::kDouble) * (1 + i);
    global[i] = torch::rand({n, sizes[i], sizes[i]}, torch::kDouble) * 2;
  }
  auto scores = [&](double c) {
    CalibrationStats st;
    std::array<torch::Tensor, 3> fused;
    for (int i = 0; i < 3; ++i) {
      PooledMoments ml, mg;
      ml.add(c * local[i]);
      mg.add(c * global[i]);
      st.local[i] = ml.stats("l");
      st.global[i] = mg.stats("g");
      fused[i] = fuse_scale(c * local[i], c * global[i], st, FusionConfig{}, i);
    }
    auto maps = fuse_multiscale(fused, {1, 3, 6}, {16, 16});
    std::vector<double> out;
    for (int64_t b = 0; b < n; ++b) out.push_back(smooth_and_image_score(maps[b], FusionConfig{}).score);
    return out;
  };
  auto rank = [](std::vector<double> v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    return idx;
  };
  EXPECT_EQ(rank(scores(1.0)), rank(scores(37.5)));
}

TEST(Scoring, FuseMultiscaleConstantMaps) {
  std::array<torch::Tensor, 3> maps{torch::full({2, 16, 16}, 1.0, torch::kDouble),
                                    torch::full({2, 8, 8}, 2.0, torch::kDouble),
                                    torch::full({2, 4, 4}, 4.0, torch::kDouble)};
  auto fused = fuse_multiscale(maps, {1.0, 3.0, 6.0}, {64, 64});
  ASSERT_EQ(fused.sizes(), (std::vector<int64_t>{2, 64, 64}));
  EXPECT_NEAR((fused - (1.0 + 6.0 + 24.0) / 3.0).abs().max().item<double>(), 0.0, 1e-12);
}

TEST(Scoring, FuseMultiscaleSingleScaleWeight) {
  torch::manual_seed(3);
  std::array<torch::Tensor, 3> maps{torch::randn({1, 64, 64}, torch::kDouble), torch::randn({1, 32, 32}, torch::kDouble),
                                    torch::randn({1, 16, 16}, torch::kDouble)};
  auto fused = fuse_multiscale(maps, {1.0, 0.0, 0.0}, {64, 64});
  EXPECT_NEAR((fused - maps[0] / 3.0).abs().max().item<double>(), 0.0, 1e-12);
  EXPECT_THROW(fuse_multiscale(maps, {1, 1, 1}, {8, 8}), ConfigError);
}

TEST(Scoring, GaussianImpulsePreservesMass) {
  for (auto [r, c] : {std::pair{16, 16}, std::pair{0, 0}, std::pair{32, 5}}) {
    auto m = torch::zeros({33, 33}, torch::kDouble);
    m[r][c] = 1.0;
    auto s = gaussian_smooth(m, 4.0);
    EXPECT_NEAR(s.sum().item<double>(), 1.0, 1e-9) << r << "," << c;
    EXPECT_TRUE((s >= 0).all().item<bool>());
  }
}

TEST(Scoring, GaussianConstantAndSymmetry) {
  auto m = torch::full({20, 24}, 2.5, torch::kDouble);
  EXPECT_NEAR((gaussian_smooth(m, 4.0) - 2.5).abs().max().item<double>(), 0.0, 1e-12);
  auto imp = torch::zeros({33, 33}, torch::kDouble);
  imp[16][16] = 1.0;
  auto s = gaussian_smooth(imp, 2.0);
  EXPECT_NEAR((s - s.flip({0})).abs().max().item<double>(), 0.0, 1e-15);
  EXPECT_NEAR((s - s.transpose(0, 1)).abs().max().item<double>(), 0.0, 1e-15);
  EXPECT_THROW(gaussian_smooth(m, 0.0), ConfigError);
}

TEST(Scoring, ConstantMapScoresZeroInStdMode) {
  FusionConfig cfg;
  EXPECT_NEAR(smooth_and_image_score(torch::full({64, 64}, 7.0, torch::kDouble), cfg).score, 0.0, 1e-12);
  cfg.image_score_mode = ImageScoreMode::kMax;
  EXPECT_NEAR(smooth_and_image_score(torch::full({64, 64}, 7.0, torch::kDouble), cfg).score, 7.0, 1e-12);
}

TEST(Scoring, MaxModeIsMaximumOfSmoothedMap) {
  torch::manual_seed(4);
  FusionConfig cfg;
  cfg.image_score_mode = ImageScoreMode::kMax;
  auto m = torch::randn({32, 32}, torch::kDouble);
  auto r = smooth_and_image_score(m, cfg);
  EXPECT_DOUBLE_EQ(r.score, r.smoothed.max().item<double>());
  EXPECT_THROW(smooth_and_image_score(m.unsqueeze(0), cfg), ContractError);
  m[0][0] = NAN;
  EXPECT_THROW(smooth_and_image_score(m, cfg), NumericFault);
}

TEST(Scoring, AurocInvariantToMonotoneTransform) {
  torch::manual_seed(5);
  std::vector<double> s;
  std::vector<int> y;
  std::mt19937 rng(7);
  for (int i = 0; i < 200; ++i) {
    y.push_back(i % 3 == 0);
    s.push_back(std::normal_distribution<double>(y.back() ? 1.0 : 0.0, 1.0)(rng));
  }
  std::vector<double> t;
  for (double v : s) t.push_back(std::exp(2.0 * v) + 3.0);
  EXPECT_DOUBLE_EQ(auroc(s, y), auroc(t, y));
}

TEST(Scoring, EndToEndShapesAndFiniteness) {
  torch::manual_seed(6);
  GlcfModel model(ModelConfig{}, 0);
  auto images = torch::randn({3, 3, 64, 64});
  auto stats = calibrate(model, images);
  auto results = score_images(model, stats, FusionConfig{}, images);
  ASSERT_EQ(results.size(), 3u);
  for (const auto& r : results) {
    EXPECT_EQ(r.fused_map.sizes(), (std::vector<int64_t>{64, 64}));
    EXPECT_EQ(r.smoothed_map.sizes(), (std::vector<int64_t>{64, 64}));
    EXPECT_EQ(r.per_scale_local[0].sizes(), (std::vector<int64_t>{16, 16}));
    EXPECT_EQ(r.per_scale_global[2].sizes(), (std::vector<int64_t>{4, 4}));
    EXPECT_TRUE(std::isfinite(r.image_score));
    EXPECT_GE(r.image_score, 0.0);
  }
  auto again = score_images(model, stats, FusionConfig{}, images);
  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(results[i].image_score, again[i].image_score);
}

TEST(Scoring, FusionConfigIsStrict) {
  EXPECT_THROW(nlohmann::json({{"W_l", 1}}).get<FusionConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"image_score_mode", "mean"}}).get<FusionConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"gaussian_sigma", 0}}).get<FusionConfig>(), ConfigError);
  auto c = nlohmann::json({{"image_score_mode", "max"}, {"K", {1, 0, 0}}}).get<FusionConfig>();
  EXPECT_EQ(c.image_score_mode, ImageScoreMode::kMax);
  EXPECT_EQ(c.scale_weights[1], 0.0);
  EXPECT_EQ(c.weight_local, 5.0);
}
