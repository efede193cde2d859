#include <gtest/gtest.h>

#include "glcf/errors.hpp"
#include "glcf/scoring.hpp"
#include "glcf/training.hpp"
#include "test_support.hpp"

using namespace glcf;

namespace {

// Independent summation: sum_levels sum_b,h,w sum_c (a - b)^2 / B.
double loss_oracle(const FeaturePyramid& a, const FeaturePyramid& b) {
  double total = 0.0;
  const auto batch = a[0].size(0);
  for (size_t l = 0; l < 3; ++l) {
    if (!a[l].defined()) continue;
    auto x = a[l].to(torch::kDouble).contiguous();
    auto y = b[l].to(torch::kDouble).contiguous();
    auto xa = x.accessor<double, 4>();
    auto ya = y.accessor<double, 4>();
    for (int64_t n = 0; n < x.size(0); ++n)
      for (int64_t h = 0; h < x.size(2); ++h)
        for (int64_t w = 0; w < x.size(3); ++w)
          for (int64_t c = 0; c < x.size(1); ++c) total += (xa[n][c][h][w] - ya[n][c][h][w]) * (xa[n][c][h][w] - ya[n][c][h][w]);
  }
  return total / static_cast<double>(batch);
}

FeaturePyramid single(double v) {
  FeaturePyramid p;
  for (size_t i = 0; i < 3; ++i) p[i] = torch::zeros({1, 1, 1, 1}, torch::kDouble);
  p[0].fill_(v);
  return p;
}

torch::Tensor train_images(int64_t n, int64_t res = 64, uint64_t seed = 0) {
  torch::manual_seed(seed);
  return torch::randn({n, 3, res, res});
}

}  // namespace

TEST(Losses, IdentityIsZero) {
  auto p = glcf::testing::random_pyramid(2, {3, 4, 5}, {4, 2, 1});
  EXPECT_EQ(loss_correspondence(p, p).item<double>(), 0.0);
  EXPECT_EQ(loss_estimation(p, p).item<double>(), 0.0);
}

TEST(Losses, SingleTermSubstitution) {
  EXPECT_DOUBLE_EQ(loss_correspondence(single(2), single(5)).item<double>(), 9.0);
  EXPECT_DOUBLE_EQ(loss_estimation(single(2), single(5)).item<double>(), 9.0);
}

TEST(Losses, MatchNestedLoopOracle) {
  torch::manual_seed(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = glcf::testing::random_pyramid(2, {3, 2, 4}, {2, 2, 1});
    auto b = glcf::testing::random_pyramid(2, {3, 2, 4}, {2, 2, 1});
    const double want = loss_oracle(a, b);
    EXPECT_LT(glcf::testing::rel_err(loss_correspondence(a, b).item<double>(), want), 1e-6);
    EXPECT_LT(glcf::testing::rel_err(loss_estimation(a, b).item<double>(), want), 1e-6);
  }
}

TEST(Losses, ShapeMismatchIsContractError) {
  auto a = glcf::testing::random_pyramid(1, {3, 2, 4}, {2, 2, 1});
  auto b = glcf::testing::random_pyramid(1, {3, 2, 5}, {2, 2, 1});
  EXPECT_THROW(loss_correspondence(a, b), ContractError);
}

TEST(Losses, TotalLossSubstitution) {
  TrainingConfig cfg;
  EXPECT_DOUBLE_EQ(total_loss(0.5, 0.25, 0.25, cfg), 1.0);
  EXPECT_DOUBLE_EQ(total_loss(0.0, 0.0, 0.0, cfg), 0.0);
  EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 3.0, cfg), 6.0);
  cfg.lambda1 = 2;
  cfg.lambda3 = 0.5;
  EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 3.0, cfg), 5.5);
  EXPECT_THROW(total_loss(std::nan(""), 0.0, 0.0, cfg), NumericFault);
  auto t = total_loss(torch::tensor(0.5), torch::tensor(0.25), torch::tensor(0.25), TrainingConfig{});
  EXPECT_DOUBLE_EQ(t.item<double>(), 1.0);
  EXPECT_THROW(total_loss(torch::tensor(NAN), torch::tensor(0.0), torch::tensor(0.0), cfg), NumericFault);
}

TEST(Losses, GlobalEstimationGradientReachesBothNetworks) {
  torch::manual_seed(2);
  GlcfModel model(ModelConfig{}, 2);
  auto local = model->local_features(train_images(2));
  auto out = model->forward_features(local);
  auto leg = loss_estimation(out.global, out.global_est);
  leg.backward();
  auto grad_norm = [](torch::nn::Module& m) {
    double s = 0;
    for (const auto& p : m.parameters()) {
      if (p.grad().defined()) s += p.grad().abs().sum().item<double>();
    }
    return s;
  };
  EXPECT_GT(grad_norm(*model->phi_g), 0.0);
  EXPECT_GT(grad_norm(*model->psi_g), 0.0);
}

TEST(Losses, StopGradientAblationDetachesPhiG) {
  torch::manual_seed(2);
  GlcfModel model(ModelConfig{}, 2);
  TrainingConfig cfg;
  cfg.stop_gradient_global = true;
  cfg.lambda1 = 0;
  cfg.lambda2 = 0;
  auto terms = compute_losses(model, model->local_features(train_images(2)), cfg);
  terms.total.backward();
  for (const auto& p : model->phi_g->parameters()) {
    EXPECT_TRUE(!p.grad().defined() || p.grad().abs().sum().item<double>() == 0.0);
  }
}

TEST(Losses, FiniteDifferenceGradient) {
  // 64-bit, 16 x 16 input, a 10-entry parameter slice.
  torch::manual_seed(4);
  ModelConfig mc;
  mc.resolution = 16;
  GlcfModel model(mc, 4);
  model->to(torch::kDouble);
  auto images = torch::randn({2, 3, 16, 16}, torch::kDouble);
  auto local = model->local_features(images);
  TrainingConfig cfg;

  auto params = model->trainable_parameters();
  auto& w = params[params.size() / 2];
  auto flat = w.view({-1});
  model->zero_grad();
  compute_losses(model, local, cfg).total.backward();
  auto grad = w.grad().view({-1}).clone();

  const double eps = 1e-6;
  const int64_t start = std::min<int64_t>(3, flat.numel() - 10);
  for (int64_t k = start; k < start + 10; ++k) {
    double plus, minus;
    {
      torch::NoGradGuard g;
      const double orig = flat[k].item<double>();
      flat[k] = orig + eps;
      plus = compute_losses(model, local, cfg).total.item<double>();
      flat[k] = orig - eps;
      minus = compute_losses(model, local, cfg).total.item<double>();
      flat[k] = orig;
    }
    const double numeric = (plus - minus) / (2 * eps);
    const double analytic = grad[k].item<double>();
    EXPECT_LT(std::abs(numeric - analytic), 1e-3 * std::max({std::abs(numeric), std::abs(analytic), 1e-6}))
        << "entry " << k << " analytic " << analytic << " numeric " << numeric;
  }
}

TEST(Training, OneEpochHistoryIsFinite) {
  auto one = train_images(1);
  auto images = one.expand({8, 3, 64, 64}).contiguous();
  TrainingConfig cfg;
  cfg.epochs = 1;
  auto r = train_glcf(ModelConfig{}, cfg, images);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.history[0].total));
  EXPECT_NEAR(r.history[0].total, r.history[0].loss_c + r.history[0].loss_el + r.history[0].loss_eg, 1e-6 * r.history[0].total);
}

TEST(Training, DeterministicRunsGiveIdenticalCheckpoints) {
  auto images = train_images(12);
  TrainingConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 9;
  auto a = train_glcf(ModelConfig{}, cfg, images);
  auto b = train_glcf(ModelConfig{}, cfg, images);
  auto sa = a.model->trainable_state();
  auto sb = b.model->trainable_state();
  ASSERT_EQ(sa.size(), sb.size());
  for (const auto& [name, t] : sa) EXPECT_TRUE(torch::equal(t, sb.at(name))) << name;
  for (size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].total, b.history[i].total);
}

TEST(Training, BackboneUntouched) {
  auto images = train_images(8);
  TrainingConfig cfg;
  cfg.epochs = 1;
  const auto before = parameter_digest(*make_backbone(BackboneConfig{}));
  auto r = train_glcf(ModelConfig{}, cfg, images);
  EXPECT_EQ(parameter_digest(*r.model->backbone), before);
}

TEST(Training, EmptySetIsContractError) {
  EXPECT_THROW(train_glcf(ModelConfig{}, TrainingConfig{}, torch::empty({0, 3, 64, 64})), ContractError);
  GlcfModel model(ModelConfig{});
  EXPECT_THROW(calibrate(model, torch::empty({0, 3, 64, 64})), ContractError);
}

TEST(Training, DivergenceAbortsWithDiagnostic) {
  TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e30;
  try {
    train_glcf(ModelConfig{}, cfg, train_images(16));
    FAIL() << "expected divergence";
  } catch (const NumericFault& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Training, LossHistoryCsvHeader) {
  const auto dir = glcf::testing::scratch_dir("history_csv");
  write_loss_history_csv(dir / "h.csv", {{1, 1, 2, 3, 6}});
  const auto text = glcf::testing::read_bytes(dir / "h.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,loss_c,loss_el,loss_eg,total");
  EXPECT_NE(text.find("1,1,2,3,6"), std::string::npos);
}

TEST(Training, ConfigIsStrict) {
  EXPECT_THROW(nlohmann::json({{"lamda1", 1}}).get<TrainingConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"learning_rate", 0}}).get<TrainingConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"lambda2", -1}}).get<TrainingConfig>(), ConfigError);
}

TEST(Calibration, TwoPixelMaps) {
  PooledMoments m;
  m.add(torch::tensor({0.0}));
  m.add(torch::tensor({2.0}));
  auto s = m.stats("x");
  EXPECT_DOUBLE_EQ(s.mu, 1.0);
  EXPECT_DOUBLE_EQ(s.sigma, 1.0);
}

TEST(Calibration, ConstantMapsClampSigma) {
  PooledMoments m;
  m.add(torch::full({4, 4}, 3.0));
  m.add(torch::full({2, 4}, 3.0));
  auto s = m.stats("x");
  EXPECT_DOUBLE_EQ(s.mu, 3.0);
  EXPECT_EQ(s.sigma, kSigmaFloor);
}

TEST(Calibration, ChunkedMergeMatchesDirect) {
  torch::manual_seed(5);
  auto v = torch::randn({1000}, torch::kDouble) * 3 + 7;
  PooledMoments m;
  for (int i = 0; i < 10; ++i) m.add(v.slice(0, i * 100, (i + 1) * 100));
  auto s = m.stats("x");
  EXPECT_NEAR(s.mu, v.mean().item<double>(), 1e-12);
  EXPECT_NEAR(s.sigma, v.std(false).item<double>(), 1e-12);
}

TEST(Calibration, NormalizedTrainingMapsAreStandard) {
  auto images = train_images(6);
  GlcfModel model(ModelConfig{}, 1);
  auto stats = calibrate(model, images, 4);
  auto maps = branch_anomaly_maps(model, images);
  for (size_t i = 0; i < 3; ++i) {
    for (auto [m, st] : {std::pair{maps.local[i], stats.local[i]}, std::pair{maps.global[i], stats.global[i]}}) {
      auto z = normalize_map(m.to(torch::kDouble), st);
      EXPECT_LT(std::abs(z.mean().item<double>()), 1e-6);
      EXPECT_LT(std::abs(z.std(false).item<double>() - 1.0), 1e-6);
    }
  }
}

TEST(Calibration, JsonRoundtrip) {
  const auto dir = glcf::testing::scratch_dir("calib_json");
  CalibrationStats s;
  s.local[1] = {1.5, 0.25};
  s.global[2] = {-3.0, 2.0};
  s.samples = 7;
  save_calibration(dir / "c.json", s);
  auto back = load_calibration(dir / "c.json");
  EXPECT_EQ(back.local[1].mu, 1.5);
  EXPECT_EQ(back.global[2].sigma, 2.0);
  EXPECT_EQ(back.samples, 7);
  EXPECT_FALSE(back.correspondence.has_value());
  EXPECT_THROW(load_calibration(dir / "missing.json"), MissingInputError);
}
