#include "glcf/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

#include "glcf/errors.hpp"
#include "glcf/json_util.hpp"
#include "glcf/log.hpp"
#include "glcf/scoring.hpp"

namespace glcf {

void TrainingConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw ConfigError("training lambdas must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError("training.learning_rate must be positive");
  if (batch_size <= 0) throw ConfigError("training.batch_size must be positive");
  if (epochs < 0) throw ConfigError("training.epochs must be non-negative");
  if (weight_decay < 0) throw ConfigError("training.weight_decay must be non-negative");
  if (checkpoint_interval < 0) throw ConfigError("training.checkpoint_interval must be non-negative");
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{{"lambda1", c.lambda1},
                     {"lambda2", c.lambda2},
                     {"lambda3", c.lambda3},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed},
                     {"checkpoint_interval", c.checkpoint_interval},
                     {"stop_gradient_global", c.stop_gradient_global},
                     {"deterministic", c.deterministic}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  const std::string sec = "training";
  json_util::reject_unknown(j,
                            {"lambda1", "lambda2", "lambda3", "learning_rate", "batch_size", "epochs", "weight_decay",
                             "seed", "checkpoint_interval", "stop_gradient_global", "deterministic"},
                            sec);
  json_util::read(j, "lambda1", c.lambda1, sec);
  json_util::read(j, "lambda2", c.lambda2, sec);
  json_util::read(j, "lambda3", c.lambda3, sec);
  json_util::read(j, "learning_rate", c.learning_rate, sec);
  json_util::read(j, "batch_size", c.batch_size, sec);
  json_util::read(j, "epochs", c.epochs, sec);
  json_util::read(j, "weight_decay", c.weight_decay, sec);
  json_util::read(j, "seed", c.seed, sec);
  json_util::read(j, "checkpoint_interval", c.checkpoint_interval, sec);
  json_util::read(j, "stop_gradient_global", c.stop_gradient_global, sec);
  json_util::read(j, "deterministic", c.deterministic, sec);
  c.validate();
}

namespace {

torch::Tensor pyramid_loss(const FeaturePyramid& a, const FeaturePyramid& b, const char* what) {
  require_same_shape(a, b, what);
  const auto batch = static_cast<double>(a[0].size(0));
  torch::Tensor sum;
  for (size_t i = 0; i < 3; ++i) {
    auto term = (a[i] - b[i]).pow(2).sum();
    sum = sum.defined() ? sum + term : term;
  }
  return sum / batch;
}

}  // namespace

torch::Tensor loss_correspondence(const FeaturePyramid& local, const FeaturePyramid& global) {
  return pyramid_loss(local, global, "loss_correspondence");
}

torch::Tensor loss_estimation(const FeaturePyramid& target, const FeaturePyramid& estimate) {
  return pyramid_loss(target, estimate, "loss_estimation");
}

torch::Tensor total_loss(const torch::Tensor& lc, const torch::Tensor& lel, const torch::Tensor& leg,
                         const TrainingConfig& cfg) {
  for (const auto* t : {&lc, &lel, &leg}) {
    if (!torch::isfinite(*t).all().item<bool>()) throw NumericFault("non-finite loss term");
  }
  return cfg.lambda1 * lc + cfg.lambda2 * lel + cfg.lambda3 * leg;
}

double total_loss(double lc, double lel, double leg, const TrainingConfig& cfg) {
  if (!std::isfinite(lc) || !std::isfinite(lel) || !std::isfinite(leg)) throw NumericFault("non-finite loss term");
  return cfg.lambda1 * lc + cfg.lambda2 * lel + cfg.lambda3 * leg;
}

LossTerms compute_losses(GlcfModel& model, const FeaturePyramid& local, const TrainingConfig& cfg) {
  auto out = model->forward_features(local);
  LossTerms terms;
  terms.correspondence = loss_correspondence(out.local, out.global);
  terms.local_estimation = loss_estimation(out.local, out.local_est);
  terms.global_estimation =
      loss_estimation(cfg.stop_gradient_global ? out.global.detach() : out.global, out.global_est);
  terms.total = total_loss(terms.correspondence, terms.local_estimation, terms.global_estimation, cfg);
  return terms;
}

void write_loss_history_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  f << "epoch,loss_c,loss_el,loss_eg,total\n";
  f << std::setprecision(10);
  for (const auto& r : history) {
    f << r.epoch << ',' << r.loss_c << ',' << r.loss_el << ',' << r.loss_eg << ',' << r.total << '\n';
  }
}

TrainResult train_glcf(const ModelConfig& model_cfg, const TrainingConfig& cfg, const torch::Tensor& train_images,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  if (!train_images.defined() || train_images.size(0) == 0) throw ContractError("training set is empty");
  if (cfg.deterministic) torch::set_num_threads(1);

  TrainResult result;
  result.model = GlcfModel(model_cfg, cfg.seed);
  auto& model = result.model;
  model->to(train_images.scalar_type());
  model->backbone->freeze();

  const int64_t n = train_images.size(0);
  std::vector<FeaturePyramid> chunks;
  for (int64_t s = 0; s < n; s += 64) {
    chunks.push_back(extract_features(train_images.slice(0, s, std::min(n, s + 64)), model->backbone));
  }
  const auto features = FeaturePyramid::cat(chunks);

  torch::optim::AdamW optimizer(model->trainable_parameters(),
                                torch::optim::AdamWOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  model->train();
  model->backbone->eval();
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossRecord rec;
    rec.epoch = epoch;
    for (int64_t s = 0; s < n; s += cfg.batch_size) {
      const auto e = std::min(n, s + cfg.batch_size);
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + s, order.begin() + e), torch::kLong);
      FeaturePyramid batch;
      for (size_t i = 0; i < 3; ++i) batch[i] = features[i].index_select(0, idx);

      optimizer.zero_grad();
      LossTerms terms;
      try {
        terms = compute_losses(model, batch, cfg);
      } catch (const NumericFault&) {
        throw NumericFault("loss diverged (non-finite) at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(s));
      }
      terms.total.backward();
      optimizer.step();

      const double w = static_cast<double>(e - s) / static_cast<double>(n);
      rec.loss_c += w * terms.correspondence.item<double>();
      rec.loss_el += w * terms.local_estimation.item<double>();
      rec.loss_eg += w * terms.global_estimation.item<double>();
      rec.total += w * terms.total.item<double>();
    }
    result.history.push_back(rec);
    char line[160];
    std::snprintf(line, sizeof(line), "epoch %lld/%lld loss_c=%.4f loss_el=%.4f loss_eg=%.4f total=%.4f",
                  static_cast<long long>(epoch), static_cast<long long>(cfg.epochs), rec.loss_c, rec.loss_el,
                  rec.loss_eg, rec.total);
    log::info(line);
    if (on_epoch) on_epoch(epoch, model, result.history);
  }
  model->eval();
  return result;
}

void PooledMoments::add(const torch::Tensor& values) {
  auto v = values.detach().to(torch::kDouble).flatten();
  const auto nb = v.numel();
  if (nb == 0) return;
  const double mean_b = v.mean().item<double>();
  const double m2_b = (v - mean_b).pow(2).sum().item<double>();
  const double na = static_cast<double>(n_);
  const double nbd = static_cast<double>(nb);
  const double delta = mean_b - mean_;
  const double total = na + nbd;
  mean_ += delta * nbd / total;
  m2_ += m2_b + delta * delta * na * nbd / total;
  n_ += nb;
}

ScaleStats PooledMoments::stats(const char* label) const {
  ScaleStats s;
  s.mu = mean_;
  s.sigma = n_ > 0 ? std::sqrt(m2_ / static_cast<double>(n_)) : 0.0;
  if (!(s.sigma >= kSigmaFloor)) {
    char line[160];
    std::snprintf(line, sizeof(line), "calibration: sigma for %s is %.3g, clamped to %.0e", label, s.sigma, kSigmaFloor);
    log::warn(line);
    s.sigma = kSigmaFloor;
  }
  return s;
}

CalibrationStats calibrate(GlcfModel& model, const torch::Tensor& train_images, int64_t batch_size) {
  if (!train_images.defined() || train_images.size(0) == 0) throw ContractError("calibration set is empty");
  std::array<PooledMoments, 3> local, global, corr;
  torch::NoGradGuard no_grad;
  model->eval();
  const auto n = train_images.size(0);
  for (int64_t s = 0; s < n; s += batch_size) {
    auto out = model->forward(train_images.slice(0, s, std::min(n, s + batch_size)));
    auto maps = branch_anomaly_maps(out);
    auto cmaps = correspondence_maps(out);
    for (size_t i = 0; i < 3; ++i) {
      local[i].add(maps.local[i]);
      global[i].add(maps.global[i]);
      corr[i].add(cmaps[i]);
    }
  }
  CalibrationStats stats;
  stats.samples = n;
  std::array<ScaleStats, 3> c;
  const char* names_l[] = {"local/1", "local/2", "local/3"};
  const char* names_g[] = {"global/1", "global/2", "global/3"};
  const char* names_c[] = {"correspondence/1", "correspondence/2", "correspondence/3"};
  for (size_t i = 0; i < 3; ++i) {
    stats.local[i] = local[i].stats(names_l[i]);
    stats.global[i] = global[i].stats(names_g[i]);
    c[i] = corr[i].stats(names_c[i]);
  }
  stats.correspondence = c;
  return stats;
}

}  // namespace glcf
