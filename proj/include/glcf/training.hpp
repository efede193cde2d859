#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <vector>

#include <json.hpp>

#include "glcf/calibration.hpp"
#include "glcf/model.hpp"

namespace glcf {

struct TrainingConfig {
  double lambda1 = 1.0;  // correspondence
  double lambda2 = 1.0;  // local estimation
  double lambda3 = 1.0;  // global estimation
  double learning_rate = 1e-4;
  int64_t batch_size = 8;
  int64_t epochs = 50;
  double weight_decay = 1e-2;
  uint64_t seed = 0;
  int64_t checkpoint_interval = 0;    // epochs between intermediate checkpoints; 0 = end only
  bool stop_gradient_global = false;  // ablation: detach Phi_G output inside the global estimation loss
  bool deterministic = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

// Sum over levels and pixels of the channel-wise squared L2 distance, averaged
// over the batch. Shape mismatch -> ContractError.
torch::Tensor loss_correspondence(const FeaturePyramid& local, const FeaturePyramid& global);
torch::Tensor loss_estimation(const FeaturePyramid& target, const FeaturePyramid& estimate);

// lambda1 * lc + lambda2 * lel + lambda3 * leg; non-finite input -> NumericFault.
torch::Tensor total_loss(const torch::Tensor& lc, const torch::Tensor& lel, const torch::Tensor& leg,
                         const TrainingConfig& cfg);
double total_loss(double lc, double lel, double leg, const TrainingConfig& cfg);

struct LossTerms {
  torch::Tensor correspondence, local_estimation, global_estimation, total;
};

// All three terms for one batch of precomputed local features.
LossTerms compute_losses(GlcfModel& model, const FeaturePyramid& local, const TrainingConfig& cfg);

struct LossRecord {
  int64_t epoch = 0;
  double loss_c = 0, loss_el = 0, loss_eg = 0, total = 0;
};

void write_loss_history_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history);

struct TrainResult {
  GlcfModel model{nullptr};
  std::vector<LossRecord> history;
};

// Called after every epoch (1-based) with the model and the history so far.
using EpochCallback = std::function<void(int64_t epoch, GlcfModel& model, const std::vector<LossRecord>& history)>;

// Trains bottleneck + heads with AdamW on anomaly-free images (N x 3 x H x W,
// already preprocessed). The backbone is frozen, so its features are computed
// once up front. Empty set -> ContractError; NaN loss -> NumericFault.
TrainResult train_glcf(const ModelConfig& model_cfg, const TrainingConfig& cfg, const torch::Tensor& train_images,
                       const EpochCallback& on_epoch = {});

// Mean and population standard deviation of every per-scale branch map pooled
// over all pixels of all given anomaly-free images. Sigma below kSigmaFloor is
// clamped with a warning.
CalibrationStats calibrate(GlcfModel& model, const torch::Tensor& train_images, int64_t batch_size = 32);

// Streaming pooled mean / population std in double precision.
class PooledMoments {
 public:
  void add(const torch::Tensor& values);
  ScaleStats stats(const char* label) const;
  int64_t count() const { return n_; }

 private:
  int64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace glcf
