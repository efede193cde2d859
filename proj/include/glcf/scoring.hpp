#pragma once

#include <torch/torch.h>

#include <array>
#include <vector>

#include <json.hpp>

#include "glcf/calibration.hpp"
#include "glcf/model.hpp"

namespace glcf {

enum class ImageScoreMode { kStd, kMax };

struct FusionConfig {
  double weight_local = 5.0;
  double weight_global = 1.0;
  std::array<double, 3> scale_weights{1.0, 3.0, 6.0};
  double gaussian_sigma = 4.0;
  ImageScoreMode image_score_mode = ImageScoreMode::kStd;
  bool local_only = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const FusionConfig& c);
void from_json(const nlohmann::json& j, FusionConfig& c);

// Per-pixel squared L2 distance over channels: (B x C x H x W)^2 -> B x H x W.
torch::Tensor squared_error_map(const torch::Tensor& a, const torch::Tensor& b);

struct BranchMaps {
  std::array<torch::Tensor, 3> local;   // A_L^(i), B x H_i x W_i
  std::array<torch::Tensor, 3> global;  // A_G^(i)
};

BranchMaps branch_anomaly_maps(const GlcfOutputs& out);
BranchMaps branch_anomaly_maps(GlcfModel& model, const torch::Tensor& images);

// |Phi_L - Phi_G|^2 per scale: the scoring rule estimation replaces.
std::array<torch::Tensor, 3> correspondence_maps(const GlcfOutputs& out);

torch::Tensor normalize_map(const torch::Tensor& map, const ScaleStats& stats);

// A^(i) = W_L (A_L - mu_L)/sigma_L + W_G (A_G - mu_G)/sigma_G, or the local term
// alone (unweighted) in local-only mode. `scale` is 0-based.
torch::Tensor fuse_scale(const torch::Tensor& local, const torch::Tensor& global, const CalibrationStats& stats,
                         const FusionConfig& cfg, int scale);

// (sum_i K_i * bilinear(A^(i))) / 3. Maps are B x h x w; the result is
// B x out_h x out_w. Output smaller than any input map -> ConfigError.
torch::Tensor fuse_multiscale(const std::array<torch::Tensor, 3>& maps, const std::array<double, 3>& weights,
                              std::array<int64_t, 2> out_size);

// Separable Gaussian filter with symmetric ("reflect") padding and radius ceil(3 sigma).
// Accepts H x W or B x H x W.
torch::Tensor gaussian_smooth(const torch::Tensor& map, double sigma);

struct SmoothedScore {
  torch::Tensor smoothed;
  double score = 0.0;
};

// Smooths a single H x W map, then reduces it to the image-level score.
SmoothedScore smooth_and_image_score(const torch::Tensor& map, const FusionConfig& cfg);

struct AnomalyResult {
  std::array<torch::Tensor, 3> per_scale_local;
  std::array<torch::Tensor, 3> per_scale_global;
  torch::Tensor fused_map;     // H x W at input resolution
  torch::Tensor smoothed_map;
  double image_score = 0.0;
};

// End-to-end scoring for a preprocessed batch (B x 3 x H x W).
std::vector<AnomalyResult> score_images(GlcfModel& model, const CalibrationStats& stats, const FusionConfig& cfg,
                                        const torch::Tensor& images);

}  // namespace glcf
