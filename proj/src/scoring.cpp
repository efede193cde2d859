#include "glcf/scoring.hpp"

#include <cmath>
#include <fstream>

#include "glcf/errors.hpp"
#include "glcf/json_util.hpp"

namespace glcf {

namespace F = torch::nn::functional;

// ---------------------------------------------------------------------------
// Calibration statistics I/O

namespace {

nlohmann::json scales_to_json(const std::array<ScaleStats, 3>& s) {
  auto arr = nlohmann::json::array();
  for (const auto& x : s) arr.push_back({{"mu", x.mu}, {"sigma", x.sigma}});
  return arr;
}

std::array<ScaleStats, 3> scales_from_json(const nlohmann::json& j, const std::string& name) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("calibration '" + name + "' must list 3 scales");
  std::array<ScaleStats, 3> out;
  for (size_t i = 0; i < 3; ++i) {
    out[i].mu = j[i].at("mu").get<double>();
    out[i].sigma = j[i].at("sigma").get<double>();
    if (!(out[i].sigma > 0.0)) throw ConfigError("calibration '" + name + "' has non-positive sigma");
  }
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const CalibrationStats& s) {
  j = nlohmann::json{{"local", scales_to_json(s.local)}, {"global", scales_to_json(s.global)}, {"samples", s.samples}};
  if (s.correspondence) j["correspondence"] = scales_to_json(*s.correspondence);
}

void from_json(const nlohmann::json& j, CalibrationStats& s) {
  try {
    s.local = scales_from_json(j.at("local"), "local");
    s.global = scales_from_json(j.at("global"), "global");
    if (j.contains("correspondence")) s.correspondence = scales_from_json(j.at("correspondence"), "correspondence");
    s.samples = j.value("samples", int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed calibration statistics: ") + e.what());
  }
}

void save_calibration(const std::filesystem::path& path, const CalibrationStats& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  f << nlohmann::json(s).dump(2) << "\n";
}

CalibrationStats load_calibration(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingInputError("calibration statistics not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return j.get<CalibrationStats>();
}

// ---------------------------------------------------------------------------
// Fusion config

void FusionConfig::validate() const {
  if (weight_local < 0 || weight_global < 0) throw ConfigError("fusion weights must be non-negative");
  if (!(gaussian_sigma > 0)) throw ConfigError("fusion.gaussian_sigma must be positive");
}

void to_json(nlohmann::json& j, const FusionConfig& c) {
  j = nlohmann::json{{"W_L", c.weight_local},
                     {"W_G", c.weight_global},
                     {"K", c.scale_weights},
                     {"gaussian_sigma", c.gaussian_sigma},
                     {"image_score_mode", c.image_score_mode == ImageScoreMode::kMax ? "max" : "std"},
                     {"local_only", c.local_only}};
}

void from_json(const nlohmann::json& j, FusionConfig& c) {
  const std::string sec = "fusion";
  json_util::reject_unknown(j, {"W_L", "W_G", "K", "gaussian_sigma", "image_score_mode", "local_only"}, sec);
  json_util::read(j, "W_L", c.weight_local, sec);
  json_util::read(j, "W_G", c.weight_global, sec);
  json_util::read(j, "K", c.scale_weights, sec);
  json_util::read(j, "gaussian_sigma", c.gaussian_sigma, sec);
  std::string mode = c.image_score_mode == ImageScoreMode::kMax ? "max" : "std";
  json_util::read(j, "image_score_mode", mode, sec);
  if (mode == "std") {
    c.image_score_mode = ImageScoreMode::kStd;
  } else if (mode == "max") {
    c.image_score_mode = ImageScoreMode::kMax;
  } else {
    throw ConfigError("fusion.image_score_mode must be 'std' or 'max'");
  }
  json_util::read(j, "local_only", c.local_only, sec);
  c.validate();
}

// ---------------------------------------------------------------------------
// Maps

torch::Tensor squared_error_map(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ContractError("squared_error_map: shape mismatch");
  return (a - b).pow(2).sum(1);
}

BranchMaps branch_anomaly_maps(const GlcfOutputs& out) {
  BranchMaps maps;
  for (size_t i = 0; i < 3; ++i) {
    maps.local[i] = squared_error_map(out.local[i], out.local_est[i]);
    maps.global[i] = squared_error_map(out.global[i], out.global_est[i]);
  }
  return maps;
}

BranchMaps branch_anomaly_maps(GlcfModel& model, const torch::Tensor& images) {
  if (model.is_empty() || model->phi_g.is_empty() || model->psi_l.is_empty() || model->psi_g.is_empty()) {
    throw ContractError("branch_anomaly_maps needs a model with all three heads");
  }
  torch::NoGradGuard no_grad;
  return branch_anomaly_maps(model->forward(images));
}

std::array<torch::Tensor, 3> correspondence_maps(const GlcfOutputs& out) {
  std::array<torch::Tensor, 3> maps;
  for (size_t i = 0; i < 3; ++i) maps[i] = squared_error_map(out.local[i], out.global[i]);
  return maps;
}

torch::Tensor normalize_map(const torch::Tensor& map, const ScaleStats& stats) {
  return (map - stats.mu) / stats.sigma;
}

torch::Tensor fuse_scale(const torch::Tensor& local, const torch::Tensor& global, const CalibrationStats& stats,
                         const FusionConfig& cfg, int scale) {
  if (scale < 0 || scale > 2) throw ContractError("fuse_scale: scale index out of range");
  if (cfg.local_only) return normalize_map(local, stats.local[scale]);
  if (local.sizes() != global.sizes()) throw ContractError("fuse_scale: local/global map shape mismatch");
  return cfg.weight_local * normalize_map(local, stats.local[scale]) +
         cfg.weight_global * normalize_map(global, stats.global[scale]);
}

torch::Tensor fuse_multiscale(const std::array<torch::Tensor, 3>& maps, const std::array<double, 3>& weights,
                              std::array<int64_t, 2> out_size) {
  torch::Tensor acc;
  for (size_t i = 0; i < 3; ++i) {
    const auto& m = maps[i];
    if (m.dim() != 3) throw ContractError("fuse_multiscale expects B x h x w maps");
    if (m.size(1) > out_size[0] || m.size(2) > out_size[1]) {
      throw ConfigError("fuse_multiscale: output size smaller than scale " + std::to_string(i + 1) + " map");
    }
    torch::Tensor up = m;
    if (m.size(1) != out_size[0] || m.size(2) != out_size[1]) {
      up = F::interpolate(m.unsqueeze(1), F::InterpolateFuncOptions()
                                              .size(std::vector<int64_t>{out_size[0], out_size[1]})
                                              .mode(torch::kBilinear)
                                              .align_corners(false))
               .squeeze(1);
    }
    auto term = weights[i] * up;
    acc = acc.defined() ? acc + term : term;
  }
  return acc / 3.0;
}

namespace {

// Symmetric reflection (d c b a | a b c d | d c b a), valid for any offset.
torch::Tensor reflect_indices(int64_t n, int64_t radius) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(n + 2 * radius));
  const int64_t period = 2 * n;
  for (int64_t j = -radius; j < n + radius; ++j) {
    int64_t m = ((j % period) + period) % period;
    idx.push_back(m < n ? m : period - 1 - m);
  }
  return torch::tensor(idx, torch::kLong);
}

torch::Tensor smooth_last_dim(const torch::Tensor& x, const torch::Tensor& kernel, int64_t radius) {
  const auto n = x.size(-1);
  auto padded = x.index_select(-1, reflect_indices(n, radius));
  auto flat = padded.reshape({-1, 1, n + 2 * radius});
  auto out = F::conv1d(flat, kernel.view({1, 1, -1}));
  auto sizes = x.sizes().vec();
  return out.reshape(sizes);
}

}  // namespace

torch::Tensor gaussian_smooth(const torch::Tensor& map, double sigma) {
  if (!(sigma > 0)) throw ConfigError("gaussian sigma must be positive");
  const bool batched = map.dim() == 3;
  if (!batched && map.dim() != 2) throw ContractError("gaussian_smooth expects H x W or B x H x W");
  auto x = batched ? map : map.unsqueeze(0);
  const auto radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> k;
  double total = 0;
  for (int64_t j = -radius; j <= radius; ++j) {
    k.push_back(std::exp(-static_cast<double>(j * j) / (2.0 * sigma * sigma)));
    total += k.back();
  }
  for (auto& v : k) v /= total;
  auto kernel = torch::tensor(k, torch::kDouble).to(x.dtype());
  x = smooth_last_dim(x, kernel, radius);
  x = smooth_last_dim(x.transpose(1, 2).contiguous(), kernel, radius).transpose(1, 2).contiguous();
  return batched ? x : x.squeeze(0);
}

SmoothedScore smooth_and_image_score(const torch::Tensor& map, const FusionConfig& cfg) {
  if (map.dim() != 2) throw ContractError("smooth_and_image_score expects an H x W map");
  if (!torch::isfinite(map).all().item<bool>()) throw NumericFault("anomaly map contains non-finite values");
  SmoothedScore out;
  out.smoothed = gaussian_smooth(map, cfg.gaussian_sigma);
  if (cfg.image_score_mode == ImageScoreMode::kStd) {
    out.score = out.smoothed.to(torch::kDouble).std(/*unbiased=*/false).item<double>();
  } else {
    out.score = out.smoothed.max().item<double>();
  }
  return out;
}

std::vector<AnomalyResult> score_images(GlcfModel& model, const CalibrationStats& stats, const FusionConfig& cfg,
                                        const torch::Tensor& images) {
  auto maps = branch_anomaly_maps(model, images);
  std::array<torch::Tensor, 3> fused_scales;
  for (int i = 0; i < 3; ++i) {
    maps.local[i] = maps.local[i].to(torch::kDouble);
    maps.global[i] = maps.global[i].to(torch::kDouble);
    fused_scales[i] = fuse_scale(maps.local[i], maps.global[i], stats, cfg, i);
  }
  auto fused = fuse_multiscale(fused_scales, cfg.scale_weights, {images.size(2), images.size(3)});
  std::vector<AnomalyResult> results(static_cast<size_t>(images.size(0)));
  for (int64_t b = 0; b < images.size(0); ++b) {
    auto& r = results[static_cast<size_t>(b)];
    for (size_t i = 0; i < 3; ++i) {
      r.per_scale_local[i] = maps.local[i][b];
      r.per_scale_global[i] = maps.global[i][b];
    }
    r.fused_map = fused[b];
    auto s = smooth_and_image_score(r.fused_map, cfg);
    r.smoothed_map = s.smoothed;
    r.image_score = s.score;
  }
  return results;
}

}  // namespace glcf
