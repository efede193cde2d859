#pragma once

#include <array>
#include <filesystem>
#include <optional>

#include <json.hpp>

namespace glcf {

inline constexpr double kSigmaFloor = 1e-8;

struct ScaleStats {
  double mu = 0.0;
  double sigma = 1.0;
};

// Per-branch, per-scale normalisation constants measured on anomaly-free data.
// `correspondence` holds the same statistics for the raw |Phi_L - Phi_G|^2 maps,
// used only by the correspondence-scoring comparison.
struct CalibrationStats {
  std::array<ScaleStats, 3> local;
  std::array<ScaleStats, 3> global;
  std::optional<std::array<ScaleStats, 3>> correspondence;
  int64_t samples = 0;
};

void to_json(nlohmann::json& j, const CalibrationStats& s);
void from_json(const nlohmann::json& j, CalibrationStats& s);

void save_calibration(const std::filesystem::path& path, const CalibrationStats& s);
CalibrationStats load_calibration(const std::filesystem::path& path);

}  // namespace glcf
