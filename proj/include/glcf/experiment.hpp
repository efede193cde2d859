#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "glcf/calibration.hpp"
#include "glcf/config.hpp"
#include "glcf/data.hpp"
#include "glcf/model.hpp"

namespace glcf {

struct TestSet {
  torch::Tensor images;  // N x 3 x R x R
  torch::Tensor masks;   // N x R x R in {0, 1}
  std::vector<SampleKind> kinds;
  std::vector<std::string> paths;
};

TestSet load_test_set(const FolderDataset& ds, int64_t resolution, const NormConstants& norm);

// Image scores of every single-checkpoint scoring variant, plus the smoothed
// fused maps used for the pixel-level metrics. Variant names:
//   fused                 calibrated local+global fusion (the default scorer)
//   local, global         one branch, normalised, fused over scales
//   correspondence        |Phi_L - Phi_G|^2 instead of the estimation errors
//   scale1..scale3        the fused map of a single scale
struct VariantScores {
  std::map<std::string, std::vector<double>> image;
  torch::Tensor fused_maps;  // N x R x R, smoothed
};

VariantScores score_variants(GlcfModel& model, const CalibrationStats& stats, const FusionConfig& fusion,
                             const torch::Tensor& images, int64_t batch_size);

struct ReportRow {
  std::string group;    // branches | scoring | scales | sam_variants | bottleneck_modules
  std::string variant;  // e.g. local, PSS, no-SB
  std::string kind;     // structural | logical | mean
  double image_auroc = 0.0;
  std::optional<double> pixel_auroc;
  std::optional<double> spro;
};

struct ExperimentReport {
  std::string mode;
  nlohmann::json config;
  std::vector<ReportRow> rows;
  double runtime_seconds = 0.0;

  // Image AUROC of one row; ContractError when absent.
  double image_auroc(const std::string& group, const std::string& variant, const std::string& kind) const;
  nlohmann::json to_json(bool include_runtime) const;
};

enum class ExperimentMode { kBranches, kCorrespondence, kScales, kSamVariants, kBottleneckModules, kFull };

ExperimentMode parse_experiment_mode(const std::string& s);
std::string to_string(ExperimentMode m);
bool needs_training_grid(ExperimentMode m);

// Rows of the single-checkpoint groups selected by `mode` (kFull = all three);
// fused rows also carry pixel AUROC and sPRO.
std::vector<ReportRow> evaluate_model(ExperimentMode mode, GlcfModel& model, const CalibrationStats& stats,
                                      const RunConfig& cfg, const TestSet& test);

struct ExperimentInputs {
  std::filesystem::path data_root;
  std::optional<std::filesystem::path> checkpoint;  // single-checkpoint modes; trained from cfg when absent
  std::optional<std::filesystem::path> stats;       // recalibrated on the training split when absent
};

ExperimentReport run_experiment(ExperimentMode mode, const RunConfig& cfg, const ExperimentInputs& in);

// report.json (report_version 1), report.csv and one bar chart per group. In
// deterministic mode the runtime goes to timing.json so the report is byte-stable.
void write_report(const ExperimentReport& report, const std::filesystem::path& out_dir, bool deterministic);

}  // namespace glcf
