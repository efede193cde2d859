#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "glcf/config.hpp"
#include "glcf/experiment.hpp"

namespace glcf {

// Flags shared by every command.
struct CommonOptions {
  std::optional<uint64_t> seed;  // overrides training.seed (and the LogicShapes seed for generate-data)
  bool deterministic = false;
};

RunConfig resolve_config(const std::optional<std::filesystem::path>& path, const CommonOptions& opts);

// Creates `out`, opens out/glcf.log and writes out/resolved_config.json.
void begin_run(const std::filesystem::path& out, const nlohmann::json& resolved, const RunConfig& cfg);

void run_generate(const std::optional<std::filesystem::path>& spec_path, const std::filesystem::path& out,
                  const CommonOptions& opts);

// Writes checkpoint.glcf (plus checkpoint_epoch_<n>.glcf at the configured
// interval) and loss_history.csv.
void run_train(const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& out);

// Writes calibration.json measured on the training split.
void run_calibrate(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                   const std::filesystem::path& out, const CommonOptions& opts);

struct ScoredImage {
  std::filesystem::path path;
  std::string label;  // parent directory name
  double score = 0.0;
};

// Scores the given images; writes <stem>_map.tiff (float32), <stem>_overlay.png
// and scores.csv. `fusion_override` replaces the checkpoint's fusion section.
std::vector<ScoredImage> run_score(const std::filesystem::path& checkpoint, const std::filesystem::path& stats,
                                   const std::vector<std::filesystem::path>& images, const std::filesystem::path& out,
                                   const std::optional<RunConfig>& override_cfg, const CommonOptions& opts);

// Full evaluation report (branches, scoring rules, scales) for one checkpoint.
ExperimentReport run_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& stats,
                          const std::filesystem::path& data, const std::filesystem::path& out,
                          const std::optional<RunConfig>& override_cfg, const CommonOptions& opts);

// Trains and evaluates the ablation grid of `mode`. Uses cfg.data.root when
// set, otherwise generates cfg.data.logicshapes into the cache directory.
ExperimentReport run_ablate(const std::string& mode, const RunConfig& cfg, const std::filesystem::path& out);

// $GLCF_CACHE, else $XDG_CACHE_HOME/glcf, else ~/.cache/glcf.
std::filesystem::path cache_dir();

// Generates the spec into the cache unless an identical copy is already there.
std::filesystem::path cached_logicshapes(const LogicShapesSpec& spec);

// Image files given directly or found (sorted, recursively) under directories.
std::vector<std::filesystem::path> collect_images(const std::vector<std::filesystem::path>& inputs);

}  // namespace glcf
