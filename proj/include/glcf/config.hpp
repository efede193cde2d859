#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "glcf/data.hpp"
#include "glcf/metrics.hpp"
#include "glcf/model.hpp"
#include "glcf/scoring.hpp"
#include "glcf/training.hpp"

namespace glcf {

struct DataConfig {
  int64_t resolution = 64;
  // Unset: the dataset's stats.json when present, ImageNet constants otherwise.
  std::optional<std::array<double, 3>> norm_mean;
  std::optional<std::array<double, 3>> norm_std;
  std::string root;  // dataset directory used by `ablate`; empty = generate LogicShapes
  LogicShapesSpec logicshapes = LogicShapesSpec::defaults();
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

struct EvalConfig {
  double saturation_fraction = 1.0;
  double fpr_limit = 0.05;
  int64_t batch_size = 32;

  SproOptions spro() const { return {saturation_fraction, fpr_limit}; }
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

// One JSON document with sections backbone, bottleneck, heads, training,
// fusion, data, eval. Every key is optional; unknown keys are rejected.
struct RunConfig {
  BackboneConfig backbone;
  BottleneckConfig bottleneck;
  DecoderConfig heads;
  TrainingConfig training;
  FusionConfig fusion;
  DataConfig data;
  EvalConfig eval;

  ModelConfig model() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// Explicit normalisation from the config, else the dataset's stats.json, else ImageNet.
NormConstants resolve_norm(const DataConfig& cfg, const std::filesystem::path& dataset_root);

}  // namespace glcf
