#include "glcf/config.hpp"

#include <fstream>

#include "glcf/errors.hpp"
#include "glcf/json_util.hpp"

namespace glcf {

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{{"resolution", c.resolution}, {"root", c.root}, {"logicshapes", c.logicshapes}};
  if (c.norm_mean) j["norm_mean"] = *c.norm_mean;
  if (c.norm_std) j["norm_std"] = *c.norm_std;
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  const std::string sec = "data";
  json_util::reject_unknown(j, {"resolution", "norm_mean", "norm_std", "root", "logicshapes"}, sec);
  json_util::read(j, "resolution", c.resolution, sec);
  json_util::read(j, "root", c.root, sec);
  if (j.contains("norm_mean") && !j["norm_mean"].is_null()) {
    std::array<double, 3> v{};
    json_util::read(j, "norm_mean", v, sec);
    c.norm_mean = v;
  }
  if (j.contains("norm_std") && !j["norm_std"].is_null()) {
    std::array<double, 3> v{};
    json_util::read(j, "norm_std", v, sec);
    for (double s : v) {
      if (!(s > 0)) throw ConfigError("data.norm_std entries must be positive");
    }
    c.norm_std = v;
  }
  if (c.norm_mean.has_value() != c.norm_std.has_value()) {
    throw ConfigError("data.norm_mean and data.norm_std must be given together");
  }
  if (j.contains("logicshapes")) j.at("logicshapes").get_to(c.logicshapes);
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = nlohmann::json{
      {"saturation_fraction", c.saturation_fraction}, {"fpr_limit", c.fpr_limit}, {"batch_size", c.batch_size}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  const std::string sec = "eval";
  json_util::reject_unknown(j, {"saturation_fraction", "fpr_limit", "batch_size"}, sec);
  json_util::read(j, "saturation_fraction", c.saturation_fraction, sec);
  json_util::read(j, "fpr_limit", c.fpr_limit, sec);
  json_util::read(j, "batch_size", c.batch_size, sec);
  if (!(c.saturation_fraction > 0 && c.saturation_fraction <= 1)) {
    throw ConfigError("eval.saturation_fraction must lie in (0, 1]");
  }
  if (!(c.fpr_limit > 0 && c.fpr_limit <= 1)) throw ConfigError("eval.fpr_limit must lie in (0, 1]");
  if (c.batch_size <= 0) throw ConfigError("eval.batch_size must be positive");
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.backbone = backbone;
  m.bottleneck = bottleneck;
  m.heads = heads;
  m.resolution = data.resolution;
  return m;
}

void RunConfig::validate() const {
  model().validate();
  training.validate();
  fusion.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone}, {"bottleneck", c.bottleneck}, {"heads", c.heads},
                     {"training", c.training}, {"fusion", c.fusion},         {"data", c.data},
                     {"eval", c.eval}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  json_util::reject_unknown(j, {"backbone", "bottleneck", "heads", "training", "fusion", "data", "eval"}, "<root>");
  if (j.contains("backbone")) c.backbone = j.at("backbone").get<BackboneConfig>();
  if (j.contains("bottleneck")) c.bottleneck = j.at("bottleneck").get<BottleneckConfig>();
  if (j.contains("heads")) c.heads = j.at("heads").get<DecoderConfig>();
  if (j.contains("training")) c.training = j.at("training").get<TrainingConfig>();
  if (j.contains("fusion")) c.fusion = j.at("fusion").get<FusionConfig>();
  if (j.contains("data")) c.data = j.at("data").get<DataConfig>();
  if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
  c.validate();
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingInputError("config not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  try {
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad config " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw MissingInputError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

NormConstants resolve_norm(const DataConfig& cfg, const std::filesystem::path& dataset_root) {
  if (cfg.norm_mean && cfg.norm_std) return {*cfg.norm_mean, *cfg.norm_std};
  if (!dataset_root.empty()) {
    if (auto n = load_dataset_norm(dataset_root)) return *n;
  }
  return NormConstants::imagenet();
}

}  // namespace glcf
