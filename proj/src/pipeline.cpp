#include "glcf/pipeline.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "glcf/checkpoint.hpp"
#include "glcf/errors.hpp"
#include "glcf/log.hpp"
#include "glcf/scoring.hpp"

namespace glcf {

namespace fs = std::filesystem;

namespace {

void apply_runtime(const RunConfig& cfg) {
  if (cfg.training.deterministic) torch::set_num_threads(1);
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw MissingInputError(std::string(what) + " not found: " + p.string());
}

}  // namespace

RunConfig resolve_config(const std::optional<fs::path>& path, const CommonOptions& opts) {
  RunConfig cfg = path ? load_run_config(*path) : RunConfig{};
  if (opts.seed) cfg.training.seed = *opts.seed;
  if (opts.deterministic) cfg.training.deterministic = true;
  return cfg;
}

void begin_run(const fs::path& out, const nlohmann::json& resolved, const RunConfig& cfg) {
  fs::create_directories(out);
  log::to_file(out / "glcf.log");
  write_json(out / "resolved_config.json", resolved);
  apply_runtime(cfg);
}

void run_generate(const std::optional<fs::path>& spec_path, const fs::path& out, const CommonOptions& opts) {
  LogicShapesSpec spec = LogicShapesSpec::defaults();
  if (spec_path) {
    std::ifstream f(*spec_path);
    if (!f) throw MissingInputError("spec not found: " + spec_path->string());
    try {
      nlohmann::json::parse(f).get_to(spec);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad spec " + spec_path->string() + ": " + e.what());
    }
  }
  if (opts.seed) spec.seed = *opts.seed;
  check_spec(spec);  // before anything is written
  RunConfig cfg;
  cfg.data.logicshapes = spec;
  begin_run(out, cfg, cfg);
  log::info("generating LogicShapes into " + out.string());
  generate_logicshapes(spec, out);
  log::info("wrote " + std::to_string(spec.n_train) + " training and " +
            std::to_string(spec.n_test_normal + spec.n_test_structural + spec.n_test_logical) + " test samples");
}

void run_train(const RunConfig& cfg_in, const fs::path& data, const fs::path& out) {
  require_exists(data, "dataset");
  RunConfig cfg = cfg_in;
  const auto norm = resolve_norm(cfg.data, data);
  cfg.data.norm_mean = norm.mean;
  cfg.data.norm_std = norm.std;
  begin_run(out, cfg, cfg);
  const auto ds = load_folder_dataset(data);
  if (ds.train.empty()) throw MissingInputError("no training images under " + (data / "train" / "good").string());
  const auto train = load_images(ds.train, static_cast<int>(cfg.data.resolution), norm);
  log::info("training on " + std::to_string(train.size(0)) + " images for " + std::to_string(cfg.training.epochs) +
            " epochs");
  auto on_epoch = [&](int64_t epoch, GlcfModel& model, const std::vector<LossRecord>& history) {
    if (cfg.training.checkpoint_interval > 0 && epoch % cfg.training.checkpoint_interval == 0 &&
        epoch != cfg.training.epochs) {
      save_checkpoint(out / ("checkpoint_epoch_" + std::to_string(epoch) + ".glcf"), model, cfg, history);
    }
  };
  auto result = train_glcf(cfg.model(), cfg.training, train, on_epoch);
  save_checkpoint(out / "checkpoint.glcf", result.model, cfg, result.history);
  write_loss_history_csv(out / "loss_history.csv", result.history);
  log::info("checkpoint written to " + (out / "checkpoint.glcf").string());
}

void run_calibrate(const fs::path& checkpoint, const fs::path& data, const fs::path& out, const CommonOptions& opts) {
  require_exists(checkpoint, "checkpoint");
  require_exists(data, "dataset");
  auto ck = load_checkpoint(checkpoint);
  if (opts.deterministic) ck.config.training.deterministic = true;
  begin_run(out, ck.config, ck.config);
  const auto ds = load_folder_dataset(data);
  if (ds.train.empty()) throw MissingInputError("no training images under " + data.string());
  const auto norm = resolve_norm(ck.config.data, data);
  const auto train = load_images(ds.train, static_cast<int>(ck.config.data.resolution), norm);
  auto stats = calibrate(ck.model, train, ck.config.eval.batch_size);
  save_calibration(out / "calibration.json", stats);
  log::info("calibration statistics written to " + (out / "calibration.json").string());
}

std::vector<fs::path> collect_images(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    require_exists(in, "input");
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")) {
          found.push_back(e.path());
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(in);
    }
  }
  if (out.empty()) throw MissingInputError("no images to score");
  return out;
}

namespace {

void write_maps(const fs::path& out, const std::string& stem, const torch::Tensor& smoothed, const cv::Mat& original) {
  auto m = smoothed.to(torch::kFloat32).contiguous();
  cv::Mat map(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)), CV_32FC1, m.data_ptr<float>());
  cv::imwrite((out / (stem + "_map.tiff")).string(), map);

  double lo = 0, hi = 0;
  cv::minMaxLoc(map, &lo, &hi);
  cv::Mat scaled;
  map.convertTo(scaled, CV_8UC1, hi > lo ? 255.0 / (hi - lo) : 0.0, hi > lo ? -lo * 255.0 / (hi - lo) : 0.0);
  cv::Mat heat;
  cv::applyColorMap(scaled, heat, cv::COLORMAP_JET);
  cv::Mat base;
  cv::resize(original, base, heat.size(), 0, 0, cv::INTER_LINEAR);
  cv::Mat overlay;
  cv::addWeighted(base, 0.5, heat, 0.5, 0.0, overlay);
  cv::imwrite((out / (stem + "_overlay.png")).string(), overlay);
}

RunConfig merged(const Checkpoint& ck, const std::optional<RunConfig>& override_cfg, const CommonOptions& opts) {
  RunConfig cfg = ck.config;
  if (override_cfg) {
    cfg.fusion = override_cfg->fusion;
    cfg.eval = override_cfg->eval;
  }
  if (opts.deterministic) cfg.training.deterministic = true;
  return cfg;
}

}  // namespace

std::vector<ScoredImage> run_score(const fs::path& checkpoint, const fs::path& stats_path,
                                   const std::vector<fs::path>& inputs, const fs::path& out,
                                   const std::optional<RunConfig>& override_cfg, const CommonOptions& opts) {
  require_exists(checkpoint, "checkpoint");
  require_exists(stats_path, "calibration statistics");
  const auto images = collect_images(inputs);
  auto ck = load_checkpoint(checkpoint);
  const auto cfg = merged(ck, override_cfg, opts);
  begin_run(out, cfg, cfg);
  const auto stats = load_calibration(stats_path);
  const auto norm = resolve_norm(cfg.data, {});

  std::vector<ScoredImage> scored;
  std::ofstream csv(out / "scores.csv", std::ios::trunc);
  csv << "path,label,score\n";
  std::map<std::string, int> stems;
  for (const auto& p : images) {
    const auto raw = read_image(p);
    auto x = preprocess(raw, static_cast<int>(cfg.data.resolution), norm).unsqueeze(0);
    auto res = score_images(ck.model, stats, cfg.fusion, x);
    ScoredImage s{p, p.parent_path().filename().string(), res[0].image_score};
    std::string stem = p.stem().string();
    if (p.has_parent_path()) stem = p.parent_path().filename().string() + "_" + stem;
    if (const int n = stems[stem]++; n > 0) stem += "_" + std::to_string(n);
    write_maps(out, stem, res[0].smoothed_map, raw);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", s.score);
    csv << p.string() << ',' << s.label << ',' << buf << '\n';
    scored.push_back(std::move(s));
  }
  log::info("scored " + std::to_string(scored.size()) + " images");
  return scored;
}

ExperimentReport run_eval(const fs::path& checkpoint, const fs::path& stats, const fs::path& data, const fs::path& out,
                          const std::optional<RunConfig>& override_cfg, const CommonOptions& opts) {
  require_exists(checkpoint, "checkpoint");
  require_exists(stats, "calibration statistics");
  require_exists(data, "dataset");
  auto ck = load_checkpoint(checkpoint);
  const auto cfg = merged(ck, override_cfg, opts);
  begin_run(out, cfg, cfg);
  ExperimentInputs in{data, checkpoint, stats};
  auto report = run_experiment(ExperimentMode::kFull, cfg, in);
  write_report(report, out, cfg.training.deterministic);
  log::info("report written to " + (out / "report.json").string());
  return report;
}

fs::path cache_dir() {
  if (const char* c = std::getenv("GLCF_CACHE"); c && *c) return c;
  if (const char* x = std::getenv("XDG_CACHE_HOME"); x && *x) return fs::path(x) / "glcf";
  if (const char* h = std::getenv("HOME"); h && *h) return fs::path(h) / ".cache" / "glcf";
  return fs::temp_directory_path() / "glcf-cache";
}

fs::path cached_logicshapes(const LogicShapesSpec& spec) {
  const auto text = nlohmann::json(spec).dump();
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) h = (h ^ c) * 1099511628211ULL;
  char name[40];
  std::snprintf(name, sizeof(name), "logicshapes-%016llx", static_cast<unsigned long long>(h));
  const auto dir = cache_dir() / name;
  // spec.json is written last, so its presence marks a complete tree.
  if (std::ifstream f(dir / "spec.json"); f) {
    try {
      if (nlohmann::json::parse(f).dump() == text) return dir;
    } catch (const nlohmann::json::exception&) {
    }
  }
  log::info("generating LogicShapes into cache " + dir.string());
  fs::remove_all(dir);
  generate_logicshapes(spec, dir);
  return dir;
}

ExperimentReport run_ablate(const std::string& mode_name, const RunConfig& cfg, const fs::path& out) {
  const auto mode = parse_experiment_mode(mode_name);
  begin_run(out, cfg, cfg);
  fs::path data = cfg.data.root;
  if (data.empty()) {
    data = cached_logicshapes(cfg.data.logicshapes);
  } else {
    require_exists(data, "dataset");
  }
  auto report = run_experiment(mode, cfg, {data, std::nullopt, std::nullopt});
  write_report(report, out, cfg.training.deterministic);
  log::info("report written to " + (out / "report.json").string());
  return report;
}

}  // namespace glcf
