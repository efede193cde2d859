// glcf: command-line entry point (generate-data, train, calibrate, score, eval, ablate).

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "glcf/errors.hpp"
#include "glcf/log.hpp"
#include "glcf/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

int fail(glcf::ErrorCategory cat, const std::string& msg) {
  std::cerr << "error " << glcf::category_name(cat) << ": " << msg << std::endl;
  glcf::log::flush();
  return static_cast<int>(cat);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global-local correspondence anomaly detection: data generation, training, scoring and evaluation."};
  app.require_subcommand(1);

  glcf::CommonOptions common;
  std::optional<uint64_t> seed;
  app.add_option("--seed", seed, "Override the training seed (and the generator seed for generate-data)");
  app.add_flag("--deterministic", common.deterministic, "Single-threaded numerics; reruns produce identical artifacts");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Log to the run's glcf.log only");

  std::string spec, out, config, data, checkpoint, stats, mode;
  std::vector<std::string> image_inputs;

  auto* gen = app.add_subcommand("generate-data", "Generate a LogicShapes dataset");
  gen->add_option("--spec", spec, "LogicShapes spec JSON (default: built-in 2x2 spec)")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train bottleneck and heads on train/good");
  train->add_option("--config", config, "Run config JSON (all keys optional)");
  train->add_option("--data", data, "Dataset root")->required();
  train->add_option("--out", out, "Output directory")->required();

  auto* cal = app.add_subcommand("calibrate", "Measure per-branch, per-scale normalisation statistics");
  cal->add_option("--checkpoint", checkpoint, "checkpoint.glcf")->required();
  cal->add_option("--data", data, "Dataset root (its train split is used)")->required();
  cal->add_option("--out", out, "Output directory")->required();

  auto* score = app.add_subcommand("score", "Score images; prints one score per image");
  score->add_option("--checkpoint", checkpoint, "checkpoint.glcf")->required();
  score->add_option("--stats", stats, "calibration.json")->required();
  auto* img = score->add_option("--image", image_inputs, "Image file (repeatable)");
  auto* dir = score->add_option("--dir", image_inputs, "Directory scanned recursively for images");
  img->excludes(dir);
  score->add_option("--config", config, "Run config JSON; only its fusion and eval sections are used");
  score->add_option("--out", out, "Output directory for maps and scores.csv")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset's test split");
  ev->add_option("--checkpoint", checkpoint, "checkpoint.glcf")->required();
  ev->add_option("--stats", stats, "calibration.json")->required();
  ev->add_option("--data", data, "Dataset root")->required();
  ev->add_option("--config", config, "Run config JSON; only its fusion and eval sections are used");
  ev->add_option("--out", out, "Output directory")->required();

  auto* ab = app.add_subcommand("ablate", "Run an ablation grid and write report.json/csv and charts");
  ab->add_option("--mode", mode,
                 "branches | correspondence-vs-estimation | scales | sam-variants | bottleneck-modules | full")
      ->required();
  ab->add_option("--config", config, "Run config JSON; data.root selects a dataset, else LogicShapes is generated "
                                     "under $GLCF_CACHE");
  ab->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(glcf::ErrorCategory::kConfig);
  }
  common.seed = seed;
  glcf::log::quiet(quiet);

  auto opt_path = [](const std::string& s) { return s.empty() ? std::optional<fs::path>{} : fs::path(s); };
  try {
    if (*gen) {
      glcf::run_generate(opt_path(spec), out, common);
    } else if (*train) {
      glcf::run_train(glcf::resolve_config(opt_path(config), common), data, out);
    } else if (*cal) {
      glcf::run_calibrate(checkpoint, data, out, common);
    } else if (*score) {
      if (image_inputs.empty()) return fail(glcf::ErrorCategory::kConfig, "score needs --image or --dir");
      std::optional<glcf::RunConfig> override_cfg;
      if (!config.empty()) override_cfg = glcf::resolve_config(fs::path(config), common);
      std::vector<fs::path> inputs(image_inputs.begin(), image_inputs.end());
      for (const auto& s : glcf::run_score(checkpoint, stats, inputs, out, override_cfg, common)) {
        std::printf("%s %.9g\n", s.path.string().c_str(), s.score);
      }
    } else if (*ev) {
      std::optional<glcf::RunConfig> override_cfg;
      if (!config.empty()) override_cfg = glcf::resolve_config(fs::path(config), common);
      glcf::run_eval(checkpoint, stats, data, out, override_cfg, common);
    } else if (*ab) {
      glcf::run_ablate(mode, glcf::resolve_config(opt_path(config), common), out);
    }
  } catch (const glcf::GlcfError& e) {
    return fail(e.category(), e.what());
  } catch (const c10::Error& e) {
    return fail(glcf::ErrorCategory::kContract, e.what_without_backtrace());
  } catch (const nlohmann::json::exception& e) {
    return fail(glcf::ErrorCategory::kConfig, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(glcf::ErrorCategory::kMissingInput, e.what());
  }
  glcf::log::flush();
  return 0;
}
