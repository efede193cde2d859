#include "glcf/experiment.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>

#include "glcf/checkpoint.hpp"
#include "glcf/errors.hpp"
#include "glcf/log.hpp"
#include "glcf/metrics.hpp"
#include "glcf/scoring.hpp"
#include "glcf/training.hpp"

namespace glcf {

TestSet load_test_set(const FolderDataset& ds, int64_t resolution, const NormConstants& norm) {
  TestSet t;
  t.images = load_images(ds.test, static_cast<int>(resolution), norm);
  t.masks = load_masks(ds.test, static_cast<int>(resolution));
  for (const auto& r : ds.test) {
    t.kinds.push_back(r.kind);
    t.paths.push_back(r.image_path.string());
  }
  return t;
}

namespace {

std::vector<double> image_scores(const torch::Tensor& smoothed, ImageScoreMode mode) {
  auto s = mode == ImageScoreMode::kStd ? smoothed.std({1, 2}, /*unbiased=*/false) : smoothed.amax({1, 2});
  s = s.to(torch::kDouble).contiguous();
  return {s.data_ptr<double>(), s.data_ptr<double>() + s.numel()};
}

void append(std::vector<double>& dst, const std::vector<double>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

}  // namespace

VariantScores score_variants(GlcfModel& model, const CalibrationStats& stats, const FusionConfig& fusion,
                             const torch::Tensor& images, int64_t batch_size) {
  VariantScores out;
  std::vector<torch::Tensor> fused_maps;
  const std::array<int64_t, 2> size{images.size(2), images.size(3)};
  torch::NoGradGuard no_grad;
  model->eval();
  for (int64_t s = 0; s < images.size(0); s += batch_size) {
    auto batch = images.slice(0, s, std::min(images.size(0), s + batch_size));
    auto fwd = model->forward(batch);
    auto maps = branch_anomaly_maps(fwd);
    auto corr = correspondence_maps(fwd);
    std::array<torch::Tensor, 3> nl, ng, nc, fs;
    for (int i = 0; i < 3; ++i) {
      const auto idx = static_cast<size_t>(i);
      auto l = maps.local[idx].to(torch::kDouble);
      auto g = maps.global[idx].to(torch::kDouble);
      nl[idx] = normalize_map(l, stats.local[idx]);
      ng[idx] = normalize_map(g, stats.global[idx]);
      auto c = corr[idx].to(torch::kDouble);
      nc[idx] = stats.correspondence ? normalize_map(c, (*stats.correspondence)[idx]) : c;
      fs[idx] = fuse_scale(l, g, stats, fusion, i);
    }
    auto emit = [&](const std::string& name, const std::array<torch::Tensor, 3>& per_scale,
                    const std::array<double, 3>& weights) {
      auto fused = fuse_multiscale(per_scale, weights, size);
      if (!torch::isfinite(fused).all().item<bool>()) throw NumericFault("non-finite anomaly map (" + name + ")");
      auto smoothed = gaussian_smooth(fused, fusion.gaussian_sigma);
      append(out.image[name], image_scores(smoothed, fusion.image_score_mode));
      return smoothed;
    };
    fused_maps.push_back(emit("fused", fs, fusion.scale_weights).to(torch::kFloat32));
    emit("local", nl, fusion.scale_weights);
    emit("global", ng, fusion.scale_weights);
    emit("correspondence", nc, fusion.scale_weights);
    emit("scale1", fs, {3.0, 0.0, 0.0});
    emit("scale2", fs, {0.0, 3.0, 0.0});
    emit("scale3", fs, {0.0, 0.0, 3.0});
  }
  out.fused_maps = fused_maps.empty() ? torch::empty({0, size[0], size[1]}) : torch::cat(fused_maps);
  return out;
}

double ExperimentReport::image_auroc(const std::string& group, const std::string& variant,
                                     const std::string& kind) const {
  for (const auto& r : rows) {
    if (r.group == group && r.variant == variant && r.kind == kind) return r.image_auroc;
  }
  throw ContractError("report has no row " + group + "/" + variant + "/" + kind);
}

nlohmann::json ExperimentReport::to_json(bool include_runtime) const {
  auto rs = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"group", r.group}, {"variant", r.variant}, {"kind", r.kind}, {"image_auroc", r.image_auroc}};
    j["pixel_auroc"] = r.pixel_auroc ? nlohmann::json(*r.pixel_auroc) : nlohmann::json(nullptr);
    j["spro"] = r.spro ? nlohmann::json(*r.spro) : nlohmann::json(nullptr);
    rs.push_back(std::move(j));
  }
  nlohmann::json j{{"report_version", 1}, {"mode", mode}, {"config", config}, {"rows", rs}};
  if (include_runtime) j["runtime_seconds"] = runtime_seconds;
  return j;
}

ExperimentMode parse_experiment_mode(const std::string& s) {
  if (s == "branches") return ExperimentMode::kBranches;
  if (s == "correspondence-vs-estimation") return ExperimentMode::kCorrespondence;
  if (s == "scales") return ExperimentMode::kScales;
  if (s == "sam-variants") return ExperimentMode::kSamVariants;
  if (s == "bottleneck-modules") return ExperimentMode::kBottleneckModules;
  if (s == "full") return ExperimentMode::kFull;
  throw ConfigError("unknown ablation mode '" + s +
                    "' (expected branches, correspondence-vs-estimation, scales, sam-variants, bottleneck-modules, full)");
}

std::string to_string(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::kBranches: return "branches";
    case ExperimentMode::kCorrespondence: return "correspondence-vs-estimation";
    case ExperimentMode::kScales: return "scales";
    case ExperimentMode::kSamVariants: return "sam-variants";
    case ExperimentMode::kBottleneckModules: return "bottleneck-modules";
    case ExperimentMode::kFull: return "full";
  }
  return "?";
}

bool needs_training_grid(ExperimentMode m) {
  return m == ExperimentMode::kSamVariants || m == ExperimentMode::kBottleneckModules;
}

namespace {

struct KindSplit {
  std::string name;
  std::vector<int64_t> indices;  // good + this kind
  std::vector<int> labels;
};

std::vector<KindSplit> kind_splits(const TestSet& test) {
  std::vector<KindSplit> out;
  for (auto kind : {SampleKind::kStructural, SampleKind::kLogical}) {
    KindSplit ks{to_string(kind), {}, {}};
    bool any = false;
    for (size_t i = 0; i < test.kinds.size(); ++i) {
      if (test.kinds[i] == SampleKind::kNormal || test.kinds[i] == kind) {
        ks.indices.push_back(static_cast<int64_t>(i));
        ks.labels.push_back(test.kinds[i] == kind);
        any = any || test.kinds[i] == kind;
      }
    }
    if (any) out.push_back(std::move(ks));
  }
  if (out.empty()) throw ContractError("test split has no anomalous samples");
  return out;
}

std::vector<double> gather(const std::vector<double>& v, const std::vector<int64_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[static_cast<size_t>(i)]);
  return out;
}

void add_group(std::vector<ReportRow>& rows, const std::string& group, const std::vector<std::string>& variants,
               const VariantScores& scores, const std::vector<KindSplit>& splits, const TestSet& test,
               const EvalConfig& eval, bool pixel_for_fused) {
  for (const auto& v : variants) {
    double sum = 0.0;
    for (const auto& ks : splits) {
      ReportRow r{group, v, ks.name, auroc(gather(scores.image.at(v), ks.indices), ks.labels), {}, {}};
      if (pixel_for_fused && v == "fused") {
        auto idx = torch::tensor(ks.indices, torch::kLong);
        auto maps = scores.fused_maps.index_select(0, idx);
        auto masks = test.masks.index_select(0, idx);
        r.pixel_auroc = pixel_auroc(maps, masks);
        r.spro = spro(maps, masks, eval.spro());
      }
      sum += r.image_auroc;
      rows.push_back(std::move(r));
    }
    rows.push_back({group, v, "mean", sum / static_cast<double>(splits.size()), {}, {}});
  }
}

}  // namespace

std::vector<ReportRow> evaluate_model(ExperimentMode mode, GlcfModel& model, const CalibrationStats& stats,
                                      const RunConfig& cfg, const TestSet& test) {
  const auto scores = score_variants(model, stats, cfg.fusion, test.images, cfg.eval.batch_size);
  const auto splits = kind_splits(test);
  std::vector<ReportRow> rows;
  const bool all = mode == ExperimentMode::kFull;
  if (all || mode == ExperimentMode::kBranches) {
    add_group(rows, "branches", {"local", "global", "fused"}, scores, splits, test, cfg.eval, true);
  }
  if (all || mode == ExperimentMode::kCorrespondence) {
    // The estimation scorer is the fused map; it is reported under its own name here.
    std::vector<ReportRow> tmp;
    add_group(tmp, "scoring", {"correspondence", "fused"}, scores, splits, test, cfg.eval, false);
    for (auto& r : tmp) {
      if (r.variant == "fused") r.variant = "estimation";
      rows.push_back(std::move(r));
    }
  }
  if (all || mode == ExperimentMode::kScales) {
    add_group(rows, "scales", {"scale1", "scale2", "scale3", "fused"}, scores, splits, test, cfg.eval, false);
  }
  return rows;
}

namespace {

struct TrainedModel {
  GlcfModel model{nullptr};
  CalibrationStats stats;
};

TrainedModel train_and_calibrate(const RunConfig& cfg, const torch::Tensor& train_images) {
  auto result = train_glcf(cfg.model(), cfg.training, train_images);
  TrainedModel t;
  t.model = result.model;
  t.stats = calibrate(t.model, train_images, cfg.eval.batch_size);
  return t;
}

std::vector<std::pair<std::string, RunConfig>> training_grid(ExperimentMode mode, const RunConfig& base) {
  std::vector<std::pair<std::string, RunConfig>> grid;
  if (mode == ExperimentMode::kSamVariants) {
    for (auto v : {SamVariant::kPS, SamVariant::kPGS, SamVariant::kPSS, SamVariant::kNoSam}) {
      auto c = base;
      c.bottleneck.enabled = true;
      c.bottleneck.variant = v;
      grid.emplace_back(to_string(v), c);
    }
  } else {
    auto full = base;
    full.bottleneck.enabled = true;
    full.bottleneck.multiscale_embedding = true;
    grid.emplace_back("full", full);
    auto no_sb = full;
    no_sb.bottleneck.enabled = false;
    grid.emplace_back("no-SB", no_sb);
    auto no_pem = full;
    no_pem.bottleneck.multiscale_embedding = false;
    grid.emplace_back("no-MS-PEM", no_pem);
    auto no_sam = full;
    no_sam.bottleneck.variant = SamVariant::kNoSam;
    grid.emplace_back("no-SAM", no_sam);
  }
  return grid;
}

}  // namespace

ExperimentReport run_experiment(ExperimentMode mode, const RunConfig& cfg, const ExperimentInputs& in) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = load_folder_dataset(in.data_root);
  ExperimentReport report;
  report.mode = to_string(mode);

  if (!needs_training_grid(mode)) {
    RunConfig used = cfg;
    GlcfModel model{nullptr};
    std::optional<CalibrationStats> stats;
    if (in.checkpoint) {
      if (!std::filesystem::exists(*in.checkpoint)) {
        throw MissingInputError("checkpoint not found: " + in.checkpoint->string());
      }
      auto ck = load_checkpoint(*in.checkpoint);
      model = ck.model;
      // Architecture, training and normalisation come from the checkpoint; scoring and metric knobs from cfg.
      used = ck.config;
      used.fusion = cfg.fusion;
      used.eval = cfg.eval;
    }
    const auto norm = resolve_norm(used.data, in.data_root);
    used.data.norm_mean = norm.mean;
    used.data.norm_std = norm.std;
    const auto test = load_test_set(ds, used.data.resolution, norm);
    if (in.stats) stats = load_calibration(*in.stats);
    if (!model || !stats) {
      if (ds.train.empty()) throw MissingInputError("training split is empty: " + in.data_root.string());
      const auto train = load_images(ds.train, static_cast<int>(used.data.resolution), norm);
      if (!model) {
        log::info("training reference model on " + std::to_string(train.size(0)) + " images");
        auto t = train_and_calibrate(used, train);
        model = t.model;
        if (!stats) stats = t.stats;
      } else {
        stats = calibrate(model, train, used.eval.batch_size);
      }
    }
    report.config = used;
    report.rows = evaluate_model(mode, model, *stats, used, test);
  } else {
    if (in.checkpoint) log::warn("--checkpoint is ignored by " + to_string(mode) + ": every variant is trained");
    if (ds.train.empty()) throw MissingInputError("training split is empty: " + in.data_root.string());
    const auto norm = resolve_norm(cfg.data, in.data_root);
    RunConfig used = cfg;
    used.data.norm_mean = norm.mean;
    used.data.norm_std = norm.std;
    const auto train = load_images(ds.train, static_cast<int>(used.data.resolution), norm);
    const auto test = load_test_set(ds, used.data.resolution, norm);
    const auto splits = kind_splits(test);
    const std::string group = mode == ExperimentMode::kSamVariants ? "sam_variants" : "bottleneck_modules";
    for (const auto& [name, variant_cfg] : training_grid(mode, used)) {
      log::info("training variant " + name);
      auto t = train_and_calibrate(variant_cfg, train);
      const auto scores = score_variants(t.model, t.stats, variant_cfg.fusion, test.images, used.eval.batch_size);
      std::vector<ReportRow> rows;
      add_group(rows, group, {"fused"}, scores, splits, test, used.eval, true);
      for (auto& r : rows) {
        r.variant = name;
        report.rows.push_back(std::move(r));
      }
    }
    report.config = used;
  }
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

void draw_group_chart(const std::vector<const ReportRow*>& rows, const std::string& title,
                      const std::filesystem::path& path) {
  std::vector<std::string> variants, kinds;
  for (const auto* r : rows) {
    if (std::find(variants.begin(), variants.end(), r->variant) == variants.end()) variants.push_back(r->variant);
    if (r->kind != "mean" && std::find(kinds.begin(), kinds.end(), r->kind) == kinds.end()) kinds.push_back(r->kind);
  }
  const int bar = 28, gap = 30, left = 60, top = 50, plot_h = 260;
  const int group_w = static_cast<int>(kinds.size()) * bar + gap;
  const int width = left + static_cast<int>(variants.size()) * group_w + 40;
  const int height = top + plot_h + 70;
  cv::Mat img(height, std::max(width, 360), CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar axis(60, 60, 60);
  const std::vector<cv::Scalar> colors{{180, 119, 31}, {14, 127, 255}, {44, 160, 44}};
  cv::putText(img, title, {left, 28}, cv::FONT_HERSHEY_SIMPLEX, 0.6, axis, 1, cv::LINE_AA);
  const int y0 = top + plot_h;
  cv::line(img, {left, top}, {left, y0}, axis, 1);
  cv::line(img, {left, y0}, {img.cols - 20, y0}, axis, 1);
  for (int t = 0; t <= 4; ++t) {
    const int y = y0 - t * plot_h / 4;
    cv::line(img, {left - 4, y}, {left, y}, axis, 1);
    char lab[8];
    std::snprintf(lab, sizeof(lab), "%.2f", t * 0.25);
    cv::putText(img, lab, {8, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
  }
  for (size_t v = 0; v < variants.size(); ++v) {
    const int gx = left + gap / 2 + static_cast<int>(v) * group_w;
    for (size_t k = 0; k < kinds.size(); ++k) {
      for (const auto* r : rows) {
        if (r->variant != variants[v] || r->kind != kinds[k]) continue;
        const int h = static_cast<int>(std::clamp(r->image_auroc, 0.0, 1.0) * plot_h);
        const int x = gx + static_cast<int>(k) * bar;
        cv::rectangle(img, {x, y0 - h}, {x + bar - 4, y0}, colors[k % colors.size()], cv::FILLED);
      }
    }
    cv::putText(img, variants[v], {gx, y0 + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
  }
  for (size_t k = 0; k < kinds.size(); ++k) {
    const int x = left + static_cast<int>(k) * 120;
    cv::rectangle(img, {x, height - 26}, {x + 12, height - 14}, colors[k % colors.size()], cv::FILLED);
    cv::putText(img, kinds[k], {x + 18, height - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.45, axis, 1, cv::LINE_AA);
  }
  cv::imwrite(path.string(), img);
}

}  // namespace

void write_report(const ExperimentReport& report, const std::filesystem::path& out_dir, bool deterministic) {
  std::filesystem::create_directories(out_dir);
  write_json(out_dir / "report.json", report.to_json(!deterministic));
  if (deterministic) write_json(out_dir / "timing.json", {{"runtime_seconds", report.runtime_seconds}});

  std::ofstream csv(out_dir / "report.csv", std::ios::trunc);
  csv << "group,variant,kind,image_auroc,pixel_auroc,spro\n";
  for (const auto& r : report.rows) {
    csv << r.group << ',' << r.variant << ',' << r.kind << ',' << fmt_opt(r.image_auroc) << ','
        << fmt_opt(r.pixel_auroc) << ',' << fmt_opt(r.spro) << '\n';
  }

  std::vector<std::string> groups;
  for (const auto& r : report.rows) {
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end()) groups.push_back(r.group);
  }
  for (const auto& g : groups) {
    std::vector<const ReportRow*> rows;
    for (const auto& r : report.rows) {
      if (r.group == g) rows.push_back(&r);
    }
    draw_group_chart(rows, g + ": image AUROC", out_dir / ("chart_" + g + ".png"));
  }
}

}  // namespace glcf
