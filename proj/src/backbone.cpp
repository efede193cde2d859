#include "glcf/backbone.hpp"

#include <cstring>
#include <iomanip>
#include <sstream>

#include "glcf/errors.hpp"
#include "glcf/json_util.hpp"
#include "glcf/tensor_archive.hpp"

namespace glcf {

FeaturePyramid FeaturePyramid::detach() const {
  FeaturePyramid out;
  for (size_t i = 0; i < 3; ++i) out.levels[i] = levels[i].detach();
  return out;
}

FeaturePyramid FeaturePyramid::to(torch::Dtype dtype) const {
  FeaturePyramid out;
  for (size_t i = 0; i < 3; ++i) out.levels[i] = levels[i].to(dtype);
  return out;
}

FeaturePyramid FeaturePyramid::slice(int64_t begin, int64_t end) const {
  FeaturePyramid out;
  for (size_t i = 0; i < 3; ++i) out.levels[i] = levels[i].slice(0, begin, end);
  return out;
}

bool FeaturePyramid::all_finite() const {
  for (const auto& l : levels) {
    if (!l.defined() || !torch::isfinite(l).all().item<bool>()) return false;
  }
  return true;
}

FeaturePyramid FeaturePyramid::cat(const std::vector<FeaturePyramid>& parts) {
  FeaturePyramid out;
  for (size_t i = 0; i < 3; ++i) {
    std::vector<torch::Tensor> ts;
    ts.reserve(parts.size());
    for (const auto& p : parts) ts.push_back(p.levels[i]);
    out.levels[i] = torch::cat(ts, 0);
  }
  return out;
}

void require_same_shape(const FeaturePyramid& a, const FeaturePyramid& b, const char* what) {
  for (size_t i = 0; i < 3; ++i) {
    if (a.levels[i].sizes() != b.levels[i].sizes()) {
      std::ostringstream ss;
      ss << what << ": level " << i + 1 << " shape mismatch " << a.levels[i].sizes() << " vs " << b.levels[i].sizes();
      throw ContractError(ss.str());
    }
  }
}

void BackboneConfig::validate() const {
  if (stem_patch <= 0) throw ConfigError("backbone.stem_patch must be positive");
  for (auto c : stage_channels) {
    if (c <= 0) throw ConfigError("backbone.stage_channels must be positive");
  }
  for (auto d : stage_depths) {
    if (d < 0) throw ConfigError("backbone.stage_depths must be non-negative");
  }
  if (attention_window <= 0) throw ConfigError("backbone.attention_window must be positive");
  if (source == WeightSource::kArchive && archive_path.empty()) {
    throw ConfigError("backbone.source=archive requires backbone.archive_path");
  }
}

std::array<std::array<int64_t, 2>, 3> BackboneConfig::level_shapes(int64_t height, int64_t width) const {
  std::array<std::array<int64_t, 2>, 3> out{};
  for (int i = 0; i < 3; ++i) {
    const int64_t stride = stem_patch << i;
    out[i] = {height / stride, width / stride};
  }
  return out;
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = nlohmann::json{{"stem_patch", c.stem_patch},
                     {"stage_channels", c.stage_channels},
                     {"stage_depths", c.stage_depths},
                     {"attention_window", c.attention_window},
                     {"head_dim", c.head_dim},
                     {"source", c.source == WeightSource::kArchive ? "archive" : "random_frozen"},
                     {"seed", c.seed},
                     {"archive_path", c.archive_path.string()}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  const std::string sec = "backbone";
  json_util::reject_unknown(
      j, {"stem_patch", "stage_channels", "stage_depths", "attention_window", "head_dim", "source", "seed", "archive_path"},
      sec);
  json_util::read(j, "stem_patch", c.stem_patch, sec);
  json_util::read(j, "stage_channels", c.stage_channels, sec);
  json_util::read(j, "stage_depths", c.stage_depths, sec);
  json_util::read(j, "attention_window", c.attention_window, sec);
  json_util::read(j, "head_dim", c.head_dim, sec);
  json_util::read(j, "seed", c.seed, sec);
  std::string source = c.source == WeightSource::kArchive ? "archive" : "random_frozen";
  json_util::read(j, "source", source, sec);
  if (source == "random_frozen") {
    c.source = WeightSource::kRandomFrozen;
  } else if (source == "archive") {
    c.source = WeightSource::kArchive;
  } else {
    throw ConfigError("backbone.source must be 'random_frozen' or 'archive', got '" + source + "'");
  }
  std::string path = c.archive_path.string();
  json_util::read(j, "archive_path", path, sec);
  c.archive_path = path;
  c.validate();
}

LocalFeatureExtractorImpl::LocalFeatureExtractorImpl(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& ch = cfg_.stage_channels;
  stem_ = register_module(
      "stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, ch[0], cfg_.stem_patch).stride(cfg_.stem_patch)));
  stem_norm_ = register_module("stem_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({ch[0]})));
  for (size_t s = 0; s < 4; ++s) {
    if (s > 0) {
      merges_[s] = register_module("merge" + std::to_string(s), PatchMerging(ch[s - 1], ch[s]));
    }
    stages_[s] = torch::nn::ModuleList();
    const auto heads = heads_for(ch[s], cfg_.head_dim);
    for (int64_t d = 0; d < cfg_.stage_depths[s]; ++d) {
      stages_[s]->push_back(WindowBlock(ch[s], heads, cfg_.attention_window));
    }
    register_module("stage" + std::to_string(s), stages_[s]);
  }
}

FeaturePyramid LocalFeatureExtractorImpl::forward(const torch::Tensor& images) {
  FeaturePyramid out;
  auto x = to_channels_last(stem_(images));
  x = stem_norm_(x);
  for (size_t s = 0; s < 3; ++s) {
    if (s > 0) x = merges_[s](x);
    for (auto& block : *stages_[s]) x = block->as<WindowBlockImpl>()->forward(x);
    out.levels[s] = to_channels_first(x);
  }
  return out;
}

void LocalFeatureExtractorImpl::freeze() {
  for (auto& p : parameters()) p.set_requires_grad(false);
  eval();
}

LocalFeatureExtractor make_backbone(const BackboneConfig& cfg) {
  torch::manual_seed(cfg.seed);
  LocalFeatureExtractor net(cfg);
  if (cfg.source == WeightSource::kArchive) import_backbone_weights(net, cfg.archive_path);
  net->freeze();
  return net;
}

void import_backbone_weights(LocalFeatureExtractor& net, const std::filesystem::path& archive) {
  const auto tensors = load_tensor_archive(archive);
  torch::NoGradGuard no_grad;
  for (auto& item : net->named_parameters()) {
    auto it = tensors.find("backbone." + item.key());
    if (it == tensors.end()) it = tensors.find(item.key());
    if (it == tensors.end()) throw ConfigError("backbone archive lacks parameter '" + item.key() + "'");
    if (it->second.sizes() != item.value().sizes()) {
      std::ostringstream ss;
      ss << "backbone parameter '" << item.key() << "' has shape " << it->second.sizes() << ", expected "
         << item.value().sizes();
      throw ConfigError(ss.str());
    }
    item.value().copy_(it->second);
  }
}

FeaturePyramid extract_features(const torch::Tensor& batch, LocalFeatureExtractor& net) {
  if (batch.dim() != 4 || batch.size(1) != 3) {
    std::ostringstream ss;
    ss << "image batch must be B x 3 x H x W, got " << batch.sizes();
    throw ConfigError(ss.str());
  }
  const auto m = net->config().input_multiple();
  if (batch.size(2) % m != 0 || batch.size(3) % m != 0) {
    throw ConfigError("input resolution " + std::to_string(batch.size(2)) + "x" + std::to_string(batch.size(3)) +
                      " is not divisible by " + std::to_string(m));
  }
  if (!torch::isfinite(batch).all().item<bool>()) throw NumericFault("image batch contains non-finite values");
  torch::NoGradGuard no_grad;
  auto out = net->forward(batch);
  if (!out.all_finite()) throw NumericFault("local feature extractor produced non-finite features");
  return out;
}

std::string parameter_digest(const torch::nn::Module& module) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& item : module.named_parameters()) {
    mix(item.key().data(), item.key().size());
    auto t = item.value().detach().contiguous().cpu();
    mix(t.data_ptr(), static_cast<size_t>(t.numel()) * t.element_size());
  }
  for (const auto& item : module.named_buffers()) {
    mix(item.key().data(), item.key().size());
    auto t = item.value().detach().contiguous().cpu();
    mix(t.data_ptr(), static_cast<size_t>(t.numel()) * t.element_size());
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

}  // namespace glcf
