#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "glcf/layers.hpp"

namespace glcf {

// Three-level feature pyramid; level i (0-based) is B x C_i x H_i x W_i and each
// level halves the resolution of the previous one.
struct FeaturePyramid {
  std::array<torch::Tensor, 3> levels;

  torch::Tensor& operator[](size_t i) { return levels[i]; }
  const torch::Tensor& operator[](size_t i) const { return levels[i]; }

  FeaturePyramid detach() const;
  FeaturePyramid to(torch::Dtype dtype) const;
  FeaturePyramid slice(int64_t begin, int64_t end) const;  // batch rows [begin, end)
  bool all_finite() const;
  static FeaturePyramid cat(const std::vector<FeaturePyramid>& parts);
};

// Throws ContractError when the pyramids differ in any level shape.
void require_same_shape(const FeaturePyramid& a, const FeaturePyramid& b, const char* what);

enum class WeightSource { kRandomFrozen, kArchive };

struct BackboneConfig {
  int64_t stem_patch = 4;
  std::array<int64_t, 4> stage_channels{32, 64, 128, 256};
  std::array<int64_t, 4> stage_depths{1, 1, 2, 1};
  int64_t attention_window = 4;
  int64_t head_dim = 32;
  WeightSource source = WeightSource::kRandomFrozen;
  uint64_t seed = 7;
  std::filesystem::path archive_path;

  void validate() const;
  // Required divisor of the input height/width so stages 1-3 (and the 4:2:1
  // multi-scale patch embedding on top of them) tile exactly.
  int64_t input_multiple() const { return 4 * stem_patch; }
  std::array<std::array<int64_t, 2>, 3> level_shapes(int64_t height, int64_t width) const;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
// Strict: unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, BackboneConfig& c);

// Frozen hierarchical window-attention encoder: patchify stem, then four stages
// separated by patch merging. Only stages 1-3 are evaluated; stage 4 exists so
// externally trained four-stage weights import without renaming.
class LocalFeatureExtractorImpl : public torch::nn::Module {
 public:
  explicit LocalFeatureExtractorImpl(const BackboneConfig& cfg);

  FeaturePyramid forward(const torch::Tensor& images);
  const BackboneConfig& config() const { return cfg_; }

  // Disables gradients and switches to inference mode; idempotent.
  void freeze();

 private:
  BackboneConfig cfg_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::LayerNorm stem_norm_{nullptr};
  std::array<torch::nn::ModuleList, 4> stages_;
  std::array<PatchMerging, 4> merges_{nullptr, nullptr, nullptr, nullptr};  // merges_[0] unused
};
TORCH_MODULE(LocalFeatureExtractor);

// Builds a frozen extractor from the configured weight source. Random-frozen
// initialisation is a pure function of the seed.
LocalFeatureExtractor make_backbone(const BackboneConfig& cfg);

// Copies every parameter from a TensorArchive; names may carry a "backbone."
// prefix. Missing names or shape mismatches raise ConfigError.
void import_backbone_weights(LocalFeatureExtractor& net, const std::filesystem::path& archive);

// Validates the batch, runs the frozen network without autograd and checks the
// result. Non-divisible resolution -> ConfigError; non-finite output -> NumericFault.
FeaturePyramid extract_features(const torch::Tensor& batch, LocalFeatureExtractor& net);

// Hex FNV-1a digest over parameter names and raw bytes.
std::string parameter_digest(const torch::nn::Module& module);

}  // namespace glcf
