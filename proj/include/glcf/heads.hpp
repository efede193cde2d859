#pragma once

#include <torch/torch.h>

#include <array>

#include <json.hpp>

#include "glcf/backbone.hpp"
#include "glcf/bottleneck.hpp"

namespace glcf {

enum class DecoderBlockKind { kWindowAttention, kConvolution };

struct DecoderConfig {
  std::array<int64_t, 3> stage_depths{1, 1, 1};  // for levels (3, 2, 1), applied deepest first
  DecoderBlockKind block = DecoderBlockKind::kWindowAttention;

  void validate() const;
};

void to_json(nlohmann::json& j, const DecoderConfig& c);
void from_json(const nlohmann::json& j, DecoderConfig& c);

// Token grid -> three-level pyramid aligned with the local feature extractor.
// Channel counts and attention layout mirror the backbone stages 3, 2, 1.
class PyramidDecoderImpl : public torch::nn::Module {
 public:
  PyramidDecoderImpl(int64_t token_dim, const BackboneConfig& backbone, const DecoderConfig& cfg,
                     std::array<int64_t, 2> grid);
  FeaturePyramid forward(const torch::Tensor& tokens);

 private:
  torch::Tensor run_stage(int stage, torch::Tensor x);

  std::array<int64_t, 2> grid_;
  torch::nn::Linear in_proj_{nullptr};
  std::array<torch::nn::Linear, 2> up_proj_{nullptr, nullptr};  // C3->C2, C2->C1
  std::array<torch::nn::ModuleList, 3> stages_;                  // deepest first
};
TORCH_MODULE(PyramidDecoder);

// Nearest-neighbour 2x upsampling of a B x H x W x C map.
torch::Tensor upsample2x(const torch::Tensor& bhwc);

FeaturePyramid decode_pyramid(const torch::Tensor& tokens, PyramidDecoder& decoder);

}  // namespace glcf
