#pragma once

#include <torch/torch.h>

#include <array>
#include <optional>
#include <string>

#include <json.hpp>

#include "glcf/backbone.hpp"
#include "glcf/layers.hpp"

namespace glcf {

// How the semantic aggregation module wires its learnable token sets.
//   kPS    encoder [S; patch]        decoder [S'; patch']
//   kPGS   encoder [g; patch]        decoder [S; g'; patch']
//   kPSS   encoder [S1; patch]       decoder [S2; S1'; patch']
//   kNoSam plain encoder/decoder over the patch tokens; theta == omega
enum class SamVariant { kPS, kPGS, kPSS, kNoSam };

std::string to_string(SamVariant v);
SamVariant parse_sam_variant(const std::string& s);

struct BottleneckConfig {
  int64_t dim = 64;
  int64_t depth = 6;  // split evenly between encoder and decoder
  int64_t heads = 4;
  SamVariant variant = SamVariant::kPSS;
  std::array<int64_t, 3> patch_sizes{4, 2, 1};
  bool multiscale_embedding = true;     // false: embed only the deepest level
  bool enabled = true;                  // false: no semantic bottleneck at all
  bool mask_semantic_decoder = false;   // semantic queries may not read patch latents in the decoder

  void validate() const;
};

void to_json(nlohmann::json& j, const BottleneckConfig& c);
void from_json(const nlohmann::json& j, BottleneckConfig& c);

struct TokenGrid {
  torch::Tensor tokens;  // B x N x D
  std::array<int64_t, 2> grid_shape{};
  int64_t size() const { return grid_shape[0] * grid_shape[1]; }
};

struct BottleneckOutput {
  torch::Tensor theta;  // global semantic representation, B x N x D
  torch::Tensor omega;  // original patch representation, B x N x D
};

// Multi-scale patch embedding: level i is cut into patch_sizes[i] patches, each
// projected to D; the equal-length sequences are summed and a learnable position
// encoding is added.
class MsPemImpl : public torch::nn::Module {
 public:
  MsPemImpl(const std::array<int64_t, 3>& channels, const BottleneckConfig& cfg, std::array<int64_t, 2> grid);
  TokenGrid forward(const FeaturePyramid& pyramid);
  const torch::Tensor& position() const { return pos_; }

 private:
  std::array<int64_t, 3> patch_sizes_;
  std::array<int64_t, 2> grid_;
  bool multiscale_;
  std::array<torch::nn::Conv2d, 3> proj_{nullptr, nullptr, nullptr};
  torch::Tensor pos_;
};
TORCH_MODULE(MsPem);

class SemanticAggregationImpl : public torch::nn::Module {
 public:
  SemanticAggregationImpl(const BottleneckConfig& cfg, int64_t tokens);

  // `pos` is the patch position encoding (1 x N x D), shared with every spatial
  // semantic token set.
  BottleneckOutput forward(const TokenGrid& grid, const torch::Tensor& pos);

  // Sequence lengths seen by the encoder and the decoder for N patch tokens.
  static std::array<int64_t, 2> sequence_lengths(SamVariant v, int64_t n);

 private:
  torch::Tensor run(torch::nn::ModuleList& blocks, torch::Tensor x, const std::optional<torch::Tensor>& blocked);

  BottleneckConfig cfg_;
  int64_t n_;
  torch::nn::ModuleList encoder_, decoder_;
  torch::Tensor semantic_a_;  // S / S1 (spatial) or g (global, 1 token)
  torch::Tensor semantic_b_;  // decoder-side spatial tokens (PGS: S, PSS: S2)
};
TORCH_MODULE(SemanticAggregation);

class SemanticBottleneckImpl : public torch::nn::Module {
 public:
  SemanticBottleneckImpl(const std::array<int64_t, 3>& channels, const BottleneckConfig& cfg,
                         std::array<int64_t, 2> grid);

  TokenGrid embed(const FeaturePyramid& pyramid);
  BottleneckOutput aggregate(const TokenGrid& grid);
  BottleneckOutput forward(const FeaturePyramid& pyramid) { return aggregate(embed(pyramid)); }

  const BottleneckConfig& config() const { return cfg_; }
  std::array<int64_t, 2> grid() const { return grid_; }

 private:
  BottleneckConfig cfg_;
  std::array<int64_t, 2> grid_;
  MsPem pem_{nullptr};
  SemanticAggregation sam_{nullptr};
};
TORCH_MODULE(SemanticBottleneck);

// Free-function forms of the two bottleneck stages.
TokenGrid ms_pem_embed(const FeaturePyramid& pyramid, SemanticBottleneck& bottleneck);
BottleneckOutput sam_forward(const TokenGrid& grid, SemanticBottleneck& bottleneck);

// Closed-form trainable parameter count for the bottleneck.
int64_t bottleneck_parameter_count(const BottleneckConfig& cfg, const std::array<int64_t, 3>& channels, int64_t tokens);

}  // namespace glcf
