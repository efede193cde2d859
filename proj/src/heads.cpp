#include "glcf/heads.hpp"

#include "glcf/errors.hpp"
#include "glcf/json_util.hpp"

namespace glcf {

void DecoderConfig::validate() const {
  for (auto d : stage_depths) {
    if (d < 0) throw ConfigError("heads.stage_depths must be non-negative");
  }
}

void to_json(nlohmann::json& j, const DecoderConfig& c) {
  j = nlohmann::json{{"stage_depths", c.stage_depths},
                     {"block", c.block == DecoderBlockKind::kConvolution ? "conv" : "window_attention"}};
}

void from_json(const nlohmann::json& j, DecoderConfig& c) {
  const std::string sec = "heads";
  json_util::reject_unknown(j, {"stage_depths", "block"}, sec);
  json_util::read(j, "stage_depths", c.stage_depths, sec);
  std::string block = c.block == DecoderBlockKind::kConvolution ? "conv" : "window_attention";
  json_util::read(j, "block", block, sec);
  if (block == "conv") {
    c.block = DecoderBlockKind::kConvolution;
  } else if (block == "window_attention") {
    c.block = DecoderBlockKind::kWindowAttention;
  } else {
    throw ConfigError("heads.block must be 'window_attention' or 'conv'");
  }
  c.validate();
}

torch::Tensor upsample2x(const torch::Tensor& bhwc) {
  return bhwc.repeat_interleave(2, 1).repeat_interleave(2, 2);
}

PyramidDecoderImpl::PyramidDecoderImpl(int64_t token_dim, const BackboneConfig& backbone, const DecoderConfig& cfg,
                                       std::array<int64_t, 2> grid)
    : grid_(grid) {
  cfg.validate();
  const auto& ch = backbone.stage_channels;
  in_proj_ = register_module("in_proj", torch::nn::Linear(token_dim, ch[2]));
  up_proj_[0] = register_module("up_proj2", torch::nn::Linear(ch[2], ch[1]));
  up_proj_[1] = register_module("up_proj1", torch::nn::Linear(ch[1], ch[0]));
  for (int s = 0; s < 3; ++s) {
    const auto c = ch[2 - s];
    stages_[s] = torch::nn::ModuleList();
    for (int64_t d = 0; d < cfg.stage_depths[s]; ++d) {
      if (cfg.block == DecoderBlockKind::kConvolution) {
        stages_[s]->push_back(ConvBlock(c));
      } else {
        stages_[s]->push_back(WindowBlock(c, heads_for(c, backbone.head_dim), backbone.attention_window));
      }
    }
    register_module("stage" + std::to_string(3 - s), stages_[s]);
  }
}

torch::Tensor PyramidDecoderImpl::run_stage(int stage, torch::Tensor x) {
  for (auto& b : *stages_[stage]) {
    if (auto* w = b->as<WindowBlockImpl>()) {
      x = w->forward(x);
    } else {
      x = b->as<ConvBlockImpl>()->forward(x);
    }
  }
  return x;
}

FeaturePyramid PyramidDecoderImpl::forward(const torch::Tensor& tokens) {
  const auto B = tokens.size(0);
  if (tokens.dim() != 3 || tokens.size(1) != grid_[0] * grid_[1]) {
    throw ConfigError("decoder expects " + std::to_string(grid_[0] * grid_[1]) + " tokens, got " +
                      std::to_string(tokens.dim() == 3 ? tokens.size(1) : -1));
  }
  FeaturePyramid out;
  auto x = in_proj_(tokens).reshape({B, grid_[0], grid_[1], -1});
  x = run_stage(0, x);
  out.levels[2] = to_channels_first(x);
  x = run_stage(1, up_proj_[0](upsample2x(x)));
  out.levels[1] = to_channels_first(x);
  x = run_stage(2, up_proj_[1](upsample2x(x)));
  out.levels[0] = to_channels_first(x);
  return out;
}

FeaturePyramid decode_pyramid(const torch::Tensor& tokens, PyramidDecoder& decoder) { return decoder(tokens); }

}  // namespace glcf
