#include "glcf/bottleneck.hpp"

#include "glcf/errors.hpp"
#include "glcf/json_util.hpp"

namespace glcf {

using torch::indexing::Slice;

std::string to_string(SamVariant v) {
  switch (v) {
    case SamVariant::kPS: return "PS";
    case SamVariant::kPGS: return "PGS";
    case SamVariant::kPSS: return "PSS";
    case SamVariant::kNoSam: return "no-SAM";
  }
  return "?";
}

SamVariant parse_sam_variant(const std::string& s) {
  if (s == "PS") return SamVariant::kPS;
  if (s == "PGS") return SamVariant::kPGS;
  if (s == "PSS") return SamVariant::kPSS;
  if (s == "no-SAM") return SamVariant::kNoSam;
  throw ConfigError("unknown SAM variant '" + s + "' (expected PS, PGS, PSS or no-SAM)");
}

void BottleneckConfig::validate() const {
  if (dim <= 0) throw ConfigError("bottleneck.dim must be positive");
  if (depth < 0 || depth % 2 != 0) throw ConfigError("bottleneck.depth must be even and non-negative");
  if (heads <= 0 || dim % heads != 0) throw ConfigError("bottleneck.dim must be divisible by bottleneck.heads");
  for (auto p : patch_sizes) {
    if (p <= 0) throw ConfigError("bottleneck.patch_sizes must be positive");
  }
}

void to_json(nlohmann::json& j, const BottleneckConfig& c) {
  j = nlohmann::json{{"dim", c.dim},
                     {"depth", c.depth},
                     {"heads", c.heads},
                     {"variant", to_string(c.variant)},
                     {"patch_sizes", c.patch_sizes},
                     {"multiscale_embedding", c.multiscale_embedding},
                     {"enabled", c.enabled},
                     {"mask_semantic_decoder", c.mask_semantic_decoder}};
}

void from_json(const nlohmann::json& j, BottleneckConfig& c) {
  const std::string sec = "bottleneck";
  json_util::reject_unknown(j,
                            {"dim", "depth", "heads", "variant", "patch_sizes", "multiscale_embedding", "enabled",
                             "mask_semantic_decoder"},
                            sec);
  json_util::read(j, "dim", c.dim, sec);
  json_util::read(j, "depth", c.depth, sec);
  json_util::read(j, "heads", c.heads, sec);
  std::string variant = to_string(c.variant);
  json_util::read(j, "variant", variant, sec);
  c.variant = parse_sam_variant(variant);
  json_util::read(j, "patch_sizes", c.patch_sizes, sec);
  json_util::read(j, "multiscale_embedding", c.multiscale_embedding, sec);
  json_util::read(j, "enabled", c.enabled, sec);
  json_util::read(j, "mask_semantic_decoder", c.mask_semantic_decoder, sec);
  c.validate();
}

// ---------------------------------------------------------------------------
// MS-PEM

MsPemImpl::MsPemImpl(const std::array<int64_t, 3>& channels, const BottleneckConfig& cfg, std::array<int64_t, 2> grid)
    : patch_sizes_(cfg.patch_sizes), grid_(grid), multiscale_(cfg.multiscale_embedding && cfg.enabled) {
  for (int i = 0; i < 3; ++i) {
    if (!multiscale_ && i < 2) continue;
    auto opts = torch::nn::Conv2dOptions(channels[i], cfg.dim, patch_sizes_[i]).stride(patch_sizes_[i]);
    proj_[i] = register_module("proj" + std::to_string(i + 1), torch::nn::Conv2d(opts));
    torch::nn::init::zeros_(proj_[i]->bias);
  }
  pos_ = register_parameter("pos", torch::randn({1, grid[0] * grid[1], cfg.dim}) * 0.02);
}

TokenGrid MsPemImpl::forward(const FeaturePyramid& pyramid) {
  TokenGrid out;
  out.grid_shape = grid_;
  torch::Tensor sum;
  for (int i = 0; i < 3; ++i) {
    if (proj_[i].is_empty()) continue;
    const auto& level = pyramid.levels[i];
    const auto p = patch_sizes_[i];
    if (level.size(2) % p != 0 || level.size(3) % p != 0 || level.size(2) / p != grid_[0] ||
        level.size(3) / p != grid_[1]) {
      throw ConfigError("pyramid level " + std::to_string(i + 1) + " (" + std::to_string(level.size(2)) + "x" +
                        std::to_string(level.size(3)) + ") does not tile into the " + std::to_string(grid_[0]) + "x" +
                        std::to_string(grid_[1]) + " token grid with patch size " + std::to_string(p));
    }
    auto seq = proj_[i](level).flatten(2).transpose(1, 2);  // B x N x D
    sum = sum.defined() ? sum + seq : seq;
  }
  out.tokens = sum + pos_;
  return out;
}

// ---------------------------------------------------------------------------
// SAM

std::array<int64_t, 2> SemanticAggregationImpl::sequence_lengths(SamVariant v, int64_t n) {
  switch (v) {
    case SamVariant::kPS: return {2 * n, 2 * n};
    case SamVariant::kPGS: return {n + 1, 2 * n + 1};
    case SamVariant::kPSS: return {2 * n, 3 * n};
    case SamVariant::kNoSam: return {n, n};
  }
  return {n, n};
}

SemanticAggregationImpl::SemanticAggregationImpl(const BottleneckConfig& cfg, int64_t tokens) : cfg_(cfg), n_(tokens) {
  encoder_ = register_module("encoder", torch::nn::ModuleList());
  decoder_ = register_module("decoder", torch::nn::ModuleList());
  for (int64_t i = 0; i < cfg.depth / 2; ++i) {
    encoder_->push_back(TransformerBlock(cfg.dim, cfg.heads));
    decoder_->push_back(TransformerBlock(cfg.dim, cfg.heads));
  }
  switch (cfg.variant) {
    case SamVariant::kPS:
      semantic_a_ = register_parameter("semantic", torch::randn({1, n_, cfg.dim}) * 0.02);
      break;
    case SamVariant::kPGS:
      semantic_a_ = register_parameter("global_token", torch::randn({1, 1, cfg.dim}) * 0.02);
      semantic_b_ = register_parameter("semantic_decoder", torch::randn({1, n_, cfg.dim}) * 0.02);
      break;
    case SamVariant::kPSS:
      semantic_a_ = register_parameter("semantic_encoder", torch::randn({1, n_, cfg.dim}) * 0.02);
      semantic_b_ = register_parameter("semantic_decoder", torch::randn({1, n_, cfg.dim}) * 0.02);
      break;
    case SamVariant::kNoSam:
      break;
  }
}

torch::Tensor SemanticAggregationImpl::run(torch::nn::ModuleList& blocks, torch::Tensor x,
                                           const std::optional<torch::Tensor>& blocked) {
  for (auto& b : *blocks) x = b->as<TransformerBlockImpl>()->forward(x, blocked);
  return x;
}

BottleneckOutput SemanticAggregationImpl::forward(const TokenGrid& grid, const torch::Tensor& pos) {
  const auto& patch = grid.tokens;
  const auto B = patch.size(0);
  const auto n = n_;
  if (patch.size(1) != n) {
    throw ConfigError("token grid has " + std::to_string(patch.size(1)) + " tokens, SAM was built for " +
                      std::to_string(n));
  }
  auto expand = [B](const torch::Tensor& t) { return t.expand({B, t.size(1), t.size(2)}); };

  // Decoder mask: the first n rows (semantic queries) may not read the last n
  // columns (patch latents).
  auto make_mask = [&](int64_t len) -> std::optional<torch::Tensor> {
    if (!cfg_.mask_semantic_decoder || cfg_.variant == SamVariant::kNoSam) return std::nullopt;
    auto m = torch::zeros({len, len}, torch::TensorOptions().dtype(torch::kBool).device(patch.device()));
    m.index_put_({Slice(0, n), Slice(len - n, len)}, true);
    return m;
  };

  BottleneckOutput out;
  switch (cfg_.variant) {
    case SamVariant::kPS: {
      auto enc = run(encoder_, torch::cat({expand(semantic_a_ + pos), patch}, 1), std::nullopt);
      auto dec = run(decoder_, enc, make_mask(2 * n));
      out.theta = dec.slice(1, 0, n);
      out.omega = dec.slice(1, n, 2 * n);
      break;
    }
    case SamVariant::kPGS: {
      auto enc = run(encoder_, torch::cat({expand(semantic_a_), patch}, 1), std::nullopt);
      auto dec = run(decoder_, torch::cat({expand(semantic_b_ + pos), enc}, 1), make_mask(2 * n + 1));
      out.theta = dec.slice(1, 0, n);
      out.omega = dec.slice(1, n + 1, 2 * n + 1);
      break;
    }
    case SamVariant::kPSS: {
      auto enc = run(encoder_, torch::cat({expand(semantic_a_ + pos), patch}, 1), std::nullopt);
      auto dec = run(decoder_, torch::cat({expand(semantic_b_ + pos), enc}, 1), make_mask(3 * n));
      out.theta = dec.slice(1, 0, n);
      out.omega = dec.slice(1, 2 * n, 3 * n);
      break;
    }
    case SamVariant::kNoSam: {
      auto dec = run(decoder_, run(encoder_, patch, std::nullopt), std::nullopt);
      out.theta = dec;
      out.omega = dec;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bottleneck

SemanticBottleneckImpl::SemanticBottleneckImpl(const std::array<int64_t, 3>& channels, const BottleneckConfig& cfg,
                                               std::array<int64_t, 2> grid)
    : cfg_(cfg), grid_(grid) {
  cfg_.validate();
  pem_ = register_module("pem", MsPem(channels, cfg_, grid));
  if (cfg_.enabled) sam_ = register_module("sam", SemanticAggregation(cfg_, grid[0] * grid[1]));
}

TokenGrid SemanticBottleneckImpl::embed(const FeaturePyramid& pyramid) { return pem_(pyramid); }

BottleneckOutput SemanticBottleneckImpl::aggregate(const TokenGrid& grid) {
  if (sam_.is_empty()) return {grid.tokens, grid.tokens};
  auto out = sam_(grid, pem_->position());
  if (!torch::isfinite(out.theta).all().item<bool>() || !torch::isfinite(out.omega).all().item<bool>()) {
    throw NumericFault("semantic aggregation produced non-finite values");
  }
  return out;
}

TokenGrid ms_pem_embed(const FeaturePyramid& pyramid, SemanticBottleneck& bottleneck) {
  return bottleneck->embed(pyramid);
}

BottleneckOutput sam_forward(const TokenGrid& grid, SemanticBottleneck& bottleneck) {
  return bottleneck->aggregate(grid);
}

int64_t bottleneck_parameter_count(const BottleneckConfig& cfg, const std::array<int64_t, 3>& channels, int64_t tokens) {
  const int64_t D = cfg.dim;
  int64_t count = tokens * D;  // position encoding
  const bool multiscale = cfg.multiscale_embedding && cfg.enabled;
  for (int i = 0; i < 3; ++i) {
    if (!multiscale && i < 2) continue;
    count += channels[i] * cfg.patch_sizes[i] * cfg.patch_sizes[i] * D + D;
  }
  if (!cfg.enabled) return count;
  count += cfg.depth * (12 * D * D + 13 * D);
  switch (cfg.variant) {
    case SamVariant::kPS: count += tokens * D; break;
    case SamVariant::kPGS: count += D + tokens * D; break;
    case SamVariant::kPSS: count += 2 * tokens * D; break;
    case SamVariant::kNoSam: break;
  }
  return count;
}

}  // namespace glcf
