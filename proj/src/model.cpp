#include "glcf/model.hpp"

#include <sstream>

#include "glcf/errors.hpp"

namespace glcf {

void ModelConfig::validate() const {
  backbone.validate();
  bottleneck.validate();
  heads.validate();
  const auto m = backbone.input_multiple();
  if (resolution <= 0 || resolution % m != 0) {
    throw ConfigError("resolution " + std::to_string(resolution) + " must be a positive multiple of " +
                      std::to_string(m));
  }
  const auto shapes = backbone.level_shapes(resolution, resolution);
  for (int i = 0; i < 3; ++i) {
    const auto p = bottleneck.patch_sizes[i];
    if (shapes[i][0] % p != 0 || shapes[i][0] / p != shapes[2][0]) {
      throw ConfigError("patch size " + std::to_string(p) + " does not map level " + std::to_string(i + 1) +
                        " onto the stage-3 grid");
    }
  }
}

std::array<int64_t, 2> ModelConfig::token_grid() const {
  const auto shapes = backbone.level_shapes(resolution, resolution);
  return shapes[2];
}

GlcfModelImpl::GlcfModelImpl(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  backbone = register_module("backbone", make_backbone(cfg_.backbone));
  torch::manual_seed(init_seed);
  const auto grid = cfg_.token_grid();
  const auto& ch = cfg_.backbone.stage_channels;
  bottleneck = register_module("bottleneck", SemanticBottleneck(std::array<int64_t, 3>{ch[0], ch[1], ch[2]},
                                                                cfg_.bottleneck, grid));
  phi_g = register_module("phi_g", PyramidDecoder(cfg_.bottleneck.dim, cfg_.backbone, cfg_.heads, grid));
  psi_l = register_module("psi_l", PyramidDecoder(cfg_.bottleneck.dim, cfg_.backbone, cfg_.heads, grid));
  psi_g = register_module("psi_g", PyramidDecoder(cfg_.bottleneck.dim, cfg_.backbone, cfg_.heads, grid));

  // Linear layers of the trainable part: truncated normal (std 0.02), zero bias.
  torch::NoGradGuard no_grad;
  const std::vector<std::shared_ptr<torch::nn::Module>> trainable{bottleneck.ptr(), phi_g.ptr(), psi_l.ptr(),
                                                                   psi_g.ptr()};
  for (const auto& m : trainable) {
    for (const auto& sub : m->modules(/*include_self=*/false)) {
      if (auto* lin = sub->as<torch::nn::LinearImpl>()) {
        lin->weight.normal_(0.0, 0.02).clamp_(-0.04, 0.04);
        if (lin->bias.defined()) torch::nn::init::zeros_(lin->bias);
      }
    }
  }
}

GlcfOutputs GlcfModelImpl::forward_features(const FeaturePyramid& local) {
  GlcfOutputs out;
  out.local = local;
  out.bottleneck = bottleneck->forward(local);
  out.global = phi_g(out.bottleneck.theta);
  out.local_est = psi_l(out.bottleneck.omega);
  out.global_est = psi_g(out.bottleneck.omega);
  return out;
}

GlcfOutputs GlcfModelImpl::forward(const torch::Tensor& images) { return forward_features(local_features(images)); }

std::vector<torch::Tensor> GlcfModelImpl::trainable_parameters() const {
  std::vector<torch::Tensor> out;
  for (auto& [_, p] : trainable_state()) out.push_back(p);
  return out;
}

TensorMap GlcfModelImpl::trainable_state() const {
  TensorMap out;
  for (const auto& item : named_parameters()) {
    for (const char* prefix : kTrainablePrefixes) {
      if (item.key().rfind(prefix, 0) == 0) out.emplace(item.key(), item.value());
    }
  }
  return out;
}

void GlcfModelImpl::load_trainable_state(const TensorMap& tensors) {
  torch::NoGradGuard no_grad;
  for (auto& [name, param] : trainable_state()) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ContractError("checkpoint lacks parameter '" + name + "'");
    if (it->second.sizes() != param.sizes()) {
      std::ostringstream ss;
      ss << "checkpoint parameter '" << name << "' has shape " << it->second.sizes() << ", model expects "
         << param.sizes();
      throw ContractError(ss.str());
    }
    param.copy_(it->second);
  }
}

}  // namespace glcf
