#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include "glcf/backbone.hpp"
#include "glcf/bottleneck.hpp"
#include "glcf/heads.hpp"
#include "glcf/tensor_archive.hpp"

namespace glcf {

struct ModelConfig {
  BackboneConfig backbone;
  BottleneckConfig bottleneck;
  DecoderConfig heads;
  int64_t resolution = 64;

  void validate() const;
  std::array<int64_t, 2> token_grid() const;
};

// Everything one forward pass produces.
struct GlcfOutputs {
  FeaturePyramid local;        // Phi_L(I), frozen target
  BottleneckOutput bottleneck;
  FeaturePyramid global;       // Phi_G(theta)
  FeaturePyramid local_est;    // Psi_L(omega)
  FeaturePyramid global_est;   // Psi_G(omega)
};

// The four sub-networks. The backbone is frozen; the bottleneck and the three
// heads are the trainable parameters and serialize under the prefixes
// "bottleneck.", "phi_g.", "psi_l.", "psi_g.".
class GlcfModelImpl : public torch::nn::Module {
 public:
  explicit GlcfModelImpl(const ModelConfig& cfg, uint64_t init_seed = 0);

  GlcfOutputs forward_features(const FeaturePyramid& local);
  GlcfOutputs forward(const torch::Tensor& images);

  FeaturePyramid local_features(const torch::Tensor& images) { return extract_features(images, backbone); }

  std::vector<torch::Tensor> trainable_parameters() const;
  TensorMap trainable_state() const;
  // Loads every trainable parameter; missing or mis-shaped entries raise ContractError.
  void load_trainable_state(const TensorMap& tensors);

  const ModelConfig& config() const { return cfg_; }

  LocalFeatureExtractor backbone{nullptr};
  SemanticBottleneck bottleneck{nullptr};
  PyramidDecoder phi_g{nullptr}, psi_l{nullptr}, psi_g{nullptr};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(GlcfModel);

inline constexpr const char* kTrainablePrefixes[] = {"bottleneck.", "phi_g.", "psi_l.", "psi_g."};

}  // namespace glcf
