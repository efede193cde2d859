#pragma once

#include <torch/torch.h>

#include <optional>

namespace glcf {

struct MlpImpl : torch::nn::Module {
  MlpImpl(int64_t dim, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Mlp);

// Multi-head self-attention over B x L x D. `blocked` is an optional L x L boolean
// tensor; true entries forbid the query row from attending the key column.
struct SelfAttentionImpl : torch::nn::Module {
  SelfAttentionImpl(int64_t dim, int64_t heads);
  torch::Tensor forward(const torch::Tensor& x, const std::optional<torch::Tensor>& blocked = std::nullopt);

  int64_t heads;
  double scale;
  torch::nn::Linear qkv{nullptr}, proj{nullptr};
};
TORCH_MODULE(SelfAttention);

// Pre-norm ViT block with MLP ratio 4.
struct TransformerBlockImpl : torch::nn::Module {
  TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio = 4);
  torch::Tensor forward(const torch::Tensor& x, const std::optional<torch::Tensor>& blocked = std::nullopt);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  SelfAttention attn{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(TransformerBlock);

// Pre-norm block whose attention is restricted to non-overlapping windows of a
// B x H x W x C map. Maps that are not a multiple of the window are zero padded;
// maps smaller than the window attend globally.
struct WindowBlockImpl : torch::nn::Module {
  WindowBlockImpl(int64_t dim, int64_t heads, int64_t window, int64_t mlp_ratio = 4);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t window;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  SelfAttention attn{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(WindowBlock);

// Residual 3x3 convolution block on B x H x W x C maps; the decoder's convolution mode.
struct ConvBlockImpl : torch::nn::Module {
  explicit ConvBlockImpl(int64_t dim);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ConvBlock);

// 2x2 neighbourhood concatenation + LayerNorm + linear reduction (B x H x W x C).
struct PatchMergingImpl : torch::nn::Module {
  PatchMergingImpl(int64_t in_dim, int64_t out_dim);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear reduction{nullptr};
};
TORCH_MODULE(PatchMerging);

// Channel-last <-> channel-first helpers.
inline torch::Tensor to_channels_first(const torch::Tensor& bhwc) { return bhwc.permute({0, 3, 1, 2}).contiguous(); }
inline torch::Tensor to_channels_last(const torch::Tensor& bchw) { return bchw.permute({0, 2, 3, 1}).contiguous(); }

int64_t heads_for(int64_t channels, int64_t head_dim);

}  // namespace glcf
