#include "glcf/layers.hpp"

#include <algorithm>
#include <cmath>

#include "glcf/errors.hpp"

namespace glcf {

namespace F = torch::nn::functional;

MlpImpl::MlpImpl(int64_t dim, int64_t hidden) {
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }

SelfAttentionImpl::SelfAttentionImpl(int64_t dim, int64_t heads_) : heads(heads_) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  scale = 1.0 / std::sqrt(static_cast<double>(dim / heads));
  qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x, const std::optional<torch::Tensor>& blocked) {
  const auto B = x.size(0), L = x.size(1), D = x.size(2);
  const auto hd = D / heads;
  auto parts = qkv(x).reshape({B, L, 3, heads, hd}).permute({2, 0, 3, 1, 4});
  auto q = parts[0], k = parts[1], v = parts[2];
  auto logits = torch::matmul(q, k.transpose(-2, -1)) * scale;
  if (blocked) logits = logits.masked_fill(*blocked, -std::numeric_limits<double>::infinity());
  auto attn = torch::softmax(logits, -1);
  auto out = torch::matmul(attn, v).permute({0, 2, 1, 3}).reshape({B, L, D});
  return proj(out);
}

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", SelfAttention(dim, heads));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  mlp = register_module("mlp", Mlp(dim, dim * mlp_ratio));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x, const std::optional<torch::Tensor>& blocked) {
  auto y = x + attn(norm1(x), blocked);
  return y + mlp(norm2(y));
}

WindowBlockImpl::WindowBlockImpl(int64_t dim, int64_t heads, int64_t window_, int64_t mlp_ratio)
    : window(window_) {
  if (window <= 0) throw ConfigError("attention window must be positive");
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", SelfAttention(dim, heads));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  mlp = register_module("mlp", Mlp(dim, dim * mlp_ratio));
}

torch::Tensor WindowBlockImpl::forward(const torch::Tensor& x) {
  const auto B = x.size(0), H = x.size(1), W = x.size(2), C = x.size(3);
  const auto wh = std::min(window, H), ww = std::min(window, W);
  const auto Hp = (H + wh - 1) / wh * wh, Wp = (W + ww - 1) / ww * ww;

  auto y = norm1(x);
  if (Hp != H || Wp != W) y = F::pad(y, F::PadFuncOptions({0, 0, 0, Wp - W, 0, Hp - H}));
  const auto nh = Hp / wh, nw = Wp / ww;
  auto windows = y.reshape({B, nh, wh, nw, ww, C}).permute({0, 1, 3, 2, 4, 5}).reshape({B * nh * nw, wh * ww, C});
  windows = attn(windows);
  y = windows.reshape({B, nh, nw, wh, ww, C}).permute({0, 1, 3, 2, 4, 5}).reshape({B, Hp, Wp, C});
  if (Hp != H || Wp != W) y = y.index({torch::indexing::Slice(), torch::indexing::Slice(0, H), torch::indexing::Slice(0, W)});

  auto out = x + y;
  return out + mlp(norm2(out));
}

ConvBlockImpl::ConvBlockImpl(int64_t dim) {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, dim, 3).padding(1)));
  conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, dim, 3).padding(1)));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = to_channels_first(x);
  y = conv2(torch::gelu(conv1(y)));
  return x + to_channels_last(y);
}

PatchMergingImpl::PatchMergingImpl(int64_t in_dim, int64_t out_dim) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({4 * in_dim})));
  reduction = register_module("reduction", torch::nn::Linear(torch::nn::LinearOptions(4 * in_dim, out_dim).bias(false)));
}

torch::Tensor PatchMergingImpl::forward(const torch::Tensor& x) {
  using torch::indexing::None;
  using torch::indexing::Slice;
  const auto H = x.size(1), W = x.size(2);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ConfigError("patch merging needs even resolution, got " + std::to_string(H) + "x" + std::to_string(W));
  }
  auto x0 = x.index({Slice(), Slice(0, None, 2), Slice(0, None, 2)});
  auto x1 = x.index({Slice(), Slice(1, None, 2), Slice(0, None, 2)});
  auto x2 = x.index({Slice(), Slice(0, None, 2), Slice(1, None, 2)});
  auto x3 = x.index({Slice(), Slice(1, None, 2), Slice(1, None, 2)});
  return reduction(norm(torch::cat({x0, x1, x2, x3}, -1)));
}

int64_t heads_for(int64_t channels, int64_t head_dim) {
  if (head_dim <= 0) throw ConfigError("head_dim must be positive");
  const auto h = std::max<int64_t>(1, channels / head_dim);
  if (channels % h != 0) throw ConfigError("channels " + std::to_string(channels) + " not divisible into heads");
  return h;
}

}  // namespace glcf
