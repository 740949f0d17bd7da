// SPDX-License-Identifier: Apache-2.0
//
// Plain ViT encoder: pre-norm blocks of multi-head self-attention and a GELU
// MLP, each wrapped in a residual connection, followed by a final LayerNorm
// and a linear head on the class-token slot.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "s3f/nn.hpp"

namespace s3f {

struct BackboneConfig {
  std::string variant = "nano";
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  double ln_eps = 1e-6;

  // nano (desk-scale, 64/4/4), tiny (192/12/3), small (384/12/6), base (768/12/12).
  static BackboneConfig from_variant(const std::string& name);
  // Throws unless dim is divisible by heads and the named variants keep
  // their canonical width.
  void validate() const;
  std::size_t head_dim() const { return dim / heads; }
};

// Token tensor of shape (B, 1 + N, D); slot 0 is the class token.
template <typename T>
struct TokenSequence {
  Tensor<T> tokens;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t length() const { return tokens.dim(1); }
  std::size_t width() const { return tokens.dim(2); }
};

template <typename T>
struct AttentionParams {
  Linear<T> q, k, v, out;

  static AttentionParams init(std::size_t dim, RngStream& rng);
  void collect(const std::string& prefix, ParamList<T>& list) const;
};

template <typename T>
struct BlockParams {
  LayerNormParams<T> norm1;
  AttentionParams<T> attn;
  LayerNormParams<T> norm2;
  Linear<T> fc1;  // D -> mlp_ratio * D
  Linear<T> fc2;  // mlp_ratio * D -> D

  static BlockParams init(std::size_t dim, std::size_t mlp_ratio, RngStream& rng);
  // All projection and MLP weights zero; the block is then the identity.
  static BlockParams zeros(std::size_t dim, std::size_t mlp_ratio);
  void collect(const std::string& prefix, ParamList<T>& list) const;
};

// Blocks and the final LayerNorm.
template <typename T>
struct Backbone {
  BackboneConfig config;
  std::vector<BlockParams<T>> blocks;
  LayerNormParams<T> norm;

  static Backbone init(const BackboneConfig& config, RngStream& rng);
  void collect(ParamList<T>& list) const;
};

// Softmax attention weights (B, heads, S, S) for a (B, S, D) input.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& z, const AttentionParams<T>& p, std::size_t heads);

template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& z, const AttentionParams<T>& p, std::size_t heads);

// z + MSA(LN(z)), then + MLP(LN(.)).
template <typename T>
Tensor<T> transformer_block(const Tensor<T>& z, const BlockParams<T>& p, std::size_t heads, T eps = T(1e-6));

template <typename T>
Tensor<T> encode(const Tensor<T>& z, std::span<const BlockParams<T>> blocks, std::size_t heads, T eps = T(1e-6));

// head(LN(z[:, 0])) -> (B, K).
template <typename T>
Tensor<T> classify(const Tensor<T>& z, const LayerNormParams<T>& norm, const Linear<T>& head, T eps = T(1e-6));

// Prepend the class token (1, 1, D) to (B, N, D) tokens and add the positional
// table (1, 1 + N, D) when one is given.
template <typename T>
Tensor<T> with_class_token(const Tensor<T>& tokens, const Tensor<T>& cls_token, const Tensor<T>* pos_embed);

template <typename T>
struct PatchEmbedParams {
  Tensor<T> weight;  // (D, C, P, P)
  Tensor<T> bias;    // (D)

  std::size_t patch() const { return weight.dim(2); }
  std::size_t channels() const { return weight.dim(1); }
  std::size_t dim() const { return weight.dim(0); }
};

// Images (B, H, W, C) -> (B, 1 + HW/P^2, D) with class token and positional
// table applied. H and W must be divisible by P.
template <typename T>
TokenSequence<T> patch_embed_2d(const Tensor<T>& images, const PatchEmbedParams<T>& p, const Tensor<T>& cls_token,
                                const Tensor<T>& pos_embed);

// The 2D image classifier used as teacher for knowledge retention.
template <typename T>
struct Vit2D {
  std::size_t image_size = 224;
  PatchEmbedParams<T> patch_embed;
  Tensor<T> cls_token;  // (1, 1, D)
  Tensor<T> pos_embed;  // (1, 1 + N, D)
  Backbone<T> backbone;
  Linear<T> head;

  static Vit2D init(const BackboneConfig& config, std::size_t image_size, std::size_t patch, std::size_t channels,
                    std::size_t classes, RngStream& rng);
  std::size_t grid() const { return image_size / patch_embed.patch(); }
  // Logits (B, K) for images (B, H, W, C).
  Tensor<T> forward(const Tensor<T>& images) const;
  // Same tokenizer, norm and head, but the given blocks.
  Tensor<T> forward_with_blocks(const Tensor<T>& images, std::span<const BlockParams<T>> blocks) const;
  void collect(ParamList<T>& list) const;
};

}  // namespace s3f
