// SPDX-License-Identifier: Apache-2.0
#include "s3f/vit.hpp"

#include <cmath>

namespace s3f {

BackboneConfig BackboneConfig::from_variant(const std::string& name) {
  BackboneConfig c;
  c.variant = name;
  if (name == "nano") {
    c.dim = 64, c.depth = 4, c.heads = 4;
  } else if (name == "tiny") {
    c.dim = 192, c.depth = 12, c.heads = 3;
  } else if (name == "small") {
    c.dim = 384, c.depth = 12, c.heads = 6;
  } else if (name == "base") {
    c.dim = 768, c.depth = 12, c.heads = 12;
  } else {
    throw Error("backbone", "unknown variant '" + name + "' (expected nano, tiny, small or base)");
  }
  return c;
}

void BackboneConfig::validate() const {
  check(dim > 0 && heads > 0 && depth > 0, "backbone", "dim, heads and depth must be positive");
  check(dim % heads == 0, "backbone",
        "dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  if (variant == "tiny") check(dim == 192, "backbone", "tiny requires dim 192");
  if (variant == "small") check(dim == 384, "backbone", "small requires dim 384");
  if (variant == "base") check(dim == 768, "backbone", "base requires dim 768");
}

template <typename T>
AttentionParams<T> AttentionParams<T>::init(std::size_t dim, RngStream& rng) {
  return {Linear<T>::init(dim, dim, 0.02, rng), Linear<T>::init(dim, dim, 0.02, rng),
          Linear<T>::init(dim, dim, 0.02, rng), Linear<T>::init(dim, dim, 0.02, rng)};
}

template <typename T>
void AttentionParams<T>::collect(const std::string& prefix, ParamList<T>& list) const {
  q.collect(prefix + ".q", list);
  k.collect(prefix + ".k", list);
  v.collect(prefix + ".v", list);
  out.collect(prefix + ".out", list);
}

template <typename T>
BlockParams<T> BlockParams<T>::init(std::size_t dim, std::size_t mlp_ratio, RngStream& rng) {
  BlockParams p;
  p.norm1 = LayerNormParams<T>::init(dim);
  p.attn = AttentionParams<T>::init(dim, rng);
  p.norm2 = LayerNormParams<T>::init(dim);
  p.fc1 = Linear<T>::init(dim, dim * mlp_ratio, 0.02, rng);
  p.fc2 = Linear<T>::init(dim * mlp_ratio, dim, 0.02, rng);
  return p;
}

template <typename T>
BlockParams<T> BlockParams<T>::zeros(std::size_t dim, std::size_t mlp_ratio) {
  BlockParams p;
  p.norm1 = LayerNormParams<T>::init(dim);
  p.attn = {Linear<T>::zeros(dim, dim), Linear<T>::zeros(dim, dim), Linear<T>::zeros(dim, dim),
            Linear<T>::zeros(dim, dim)};
  p.norm2 = LayerNormParams<T>::init(dim);
  p.fc1 = Linear<T>::zeros(dim, dim * mlp_ratio);
  p.fc2 = Linear<T>::zeros(dim * mlp_ratio, dim);
  return p;
}

template <typename T>
void BlockParams<T>::collect(const std::string& prefix, ParamList<T>& list) const {
  attn.collect(prefix + ".attn", list);
  fc1.collect(prefix + ".mlp.fc1", list);
  fc2.collect(prefix + ".mlp.fc2", list);
  norm1.collect(prefix + ".norm1", list);
  norm2.collect(prefix + ".norm2", list);
}

template <typename T>
Backbone<T> Backbone<T>::init(const BackboneConfig& config, RngStream& rng) {
  config.validate();
  Backbone b;
  b.config = config;
  for (std::size_t i = 0; i < config.depth; ++i) b.blocks.push_back(BlockParams<T>::init(config.dim, config.mlp_ratio, rng));
  b.norm = LayerNormParams<T>::init(config.dim);
  return b;
}

template <typename T>
void Backbone<T>::collect(ParamList<T>& list) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("blocks." + std::to_string(i), list);
  norm.collect("norm", list);
}

namespace {

// (B, S, D) -> (B, H, S, D/H)
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const std::size_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {b, s, heads, d / heads}), {0, 2, 1, 3});
}

template <typename T>
void check_attention_input(const Tensor<T>& z, const AttentionParams<T>& p, std::size_t heads) {
  check(z.rank() == 3, "attention", "expected (B, S, D) tokens, got " + shape_str(z.shape()));
  const std::size_t d = z.dim(2);
  check(heads > 0 && d % heads == 0, "attention",
        "width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  for (const Linear<T>* l : {&p.q, &p.k, &p.v, &p.out})
    check(l->in_features() == d && l->out_features() == d, "attention",
          "projection " + shape_str(l->weight.shape()) + " does not map width " + std::to_string(d));
}

}  // namespace

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& z, const AttentionParams<T>& p, std::size_t heads) {
  check_attention_input(z, p, heads);
  const std::size_t dh = z.dim(2) / heads;
  auto q = split_heads(p.q(z), heads);
  auto kt = transpose(split_heads(p.k(z), heads), -1, -2);
  return softmax(scale(matmul(q, kt), T(1) / std::sqrt(static_cast<T>(dh))), -1);
}

template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& z, const AttentionParams<T>& p, std::size_t heads) {
  const std::size_t b = z.dim(0), s = z.dim(1), d = z.dim(2);
  auto attn = attention_weights(z, p, heads);
  auto v = split_heads(p.v(z), heads);
  auto ctx = permute(matmul(attn, v), {0, 2, 1, 3});
  return p.out(reshape(ctx, {b, s, d}));
}

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& z, const BlockParams<T>& p, std::size_t heads, T eps) {
  auto mid = add(z, multi_head_self_attention(p.norm1(z, eps), p.attn, heads));
  return add(mid, p.fc2(gelu(p.fc1(p.norm2(mid, eps)))));
}

template <typename T>
Tensor<T> encode(const Tensor<T>& z, std::span<const BlockParams<T>> blocks, std::size_t heads, T eps) {
  check(!blocks.empty(), "encode", "at least one block is required");
  Tensor<T> x = z;
  for (const auto& b : blocks) x = transformer_block(x, b, heads, eps);
  return x;
}

template <typename T>
Tensor<T> classify(const Tensor<T>& z, const LayerNormParams<T>& norm, const Linear<T>& head, T eps) {
  check(z.rank() == 3, "classify", "expected (B, S, D) tokens");
  auto cls = reshape(slice(z, 1, 0, 1), {z.dim(0), z.dim(2)});
  return head(norm(cls, eps));
}

template <typename T>
Tensor<T> with_class_token(const Tensor<T>& tokens, const Tensor<T>& cls_token, const Tensor<T>* pos_embed) {
  check(tokens.rank() == 3, "class_token", "expected (B, N, D) tokens");
  const std::size_t b = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2);
  check(cls_token.numel() == d, "class_token", "class token width does not match " + std::to_string(d));
  auto cls = broadcast_to(reshape(cls_token, {1, 1, d}), {b, 1, d});
  auto z = concat<T>({cls, tokens}, 1);
  if (pos_embed) {
    check(pos_embed->numel() == (n + 1) * d, "class_token",
          "positional table " + shape_str(pos_embed->shape()) + " does not match " + std::to_string(n + 1) +
              " tokens of width " + std::to_string(d));
    z = add(z, reshape(*pos_embed, {1, n + 1, d}));
  }
  return z;
}

template <typename T>
TokenSequence<T> patch_embed_2d(const Tensor<T>& images, const PatchEmbedParams<T>& p, const Tensor<T>& cls_token,
                                const Tensor<T>& pos_embed) {
  check(images.rank() == 4, "patch_embed", "expected images (B, H, W, C), got " + shape_str(images.shape()));
  const std::size_t b = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  const std::size_t ps = p.patch(), d = p.dim();
  check(c == p.channels(), "patch_embed", "image has " + std::to_string(c) + " channels, embedding expects " +
                                              std::to_string(p.channels()));
  check(h % ps == 0 && w % ps == 0, "patch_embed",
        "image " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by patch size " + std::to_string(ps));
  const std::size_t gh = h / ps, gw = w / ps, n = gh * gw, flat = c * ps * ps;
  // Unfold each patch in (c, i, j) order to match the (D, C, P, P) kernel.
  std::vector<std::size_t> idx;
  idx.reserve(b * n * flat);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < ps; ++i)
            for (std::size_t j = 0; j < ps; ++j)
              idx.push_back(((bi * h + py * ps + i) * w + px * ps + j) * c + ch);
  auto patches = take(images, idx, {b, n, flat});
  auto emb = linear(patches, reshape(p.weight, {d, flat}), p.bias);
  return {with_class_token(emb, cls_token, &pos_embed)};
}

template <typename T>
Vit2D<T> Vit2D<T>::init(const BackboneConfig& config, std::size_t image_size, std::size_t patch, std::size_t channels,
                        std::size_t classes, RngStream& rng) {
  check(patch > 0 && image_size % patch == 0, "vit2d", "image size must be divisible by patch size");
  Vit2D v;
  v.image_size = image_size;
  const std::size_t d = config.dim, n = (image_size / patch) * (image_size / patch);
  v.patch_embed = {trunc_normal_param<T>({d, channels, patch, patch}, 0.02, rng), const_param<T>({d}, T(0))};
  v.cls_token = trunc_normal_param<T>({1, 1, d}, 0.02, rng);
  v.pos_embed = trunc_normal_param<T>({1, 1 + n, d}, 0.02, rng);
  v.backbone = Backbone<T>::init(config, rng);
  v.head = Linear<T>::init(d, classes, 0.02, rng);
  return v;
}

template <typename T>
Tensor<T> Vit2D<T>::forward(const Tensor<T>& images) const {
  return forward_with_blocks(images, backbone.blocks);
}

template <typename T>
Tensor<T> Vit2D<T>::forward_with_blocks(const Tensor<T>& images, std::span<const BlockParams<T>> blocks) const {
  const T eps = static_cast<T>(backbone.config.ln_eps);
  auto z0 = patch_embed_2d(images, patch_embed, cls_token, pos_embed);
  auto zl = encode(z0.tokens, blocks, backbone.config.heads, eps);
  return classify(zl, backbone.norm, head, eps);
}

template <typename T>
void Vit2D<T>::collect(ParamList<T>& list) const {
  list.emplace_back("patch_embed.weight", patch_embed.weight);
  list.emplace_back("patch_embed.bias", patch_embed.bias);
  list.emplace_back("cls_token", cls_token);
  list.emplace_back("pos_embed", pos_embed);
  backbone.collect(list);
  head.collect("head", list);
}

#define S3F_INSTANTIATE(T)                                                                                   \
  template struct AttentionParams<T>;                                                                        \
  template struct BlockParams<T>;                                                                            \
  template struct Backbone<T>;                                                                               \
  template struct Vit2D<T>;                                                                                  \
  template Tensor<T> attention_weights(const Tensor<T>&, const AttentionParams<T>&, std::size_t);            \
  template Tensor<T> multi_head_self_attention(const Tensor<T>&, const AttentionParams<T>&, std::size_t);    \
  template Tensor<T> transformer_block(const Tensor<T>&, const BlockParams<T>&, std::size_t, T);             \
  template Tensor<T> encode(const Tensor<T>&, std::span<const BlockParams<T>>, std::size_t, T);              \
  template Tensor<T> classify(const Tensor<T>&, const LayerNormParams<T>&, const Linear<T>&, T);             \
  template Tensor<T> with_class_token(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                 \
  template TokenSequence<T> patch_embed_2d(const Tensor<T>&, const PatchEmbedParams<T>&, const Tensor<T>&,   \
                                           const Tensor<T>&);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
