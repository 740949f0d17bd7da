// SPDX-License-Identifier: Apache-2.0
#include "s3f/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace s3f {

template <typename T>
Tensor<T> resample_grid(const Tensor<T>& grid, std::size_t th, std::size_t tw) {
  check(grid.rank() == 3, "resample", "expected (gh, gw, D) grid, got " + shape_str(grid.shape()));
  check(th > 0 && tw > 0, "resample", "target grid must be non-empty");
  const std::size_t gh = grid.dim(0), gw = grid.dim(1), d = grid.dim(2);
  const auto src = grid.data();
  std::vector<T> out(th * tw * d);
  auto coord = [](std::size_t i, std::size_t from, std::size_t to, std::size_t& i0, std::size_t& i1, T& f) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(from) / static_cast<double>(to) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(from - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, from - 1);
    f = static_cast<T>(s - static_cast<double>(i0));
  };
  for (std::size_t y = 0; y < th; ++y) {
    std::size_t y0, y1;
    T fy;
    coord(y, gh, th, y0, y1, fy);
    for (std::size_t x = 0; x < tw; ++x) {
      std::size_t x0, x1;
      T fx;
      coord(x, gw, tw, x0, x1, fx);
      for (std::size_t c = 0; c < d; ++c) {
        const T a = src[(y0 * gw + x0) * d + c], b = src[(y0 * gw + x1) * d + c];
        const T e = src[(y1 * gw + x0) * d + c], g = src[(y1 * gw + x1) * d + c];
        const T top = a + fx * (b - a);
        const T bottom = e + fx * (g - e);
        out[(y * tw + x) * d + c] = top + fy * (bottom - top);
      }
    }
  }
  return Tensor<T>({th, tw, d}, std::move(out));
}

template <typename T>
Tensor<T> resample_pos_embed(const Tensor<T>& pos, std::size_t th, std::size_t tw) {
  check(pos.rank() == 3 && pos.dim(0) == 1, "resample", "expected (1, 1 + N, D) table, got " + shape_str(pos.shape()));
  const std::size_t n = pos.dim(1) - 1, d = pos.dim(2);
  const auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
  check(g * g == n, "resample", "positional table with " + std::to_string(n) + " patches is not a square grid");
  const auto src = pos.data();
  Tensor<T> grid({g, g, d}, std::vector<T>(src.begin() + static_cast<std::ptrdiff_t>(d), src.end()));
  const auto res = resample_grid(grid, th, tw);
  std::vector<T> out(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(d));
  out.insert(out.end(), res.data().begin(), res.data().end());
  return Tensor<T>({1, 1 + th * tw, d}, std::move(out));
}

void validate_contract(const NamedTensorArchive& archive, std::size_t depth) {
  std::vector<std::string> required{"cls_token",         "pos_embed",  "patch_embed.weight", "patch_embed.bias",
                                    "head.weight",       "head.bias",  "norm.gamma",         "norm.beta"};
  for (std::size_t i = 0; i < depth; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    for (const char* l : {"q", "k", "v", "out"})
      for (const char* w : {"weight", "bias"}) required.push_back(p + "attn." + l + "." + w);
    for (const char* l : {"fc1", "fc2"})
      for (const char* w : {"weight", "bias"}) required.push_back(p + "mlp." + l + "." + w);
    for (const char* l : {"norm1", "norm2"})
      for (const char* w : {"gamma", "beta"}) required.push_back(p + l + "." + w);
  }
  std::string missing;
  for (const auto& name : required)
    if (!archive.contains(name)) missing += (missing.empty() ? "" : ", ") + name;
  if (!missing.empty()) throw Error("load_pretrained", "archive lacks: " + missing);
  for (const auto& name : archive.names()) {
    if (name.rfind("blocks.", 0) != 0) continue;
    const std::size_t i = std::stoul(name.substr(7));
    check(i < depth, "load_pretrained",
          "archive has block " + std::to_string(i) + " but the model has " + std::to_string(depth));
  }
}

template <typename T>
LoadReport load_pretrained(const NamedTensorArchive& archive, Backbone<T>& backbone) {
  validate_contract(archive, backbone.blocks.size());
  ParamList<T> list;
  backbone.collect(list);
  load_params(archive, list);
  LoadReport r;
  for (const auto& [name, t] : list) r.copied.push_back(name);
  return r;
}

template <typename T>
LoadReport load_pretrained(const NamedTensorArchive& archive, VoxelClassifier<T>& model) {
  LoadReport r = load_pretrained(archive, model.backbone);
  archive.assign("cls_token", model.tokenizer.cls_token);
  r.copied.push_back("cls_token");
  if (model.tokenizer_config.scheme == VoxelScheme::Naive) {
    r.fresh.push_back("pos_embed");
  } else {
    const CubeLayout l = cube_layout(model.tokenizer_config, model.grid[0], model.grid[1], model.grid[2]);
    const auto pos = resample_pos_embed(archive.get<T>("pos_embed"), l.first, l.second);
    check(pos.shape() == model.tokenizer.pos_embed.shape(), "load_pretrained",
          "resampled positional table " + shape_str(pos.shape()) + " does not match " +
              shape_str(model.tokenizer.pos_embed.shape()));
    std::copy(pos.data().begin(), pos.data().end(), model.tokenizer.pos_embed.mutable_data().begin());
    r.resampled.push_back("pos_embed");
  }
  r.fresh.push_back("voxel_embed.weight");
  r.fresh.push_back("head.weight");
  return r;
}

template <typename T>
LoadReport load_pretrained(const NamedTensorArchive& archive, PointModel<T>& model) {
  LoadReport r = load_pretrained(archive, model.backbone);
  archive.assign("cls_token", model.pipeline.cls_token);
  r.copied.push_back("cls_token");
  return r;
}

template <typename T>
Vit2D<T> vit_from_archive(const NamedTensorArchive& archive, BackboneConfig config) {
  const auto& pe = archive.entry("patch_embed.weight");
  check(pe.shape.size() == 4 && pe.shape[2] == pe.shape[3], "vit_from_archive",
        "patch_embed.weight must be (D, C, P, P), got " + shape_str(pe.shape));
  std::size_t depth = 0;
  for (const auto& name : archive.names())
    if (name.rfind("blocks.", 0) == 0) depth = std::max<std::size_t>(depth, std::stoul(name.substr(7)) + 1);
  config.dim = pe.shape[0];
  config.depth = depth;
  const auto& fc1 = archive.entry("blocks.0.mlp.fc1.weight");
  config.mlp_ratio = fc1.shape[0] / config.dim;
  const auto& pos = archive.entry("pos_embed");
  check(pos.shape.size() == 3, "vit_from_archive", "pos_embed must be (1, 1 + N, D)");
  const auto g = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(pos.shape[1] - 1))));
  const std::size_t classes = archive.entry("head.weight").shape[0];
  RngStream scratch(0);
  Vit2D<T> v = Vit2D<T>::init(config, g * pe.shape[2], pe.shape[2], pe.shape[1], classes, scratch);
  validate_contract(archive, depth);
  ParamList<T> list;
  v.collect(list);
  load_params(archive, list);
  return v;
}

template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& p, const Tensor<T>& q) {
  check(p.shape() == q.shape() && p.rank() >= 1, "kl_divergence",
        "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(q.shape()));
  const std::size_t k = p.dim(-1), rows = p.numel() / std::max<std::size_t>(k, 1);
  for (const Tensor<T>* t : {&p, &q}) {
    const auto d = t->data();
    for (T v : d) check(v >= T(0) && std::isfinite(v), "kl_divergence", "negative or non-finite probability");
    for (std::size_t r = 0; r < rows; ++r) {
      T s = T(0);
      for (std::size_t j = 0; j < k; ++j) s += d[r * k + j];
      check(std::abs(s - T(1)) <= T(1e-4), "kl_divergence", "row " + std::to_string(r) + " does not sum to 1");
    }
  }
  constexpr T floor = T(1e-12);
  auto log_p = log(clamp_min(p.detach(), floor));
  auto log_q = log(clamp_min(q, floor));
  return sum(mul(p, sub(log_p, log_q)));
}

template <typename T>
TeacherBundle<T> TeacherBundle<T>::freeze(const Vit2D<T>& source, double lambda, std::size_t batch, bool kl_mean) {
  TeacherBundle b{clone_vit(source), lambda, batch, kl_mean};
  ParamList<T> list;
  b.teacher.collect(list);
  set_requires_grad(list, false);
  return b;
}

template <typename T>
Tensor<T> teacher_probs(const TeacherBundle<T>& bundle, const Tensor<T>& images) {
  NoGradGuard guard;
  return softmax(bundle.teacher.forward(images), -1);
}

template <typename T>
Tensor<T> student_logits_2d(const TeacherBundle<T>& bundle, std::span<const BlockParams<T>> student_blocks,
                            const Tensor<T>& images) {
  return bundle.teacher.forward_with_blocks(images, student_blocks);
}

template <typename T>
Tensor<T> retention_kl(const TeacherBundle<T>& bundle, std::span<const BlockParams<T>> student_blocks,
                       const Tensor<T>& images) {
  auto kl = kl_divergence(teacher_probs(bundle, images), softmax(student_logits_2d(bundle, student_blocks, images), -1));
  if (bundle.kl_mean && images.dim(0) > 0) kl = scale(kl, T(1) / static_cast<T>(images.dim(0)));
  return kl;
}

template <typename T>
Tensor<T> combined_loss(const Tensor<T>& task_loss, const Tensor<T>& teacher_p, const Tensor<T>& student_logits,
                        double lambda, bool kl_mean) {
  check(teacher_p.dim(-1) == student_logits.dim(-1), "combined_loss",
        "teacher has " + std::to_string(teacher_p.dim(-1)) + " classes, student " +
            std::to_string(student_logits.dim(-1)));
  const std::size_t m = teacher_p.rank() == 2 ? teacher_p.dim(0) : 1;
  if (lambda == 0.0 || m == 0) return task_loss;
  auto kl = kl_divergence(teacher_p, softmax(student_logits, -1));
  if (kl_mean) kl = scale(kl, T(1) / static_cast<T>(m));
  return add(task_loss, scale(kl, static_cast<T>(lambda)));
}

template <typename T>
CombinedLoss<T> combined_loss(const Tensor<T>& task_loss, const TeacherBundle<T>& bundle,
                              std::span<const BlockParams<T>> student_blocks, const Tensor<T>& images) {
  if (bundle.lambda == 0.0 || bundle.batch == 0 || images.dim(0) == 0) return {task_loss, Tensor<T>::scalar(T(0))};
  auto kl = retention_kl(bundle, student_blocks, images);
  return {add(task_loss, scale(kl, static_cast<T>(bundle.lambda))), kl};
}

#define S3F_INSTANTIATE(T)                                                                                       \
  template Tensor<T> resample_grid(const Tensor<T>&, std::size_t, std::size_t);                                  \
  template Tensor<T> resample_pos_embed(const Tensor<T>&, std::size_t, std::size_t);                             \
  template LoadReport load_pretrained(const NamedTensorArchive&, VoxelClassifier<T>&);                           \
  template LoadReport load_pretrained(const NamedTensorArchive&, PointModel<T>&);                                \
  template LoadReport load_pretrained(const NamedTensorArchive&, Backbone<T>&);                                  \
  template Vit2D<T> vit_from_archive(const NamedTensorArchive&, BackboneConfig);                                 \
  template Tensor<T> kl_divergence(const Tensor<T>&, const Tensor<T>&);                                          \
  template struct TeacherBundle<T>;                                                                              \
  template Tensor<T> teacher_probs(const TeacherBundle<T>&, const Tensor<T>&);                                   \
  template Tensor<T> student_logits_2d(const TeacherBundle<T>&, std::span<const BlockParams<T>>,                 \
                                       const Tensor<T>&);                                                        \
  template Tensor<T> retention_kl(const TeacherBundle<T>&, std::span<const BlockParams<T>>, const Tensor<T>&);   \
  template Tensor<T> combined_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double, bool);          \
  template CombinedLoss<T> combined_loss(const Tensor<T>&, const TeacherBundle<T>&,                              \
                                         std::span<const BlockParams<T>>, const Tensor<T>&);

S3F_INSTANTIATE(float)
S3F_INSTANTIATE(double)
#undef S3F_INSTANTIATE

}  // namespace s3f
