// SPDX-License-Identifier: Apache-2.0
//
// Reusing 2D-pretrained ViT weights for the 3D models, and the retention
// objective that keeps the shared blocks close to a frozen 2D teacher:
//
//   loss = task_loss + lambda * sum_{i=1..M} KL(teacher(img_i) || student(img_i))
//
// The student's 2D path uses the teacher's patch embedding, positional table,
// final norm and head, and the student's live transformer blocks.
#pragma once

#include <string>
#include <vector>

#include "s3f/archive.hpp"
#include "s3f/models.hpp"

namespace s3f {

// Bilinear resampling of a (gh, gw, D) grid to (th, tw, D), sampling at pixel
// centers with edge clamping. Written in lerp form so constant fields come
// back bit-identical.
template <typename T>
Tensor<T> resample_grid(const Tensor<T>& grid, std::size_t th, std::size_t tw);

// (1, 1 + g*g, D) -> (1, 1 + th*tw, D); the class slot is copied unchanged.
template <typename T>
Tensor<T> resample_pos_embed(const Tensor<T>& pos, std::size_t th, std::size_t tw);

// Throws listing every contract name the archive lacks for `depth` blocks.
void validate_contract(const NamedTensorArchive& archive, std::size_t depth);

struct LoadReport {
  std::vector<std::string> copied;     // verbatim
  std::vector<std::string> resampled;  // positional table interpolated
  std::vector<std::string> fresh;      // left at their initialization
};

// Copies blocks, final norm and class token. Projection and group
// tokenizers get the 2D positional grid resampled to their token grid; naive
// inflation keeps its freshly initialized table.
template <typename T>
LoadReport load_pretrained(const NamedTensorArchive& archive, VoxelClassifier<T>& model);
template <typename T>
LoadReport load_pretrained(const NamedTensorArchive& archive, PointModel<T>& model);
template <typename T>
LoadReport load_pretrained(const NamedTensorArchive& archive, Backbone<T>& backbone);

// Rebuild a full 2D ViT from an archive; `config` supplies the head count.
template <typename T>
Vit2D<T> vit_from_archive(const NamedTensorArchive& archive, BackboneConfig config);

// Sum over rows of sum_k p log(p / max(q, 1e-12)) along the last axis.
template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& p, const Tensor<T>& q);

template <typename T>
struct TeacherBundle {
  Vit2D<T> teacher;  // frozen copy
  double lambda = 0.1;
  std::size_t batch = 0;  // M
  bool kl_mean = false;

  // Deep-copies `source` and stops its gradients.
  static TeacherBundle freeze(const Vit2D<T>& source, double lambda, std::size_t batch, bool kl_mean = false);
  std::size_t classes() const { return teacher.head.out_features(); }
};

template <typename T>
Tensor<T> teacher_probs(const TeacherBundle<T>& bundle, const Tensor<T>& images);
template <typename T>
Tensor<T> student_logits_2d(const TeacherBundle<T>& bundle, std::span<const BlockParams<T>> student_blocks,
                            const Tensor<T>& images);

// Retention term alone: sum (or mean) of per-image KL(teacher || student).
template <typename T>
Tensor<T> retention_kl(const TeacherBundle<T>& bundle, std::span<const BlockParams<T>> student_blocks,
                       const Tensor<T>& images);

// task_loss + lambda * KL. With lambda == 0 or no images the task loss is
// returned untouched.
template <typename T>
Tensor<T> combined_loss(const Tensor<T>& task_loss, const Tensor<T>& teacher_p, const Tensor<T>& student_logits,
                        double lambda, bool kl_mean = false);

template <typename T>
struct CombinedLoss {
  Tensor<T> total;
  Tensor<T> kl;  // scalar 0 when disabled
};

template <typename T>
CombinedLoss<T> combined_loss(const Tensor<T>& task_loss, const TeacherBundle<T>& bundle,
                              std::span<const BlockParams<T>> student_blocks, const Tensor<T>& images);

}  // namespace s3f
