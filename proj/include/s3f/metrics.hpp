// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "s3f/tensor.hpp"

namespace s3f {

struct ClassificationMetrics {
  double oa = 0;    // percent
  double macc = 0;  // percent, averaged over classes present in the targets
};

ClassificationMetrics classification_metrics(std::span<const int> pred, std::span<const int> target,
                                             std::size_t classes);

// IoU averaged over `parts`; a part absent from both prediction and target
// counts as 1.
double shape_iou(std::span<const int> pred, std::span<const int> target, std::span<const int> parts);

struct SegmentedShape {
  std::vector<int> pred, target;
  int category = 0;
};

struct SegmentationMetrics {
  double oa = 0;        // point accuracy, percent
  double ins_miou = 0;  // mean over shapes, percent
  double cat_miou = 0;  // mean over categories of their mean shape IoU, percent
};

// `parts[c]` lists the part labels of category c.
SegmentationMetrics segmentation_metrics(std::span<const SegmentedShape> shapes,
                                         const std::vector<std::vector<int>>& parts);

// Row-wise argmax of (R, K) logits.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

}  // namespace s3f
