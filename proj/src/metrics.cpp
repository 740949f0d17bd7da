// SPDX-License-Identifier: Apache-2.0
#include "s3f/metrics.hpp"

#include <map>

#include "s3f/error.hpp"

namespace s3f {

ClassificationMetrics classification_metrics(std::span<const int> pred, std::span<const int> target,
                                             std::size_t classes) {
  check(pred.size() == target.size(), "metrics", "prediction and target counts differ");
  check(!target.empty(), "metrics", "no samples");
  std::vector<std::size_t> hit(classes, 0), seen(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    check(target[i] >= 0 && static_cast<std::size_t>(target[i]) < classes, "metrics",
          "target " + std::to_string(target[i]) + " outside 0.." + std::to_string(classes - 1));
    ++seen[target[i]];
    if (pred[i] == target[i]) {
      ++hit[target[i]];
      ++correct;
    }
  }
  ClassificationMetrics m;
  m.oa = 100.0 * static_cast<double>(correct) / static_cast<double>(target.size());
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!seen[c]) continue;
    m.macc += static_cast<double>(hit[c]) / static_cast<double>(seen[c]);
    ++present;
  }
  m.macc = 100.0 * m.macc / static_cast<double>(present);
  return m;
}

double shape_iou(std::span<const int> pred, std::span<const int> target, std::span<const int> parts) {
  check(pred.size() == target.size(), "metrics", "prediction and target counts differ");
  check(!parts.empty(), "metrics", "no parts");
  double total = 0;
  for (int part : parts) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == part, t = target[i] == part;
      inter += p && t;
      uni += p || t;
    }
    total += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
  }
  return total / static_cast<double>(parts.size());
}

SegmentationMetrics segmentation_metrics(std::span<const SegmentedShape> shapes,
                                         const std::vector<std::vector<int>>& parts) {
  check(!shapes.empty(), "metrics", "no shapes");
  SegmentationMetrics m;
  std::size_t points = 0, correct = 0;
  std::map<int, std::pair<double, std::size_t>> per_cat;
  for (const auto& s : shapes) {
    check(s.category >= 0 && static_cast<std::size_t>(s.category) < parts.size(), "metrics",
          "unknown category " + std::to_string(s.category));
    const double iou = shape_iou(s.pred, s.target, parts[s.category]);
    m.ins_miou += iou;
    auto& [sum, n] = per_cat[s.category];
    sum += iou;
    ++n;
    for (std::size_t i = 0; i < s.target.size(); ++i) correct += s.pred[i] == s.target[i];
    points += s.target.size();
  }
  m.ins_miou = 100.0 * m.ins_miou / static_cast<double>(shapes.size());
  for (const auto& [cat, sn] : per_cat) m.cat_miou += sn.first / static_cast<double>(sn.second);
  m.cat_miou = 100.0 * m.cat_miou / static_cast<double>(per_cat.size());
  m.oa = points ? 100.0 * static_cast<double>(correct) / static_cast<double>(points) : 0.0;
  return m;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  check(logits.rank() == 2 && logits.dim(1) > 0, "metrics", "expected (R, K) logits");
  const std::size_t r = logits.dim(0), k = logits.dim(1);
  const auto d = logits.data();
  std::vector<int> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (d[i * k + j] > d[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);

}  // namespace s3f
