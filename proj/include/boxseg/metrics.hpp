/* Copyright (c) 2026 BoxSeg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#pragma once

#include <vector>

#include "boxseg/box.hpp"
#include "boxseg/hungarian.hpp"
#include "boxseg/mask.hpp"

namespace boxseg {

// Pixel IoU; two empty masks count as a correct no-target prediction (1.0).
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  maskops::require_same_dims(a, b, "mask_iou");
  const int64_t inter = maskops::intersection_area(a, b);
  const int64_t uni = maskops::union_area(a, b);
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Running segmentation metrics; associatively mergeable across shards.
struct MetricAccumulator {
  int64_t sum_intersection = 0;
  int64_t sum_union = 0;
  std::vector<double> per_sample_ious;
  int64_t matched = 0;
  int64_t unmatched_preds = 0;
  int64_t unmatched_gts = 0;

  void add_pair(const BinaryMask& pred, const BinaryMask& gt) {
    maskops::require_same_dims(pred, gt, "accumulate");
    const int64_t inter = maskops::intersection_area(pred, gt);
    const int64_t uni = maskops::union_area(pred, gt);
    sum_intersection += inter;
    sum_union += uni;
    per_sample_ious.push_back(uni == 0 ? 1.0
                                       : static_cast<double>(inter) /
                                             static_cast<double>(uni));
    ++matched;
  }

  void merge(const MetricAccumulator& o) {
    sum_intersection += o.sum_intersection;
    sum_union += o.sum_union;
    per_sample_ious.insert(per_sample_ious.end(), o.per_sample_ious.begin(),
                           o.per_sample_ious.end());
    matched += o.matched;
    unmatched_preds += o.unmatched_preds;
    unmatched_gts += o.unmatched_gts;
  }

  double miou() const {
    if (per_sample_ious.empty()) return 0.0;
    double acc = 0.0;
    for (double v : per_sample_ious) acc += v;
    return acc / static_cast<double>(per_sample_ious.size());
  }

  double ciou() const {
    if (sum_union == 0) return per_sample_ious.empty() ? 0.0 : 1.0;
    return static_cast<double>(sum_intersection) /
           static_cast<double>(sum_union);
  }

  // Fraction of samples whose IoU strictly exceeds t.
  double precision_at(double t) const {
    if (per_sample_ious.empty()) return 0.0;
    int64_t hits = 0;
    for (double v : per_sample_ious)
      if (v > t) ++hits;
    return static_cast<double>(hits) /
           static_cast<double>(per_sample_ious.size());
  }
};

inline void accumulate_single(MetricAccumulator& acc, const BinaryMask& pred,
                              const BinaryMask& gt) {
  acc.add_pair(pred, gt);
}

// Multi-instance protocol: Hungarian-match the pairwise IoU matrix, then
// score matched pairs; unmatched instances are counted but excluded from the
// IoU sums.
inline void accumulate_multi(MetricAccumulator& acc,
                             const std::vector<BinaryMask>& preds,
                             const std::vector<BinaryMask>& gts) {
  for (const auto& p : preds)
    for (const auto& g : gts) maskops::require_same_dims(p, g, "accumulate");
  std::vector<std::vector<double>> iou(preds.size(),
                                       std::vector<double>(gts.size(), 0.0));
  for (size_t i = 0; i < preds.size(); ++i)
    for (size_t j = 0; j < gts.size(); ++j)
      iou[i][j] = mask_iou(preds[i], gts[j]);
  auto pairs = hungarian_match(iou);
  for (auto& [pi, gi] : pairs) acc.add_pair(preds[pi], gts[gi]);
  acc.unmatched_preds += static_cast<int64_t>(preds.size() - pairs.size());
  acc.unmatched_gts += static_cast<int64_t>(gts.size() - pairs.size());
}

// Grounding hit rule: rectangle IoU must strictly exceed 0.5.
inline bool box_prec_at_half(const Box& pred, const Box& gt) {
  return box_iou(pred, gt) > 0.5;
}

}  // namespace boxseg
