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

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "boxseg/box.hpp"
#include "boxseg/grounder.hpp"
#include "boxseg/mask.hpp"
#include "boxseg/pgm.hpp"
#include "boxseg/rle.hpp"

namespace boxseg {

struct FusionConfig {
  double min_fragment_ratio = 5e-4;      // of image area
  double iof_threshold = 0.7;            // tau
  int recovery_dilation_px = 3;
  double cc_keep_ratio = 0.05;           // of the largest component
  double area_drop_fallback_ratio = 0.5; // rho
  double dedup_box_iou = 0.9;
  double dedup_mask_iou = 0.85;
  double saliency_min_area_ratio = 0.002;
  double verify_iou_threshold = 0.8;

  void validate() const {
    auto in01 = [](double v) { return v > 0.0 && v <= 1.0; };
    if (!in01(iof_threshold) || !in01(cc_keep_ratio) ||
        !in01(area_drop_fallback_ratio) || !in01(dedup_box_iou) ||
        !in01(dedup_mask_iou) || !in01(saliency_min_area_ratio) ||
        !in01(verify_iou_threshold) || min_fragment_ratio <= 0 ||
        recovery_dilation_px < 0) {
      throw std::invalid_argument("fusion config: threshold out of range");
    }
  }
};

enum class CandidateStatus {
  kRaw,
  kMerged,
  kRefined,
  kFallback,
  kVerified,
  kRejected,
  kDuplicate,
  kUnverified,
  kError,
};

inline const char* status_name(CandidateStatus s) {
  switch (s) {
    case CandidateStatus::kRaw: return "raw";
    case CandidateStatus::kMerged: return "merged";
    case CandidateStatus::kRefined: return "refined";
    case CandidateStatus::kFallback: return "fallback";
    case CandidateStatus::kVerified: return "verified";
    case CandidateStatus::kRejected: return "rejected";
    case CandidateStatus::kDuplicate: return "duplicate";
    case CandidateStatus::kUnverified: return "unverified";
    case CandidateStatus::kError: return "error";
  }
  return "unknown";
}

struct CandidateEntity {
  std::string image;
  std::string label;
  std::array<double, 4> box_px{};  // x1,y1,x2,y2 pixels
  BinaryMask coarse_mask;
  std::vector<BinaryMask> fragments;
  std::optional<std::string> expression;

  std::optional<BinaryMask> merged_mask;
  CandidateStatus status = CandidateStatus::kRaw;
  bool used_fallback = false;
  bool verified = false;
  double verify_iou = -1.0;
  std::string error;
};

// Intersection-over-fragment; an empty fragment scores 0.
inline double iof(const BinaryMask& coarse, const BinaryMask& fragment) {
  maskops::require_same_dims(coarse, fragment, "iof");
  const int64_t frag_area = fragment.area();
  if (frag_area == 0) return 0.0;
  return static_cast<double>(maskops::intersection_area(coarse, fragment)) /
         static_cast<double>(frag_area);
}

// Drop tiny fragments and fragments whose tight box misses the coarse mask's
// tight box entirely.
inline std::vector<BinaryMask> prefilter_fragments(
    const std::vector<BinaryMask>& fragments, const BinaryMask& coarse,
    const FusionConfig& cfg) {
  const double min_area =
      cfg.min_fragment_ratio * static_cast<double>(coarse.width) *
      static_cast<double>(coarse.height);
  const auto coarse_box = coarse.tight_box();
  std::vector<BinaryMask> kept;
  for (const BinaryMask& f : fragments) {
    maskops::require_same_dims(coarse, f, "prefilter");
    if (static_cast<double>(f.area()) < min_area) continue;
    const auto fb = f.tight_box();
    if (!fb || !coarse_box || !maskops::boxes_intersect(*fb, *coarse_box)) {
      continue;
    }
    kept.push_back(f);
  }
  return kept;
}

// Union of fragments passing the IoF gate, then recovery of coarse-mask
// components adjacent (within the dilation radius) to that union.
inline BinaryMask build_entity_mask(const BinaryMask& coarse,
                                    const std::vector<BinaryMask>& fragments,
                                    const FusionConfig& cfg) {
  BinaryMask merged(coarse.width, coarse.height);
  bool any = false;
  for (const BinaryMask& f : fragments) {
    if (iof(coarse, f) >= cfg.iof_threshold) {
      merged = any ? maskops::mask_union(merged, f) : f;
      any = true;
    }
  }
  if (!any) return merged;  // empty; downstream fallback handles it
  const BinaryMask uncovered = maskops::mask_minus(coarse, merged);
  if (!uncovered.empty_mask()) {
    for (const BinaryMask& comp : maskops::connected_components(uncovered)) {
      const BinaryMask grown =
          maskops::dilate(comp, cfg.recovery_dilation_px);
      if (maskops::intersection_area(grown, merged) > 0) {
        merged = maskops::mask_union(merged, comp);
      }
    }
  }
  return merged;
}

struct PostprocessResult {
  BinaryMask mask;
  bool empty_input = false;
};

// Hole filling, opening then closing with the 3x3 kernel, then dropping
// components below cc_keep_ratio of the largest.
inline PostprocessResult postprocess_mask(const BinaryMask& mask,
                                          const FusionConfig& cfg) {
  PostprocessResult out;
  if (mask.empty_mask()) {
    out.mask = mask;
    out.empty_input = true;
    return out;
  }
  BinaryMask m = maskops::fill_holes(mask);
  m = maskops::closing(maskops::opening(m));
  auto comps = maskops::connected_components(m);
  int64_t largest = 0;
  for (const auto& c : comps) largest = std::max(largest, c.area());
  BinaryMask kept(m.width, m.height);
  for (const auto& c : comps) {
    if (static_cast<double>(c.area()) >=
        cfg.cc_keep_ratio * static_cast<double>(largest)) {
      kept = maskops::mask_union(kept, c);
    }
  }
  out.mask = kept;
  return out;
}

// Replace an over-eroded refinement with the coarse mask.
inline std::pair<BinaryMask, bool> apply_fallback(const BinaryMask& coarse,
                                                  const BinaryMask& refined,
                                                  const FusionConfig& cfg) {
  if (static_cast<double>(refined.area()) <
      cfg.area_drop_fallback_ratio * static_cast<double>(coarse.area())) {
    return {coarse, true};
  }
  return {refined, false};
}

inline double pixel_box_iou(const std::array<double, 4>& a,
                            const std::array<double, 4>& b) {
  return box_iou(a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]);
}

// Greedy duplicate removal for candidates sharing one label: larger masks
// first (ties by manifest order); a candidate duplicating any survivor by box
// IoU or mask IoU is marked.
inline void dedup_candidates(std::vector<CandidateEntity*>& group,
                             const FusionConfig& cfg) {
  std::vector<size_t> order(group.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return group[a]->merged_mask->area() > group[b]->merged_mask->area();
  });
  std::vector<size_t> survivors;
  for (size_t idx : order) {
    CandidateEntity* cand = group[idx];
    bool dup = false;
    for (size_t s : survivors) {
      const CandidateEntity* surv = group[s];
      const double biou = pixel_box_iou(cand->box_px, surv->box_px);
      if (biou > cfg.dedup_box_iou) {
        dup = true;
        break;
      }
      const int64_t inter =
          maskops::intersection_area(*cand->merged_mask, *surv->merged_mask);
      const int64_t uni =
          maskops::union_area(*cand->merged_mask, *surv->merged_mask);
      const double miou =
          uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
      if (miou > cfg.dedup_mask_iou) {
        dup = true;
        break;
      }
    }
    if (dup) {
      cand->status = CandidateStatus::kDuplicate;
    } else {
      survivors.push_back(idx);
    }
  }
}

// Keep iff area ratio >= the floor (inclusive at the boundary).
inline bool saliency_keep(const BinaryMask& mask, const FusionConfig& cfg) {
  const double ratio =
      static_cast<double>(mask.area()) /
      (static_cast<double>(mask.width) * static_cast<double>(mask.height));
  return ratio >= cfg.saliency_min_area_ratio;
}

struct VerifyOutcome {
  enum Result { kKept, kDropped, kUnverified } result = kUnverified;
  double iou = -1.0;
};

// Grounding-based quality gate: re-localize by expression and require box
// IoU >= threshold against the candidate's own box.
inline VerifyOutcome cognitive_verify(const std::string& image_path,
                                      const std::string& expression,
                                      const std::array<double, 4>& gt_box_px,
                                      GrounderClient& grounder,
                                      const FusionConfig& cfg) {
  VerifyOutcome out;
  auto resp = grounder.ground({image_path, expression});
  if (!resp) {
    out.result = VerifyOutcome::kUnverified;
    return out;
  }
  out.iou = pixel_box_iou(resp->box_px, gt_box_px);
  out.result = out.iou >= cfg.verify_iou_threshold ? VerifyOutcome::kKept
                                                   : VerifyOutcome::kDropped;
  return out;
}

// ---------------------------------------------------------------------------
// Manifest plumbing and the end-to-end pipeline
// ---------------------------------------------------------------------------

inline BinaryMask load_mask_ref(const nlohmann::json& ref,
                                const std::string& base_dir) {
  if (ref.is_string()) {
    const std::string p = ref.get<std::string>();
    const std::string full =
        (!base_dir.empty() && !p.empty() && p[0] != '/') ? base_dir + "/" + p
                                                         : p;
    return read_mask_pgm(full);
  }
  Rle r;
  r.height = ref.at("size").at(0).get<int>();
  r.width = ref.at("size").at(1).get<int>();
  r.counts = ref.at("counts").get<std::vector<int64_t>>();
  return rle_decode(r);
}

inline nlohmann::json mask_to_rle_json(const BinaryMask& m) {
  Rle r = rle_encode(m);
  nlohmann::json j;
  j["size"] = {r.height, r.width};
  j["counts"] = r.counts;
  return j;
}

struct PipelineAudit {
  int64_t input = 0;
  int64_t errors = 0;
  int64_t kept = 0;
  int64_t duplicates = 0;
  int64_t saliency_rejected = 0;
  int64_t verify_rejected = 0;
  int64_t unverified = 0;
  // stage counters, not part of the status partition
  int64_t fragments_total = 0;
  int64_t fragments_kept = 0;
  int64_t merged_nonempty = 0;
  int64_t fallback_used = 0;
  int64_t verified = 0;

  nlohmann::json to_json() const {
    return {{"input", input},
            {"errors", errors},
            {"kept", kept},
            {"duplicates", duplicates},
            {"saliency_rejected", saliency_rejected},
            {"verify_rejected", verify_rejected},
            {"unverified", unverified},
            {"fragments_total", fragments_total},
            {"fragments_kept", fragments_kept},
            {"merged_nonempty", merged_nonempty},
            {"fallback_used", fallback_used},
            {"verified", verified}};
  }
};

struct PipelineResult {
  std::vector<CandidateEntity> candidates;  // all, with final statuses
  PipelineAudit audit;

  // Curated manifest usable as pipeline input again: the final mask feeds
  // both the coarse and fragment slots. Run-specific flags stay in the audit
  // so that rerunning the pipeline on this output reproduces it.
  nlohmann::json curated_manifest() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : candidates) {
      if (c.status != CandidateStatus::kRefined &&
          c.status != CandidateStatus::kFallback &&
          c.status != CandidateStatus::kVerified) {
        continue;
      }
      nlohmann::json rec;
      rec["image"] = c.image;
      rec["label"] = c.label;
      rec["box"] = c.box_px;
      rec["coarse_mask"] = mask_to_rle_json(*c.merged_mask);
      rec["fragments"] =
          nlohmann::json::array({mask_to_rle_json(*c.merged_mask)});
      if (c.expression) rec["expression"] = *c.expression;
      arr.push_back(std::move(rec));
    }
    return arr;
  }
};

inline std::vector<CandidateEntity> parse_fusion_manifest(
    const nlohmann::json& manifest, const std::string& base_dir) {
  if (!manifest.is_array()) {
    throw std::invalid_argument("fusion manifest must be a JSON array");
  }
  std::vector<CandidateEntity> out;
  for (const auto& rec : manifest) {
    CandidateEntity c;
    try {
      c.image = rec.at("image").get<std::string>();
      c.label = rec.at("label").get<std::string>();
      const auto& box = rec.at("box");
      for (int k = 0; k < 4; ++k) c.box_px[static_cast<size_t>(k)] = box.at(k);
      c.coarse_mask = load_mask_ref(rec.at("coarse_mask"), base_dir);
      for (const auto& f : rec.at("fragments")) {
        c.fragments.push_back(load_mask_ref(f, base_dir));
        maskops::require_same_dims(c.coarse_mask, c.fragments.back(),
                                   "manifest");
      }
      if (rec.contains("expression")) {
        c.expression = rec["expression"].get<std::string>();
      }
    } catch (const std::exception& e) {
      c.status = CandidateStatus::kError;
      c.error = e.what();
    }
    out.push_back(std::move(c));
  }
  return out;
}

// prefilter -> merge -> postprocess -> fallback -> dedup -> saliency ->
// optional verification. Per-candidate errors are recorded, never fatal.
inline PipelineResult run_pipeline(std::vector<CandidateEntity> candidates,
                                   const FusionConfig& cfg,
                                   GrounderClient* grounder = nullptr) {
  cfg.validate();
  PipelineResult res;
  res.audit.input = static_cast<int64_t>(candidates.size());

  for (CandidateEntity& c : candidates) {
    if (c.status == CandidateStatus::kError) continue;
    try {
      res.audit.fragments_total += static_cast<int64_t>(c.fragments.size());
      auto kept_frags = prefilter_fragments(c.fragments, c.coarse_mask, cfg);
      res.audit.fragments_kept += static_cast<int64_t>(kept_frags.size());
      BinaryMask merged = build_entity_mask(c.coarse_mask, kept_frags, cfg);
      if (!merged.empty_mask()) ++res.audit.merged_nonempty;
      c.status = CandidateStatus::kMerged;
      PostprocessResult post = postprocess_mask(merged, cfg);
      auto [final_mask, fell_back] =
          apply_fallback(c.coarse_mask, post.mask, cfg);
      c.merged_mask = final_mask;
      c.used_fallback = fell_back;
      c.status = fell_back ? CandidateStatus::kFallback
                           : CandidateStatus::kRefined;
      if (fell_back) ++res.audit.fallback_used;
    } catch (const std::exception& e) {
      c.status = CandidateStatus::kError;
      c.error = e.what();
    }
  }

  // Dedup inside each (image, label) group, order-stable.
  std::map<std::pair<std::string, std::string>, std::vector<CandidateEntity*>>
      groups;
  for (CandidateEntity& c : candidates) {
    if (c.status == CandidateStatus::kRefined ||
        c.status == CandidateStatus::kFallback) {
      groups[{c.image, c.label}].push_back(&c);
    }
  }
  for (auto& [key, group] : groups) dedup_candidates(group, cfg);

  for (CandidateEntity& c : candidates) {
    if (c.status != CandidateStatus::kRefined &&
        c.status != CandidateStatus::kFallback) {
      continue;
    }
    if (!saliency_keep(*c.merged_mask, cfg)) {
      c.status = CandidateStatus::kRejected;
      continue;
    }
    if (grounder && c.expression) {
      VerifyOutcome v =
          cognitive_verify(c.image, *c.expression, c.box_px, *grounder, cfg);
      c.verify_iou = v.iou;
      switch (v.result) {
        case VerifyOutcome::kKept:
          c.verified = true;
          c.status = CandidateStatus::kVerified;
          ++res.audit.verified;
          break;
        case VerifyOutcome::kDropped:
          c.status = CandidateStatus::kRejected;
          ++res.audit.verify_rejected;
          break;
        case VerifyOutcome::kUnverified:
          c.status = CandidateStatus::kUnverified;
          break;
      }
    }
  }

  for (const CandidateEntity& c : candidates) {
    switch (c.status) {
      case CandidateStatus::kError: ++res.audit.errors; break;
      case CandidateStatus::kDuplicate: ++res.audit.duplicates; break;
      case CandidateStatus::kUnverified: ++res.audit.unverified; break;
      case CandidateStatus::kRefined:
      case CandidateStatus::kFallback:
      case CandidateStatus::kVerified:
        ++res.audit.kept;
        break;
      case CandidateStatus::kRejected:
        // distinguish saliency drops from verification drops via verify_iou
        if (c.verify_iou >= 0) {
          // already counted as verify_rejected
        } else {
          ++res.audit.saliency_rejected;
        }
        break;
      default:
        break;
    }
  }
  res.candidates = std::move(candidates);
  return res;
}

}  // namespace boxseg
