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

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "boxseg/fusion.hpp"
#include "boxseg/metrics.hpp"
#include "boxseg/ood.hpp"

namespace boxseg {

// One JSON-lines record of a prediction or ground-truth manifest.
struct EvalSample {
  std::string id;
  int height = 0, width = 0;
  std::vector<BinaryMask> masks;
  std::vector<std::array<double, 4>> boxes;
  std::optional<std::string> label;
  std::vector<std::string> tags;
};

inline std::vector<EvalSample> load_eval_manifest(const std::string& path,
                                                  const std::string& base_dir) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::vector<EvalSample> out;
  std::set<std::string> seen_ids;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " +
                               e.what());
    }
    EvalSample s;
    s.id = rec.at("id").is_string() ? rec["id"].get<std::string>()
                                    : rec["id"].dump();
    if (!seen_ids.insert(s.id).second) {
      throw std::runtime_error(path + ": duplicate sample id " + s.id);
    }
    s.height = rec.at("image_size").at(0).get<int>();
    s.width = rec.at("image_size").at(1).get<int>();
    for (const auto& mref : rec.at("masks")) {
      BinaryMask m = load_mask_ref(mref, base_dir);
      if (m.height != s.height || m.width != s.width) {
        throw std::runtime_error(path + ": mask size mismatch for id " + s.id);
      }
      s.masks.push_back(std::move(m));
    }
    if (rec.contains("boxes")) {
      for (const auto& b : rec["boxes"]) {
        std::array<double, 4> box{};
        for (int k = 0; k < 4; ++k) box[static_cast<size_t>(k)] = b.at(k);
        s.boxes.push_back(box);
      }
    }
    if (rec.contains("label")) s.label = rec["label"].get<std::string>();
    if (rec.contains("tags")) {
      for (const auto& t : rec["tags"]) s.tags.push_back(t.get<std::string>());
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct EvalOptions {
  bool multi_instance = false;
  // When > 0, manifest boxes are on a 0..grid-1 normalized grid instead of
  // pixels and are rescaled by image size before box IoU.
  int coord_grid = 0;
  BenchTagConfig tag_cfg;
};

struct EvalReport {
  MetricAccumulator overall;
  std::map<std::string, MetricAccumulator> per_tag;
  int64_t box_hits = 0, box_total = 0;
  int64_t missing_predictions = 0;

  nlohmann::json to_json() const {
    auto block = [](const MetricAccumulator& a) {
      nlohmann::json j;
      j["miou"] = a.miou();
      j["ciou"] = a.ciou();
      j["p@0.5"] = a.precision_at(0.5);
      j["p@0.7"] = a.precision_at(0.7);
      j["p@0.9"] = a.precision_at(0.9);
      j["matched"] = a.matched;
      j["unmatched"] = a.unmatched_preds + a.unmatched_gts;
      j["unmatched_predictions"] = a.unmatched_preds;
      j["unmatched_ground_truths"] = a.unmatched_gts;
      return j;
    };
    nlohmann::json j = block(overall);
    j["schema"] = "ORSR1";
    j["missing_predictions"] = missing_predictions;
    nlohmann::json tags = nlohmann::json::object();
    for (const auto& [tag, acc] : per_tag) tags[tag] = block(acc);
    j["per_tag"] = tags;
    if (box_total > 0) {
      j["box_prec@0.5"] =
          static_cast<double>(box_hits) / static_cast<double>(box_total);
    }
    return j;
  }
};

inline std::array<double, 4> scale_box(const std::array<double, 4>& b,
                                       int grid, int w, int h) {
  if (grid <= 0) return b;
  return {b[0] * w / grid, b[1] * h / grid, b[2] * w / grid, b[3] * h / grid};
}

// Score predictions against ground truth, pairing samples by id. Tags on the
// GT record are augmented with computed area tags and corpus-level category
// rarity.
inline EvalReport evaluate_manifests(const std::vector<EvalSample>& preds,
                                     const std::vector<EvalSample>& gts,
                                     const EvalOptions& opt) {
  std::unordered_map<std::string, const EvalSample*> pred_by_id;
  for (const auto& p : preds) pred_by_id[p.id] = &p;

  std::unordered_map<std::string, int64_t> label_counts;
  int64_t labeled = 0;
  for (const auto& g : gts) {
    if (g.label) {
      ++label_counts[*g.label];
      ++labeled;
    }
  }

  EvalReport report;
  for (const auto& gt : gts) {
    MetricAccumulator sample_acc;
    const EvalSample* pred = nullptr;
    auto it = pred_by_id.find(gt.id);
    if (it != pred_by_id.end()) pred = it->second;

    if (!pred || pred->masks.empty()) {
      ++report.missing_predictions;
      sample_acc.unmatched_gts += static_cast<int64_t>(gt.masks.size());
    } else if (opt.multi_instance) {
      accumulate_multi(sample_acc, pred->masks, gt.masks);
    } else {
      if (gt.masks.empty()) {
        sample_acc.unmatched_preds += 1;
      } else {
        accumulate_single(sample_acc, pred->masks[0], gt.masks[0]);
      }
    }

    // Tag set: manifest pass-throughs plus computed area / rarity tags.
    std::vector<std::string> tags = gt.tags;
    if (!gt.masks.empty()) {
      int64_t area = 0;
      for (const auto& m : gt.masks) area += m.area();
      const double ratio = static_cast<double>(area) /
                           (static_cast<double>(gt.width) * gt.height);
      std::optional<double> freq;
      if (gt.label && labeled > 0) {
        freq = static_cast<double>(label_counts[*gt.label]) /
               static_cast<double>(labeled);
      }
      for (const auto& t : tag_ood(ratio, freq, opt.tag_cfg)) {
        tags.push_back(t);
      }
    }
    report.overall.merge(sample_acc);
    for (const auto& t : tags) report.per_tag[t].merge(sample_acc);

    if (pred && !pred->boxes.empty() && !gt.boxes.empty() &&
        !opt.multi_instance) {
      const auto pb = scale_box(pred->boxes[0], opt.coord_grid, gt.width,
                                gt.height);
      const auto gb = scale_box(gt.boxes[0], opt.coord_grid, gt.width,
                                gt.height);
      ++report.box_total;
      if (box_iou(pb[0], pb[1], pb[2], pb[3], gb[0], gb[1], gb[2], gb[3]) >
          0.5) {
        ++report.box_hits;
      }
    }
  }
  return report;
}

}  // namespace boxseg
