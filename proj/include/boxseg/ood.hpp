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

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace boxseg {

struct BenchTagConfig {
  double area_small = 0.002;
  double area_large = 0.7;
  double category_freq = 1e-4;

  void validate() const {
    if (!(0 < area_small && area_small < area_large && area_large < 1)) {
      throw std::invalid_argument("tag config: need 0 < small < large < 1");
    }
  }
};

// Distribution-shift tags computable from sample statistics. Occlusion,
// lighting, instruction-style, and risk tags require external annotation and
// pass through manifests untouched.
inline std::vector<std::string> tag_ood(double mask_area_ratio,
                                        std::optional<double> label_frequency,
                                        const BenchTagConfig& cfg) {
  cfg.validate();
  std::vector<std::string> tags;
  if (mask_area_ratio < cfg.area_small) tags.push_back("area_small");
  if (mask_area_ratio > cfg.area_large) tags.push_back("area_large");
  if (label_frequency && *label_frequency < cfg.category_freq) {
    tags.push_back("category_rare");
  }
  return tags;
}

}  // namespace boxseg
