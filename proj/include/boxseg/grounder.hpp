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
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace boxseg {

struct GroundingRequest {
  std::string image_path;
  std::string expression;
};

struct GrounderResponse {
  std::array<double, 4> box_px{};  // x1,y1,x2,y2 in pixels
  double latency_ms = 0.0;
};

// External open-vocabulary grounding model behind a minimal client surface.
class GrounderClient {
 public:
  virtual ~GrounderClient() = default;
  // nullopt signals timeout or failure; the caller must not treat it as a
  // pass.
  virtual std::optional<GrounderResponse> ground(
      const GroundingRequest& req) = 0;
};

// Replays canned responses keyed by expression, for tests and offline runs.
// Fixture file: JSON object mapping expression -> {box:[x1,y1,x2,y2],
// latency_ms} or -> null for a simulated failure.
class StubGrounder : public GrounderClient {
 public:
  StubGrounder() = default;

  explicit StubGrounder(const std::string& fixtures_path) {
    std::ifstream in(fixtures_path);
    if (!in) {
      throw std::runtime_error("cannot open grounder fixtures: " +
                               fixtures_path);
    }
    load(nlohmann::json::parse(in));
  }

  explicit StubGrounder(const nlohmann::json& fixtures) { load(fixtures); }

  void add_response(const std::string& expression,
                    const GrounderResponse& resp) {
    responses_[expression] = resp;
  }

  void add_failure(const std::string& expression) {
    failures_.insert(expression);
  }

  std::optional<GrounderResponse> ground(const GroundingRequest& req) override {
    if (failures_.count(req.expression)) return std::nullopt;
    auto it = responses_.find(req.expression);
    if (it == responses_.end()) return std::nullopt;
    return it->second;
  }

 private:
  void load(const nlohmann::json& fixtures) {
    for (auto it = fixtures.begin(); it != fixtures.end(); ++it) {
      if (it.value().is_null()) {
        failures_.insert(it.key());
        continue;
      }
      GrounderResponse r;
      const auto& box = it.value().at("box");
      for (int k = 0; k < 4; ++k) r.box_px[static_cast<size_t>(k)] = box.at(k);
      r.latency_ms = it.value().value("latency_ms", 0.0);
      responses_[it.key()] = r;
    }
  }

  std::unordered_map<std::string, GrounderResponse> responses_;
  std::unordered_set<std::string> failures_;
};

}  // namespace boxseg
