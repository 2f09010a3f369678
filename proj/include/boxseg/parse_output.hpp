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
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace boxseg {

inline constexpr const char* kMaskPlaceholder =
    "<mask_start><mask_token><mask_end>";

// Malformed JSON in the model output; carries the byte offset into the
// original text.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, size_t byte_offset)
      : std::runtime_error(msg + " (byte " + std::to_string(byte_offset) + ")"),
        byte_offset(byte_offset) {}
  size_t byte_offset;
};

// Structurally valid JSON that violates the output schema; names the field.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(const std::string& msg, std::string field_name)
      : std::runtime_error(msg), field(std::move(field_name)) {}
  std::string field;
};

struct PredictionRecord {
  std::array<int64_t, 4> bbox_2d{};
  std::string label;
  std::string mask = kMaskPlaceholder;

  bool operator==(const PredictionRecord& o) const {
    return bbox_2d == o.bbox_2d && label == o.label && mask == o.mask;
  }
};

namespace detail_parse {

// Locate the first top-level JSON array, string-aware.
inline std::pair<size_t, size_t> find_json_array(const std::string& text) {
  size_t search_from = 0;
  const size_t fence = text.find("```json");
  if (fence != std::string::npos) search_from = fence + 7;
  const size_t start = text.find('[', search_from);
  if (start == std::string::npos) {
    throw ParseError("no JSON array found in model output", 0);
  }
  int depth = 0;
  bool in_string = false, escaped = false;
  for (size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '[' || c == '{') {
      ++depth;
    } else if (c == ']' || c == '}') {
      --depth;
      if (depth == 0) return {start, i + 1};
    }
  }
  throw ParseError("unterminated JSON array", start);
}

}  // namespace detail_parse

// Extract and validate the first JSON array of prediction records from raw
// model text (fenced blocks and trailing chat tokens are tolerated).
inline std::vector<PredictionRecord> parse_model_output(
    const std::string& text) {
  auto [start, end] = detail_parse::find_json_array(text);
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(text.substr(start, end - start));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(),
                     start + (e.byte > 0 ? e.byte - 1 : 0));
  }
  if (!arr.is_array()) {
    throw ParseError("model output is not a JSON array", start);
  }
  std::vector<PredictionRecord> out;
  for (size_t i = 0; i < arr.size(); ++i) {
    const auto& rec = arr[i];
    const std::string where = "record " + std::to_string(i);
    if (!rec.is_object()) {
      throw SchemaError(where + " is not an object", "");
    }
    for (const char* key : {"bbox_2d", "label", "mask"}) {
      if (!rec.contains(key)) {
        throw SchemaError(where + " missing field '" + key + "'", key);
      }
    }
    PredictionRecord p;
    const auto& bbox = rec["bbox_2d"];
    if (!bbox.is_array() || bbox.size() != 4) {
      throw SchemaError(where + ": bbox_2d must be [x1,y1,x2,y2]", "bbox_2d");
    }
    for (size_t k = 0; k < 4; ++k) {
      if (!bbox[k].is_number_integer()) {
        throw SchemaError(where + ": bbox_2d must hold integers", "bbox_2d");
      }
      p.bbox_2d[k] = bbox[k].get<int64_t>();
    }
    if (p.bbox_2d[0] >= p.bbox_2d[2] || p.bbox_2d[1] >= p.bbox_2d[3]) {
      throw SchemaError(where + ": bbox_2d must satisfy x1<x2, y1<y2",
                        "bbox_2d");
    }
    if (!rec["label"].is_string()) {
      throw SchemaError(where + ": label must be a string", "label");
    }
    p.label = rec["label"].get<std::string>();
    if (!rec["mask"].is_string() ||
        rec["mask"].get<std::string>() != kMaskPlaceholder) {
      throw SchemaError(where + ": mask must be exactly the placeholder '" +
                            std::string(kMaskPlaceholder) + "'",
                        "mask");
    }
    p.mask = kMaskPlaceholder;
    out.push_back(std::move(p));
  }
  return out;
}

// Inverse of the parser; emits the fenced JSON block of the output template.
inline std::string render_model_output(
    const std::vector<PredictionRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) {
    nlohmann::json rec;
    rec["bbox_2d"] = r.bbox_2d;
    rec["label"] = r.label;
    rec["mask"] = r.mask;
    arr.push_back(std::move(rec));
  }
  return "```json\n" + arr.dump(2) + "\n```";
}

}  // namespace boxseg
