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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "boxseg/tensor.hpp"

namespace boxseg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

inline constexpr char kCheckpointMagic[] = "BSKP1\n";

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  nlohmann::json meta;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

// Layout: magic, u64 little-endian header length, JSON header, then a flat
// little-endian fp32 payload. Header offsets are element offsets into the
// payload.
inline void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& tensors,
    const nlohmann::json& meta) {
  nlohmann::json header;
  header["format"] = "BSKP1";
  header["meta"] = meta;
  auto& plist = header["params"] = nlohmann::json::array();
  int64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    plist.push_back(std::move(e));
    offset += t.numel();
  }
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for write: " + path);
  out.write(kCheckpointMagic, 6);
  const uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  std::vector<float> buf;
  for (const auto& [name, t] : tensors) {
    buf.resize(t.data().size());
    for (size_t i = 0; i < buf.size(); ++i)
      buf[i] = static_cast<float>(t.data()[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kCheckpointMagic, 6) != 0) {
    throw std::runtime_error("not a BSKP1 checkpoint: " + path);
  }
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  nlohmann::json header = nlohmann::json::parse(hs);

  std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  const size_t n_floats = payload.size() / sizeof(float);

  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& e : header.at("params")) {
    CheckpointEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.shape = e.at("shape").get<Shape>();
    const int64_t offset = e.at("offset").get<int64_t>();
    const int64_t count = shape_numel(entry.shape);
    if (offset < 0 || static_cast<size_t>(offset + count) > n_floats) {
      throw std::runtime_error("checkpoint payload out of range for " +
                               entry.name);
    }
    entry.values.resize(static_cast<size_t>(count));
    const float* src =
        reinterpret_cast<const float*>(payload.data()) + offset;
    for (int64_t i = 0; i < count; ++i)
      entry.values[static_cast<size_t>(i)] = static_cast<double>(src[i]);
    ck.entries.push_back(std::move(entry));
  }
  return ck;
}

// Overwrite matching tensors in-place; every name in `tensors` must exist.
inline void restore_tensors(
    const Checkpoint& ck,
    std::vector<std::pair<std::string, Tensor>>& tensors) {
  for (auto& [name, t] : tensors) {
    const CheckpointEntry* e = ck.find(name);
    if (!e) throw std::runtime_error("checkpoint missing parameter: " + name);
    if (e->shape != t.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + name +
                               ": " + shape_str(e->shape) + " vs " +
                               shape_str(t.shape()));
    }
    t.mutable_data() = e->values;
  }
}

}  // namespace boxseg
