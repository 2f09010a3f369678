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

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "boxseg/mask.hpp"

namespace boxseg {

// Column-major run-length encoding; the first run counts zeros.
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<int64_t> counts;
};

class RleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Rle rle_encode(const BinaryMask& m) {
  Rle r;
  r.height = m.height;
  r.width = m.width;
  uint8_t cur = 0;
  int64_t run = 0;
  for (int x = 0; x < m.width; ++x)
    for (int y = 0; y < m.height; ++y) {
      const uint8_t v = m.at(x, y);
      if (v == cur) {
        ++run;
      } else {
        r.counts.push_back(run);
        cur = v;
        run = 1;
      }
    }
  r.counts.push_back(run);
  return r;
}

inline BinaryMask rle_decode(const Rle& r) {
  if (r.height < 1 || r.width < 1) throw RleError("rle: empty dimensions");
  int64_t total = 0;
  for (int64_t c : r.counts) {
    if (c < 0) throw RleError("rle: negative run length");
    total += c;
  }
  if (total != static_cast<int64_t>(r.height) * r.width) {
    throw RleError("rle: run sum " + std::to_string(total) +
                   " does not cover " + std::to_string(r.height) + "x" +
                   std::to_string(r.width));
  }
  BinaryMask m(r.width, r.height);
  int64_t pos = 0;
  uint8_t cur = 0;
  for (int64_t c : r.counts) {
    for (int64_t i = 0; i < c; ++i, ++pos) {
      const int x = static_cast<int>(pos / r.height);
      const int y = static_cast<int>(pos % r.height);
      m.set(x, y, cur);
    }
    cur ^= 1;
  }
  return m;
}

}  // namespace boxseg
