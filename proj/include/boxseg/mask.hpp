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
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace boxseg {

// Row-major boolean raster.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;  // 0 or 1, size width*height

  BinaryMask() = default;
  BinaryMask(int w, int h, uint8_t fill = 0)
      : width(w), height(h), bits(static_cast<size_t>(w) * h, fill) {
    if (w < 1 || h < 1) throw std::invalid_argument("empty mask extent");
  }

  uint8_t at(int x, int y) const { return bits[static_cast<size_t>(y) * width + x]; }
  void set(int x, int y, uint8_t v) { bits[static_cast<size_t>(y) * width + x] = v; }
  size_t size() const { return bits.size(); }

  bool same_dims(const BinaryMask& o) const {
    return width == o.width && height == o.height;
  }

  int64_t area() const {
    int64_t n = 0;
    for (uint8_t b : bits) n += b;
    return n;
  }

  bool empty_mask() const { return area() == 0; }

  bool operator==(const BinaryMask& o) const {
    return width == o.width && height == o.height && bits == o.bits;
  }

  // Tight pixel bounding box [x1,y1,x2,y2), or nullopt for an empty mask.
  std::optional<std::array<int, 4>> tight_box() const {
    int x1 = width, y1 = height, x2 = -1, y2 = -1;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (at(x, y)) {
          x1 = std::min(x1, x);
          y1 = std::min(y1, y);
          x2 = std::max(x2, x);
          y2 = std::max(y2, y);
        }
    if (x2 < 0) return std::nullopt;
    return std::array<int, 4>{x1, y1, x2 + 1, y2 + 1};
  }
};

namespace maskops {

inline void require_same_dims(const BinaryMask& a, const BinaryMask& b,
                              const char* op) {
  if (!a.same_dims(b)) {
    throw std::invalid_argument(std::string(op) + ": mask dimension mismatch");
  }
}

inline int64_t intersection_area(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a, b, "intersection");
  int64_t n = 0;
  for (size_t i = 0; i < a.size(); ++i) n += (a.bits[i] & b.bits[i]);
  return n;
}

inline int64_t union_area(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a, b, "union");
  int64_t n = 0;
  for (size_t i = 0; i < a.size(); ++i) n += (a.bits[i] | b.bits[i]);
  return n;
}

inline BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a, b, "union");
  BinaryMask out = a;
  for (size_t i = 0; i < out.size(); ++i) out.bits[i] |= b.bits[i];
  return out;
}

inline BinaryMask mask_minus(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a, b, "difference");
  BinaryMask out = a;
  for (size_t i = 0; i < out.size(); ++i)
    out.bits[i] = static_cast<uint8_t>(out.bits[i] & ~b.bits[i] & 1);
  return out;
}

// One dilation step with the 3x3 square structuring element.
inline BinaryMask dilate(const BinaryMask& m, int radius = 1) {
  BinaryMask cur = m;
  for (int it = 0; it < radius; ++it) {
    BinaryMask next(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        uint8_t v = 0;
        for (int dy = -1; dy <= 1 && !v; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= m.height) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= m.width) continue;
            if (cur.at(xx, yy)) {
              v = 1;
              break;
            }
          }
        }
        next.set(x, y, v);
      }
    cur = std::move(next);
  }
  return cur;
}

// Erosion with the 3x3 square element; pixels beyond the border count as
// background.
inline BinaryMask erode(const BinaryMask& m, int radius = 1) {
  BinaryMask cur = m;
  for (int it = 0; it < radius; ++it) {
    BinaryMask next(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x) {
        uint8_t v = cur.at(x, y);
        for (int dy = -1; dy <= 1 && v; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= m.height) {
            v = 0;
            break;
          }
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = x + dx;
            if (xx < 0 || xx >= m.width || !cur.at(xx, yy)) {
              v = 0;
              break;
            }
          }
        }
        next.set(x, y, v);
      }
    cur = std::move(next);
  }
  return cur;
}

inline BinaryMask opening(const BinaryMask& m) { return dilate(erode(m)); }
inline BinaryMask closing(const BinaryMask& m) { return erode(dilate(m)); }

// 4-connected foreground components, each returned as its own mask.
inline std::vector<BinaryMask> connected_components(const BinaryMask& m) {
  std::vector<BinaryMask> comps;
  std::vector<uint8_t> seen(m.size(), 0);
  std::vector<int> stack;
  for (int y0 = 0; y0 < m.height; ++y0)
    for (int x0 = 0; x0 < m.width; ++x0) {
      const size_t start = static_cast<size_t>(y0) * m.width + x0;
      if (!m.bits[start] || seen[start]) continue;
      BinaryMask comp(m.width, m.height);
      stack.push_back(static_cast<int>(start));
      seen[start] = 1;
      while (!stack.empty()) {
        const int idx = stack.back();
        stack.pop_back();
        comp.bits[static_cast<size_t>(idx)] = 1;
        const int x = idx % m.width, y = idx / m.width;
        const int nbr[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
        for (auto& [nx, ny] : nbr) {
          if (nx < 0 || nx >= m.width || ny < 0 || ny >= m.height) continue;
          const size_t ni = static_cast<size_t>(ny) * m.width + nx;
          if (m.bits[ni] && !seen[ni]) {
            seen[ni] = 1;
            stack.push_back(static_cast<int>(ni));
          }
        }
      }
      comps.push_back(std::move(comp));
    }
  return comps;
}

// Background components not reachable from the border (4-connectivity)
// become foreground.
inline BinaryMask fill_holes(const BinaryMask& m) {
  BinaryMask reach(m.width, m.height);
  std::vector<int> stack;
  auto push = [&](int x, int y) {
    const size_t i = static_cast<size_t>(y) * m.width + x;
    if (!m.bits[i] && !reach.bits[i]) {
      reach.bits[i] = 1;
      stack.push_back(static_cast<int>(i));
    }
  };
  for (int x = 0; x < m.width; ++x) {
    push(x, 0);
    push(x, m.height - 1);
  }
  for (int y = 0; y < m.height; ++y) {
    push(0, y);
    push(m.width - 1, y);
  }
  while (!stack.empty()) {
    const int idx = stack.back();
    stack.pop_back();
    const int x = idx % m.width, y = idx / m.width;
    if (x > 0) push(x - 1, y);
    if (x + 1 < m.width) push(x + 1, y);
    if (y > 0) push(x, y - 1);
    if (y + 1 < m.height) push(x, y + 1);
  }
  BinaryMask out = m;
  for (size_t i = 0; i < out.size(); ++i)
    if (!out.bits[i] && !reach.bits[i]) out.bits[i] = 1;
  return out;
}

inline bool boxes_intersect(const std::array<int, 4>& a,
                            const std::array<int, 4>& b) {
  return a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3];
}

}  // namespace maskops
}  // namespace boxseg
