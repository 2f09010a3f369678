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

#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "boxseg/mask.hpp"

namespace boxseg {

// Binary PGM (P5, maxval 255). Masks store foreground as 255.
inline void write_pgm(const std::string& path,
                      const std::vector<uint8_t>& gray, int width,
                      int height) {
  if (static_cast<size_t>(width) * height != gray.size()) {
    throw std::invalid_argument("write_pgm: buffer size mismatch");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()),
            static_cast<std::streamsize>(gray.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void write_mask_pgm(const std::string& path, const BinaryMask& m) {
  std::vector<uint8_t> gray(m.size());
  for (size_t i = 0; i < gray.size(); ++i) gray[i] = m.bits[i] ? 255 : 0;
  write_pgm(path, gray, m.width, m.height);
}

inline std::vector<uint8_t> read_pgm(const std::string& path, int& width,
                                     int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open PGM: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("not a P5 PGM: " + path);
  // Header tokens may be separated by whitespace and '#' comments.
  auto next_int = [&in, &path]() {
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    int v = 0;
    if (!(in >> v)) throw std::runtime_error("bad PGM header: " + path);
    return v;
  };
  width = next_int();
  height = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw std::runtime_error("PGM maxval must be 255: " + path);
  in.get();  // single whitespace before the raster
  std::vector<uint8_t> gray(static_cast<size_t>(width) * height);
  in.read(reinterpret_cast<char*>(gray.data()),
          static_cast<std::streamsize>(gray.size()));
  if (!in) throw std::runtime_error("truncated PGM raster: " + path);
  return gray;
}

inline BinaryMask read_mask_pgm(const std::string& path) {
  int w = 0, h = 0;
  std::vector<uint8_t> gray = read_pgm(path, w, h);
  BinaryMask m(w, h);
  for (size_t i = 0; i < gray.size(); ++i) m.bits[i] = gray[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace boxseg
