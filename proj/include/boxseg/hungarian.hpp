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

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace boxseg {

namespace detail_hungarian {

// Jonker-Volgenant style shortest augmenting path on a square cost matrix,
// minimizing. Returns the optimal total cost; col_of_row[i] = assigned column.
inline double solve_square_min(const std::vector<std::vector<double>>& cost,
                               std::vector<int>& col_of_row) {
  const int n = static_cast<int>(cost.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  col_of_row.assign(n, -1);
  double total = 0.0;
  for (int j = 1; j <= n; ++j) {
    if (p[j] >= 1) {
      col_of_row[p[j] - 1] = j - 1;
      total += cost[p[j] - 1][j - 1];
    }
  }
  return total;
}

// Maximum achievable IoU total over one-to-one assignments of the given
// (possibly rectangular) matrix, padded with zero-IoU entries.
inline double optimal_total(const std::vector<std::vector<double>>& iou) {
  const int P = static_cast<int>(iou.size());
  const int G = P > 0 ? static_cast<int>(iou[0].size()) : 0;
  if (P == 0 || G == 0) return 0.0;
  const int n = std::max(P, G);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < G; ++j) cost[i][j] = -iou[i][j];
  std::vector<int> col;
  return -solve_square_min(cost, col);
}

}  // namespace detail_hungarian

// One-to-one assignment of min(P,G) prediction-truth pairs maximizing total
// IoU. Among equal-total optima the lexicographically smallest pair list is
// returned (pairs sorted by prediction index).
inline std::vector<std::pair<int, int>> hungarian_match(
    const std::vector<std::vector<double>>& iou) {
  const int P = static_cast<int>(iou.size());
  const int G = P > 0 ? static_cast<int>(iou[0].size()) : 0;
  for (const auto& row : iou) {
    if (static_cast<int>(row.size()) != G) {
      throw std::invalid_argument("hungarian_match: ragged matrix");
    }
    for (double v : row) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw std::invalid_argument("hungarian_match: entries must be in [0,1]");
      }
    }
  }
  if (P == 0 || G == 0) return {};

  constexpr double kTieEps = 1e-9;
  std::vector<int> preds(P), gts(G);
  for (int i = 0; i < P; ++i) preds[i] = i;
  for (int j = 0; j < G; ++j) gts[j] = j;

  auto submatrix = [&iou](const std::vector<int>& rows,
                          const std::vector<int>& cols) {
    std::vector<std::vector<double>> m(rows.size(),
                                       std::vector<double>(cols.size()));
    for (size_t a = 0; a < rows.size(); ++a)
      for (size_t b = 0; b < cols.size(); ++b) m[a][b] = iou[rows[a]][cols[b]];
    return m;
  };

  // Lexicographic refinement: fix pairs in ascending (pred, gt) order
  // whenever doing so preserves the optimal total. Matching a prediction is
  // always lexicographically preferred over leaving it unmatched.
  std::vector<std::pair<int, int>> pairs;
  double remaining_opt = detail_hungarian::optimal_total(iou);
  std::vector<int> rest_preds = preds, rest_gts = gts;
  const int target_pairs = std::min(P, G);
  for (int p = 0; p < P && static_cast<int>(pairs.size()) < target_pairs; ++p) {
    std::vector<int> without_p;
    for (int r : rest_preds)
      if (r != p) without_p.push_back(r);

    bool fixed = false;
    for (int g : rest_gts) {
      std::vector<int> without_g;
      for (int c : rest_gts)
        if (c != g) without_g.push_back(c);
      const double opt_rest =
          detail_hungarian::optimal_total(submatrix(without_p, without_g));
      if (iou[p][g] + opt_rest >= remaining_opt - kTieEps) {
        pairs.emplace_back(p, g);
        remaining_opt -= iou[p][g];
        rest_preds = without_p;
        rest_gts = without_g;
        fixed = true;
        break;
      }
    }
    if (!fixed) {
      // p is unmatched in every optimal assignment; legal only while the
      // remaining predictions still cover every remaining truth.
      if (static_cast<int>(without_p.size()) <
          static_cast<int>(rest_gts.size())) {
        throw std::logic_error("hungarian_match: refinement failed");
      }
      rest_preds = without_p;
    }
  }
  return pairs;
}

}  // namespace boxseg
