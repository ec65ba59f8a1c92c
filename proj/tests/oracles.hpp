#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. Each one is written independently of the library code it checks.

#include <algorithm>
#include <bitset>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <vector>

#include "e3dp/cloud.hpp"
#include "e3dp/rng.hpp"

namespace oracle {

using e3dp::Vec3;

inline std::vector<std::size_t> radius_scan(const std::vector<Vec3>& pts, const Vec3& q, double r) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if ((pts[i] - q).norm() <= r) out.push_back(i);
  return out;
}

/// Greedy FPS from scratch: recompute every min-distance each round;
/// ties go to the lowest index.
inline std::vector<std::size_t> fps(const std::vector<Vec3>& pts, std::size_t h, std::size_t start) {
  std::vector<std::size_t> chosen{start};
  h = std::min(h, pts.size());
  while (chosen.size() < h) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) d = std::min(d, (pts[i] - pts[c]).norm());
      if (d > best) {
        best = d;
        arg = i;
      }
    }
    chosen.push_back(arg);
  }
  return chosen;
}

/// Connected components of the "distance <= r" graph over masked points
/// from the full distance matrix, by flood fill. Components below
/// `min_size` are dropped; each component sorted, list sorted by first index.
inline std::vector<std::vector<std::size_t>> components(const std::vector<Vec3>& pts, const std::vector<bool>& mask,
                                                        double r, std::size_t min_size) {
  const std::size_t n = pts.size();
  std::vector<int> comp(n, -1);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; ++s) {
    if (!mask[s] || comp[s] >= 0) continue;
    std::vector<std::size_t> members{s};
    comp[s] = static_cast<int>(out.size());
    for (std::size_t k = 0; k < members.size(); ++k)
      for (std::size_t j = 0; j < n; ++j)
        if (mask[j] && comp[j] < 0 && (pts[members[k]] - pts[j]).norm() <= r) {
          comp[j] = comp[s];
          members.push_back(j);
        }
    std::sort(members.begin(), members.end());
    out.push_back(std::move(members));
  }
  std::vector<std::vector<std::size_t>> kept;
  for (auto& c : out)
    if (c.size() >= min_size) kept.push_back(std::move(c));
  return kept;
}

/// All-pairs shortest paths (Floyd-Warshall) over an explicit edge list.
inline std::vector<std::vector<double>> floyd(std::size_t n,
                                              const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0.0;
  for (const auto& [a, b, w] : edges) {
    d[a][b] = std::min(d[a][b], w);
    d[b][a] = std::min(d[b][a], w);
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

/// Symmetrized kNN edges (k nearest by distance, lowest index on ties).
inline std::vector<std::tuple<std::size_t, std::size_t, double>> knn_edges(const std::vector<Vec3>& pts, std::size_t k) {
  std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (j != i) d.push_back({(pts[i] - pts[j]).norm(), j});
    std::sort(d.begin(), d.end());
    for (std::size_t m = 0; m < std::min(k, d.size()); ++m) edges.emplace_back(i, d[m].second, d[m].first);
  }
  return edges;
}

/// Exhaustive AP matcher over bitmask instances (M <= 256 points).
struct APOracle {
  using Mask = std::bitset<256>;
  struct Curve {
    std::vector<bool> tp;
    std::vector<double> precision, recall;
    double ap = 0.0;
  };

  static double iou(const Mask& a, const Mask& b) {
    const auto u = (a | b).count();
    return u == 0 ? 0.0 : static_cast<double>((a & b).count()) / static_cast<double>(u);
  }

  /// `preds` must already be in ranking order.
  static Curve run(const std::vector<Mask>& preds, const std::vector<Mask>& gts, double t) {
    Curve c;
    std::vector<bool> used(gts.size(), false);
    std::size_t tp = 0;
    for (std::size_t r = 0; r < preds.size(); ++r) {
      // Unmatched GT with the highest IoU (first on ties).
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        const double v = iou(preds[r], gts[g]);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      const bool hit = best >= 0 && best_iou >= t;
      if (hit) {
        used[static_cast<std::size_t>(best)] = true;
        ++tp;
      }
      c.tp.push_back(hit);
      c.precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
      c.recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
    }
    // Exact rational area: each TP adds 1/G recall at the best precision
    // achievable at or after its rank, max_j tp_j / (j + 1).
    long double area = 0.0L;
    std::size_t tp_so_far = 0;
    for (std::size_t r = 0; r < preds.size(); ++r) {
      if (!c.tp[r]) continue;
      ++tp_so_far;
      long double best = 0.0L;
      std::size_t count = tp_so_far;
      for (std::size_t j = r; j < preds.size(); ++j) {
        if (j > r && c.tp[j]) ++count;
        best = std::max(best, static_cast<long double>(count) / static_cast<long double>(j + 1));
      }
      area += best / static_cast<long double>(gts.size());
    }
    c.ap = static_cast<double>(area);
    return c;
  }
};

}  // namespace oracle
