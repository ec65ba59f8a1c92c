#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "e3dp/cloud.hpp"

namespace e3dp {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

inline CellKey cell_of(const Vec3& p, double cell) {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell)), static_cast<std::int64_t>(std::floor(p.y() / cell)),
          static_cast<std::int64_t>(std::floor(p.z() / cell))};
}

/// Uniform hash grid over a fixed coordinate array. Immutable after
/// construction; queries are const and thread-safe.
class SpatialIndex {
 public:
  /// `cell_size` <= 0 picks a size giving roughly a few points per cell.
  explicit SpatialIndex(std::vector<Vec3> coords, double cell_size = 0.0) : coords_(std::move(coords)) {
    if (coords_.empty()) throw DataError("cannot build a spatial index over an empty point set");
    cell_ = cell_size > 0.0 ? cell_size : auto_cell_size();
    order_.resize(coords_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::vector<CellKey> keys(coords_.size());
    for (std::size_t i = 0; i < coords_.size(); ++i) keys[i] = cell_of(coords_[i], cell_);
    auto less = [](const CellKey& a, const CellKey& b) {
      return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
    };
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return less(keys[a], keys[b]); });
    CellKey lo = keys.front(), hi = keys.front();
    for (const auto& k : keys) {
      lo = {std::min(lo.x, k.x), std::min(lo.y, k.y), std::min(lo.z, k.z)};
      hi = {std::max(hi.x, k.x), std::max(hi.y, k.y), std::max(hi.z, k.z)};
    }
    grid_lo_ = lo;
    grid_hi_ = hi;
    for (std::size_t b = 0; b < order_.size();) {
      std::size_t e = b + 1;
      while (e < order_.size() && keys[order_[e]] == keys[order_[b]]) ++e;
      cells_.emplace(keys[order_[b]], std::pair{b, e});
      b = e;
    }
  }

  double cell_size() const noexcept { return cell_; }
  std::size_t size() const noexcept { return coords_.size(); }
  const std::vector<Vec3>& coords() const noexcept { return coords_; }

  /// All i with |coords[i] - query| <= r, ascending.
  std::vector<std::size_t> radius_neighbors(const Vec3& query, double r) const {
    std::vector<std::size_t> out;
    radius_neighbors(query, r, out);
    return out;
  }

  void radius_neighbors(const Vec3& query, double r, std::vector<std::size_t>& out) const {
    out.clear();
    if (!(r > 0.0)) throw DataError("radius must be positive");
    const double r2 = r * r;
    const CellKey lo = cell_of(query - Vec3::Constant(r), cell_);
    const CellKey hi = cell_of(query + Vec3::Constant(r), cell_);
    for (std::int64_t x = lo.x; x <= hi.x; ++x)
      for (std::int64_t y = lo.y; y <= hi.y; ++y)
        for (std::int64_t z = lo.z; z <= hi.z; ++z) {
          const auto it = cells_.find({x, y, z});
          if (it == cells_.end()) continue;
          for (std::size_t k = it->second.first; k < it->second.second; ++k) {
            const std::size_t i = order_[k];
            if ((coords_[i] - query).squaredNorm() <= r2) out.push_back(i);
          }
        }
    std::sort(out.begin(), out.end());
  }

  /// The k nearest points to `query` (excluding `exclude` if given), nearest
  /// first; ties by lower index.
  std::vector<std::size_t> nearest(const Vec3& query, std::size_t k,
                                   std::size_t exclude = std::numeric_limits<std::size_t>::max()) const {
    std::vector<std::pair<double, std::size_t>> best;
    const std::size_t available = coords_.size() - (exclude < coords_.size() ? 1 : 0);
    k = std::min(k, available);
    if (k == 0) return {};
    const CellKey c = cell_of(query, cell_);
    // Ring at which every grid cell has been visited.
    const std::int64_t last_ring = std::max({c.x - grid_lo_.x, grid_hi_.x - c.x, c.y - grid_lo_.y, grid_hi_.y - c.y,
                                             c.z - grid_lo_.z, grid_hi_.z - c.z, std::int64_t{0}});
    for (std::int64_t ring = 0; ring <= last_ring; ++ring) {
      visit_shell(c, ring, [&](std::size_t i) {
        if (i != exclude) best.emplace_back((coords_[i] - query).squaredNorm(), i);
      });
      // Everything within ring * cell of the query has been visited.
      if (best.size() >= k) {
        std::nth_element(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(k - 1), best.end());
        const double kth = best[k - 1].first;
        const double covered = static_cast<double>(ring) * cell_;
        if (kth <= covered * covered) break;
      }
    }
    std::sort(best.begin(), best.end());
    best.resize(k);
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = best[i].second;
    return out;
  }

 private:
  double auto_cell_size() {
    Vec3 lo = coords_.front(), hi = coords_.front();
    for (const auto& p : coords_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Vec3 ext = hi - lo;
    const double n = static_cast<double>(coords_.size());
    // Size cells by the occupied dimensions only, so sheets and lines do not
    // collapse to microscopic cells. About four points per cell.
    double measure = 1.0;
    int dims = 0;
    for (int a = 0; a < 3; ++a)
      if (ext[a] > 1e-6 * ext.maxCoeff()) {
        measure *= ext[a];
        ++dims;
      }
    double cell = dims == 0 ? 1.0 : std::pow(measure * 4.0 / n, 1.0 / dims);
    cell = std::max(cell, ext.maxCoeff() * 1e-6);
    return cell > 0.0 && std::isfinite(cell) ? cell : 1.0;
  }

  template <typename F>
  void visit_shell(const CellKey& c, std::int64_t ring, F&& f) const {
    for (std::int64_t x = c.x - ring; x <= c.x + ring; ++x)
      for (std::int64_t y = c.y - ring; y <= c.y + ring; ++y)
        for (std::int64_t z = c.z - ring; z <= c.z + ring; ++z) {
          if (std::max({std::abs(x - c.x), std::abs(y - c.y), std::abs(z - c.z)}) != ring) continue;
          const auto it = cells_.find({x, y, z});
          if (it == cells_.end()) continue;
          for (std::size_t k = it->second.first; k < it->second.second; ++k) f(order_[k]);
        }
  }

  std::vector<Vec3> coords_;
  double cell_ = 1.0;
  std::vector<std::size_t> order_;
  std::unordered_map<CellKey, std::pair<std::size_t, std::size_t>, CellKeyHash> cells_;
  CellKey grid_lo_{}, grid_hi_{};
};

}  // namespace e3dp
