#pragma once

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "e3dp/cloud.hpp"
#include "e3dp/error.hpp"
#include "e3dp/io.hpp"
#include "e3dp/spatial_index.hpp"

namespace e3dp::traits {

struct PcaAxes {
  Vec3 centroid = Vec3::Zero();
  std::array<Vec3, 3> axes;      // descending variance
  Vec3 eigenvalues = Vec3::Zero();
};

/// Flips v so its largest-magnitude component is positive (first on ties).
inline Vec3 canonical_sign(Vec3 v) {
  int arg = 0;
  for (int a = 1; a < 3; ++a)
    if (std::abs(v[a]) > std::abs(v[arg])) arg = a;
  return v[arg] < 0 ? Vec3(-v) : v;
}

inline PcaAxes pca_axes(std::span<const Vec3> pts) {
  if (pts.empty()) throw DataError("PCA of an empty point set");
  PcaAxes out;
  for (const auto& p : pts) out.centroid += p;
  out.centroid /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    const Vec3 d = p - out.centroid;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(pts.size());
  const double scale = cov.trace();
  if (!(scale > 0.0)) throw DataError("PCA covariance has rank 0 (all points identical)");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  // Eigen sorts ascending.
  for (int k = 0; k < 3; ++k) {
    out.axes[k] = canonical_sign(es.eigenvectors().col(2 - k));
    out.eigenvalues[k] = std::max(0.0, es.eigenvalues()[2 - k]);
  }
  return out;
}

struct Line {
  Vec3 point;
  Vec3 direction;  // unit

  double distance(const Vec3& p) const {
    const Vec3 d = p - point;
    return (d - d.dot(direction) * direction).norm();
  }
};

/// Total least squares line: through the centroid along the first principal axis.
inline Line fit_line_tls(std::span<const Vec3> pts) {
  const auto pca = pca_axes(pts);
  return {pca.centroid, pca.axes[0]};
}

/// Symmetrized k-nearest-neighbor graph with Euclidean edge weights.
class KnnGraph {
 public:
  KnnGraph(std::span<const Vec3> pts, std::size_t k) : pts_(pts.begin(), pts.end()), adj_(pts.size()) {
    if (pts.empty()) throw DataError("graph over an empty point set");
    if (k == 0) throw DataError("k must be positive");
    const SpatialIndex index(pts_);
    for (std::size_t i = 0; i < pts_.size(); ++i)
      for (std::size_t j : index.nearest(pts_[i], k, i)) {
        adj_[i].push_back(j);
        adj_[j].push_back(i);
      }
    for (auto& a : adj_) {
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
    }
  }

  std::size_t size() const noexcept { return pts_.size(); }
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return adj_[i]; }
  const Vec3& point(std::size_t i) const { return pts_[i]; }

  /// Dijkstra distances from `src` (infinity where unreachable). Stops early
  /// once `target` is settled.
  std::vector<double> distances(std::size_t src, std::size_t target = SIZE_MAX) const {
    std::vector<double> dist(pts_.size(), std::numeric_limits<double>::infinity());
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[src] = 0.0;
    heap.emplace(0.0, src);
    while (!heap.empty()) {
      const auto [d, u] = heap.top();
      heap.pop();
      if (d > dist[u]) continue;
      if (u == target) break;
      for (std::size_t v : adj_[u]) {
        const double nd = d + (pts_[u] - pts_[v]).norm();
        if (nd < dist[v]) {
          dist[v] = nd;
          heap.emplace(nd, v);
        }
      }
    }
    return dist;
  }

  /// Shortest path length, nullopt when disconnected.
  std::optional<double> shortest_path(std::size_t i, std::size_t j) const {
    if (i >= size() || j >= size()) throw DataError("path endpoint out of range");
    if (i == j) return 0.0;
    const double d = distances(i, j)[j];
    if (!std::isfinite(d)) return std::nullopt;
    return d;
  }

 private:
  std::vector<Vec3> pts_;
  std::vector<std::vector<std::size_t>> adj_;
};

inline constexpr std::size_t kGraphNeighbors = 10;

inline std::optional<double> shortest_path(std::span<const Vec3> pts, std::size_t i, std::size_t j,
                                           std::size_t k = kGraphNeighbors) {
  return KnnGraph(pts, k).shortest_path(i, j);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of nothing");
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  const double hi = v[h];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h));
  return 0.5 * (lo + hi);
}

/// Twice the median distance of the lowest z-quarter of stem points to
/// their fitted axis.
inline double stem_diameter(std::span<const Vec3> stem) {
  if (stem.size() < 8) throw DataError("stem diameter needs at least 8 stem points, got " + std::to_string(stem.size()));
  double zlo = stem.front().z(), zhi = zlo;
  for (const auto& p : stem) {
    zlo = std::min(zlo, p.z());
    zhi = std::max(zhi, p.z());
  }
  if (!(zhi > zlo)) throw DataError("stem points span no z range");
  const double cut = zlo + (zhi - zlo) / 4.0;
  std::vector<Vec3> low;
  for (const auto& p : stem)
    if (p.z() <= cut) low.push_back(p);
  if (low.size() < 2) throw DataError("lowest stem section has fewer than 2 points");
  const Line axis = fit_line_tls(low);
  std::vector<double> d;
  d.reserve(low.size());
  for (const auto& p : low) d.push_back(axis.distance(p));
  const double diam = 2.0 * median(std::move(d));
  if (!(diam > 0.0)) throw DataError("stem section is degenerate (collinear points)");
  return diam;
}

enum TraitFlag : unsigned {
  kNoFlags = 0,
  kDisconnectedFallback = 1u << 0,  // endpoints not connected; straight-line distance used
};

inline std::string flags_text(unsigned f) {
  return (f & kDisconnectedFallback) ? "disconnected_fallback" : "";
}

struct Measure {
  double value = 0.0;
  unsigned flags = kNoFlags;
};

namespace detail {

inline Measure path_or_chord(const KnnGraph& g, std::size_t i, std::size_t j) {
  if (auto d = g.shortest_path(i, j)) return {*d, kNoFlags};
  return {(g.point(i) - g.point(j)).norm(), kDisconnectedFallback};
}

inline void require_leaf_size(std::span<const Vec3> leaf, std::size_t k) {
  if (leaf.size() < k + 1)
    throw DataError("leaf measurement needs at least " + std::to_string(k + 1) + " points, got " +
                    std::to_string(leaf.size()));
}

/// Lowest index of the min and max projection (ties keep the first).
inline std::pair<std::size_t, std::size_t> extremes(std::span<const Vec3> pts, const std::vector<std::size_t>& subset,
                                                    const Vec3& axis, double& spread) {
  std::size_t lo = subset.front(), hi = subset.front();
  double vlo = pts[lo].dot(axis), vhi = vlo;
  for (std::size_t i : subset) {
    const double v = pts[i].dot(axis);
    if (v < vlo) {
      vlo = v;
      lo = i;
    }
    if (v > vhi) {
      vhi = v;
      hi = i;
    }
  }
  spread = vhi - vlo;
  return {lo, hi};
}

}  // namespace detail

/// Geodesic distance between the two extreme points along the first principal axis.
inline Measure leaf_length(std::span<const Vec3> leaf, const KnnGraph& graph, const PcaAxes& pca) {
  std::vector<std::size_t> all(leaf.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  double spread = 0.0;
  const auto [a, b] = detail::extremes(leaf, all, pca.axes[0], spread);
  return detail::path_or_chord(graph, a, b);
}

inline Measure leaf_length(std::span<const Vec3> leaf, std::size_t k = kGraphNeighbors) {
  detail::require_leaf_size(leaf, k);
  return leaf_length(leaf, KnnGraph(leaf, k), pca_axes(leaf));
}

/// Longest geodesic among end-point pairs along PC2 and PC3 inside five
/// equal PC1 bins. Bins with fewer than 3 points are skipped, as are pairs
/// whose spread along the axis is at round-off level.
inline Measure leaf_width(std::span<const Vec3> leaf, const KnnGraph& graph, const PcaAxes& pca) {
  constexpr int kBins = 5;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : leaf) {
    const double v = p.dot(pca.axes[0]);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double extent = hi - lo;
  if (!(extent > 0.0)) throw DataError("leaf has no extent along its first principal axis");
  std::array<std::vector<std::size_t>, kBins> bins;
  for (std::size_t i = 0; i < leaf.size(); ++i) {
    int b = static_cast<int>(std::floor((leaf[i].dot(pca.axes[0]) - lo) / extent * kBins));
    bins[static_cast<std::size_t>(std::clamp(b, 0, kBins - 1))].push_back(i);
  }
  const double tiny = 1e-9 * extent;
  Measure best{-1.0, kNoFlags};
  for (const auto& bin : bins) {
    if (bin.size() < 3) continue;
    for (int axis = 1; axis <= 2; ++axis) {
      double spread = 0.0;
      const auto [a, b] = detail::extremes(leaf, bin, pca.axes[static_cast<std::size_t>(axis)], spread);
      if (!(spread > tiny)) continue;
      const Measure m = detail::path_or_chord(graph, a, b);
      if (m.value > best.value) best = m;
    }
  }
  if (best.value < 0.0) throw DataError("leaf width undefined: every bin is degenerate");
  return best;
}

inline Measure leaf_width(std::span<const Vec3> leaf, std::size_t k = kGraphNeighbors) {
  detail::require_leaf_size(leaf, k);
  return leaf_width(leaf, KnnGraph(leaf, k), pca_axes(leaf));
}

/// One pass of tangent-plane projection: each point moves onto the PCA plane
/// of its `k` nearest neighbors. Removes off-surface scatter that would
/// otherwise lengthen every graph path; planar input is left unchanged.
inline std::vector<Vec3> project_to_tangent_planes(std::span<const Vec3> pts, std::size_t k) {
  std::vector<Vec3> out(pts.begin(), pts.end());
  if (k < 3 || pts.size() < 3) return out;
  const SpatialIndex index(out);
  std::vector<Vec3> nb;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    nb.clear();
    for (std::size_t j : index.nearest(pts[i], k)) nb.push_back(pts[j]);
    Vec3 c = Vec3::Zero();
    for (const auto& q : nb) c += q;
    c /= static_cast<double>(nb.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& q : nb) cov += (q - c) * (q - c).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    // Skip neighborhoods that do not define a plane (collinear or coincident).
    if (!(es.eigenvalues()[1] > 1e-12 * std::max(1.0, es.eigenvalues()[2]))) continue;
    const Vec3 n = es.eigenvectors().col(0);
    out[i] = pts[i] - (pts[i] - c).dot(n) * n;
  }
  return out;
}

struct TraitOptions {
  std::size_t neighbors = kGraphNeighbors;
  std::size_t min_leaf_points = 50;
  std::size_t smooth_neighbors = 40;  // 0 measures leaves on the raw points
};

struct LeafTraits {
  int instance = -1;
  std::size_t points = 0;
  Measure length, width;
};

struct TraitReport {
  std::string cloud_id;
  std::string provenance;  // which labels produced the organs, e.g. "ground-truth", "predicted"
  std::optional<double> stem_diameter;
  std::vector<LeafTraits> leaves;
  std::vector<std::string> warnings;
};

/// Traits from a labeled cloud: stem points by semantic label, leaves by
/// instance id. Leaves below `min_leaf_points` are skipped.
inline TraitReport extract_traits(const PointCloud& cloud, const std::string& provenance,
                                  const TraitOptions& opt = {}) {
  const std::size_t k = opt.neighbors;
  if (!cloud.has_semantic()) throw DataError(cloud.source_id + ": trait extraction needs semantic labels");
  TraitReport rep{cloud.source_id, provenance, std::nullopt, {}, {}};
  std::vector<Vec3> stem;
  std::map<int, std::vector<Vec3>> leaves;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.semantic_at(i) == label::kStem) stem.push_back(cloud.coords[i]);
    if (cloud.semantic_at(i) == label::kLeaf && cloud.instance_at(i) >= 0)
      leaves[cloud.instance_at(i)].push_back(cloud.coords[i]);
  }
  try {
    rep.stem_diameter = stem_diameter(stem);
  } catch (const DataError& e) {
    rep.warnings.push_back(std::string("stem diameter: ") + e.what());
  }
  for (const auto& [id, raw] : leaves) {
    if (raw.size() < std::max(opt.min_leaf_points, k + 1)) continue;
    try {
      const auto pts = project_to_tangent_planes(raw, opt.smooth_neighbors);
      const KnnGraph g(pts, k);
      const PcaAxes pca = pca_axes(pts);
      LeafTraits lt{id, pts.size(), leaf_length(pts, g, pca), leaf_width(pts, g, pca)};
      if ((lt.length.flags | lt.width.flags) & kDisconnectedFallback)
        rep.warnings.push_back("leaf " + std::to_string(id) + ": disconnected graph, straight-line fallback");
      rep.leaves.push_back(lt);
    } catch (const DataError& e) {
      rep.warnings.push_back("leaf " + std::to_string(id) + ": " + e.what());
    }
  }
  return rep;
}

inline std::string csv_header() { return "cloud_id,trait,organ_id,value_mm,flags\n"; }

inline std::string to_csv(const TraitReport& r) {
  using e3dp::detail::format_double;
  std::string out;
  if (r.stem_diameter) out += r.cloud_id + ",stem_diameter,stem," + format_double(*r.stem_diameter) + ",\n";
  for (const auto& l : r.leaves) {
    const std::string organ = "leaf_" + std::to_string(l.instance);
    out += r.cloud_id + ",leaf_length," + organ + "," + format_double(l.length.value) + "," +
           flags_text(l.length.flags) + "\n";
    out += r.cloud_id + ",leaf_width," + organ + "," + format_double(l.width.value) + "," +
           flags_text(l.width.flags) + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const TraitReport& r) {
  nlohmann::json j;
  j["cloud_id"] = r.cloud_id;
  j["provenance"] = r.provenance;
  j["stem_diameter_mm"] = r.stem_diameter ? nlohmann::json(*r.stem_diameter) : nlohmann::json(nullptr);
  j["leaves"] = nlohmann::json::array();
  for (const auto& l : r.leaves)
    j["leaves"].push_back({{"instance", l.instance},
                           {"points", l.points},
                           {"length_mm", l.length.value},
                           {"width_mm", l.width.value},
                           {"flags", flags_text(l.length.flags | l.width.flags)}});
  j["warnings"] = r.warnings;
  return j;
}

/// One row of a trait CSV (reports or manual ground-truth measurements).
struct TraitRow {
  std::string cloud_id, trait, organ_id;
  double value_mm = 0.0;
  std::string flags;
};

inline std::vector<TraitRow> parse_trait_csv(std::string_view text, const std::string& source) {
  std::vector<TraitRow> rows;
  std::size_t line_no = 0;
  for (std::string_view line : e3dp::detail::lines_of(text)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    if (line_no == 1 && line.rfind("cloud_id,", 0) == 0) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto c = line.find(',', start);
      f.emplace_back(line.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
      if (c == std::string_view::npos) break;
      start = c + 1;
    }
    if (f.size() < 4 || f.size() > 5) throw ParseError(source, line_no, "expected 4 or 5 comma-separated fields");
    double v = 0.0;
    if (!e3dp::detail::parse_double(f[3], v)) throw ParseError(source, line_no, "bad value '" + f[3] + "'");
    rows.push_back({f[0], f[1], f[2], v, f.size() == 5 ? f[4] : ""});
  }
  return rows;
}

}  // namespace e3dp::traits
