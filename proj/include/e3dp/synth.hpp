#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "e3dp/cloud.hpp"
#include "e3dp/error.hpp"
#include "e3dp/io.hpp"
#include "e3dp/rng.hpp"
#include "e3dp/spatial_index.hpp"

namespace e3dp::synth {

/// Arc length of a circular arc with chord `chord` turning through `angle` radians.
inline double arc_from_chord(double chord, double angle) {
  const double h = 0.5 * std::abs(angle);
  if (h < 1e-12) return chord;
  return chord * h / std::sin(h);
}

struct StemSpec {
  double height = 100.0;     // mm, along the axis
  double radius = 2.0;       // mm
  double tilt = 0.0;         // rad from vertical
  double tilt_azimuth = 0.0; // rad
  double curvature = 0.0;    // 1/mm, bend of the axis
};

/// A leaf: elliptical planform over a circular-arc midrib, with a
/// circular-arc cross section (cupping). `length` and `width` are chords;
/// the true midrib and cross arcs follow from `droop` and `cup`.
struct LeafSpec {
  double attach_height = 50.0;  // mm along the stem axis
  double azimuth = 0.0;         // rad
  double elevation = 0.4;       // rad above horizontal at the base
  double length = 40.0;         // mm, base-to-tip chord
  double width = 15.0;          // mm, edge-to-edge chord at the widest section
  double droop = 0.0;           // rad, total turn of the midrib
  double cup = 0.0;             // rad, total turn across the widest section

  double arc_length() const { return arc_from_chord(length, droop); }
  double arc_width() const { return arc_from_chord(width, cup); }
};

struct HoleSpec {
  int count = 0;         // per leaf
  double radius = 1.5;   // mm
};

struct ColorSpec {
  Vec3 stem{0.48, 0.52, 0.30};
  Vec3 leaf{0.30, 0.58, 0.24};
  double sigma = 0.05;  // per-point, per-channel
};

struct PlantSpec {
  std::string id = "plant";
  StemSpec stem;
  std::vector<LeafSpec> leaves;
  double density = 3.5;       // points per mm^2
  double noise_sigma = 0.0;   // mm, applied after ground truth
  double jitter = 0.5;        // sample offset within its grid cell, fraction of the cell
  HoleSpec holes;
  ColorSpec colors;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(stem.height > 0 && stem.radius > 0)) throw ConfigError("stem height and radius must be positive");
    if (!(density > 0)) throw ConfigError("sampling density must be positive");
    if (jitter < 0 || jitter > 1) throw ConfigError("jitter must lie in [0,1]");
    if (noise_sigma < 0) throw ConfigError("noise sigma must be >= 0");
    if (holes.count < 0 || !(holes.radius > 0)) throw ConfigError("hole count must be >= 0 and radius > 0");
    if (std::abs(stem.curvature) * stem.height > 1.0) throw ConfigError("stem curvature too strong for its height");
    for (const auto& l : leaves) {
      if (!(l.length > 0 && l.width > 0)) throw ConfigError("leaf length and width must be positive");
      if (std::abs(l.droop) >= std::numbers::pi || std::abs(l.cup) >= std::numbers::pi)
        throw ConfigError("leaf droop and cup must stay below pi");
      if (l.attach_height < 0 || l.attach_height > stem.height)
        throw ConfigError("leaf attach height outside the stem");
    }
  }
};

struct LeafTruth {
  int instance = 0;
  double length = 0;  // midrib arc, mm
  double width = 0;   // widest cross arc, mm
};

struct GroundTruth {
  std::string cloud_id;
  double stem_diameter = 0;
  std::vector<LeafTruth> leaves;
};

struct Plant {
  PointCloud cloud;
  GroundTruth truth;
};

namespace detail {

inline Vec3 any_perpendicular(const Vec3& d) {
  const Vec3 helper = std::abs(d.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  return d.cross(helper).normalized();
}

struct StemFrame {
  Vec3 dir, bend, side;
  double curvature;

  Vec3 axis(double h) const { return h * dir + 0.5 * curvature * h * h * bend; }
  Vec3 tangent(double h) const { return (dir + curvature * h * bend).normalized(); }
};

inline StemFrame stem_frame(const StemSpec& s) {
  const Vec3 dir(std::sin(s.tilt) * std::cos(s.tilt_azimuth), std::sin(s.tilt) * std::sin(s.tilt_azimuth),
                 std::cos(s.tilt));
  const Vec3 bend = any_perpendicular(dir);
  return {dir, bend, dir.cross(bend).normalized(), s.curvature};
}

/// Jittered grid over [0,a) x [0,b) with cell h; samples sit at the cell
/// center displaced by up to +-jitter/2 cells.
template <typename F>
void jittered_grid(double a, double b, double h, double jitter, Rng& rng, F&& emit) {
  const auto na = static_cast<long long>(std::ceil(a / h));
  const auto nb = static_cast<long long>(std::ceil(b / h));
  for (long long i = 0; i < na; ++i)
    for (long long j = 0; j < nb; ++j) {
      const double u = (static_cast<double>(i) + 0.5 + jitter * (rng.uniform() - 0.5)) * h;
      const double v = (static_cast<double>(j) + 0.5 + jitter * (rng.uniform() - 0.5)) * h;
      if (u < a && v < b) emit(u, v);
    }
}

struct LeafGeometry {
  Vec3 base, d0, n0, cross;
  double arc_len, arc_width, midrib_curv, cross_curv;

  Vec3 midrib(double s) const {
    if (midrib_curv < 1e-12) return base + s * d0;
    const double r = 1.0 / midrib_curv, a = s * midrib_curv;
    return base + r * std::sin(a) * d0 - r * (1.0 - std::cos(a)) * n0;
  }
  /// Upward-facing normal of the midrib plane at arc position s.
  Vec3 normal(double s) const {
    const double a = s * midrib_curv;
    return std::sin(a) * d0 + std::cos(a) * n0;
  }
  double half_width(double s) const {
    const double x = 2.0 * s / arc_len - 1.0;
    return 0.5 * arc_width * std::sqrt(std::max(0.0, 1.0 - x * x));
  }
  Vec3 surface_normal(double s, double t) const {
    const double e = 1e-4;
    const Vec3 ds = point(s + e, t) - point(s - e, t);
    const Vec3 dt = point(s, t + e) - point(s, t - e);
    return ds.cross(dt).normalized();
  }
  Vec3 point(double s, double t) const {
    Vec3 off = t * cross;
    if (cross_curv > 1e-12) {
      const double a = t * cross_curv;
      off = std::sin(a) / cross_curv * cross + (1.0 - std::cos(a)) / cross_curv * normal(s);
    }
    return midrib(s) + off;
  }
};

inline LeafGeometry leaf_geometry(const PlantSpec& spec, const StemFrame& f, const LeafSpec& l) {
  const Vec3 u(std::cos(l.azimuth), std::sin(l.azimuth), 0.0);
  const Vec3 z = Vec3::UnitZ();
  LeafGeometry g;
  g.base = f.axis(l.attach_height) + (spec.stem.radius + 0.5) * u;
  g.d0 = std::cos(l.elevation) * u + std::sin(l.elevation) * z;
  g.n0 = -std::sin(l.elevation) * u + std::cos(l.elevation) * z;
  g.cross = z.cross(u).normalized();
  g.arc_len = l.arc_length();
  g.arc_width = l.arc_width();
  g.midrib_curv = std::abs(l.droop) / g.arc_len;
  g.cross_curv = std::abs(l.cup) / g.arc_width;
  return g;
}

inline Vec3 jitter_color(const Vec3& base, double sigma, Rng& rng) {
  Vec3 c = base;
  for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k] + rng.normal(0.0, sigma), 0.0, 1.0);
  return c;
}

}  // namespace detail

/// Samples the plant surface. Labels are exact; noise and holes are applied
/// after the ground truth is fixed.
inline Plant generate_plant(const PlantSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x706c616eULL));
  const double h = 1.0 / std::sqrt(spec.density);
  const auto frame = detail::stem_frame(spec.stem);
  Plant plant;
  plant.cloud.source_id = spec.id;
  plant.truth.cloud_id = spec.id;
  plant.truth.stem_diameter = 2.0 * spec.stem.radius;
  std::vector<int> sem, inst;
  std::vector<Vec3> normals;
  auto add = [&](const Vec3& p, const Vec3& n, const Vec3& base_color, int s, int i) {
    plant.cloud.coords.push_back(p);
    normals.push_back(n);
    plant.cloud.colors.push_back(detail::jitter_color(base_color, spec.colors.sigma, rng));
    sem.push_back(s);
    inst.push_back(i);
  };

  const double r = spec.stem.radius;
  detail::jittered_grid(spec.stem.height, 2.0 * std::numbers::pi * r, h, spec.jitter, rng, [&](double hh, double arc) {
    const double th = arc / r;
    const Vec3 t = frame.tangent(hh);
    const Vec3 e1 = (frame.side - frame.side.dot(t) * t).normalized();
    const Vec3 e2 = t.cross(e1);
    const Vec3 radial = std::cos(th) * e1 + std::sin(th) * e2;
    add(frame.axis(hh) + r * radial, radial, spec.colors.stem, label::kStem, label::kUnlabeled);
  });

  for (std::size_t li = 0; li < spec.leaves.size(); ++li) {
    const auto g = detail::leaf_geometry(spec, frame, spec.leaves[li]);
    const int id = static_cast<int>(li);
    plant.truth.leaves.push_back({id, g.arc_len, g.arc_width});
    detail::jittered_grid(g.arc_len, g.arc_width, h, spec.jitter, rng, [&](double s, double v) {
      const double t = v - 0.5 * g.arc_width;
      if (std::abs(t) < g.half_width(s)) add(g.point(s, t), g.surface_normal(s, t), spec.colors.leaf, label::kLeaf, id);
    });
    // Margin: the outline sampled at the grid spacing, tips included.
    const double a = 0.5 * g.arc_len, b = 0.5 * g.arc_width;
    const double half_perimeter =
        0.5 * std::numbers::pi * (3.0 * (a + b) - std::sqrt((3.0 * a + b) * (a + 3.0 * b)));
    const auto n = std::max<long long>(2, static_cast<long long>(std::ceil(half_perimeter / h)));
    for (long long k = 0; k <= n; ++k) {
      const double th = std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      const double s = a * (1.0 - std::cos(th));
      const double t = b * std::sin(th);
      add(g.point(s, t), g.surface_normal(s, t), spec.colors.leaf, label::kLeaf, id);
      if (k != 0 && k != n) add(g.point(s, -t), g.surface_normal(s, -t), spec.colors.leaf, label::kLeaf, id);
    }
  }

  std::vector<bool> keep(plant.cloud.coords.size(), true);
  if (spec.holes.count > 0) {
    Rng hole_rng(derive_seed(spec.seed, 0x686f6c65ULL));
    for (std::size_t li = 0; li < spec.leaves.size(); ++li) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < inst.size(); ++i)
        if (inst[i] == static_cast<int>(li)) members.push_back(i);
      for (int k = 0; k < spec.holes.count && !members.empty(); ++k) {
        const Vec3 c = plant.cloud.coords[members[hole_rng.below(members.size())]];
        for (std::size_t i : members)
          if ((plant.cloud.coords[i] - c).norm() <= spec.holes.radius) keep[i] = false;
      }
    }
  }
  if (spec.noise_sigma > 0) {
    Rng noise_rng(derive_seed(spec.seed, 0x6e6f6973ULL));
    // Displacement off the surface, along its normal.
    for (std::size_t i = 0; i < plant.cloud.coords.size(); ++i)
      plant.cloud.coords[i] += noise_rng.normal(0.0, spec.noise_sigma) * normals[i];
  }
  plant.cloud.semantic = std::move(sem);
  plant.cloud.instance = std::move(inst);
  if (spec.holes.count > 0) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (keep[i]) kept.push_back(i);
    PointCloud c = plant.cloud.select(kept);
    c.source_id = spec.id;
    plant.cloud = std::move(c);
  }
  plant.cloud.validate();
  return plant;
}

struct RandomPlantOptions {
  int min_leaves = 4;
  int max_leaves = 6;
  double density = 3.5;
  double noise_sigma = 0.0;
  double jitter = 0.5;
  HoleSpec holes;
  double min_leaf_gap = 3.0;  // mm between points of different leaves
};

/// Smallest distance between points of two different leaves.
inline double min_leaf_gap(const PlantSpec& spec) {
  PlantSpec coarse = spec;
  coarse.density = std::min(spec.density, 1.0);
  coarse.noise_sigma = 0.0;
  coarse.holes.count = 0;
  const Plant p = generate_plant(coarse);
  std::vector<Vec3> pts;
  std::vector<int> ids;
  for (std::size_t i = 0; i < p.cloud.size(); ++i)
    if (p.cloud.instance_at(i) >= 0) {
      pts.push_back(p.cloud.coords[i]);
      ids.push_back(p.cloud.instance_at(i));
    }
  if (pts.empty()) return std::numeric_limits<double>::infinity();
  const double probe = 10.0;
  const SpatialIndex index(pts, probe);
  double best = probe;
  std::vector<std::size_t> nb;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    index.radius_neighbors(pts[i], best, nb);
    for (std::size_t j : nb)
      if (ids[j] != ids[i]) best = std::min(best, (pts[i] - pts[j]).norm());
  }
  return best;
}

/// A random plant with well-separated leaves placed by golden-angle phyllotaxis.
inline PlantSpec random_plant_spec(std::uint64_t seed, const RandomPlantOptions& opt = {}, std::string id = "") {
  if (opt.min_leaves < 0 || opt.max_leaves < opt.min_leaves) throw ConfigError("bad leaf count range");
  Rng rng(derive_seed(seed, 0x73706563ULL));
  PlantSpec spec;
  spec.id = id.empty() ? "plant_" + std::to_string(seed) : std::move(id);
  spec.seed = seed;
  spec.density = opt.density;
  spec.noise_sigma = opt.noise_sigma;
  spec.jitter = opt.jitter;
  spec.holes = opt.holes;
  spec.stem.height = rng.uniform(80.0, 140.0);
  spec.stem.radius = rng.uniform(1.5, 2.5);
  spec.stem.tilt = rng.uniform(0.0, 0.15);
  spec.stem.tilt_azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
  spec.stem.curvature = rng.uniform(0.0, 4e-4);
  // Mild per-plant tint so color alone is not a perfect organ cue.
  const Vec3 tint(rng.normal(0.0, 0.03), rng.normal(0.0, 0.03), rng.normal(0.0, 0.03));
  spec.colors.stem += tint;
  spec.colors.leaf += tint;
  const int n = opt.min_leaves + static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.max_leaves - opt.min_leaves + 1)));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  auto draw_leaf = [&](int k) {
    LeafSpec l;
    const double lo = 0.35 * spec.stem.height, hi = 0.95 * spec.stem.height;
    l.attach_height = lo + (hi - lo) * (n == 1 ? 0.5 : static_cast<double>(k) / (n - 1)) + rng.uniform(-2.0, 2.0);
    l.attach_height = std::clamp(l.attach_height, 0.0, spec.stem.height);
    l.azimuth = phase + golden * k + rng.uniform(-0.15, 0.15);
    l.elevation = rng.uniform(0.2, 0.7);
    l.length = rng.uniform(35.0, 60.0);
    l.width = std::clamp(rng.uniform(0.3, 0.55) * l.length, 12.0, 28.0);
    l.droop = rng.uniform(0.0, 0.8);
    l.cup = rng.uniform(0.2, 0.9);
    return l;
  };
  for (int k = 0; k < n; ++k) spec.leaves.push_back(draw_leaf(k));
  for (int attempt = 0; attempt < 50 && n > 1 && min_leaf_gap(spec) <= opt.min_leaf_gap; ++attempt) {
    // Redraw the shape of every leaf, keeping the phyllotaxis.
    for (int k = 0; k < n; ++k) spec.leaves[static_cast<std::size_t>(k)] = draw_leaf(k);
  }
  if (n > 1 && min_leaf_gap(spec) <= opt.min_leaf_gap)
    throw DataError(spec.id + ": could not draw well-separated leaves");
  return spec;
}

inline std::string truth_csv_header() { return "cloud_id,trait,organ_id,value_mm,flags\n"; }

/// Ground truth in the trait CSV layout.
inline std::string truth_csv(const GroundTruth& t) {
  using e3dp::detail::format_double;
  std::string out = t.cloud_id + ",stem_diameter,stem," + format_double(t.stem_diameter) + ",\n";
  for (const auto& l : t.leaves) {
    const std::string organ = "leaf_" + std::to_string(l.instance);
    out += t.cloud_id + ",leaf_length," + organ + "," + format_double(l.length) + ",\n";
    out += t.cloud_id + ",leaf_width," + organ + "," + format_double(l.width) + ",\n";
  }
  return out;
}

}  // namespace e3dp::synth
