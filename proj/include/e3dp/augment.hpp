#pragma once

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "e3dp/cloud.hpp"
#include "e3dp/rng.hpp"

namespace e3dp {

struct AugmentConfig {
  double rotation_z_max = std::numbers::pi;
  double rotation_xy_max = 0.1;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double jitter_sigma = 0.2;  // mm; 0.2 x the default 1 mm voxel
  double flip_probability = 0.5;
  double color_jitter_sigma = 0.05;

  void validate() const {
    if (!(scale_lo > 0.0) || !(scale_lo <= scale_hi)) throw ConfigError("augment: need 0 < scale_lo <= scale_hi");
    if (rotation_z_max < 0.0 || rotation_xy_max < 0.0) throw ConfigError("augment: rotation limits must be >= 0");
    if (jitter_sigma < 0.0 || color_jitter_sigma < 0.0) throw ConfigError("augment: sigmas must be >= 0");
    if (flip_probability < 0.0 || flip_probability > 1.0) throw ConfigError("augment: flip probability must be in [0,1]");
  }

  /// No-op configuration.
  static AugmentConfig identity() { return {0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0}; }
};

/// One concrete draw of the random transform.
struct TransformParams {
  Vec3 center = Vec3::Zero();
  bool flip_x = false;
  bool flip_y = false;
  double scale = 1.0;
  double angle_z = 0.0;
  double tilt_x = 0.0;
  double tilt_y = 0.0;

  /// Linear part: tilt * rotate_z * scale * flips.
  Eigen::Matrix3d linear() const {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    if (flip_x) flip(0, 0) = -1.0;
    if (flip_y) flip(1, 1) = -1.0;
    const Eigen::Matrix3d rz = Eigen::AngleAxisd(angle_z, Vec3::UnitZ()).toRotationMatrix();
    const Eigen::Matrix3d rx = Eigen::AngleAxisd(tilt_x, Vec3::UnitX()).toRotationMatrix();
    const Eigen::Matrix3d ry = Eigen::AngleAxisd(tilt_y, Vec3::UnitY()).toRotationMatrix();
    return ry * rx * rz * (scale * flip);
  }
};

inline TransformParams draw_transform(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng) {
  TransformParams t;
  t.center = cloud.centroid();
  t.flip_x = rng.bernoulli(cfg.flip_probability);
  t.flip_y = rng.bernoulli(cfg.flip_probability);
  t.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  t.angle_z = rng.uniform(-cfg.rotation_z_max, cfg.rotation_z_max);
  t.tilt_x = rng.uniform(-cfg.rotation_xy_max, cfg.rotation_xy_max);
  t.tilt_y = rng.uniform(-cfg.rotation_xy_max, cfg.rotation_xy_max);
  return t;
}

/// Applies the geometric part about `t.center`; point order and labels are kept.
inline PointCloud apply_transform(const PointCloud& cloud, const TransformParams& t) {
  PointCloud out = cloud;
  const Eigen::Matrix3d a = t.linear();
  for (auto& p : out.coords) p = t.center + a * (p - t.center);
  return out;
}

/// Flips, scale, rotation, then per-point Gaussian jitter and clamped color
/// jitter. Deterministic per seed.
inline PointCloud random_transform(const PointCloud& cloud, const AugmentConfig& cfg, std::uint64_t seed,
                                   TransformParams* drawn = nullptr) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x61756700ULL));
  const TransformParams t = draw_transform(cloud, cfg, rng);
  if (drawn) *drawn = t;
  PointCloud out = apply_transform(cloud, t);
  if (cfg.jitter_sigma > 0.0)
    for (auto& p : out.coords) p += Vec3(rng.normal(), rng.normal(), rng.normal()) * cfg.jitter_sigma;
  if (cfg.color_jitter_sigma > 0.0)
    for (auto& c : out.colors)
      for (int k = 0; k < 3; ++k) c[k] = std::clamp(c[k] + rng.normal() * cfg.color_jitter_sigma, 0.0, 1.0);
  return out;
}

}  // namespace e3dp
