#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <unordered_map>
#include <vector>

#include "e3dp/cloud.hpp"
#include "e3dp/spatial_index.hpp"

namespace e3dp {

/// Voxel key -> member point indices. Voxels are ordered by their smallest
/// member index, so the layout is a deterministic function of the input.
struct VoxelMap {
  double voxel_size = 0.0;
  std::vector<CellKey> keys;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> voxel_of_point;

  std::size_t size() const noexcept { return keys.size(); }
};

inline VoxelMap build_voxel_map(std::span<const Vec3> coords, double voxel_size) {
  if (!(voxel_size > 0.0)) throw DataError("voxel size must be positive");
  VoxelMap map;
  map.voxel_size = voxel_size;
  map.voxel_of_point.resize(coords.size());
  std::unordered_map<CellKey, std::size_t, CellKeyHash> lookup;
  lookup.reserve(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const CellKey key = cell_of(coords[i], voxel_size);
    auto [it, inserted] = lookup.try_emplace(key, map.keys.size());
    if (inserted) {
      map.keys.push_back(key);
      map.members.emplace_back();
    }
    map.members[it->second].push_back(i);
    map.voxel_of_point[i] = it->second;
  }
  return map;
}

/// Most frequent value; ties go to the lowest value.
inline int majority_label(const std::vector<int>& values) {
  std::map<int, std::size_t> counts;
  for (int v : values) ++counts[v];
  int best = label::kUnlabeled;
  std::size_t best_count = 0;
  for (const auto& [v, c] : counts)
    if (c > best_count) {
      best = v;
      best_count = c;
    }
  return best;
}

struct Downsampled {
  PointCloud cloud;
  /// Output point -> member nearest the voxel centroid (original index).
  std::vector<std::size_t> representative;
  VoxelMap voxels;
};

/// One point per occupied voxel: centroid coords, mean color, majority labels.
/// The instance label is the majority among members that carry the chosen
/// semantic label, which keeps the instance/semantic invariant intact.
inline Downsampled voxel_downsample(const PointCloud& cloud, double voxel_size) {
  Downsampled out;
  out.voxels = build_voxel_map(cloud.coords, voxel_size);
  const auto& vm = out.voxels;
  out.cloud.source_id = cloud.source_id;
  out.cloud.coords.reserve(vm.size());
  out.cloud.colors.reserve(vm.size());
  if (cloud.semantic) out.cloud.semantic.emplace().reserve(vm.size());
  if (cloud.instance) out.cloud.instance.emplace().reserve(vm.size());
  out.representative.reserve(vm.size());
  std::vector<int> scratch;
  for (std::size_t v = 0; v < vm.size(); ++v) {
    const auto& mem = vm.members[v];
    Vec3 c = Vec3::Zero(), col = Vec3::Zero();
    for (std::size_t i : mem) {
      c += cloud.coords[i];
      col += cloud.colors[i];
    }
    const double n = static_cast<double>(mem.size());
    c /= n;
    col /= n;
    out.cloud.coords.push_back(c);
    out.cloud.colors.push_back(col);
    std::size_t rep = mem.front();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i : mem) {
      const double d = (cloud.coords[i] - c).squaredNorm();
      if (d < best) {
        best = d;
        rep = i;
      }
    }
    out.representative.push_back(rep);
    if (cloud.semantic) {
      scratch.clear();
      for (std::size_t i : mem) scratch.push_back((*cloud.semantic)[i]);
      const int sem = majority_label(scratch);
      out.cloud.semantic->push_back(sem);
      if (cloud.instance) {
        scratch.clear();
        for (std::size_t i : mem)
          if ((*cloud.semantic)[i] == sem) scratch.push_back((*cloud.instance)[i]);
        out.cloud.instance->push_back(sem < 0 ? label::kUnlabeled : majority_label(scratch));
      }
    }
  }
  return out;
}

}  // namespace e3dp
