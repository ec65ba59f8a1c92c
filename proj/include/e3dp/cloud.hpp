#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "e3dp/error.hpp"

namespace e3dp {

using Vec3 = Eigen::Vector3d;

namespace label {
inline constexpr int kUnlabeled = -1;
inline constexpr int kStem = 0;
inline constexpr int kLeaf = 1;
inline constexpr int kSoil = 2;
}  // namespace label

/// A point cloud in millimeters with RGB colors in [0,1] and optional
/// per-point semantic / instance labels.
struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<Vec3> colors;
  std::optional<std::vector<int>> semantic;
  std::optional<std::vector<int>> instance;
  std::string source_id;

  std::size_t size() const noexcept { return coords.size(); }
  bool empty() const noexcept { return coords.empty(); }
  bool has_semantic() const noexcept { return semantic.has_value(); }
  bool has_instance() const noexcept { return instance.has_value(); }

  /// Throws DataError when an invariant is violated.
  void validate() const {
    const std::size_t m = coords.size();
    if (colors.size() != m) throw DataError(source_id + ": color count differs from point count");
    if (semantic && semantic->size() != m) throw DataError(source_id + ": semantic label count differs from point count");
    if (instance && instance->size() != m) throw DataError(source_id + ": instance label count differs from point count");
    if (instance && !semantic) throw DataError(source_id + ": instance labels without semantic labels");
    for (std::size_t i = 0; i < m; ++i) {
      if (!coords[i].allFinite()) throw DataError(source_id + ": non-finite coordinate at point " + std::to_string(i));
      if (semantic && (*semantic)[i] < label::kUnlabeled)
        throw DataError(source_id + ": invalid semantic label at point " + std::to_string(i));
      if (instance) {
        const int inst = (*instance)[i];
        if (inst < label::kUnlabeled) throw DataError(source_id + ": invalid instance label at point " + std::to_string(i));
        if (inst >= 0 && (*semantic)[i] < 0)
          throw DataError(source_id + ": instance label on semantically unlabeled point " + std::to_string(i));
      }
    }
  }

  void require_non_empty() const {
    if (empty()) throw DataError((source_id.empty() ? std::string("cloud") : source_id) + ": empty point cloud");
  }

  /// Points at `indices`, in that order, with labels carried along.
  PointCloud select(std::span<const std::size_t> indices) const {
    PointCloud out;
    out.source_id = source_id;
    out.coords.reserve(indices.size());
    out.colors.reserve(indices.size());
    if (semantic) out.semantic.emplace().reserve(indices.size());
    if (instance) out.instance.emplace().reserve(indices.size());
    for (std::size_t i : indices) {
      out.coords.push_back(coords[i]);
      out.colors.push_back(colors[i]);
      if (semantic) out.semantic->push_back((*semantic)[i]);
      if (instance) out.instance->push_back((*instance)[i]);
    }
    return out;
  }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : coords) c += p;
    return coords.empty() ? c : Vec3(c / static_cast<double>(coords.size()));
  }

  int semantic_at(std::size_t i) const { return semantic ? (*semantic)[i] : label::kUnlabeled; }
  int instance_at(std::size_t i) const { return instance ? (*instance)[i] : label::kUnlabeled; }
};

}  // namespace e3dp
