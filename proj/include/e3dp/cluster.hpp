#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "e3dp/cloud.hpp"
#include "e3dp/io.hpp"
#include "e3dp/spatial_index.hpp"

namespace e3dp {

enum class Provenance { kOriginal, kShifted, kBoth };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kOriginal: return "original";
    case Provenance::kShifted: return "shifted";
    case Provenance::kBoth: return "both";
  }
  return "?";
}

/// One predicted instance: sorted unique point indices with a class and score.
struct InstancePrediction {
  std::vector<std::size_t> indices;
  int semantic_class = label::kLeaf;
  double score = 0.0;
  Provenance provenance = Provenance::kOriginal;
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::uint8_t> rank_;
};

/// Connected components of masked points linked when within `radius`.
/// Components smaller than `min_size` are dropped; the rest are ordered by
/// their smallest member index.
inline std::vector<std::vector<std::size_t>> ball_cluster(std::span<const Vec3> coords, std::span<const bool> mask,
                                                          double radius, std::size_t min_size) {
  if (!(radius > 0.0)) throw DataError("cluster radius must be positive");
  if (mask.size() != coords.size()) throw DataError("cluster mask length differs from point count");
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < coords.size(); ++i)
    if (mask[i]) members.push_back(i);
  if (members.empty()) return {};
  std::vector<Vec3> pts;
  pts.reserve(members.size());
  for (std::size_t i : members) pts.push_back(coords[i]);
  SpatialIndex index(pts, radius);
  UnionFind uf(members.size());
  std::vector<std::size_t> nb;
  for (std::size_t a = 0; a < pts.size(); ++a) {
    index.radius_neighbors(pts[a], radius, nb);
    for (std::size_t b : nb)
      if (b > a) uf.unite(a, b);
  }
  // Members are ascending, so each root's first appearance is its smallest member.
  std::vector<std::size_t> slot(members.size(), SIZE_MAX);
  std::vector<std::vector<std::size_t>> comps;
  for (std::size_t a = 0; a < members.size(); ++a) {
    const std::size_t r = uf.find(a);
    if (slot[r] == SIZE_MAX) {
      slot[r] = comps.size();
      comps.emplace_back();
    }
    comps[slot[r]].push_back(members[a]);
  }
  std::erase_if(comps, [&](const auto& c) { return c.size() < min_size; });
  return comps;
}

inline double set_iou(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// C = Cc u Cs. Each shifted-space cluster is merged into the
/// original-space cluster it overlaps most when their IoU exceeds
/// `merge_iou` (>= 1 disables merging). Score = mean `leaf_prob` over
/// members; result sorted by descending score, ties by smallest index.
inline std::vector<InstancePrediction> dual_set_union(const std::vector<std::vector<std::size_t>>& cc,
                                                      const std::vector<std::vector<std::size_t>>& cs,
                                                      double merge_iou, std::span<const double> leaf_prob,
                                                      int semantic_class = label::kLeaf) {
  std::vector<InstancePrediction> out;
  for (const auto& c : cc) out.push_back({c, semantic_class, 0.0, Provenance::kOriginal});
  const std::size_t n_original = out.size();
  for (const auto& c : cs) {
    std::size_t best = SIZE_MAX;
    double best_iou = -1.0;
    for (std::size_t k = 0; k < n_original; ++k) {
      const double iou = set_iou(out[k].indices, c);
      if (iou > best_iou) {
        best_iou = iou;
        best = k;
      }
    }
    if (best != SIZE_MAX && best_iou > merge_iou) {
      auto& dst = out[best];
      std::vector<std::size_t> merged;
      std::set_union(dst.indices.begin(), dst.indices.end(), c.begin(), c.end(), std::back_inserter(merged));
      dst.indices = std::move(merged);
      dst.provenance = Provenance::kBoth;
    } else {
      out.push_back({c, semantic_class, 0.0, Provenance::kShifted});
    }
  }
  for (auto& inst : out) {
    double s = 0.0;
    for (std::size_t i : inst.indices) s += i < leaf_prob.size() ? leaf_prob[i] : 0.0;
    inst.score = inst.indices.empty() ? 0.0 : s / static_cast<double>(inst.indices.size());
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.indices.front() < b.indices.front();
  });
  return out;
}

/// Per-point instance ids from a ranked prediction list; a point claimed by
/// several instances keeps the highest-ranked one.
inline std::vector<int> instance_labels(const std::vector<InstancePrediction>& preds, std::size_t m) {
  std::vector<int> lab(m, label::kUnlabeled);
  for (std::size_t k = preds.size(); k-- > 0;)
    for (std::size_t i : preds[k].indices) lab[i] = static_cast<int>(k);
  return lab;
}

/// Instance dump: JSON entries {id, class, score, size, offset, provenance};
/// member indices are stored as consecutive little-endian u32 values in a
/// side file, starting at element `offset`.
inline void save_instances(const std::vector<InstancePrediction>& preds, const std::filesystem::path& json_path,
                           const std::filesystem::path& indices_path) {
  nlohmann::json arr = nlohmann::json::array();
  std::string blob;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& p = preds[k];
    arr.push_back({{"id", k},
                   {"class", p.semantic_class},
                   {"score", p.score},
                   {"size", p.indices.size()},
                   {"offset", offset},
                   {"provenance", to_string(p.provenance)}});
    for (std::size_t i : p.indices) {
      const auto v = static_cast<std::uint32_t>(i);
      const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
      blob.append(reinterpret_cast<const char*>(b), 4);
    }
    offset += p.indices.size();
  }
  nlohmann::json doc = {{"indices_file", indices_path.filename().string()}, {"instances", arr}};
  write_text_file(json_path, doc.dump(2) + "\n");
  write_text_file(indices_path, blob);
}

inline std::vector<InstancePrediction> load_instances(const std::filesystem::path& json_path) {
  const auto doc = nlohmann::json::parse(detail::slurp(json_path));
  const auto blob = detail::slurp(json_path.parent_path() / doc.at("indices_file").get<std::string>());
  std::vector<InstancePrediction> out;
  for (const auto& e : doc.at("instances")) {
    InstancePrediction p;
    p.semantic_class = e.at("class").get<int>();
    p.score = e.at("score").get<double>();
    const auto size = e.at("size").get<std::size_t>();
    const auto offset = e.at("offset").get<std::size_t>();
    if ((offset + size) * 4 > blob.size()) throw DataError(json_path.string() + ": instance indices out of range");
    for (std::size_t k = 0; k < size; ++k) {
      const auto* b = reinterpret_cast<const unsigned char*>(blob.data() + (offset + k) * 4);
      p.indices.push_back(b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::size_t>(b[3]) << 24));
    }
    const auto prov = e.value("provenance", std::string("original"));
    p.provenance = prov == "both" ? Provenance::kBoth : prov == "shifted" ? Provenance::kShifted : Provenance::kOriginal;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace e3dp
