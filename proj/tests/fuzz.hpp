#pragma once

// Random small instances for the oracle comparisons.

#include <algorithm>
#include <vector>

#include "e3dp/cluster.hpp"
#include "e3dp/rng.hpp"
#include "oracles.hpp"

namespace fuzz {

using e3dp::Rng;
using e3dp::Vec3;

/// A few Gaussian blobs; spacing and spread vary per call so the radius
/// graph sees both separated and touching clusters.
inline std::vector<Vec3> blobs(Rng& rng, std::size_t m) {
  const std::size_t k = 1 + rng.below(5);
  const double extent = rng.uniform(5.0, 40.0);
  std::vector<Vec3> centers;
  for (std::size_t c = 0; c < k; ++c)
    centers.emplace_back(rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform(0, extent));
  const double sigma = rng.uniform(0.3, 3.0);
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < m; ++i) {
    const Vec3& c = centers[rng.below(k)];
    pts.emplace_back(c.x() + sigma * rng.normal(), c.y() + sigma * rng.normal(), c.z() + sigma * rng.normal());
  }
  return pts;
}

struct APCase {
  std::vector<int> gt_instance;                // -1 = background
  std::vector<e3dp::InstancePrediction> preds;  // input order
};

/// Up to five GT instances over at most 200 points and up to five noisy
/// predictions; scores come from a small set so ties occur.
inline APCase ap_case(Rng& rng) {
  APCase c;
  const std::size_t m = 10 + rng.below(191);
  const std::size_t g = rng.below(6);
  c.gt_instance.assign(m, -1);
  if (g > 0)
    for (std::size_t i = 0; i < m; ++i)
      if (rng.uniform() < 0.8) c.gt_instance[i] = static_cast<int>(rng.below(g));
  const std::size_t p = rng.below(6);
  const double drop = rng.uniform(0.0, 0.7), extra = rng.uniform(0.0, 0.3);
  for (std::size_t k = 0; k < p; ++k) {
    const int target = g > 0 && rng.uniform() < 0.85 ? static_cast<int>(rng.below(g)) : -2;
    e3dp::InstancePrediction pr;
    for (std::size_t i = 0; i < m; ++i) {
      const bool member = c.gt_instance[i] == target;
      if ((member && rng.uniform() >= drop) || (!member && rng.uniform() < extra)) pr.indices.push_back(i);
    }
    if (pr.indices.empty()) pr.indices.push_back(rng.below(m));
    pr.score = 0.1 * static_cast<double>(1 + rng.below(4));
    c.preds.push_back(std::move(pr));
  }
  return c;
}

/// Masks in the order instance_ap ranks them: descending score, input
/// order among equal scores.
inline std::vector<oracle::APOracle::Mask> ranked_masks(const APCase& c) {
  std::vector<std::size_t> order(c.preds.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return c.preds[a].score > c.preds[b].score; });
  std::vector<oracle::APOracle::Mask> out;
  for (std::size_t k : order) {
    oracle::APOracle::Mask mk;
    for (std::size_t i : c.preds[k].indices) mk.set(i);
    out.push_back(mk);
  }
  return out;
}

inline std::vector<oracle::APOracle::Mask> gt_masks(const APCase& c) {
  int g = -1;
  for (int v : c.gt_instance) g = std::max(g, v);
  std::vector<oracle::APOracle::Mask> out(static_cast<std::size_t>(g + 1));
  for (std::size_t i = 0; i < c.gt_instance.size(); ++i)
    if (c.gt_instance[i] >= 0) out[static_cast<std::size_t>(c.gt_instance[i])].set(i);
  std::erase_if(out, [](const auto& m) { return m.none(); });
  return out;
}

}  // namespace fuzz
