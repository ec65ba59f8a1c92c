#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "e3dp/cloud.hpp"
#include "e3dp/rng.hpp"
#include "e3dp/spatial_index.hpp"
#include "e3dp/nn/tape.hpp"

namespace e3dp::nn {

/// Radius-aggregation point encoder: lift 6->C, T blocks of
/// {neighborhood mean, linear, standardize, ReLU}, then C->D, standardized.
struct BackboneConfig {
  int input_dim = 6;
  int hidden_dim = 32;
  int blocks = 3;
  int output_dim = 32;
  double aggregation_radius = 4.0;  // mm
  double voxel_size = 1.0;          // mm
  double coord_scale = 20.0;        // mm per input unit

  void validate() const {
    if (input_dim != 3 && input_dim != 6) throw ConfigError("backbone input_dim must be 3 (xyz) or 6 (xyz+rgb)");
    if (hidden_dim < 1 || blocks < 1 || output_dim < 1) throw ConfigError("backbone dimensions must be >= 1");
    if (!(aggregation_radius > 0.0)) throw ConfigError("aggregation radius must be positive");
    if (!(voxel_size > 0.0)) throw ConfigError("voxel size must be positive");
    if (!(coord_scale > 0.0)) throw ConfigError("coord_scale must be positive");
  }
  bool operator==(const BackboneConfig&) const = default;
};

struct HeadConfig {
  int num_classes = 2;
  bool semantic = false;
  bool offset = false;
  double offset_scale = 10.0;  // mm per unit of the offset head's output

  bool operator==(const HeadConfig&) const = default;
};

inline constexpr double kStandardizeEps = 1e-5;

/// Backbone input for one (already voxelized) cloud.
template <typename S>
struct ModelInput {
  Matrix<S> features;
  Neighborhood neighbors;

  std::size_t size() const noexcept { return static_cast<std::size_t>(features.rows()); }
};

inline Neighborhood radius_neighborhood(const std::vector<Vec3>& coords, double radius) {
  Neighborhood nb;
  nb.offsets.reserve(coords.size() + 1);
  SpatialIndex index(coords, radius);
  std::vector<std::size_t> scratch;
  for (const auto& p : coords) {
    index.radius_neighbors(p, radius, scratch);
    for (std::size_t j : scratch) nb.indices.push_back(static_cast<std::uint32_t>(j));
    nb.offsets.push_back(static_cast<std::uint32_t>(nb.indices.size()));
  }
  return nb;
}

/// Features are centroid-relative coordinates over coord_scale, plus colors
/// shifted to [-0.5, 0.5] when input_dim is 6.
template <typename S>
ModelInput<S> make_input(const PointCloud& cloud, const BackboneConfig& cfg) {
  cloud.require_non_empty();
  ModelInput<S> in;
  const Vec3 c = cloud.centroid();
  in.features.resize(static_cast<Eigen::Index>(cloud.size()), cfg.input_dim);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Vec3 rel = (cloud.coords[i] - c) / cfg.coord_scale;
    for (int k = 0; k < 3; ++k) in.features(r, k) = static_cast<S>(rel[k]);
    if (cfg.input_dim == 6)
      for (int k = 0; k < 3; ++k) in.features(r, 3 + k) = static_cast<S>(cloud.colors[i][k] - 0.5);
  }
  in.neighbors = radius_neighborhood(cloud.coords, cfg.aggregation_radius);
  return in;
}

template <typename S>
void init_dense(ParamSet<S>& params, const std::string& name, int in, int out, Rng& rng, double gain = std::sqrt(6.0),
                bool bias = true) {
  Matrix<S> w(in, out);
  const double a = gain / std::sqrt(static_cast<double>(in));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.uniform(-a, a));
  params[name + ".W"] = std::move(w);
  if (bias) params[name + ".b"] = Matrix<S>::Zero(1, out);
}

template <typename S>
Var dense(Tape<S>& t, const ParamSet<S>& params, const std::string& name, Var x) {
  const auto w = params.find(name + ".W");
  const auto b = params.find(name + ".b");
  if (w == params.end() || b == params.end()) throw DataError("missing parameter '" + name + "'");
  if (w->second.rows() != t.value(x).cols())
    throw DataError("dimension mismatch at '" + name + "': expected input width " + std::to_string(w->second.rows()) +
                    ", got " + std::to_string(t.value(x).cols()));
  return linear(t, x, t.parameter(name + ".W", w->second), t.parameter(name + ".b", b->second));
}

/// Bias-free dense layer, used in front of standardize, which would cancel
/// a bias exactly and leave it with a zero gradient.
template <typename S>
Var project(Tape<S>& t, const ParamSet<S>& params, const std::string& name, Var x) {
  const auto w = params.find(name + ".W");
  if (w == params.end()) throw DataError("missing parameter '" + name + "'");
  if (w->second.rows() != t.value(x).cols())
    throw DataError("dimension mismatch at '" + name + "': expected input width " + std::to_string(w->second.rows()) +
                    ", got " + std::to_string(t.value(x).cols()));
  return matmul(t, x, t.parameter(name + ".W", w->second));
}

template <typename S>
void init_backbone(ParamSet<S>& params, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  init_dense(params, "backbone.lift", cfg.input_dim, cfg.hidden_dim, rng);
  for (int b = 0; b < cfg.blocks; ++b)
    init_dense(params, "backbone.block" + std::to_string(b), cfg.hidden_dim, cfg.hidden_dim, rng, std::sqrt(6.0), false);
  init_dense(params, "backbone.out", cfg.hidden_dim, cfg.output_dim, rng, std::sqrt(3.0), false);
}

template <typename S>
Var backbone_forward(Tape<S>& t, const ParamSet<S>& params, const BackboneConfig& cfg, const ModelInput<S>& in) {
  if (in.features.cols() != cfg.input_dim) throw DataError("input feature width does not match the backbone");
  Var h = relu(t, dense(t, params, "backbone.lift", t.constant(in.features)));
  for (int b = 0; b < cfg.blocks; ++b) {
    Var agg = aggregate_mean(t, h, in.neighbors);
    Var lin = project(t, params, "backbone.block" + std::to_string(b), agg);
    h = relu(t, standardize(t, lin, static_cast<S>(kStandardizeEps)));
  }
  // Column-standardized output: a fixed feature scale for every head,
  // whatever the initialization.
  return standardize(t, project(t, params, "backbone.out", h), static_cast<S>(kStandardizeEps));
}

/// Backbone parameter groups the forward pass is invariant to rescaling:
/// each reaches a standardize through linear or positively homogeneous steps.
inline std::vector<std::vector<std::string>> scale_invariant_groups(const BackboneConfig& cfg) {
  std::vector<std::vector<std::string>> out{{"backbone.lift.W", "backbone.lift.b"}};
  for (int b = 0; b < cfg.blocks; ++b) out.push_back({"backbone.block" + std::to_string(b) + ".W"});
  out.push_back({"backbone.out.W"});
  return out;
}

/// Rescales every scale-invariant group of `params` to the norm it has in
/// `reference`. The function is unchanged. SGD only ever grows such a group
/// (its gradient is orthogonal to it), and a large norm shrinks the
/// effective step of any later training; this resets that.
template <typename S>
void match_group_norms(ParamSet<S>& params, const ParamSet<S>& reference, const BackboneConfig& cfg) {
  for (const auto& group : scale_invariant_groups(cfg)) {
    double have = 0.0, want = 0.0;
    for (const auto& name : group) {
      have += static_cast<double>(params.at(name).squaredNorm());
      want += static_cast<double>(reference.at(name).squaredNorm());
    }
    if (!(have > 0.0) || !(want > 0.0)) continue;
    const S f = static_cast<S>(std::sqrt(want / have));
    for (const auto& name : group) params.at(name) *= f;
  }
}

template <typename S>
void init_heads(ParamSet<S>& params, const BackboneConfig& bb, const HeadConfig& heads, Rng& rng) {
  if (heads.semantic) {
    init_dense(params, "semantic.hidden", bb.output_dim, bb.output_dim, rng);
    init_dense(params, "semantic.out", bb.output_dim, heads.num_classes, rng, std::sqrt(3.0));
  }
  if (heads.offset) {
    init_dense(params, "offset.hidden", bb.output_dim, bb.output_dim, rng, std::sqrt(6.0), false);
    init_dense(params, "offset.out", bb.output_dim, 3, rng, std::sqrt(3.0));
  }
}

/// MLP D -> D (ReLU) -> n class scores.
template <typename S>
Var semantic_head(Tape<S>& t, const ParamSet<S>& params, Var features) {
  Var h = relu(t, dense(t, params, "semantic.hidden", features));
  return dense(t, params, "semantic.out", h);
}

/// D -> D (standardize, ReLU) -> 3, scaled to millimeters.
template <typename S>
Var offset_head(Tape<S>& t, const ParamSet<S>& params, const HeadConfig& heads, Var features) {
  Var h = relu(t, standardize(t, project(t, params, "offset.hidden", features), static_cast<S>(kStandardizeEps)));
  return scale(t, dense(t, params, "offset.out", h), static_cast<S>(heads.offset_scale));
}

/// Parameters plus the configuration needed to run them.
template <typename S>
struct Model {
  BackboneConfig backbone;
  HeadConfig heads;
  ParamSet<S> params;

  static Model create(const BackboneConfig& bb, const HeadConfig& hc, std::uint64_t seed) {
    Model m{bb, hc, {}};
    Rng rng(derive_seed(seed, 0x696e6974ULL));
    init_backbone(m.params, bb, rng);
    Rng head_rng(derive_seed(seed, 0x68656164ULL));
    init_heads(m.params, bb, hc, head_rng);
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params) n += static_cast<std::size_t>(v.size());
    return n;
  }
};

}  // namespace e3dp::nn
