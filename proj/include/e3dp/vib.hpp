#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "e3dp/augment.hpp"
#include "e3dp/io.hpp"
#include "e3dp/nn/checkpoint.hpp"
#include "e3dp/nn/model.hpp"
#include "e3dp/nn/optim.hpp"
#include "e3dp/nn/tape.hpp"
#include "e3dp/sampling.hpp"
#include "e3dp/voxel.hpp"

namespace e3dp::vib {

using nn::Matrix;
using nn::Tape;
using nn::Var;

/// Column standardization floor: sigma = sqrt(var + eps^2), eps = 1e-5.
inline constexpr double kCorrelationEps = 1e-5;

/// D x D cross-view correlation of column-standardized samples.
struct CrossCorrelation {
  Eigen::MatrixXd Z;
  std::size_t samples = 0;
  double lambda = 0.005;
};

/// Row indices shared by both views: FPS on the un-augmented coordinates.
/// `clamped` reports whether H had to be reduced to M.
struct SampleIndex {
  std::vector<std::size_t> rows;
  bool clamped = false;
};

inline SampleIndex sample_index(std::span<const Vec3> coords, std::size_t h, std::size_t start) {
  SampleIndex s;
  s.clamped = h > coords.size();
  s.rows = farthest_point_sample(coords, h, start);
  return s;
}

/// Selects the same rows from both views.
template <typename S>
std::pair<Matrix<S>, Matrix<S>> sample_representations(const Matrix<S>& zp, const Matrix<S>& zq,
                                                        std::span<const Vec3> coords, std::size_t h,
                                                        std::size_t start, bool* clamped = nullptr) {
  if (zp.rows() != zq.rows() || zp.cols() != zq.cols()) throw DataError("views must have equal shapes");
  if (static_cast<std::size_t>(zp.rows()) != coords.size()) throw DataError("feature rows do not match coordinates");
  const auto idx = sample_index(coords, h, start);
  if (clamped) *clamped = idx.clamped;
  Matrix<S> a(static_cast<Eigen::Index>(idx.rows.size()), zp.cols()), b(a.rows(), zq.cols());
  for (std::size_t r = 0; r < idx.rows.size(); ++r) {
    a.row(static_cast<Eigen::Index>(r)) = zp.row(static_cast<Eigen::Index>(idx.rows[r]));
    b.row(static_cast<Eigen::Index>(r)) = zq.row(static_cast<Eigen::Index>(idx.rows[r]));
  }
  return {std::move(a), std::move(b)};
}

/// Tape version: Z = (1/H) std(Zp')^T std(Zq').
template <typename S>
Var cross_correlation(Tape<S>& t, Var zp, Var zq) {
  const auto h = t.value(zp).rows();
  if (h < 2) throw DataError("cross-correlation needs at least 2 samples");
  if (t.value(zq).rows() != h || t.value(zq).cols() != t.value(zp).cols())
    throw DataError("cross-correlation inputs must have equal shapes");
  const S eps2 = static_cast<S>(kCorrelationEps * kCorrelationEps);
  Var a = nn::standardize(t, zp, eps2);
  Var b = nn::standardize(t, zq, eps2);
  return nn::matmul_tn(t, a, b, S(1) / static_cast<S>(h));
}

struct LossTerms {
  double diag = 0.0;
  double offdiag = 0.0;
};

/// sum_i (1 - Z_ii)^2 + lambda * sum_{i != j} Z_ij^2 as a 1x1 node.
template <typename S>
Var vib_loss(Tape<S>& t, Var z, S lambda, LossTerms* terms = nullptr) {
  const Matrix<S>& zv = t.value(z);
  if (zv.rows() != zv.cols()) throw DataError("correlation matrix must be square");
  S diag = 0, off = 0;
  for (Eigen::Index i = 0; i < zv.rows(); ++i)
    for (Eigen::Index j = 0; j < zv.cols(); ++j) {
      if (i == j) diag += (S(1) - zv(i, j)) * (S(1) - zv(i, j));
      else off += zv(i, j) * zv(i, j);
    }
  if (terms) *terms = {static_cast<double>(diag), static_cast<double>(off)};
  Matrix<S> out(1, 1);
  out(0, 0) = diag + lambda * off;
  return t.push(std::move(out),
                [z, lambda](Tape<S>& tp, std::size_t self) {
                  const S g = tp.grad(self)(0, 0);
                  const Matrix<S>& zz = tp.value(z);
                  Matrix<S>& gz = tp.grad(z);
                  for (Eigen::Index i = 0; i < zz.rows(); ++i)
                    for (Eigen::Index j = 0; j < zz.cols(); ++j)
                      gz(i, j) += g * (i == j ? S(-2) * (S(1) - zz(i, j)) : S(2) * lambda * zz(i, j));
                },
                t.requires_grad(z));
}

inline CrossCorrelation cross_correlation(const Eigen::MatrixXd& zp, const Eigen::MatrixXd& zq, double lambda = 0.005) {
  Tape<double> t;
  Var z = cross_correlation(t, t.constant(zp), t.constant(zq));
  return {t.value(z), static_cast<std::size_t>(zp.rows()), lambda};
}

inline double vib_loss(const CrossCorrelation& c, LossTerms* terms = nullptr) {
  Tape<double> t;
  return t.scalar(vib_loss(t, t.constant(c.Z), c.lambda, terms));
}

struct PretrainConfig {
  nn::BackboneConfig backbone;
  AugmentConfig augment;
  long long iterations = 1000;
  int batch_size = 2;
  double lr = 0.1;
  double lr_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lambda = 0.005;
  std::size_t samples = 1024;  // H
  std::uint64_t seed = 0;
  long long checkpoint_every = 0;  // 0: only the final checkpoint
};

struct LogRow {
  long long iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  double diag = 0.0;
  double offdiag = 0.0;
};

inline std::string log_header() { return "iter,lr,loss,diag_term,offdiag_term\n"; }

inline std::string log_line(const LogRow& r) {
  return std::to_string(r.iter) + "," + detail::format_double(r.lr) + "," + detail::format_double(r.loss) + "," +
         detail::format_double(r.diag) + "," + detail::format_double(r.offdiag) + "\n";
}

struct PretrainHooks {
  std::function<void(const LogRow&)> on_log;
  std::function<void(const nn::Checkpoint&)> on_checkpoint;
  /// Emits a warning line (e.g. H clamped to M).
  std::function<void(const std::string&)> on_warning;
};

/// One VIB loss evaluation for a single cloud pair of views, accumulated into `grads`.
template <typename S>
double vib_step_loss(const nn::Model<S>& model, const PointCloud& voxelized, const AugmentConfig& aug,
                     std::size_t samples, double lambda, std::uint64_t seed, nn::ParamSet<S>* grads, S grad_weight,
                     LossTerms* terms, bool* clamped) {
  Rng rng(seed);
  const auto seed_p = rng.next();
  const auto seed_q = rng.next();
  const auto start = static_cast<std::size_t>(rng.below(voxelized.size()));
  const PointCloud vp = random_transform(voxelized, aug, seed_p);
  const PointCloud vq = random_transform(voxelized, aug, seed_q);
  const auto in_p = nn::make_input<S>(vp, model.backbone);
  const auto in_q = nn::make_input<S>(vq, model.backbone);
  const auto idx = sample_index(voxelized.coords, samples, start);
  if (clamped) *clamped = idx.clamped;
  Tape<S> t;
  Var zp = nn::backbone_forward(t, model.params, model.backbone, in_p);
  Var zq = nn::backbone_forward(t, model.params, model.backbone, in_q);
  Var corr = cross_correlation(t, nn::gather_rows(t, zp, idx.rows), nn::gather_rows(t, zq, idx.rows));
  Var loss = vib_loss(t, corr, static_cast<S>(lambda), terms);
  const double value = static_cast<double>(t.scalar(loss));
  if (grads && std::isfinite(value)) {
    t.backward(loss);
    t.accumulate(*grads, grad_weight);
  }
  return value;
}

/// Self-supervised pretraining of the backbone. Per-iteration randomness is
/// derived from (seed, iteration), so a run resumed from a checkpoint replays
/// the uninterrupted run exactly.
template <typename S>
nn::Checkpoint pretrain(std::span<const PointCloud> dataset, const PretrainConfig& cfg, const PretrainHooks& hooks = {},
                        const nn::Checkpoint* resume = nullptr) {
  if (dataset.empty()) throw DataError("pretraining needs at least one cloud");
  if (cfg.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  cfg.augment.validate();
  cfg.backbone.validate();
  std::vector<PointCloud> voxelized;
  voxelized.reserve(dataset.size());
  for (const auto& c : dataset) {
    c.require_non_empty();
    PointCloud v = voxel_downsample(c, cfg.backbone.voxel_size).cloud;
    v.semantic.reset();
    v.instance.reset();
    if (v.size() < 2) throw DataError(c.source_id + ": fewer than 2 voxels; cannot correlate views");
    voxelized.push_back(std::move(v));
  }

  nn::Model<S> model;
  nn::ParamSet<S> velocity;
  long long first = 0;
  if (resume) {
    model = nn::model_from_checkpoint<S>(*resume);
    velocity = nn::velocity_from_checkpoint<S>(*resume);
    first = static_cast<long long>(resume->iteration);
    if (!(model.backbone == cfg.backbone)) throw ConfigError("resume checkpoint backbone differs from configuration");
  } else {
    model = nn::Model<S>::create(cfg.backbone, nn::HeadConfig{}, cfg.seed);
  }
  auto snapshot = [&](long long iter) {
    auto ck = nn::make_checkpoint(model, &velocity, static_cast<std::uint64_t>(iter), cfg.seed);
    ck.meta["stage"] = "pretrain";
    ck.meta["lambda"] = detail::format_double(cfg.lambda);
    ck.meta["samples"] = std::to_string(cfg.samples);
    ck.meta["iterations"] = std::to_string(cfg.iterations);
    return ck;
  };

  bool warned = false;
  for (long long it = first; it < cfg.iterations; ++it) {
    const double lr = nn::poly_lr(it, cfg.iterations, cfg.lr, cfg.lr_power);
    Rng rng(derive_seed(cfg.seed, 0x76696200ULL, static_cast<std::uint64_t>(it)));
    nn::ParamSet<S> grads;
    LogRow row{it, lr, 0.0, 0.0, 0.0};
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto ci = static_cast<std::size_t>(rng.below(voxelized.size()));
      LossTerms terms;
      bool clamped = false;
      const double loss = vib_step_loss<S>(model, voxelized[ci], cfg.augment, cfg.samples, cfg.lambda, rng.next(),
                                           &grads, S(1) / static_cast<S>(cfg.batch_size), &terms, &clamped);
      if (clamped && !warned && hooks.on_warning) {
        hooks.on_warning("sample count H=" + std::to_string(cfg.samples) + " exceeds voxel count of " +
                         voxelized[ci].source_id + "; clamped");
        warned = true;
      }
      row.loss += loss / cfg.batch_size;
      row.diag += terms.diag / cfg.batch_size;
      row.offdiag += terms.offdiag / cfg.batch_size;
    }
    if (!std::isfinite(row.loss) || !nn::all_finite(grads)) {
      if (hooks.on_checkpoint) hooks.on_checkpoint(snapshot(it));
      throw DivergenceError("pretraining diverged at iteration " + std::to_string(it));
    }
    nn::sgd_step(model.params, grads, velocity, static_cast<S>(lr), static_cast<S>(cfg.momentum),
                 static_cast<S>(cfg.weight_decay));
    if (hooks.on_log) hooks.on_log(row);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations &&
        hooks.on_checkpoint)
      hooks.on_checkpoint(snapshot(it + 1));
  }
  return snapshot(std::max(first, cfg.iterations));
}

}  // namespace e3dp::vib
