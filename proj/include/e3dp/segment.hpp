#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "e3dp/augment.hpp"
#include "e3dp/cluster.hpp"
#include "e3dp/io.hpp"
#include "e3dp/nn/checkpoint.hpp"
#include "e3dp/nn/model.hpp"
#include "e3dp/nn/optim.hpp"
#include "e3dp/nn/tape.hpp"
#include "e3dp/sampling.hpp"
#include "e3dp/voxel.hpp"

namespace e3dp::segment {

using nn::Matrix;
using nn::Tape;
using nn::Var;

/// Argmax per row; ties go to the lowest class.
template <typename Derived>
std::vector<int> predict_labels(const Eigen::MatrixBase<Derived>& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(r, c) > scores(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

template <typename S>
Matrix<S> softmax_rows(const Matrix<S>& logits) {
  Matrix<S> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S mx = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

/// A supervised row of the score matrix and its class.
struct LabeledRow {
  std::size_t row = 0;
  int cls = 0;
};

/// Softmax cross-entropy averaged over the labeled rows only.
template <typename S>
Var masked_cross_entropy(Tape<S>& t, Var logits, std::vector<LabeledRow> labeled) {
  if (labeled.empty()) throw DataError("cross-entropy needs at least one labeled point");
  const Matrix<S>& z = t.value(logits);
  for (const auto& l : labeled)
    if (l.cls < 0 || l.cls >= z.cols() || static_cast<Eigen::Index>(l.row) >= z.rows())
      throw DataError("labeled row or class out of range");
  S total = 0;
  for (const auto& l : labeled) {
    const auto r = static_cast<Eigen::Index>(l.row);
    const S mx = z.row(r).maxCoeff();
    const S lse = mx + std::log((z.row(r).array() - mx).exp().sum());
    total += lse - z(r, l.cls);
  }
  Matrix<S> out(1, 1);
  out(0, 0) = total / static_cast<S>(labeled.size());
  return t.push(std::move(out),
                [logits, labeled = std::move(labeled)](Tape<S>& tp, std::size_t self) {
                  const S g = tp.grad(self)(0, 0) / static_cast<S>(labeled.size());
                  const Matrix<S>& zz = tp.value(logits);
                  Matrix<S>& gz = tp.grad(logits);
                  for (const auto& l : labeled) {
                    const auto r = static_cast<Eigen::Index>(l.row);
                    const S mx = zz.row(r).maxCoeff();
                    Eigen::Matrix<S, 1, Eigen::Dynamic> p = (zz.row(r).array() - mx).exp();
                    p /= p.sum();
                    p(l.cls) -= S(1);
                    gz.row(r) += g * p;
                  }
                },
                t.requires_grad(logits));
}

/// Offset supervision: rows of the offset field with their target vectors
/// (instance centroid minus point). Rows not listed have mask 0.
struct OffsetTargets {
  std::vector<std::size_t> rows;
  std::vector<Vec3> vectors;

  std::size_t size() const noexcept { return rows.size(); }
};

inline constexpr double kNormEps = 1e-8;

/// L_reg = mean over masked rows of |o_i - (c_i - p_i)|.
template <typename S>
Var offset_reg_loss(Tape<S>& t, Var offsets, const OffsetTargets& targets) {
  if (targets.size() == 0) throw DataError("offset loss needs a non-empty mask");
  const Matrix<S>& o = t.value(offsets);
  S total = 0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(targets.rows[k]);
    Eigen::Matrix<S, 1, 3> d;
    for (int c = 0; c < 3; ++c) d(c) = o(r, c) - static_cast<S>(targets.vectors[k][c]);
    total += d.norm();
  }
  Matrix<S> out(1, 1);
  out(0, 0) = total / static_cast<S>(targets.size());
  return t.push(std::move(out),
                [offsets, targets](Tape<S>& tp, std::size_t self) {
                  const S g = tp.grad(self)(0, 0) / static_cast<S>(targets.size());
                  const Matrix<S>& oo = tp.value(offsets);
                  Matrix<S>& go = tp.grad(offsets);
                  for (std::size_t k = 0; k < targets.size(); ++k) {
                    const auto r = static_cast<Eigen::Index>(targets.rows[k]);
                    Eigen::Matrix<S, 1, 3> d;
                    for (int c = 0; c < 3; ++c) d(c) = oo(r, c) - static_cast<S>(targets.vectors[k][c]);
                    const S n = d.norm();
                    if (n > S(0)) go.row(r).head(3) += g * d / n;
                  }
                },
                t.requires_grad(offsets));
}

/// L_dir = -mean over masked rows of cos(o_i, c_i - p_i); norms are floored at 1e-8.
template <typename S>
Var offset_dir_loss(Tape<S>& t, Var offsets, const OffsetTargets& targets) {
  if (targets.size() == 0) throw DataError("offset loss needs a non-empty mask");
  const Matrix<S>& o = t.value(offsets);
  const S eps = static_cast<S>(kNormEps);
  S total = 0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(targets.rows[k]);
    const Eigen::Matrix<S, 1, 3> ov = o.row(r).head(3);
    const Eigen::Matrix<S, 1, 3> dv = targets.vectors[k].cast<S>().transpose();
    total += ov.dot(dv) / (std::max(ov.norm(), eps) * std::max(dv.norm(), eps));
    t.mix_signature(ov.norm() > eps ? 0x6f6eULL + k : 0x6f66ULL + k);
  }
  Matrix<S> out(1, 1);
  out(0, 0) = -total / static_cast<S>(targets.size());
  return t.push(std::move(out),
                [offsets, targets, eps](Tape<S>& tp, std::size_t self) {
                  const S g = -tp.grad(self)(0, 0) / static_cast<S>(targets.size());
                  const Matrix<S>& oo = tp.value(offsets);
                  Matrix<S>& go = tp.grad(offsets);
                  for (std::size_t k = 0; k < targets.size(); ++k) {
                    const auto r = static_cast<Eigen::Index>(targets.rows[k]);
                    const Eigen::Matrix<S, 1, 3> ov = oo.row(r).head(3);
                    const Eigen::Matrix<S, 1, 3> dv = targets.vectors[k].cast<S>().transpose();
                    const S on = ov.norm();
                    const S dn = std::max(dv.norm(), eps);
                    if (on > eps) {
                      const S c = ov.dot(dv);
                      go.row(r).head(3) += g * (dv / (on * dn) - c * ov / (on * on * on * dn));
                    } else {
                      go.row(r).head(3) += g * dv / (eps * dn);
                    }
                  }
                },
                t.requires_grad(offsets));
}

/// Value-level offset losses for a full field with a binary mask.
inline std::pair<double, double> offset_losses(std::span<const Vec3> offsets, std::span<const Vec3> coords,
                                               std::span<const Vec3> centroids, std::span<const bool> mask) {
  if (offsets.size() != coords.size() || centroids.size() != coords.size() || mask.size() != coords.size())
    throw DataError("offset loss inputs differ in length");
  OffsetTargets tg;
  Matrix<double> o(static_cast<Eigen::Index>(offsets.size()), 3);
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    o.row(static_cast<Eigen::Index>(i)) = offsets[i].transpose();
    if (mask[i]) {
      tg.rows.push_back(i);
      tg.vectors.push_back(centroids[i] - coords[i]);
    }
  }
  Tape<double> t;
  Var ov = t.constant(o);
  return {t.scalar(offset_reg_loss(t, ov, tg)), t.scalar(offset_dir_loss(t, ov, tg))};
}

/// Per-instance centroids of the annotated points. With full labels this is
/// the mean of every point of the instance.
inline std::map<int, Vec3> annotated_centroids(const PointCloud& cloud, const WeakLabels& weak) {
  std::map<int, std::pair<Vec3, std::size_t>> acc;
  for (const auto& [i, l] : weak.entries) {
    if (l.semantic != label::kLeaf || l.instance < 0) continue;
    auto& a = acc.try_emplace(l.instance, Vec3::Zero(), 0).first->second;
    a.first += cloud.coords[i];
    ++a.second;
  }
  std::map<int, Vec3> out;
  for (const auto& [id, a] : acc) out[id] = a.first / static_cast<double>(a.second);
  return out;
}

/// WeakLabels holding every labeled point of a fully annotated cloud.
inline WeakLabels full_labels(const PointCloud& cloud) {
  WeakLabels w;
  w.source_id = cloud.source_id;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.semantic_at(i) != label::kUnlabeled) w.entries[i] = {cloud.semantic_at(i), cloud.instance_at(i)};
  w.k = w.entries.size();
  return w;
}

struct FinetuneConfig {
  nn::BackboneConfig backbone;  // used only for baseline (random) initialization
  nn::HeadConfig heads;
  AugmentConfig augment = AugmentConfig::identity();
  long long iterations = 1000;
  int batch_size = 2;
  double lr = 0.1;
  double lr_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double sem_weight = 1.0;
  double reg_weight = 1.0;
  double dir_weight = 1.0;
  std::uint64_t seed = 0;
  long long checkpoint_every = 0;
};

struct FinetuneLogRow {
  long long iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  double sem = 0.0;
  double reg = 0.0;
  double dir = 0.0;
};

inline std::string finetune_log_header() { return "iter,lr,loss,sem_loss,reg_loss,dir_loss\n"; }

inline std::string finetune_log_line(const FinetuneLogRow& r) {
  using e3dp::detail::format_double;
  return std::to_string(r.iter) + "," + format_double(r.lr) + "," + format_double(r.loss) + "," +
         format_double(r.sem) + "," + format_double(r.reg) + "," + format_double(r.dir) + "\n";
}

struct FinetuneHooks {
  std::function<void(const FinetuneLogRow&)> on_log;
  std::function<void(const nn::Checkpoint&)> on_checkpoint;
  /// Reports the annotated-point centroid used for each (cloud, instance).
  std::function<void(const std::string&, int, const Vec3&, std::size_t)> on_centroid;
};

/// A weakly labeled training cloud.
struct TrainItem {
  PointCloud cloud;
  WeakLabels weak;
};

namespace detail {

struct PreparedItem {
  Downsampled voxels;
  std::vector<LabeledRow> labeled;
  std::vector<std::size_t> offset_points;  // original indices with offset supervision
  std::vector<Vec3> offset_vectors;        // centroid - point, in the input frame
};

inline PreparedItem prepare_item(const TrainItem& item, const nn::BackboneConfig& bb, const nn::HeadConfig& heads,
                                 const FinetuneHooks& hooks) {
  PreparedItem p;
  item.cloud.require_non_empty();
  PointCloud stripped = item.cloud;
  stripped.semantic.reset();
  stripped.instance.reset();
  p.voxels = voxel_downsample(stripped, bb.voxel_size);
  for (const auto& [i, l] : item.weak.entries) {
    if (i >= item.cloud.size())
      throw DataError(item.cloud.source_id + ": weak label index " + std::to_string(i) + " out of range");
    if (l.semantic >= heads.num_classes)
      throw DataError(item.cloud.source_id + ": weak label class " + std::to_string(l.semantic) +
                      " exceeds the head's class count");
    p.labeled.push_back({p.voxels.voxels.voxel_of_point[i], l.semantic});
  }
  if (heads.offset) {
    const auto cents = annotated_centroids(item.cloud, item.weak);
    if (hooks.on_centroid) {
      std::map<int, std::size_t> counts;
      for (const auto& [i, l] : item.weak.entries)
        if (l.semantic == label::kLeaf && l.instance >= 0) ++counts[l.instance];
      for (const auto& [id, c] : cents) hooks.on_centroid(item.cloud.source_id, id, c, counts[id]);
    }
    for (const auto& [i, l] : item.weak.entries) {
      if (l.semantic != label::kLeaf || l.instance < 0) continue;
      p.offset_points.push_back(i);
      p.offset_vectors.push_back(cents.at(l.instance) - item.cloud.coords[i]);
    }
  }
  return p;
}

}  // namespace detail

/// Fine-tunes a model for semantic segmentation (heads.offset == false) or
/// instance segmentation (heads.offset == true, Loss = sem + reg + dir).
/// `pretrained` == nullptr selects the baseline: random backbone initialization.
template <typename S>
nn::Checkpoint finetune(const nn::Checkpoint* pretrained, std::span<const TrainItem> dataset, const FinetuneConfig& cfg,
                        const FinetuneHooks& hooks = {}) {
  if (dataset.empty()) throw DataError("fine-tuning needs at least one cloud");
  if (cfg.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!cfg.heads.semantic) throw ConfigError("fine-tuning needs the semantic head");
  cfg.augment.validate();
  const nn::BackboneConfig bb = pretrained ? pretrained->backbone : cfg.backbone;
  nn::Model<S> model = nn::Model<S>::create(bb, cfg.heads, cfg.seed);
  if (pretrained) {
    const auto pre = nn::model_from_checkpoint<S>(*pretrained);
    for (const auto& [name, m] : pre.params) {
      if (name.rfind("backbone.", 0) != 0) continue;
      auto it = model.params.find(name);
      if (it == model.params.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols())
        throw DataError("pretrained parameter '" + name + "' does not fit the backbone");
      it->second = m;
    }
    nn::match_group_norms(model.params, nn::Model<S>::create(bb, cfg.heads, cfg.seed).params, bb);
  }
  std::vector<detail::PreparedItem> items;
  for (const auto& it : dataset) {
    if (it.weak.empty()) throw DataError(it.cloud.source_id + ": no weak labels");
    items.push_back(detail::prepare_item(it, bb, cfg.heads, hooks));
  }
  nn::ParamSet<S> velocity;
  auto snapshot = [&](long long iter) {
    auto ck = nn::make_checkpoint(model, &velocity, static_cast<std::uint64_t>(iter), cfg.seed);
    ck.meta["stage"] = cfg.heads.offset ? "finetune-instance" : "finetune-semantic";
    ck.meta["init"] = pretrained ? "pretrained" : "baseline";
    ck.meta["iterations"] = std::to_string(cfg.iterations);
    return ck;
  };

  for (long long it = 0; it < cfg.iterations; ++it) {
    const double lr = nn::poly_lr(it, cfg.iterations, cfg.lr, cfg.lr_power);
    Rng rng(derive_seed(cfg.seed, 0x66696e65ULL, static_cast<std::uint64_t>(it)));
    nn::ParamSet<S> grads;
    FinetuneLogRow row{it, lr, 0.0, 0.0, 0.0, 0.0};
    const S w = S(1) / static_cast<S>(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& item = items[static_cast<std::size_t>(rng.below(items.size()))];
      TransformParams tp;
      const PointCloud view = random_transform(item.voxels.cloud, cfg.augment, rng.next(), &tp);
      const auto input = nn::make_input<S>(view, bb);
      Tape<S> t;
      Var feats = nn::backbone_forward(t, model.params, bb, input);
      Var sem = masked_cross_entropy(t, nn::semantic_head(t, model.params, feats), item.labeled);
      std::vector<std::pair<Var, S>> terms{{sem, static_cast<S>(cfg.sem_weight)}};
      double reg_v = 0.0, dir_v = 0.0;
      if (cfg.heads.offset && !item.offset_points.empty()) {
        Var off = nn::offset_head(t, model.params, cfg.heads, feats);
        OffsetTargets tg;
        const Eigen::Matrix3d lin = tp.linear();
        for (std::size_t k = 0; k < item.offset_points.size(); ++k) {
          tg.rows.push_back(item.voxels.voxels.voxel_of_point[item.offset_points[k]]);
          tg.vectors.push_back(lin * item.offset_vectors[k]);
        }
        Var reg = offset_reg_loss(t, off, tg);
        Var dir = offset_dir_loss(t, off, tg);
        reg_v = static_cast<double>(t.scalar(reg));
        dir_v = static_cast<double>(t.scalar(dir));
        terms.push_back({reg, static_cast<S>(cfg.reg_weight)});
        terms.push_back({dir, static_cast<S>(cfg.dir_weight)});
      }
      Var loss = nn::weighted_sum(t, terms);
      const double lv = static_cast<double>(t.scalar(loss));
      row.loss += lv / cfg.batch_size;
      row.sem += static_cast<double>(t.scalar(sem)) / cfg.batch_size;
      row.reg += reg_v / cfg.batch_size;
      row.dir += dir_v / cfg.batch_size;
      if (std::isfinite(lv)) {
        t.backward(loss);
        t.accumulate(grads, w);
      }
    }
    if (!std::isfinite(row.loss) || !nn::all_finite(grads)) {
      if (hooks.on_checkpoint) hooks.on_checkpoint(snapshot(it));
      throw DivergenceError("fine-tuning diverged at iteration " + std::to_string(it));
    }
    nn::sgd_step(model.params, grads, velocity, static_cast<S>(lr), static_cast<S>(cfg.momentum),
                 static_cast<S>(cfg.weight_decay));
    if (hooks.on_log) hooks.on_log(row);
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations &&
        hooks.on_checkpoint)
      hooks.on_checkpoint(snapshot(it + 1));
  }
  return snapshot(cfg.iterations);
}

template <typename S>
nn::Checkpoint finetune_semantic(const nn::Checkpoint* pretrained, std::span<const TrainItem> dataset,
                                 FinetuneConfig cfg, const FinetuneHooks& hooks = {}) {
  cfg.heads.semantic = true;
  cfg.heads.offset = false;
  return finetune<S>(pretrained, dataset, cfg, hooks);
}

template <typename S>
nn::Checkpoint finetune_instance(const nn::Checkpoint* pretrained, std::span<const TrainItem> dataset,
                                 FinetuneConfig cfg, const FinetuneHooks& hooks = {}) {
  cfg.heads.semantic = true;
  cfg.heads.offset = true;
  return finetune<S>(pretrained, dataset, cfg, hooks);
}

struct ClusterConfig {
  double radius = 1.5;        // mm, original coordinates
  double shift_radius = 1.5;  // mm, shifted coordinates
  std::size_t min_size = 50;
  double merge_iou = 0.75;
};

struct InferResult {
  std::vector<int> semantic;          // per original point
  std::vector<double> leaf_prob;      // per original point
  std::vector<Vec3> offsets;          // per original point (instance models only)
  std::vector<InstancePrediction> instances;
  std::vector<int> instance;          // per original point, -1 when unassigned

  bool has_instances() const noexcept { return !offsets.empty(); }
};

/// Dual-set clustering of leaf-labeled points on original and shifted coordinates.
inline std::vector<InstancePrediction> cluster_instances(const PointCloud& cloud, const std::vector<int>& semantic,
                                                         const std::vector<Vec3>& offsets,
                                                         const std::vector<double>& leaf_prob,
                                                         const ClusterConfig& cc) {
  std::vector<bool> mask_v(cloud.size());
  std::vector<Vec3> shifted(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    mask_v[i] = semantic[i] == label::kLeaf;
    shifted[i] = cloud.coords[i] + offsets[i];
  }
  const std::unique_ptr<bool[]> mask(new bool[cloud.size()]);
  std::copy(mask_v.begin(), mask_v.end(), mask.get());
  const std::span<const bool> m(mask.get(), cloud.size());
  const auto c_orig = ball_cluster(cloud.coords, m, cc.radius, cc.min_size);
  const auto c_shift = ball_cluster(shifted, m, cc.shift_radius, cc.min_size);
  return dual_set_union(c_orig, c_shift, cc.merge_iou, leaf_prob);
}

/// Runs a fine-tuned model on a raw cloud: voxelize, forward, scatter voxel
/// predictions back to every original point, and (for instance models)
/// cluster leaf points.
template <typename S>
InferResult infer(const nn::Model<S>& model, const PointCloud& cloud, const ClusterConfig& cc = {}) {
  cloud.require_non_empty();
  if (!model.heads.semantic) throw DataError("model has no semantic head");
  PointCloud stripped = cloud;
  stripped.semantic.reset();
  stripped.instance.reset();
  const Downsampled ds = voxel_downsample(stripped, model.backbone.voxel_size);
  const auto input = nn::make_input<S>(ds.cloud, model.backbone);
  Tape<S> t;
  Var feats = nn::backbone_forward(t, model.params, model.backbone, input);
  const Matrix<S> probs = softmax_rows<S>(t.value(nn::semantic_head(t, model.params, feats)));
  const auto voxel_labels = predict_labels(probs);
  InferResult res;
  res.semantic.resize(cloud.size());
  res.leaf_prob.resize(cloud.size());
  const auto& vop = ds.voxels.voxel_of_point;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    res.semantic[i] = voxel_labels[vop[i]];
    res.leaf_prob[i] = probs.cols() > label::kLeaf ? static_cast<double>(probs(static_cast<Eigen::Index>(vop[i]), label::kLeaf)) : 0.0;
  }
  if (model.heads.offset) {
    const Matrix<S> off = t.value(nn::offset_head(t, model.params, model.heads, feats));
    res.offsets.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(vop[i]);
      res.offsets[i] = Vec3(off(r, 0), off(r, 1), off(r, 2));
    }
    res.instances = cluster_instances(cloud, res.semantic, res.offsets, res.leaf_prob, cc);
    res.instance = instance_labels(res.instances, cloud.size());
  }
  return res;
}

/// The input cloud with predicted labels attached.
inline PointCloud labeled_prediction(const PointCloud& cloud, const InferResult& r) {
  PointCloud out = cloud;
  out.semantic = r.semantic;
  out.instance = r.has_instances() ? r.instance : std::vector<int>(cloud.size(), label::kUnlabeled);
  return out;
}

}  // namespace e3dp::segment
