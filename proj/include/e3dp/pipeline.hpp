#pragma once

// Subcommand implementations shared by the CLI and the tests. Each run
// freezes its resolved configuration as <out>/run.cfg before doing work, so
// `e3dp <command> --config <out>/run.cfg --out <other>` replays it exactly.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "e3dp/augment.hpp"
#include "e3dp/cloud.hpp"
#include "e3dp/cluster.hpp"
#include "e3dp/config.hpp"
#include "e3dp/error.hpp"
#include "e3dp/io.hpp"
#include "e3dp/metrics.hpp"
#include "e3dp/nn/checkpoint.hpp"
#include "e3dp/sampling.hpp"
#include "e3dp/segment.hpp"
#include "e3dp/synth.hpp"
#include "e3dp/traits.hpp"
#include "e3dp/vib.hpp"

#include <json.hpp>

namespace e3dp::pipeline {

namespace fs = std::filesystem;

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"synth",  "weaklabel", "pretrain", "finetune-sem",
                                                 "finetune-inst", "infer", "evaluate", "traits",
                                                 "describe-checkpoint", "serve"};
  return names;
}

// ---------------------------------------------------------------------------
// Config -> module structs

inline nn::BackboneConfig backbone_config(const RunConfig& c) {
  nn::BackboneConfig b;
  b.input_dim = static_cast<int>(c.integer("model.input_dim"));
  b.hidden_dim = static_cast<int>(c.integer("model.hidden"));
  b.blocks = static_cast<int>(c.integer("model.blocks"));
  b.output_dim = static_cast<int>(c.integer("model.output"));
  b.voxel_size = c.real("model.voxel_size");
  b.aggregation_radius = c.real("model.aggregation_radius");
  b.coord_scale = c.real("model.coord_scale");
  b.validate();
  return b;
}

inline nn::HeadConfig head_config(const RunConfig& c) {
  nn::HeadConfig h;
  h.num_classes = static_cast<int>(c.integer("model.num_classes"));
  h.offset_scale = c.real("model.offset_scale");
  if (h.num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (!(h.offset_scale > 0)) throw ConfigError("model.offset_scale must be positive");
  return h;
}

inline AugmentConfig augment_config(const RunConfig& c) {
  AugmentConfig a;
  a.rotation_z_max = c.real("augment.rotation_z_max");
  a.rotation_xy_max = c.real("augment.rotation_xy_max");
  a.scale_lo = c.real("augment.scale_lo");
  a.scale_hi = c.real("augment.scale_hi");
  a.jitter_sigma = c.real("augment.jitter_sigma");
  a.flip_probability = c.real("augment.flip_probability");
  a.color_jitter_sigma = c.real("augment.color_jitter_sigma");
  a.validate();
  return a;
}

inline vib::PretrainConfig pretrain_config(const RunConfig& c) {
  vib::PretrainConfig p;
  p.backbone = backbone_config(c);
  p.augment = augment_config(c);
  p.iterations = c.integer("pretrain.iterations");
  p.batch_size = static_cast<int>(c.integer("pretrain.batch_size"));
  p.lr = c.real("pretrain.lr");
  p.lr_power = c.real("pretrain.lr_power");
  p.momentum = c.real("pretrain.momentum");
  p.weight_decay = c.real("pretrain.weight_decay");
  p.lambda = c.real("pretrain.lambda");
  const auto h = c.integer("pretrain.samples");
  if (h < 2) throw ConfigError("pretrain.samples must be >= 2");
  p.samples = static_cast<std::size_t>(h);
  p.seed = c.seed("seed");
  p.checkpoint_every = c.integer("pretrain.checkpoint_every");
  return p;
}

inline segment::FinetuneConfig finetune_config(const RunConfig& c) {
  segment::FinetuneConfig f;
  f.backbone = backbone_config(c);
  f.heads = head_config(c);
  f.augment = c.flag("finetune.augment") ? augment_config(c) : AugmentConfig::identity();
  f.iterations = c.integer("finetune.iterations");
  f.batch_size = static_cast<int>(c.integer("finetune.batch_size"));
  f.lr = c.real("finetune.lr");
  f.lr_power = c.real("finetune.lr_power");
  f.momentum = c.real("finetune.momentum");
  f.weight_decay = c.real("finetune.weight_decay");
  f.sem_weight = c.real("finetune.sem_weight");
  f.reg_weight = c.real("finetune.reg_weight");
  f.dir_weight = c.real("finetune.dir_weight");
  f.seed = c.seed("seed");
  f.checkpoint_every = c.integer("finetune.checkpoint_every");
  return f;
}

inline segment::ClusterConfig cluster_config(const RunConfig& c) {
  segment::ClusterConfig cc;
  cc.radius = c.real("cluster.radius");
  cc.shift_radius = c.real("cluster.shift_radius");
  const auto n = c.integer("cluster.min_size");
  if (n < 1) throw ConfigError("cluster.min_size must be >= 1");
  cc.min_size = static_cast<std::size_t>(n);
  cc.merge_iou = c.real("cluster.merge_iou");
  if (!(cc.radius > 0 && cc.shift_radius > 0)) throw ConfigError("cluster radii must be positive");
  return cc;
}

inline traits::TraitOptions trait_options(const RunConfig& c) {
  traits::TraitOptions t;
  const auto k = c.integer("traits.neighbors");
  const auto m = c.integer("traits.min_leaf_points");
  const auto s = c.integer("traits.smooth_neighbors");
  if (k < 1 || m < 1 || s < 0) throw ConfigError("traits.neighbors and traits.min_leaf_points must be >= 1");
  t.neighbors = static_cast<std::size_t>(k);
  t.min_leaf_points = static_cast<std::size_t>(m);
  t.smooth_neighbors = static_cast<std::size_t>(s);
  return t;
}

inline synth::RandomPlantOptions plant_options(const RunConfig& c) {
  synth::RandomPlantOptions o;
  o.min_leaves = static_cast<int>(c.integer("synth.min_leaves"));
  o.max_leaves = static_cast<int>(c.integer("synth.max_leaves"));
  o.density = c.real("synth.density");
  o.noise_sigma = c.real("synth.noise_sigma");
  o.jitter = c.real("synth.jitter");
  o.holes.count = static_cast<int>(c.integer("synth.holes"));
  o.holes.radius = c.real("synth.hole_radius");
  return o;
}

inline bool double_precision(const RunConfig& c) {
  const auto& p = c.str("model.precision");
  if (p == "f64") return true;
  if (p == "f32") return false;
  throw ConfigError("model.precision must be f32 or f64, got '" + p + "'");
}

// ---------------------------------------------------------------------------
// Inputs, outputs, frozen config

/// Stable 64-bit FNV-1a, used to give each cloud id its own seed stream.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

inline bool is_cloud_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".xyzl" || ext == ".xyz" || ext == ".txt" || ext == ".ply";
}

/// Expands a comma list of cloud files, directories (every cloud file in
/// them, sorted), and manifest .json files (entries of `split`, relative to
/// the manifest).
inline std::vector<fs::path> resolve_clouds(const std::vector<std::string>& items, const std::string& split) {
  std::vector<fs::path> out;
  for (const auto& item : items) {
    const fs::path p(item);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && is_cloud_file(e.path())) found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (p.extension() == ".json") {
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(detail::slurp(p));
      } catch (const nlohmann::json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
      }
      if (!doc.contains(split)) throw ConfigError(p.string() + ": manifest has no split '" + split + "'");
      for (const auto& f : doc.at(split)) out.push_back(p.parent_path() / f.get<std::string>());
    } else if (fs::is_regular_file(p)) {
      out.push_back(p);
    } else {
      throw IoError("input " + item + " does not exist");
    }
  }
  if (out.empty()) throw DataError("no input clouds");
  return out;
}

inline std::vector<PointCloud> load_clouds(const std::vector<fs::path>& paths, bool strip_soil) {
  std::vector<PointCloud> clouds;
  std::set<std::string> ids;
  for (const auto& p : paths) {
    auto c = load_cloud(p);
    if (strip_soil) {
      const auto id = c.source_id;
      c = strip_class(c, label::kSoil);
      c.source_id = id;
    }
    if (!ids.insert(c.source_id).second) throw DataError("duplicate cloud id " + c.source_id);
    clouds.push_back(std::move(c));
  }
  return clouds;
}

inline std::vector<PointCloud> load_inputs(const RunConfig& c, const std::string& key = "io.inputs") {
  if (c.str(key).empty()) throw ConfigError(key + " is required");
  return load_clouds(resolve_clouds(c.list(key), c.str("io.split")), c.flag("io.strip_soil"));
}

/// Rewrites path-valued io.* keys as absolute paths so the frozen copy works
/// from any working directory.
inline void absolutize(RunConfig& c) {
  for (const char* key : {"io.inputs", "io.pred", "io.gt"}) {
    std::string joined;
    for (const auto& item : c.list(key)) joined += (joined.empty() ? "" : ",") + fs::absolute(item).lexically_normal().string();
    c.set(key, joined);
  }
  for (const char* key : {"io.weak_dir", "io.checkpoint", "io.instances_dir", "io.truth", "serve.data_dir",
                          "serve.session_dir"})
    if (!c.str(key).empty()) c.set(key, fs::absolute(c.str(key)).lexically_normal().string());
}

/// Binds the configuration to `command` and writes <out>/run.cfg.
inline void freeze(RunConfig& c, const std::string& command, const fs::path& out) {
  if (!c.str("command").empty() && c.str("command") != command)
    throw ConfigError("config was frozen for '" + c.str("command") + "', not '" + command + "'");
  c.set("command", command);
  absolutize(c);
  fs::create_directories(out);
  write_text_file(out / "run.cfg", c.text());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Subcommands

/// Synthetic plants with ground-truth traits and a train/val manifest.
inline void run_synth(const RunConfig& c, const fs::path& out) {
  const auto n = c.integer("synth.count");
  const auto holdout = c.integer("synth.holdout");
  if (n < 1 || holdout < 0 || holdout > n) throw ConfigError("need synth.count >= 1 and 0 <= synth.holdout <= count");
  const auto& format = c.str("synth.format");
  if (format != "xyzl" && format != "ply") throw ConfigError("synth.format must be xyzl or ply");
  const auto opt = plant_options(c);
  std::string truth = synth::truth_csv_header();
  nlohmann::json manifest = {{"train", nlohmann::json::array()}, {"val", nlohmann::json::array()}};
  for (long long i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "plant_%03lld", i);
    const auto spec = synth::random_plant_spec(derive_seed(c.seed("seed"), 0x73796e74ULL, static_cast<std::uint64_t>(i)), opt, id);
    const auto plant = synth::generate_plant(spec);
    const std::string file = std::string(id) + "." + format;
    save_cloud(plant.cloud, out / file, format == "ply" ? CloudFormat::kPlyAscii : CloudFormat::kXyzl);
    truth += synth::truth_csv(plant.truth);
    manifest[i < n - holdout ? "train" : "val"].push_back(file);
  }
  write_text_file(out / "truth.csv", truth);
  write_json(out / "manifest.json", manifest);
}

inline WeakLabels weak_for(const PointCloud& cloud, const RunConfig& c) {
  return make_weak_labels(cloud, c.integer("weak.k"), derive_seed(c.seed("seed"), fnv1a(cloud.source_id)),
                          c.flag("weak.balanced"));
}

/// Draws weak labels for each labeled input. With weak.subsample_ratio < 1
/// the subsampled cloud is written next to its labels, which index into it.
inline void run_weaklabel(const RunConfig& c, const fs::path& out) {
  const double ratio = c.real("weak.subsample_ratio");
  for (auto cloud : load_inputs(c)) {
    if (ratio < 1.0) {
      const auto id = cloud.source_id;
      cloud = random_subsample(cloud, ratio, derive_seed(c.seed("seed"), fnv1a(id), 1));
      cloud.source_id = id;
      save_cloud(cloud, out / (id + ".xyzl"));
    }
    save_weak_labels(weak_for(cloud, c), out / (cloud.source_id + ".weak"));
  }
}

inline void run_pretrain(const RunConfig& c, const fs::path& out) {
  auto clouds = load_inputs(c);
  for (auto& cl : clouds) {
    cl.semantic.reset();
    cl.instance.reset();
  }
  const auto cfg = pretrain_config(c);
  std::optional<nn::Checkpoint> resume;
  if (!c.str("io.checkpoint").empty()) resume = nn::load_checkpoint(c.str("io.checkpoint"));
  std::string log = vib::log_header();
  vib::PretrainHooks hooks;
  hooks.on_log = [&](const vib::LogRow& r) {
    log += vib::log_line(r);
    // Keeps the log on disk current for long runs.
    if (r.iter % 100 == 0) write_text_file(out / "pretrain_log.csv", log);
  };
  hooks.on_checkpoint = [&](const nn::Checkpoint& ck) {
    nn::save_checkpoint(ck, out / ("pretrain_" + std::to_string(ck.iteration) + ".ckpt"));
  };
  hooks.on_warning = [](const std::string& w) { std::cerr << "warning: " << w << '\n'; };
  try {
    const auto ck = double_precision(c) ? vib::pretrain<double>(clouds, cfg, hooks, resume ? &*resume : nullptr)
                                        : vib::pretrain<float>(clouds, cfg, hooks, resume ? &*resume : nullptr);
    nn::save_checkpoint(ck, out / "pretrain.ckpt");
  } catch (...) {
    write_text_file(out / "pretrain_log.csv", log);
    throw;
  }
  write_text_file(out / "pretrain_log.csv", log);
}

/// Training items: each input cloud with <weak_dir>/<id>.weak, or, without a
/// weak_dir, weak.k labels drawn here exactly as `weaklabel` would.
inline std::vector<segment::TrainItem> train_items(const RunConfig& c) {
  std::vector<segment::TrainItem> items;
  const auto& dir = c.str("io.weak_dir");
  for (auto& cloud : load_inputs(c)) {
    WeakLabels w;
    if (dir.empty()) {
      w = weak_for(cloud, c);
    } else {
      const fs::path p = fs::path(dir) / (cloud.source_id + ".weak");
      if (!fs::exists(p)) throw DataError("missing weak labels " + p.string());
      w = load_weak_labels(p);
      for (const auto& [i, lab] : w.entries)
        if (i >= cloud.size()) throw DataError(p.string() + ": index " + std::to_string(i) + " out of range");
    }
    items.push_back({std::move(cloud), std::move(w)});
  }
  return items;
}

inline void run_finetune(const RunConfig& c, const fs::path& out, bool instance) {
  const auto items = train_items(c);
  const auto cfg = finetune_config(c);
  std::optional<nn::Checkpoint> pre;
  if (!c.flag("finetune.baseline")) {
    if (c.str("io.checkpoint").empty())
      throw ConfigError("io.checkpoint (pretrained backbone) is required unless finetune.baseline=true");
    pre = nn::load_checkpoint(c.str("io.checkpoint"));
  }
  const std::string stage = instance ? "finetune_inst" : "finetune_sem";
  std::string log = segment::finetune_log_header();
  std::string centroids = "cloud_id,instance,x,y,z,points\n";
  segment::FinetuneHooks hooks;
  hooks.on_log = [&](const segment::FinetuneLogRow& r) {
    log += segment::finetune_log_line(r);
    if (r.iter % 100 == 0) write_text_file(out / (stage + "_log.csv"), log);
  };
  hooks.on_checkpoint = [&](const nn::Checkpoint& ck) {
    nn::save_checkpoint(ck, out / (stage + "_" + std::to_string(ck.iteration) + ".ckpt"));
  };
  hooks.on_centroid = [&](const std::string& id, int inst, const Vec3& p, std::size_t count) {
    centroids += id + "," + std::to_string(inst) + "," + detail::format_double(p.x()) + "," +
                 detail::format_double(p.y()) + "," + detail::format_double(p.z()) + "," + std::to_string(count) + "\n";
  };
  const nn::Checkpoint* init = pre ? &*pre : nullptr;
  const bool f64 = double_precision(c);
  nn::Checkpoint ck;
  try {
    if (instance)
      ck = f64 ? segment::finetune_instance<double>(init, items, cfg, hooks)
               : segment::finetune_instance<float>(init, items, cfg, hooks);
    else
      ck = f64 ? segment::finetune_semantic<double>(init, items, cfg, hooks)
               : segment::finetune_semantic<float>(init, items, cfg, hooks);
  } catch (...) {
    write_text_file(out / (stage + "_log.csv"), log);
    throw;
  }
  write_text_file(out / (stage + "_log.csv"), log);
  if (instance) write_text_file(out / "centroids.csv", centroids);
  nn::save_checkpoint(ck, out / (stage + ".ckpt"));
}

template <typename S>
void infer_all(const nn::Checkpoint& ck, const std::vector<PointCloud>& clouds, const segment::ClusterConfig& cc,
               const fs::path& out) {
  const auto model = nn::model_from_checkpoint<S>(ck);
  for (const auto& cloud : clouds) {
    const auto r = segment::infer(model, cloud, cc);
    save_cloud(segment::labeled_prediction(cloud, r), out / (cloud.source_id + ".xyzl"));
    if (r.has_instances())
      save_instances(r.instances, out / (cloud.source_id + ".instances.json"), out / (cloud.source_id + ".instances.bin"));
  }
}

/// Labels every input point; instance models also write ranked instances.
inline void run_infer(const RunConfig& c, const fs::path& out) {
  if (c.str("io.checkpoint").empty()) throw ConfigError("io.checkpoint is required");
  const auto ck = nn::load_checkpoint(c.str("io.checkpoint"));
  const auto clouds = load_inputs(c);
  const auto cc = cluster_config(c);
  if (ck.dtype == nn::DType::kFloat64)
    infer_all<double>(ck, clouds, cc, out);
  else
    infer_all<float>(ck, clouds, cc, out);
}

/// Leaf instances implied by a labeled cloud, ranked by id, score 1.
inline std::vector<InstancePrediction> instances_from_labels(const PointCloud& cloud) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.semantic_at(i) == label::kLeaf && cloud.instance_at(i) >= 0) groups[cloud.instance_at(i)].push_back(i);
  std::vector<InstancePrediction> out;
  for (auto& [id, idx] : groups) {
    InstancePrediction p;
    p.indices = std::move(idx);
    p.semantic_class = label::kLeaf;
    p.score = 1.0;
    out.push_back(std::move(p));
  }
  return out;
}

/// Semantic metrics pooled over all points, and leaf-instance AP ranked
/// across clouds. Predictions pair with ground truth by cloud id.
inline nlohmann::json evaluate(const std::vector<PointCloud>& preds, const std::vector<PointCloud>& gts,
                               int num_classes, const fs::path& instances_dir, bool eleven_point) {
  std::map<std::string, const PointCloud*> by_id;
  for (const auto& p : preds) by_id[p.source_id] = &p;
  std::vector<int> pred_sem, gt_sem;
  std::vector<std::vector<InstancePrediction>> inst_preds;
  std::vector<std::vector<int>> gt_inst, gt_sem_each;
  nlohmann::json ids = nlohmann::json::array();
  bool any_instances = false;
  for (const auto& g : gts) {
    auto it = by_id.find(g.source_id);
    if (it == by_id.end()) throw DataError("no prediction for cloud " + g.source_id);
    const PointCloud& p = *it->second;
    if (!g.has_semantic()) throw DataError(g.source_id + ": ground truth has no labels");
    if (!p.has_semantic()) throw DataError(p.source_id + ": prediction has no labels");
    if (p.size() != g.size())
      throw DataError(g.source_id + ": prediction has " + std::to_string(p.size()) + " points, ground truth " +
                      std::to_string(g.size()));
    ids.push_back(g.source_id);
    pred_sem.insert(pred_sem.end(), p.semantic->begin(), p.semantic->end());
    gt_sem.insert(gt_sem.end(), g.semantic->begin(), g.semantic->end());
    if (!g.has_instance()) continue;
    any_instances = true;
    std::vector<InstancePrediction> ip;
    const fs::path ipath = instances_dir.empty() ? fs::path() : instances_dir / (g.source_id + ".instances.json");
    if (!ipath.empty() && fs::exists(ipath)) {
      for (auto& x : load_instances(ipath))
        if (x.semantic_class == label::kLeaf) ip.push_back(std::move(x));
    } else {
      ip = instances_from_labels(p);
    }
    std::vector<int> gi(g.size(), label::kUnlabeled);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g.semantic_at(i) == label::kLeaf) gi[i] = g.instance_at(i);
    inst_preds.push_back(std::move(ip));
    gt_inst.push_back(std::move(gi));
    gt_sem_each.push_back(*g.semantic);
  }
  for (const auto& p : preds)
    if (std::find(ids.begin(), ids.end(), p.source_id) == ids.end())
      throw DataError("prediction " + p.source_id + " has no ground truth");
  std::vector<int> classes;
  for (int k = 0; k < num_classes; ++k) classes.push_back(k);
  nlohmann::json rep;
  rep["clouds"] = ids;
  rep["semantic"] = metrics::to_json(metrics::semantic_metrics(pred_sem, gt_sem, classes));
  if (any_instances) {
    std::vector<metrics::InstanceEvalItem> items;
    for (std::size_t k = 0; k < inst_preds.size(); ++k) items.push_back({&inst_preds[k], gt_inst[k], gt_sem_each[k]});
    rep["instance"] = metrics::to_json(metrics::instance_ap(items, {}, eleven_point));
  } else {
    rep["instance"] = nullptr;
  }
  return rep;
}

inline void run_evaluate(const RunConfig& c, const fs::path& out) {
  const auto preds = load_inputs(c, "io.pred");
  const auto gts = load_inputs(c, "io.gt");
  const auto rep = evaluate(preds, gts, static_cast<int>(c.integer("model.num_classes")), c.str("io.instances_dir"),
                            c.flag("metrics.eleven_point"));
  write_json(out / "report.json", rep);
}

/// Agreement between measured and reference traits, matched on
/// (cloud_id, trait, organ_id).
inline nlohmann::json compare_traits(const std::vector<traits::TraitRow>& measured,
                                     const std::vector<traits::TraitRow>& truth) {
  std::map<std::tuple<std::string, std::string, std::string>, double> ref;
  for (const auto& r : truth) ref[{r.cloud_id, r.trait, r.organ_id}] = r.value_mm;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_trait;
  std::size_t unmatched = 0;
  for (const auto& m : measured) {
    auto it = ref.find({m.cloud_id, m.trait, m.organ_id});
    if (it == ref.end()) {
      ++unmatched;
      continue;
    }
    by_trait[m.trait].first.push_back(it->second);
    by_trait[m.trait].second.push_back(m.value_mm);
  }
  nlohmann::json j;
  j["unmatched"] = unmatched;
  j["traits"] = nlohmann::json::object();
  for (const auto& [trait, tp] : by_trait) {
    const auto& [t, p] = tp;
    double worst = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double e = std::abs(p[i] - t[i]) / std::abs(t[i]);
      worst = std::max(worst, e);
      sum += e;
    }
    nlohmann::json e = {{"n", t.size()},
                        {"rmse_mm", metrics::rmse(t, p)},
                        {"mean_rel_error", sum / static_cast<double>(t.size())},
                        {"max_rel_error", worst}};
    try {
      e["r2"] = metrics::r2(t, p);
    } catch (const DataError&) {
      e["r2"] = nullptr;
    }
    j["traits"][trait] = e;
  }
  return j;
}

inline void run_traits(const RunConfig& c, const fs::path& out) {
  const auto clouds = load_inputs(c);
  const auto opt = trait_options(c);
  std::string csv = traits::csv_header();
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& cl : clouds) {
    const auto r = traits::extract_traits(cl, c.str("traits.source"), opt);
    for (const auto& w : r.warnings) std::cerr << "warning: " << cl.source_id << ": " << w << '\n';
    csv += traits::to_csv(r);
    reports.push_back(traits::to_json(r));
  }
  write_text_file(out / "traits.csv", csv);
  write_json(out / "traits.json", reports);
  if (!c.str("io.truth").empty()) {
    const auto& tp = c.str("io.truth");
    write_json(out / "traits_eval.json",
               compare_traits(traits::parse_trait_csv(csv, "traits.csv"), traits::parse_trait_csv(detail::slurp(tp), tp)));
  }
}

inline std::string run_describe(const RunConfig& c) {
  if (c.str("io.checkpoint").empty()) throw ConfigError("io.checkpoint is required");
  return nn::describe(nn::load_checkpoint(c.str("io.checkpoint")));
}

/// Runs a batch subcommand (everything except `serve`). Returns text meant
/// for standard output. Only describe-checkpoint may run without `out`.
inline std::string run(RunConfig cfg, const std::string& command, const fs::path& out) {
  if (std::find(commands().begin(), commands().end(), command) == commands().end() || command == "serve")
    throw ConfigError("unknown batch command '" + command + "'");
  if (command == "describe-checkpoint" && out.empty()) return run_describe(cfg);
  if (out.empty()) throw ConfigError("an output directory is required");
  freeze(cfg, command, out);
  if (command == "synth") run_synth(cfg, out);
  else if (command == "weaklabel") run_weaklabel(cfg, out);
  else if (command == "pretrain") run_pretrain(cfg, out);
  else if (command == "finetune-sem") run_finetune(cfg, out, false);
  else if (command == "finetune-inst") run_finetune(cfg, out, true);
  else if (command == "infer") run_infer(cfg, out);
  else if (command == "evaluate") run_evaluate(cfg, out);
  else if (command == "traits") run_traits(cfg, out);
  else if (command == "describe-checkpoint") {
    auto text = run_describe(cfg);
    write_text_file(out / "checkpoint.txt", text);
    return text;
  }
  return {};
}

}  // namespace e3dp::pipeline
