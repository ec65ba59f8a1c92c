// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exits nonzero if any criterion fails.
//
//   acceptance            all criteria
//   acceptance AC3 AC9    a subset

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "e3dp/cluster.hpp"
#include "e3dp/metrics.hpp"
#include "e3dp/pipeline.hpp"
#include "e3dp/synth.hpp"
#include "e3dp/traits.hpp"
#include "fuzz.hpp"
#include "gradsuite.hpp"
#include "oracles.hpp"

using namespace e3dp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[2048];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const fs::path& work() {
  static const fs::path dir = fs::absolute("acceptance_work");
  return dir;
}

fs::path fresh_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<bool> to_vec(std::span<const bool> m) { return {m.begin(), m.end()}; }

// --- AC1 ----------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0, excluded = 0, runs = 0;
  bool empty_case = false;
  for (const auto& c : gradsuite::cases())
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto r = c.run(seed);
      ++runs;
      checked += r.checked;
      excluded += r.excluded;
      if (r.checked == 0) empty_case = true;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        where = c.name + " seed " + std::to_string(seed) + " " + r.worst;
      }
    }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0 && !empty_case,
          fmt("%zu cases x 20 seeds, %zu coordinates (%zu on kinks skipped), max rel err %.2e at %s (< 1e-4); %.1f s "
              "(< 120 s)",
              gradsuite::cases().size(), checked, excluded, worst, where.c_str(), secs)};
}

// --- AC2 ----------------------------------------------------------------------

Outcome loss_anchors() {
  bool ok = true;
  std::string notes;
  for (Eigen::Index d = 1; d <= 64; d *= 2) {
    vib::CrossCorrelation c;
    c.Z = Eigen::MatrixXd::Identity(d, d);
    if (vib::vib_loss(c) != 0.0) ok = false, notes += fmt(" identity(%d)!=0", (int)d);
    c.Z = Eigen::MatrixXd::Zero(d, d);
    if (vib::vib_loss(c) != static_cast<double>(d)) ok = false, notes += fmt(" zero(%d)!=D", (int)d);
  }
  vib::CrossCorrelation ex;
  ex.Z = Eigen::MatrixXd(2, 2);
  ex.Z << 0.9, 0.1, 0.2, 0.8;
  ex.lambda = 0.005;
  const double worked = vib::vib_loss(ex);
  if (std::abs(worked - 0.05025) > 1e-12) ok = false;

  Rng rng(2024);
  double lo = 1.0, hi = -1.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t m = 1 + rng.below(8);
    std::vector<Vec3> o, p, c;
    const std::unique_ptr<bool[]> mask(new bool[m]);
    for (std::size_t i = 0; i < m; ++i) {
      const double s = std::pow(10.0, rng.uniform(-3, 3));
      o.emplace_back(s * rng.normal(), s * rng.normal(), s * rng.normal());
      p.emplace_back(rng.normal(), rng.normal(), rng.normal());
      c.emplace_back(rng.normal(), rng.normal(), rng.normal());
      mask[i] = i == 0 || rng.bernoulli(0.5);
    }
    const auto [reg, dir] = segment::offset_losses(o, p, c, std::span<const bool>(mask.get(), m));
    lo = std::min(lo, dir);
    hi = std::max(hi, dir);
    if (!(reg >= 0.0)) ok = false;
  }
  if (lo < -1.0 || hi > 1.0) ok = false;
  return {ok, fmt("vib(I)=0 and vib(0)=D for D=1..64; worked example %.15f (0.05025 +- 1e-12); L_dir over 10^4 "
                  "inputs in [%.6f, %.6f] (within [-1, 1])%s",
                  worked, lo, hi, notes.c_str())};
}

// --- AC3 ----------------------------------------------------------------------

Outcome oracle_equivalence() {
  constexpr int kInstances = 500;
  Rng rng(303);
  int radius_bad = 0, cluster_bad = 0, fps_bad = 0, ap_bad = 0, ap_defined = 0;
  for (int trial = 0; trial < kInstances; ++trial) {
    const auto pts = fuzz::blobs(rng, 1 + rng.below(200));
    const SpatialIndex index(pts);
    const Vec3 q = rng.bernoulli(0.5) ? pts[rng.below(pts.size())]
                                      : Vec3(rng.uniform(-5, 45), rng.uniform(-5, 45), rng.uniform(-5, 45));
    const double r = rng.uniform(0.1, 12.0);
    if (index.radius_neighbors(q, r) != oracle::radius_scan(pts, q, r)) ++radius_bad;
  }
  for (int trial = 0; trial < kInstances; ++trial) {
    const auto pts = fuzz::blobs(rng, 1 + rng.below(200));
    const std::unique_ptr<bool[]> mask(new bool[pts.size()]);
    const double keep = rng.uniform(0.3, 1.0);
    for (std::size_t i = 0; i < pts.size(); ++i) mask[i] = rng.uniform() < keep;
    const std::span<const bool> m(mask.get(), pts.size());
    const double r = rng.uniform(0.2, 4.0);
    const std::size_t min_size = 1 + rng.below(6);
    if (ball_cluster(pts, m, r, min_size) != oracle::components(pts, to_vec(m), r, min_size)) ++cluster_bad;
  }
  for (int trial = 0; trial < kInstances; ++trial) {
    const auto pts = fuzz::blobs(rng, 1 + rng.below(200));
    const std::size_t h = 1 + rng.below(pts.size());
    const std::size_t start = rng.below(pts.size());
    if (farthest_point_sample(pts, h, start) != oracle::fps(pts, h, start)) ++fps_bad;
  }
  double worst_area = 0.0;
  for (int trial = 0; ap_defined < kInstances; ++trial) {
    const auto c = fuzz::ap_case(rng);
    const auto gts = fuzz::gt_masks(c);
    const auto rep = metrics::instance_ap(c.preds, c.gt_instance);
    if (gts.empty()) {
      if (rep.defined()) ++ap_bad;
      continue;
    }
    ++ap_defined;
    const auto ranked = fuzz::ranked_masks(c);
    bool bad = false;
    for (const auto& curve : rep.curves) {
      const auto o = oracle::APOracle::run(ranked, gts, curve.threshold);
      bad |= curve.precision != o.precision || curve.recall != o.recall;
      worst_area = std::max(worst_area, std::abs(curve.ap - o.ap));
    }
    worst_area = std::max({worst_area, std::abs(*rep.ap50 - oracle::APOracle::run(ranked, gts, 0.5).ap),
                           std::abs(*rep.ap25 - oracle::APOracle::run(ranked, gts, 0.25).ap)});
    if (bad) ++ap_bad;
  }
  const bool ok = radius_bad == 0 && cluster_bad == 0 && fps_bad == 0 && ap_bad == 0 && worst_area <= 1e-12;
  return {ok, fmt("mismatches over %d instances each (M <= 200, <= 5 instances): radius_neighbors %d, ball_cluster %d, "
                  "FPS %d, instance_ap PR curves %d; max AP area difference %.1e (<= 1e-12)",
                  kInstances, radius_bad, cluster_bad, fps_bad, ap_bad, worst_area)};
}

// --- AC4 ----------------------------------------------------------------------

InstancePrediction pred(std::vector<std::size_t> idx, double score) {
  InstancePrediction p;
  p.indices = std::move(idx);
  p.score = score;
  return p;
}

Outcome metric_anchors() {
  std::vector<std::string> failed;
  auto check = [&](bool cond, const std::string& what) {
    if (!cond) failed.push_back(what);
  };
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  const std::vector<int> classes{label::kStem, label::kLeaf};

  const std::vector<int> same{0, 1, 1, 0, 1};
  const auto perfect = metrics::semantic_metrics(same, same, classes);
  for (const auto& c : perfect.classes)
    check(c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0 && c.iou == 1.0, "pred=gt per-class 1.0");
  check(perfect.miou == 1.0, "pred=gt mIoU");

  const auto stem = metrics::semantic_metrics(std::vector<int>{0, 0, 0, 0}, std::vector<int>{0, 0, 0, 1}, classes);
  check(near(stem.classes[0].precision, 0.75) && near(stem.classes[0].recall, 1.0) &&
            near(stem.classes[0].f1, 6.0 / 7.0) && near(stem.classes[0].iou, 0.75) && near(stem.classes[1].iou, 0.0),
        "all-stem example");

  Rng rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> gt(50), pr(50);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt[i] = static_cast<int>(rng.below(2));
      pr[i] = rng.uniform() < 0.7 ? gt[i] : 1 - gt[i];
    }
    auto swap = [](std::vector<int> v) {
      for (int& x : v) x = 1 - x;
      return v;
    };
    const auto a = metrics::semantic_metrics(pr, gt, classes);
    const auto b = metrics::semantic_metrics(swap(pr), swap(gt), classes);
    check(near(a.miou, b.miou) && a.classes[0].iou == b.classes[1].iou, "class swap");
    for (const auto& c : a.classes) {
      if (c.precision + c.recall > 0) check(near(c.f1, 2 * c.precision * c.recall / (c.precision + c.recall)), "F1=2PR/(P+R)");
      check(c.iou <= std::min(c.precision, c.recall) + 1e-15, "IoU <= min(P,R)");
    }
  }

  const std::vector<int> gt{0, 0, 0, -1};
  const auto exact = metrics::instance_ap({pred({0, 1, 2}, 0.9)}, gt);
  check(*exact.ap == 1.0 && *exact.ap50 == 1.0 && *exact.ap25 == 1.0, "exact instance AP");
  const auto half = metrics::instance_ap({pred({1, 2, 3}, 0.9)}, gt);
  check(*half.ap50 == 1.0 && *half.ap25 == 1.0 && near(*half.ap, 0.1), "IoU 0.5 instance AP");
  const auto dup = metrics::instance_ap({pred({0, 1, 2}, 0.9), pred({0, 1, 2}, 0.8)}, gt);
  bool dup_ok = true;
  for (const auto& c : dup.curves)
    dup_ok &= c.precision == std::vector<double>{1.0, 0.5} && c.recall == std::vector<double>{1.0, 1.0};
  check(dup_ok, "duplicate prediction is a false positive");

  const double t3[] = {1, 2, 3}, p3[] = {1, 2, 4}, m3[] = {2, 2, 2};
  check(near(metrics::rmse(t3, p3), std::sqrt(1.0 / 3.0)) && near(metrics::r2(t3, p3), 0.5), "R2/RMSE example");
  check(metrics::r2(t3, t3) == 1.0 && metrics::rmse(t3, t3) == 0.0 && metrics::r2(t3, m3) == 0.0, "R2 trivial cases");

  constexpr int kFuzz = 5000;
  int not_monotone = 0, defined = 0;
  for (int trial = 0; trial < kFuzz; ++trial) {
    const auto c = fuzz::ap_case(rng);
    const auto rep = metrics::instance_ap(c.preds, c.gt_instance);
    defined += rep.defined();
    if (!rep.monotone()) ++not_monotone;
  }
  check(not_monotone == 0, "monotonicity");
  std::string what;
  for (const auto& f : failed) what += (what.empty() ? "" : ", ") + f;
  return {failed.empty(), fmt("semantic, AP and R2/RMSE anchors to 1e-12%s%s; AP@25 >= AP@50 >= AP violated on %d of "
                              "%d fuzzed reports",
                              failed.empty() ? "" : "; failed: ", what.c_str(), not_monotone, defined)};
}

// --- AC5 ----------------------------------------------------------------------

struct TraitTally {
  double worst_stem = 0, worst_length = 0, worst_width = 0;
  std::vector<double> t_stem, p_stem, t_len, p_len, t_wid, p_wid;
  int missing = 0;

  void add(const synth::Plant& plant, const traits::TraitReport& rep) {
    if (!rep.stem_diameter) {
      ++missing;
    } else {
      t_stem.push_back(plant.truth.stem_diameter);
      p_stem.push_back(*rep.stem_diameter);
      worst_stem = std::max(worst_stem, std::abs(*rep.stem_diameter / plant.truth.stem_diameter - 1));
    }
    for (const auto& lt : plant.truth.leaves) {
      const auto it = std::find_if(rep.leaves.begin(), rep.leaves.end(),
                                   [&](const traits::LeafTraits& l) { return l.instance == lt.instance; });
      if (it == rep.leaves.end()) {
        ++missing;
        continue;
      }
      t_len.push_back(lt.length);
      p_len.push_back(it->length.value);
      t_wid.push_back(lt.width);
      p_wid.push_back(it->width.value);
      worst_length = std::max(worst_length, std::abs(it->length.value / lt.length - 1));
      worst_width = std::max(worst_width, std::abs(it->width.value / lt.width - 1));
    }
  }
  double min_r2() const {
    return std::min({metrics::r2(t_stem, p_stem), metrics::r2(t_len, p_len), metrics::r2(t_wid, p_wid)});
  }
};

Outcome trait_recovery() {
  constexpr int kPlants = 50;
  TraitTally clean, rough;
  synth::RandomPlantOptions noisy;
  noisy.noise_sigma = 0.3;
  noisy.holes.count = 2;
  noisy.holes.radius = 1.5;
  for (int s = 1; s <= kPlants; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    const auto a = synth::generate_plant(synth::random_plant_spec(seed));
    clean.add(a, traits::extract_traits(a.cloud, "ground-truth"));
    const auto b = synth::generate_plant(synth::random_plant_spec(seed, noisy));
    rough.add(b, traits::extract_traits(b.cloud, "ground-truth"));
  }
  const double r2_clean = clean.min_r2(), r2_rough = rough.min_r2();
  const bool ok = clean.missing == 0 && rough.missing == 0 && clean.worst_stem < 0.01 && clean.worst_length < 0.03 &&
                  clean.worst_width < 0.03 && rough.worst_stem < 0.10 && rough.worst_length < 0.10 &&
                  rough.worst_width < 0.10 && r2_clean >= 0.95 && r2_rough >= 0.95;
  return {ok, fmt("%d plants, %zu leaves. noiseless worst rel err: stem %.2f%% (< 1%%), length %.2f%%, width %.2f%% "
                  "(< 3%%); 2 holes/leaf r=1.5 mm + 0.3 mm noise: stem %.2f%%, length %.2f%%, width %.2f%% (< 10%%); "
                  "min R2 over traits %.4f / %.4f (>= 0.95); unmeasured organs %d",
                  kPlants, clean.t_len.size(), 100 * clean.worst_stem, 100 * clean.worst_length,
                  100 * clean.worst_width, 100 * rough.worst_stem, 100 * rough.worst_length, 100 * rough.worst_width,
                  r2_clean, r2_rough, clean.missing + rough.missing)};
}

// --- AC6-AC8: desk-scale runs ---------------------------------------------------

RunConfig with(std::initializer_list<std::pair<const char*, std::string>> kv) {
  RunConfig c;
  for (const auto& [k, v] : kv) c.set(k, v);
  return c;
}

json read_json(const fs::path& p) { return json::parse(detail::slurp(p)); }

/// The desk-scale data set and pretrained backbone, shared by AC6-AC8.
struct DeskRun {
  fs::path synth, pre;
  double synth_s = 0, pretrain_s = 0;
  fs::path manifest() const { return synth / "manifest.json"; }
  fs::path checkpoint() const { return pre / "pretrain.ckpt"; }
};

const DeskRun& desk() {
  static const DeskRun run = [] {
    DeskRun r;
    r.synth = fresh_dir(work() / "desk" / "synth");
    r.pre = fresh_dir(work() / "desk" / "pretrain");
    auto t0 = Clock::now();
    pipeline::run(RunConfig(), "synth", r.synth);
    r.synth_s = seconds_since(t0);
    std::cerr << "  synth " << r.synth_s << " s\n";
    t0 = Clock::now();
    pipeline::run(with({{"io.inputs", r.manifest().string()}}), "pretrain", r.pre);
    r.pretrain_s = seconds_since(t0);
    std::cerr << "  pretrain " << r.pretrain_s << " s\n";
    return r;
  }();
  return run;
}

/// Fine-tune, infer the holdout, evaluate. Returns the report.
json finetune_and_score(const fs::path& dir, const std::string& command, RunConfig ft, bool instances) {
  const auto& d = desk();
  fresh_dir(dir);
  ft.set("io.inputs", d.manifest().string());
  pipeline::run(ft, command, dir / "finetune");
  const std::string ck = command == "finetune-sem" ? "finetune_sem.ckpt" : "finetune_inst.ckpt";
  pipeline::run(with({{"io.inputs", d.manifest().string()}, {"io.split", "val"}, {"io.checkpoint", (dir / "finetune" / ck).string()}}),
                "infer", dir / "infer");
  auto ev = with({{"io.pred", (dir / "infer").string()}, {"io.gt", d.manifest().string()}, {"io.split", "val"}});
  if (instances) ev.set("io.instances_dir", (dir / "infer").string());
  pipeline::run(ev, "evaluate", dir / "evaluate");
  return read_json(dir / "evaluate" / "report.json");
}

Outcome desk_scale_semantic() {
  const auto& d = desk();
  const auto t1 = Clock::now();
  const auto rep = finetune_and_score(work() / "desk" / "semantic", "finetune-sem",
                                      with({{"io.checkpoint", d.checkpoint().string()}}), false);
  const double ft_s = seconds_since(t1);
  const double total = d.synth_s + d.pretrain_s + ft_s;
  const double miou = rep["semantic"]["mean"]["miou"].get<double>();
  std::size_t points = 0, clouds = 0;
  for (const auto& e : fs::directory_iterator(d.synth))
    if (e.path().extension() == ".xyzl") points += load_cloud(e.path()).size(), ++clouds;
  return {miou >= 85.0 && total < 1800.0 && clouds == 30,
          fmt("%zu plants (%.0f points each on average); pretrain 1000 it, fine-tune k=100 1000 it; holdout (10 "
              "plants) mIoU %.1f (>= 85.0); synth %.0f s + pretrain %.0f s + fine-tune/infer/evaluate %.0f s = %.0f s "
              "(< 1800 s)",
              clouds, static_cast<double>(points) / static_cast<double>(std::max<std::size_t>(clouds, 1)), miou,
              d.synth_s, d.pretrain_s, ft_s, total)};
}

Outcome pretraining_benefit() {
  const auto& d = desk();
  constexpr int kSeeds = 5;
  constexpr int kIterations = 200;
  std::map<int, std::vector<double>> gaps;
  std::string per;
  for (int k : {50, 200}) {
    for (int seed = 1; seed <= kSeeds; ++seed) {
      double score[2];
      for (int mode = 0; mode < 2; ++mode) {
        auto ft = with({{"weak.k", std::to_string(k)},
                        {"seed", std::to_string(seed)},
                        {"finetune.iterations", std::to_string(kIterations)}});
        if (mode == 0) ft.set("io.checkpoint", d.checkpoint().string());
        else ft.set("finetune.baseline", "true");
        const auto dir = work() / "benefit" / fmt("k%d_seed%d_%s", k, seed, mode == 0 ? "pretrained" : "random");
        score[mode] = finetune_and_score(dir, "finetune-sem", ft, false)["semantic"]["mean"]["miou"].get<double>();
      }
      gaps[k].push_back(score[0] - score[1]);
      per += fmt(" k=%d/s%d %.1f-%.1f;", k, seed, score[0], score[1]);
      std::cerr << "  k=" << k << " seed " << seed << " pretrained " << score[0] << " random " << score[1] << '\n';
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double g50 = mean(gaps[50]), g200 = mean(gaps[200]);
  return {g50 > 0.0 && g50 >= g200,
          fmt("mean paired mIoU gap (pretrained - random) over %d seeds, %d fine-tune it: k=50 %+.2f (> 0), k=200 %+.2f "
              "(gap(50) >= gap(200)); pretrained-random per run:%s",
              kSeeds, kIterations, g50, g200, per.c_str())};
}

Outcome instance_pipeline() {
  const auto& d = desk();
  const auto rep = finetune_and_score(work() / "desk" / "instance", "finetune-inst",
                                      with({{"io.checkpoint", d.checkpoint().string()}}), true);
  const auto ap50 = rep["instance"]["ap50"];
  const double learned = ap50.is_null() ? 0.0 : ap50.get<double>();

  // Oracle offsets o = c - p on the holdout ground truth.
  const auto gts = pipeline::load_clouds(pipeline::resolve_clouds({d.manifest().string()}, "val"), true);
  std::vector<std::vector<InstancePrediction>> preds;
  std::vector<std::vector<int>> gt_inst;
  std::size_t leaves = 0;
  for (const auto& g : gts) {
    std::map<int, Vec3> sum;
    std::map<int, double> count;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g.semantic_at(i) == label::kLeaf) sum[g.instance_at(i)] += g.coords[i], count[g.instance_at(i)] += 1;
    leaves += sum.size();
    std::vector<Vec3> offsets(g.size(), Vec3::Zero());
    std::vector<double> prob(g.size(), 0.0);
    std::vector<int> gi(g.size(), label::kUnlabeled);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g.semantic_at(i) == label::kLeaf) {
        const int id = g.instance_at(i);
        offsets[i] = sum[id] / count[id] - g.coords[i];
        prob[i] = 1.0;
        gi[i] = id;
      }
    preds.push_back(segment::cluster_instances(g, *g.semantic, offsets, prob, {}));
    gt_inst.push_back(std::move(gi));
  }
  std::vector<metrics::InstanceEvalItem> items;
  for (std::size_t k = 0; k < gts.size(); ++k) items.push_back({&preds[k], gt_inst[k], *gts[k].semantic});
  const auto perfect = metrics::instance_ap(items);
  const double perfect50 = perfect.defined() ? *perfect.ap50 : 0.0;
  return {learned >= 70.0 && perfect50 == 1.0,
          fmt("holdout leaf-instance AP@50 after fine-tune k=100 1000 it: %.1f (>= 70.0), AP %.1f, AP@25 %.1f; oracle "
              "offsets on %zu leaves: AP@50 = %.17g (== 1 exactly)",
              learned, rep["instance"]["ap"].is_null() ? 0.0 : rep["instance"]["ap"].get<double>(),
              rep["instance"]["ap25"].is_null() ? 0.0 : rep["instance"]["ap25"].get<double>(), leaves, perfect50)};
}

// --- AC9 ----------------------------------------------------------------------

int cli(const std::string& args) {
  const std::string cmd = std::string(E3DP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<fs::path, std::string> tree(const fs::path& root) {
  std::map<fs::path, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root)] = detail::slurp(e.path());
  return out;
}

Outcome replay() {
  const auto a = fresh_dir(work() / "replay" / "first"), b = fresh_dir(work() / "replay" / "second");
  const std::string manifest = (a / "synth" / "manifest.json").string();
  const std::string small = " --set model.hidden=16 --set model.output=16 --set model.blocks=2";
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"synth", "--set synth.count=3 --set synth.holdout=1 --set synth.density=1.0"},
      {"weaklabel", "-i " + manifest + " --set weak.k=30"},
      {"pretrain", "-i " + manifest + " --set pretrain.iterations=10 --set pretrain.samples=128" + small},
      {"finetune-sem", "-i " + manifest + " --checkpoint " + (a / "pretrain" / "pretrain.ckpt").string() +
                           " --set finetune.iterations=10 --set weak.k=50"},
      {"finetune-inst", "-i " + manifest + " --checkpoint " + (a / "pretrain" / "pretrain.ckpt").string() +
                            " --set finetune.iterations=10 --set weak.k=50"},
      {"infer", "-i " + manifest + " --set io.split=val --checkpoint " +
                    (a / "finetune-inst" / "finetune_inst.ckpt").string() + " --set cluster.min_size=5"},
      {"evaluate", "--pred " + (a / "infer").string() + " --gt " + manifest + " --set io.split=val --instances-dir " +
                       (a / "infer").string()},
      {"traits", "-i " + manifest + " --set traits.source=ground-truth --truth " + (a / "synth" / "truth.csv").string()},
      {"describe-checkpoint", "--checkpoint " + (a / "finetune-inst" / "finetune_inst.ckpt").string()},
  };
  std::vector<std::string> failed;
  std::size_t files = 0;
  for (const auto& [cmd, args] : runs) {
    if (cli(cmd + " -o " + (a / cmd).string() + " " + args) != 0) {
      failed.push_back(cmd + " (first run failed)");
      continue;
    }
    if (cli(cmd + " -c " + (a / cmd / "run.cfg").string() + " -o " + (b / cmd).string()) != 0) {
      failed.push_back(cmd + " (replay failed)");
      continue;
    }
    const auto ta = tree(a / cmd), tb = tree(b / cmd);
    files += ta.size();
    if (ta != tb) failed.push_back(cmd);
  }
  std::string what;
  for (const auto& f : failed) what += (what.empty() ? "" : ", ") + f;
  return {failed.empty(), fmt("%zu subcommands replayed from their frozen run.cfg, %zu output files compared "
                              "byte-for-byte%s%s",
                              runs.size(), files, failed.empty() ? "; all identical" : "; differing: ", what.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1", gradient_suite},      {"AC2", loss_anchors},        {"AC3", oracle_equivalence},
      {"AC4", metric_anchors},      {"AC5", trait_recovery},      {"AC6", desk_scale_semantic},
      {"AC7", pretraining_benefit}, {"AC8", instance_pipeline},   {"AC9", replay},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  fs::create_directories(work());
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    std::cerr << name << " ...\n";
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
