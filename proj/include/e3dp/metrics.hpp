#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "e3dp/cloud.hpp"
#include "e3dp/cluster.hpp"
#include "e3dp/error.hpp"

namespace e3dp::metrics {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  bool empty() const noexcept { return tp + fp + fn == 0; }
};

struct ClassScores {
  int cls = 0;
  std::string name;
  ConfusionCounts counts;
  double precision = 0, recall = 0, f1 = 0, iou = 0;
  bool present = true;  // false when TP+FP+FN = 0; excluded from means
};

struct SemanticReport {
  std::vector<ClassScores> classes;
  double mean_precision = 0, mean_recall = 0, mean_f1 = 0, miou = 0;
  std::size_t evaluated_points = 0;
  std::vector<std::string> notes;
};

inline std::string class_name(int c) {
  switch (c) {
    case label::kStem: return "stem";
    case label::kLeaf: return "leaf";
    case label::kSoil: return "soil";
    default: return "class_" + std::to_string(c);
  }
}

namespace detail {
inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

/// Per-class precision, recall, F1 and IoU from point labels. GT points
/// labeled -1 are skipped.
inline SemanticReport semantic_metrics(std::span<const int> pred, std::span<const int> gt,
                                       const std::vector<int>& classes) {
  if (pred.size() != gt.size())
    throw DataError("prediction has " + std::to_string(pred.size()) + " labels, ground truth " +
                    std::to_string(gt.size()));
  if (classes.empty()) throw DataError("no classes to evaluate");
  std::map<int, std::size_t> slot;
  SemanticReport rep;
  for (int c : classes) {
    if (!slot.emplace(c, rep.classes.size()).second) throw DataError("duplicate class " + std::to_string(c));
    rep.classes.push_back({c, class_name(c), {}, 0, 0, 0, 0, true});
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == label::kUnlabeled) continue;
    auto g = slot.find(gt[i]);
    if (g == slot.end()) throw DataError("ground-truth label " + std::to_string(gt[i]) + " is not an evaluated class");
    ++rep.evaluated_points;
    if (pred[i] == gt[i]) {
      ++rep.classes[g->second].counts.tp;
      continue;
    }
    ++rep.classes[g->second].counts.fn;
    if (auto p = slot.find(pred[i]); p != slot.end()) ++rep.classes[p->second].counts.fp;
  }
  std::size_t present = 0;
  for (auto& c : rep.classes) {
    const auto& k = c.counts;
    c.precision = detail::ratio(k.tp, k.tp + k.fp);
    c.recall = detail::ratio(k.tp, k.tp + k.fn);
    c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    c.iou = detail::ratio(k.tp, k.tp + k.fp + k.fn);
    c.present = !k.empty();
    if (!c.present) {
      rep.notes.push_back(c.name + " absent from prediction and ground truth; excluded from means");
      continue;
    }
    ++present;
    rep.mean_precision += c.precision;
    rep.mean_recall += c.recall;
    rep.mean_f1 += c.f1;
    rep.miou += c.iou;
  }
  if (present > 0) {
    rep.mean_precision /= present;
    rep.mean_recall /= present;
    rep.mean_f1 /= present;
    rep.miou /= present;
  }
  return rep;
}

/// AP thresholds 0.50, 0.55, ..., 0.95.
inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50.0 + 5.0 * i) / 100.0);
  return t;
}

struct ThresholdCurve {
  double threshold = 0;
  std::vector<double> precision, recall;  // per ranked prediction
  double ap = 0;
};

struct APReport {
  std::optional<double> ap, ap50, ap25;  // empty when there are no GT instances
  std::vector<ThresholdCurve> curves;
  std::size_t num_gt = 0, num_pred = 0;
  bool eleven_point = false;

  bool defined() const noexcept { return ap.has_value(); }
  bool monotone() const noexcept { return !defined() || (*ap25 >= *ap50 && *ap50 >= *ap); }
};

/// Area under the precision-recall curve for ranked predictions. All-point
/// interpolation by default; the 11-point variant samples recall 0, 0.1, ..., 1.
inline double pr_area(const std::vector<double>& precision, const std::vector<double>& recall, bool eleven_point) {
  const std::size_t n = precision.size();
  std::vector<double> env(precision);
  for (std::size_t i = n; i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);
  if (eleven_point) {
    double s = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
      s += best;
    }
    return s / 11.0;
  }
  double area = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    area += (recall[i] - prev_r) * env[i];
    prev_r = recall[i];
  }
  return area;
}

/// Point-index sets of the GT instances, keyed by instance id.
inline std::map<int, std::vector<std::size_t>> gt_instances(std::span<const int> gt_instance) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < gt_instance.size(); ++i)
    if (gt_instance[i] >= 0) out[gt_instance[i]].push_back(i);
  return out;
}

/// One cloud's predictions and ground truth. `gt_semantic` (optional)
/// marks unlabeled points, whose membership is ignored.
struct InstanceEvalItem {
  const std::vector<InstancePrediction>* preds = nullptr;
  std::span<const int> gt_instance;
  std::span<const int> gt_semantic;
};

/// Greedy score-ordered matching: each prediction takes the unmatched GT
/// instance of its cloud with highest IoU when that IoU reaches the
/// threshold. Predictions from all clouds share one ranking.
inline APReport instance_ap(std::span<const InstanceEvalItem> items, std::vector<double> thresholds = {},
                            bool eleven_point = false) {
  APReport rep;
  rep.eleven_point = eleven_point;
  struct Ranked {
    double score;
    std::size_t cloud;
    std::vector<double> iou;  // against that cloud's GT instances
  };
  std::vector<Ranked> ranked;
  std::vector<std::size_t> gt_count(items.size());
  for (std::size_t c = 0; c < items.size(); ++c) {
    const auto& it = items[c];
    if (!it.gt_semantic.empty() && it.gt_semantic.size() != it.gt_instance.size())
      throw DataError("ground-truth semantic and instance label lengths differ");
    auto ignored = [&](std::size_t i) { return !it.gt_semantic.empty() && it.gt_semantic[i] == label::kUnlabeled; };
    std::vector<std::vector<std::size_t>> gts;
    for (auto& [id, pts] : gt_instances(it.gt_instance)) {
      std::vector<std::size_t> kept;
      for (std::size_t i : pts)
        if (!ignored(i)) kept.push_back(i);
      if (!kept.empty()) gts.push_back(std::move(kept));
    }
    gt_count[c] = gts.size();
    rep.num_gt += gts.size();
    if (!it.preds) continue;
    rep.num_pred += it.preds->size();
    for (const auto& pr : *it.preds) {
      std::vector<std::size_t> p;
      for (std::size_t i : pr.indices) {
        if (i >= it.gt_instance.size()) throw DataError("prediction index " + std::to_string(i) + " out of range");
        if (!ignored(i)) p.push_back(i);
      }
      std::sort(p.begin(), p.end());
      p.erase(std::unique(p.begin(), p.end()), p.end());
      Ranked r{pr.score, c, {}};
      for (const auto& g : gts) r.iou.push_back(set_iou(p, g));
      ranked.push_back(std::move(r));
    }
  }
  if (rep.num_gt == 0) return rep;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  auto evaluate = [&](double t) {
    ThresholdCurve curve;
    curve.threshold = t;
    std::vector<std::vector<bool>> taken(items.size());
    for (std::size_t c = 0; c < items.size(); ++c) taken[c].assign(gt_count[c], false);
    std::size_t tp = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto& pr = ranked[r];
      auto& tk = taken[pr.cloud];
      std::size_t best = SIZE_MAX;
      for (std::size_t g = 0; g < tk.size(); ++g)
        if (!tk[g] && (best == SIZE_MAX || pr.iou[g] > pr.iou[best])) best = g;
      if (best != SIZE_MAX && pr.iou[best] >= t) {
        tk[best] = true;
        ++tp;
      }
      curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
      curve.recall.push_back(static_cast<double>(tp) / static_cast<double>(rep.num_gt));
    }
    curve.ap = pr_area(curve.precision, curve.recall, eleven_point);
    return curve;
  };

  if (thresholds.empty()) thresholds = coco_thresholds();
  // Summed in long double so a mean of equal areas rounds back to that area
  // and never exceeds AP@50.
  long double sum = 0.0L;
  for (double t : thresholds) {
    rep.curves.push_back(evaluate(t));
    sum += rep.curves.back().ap;
  }
  rep.ap = static_cast<double>(sum / static_cast<long double>(thresholds.size()));
  rep.ap50 = evaluate(0.50).ap;
  rep.ap25 = evaluate(0.25).ap;
  return rep;
}

inline APReport instance_ap(const std::vector<InstancePrediction>& preds, std::span<const int> gt_instance,
                            std::span<const int> gt_semantic = {}, std::vector<double> thresholds = {},
                            bool eleven_point = false) {
  const InstanceEvalItem item{&preds, gt_instance, gt_semantic};
  return instance_ap(std::span<const InstanceEvalItem>(&item, 1), std::move(thresholds), eleven_point);
}

/// Coefficient of determination 1 - SSres/SStot.
inline double r2(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size()) throw DataError("r2 inputs differ in length");
  if (truth.size() < 2) throw DataError("r2 needs at least two values");
  double mean = 0.0;
  for (double v : truth) mean += v;
  mean /= static_cast<double>(truth.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0.0) throw DataError("r2 is undefined for constant truth values");
  return 1.0 - ss_res / ss_tot;
}

inline double rmse(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size()) throw DataError("rmse inputs differ in length");
  if (truth.empty()) throw DataError("rmse needs at least one value");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return std::sqrt(s / static_cast<double>(truth.size()));
}

/// x in [0,1] -> percent rounded to one decimal.
inline double pct(double x) { return std::round(x * 1000.0) / 10.0; }

inline nlohmann::json to_json(const SemanticReport& r) {
  nlohmann::json j;
  j["classes"] = nlohmann::json::array();
  for (const auto& c : r.classes) {
    j["classes"].push_back({{"class", c.cls},
                            {"name", c.name},
                            {"present", c.present},
                            {"tp", c.counts.tp},
                            {"fp", c.counts.fp},
                            {"fn", c.counts.fn},
                            {"precision", pct(c.precision)},
                            {"recall", pct(c.recall)},
                            {"f1", pct(c.f1)},
                            {"iou", pct(c.iou)}});
  }
  j["mean"] = {{"precision", pct(r.mean_precision)},
               {"recall", pct(r.mean_recall)},
               {"f1", pct(r.mean_f1)},
               {"miou", pct(r.miou)}};
  j["points"] = r.evaluated_points;
  j["notes"] = r.notes;
  return j;
}

inline nlohmann::json to_json(const APReport& r) {
  nlohmann::json j;
  j["gt_instances"] = r.num_gt;
  j["predictions"] = r.num_pred;
  j["interpolation"] = r.eleven_point ? "11-point" : "all-point";
  if (!r.defined()) {
    j["ap"] = nullptr;
    j["ap50"] = nullptr;
    j["ap25"] = nullptr;
    j["notes"] = {"no ground-truth instances; AP undefined"};
    return j;
  }
  j["ap"] = pct(*r.ap);
  j["ap50"] = pct(*r.ap50);
  j["ap25"] = pct(*r.ap25);
  return j;
}

}  // namespace e3dp::metrics
