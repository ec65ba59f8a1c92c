#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "e3dp/cloud.hpp"
#include "e3dp/error.hpp"
#include "e3dp/io.hpp"
#include "e3dp/spatial_index.hpp"
#include "e3dp/voxel.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>
#include <json.hpp>

namespace e3dp::service {

using nlohmann::json;

inline constexpr std::size_t kDecimationThreshold = 300000;
inline constexpr int kSchemaSize = 70;

/// One schema entry: "stem" then leaf_01 ... leaf_69 (instance 0..68).
struct LabelClass {
  int id;
  std::string name;
  int semantic;
  int instance;
  std::string color;  // #rrggbb
};

inline std::string hex_color(double h, double s, double v) {
  const double c = v * s, hp = std::fmod(h, 1.0) * 6.0, x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround((r + m) * 255)),
                static_cast<int>(std::lround((g + m) * 255)), static_cast<int>(std::lround((b + m) * 255)));
  return buf;
}

/// Fixed 70-entry palette; leaf hues step by the golden ratio so neighbors
/// in the list stay far apart on the color wheel.
inline std::vector<LabelClass> label_schema() {
  std::vector<LabelClass> out;
  out.push_back({0, "stem", label::kStem, label::kUnlabeled, "#8b5a2b"});
  for (int i = 1; i < kSchemaSize; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "leaf_%02d", i);
    const double hue = std::fmod(0.13 + 0.6180339887498949 * i, 1.0);
    const double sat = i % 2 ? 0.75 : 0.55, val = i % 3 ? 0.92 : 0.72;
    out.push_back({i, name, label::kLeaf, i - 1, hex_color(hue, sat, val)});
  }
  return out;
}

inline json schema_json() {
  json arr = json::array();
  for (const auto& c : label_schema())
    arr.push_back({{"id", c.id}, {"name", c.name}, {"sem", c.semantic}, {"inst", c.instance}, {"color", c.color}});
  return arr;
}

struct Edit {
  int sem = label::kUnlabeled;
  int inst = label::kUnlabeled;
};

/// Sparse label edits over one cloud. Stored next to, never inside, the cloud.
struct LabelSession {
  std::string cloud_id;
  long long revision = 0;
  std::string author;
  std::string created, updated;
  std::map<std::size_t, Edit> edits;
};

inline json to_json(const LabelSession& s) {
  json edits = json::array();
  for (const auto& [i, e] : s.edits) edits.push_back({{"index", i}, {"sem", e.sem}, {"inst", e.inst}});
  return {{"cloud_id", s.cloud_id}, {"revision", s.revision}, {"author", s.author},
          {"created", s.created},   {"updated", s.updated},   {"edits", edits}};
}

inline LabelSession session_from_json(const json& j) {
  LabelSession s;
  s.cloud_id = j.at("cloud_id").get<std::string>();
  s.revision = j.at("revision").get<long long>();
  s.author = j.value("author", "");
  s.created = j.value("created", "");
  s.updated = j.value("updated", "");
  for (const auto& e : j.at("edits")) s.edits[e.at("index").get<std::size_t>()] = {e.at("sem").get<int>(), e.at("inst").get<int>()};
  return s;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Source labels overlaid with session edits; edits win.
inline PointCloud merged_labels(const PointCloud& cloud, const LabelSession& s) {
  PointCloud out = cloud;
  if (!out.semantic) out.semantic = std::vector<int>(out.size(), label::kUnlabeled);
  if (!out.instance) out.instance = std::vector<int>(out.size(), label::kUnlabeled);
  for (const auto& [i, e] : s.edits) {
    (*out.semantic)[i] = e.sem;
    (*out.instance)[i] = e.inst;
  }
  return out;
}

/// Points reachable from `seed` through hops of at most `radius`, breadth
/// first, capped at `max_points`; ascending.
inline std::vector<std::size_t> region_grow(const SpatialIndex& index, std::size_t seed, double radius,
                                            std::size_t max_points) {
  const auto& pts = index.coords();
  if (seed >= pts.size()) throw DataError("seed index out of range");
  if (!(radius > 0)) throw DataError("radius must be positive");
  std::vector<bool> seen(pts.size(), false);
  std::vector<std::size_t> out;
  std::deque<std::size_t> queue{seed};
  seen[seed] = true;
  std::vector<std::size_t> nb;
  while (!queue.empty() && out.size() < max_points) {
    const std::size_t u = queue.front();
    queue.pop_front();
    out.push_back(u);
    index.radius_neighbors(pts[u], radius, nb);
    for (std::size_t v : nb)
      if (!seen[v]) {
        seen[v] = true;
        queue.push_back(v);
      }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Display decimation: the smallest voxel (growing by 25%) whose
/// representatives fit the budget. Returns original indices.
inline std::vector<std::size_t> decimate(const PointCloud& cloud, std::size_t budget) {
  if (budget == 0) throw DataError("budget must be positive");
  Vec3 lo = cloud.coords.front(), hi = lo;
  for (const auto& p : cloud.coords) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 ext = (hi - lo).cwiseMax(Vec3::Constant(1e-6));
  double voxel = std::cbrt(ext.prod() / static_cast<double>(budget));
  for (;;) {
    const auto ds = voxel_downsample(PointCloud{cloud.coords, cloud.colors, {}, {}, cloud.source_id}, voxel);
    if (ds.cloud.size() <= budget) return ds.representative;
    voxel *= 1.25;
  }
}

struct ServiceConfig {
  std::filesystem::path data_dir;
  std::filesystem::path session_dir;  // empty: <data_dir>/sessions
  std::size_t default_budget = kDecimationThreshold;
};

/// Handler result, independent of the transport.
struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";

  static Reply ok(const json& j) { return {200, j.dump(), "application/json"}; }
  static Reply error(int status, const std::string& msg) {
    return {status, json{{"error", msg}}.dump(), "application/json"};
  }
};

class AnnotationService {
 public:
  explicit AnnotationService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.session_dir.empty()) cfg_.session_dir = cfg_.data_dir / "sessions";
    if (!std::filesystem::is_directory(cfg_.data_dir))
      throw ConfigError("data directory " + cfg_.data_dir.string() + " does not exist");
    std::filesystem::create_directories(cfg_.session_dir);
    for (const auto& entry : std::filesystem::directory_iterator(cfg_.data_dir)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (ext == ".xyzl" || ext == ".txt" || ext == ".ply" || ext == ".xyz")
        files_[entry.path().stem().string()] = entry.path();
    }
  }

  const std::filesystem::path& session_dir() const noexcept { return cfg_.session_dir; }

  Reply list_clouds() {
    json arr = json::array();
    for (const auto& [id, path] : files_) {
      auto c = cloud(id);
      const auto s = session_snapshot(id);
      const auto merged = merged_labels(*c->cloud, s);
      std::size_t labeled = 0;
      for (std::size_t i = 0; i < merged.size(); ++i)
        if (merged.semantic_at(i) != label::kUnlabeled) ++labeled;
      arr.push_back({{"id", id}, {"points", c->cloud->size()}, {"labeled", labeled}});
    }
    return Reply::ok(arr);
  }

  Reply get_cloud(const std::string& id, std::optional<std::size_t> budget) {
    auto c = find(id);
    if (!c) return Reply::error(404, "unknown cloud '" + id + "'");
    const auto& pc = *(*c)->cloud;
    const std::size_t limit = std::min(budget.value_or(cfg_.default_budget), kDecimationThreshold);
    if (limit == 0) return Reply::error(400, "budget must be positive");
    std::vector<std::size_t> shown;
    if (pc.size() > limit) {
      shown = decimate(pc, limit);
    } else {
      shown.resize(pc.size());
      for (std::size_t i = 0; i < shown.size(); ++i) shown[i] = i;
    }
    const auto s = session_snapshot(id);
    const auto merged = merged_labels(pc, s);
    json coords = json::array(), colors = json::array(), sem = json::array(), inst = json::array();
    for (std::size_t i : shown) {
      for (int k = 0; k < 3; ++k) coords.push_back(pc.coords[i][k]);
      for (int k = 0; k < 3; ++k) colors.push_back(pc.colors[i][k]);
      sem.push_back(merged.semantic_at(i));
      inst.push_back(merged.instance_at(i));
    }
    return Reply::ok({{"id", id},
                      {"points", pc.size()},
                      {"coords", coords},
                      {"colors", colors},
                      {"sem", sem},
                      {"inst", inst},
                      {"index_map", shown},
                      {"revision", s.revision}});
  }

  Reply post_labels(const std::string& id, const std::string& body, const std::string& author = "") {
    auto c = find(id);
    if (!c) return Reply::error(404, "unknown cloud '" + id + "'");
    json req;
    try {
      req = json::parse(body);
    } catch (const json::exception& e) {
      return Reply::error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object() || !req.contains("revision") || !req["revision"].is_number_integer() ||
        !req.contains("edits") || !req["edits"].is_array())
      return Reply::error(400, "body must be {revision, edits:[{index, sem, inst}]}");
    const std::size_t m = (*c)->cloud->size();
    std::vector<std::pair<std::size_t, Edit>> edits;
    for (const auto& e : req["edits"]) {
      if (!e.is_object() || !e.contains("index") || !e["index"].is_number_integer() || !e.contains("sem") ||
          !e["sem"].is_number_integer())
        return Reply::error(400, "each edit needs integer index and sem");
      const long long idx = e["index"].get<long long>();
      const int sem = e["sem"].get<int>();
      const int inst = e.contains("inst") && e["inst"].is_number_integer() ? e["inst"].get<int>() : label::kUnlabeled;
      if (idx < 0 || static_cast<std::size_t>(idx) >= m) return Reply::error(400, "edit index out of range");
      if (sem < label::kUnlabeled || inst < label::kUnlabeled || (inst >= 0 && sem < 0))
        return Reply::error(400, "invalid label pair");
      edits.emplace_back(static_cast<std::size_t>(idx), Edit{sem, inst});
    }
    auto& entry = **c;
    std::unique_lock lock(entry.write);
    LabelSession s = load_session(id);
    const long long rev = req["revision"].get<long long>();
    if (rev != s.revision)
      return {409, json{{"error", "revision conflict"}, {"revision", s.revision}}.dump(), "application/json"};
    const auto now = utc_now();
    if (s.created.empty()) s.created = now;
    s.updated = now;
    if (!author.empty()) s.author = author;
    else if (req.contains("author") && req["author"].is_string()) s.author = req["author"].get<std::string>();
    for (const auto& [i, e] : edits) s.edits[i] = e;
    ++s.revision;
    save_session(s);
    return Reply::ok({{"revision", s.revision}});
  }

  Reply region(const std::string& id, const std::string& body) {
    auto c = find(id);
    if (!c) return Reply::error(404, "unknown cloud '" + id + "'");
    json req;
    try {
      req = json::parse(body);
    } catch (const json::exception& e) {
      return Reply::error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object() || !req.contains("seed_index") || !req["seed_index"].is_number_integer() ||
        !req.contains("radius_mm") || !req["radius_mm"].is_number())
      return Reply::error(400, "body must be {seed_index, radius_mm, max_points}");
    const long long seed = req["seed_index"].get<long long>();
    const double radius = req["radius_mm"].get<double>();
    long long max_points = req.value("max_points", static_cast<long long>((*c)->cloud->size()));
    if (seed < 0 || static_cast<std::size_t>(seed) >= (*c)->cloud->size())
      return Reply::error(400, "seed_index out of range");
    if (!(radius > 0) || max_points <= 0) return Reply::error(400, "radius_mm and max_points must be positive");
    const auto idx = region_grow(*(*c)->index, static_cast<std::size_t>(seed), radius,
                                 static_cast<std::size_t>(max_points));
    return Reply::ok({{"indices", idx}});
  }

  Reply export_cloud(const std::string& id) {
    auto c = find(id);
    if (!c) return Reply::error(404, "unknown cloud '" + id + "'");
    return {200, xyzl_text(merged_labels(*(*c)->cloud, session_snapshot(id))), "text/plain"};
  }

  Reply schema() { return Reply::ok(schema_json()); }

  /// Routes the handlers onto an httplib server.
  void bind(httplib::Server& srv) {
    auto send = [](httplib::Response& res, const Reply& r) { res.status = r.status, res.set_content(r.body, r.content_type); };
    auto guarded = [send](auto fn) {
      return [send, fn](const httplib::Request& req, httplib::Response& res) {
        try {
          send(res, fn(req));
        } catch (const DataError& e) {
          send(res, Reply::error(400, e.what()));
        } catch (const std::exception& e) {
          send(res, Reply::error(500, e.what()));
        }
      };
    };
    srv.Get("/api/clouds", guarded([this](const httplib::Request&) { return list_clouds(); }));
    srv.Get("/api/schema", guarded([this](const httplib::Request&) { return schema(); }));
    srv.Get(R"(/api/clouds/([^/]+))", guarded([this](const httplib::Request& req) {
              std::optional<std::size_t> budget;
              if (req.has_param("budget")) {
                const auto v = req.get_param_value("budget");
                std::size_t b = 0;
                const auto r = std::from_chars(v.data(), v.data() + v.size(), b);
                if (r.ec != std::errc() || r.ptr != v.data() + v.size()) return Reply::error(400, "bad budget");
                budget = b;
              }
              return get_cloud(req.matches[1], budget);
            }));
    srv.Get(R"(/api/clouds/([^/]+)/export)",
            guarded([this](const httplib::Request& req) { return export_cloud(req.matches[1]); }));
    srv.Post(R"(/api/clouds/([^/]+)/labels)", guarded([this](const httplib::Request& req) {
               return post_labels(req.matches[1], req.body, req.get_header_value("X-Author"));
             }));
    srv.Post(R"(/api/clouds/([^/]+)/region)",
             guarded([this](const httplib::Request& req) { return region(req.matches[1], req.body); }));
  }

 private:
  struct CloudEntry {
    std::shared_ptr<const PointCloud> cloud;
    std::shared_ptr<const SpatialIndex> index;
    std::mutex write;  // serializes session writes
  };

  std::optional<CloudEntry*> find(const std::string& id) {
    if (!files_.count(id)) return std::nullopt;
    return cloud(id);
  }

  CloudEntry* cloud(const std::string& id) {
    std::lock_guard lock(cache_mutex_);
    auto& slot = cache_[id];
    if (!slot) {
      auto entry = std::make_unique<CloudEntry>();
      auto pc = std::make_shared<PointCloud>(load_cloud(files_.at(id)));
      pc->require_non_empty();
      entry->index = std::make_shared<SpatialIndex>(pc->coords);
      entry->cloud = std::move(pc);
      slot = std::move(entry);
    }
    return slot.get();
  }

  std::filesystem::path session_path(const std::string& id) const { return cfg_.session_dir / (id + ".session.json"); }

  LabelSession load_session(const std::string& id) const {
    const auto p = session_path(id);
    if (!std::filesystem::exists(p)) return LabelSession{id, 0, "", "", "", {}};
    try {
      return session_from_json(json::parse(detail::slurp(p)));
    } catch (const json::exception& e) {
      throw DataError("corrupt session file " + p.string() + ": " + e.what());
    }
  }

  LabelSession session_snapshot(const std::string& id) {
    auto* c = cloud(id);
    std::unique_lock lock(c->write);
    return load_session(id);
  }

  void save_session(const LabelSession& s) const {
    const auto p = session_path(s.cloud_id);
    const auto tmp = p.string() + ".tmp";
    write_text_file(tmp, to_json(s).dump(2) + "\n");
    std::filesystem::rename(tmp, p);
  }

  ServiceConfig cfg_;
  std::map<std::string, std::filesystem::path> files_;
  std::mutex cache_mutex_;
  std::map<std::string, std::unique_ptr<CloudEntry>> cache_;
};

}  // namespace e3dp::service
