#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "e3dp/cloud.hpp"
#include "e3dp/io.hpp"
#include "e3dp/rng.hpp"

namespace e3dp {

/// Greedy farthest point sampling. Returns min(count, M) indices in pick
/// order; ties go to the lowest index.
inline std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> coords, std::size_t count,
                                                      std::size_t start = 0) {
  const std::size_t m = coords.size();
  if (m == 0) throw DataError("farthest point sampling on an empty point set");
  if (count == 0) throw DataError("farthest point sampling needs count >= 1");
  if (start >= m) throw DataError("farthest point sampling start index out of range");
  const std::size_t h = std::min(count, m);
  std::vector<std::size_t> picked;
  picked.reserve(h);
  std::vector<double> min_d2(m, std::numeric_limits<double>::infinity());
  std::size_t current = start;
  for (std::size_t step = 0; step < h; ++step) {
    picked.push_back(current);
    min_d2[current] = -1.0;
    std::size_t next = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      if (min_d2[i] < 0.0) continue;
      const double d = (coords[i] - coords[current]).squaredNorm();
      if (d < min_d2[i]) min_d2[i] = d;
      if (min_d2[i] > best) {
        best = min_d2[i];
        next = i;
      }
    }
    current = next;
  }
  return picked;
}

struct WeakLabel {
  int semantic = label::kUnlabeled;
  int instance = label::kUnlabeled;
  bool operator==(const WeakLabel&) const = default;
};

/// Sparse supervision: point index -> retained label.
struct WeakLabels {
  std::map<std::size_t, WeakLabel> entries;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::string source_id;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
  bool operator==(const WeakLabels&) const = default;
};

/// Draws k labeled points uniformly without replacement. With `balanced`, the
/// draw cycles over semantic classes instead (experimental, never default).
inline WeakLabels make_weak_labels(const PointCloud& cloud, long long k, std::uint64_t seed, bool balanced = false) {
  if (k <= 0) throw DataError("weak label count must be positive");
  if (!cloud.has_semantic()) throw DataError(cloud.source_id + ": weak labels need a semantically labeled cloud");
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if ((*cloud.semantic)[i] != label::kUnlabeled) labeled.push_back(i);
  WeakLabels out;
  out.k = static_cast<std::size_t>(k);
  out.seed = seed;
  out.source_id = cloud.source_id;
  Rng rng(derive_seed(seed, 0x7765616bULL));
  std::vector<std::size_t> chosen;
  if (!balanced) {
    for (std::size_t j : rng.sample_without_replacement(labeled.size(), out.k)) chosen.push_back(labeled[j]);
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i : labeled) by_class[(*cloud.semantic)[i]].push_back(i);
    std::vector<std::vector<std::size_t>> queues;
    for (auto& [cls, idx] : by_class) {
      std::vector<std::size_t> q;
      for (std::size_t j : rng.sample_without_replacement(idx.size(), idx.size())) q.push_back(idx[j]);
      queues.push_back(std::move(q));
    }
    std::vector<std::size_t> pos(queues.size(), 0);
    const std::size_t want = std::min(out.k, labeled.size());
    while (chosen.size() < want)
      for (std::size_t c = 0; c < queues.size() && chosen.size() < want; ++c)
        if (pos[c] < queues[c].size()) chosen.push_back(queues[c][pos[c]++]);
  }
  for (std::size_t i : chosen) out.entries[i] = {(*cloud.semantic)[i], cloud.instance_at(i)};
  return out;
}

/// Keeps ceil(ratio * M) points drawn uniformly without replacement, in
/// their original order.
inline PointCloud random_subsample(const PointCloud& cloud, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw DataError("subsample ratio must lie in (0, 1]");
  const auto m = cloud.size();
  const auto keep = std::min<std::size_t>(m, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(m) - 1e-9)));
  Rng rng(derive_seed(seed, 0x73756273ULL));
  auto idx = rng.sample_without_replacement(m, keep);
  std::sort(idx.begin(), idx.end());
  return cloud.select(idx);
}

/// Removes every point whose semantic label equals `cls`.
inline PointCloud strip_class(const PointCloud& cloud, int cls) {
  if (!cloud.has_semantic()) return cloud;
  std::vector<std::size_t> keep;
  keep.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if ((*cloud.semantic)[i] != cls) keep.push_back(i);
  return cloud.select(keep);
}

inline std::string weak_labels_text(const WeakLabels& w) {
  std::ostringstream os;
  os << "#weaklabels k=" << w.k << " seed=" << w.seed << " cloud=" << w.source_id << '\n';
  for (const auto& [i, l] : w.entries) os << i << ' ' << l.semantic << ' ' << l.instance << '\n';
  return os.str();
}

inline WeakLabels parse_weak_labels(std::string_view text, const std::string& source) {
  WeakLabels w;
  const auto lines = detail::lines_of(text);
  bool header = false;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto f = detail::split_ws(lines[ln]);
    if (f.empty()) continue;
    if (f[0] == "#weaklabels") {
      for (std::size_t j = 1; j < f.size(); ++j) {
        const auto eq = f[j].find('=');
        if (eq == std::string_view::npos) throw ParseError(source, ln + 1, "malformed header field");
        const auto key = f[j].substr(0, eq);
        const auto val = std::string(f[j].substr(eq + 1));
        try {
          if (key == "k") w.k = std::stoull(val);
          else if (key == "seed") w.seed = std::stoull(val);
          else if (key == "cloud") w.source_id = val;
        } catch (const std::exception&) {
          throw ParseError(source, ln + 1, "bad header value '" + val + "'");
        }
      }
      header = true;
      continue;
    }
    if (f[0].front() == '#') continue;
    if (f.size() != 3) throw ParseError(source, ln + 1, "expected 'index sem inst'");
    long long idx;
    int s, i;
    if (std::from_chars(f[0].data(), f[0].data() + f[0].size(), idx).ec != std::errc() || idx < 0 ||
        !detail::parse_int(f[1], s) || !detail::parse_int(f[2], i))
      throw ParseError(source, ln + 1, "bad weak label entry");
    if (s < 0) throw ParseError(source, ln + 1, "weak label entries must carry a semantic label");
    w.entries[static_cast<std::size_t>(idx)] = {s, i};
  }
  if (!header) throw ParseError(source, 1, "missing #weaklabels header");
  return w;
}

inline void save_weak_labels(const WeakLabels& w, const std::filesystem::path& path) {
  write_text_file(path, weak_labels_text(w));
}

inline WeakLabels load_weak_labels(const std::filesystem::path& path) {
  return parse_weak_labels(detail::slurp(path), path.string());
}

}  // namespace e3dp
