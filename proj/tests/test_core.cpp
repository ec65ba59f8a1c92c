#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "e3dp/augment.hpp"
#include "e3dp/config.hpp"
#include "e3dp/io.hpp"
#include "e3dp/sampling.hpp"
#include "e3dp/spatial_index.hpp"
#include "e3dp/voxel.hpp"
#include "oracles.hpp"

using namespace e3dp;
namespace fs = std::filesystem;

namespace {

std::vector<Vec3> random_points(Rng& rng, std::size_t n, double extent) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i)
    pts.emplace_back(rng.uniform(0, extent), rng.uniform(0, extent), rng.uniform(0, extent));
  return pts;
}

PointCloud labeled_cloud(Rng& rng, std::size_t n) {
  PointCloud c;
  c.coords = random_points(rng, n, 20.0);
  c.colors.assign(n, Vec3(0.5, 0.25, 0.125));
  c.semantic = std::vector<int>(n);
  c.instance = std::vector<int>(n);
  for (std::size_t i = 0; i < n; ++i) {
    (*c.semantic)[i] = static_cast<int>(rng.below(3));
    (*c.instance)[i] = (*c.semantic)[i] == label::kLeaf ? static_cast<int>(rng.below(4)) : -1;
  }
  c.source_id = "rand";
  return c;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("e3dp_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

// --- cloud files ----------------------------------------------------------

TEST(CloudIo, LabelColumnsAreEchoed) {
  const auto c = parse_cloud("0 0 0 1 1 1 0 -1\n1 0 0 1 1 1 1 0\n2 0 0 1 1 1 1 1\n", CloudFormat::kXyzl, "t");
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(*c.semantic, (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(*c.instance, (std::vector<int>{-1, 0, 1}));
}

TEST(CloudIo, UnlabeledFileHasNoLabels) {
  const auto c = parse_cloud("0 0 0 1 1 1\n1 2 3 0 0 0\n", CloudFormat::kXyzl, "t");
  EXPECT_FALSE(c.has_semantic());
  EXPECT_FALSE(c.has_instance());
}

TEST(CloudIo, FiveFieldsIsAParseErrorAtThatLine) {
  try {
    parse_cloud("0 0 0 1 1 1\n0 0 0 1 1\n", CloudFormat::kXyzl, "t");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(CloudIo, RoundTripIsLossless) {
  Rng rng(7);
  auto c = labeled_cloud(rng, 200);
  const auto dir = temp_dir("io");
  for (const char* name : {"a.xyzl", "a.ply"}) {
    save_cloud(c, dir / name);
    const auto back = load_cloud(dir / name);
    ASSERT_EQ(back.size(), c.size());
    EXPECT_EQ(*back.semantic, *c.semantic);
    EXPECT_EQ(*back.instance, *c.instance);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_LE((back.coords[i] - c.coords[i]).norm(), 1e-6);
  }
  const auto text = detail::slurp(dir / "a.xyzl");
  EXPECT_EQ(detail::split_ws(detail::lines_of(text)[0]).size(), 8u);
}

TEST(CloudIo, UnwritableDirectoryIsAnIoError) {
  Rng rng(1);
  EXPECT_THROW(save_cloud(labeled_cloud(rng, 3), "/nonexistent_dir_e3dp/x.xyzl"), IoError);
}

TEST(CloudIo, PlyHeaderIsParsed) {
  const auto c = parse_cloud(
      "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n1 2 3 255 0 0\n4 5 6 0 255 0\n",
      CloudFormat::kPlyAscii, "p");
  ASSERT_EQ(c.size(), 2u);
  EXPECT_DOUBLE_EQ(c.coords[1].z(), 6.0);
  EXPECT_DOUBLE_EQ(c.colors[0].x(), 1.0);
}

// --- spatial index ----------------------------------------------------------

TEST(SpatialIndex, QueryAtAPointFindsIt) {
  Rng rng(3);
  const auto pts = random_points(rng, 50, 10.0);
  const SpatialIndex idx(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto nb = idx.radius_neighbors(pts[i], 0.001);
    EXPECT_NE(std::find(nb.begin(), nb.end(), i), nb.end());
  }
}

TEST(SpatialIndex, IsolatedPointsSeeOnlyThemselves) {
  const SpatialIndex idx(std::vector<Vec3>{{0, 0, 0}, {2, 0, 0}});
  EXPECT_EQ(idx.radius_neighbors({0, 0, 0}, 1.5), std::vector<std::size_t>{0});
  EXPECT_EQ(idx.radius_neighbors({2, 0, 0}, 1.5), std::vector<std::size_t>{1});
}

TEST(SpatialIndex, MatchesBruteForceOnRandomClouds) {
  Rng rng(11);
  std::size_t queries = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto pts = random_points(rng, 100 + rng.below(100), rng.uniform(5, 40));
    const SpatialIndex idx(pts);
    for (int q = 0; q < 30; ++q, ++queries) {
      const Vec3 c = rng.bernoulli(0.5) ? pts[rng.below(pts.size())] : random_points(rng, 1, 40)[0];
      const double r = rng.uniform(0.1, 12.0);
      ASSERT_EQ(idx.radius_neighbors(c, r), oracle::radius_scan(pts, c, r));
    }
  }
  EXPECT_GE(queries, 1000u);
}

TEST(SpatialIndex, PlanarAndLinearCloudsMatchBruteForce) {
  Rng rng(5);
  std::vector<Vec3> plane, line;
  for (int i = 0; i < 300; ++i) {
    plane.emplace_back(rng.uniform(0, 50), rng.uniform(0, 20), 0.0);
    line.emplace_back(rng.uniform(0, 80), 0.0, 0.0);
  }
  for (const auto* pts : {&plane, &line}) {
    const SpatialIndex idx(*pts);
    for (int q = 0; q < 50; ++q) {
      const Vec3 c = (*pts)[rng.below(pts->size())];
      ASSERT_EQ(idx.radius_neighbors(c, 2.5), oracle::radius_scan(*pts, c, 2.5));
    }
  }
}

TEST(SpatialIndex, NearestMatchesSortedDistances) {
  Rng rng(9);
  const auto pts = random_points(rng, 150, 10.0);
  const SpatialIndex idx(pts);
  for (int q = 0; q < 50; ++q) {
    const Vec3 c = random_points(rng, 1, 10.0)[0];
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < pts.size(); ++i) d.push_back({(pts[i] - c).norm(), i});
    std::sort(d.begin(), d.end());
    const auto got = idx.nearest(c, 7);
    ASSERT_EQ(got.size(), 7u);
    for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(got[k], d[k].second);
  }
}

// --- voxels -----------------------------------------------------------------

TEST(Voxel, PointsInOneVoxelCollapseToTheirCentroid) {
  PointCloud c;
  c.coords = {{0.1, 0.1, 0.1}, {0.2, 0.1, 0.1}, {0.1, 0.2, 0.1}, {0.2, 0.2, 0.3}};
  c.colors.assign(4, Vec3::Zero());
  const auto d = voxel_downsample(c, 1.0);
  ASSERT_EQ(d.cloud.size(), 1u);
  EXPECT_TRUE(d.cloud.coords[0].isApprox(Vec3(0.15, 0.15, 0.15), 1e-12));
}

TEST(Voxel, DistantPointsAreKept) {
  PointCloud c;
  c.coords = {{0.5, 0.5, 0.5}, {10.5, 0.5, 0.5}};
  c.colors.assign(2, Vec3::Zero());
  const auto d = voxel_downsample(c, 1.0);
  ASSERT_EQ(d.cloud.size(), 2u);
  EXPECT_EQ(d.cloud.coords[0], c.coords[0]);
  EXPECT_EQ(d.cloud.coords[1], c.coords[1]);
}

TEST(Voxel, MajorityLabelMatchesCountingOracle) {
  PointCloud c;
  c.coords = {{0.1, 0.1, 0.1}, {0.2, 0.2, 0.2}, {0.3, 0.3, 0.3}};
  c.colors.assign(3, Vec3::Zero());
  c.semantic = std::vector<int>{0, 0, 1};
  c.instance = std::vector<int>{-1, -1, 2};
  const auto d = voxel_downsample(c, 1.0);
  EXPECT_EQ(d.cloud.semantic_at(0), 0);
  EXPECT_EQ(d.cloud.instance_at(0), -1);

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> v(1 + rng.below(9));
    for (int& x : v) x = static_cast<int>(rng.below(3));
    std::map<int, int> count;
    for (int x : v) ++count[x];
    int best = -1, n = -1;
    for (auto [k, m] : count)
      if (m > n) best = k, n = m;  // lowest label wins ties: map order
    EXPECT_EQ(majority_label(v), best);
  }
}

TEST(Voxel, OutputCentroidsLieInTheirVoxels) {
  Rng rng(8);
  auto c = labeled_cloud(rng, 2000);
  for (double vs : {0.5, 1.0, 3.0}) {
    const auto d = voxel_downsample(c, vs);
    EXPECT_LE(d.cloud.size(), c.size());
    for (std::size_t v = 0; v < d.cloud.size(); ++v) {
      const auto& k = d.voxels.keys[v];
      const Vec3 lo(k.x * vs, k.y * vs, k.z * vs);
      for (int a = 0; a < 3; ++a) {
        EXPECT_GE(d.cloud.coords[v][a], lo[a] - 1e-9);
        EXPECT_LE(d.cloud.coords[v][a], lo[a] + vs + 1e-9);
      }
    }
    d.cloud.validate();
  }
}

// --- sampling and weak labels ------------------------------------------------

TEST(Fps, CollinearPicksTheFarEnd) {
  std::vector<Vec3> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(i, 0, 0);
  EXPECT_EQ(farthest_point_sample(pts, 2, 0), (std::vector<std::size_t>{0, 9}));
}

TEST(Fps, FullCountReturnsAllIndicesInFpsOrder) {
  Rng rng(2);
  const auto pts = random_points(rng, 40, 5.0);
  const auto s = farthest_point_sample(pts, 40, 3);
  EXPECT_EQ(s, oracle::fps(pts, 40, 3));
  auto sorted = s;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Fps, SquareCornersTieGoesToLowestIndex) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0.5, 0.5, 0}};
  EXPECT_EQ(farthest_point_sample(pts, 3, 0), (std::vector<std::size_t>{0, 3, 1}));
}

TEST(Fps, MatchesGreedyOracleForAllStarts) {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto pts = random_points(rng, 5 + rng.below(60), 10.0);
    const std::size_t h = 1 + rng.below(pts.size());
    for (std::size_t s = 0; s < pts.size(); ++s) ASSERT_EQ(farthest_point_sample(pts, h, s), oracle::fps(pts, h, s));
  }
}

TEST(Fps, MinimumSpacingShrinksAsHGrows) {
  Rng rng(13);
  const auto pts = random_points(rng, 120, 10.0);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t h = 2; h <= 60; ++h) {
    const auto s = farthest_point_sample(pts, h, 0);
    double mind = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < s.size(); ++a)
      for (std::size_t b = a + 1; b < s.size(); ++b) mind = std::min(mind, (pts[s[a]] - pts[s[b]]).norm());
    EXPECT_LE(mind, prev);
    prev = mind;
  }
}

TEST(WeakLabels, LargeKTakesEveryLabeledPoint) {
  Rng rng(1);
  auto c = labeled_cloud(rng, 30);
  (*c.semantic)[0] = label::kUnlabeled;
  (*c.instance)[0] = label::kUnlabeled;
  const auto w = make_weak_labels(c, 100, 5);
  EXPECT_EQ(w.size(), 29u);
  EXPECT_EQ(w.entries.count(0), 0u);
}

TEST(WeakLabels, DeterministicAndFaithful) {
  Rng rng(2);
  const auto c = labeled_cloud(rng, 10000);
  const auto a = make_weak_labels(c, 50, 42);
  EXPECT_EQ(a, make_weak_labels(c, 50, 42));
  EXPECT_NE(a, make_weak_labels(c, 50, 43));
  ASSERT_EQ(a.size(), 50u);
  for (const auto& [i, l] : a.entries) {
    EXPECT_EQ(l.semantic, c.semantic_at(i));
    EXPECT_EQ(l.instance, c.instance_at(i));
  }
  EXPECT_THROW(make_weak_labels(c, 0, 1), DataError);
}

TEST(WeakLabels, FileRoundTrip) {
  Rng rng(3);
  const auto c = labeled_cloud(rng, 500);
  const auto w = make_weak_labels(c, 100, 9);
  const auto dir = temp_dir("weak");
  save_weak_labels(w, dir / "a.weak");
  EXPECT_EQ(load_weak_labels(dir / "a.weak"), w);
}

TEST(Subsample, CountsIdentityAndDeterminism) {
  Rng rng(4);
  const auto c = labeled_cloud(rng, 1000);
  EXPECT_EQ(random_subsample(c, 1.0, 3).coords, c.coords);
  const auto s = random_subsample(c, 0.2, 3);
  EXPECT_EQ(s.size(), 200u);
  EXPECT_EQ(s.coords, random_subsample(c, 0.2, 3).coords);
  EXPECT_THROW(random_subsample(c, 0.0, 3), DataError);
  EXPECT_THROW(random_subsample(c, 1.5, 3), DataError);
}

TEST(StripClass, RemovesExactlyTheSoilPoints) {
  Rng rng(5);
  const auto c = labeled_cloud(rng, 800);
  const auto soil = std::count(c.semantic->begin(), c.semantic->end(), label::kSoil);
  const auto s = strip_class(c, label::kSoil);
  EXPECT_EQ(s.size(), c.size() - static_cast<std::size_t>(soil));
  EXPECT_EQ(std::count(s.semantic->begin(), s.semantic->end(), label::kSoil), 0);
  const auto again = strip_class(s, label::kSoil);
  EXPECT_EQ(again.coords, s.coords);

  PointCloud all = c;
  std::fill(all.semantic->begin(), all.semantic->end(), label::kSoil);
  std::fill(all.instance->begin(), all.instance->end(), label::kUnlabeled);
  EXPECT_THROW(strip_class(all, label::kSoil).require_non_empty(), DataError);
}

// --- augmentation -------------------------------------------------------------

TEST(Augment, IdentityConfigIsIdentity) {
  Rng rng(6);
  const auto c = labeled_cloud(rng, 100);
  const auto t = random_transform(c, AugmentConfig::identity(), 17);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_LE((t.coords[i] - c.coords[i]).norm(), 1e-12);
  EXPECT_EQ(t.colors, c.colors);
}

TEST(Augment, QuarterTurnAboutZ) {
  TransformParams t;
  t.angle_z = std::numbers::pi / 2;
  PointCloud c;
  c.coords = {{1, 0, 0}};
  c.colors = {Vec3::Zero()};
  const auto out = apply_transform(c, t);
  EXPECT_LE((out.coords[0] - Vec3(0, 1, 0)).norm(), 1e-9);
}

TEST(Augment, WithoutJitterDistancesScaleByTheDrawnFactor) {
  Rng rng(7);
  const auto c = labeled_cloud(rng, 60);
  AugmentConfig cfg;
  cfg.jitter_sigma = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TransformParams drawn;
    const auto t = random_transform(c, cfg, seed, &drawn);
    EXPECT_EQ(*t.semantic, *c.semantic);
    EXPECT_EQ(*t.instance, *c.instance);
    ASSERT_EQ(t.size(), c.size());
    for (std::size_t a = 0; a < c.size(); a += 7)
      for (std::size_t b = a + 1; b < c.size(); b += 5)
        EXPECT_NEAR((t.coords[a] - t.coords[b]).norm(), drawn.scale * (c.coords[a] - c.coords[b]).norm(), 1e-9);
  }
}

TEST(Augment, DifferentSeedsGiveDifferentRotations) {
  Rng rng(8);
  const auto c = labeled_cloud(rng, 10);
  std::set<double> angles;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TransformParams drawn;
    random_transform(c, AugmentConfig{}, seed, &drawn);
    angles.insert(drawn.angle_z);
  }
  EXPECT_EQ(angles.size(), 100u);
}

// --- run configuration --------------------------------------------------------

TEST(RunConfig, ParsesOverridesAndRejectsUnknownKeys) {
  auto cfg = RunConfig::parse("# comment\nseed = 7\nweak.k=50\n", "t");
  EXPECT_EQ(cfg.seed("seed"), 7u);
  EXPECT_EQ(cfg.integer("weak.k"), 50);
  cfg.apply("cluster.radius=2.5");
  EXPECT_DOUBLE_EQ(cfg.real("cluster.radius"), 2.5);
  EXPECT_THROW(cfg.apply("no.such.key=1"), ConfigError);
  EXPECT_THROW(RunConfig::parse("bogus = 1\n", "t"), ConfigError);
  EXPECT_THROW(RunConfig::parse("just text\n", "t"), ConfigError);
  cfg.set("weak.k", "abc");
  EXPECT_THROW(cfg.integer("weak.k"), ConfigError);
}

TEST(RunConfig, TextRoundTrips) {
  auto cfg = RunConfig();
  cfg.set("io.inputs", "a.xyzl,b.xyzl");
  const auto again = RunConfig::parse(cfg.text(), "frozen");
  EXPECT_EQ(again.text(), cfg.text());
  EXPECT_EQ(again.list("io.inputs"), (std::vector<std::string>{"a.xyzl", "b.xyzl"}));
}
