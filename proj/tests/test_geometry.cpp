#include <gtest/gtest.h>

#include <numbers>
#include <set>

#include "oracles.hpp"
#include "pma2e/geometry.hpp"

using namespace pma2e;

namespace {

PointCloud to_cloud(const std::vector<oracle::P3>& pts) { return PointCloud(std::vector<Vec3>(pts.begin(), pts.end())); }

}  // namespace

TEST(PointCloud, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(PointCloud(std::vector<Vec3>{}), Error);
  EXPECT_THROW(PointCloud({{0, 0, std::numeric_limits<double>::quiet_NaN()}}), Error);
  EXPECT_THROW(PointCloud({{0, std::numeric_limits<double>::infinity(), 0}}), Error);
}

TEST(Affine, IdentityLeavesCloudUnchanged) {
  std::mt19937_64 rng(1);
  const auto cloud = to_cloud(oracle::random_points(rng, 50));
  EXPECT_EQ(affine_apply(cloud, AffineTransform::identity()), cloud);
}

TEST(Affine, QuarterTurnAboutZ) {
  const auto t = AffineTransform::from_rows({0, -1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0});
  const auto out = affine_apply(PointCloud({{1, 0, 0}}), t);
  EXPECT_EQ(out[0], (Vec3{0, 1, 0}));
}

TEST(Affine, PureTranslation) {
  const auto t = AffineTransform::from_rows({1, 0, 0, 1, 0, 1, 0, 2, 0, 0, 1, 3});
  EXPECT_EQ(affine_apply(PointCloud({{0, 0, 0}}), t)[0], (Vec3{1, 2, 3}));
}

TEST(Affine, OverflowIsRejected) {
  const auto t = AffineTransform::from_rows({1e300, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
  try {
    affine_apply(PointCloud({{0, 0, 0}, {1e300, 0, 0}}), t);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos) << e.what();
  }
}

TEST(Affine, CompositionMatchesSequentialApplication) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 1000; ++trial) {
    std::array<double, 12> a, b;
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const auto t1 = AffineTransform::from_rows(a), t2 = AffineTransform::from_rows(b);
    const auto cloud = to_cloud(oracle::random_points(rng, 8));
    const auto seq = affine_apply(affine_apply(cloud, t1), t2);
    const auto once = affine_apply(cloud, compose(t2, t1));
    for (std::size_t i = 0; i < cloud.size(); ++i)
      for (int c = 0; c < 3; ++c) {
        const double scale = std::max(1.0, std::abs(seq[i][c]));
        EXPECT_LE(std::abs(seq[i][c] - once[i][c]) / scale, 1e-9);
      }
  }
}

TEST(Fps, ThreePointExample) {
  const PointCloud cloud({{0, 0, 0}, {1, 0, 0}, {10, 0, 0}});
  EXPECT_EQ(farthest_point_sample_from(cloud, 2, 0), (std::vector<std::size_t>{0, 2}));
}

TEST(Fps, FullSampleIsPermutation) {
  std::mt19937_64 g(3);
  const auto cloud = to_cloud(oracle::random_points(g, 40));
  Rng rng(9);
  auto idx = farthest_point_sample(cloud, cloud.size(), rng);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i], i);
}

TEST(Fps, SingleSampleIsSeededStart) {
  std::mt19937_64 g(4);
  const auto cloud = to_cloud(oracle::random_points(g, 40));
  Rng a(17), b(17);
  const auto idx = farthest_point_sample(cloud, 1, a);
  ASSERT_EQ(idx.size(), 1u);
  EXPECT_EQ(idx[0], uniform_index(b, cloud.size()));
}

TEST(Fps, RejectsBadCounts) {
  const PointCloud cloud({{0, 0, 0}, {1, 0, 0}});
  Rng rng(1);
  EXPECT_THROW(farthest_point_sample(cloud, 3, rng), Error);
  EXPECT_THROW(farthest_point_sample(cloud, 0, rng), Error);
}

TEST(Fps, MatchesBruteForceOracleWithTies) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    std::mt19937_64 g(seed);
    const std::size_t w = 2 + seed % 60;
    const auto pts = seed % 2 ? oracle::lattice_points(g, w, 2) : oracle::random_points(g, w);
    const auto cloud = to_cloud(pts);
    const std::size_t n = 1 + seed % w;
    const std::size_t start = seed % w;
    EXPECT_EQ(farthest_point_sample_from(cloud, n, start), oracle::fps(pts, n, start)) << "seed " << seed;
  }
}

TEST(Knn, QueryOnCloudPoint) {
  const PointCloud cloud({{0, 0, 0}, {1, 1, 1}, {2, 0, 0}});
  const auto nb = knn(cloud, {1, 1, 1}, 1);
  EXPECT_EQ(nb.indices, (std::vector<std::size_t>{1}));
  EXPECT_EQ(nb.distances[0], 0.0);
}

TEST(Knn, CollinearExample) {
  const PointCloud cloud({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
  EXPECT_EQ(knn(cloud, {0, 0, 0}, 2).indices, (std::vector<std::size_t>{0, 1}));
}

TEST(Knn, FullNeighborhoodIsSortedAndDistinct) {
  std::mt19937_64 g(5);
  const auto pts = oracle::lattice_points(g, 64, 2);
  const auto cloud = to_cloud(pts);
  const auto nb = knn_of_index(cloud, 7, cloud.size());
  EXPECT_EQ(nb.query_index, 7u);
  EXPECT_EQ(std::set<std::size_t>(nb.indices.begin(), nb.indices.end()).size(), cloud.size());
  EXPECT_TRUE(std::is_sorted(nb.distances.begin(), nb.distances.end()));
  EXPECT_EQ(nb.indices, oracle::knn(pts, pts[7], pts.size()));
  EXPECT_THROW(knn(cloud, {0, 0, 0}, cloud.size() + 1), Error);
}

TEST(Knn, MatchesFullSortOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 g(seed);
    const std::size_t w = 1 + seed % 90;
    const auto pts = seed % 3 == 0 ? oracle::lattice_points(g, w, 1) : oracle::random_points(g, w);
    const auto cloud = to_cloud(pts);
    const oracle::P3 q = oracle::lattice_points(g, 1, 1)[0];
    const std::size_t k = 1 + seed % w;
    EXPECT_EQ(knn(cloud, q, k).indices, oracle::knn(pts, q, k)) << "seed " << seed;
  }
}

TEST(Patchify, SinglePatchHoldsWholeCloud) {
  std::mt19937_64 g(6);
  const auto cloud = to_cloud(oracle::random_points(g, 30));
  Rng rng(1);
  const auto ps = patchify(cloud, 1, cloud.size(), rng);
  EXPECT_EQ(ps.patches.size(), cloud.size());
  std::set<std::size_t> ids(ps.point_indices.begin(), ps.point_indices.end());
  EXPECT_EQ(ids.size(), cloud.size());
}

TEST(Patchify, CollinearPairs) {
  const std::vector<oracle::P3> pts{{0, 0, 0}, {1, 0, 0}, {5, 0, 0}, {6, 0, 0}};
  const auto cloud = to_cloud(pts);
  Rng rng(3);
  const auto ps = patchify(cloud, 2, 2, rng);
  ASSERT_EQ(ps.n, 2u);
  ASSERT_EQ(ps.patches.size(), 4u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto c = ps.center_indices[i];
    EXPECT_EQ(ps.point_indices[i * 2], c);
    EXPECT_EQ(ps.point_indices[i * 2 + 1], oracle::knn(pts, pts[c], 2)[1]);
  }
}

TEST(Patchify, MembershipMatchesOracle) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 g(seed);
    const auto pts = oracle::random_points(g, 64);
    const auto cloud = to_cloud(pts);
    Rng rng(seed);
    const auto ps = patchify(cloud, 8, 8, rng);
    ASSERT_EQ(ps.patches.size(), 64u);
    for (std::size_t i = 0; i < ps.n; ++i) {
      const auto expected = oracle::knn(pts, pts[ps.center_indices[i]], 8);
      const double kth = oracle::d2(pts[expected.back()], pts[ps.center_indices[i]]);
      for (std::size_t j = 0; j < ps.k; ++j) {
        EXPECT_EQ(ps.point_indices[i * 8 + j], expected[j]);
        EXPECT_LE(oracle::d2(ps.point(i, j), ps.centers[i]), kth);
      }
    }
  }
}

TEST(PatchNormalization, RoundTripAndErrors) {
  std::mt19937_64 g(8);
  const auto cloud = to_cloud(oracle::random_points(g, 100));
  Rng rng(2);
  const auto ps = patchify(cloud, 10, 10, rng);
  const auto norm = normalize_patches(ps);
  EXPECT_TRUE(norm.normalized);
  for (std::size_t i = 0; i < norm.n; ++i) EXPECT_EQ(norm.point(i, 0), (Vec3{0, 0, 0}));  // center is its own nearest
  EXPECT_THROW(normalize_patches(norm), Error);
  EXPECT_THROW(denormalize_patches(ps), Error);
  const auto back = denormalize_patches(norm);
  EXPECT_FALSE(back.normalized);
  for (std::size_t i = 0; i < ps.patches.size(); ++i)
    for (int c = 0; c < 3; ++c) EXPECT_LE(std::abs(back.patches[i][c] - ps.patches[i][c]), 1e-12);
}

TEST(PatchNormalization, SinglePointPatch) {
  const PointCloud cloud({{0.3, -0.2, 0.9}});
  Rng rng(1);
  const auto norm = normalize_patches(patchify(cloud, 1, 1, rng));
  EXPECT_EQ(norm.point(0, 0), (Vec3{0, 0, 0}));
}

TEST(PatchAffine, TransformsCentersAndPoints) {
  std::mt19937_64 g(9);
  const auto cloud = to_cloud(oracle::random_points(g, 32));
  Rng rng(2);
  const auto ps = patchify(cloud, 4, 4, rng);
  const auto t = AffineTransform::from_rows({0, -1, 0, 0.5, 1, 0, 0, 0, 0, 0, 2, -1});
  const auto out = affine_apply(ps, t);
  for (std::size_t i = 0; i < ps.n; ++i) EXPECT_EQ(out.centers[i], t.apply(ps.centers[i]));
  for (std::size_t i = 0; i < ps.patches.size(); ++i) EXPECT_EQ(out.patches[i], t.apply(ps.patches[i]));
  EXPECT_THROW(affine_apply(normalize_patches(ps), t), Error);
}
