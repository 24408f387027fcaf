#include <gtest/gtest.h>

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>
#include <set>

#include "mbflow/dbscan.hpp"
#include "mbflow/error.hpp"
#include "mbflow/spatial_index.hpp"
#include "support.hpp"

namespace mbflow {
namespace {

using testing::random_points;
using testing::scan_nearest;

TEST(SpatialIndex, EmptyCloudThrows) { EXPECT_THROW(SpatialIndex(Points(0, 3)), Error); }

TEST(SpatialIndex, SinglePoint) {
  const SpatialIndex idx(Points{{1.0, 2.0, 3.0}});
  const auto nn = idx.nearest(Point3(1.0, 2.0, 3.0));
  EXPECT_EQ(nn.index, 0);
  EXPECT_EQ(nn.distance, 0.0);
}

TEST(SpatialIndex, CollinearMidpoint) {
  const Points P{{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {3.0, 0.0, 0.0}};
  const SpatialIndex idx(P);
  const Point3 q(1.9, 0.0, 0.0);
  EXPECT_EQ(idx.nearest(q).index, scan_nearest(P, q).first);
}

TEST(SpatialIndex, TiesGoToLowestIndex) {
  Points P = random_points(10, 3, 5.0);
  P.row(2) << 1.0, 0.0, 0.0;
  P.row(7) << -1.0, 0.0, 0.0;
  for (Index i = 0; i < P.rows(); ++i) {
    if (i != 2 && i != 7) P.row(i) << 10.0 + static_cast<double>(i), 10.0, 10.0;
  }
  for (int leaf : {1, 2, 12}) {
    const SpatialIndex idx(P, leaf);
    const auto nn = idx.nearest(Point3::Zero());
    EXPECT_EQ(nn.index, 2) << "leaf " << leaf;
    EXPECT_EQ(nn.distance, 1.0);
  }
}

TEST(SpatialIndex, DuplicatePointsReturnLowestIndex) {
  Points P = random_points(64, 4);
  P.row(40) = P.row(5);
  P.row(50) = P.row(5);
  const SpatialIndex idx(P, 3);
  EXPECT_EQ(idx.nearest(P.row(50).transpose()).index, 5);
}

TEST(SpatialIndex, StoredPointHasZeroDistance) {
  const Points P = random_points(300, 5);
  const SpatialIndex idx(P);
  for (Index i = 0; i < P.rows(); i += 17) {
    const auto nn = idx.nearest(P.row(i).transpose());
    EXPECT_EQ(nn.distance, 0.0);
    EXPECT_EQ(nn.index, i);
  }
}

TEST(SpatialIndex, NonFiniteQueryThrows) {
  const SpatialIndex idx(random_points(10, 6));
  EXPECT_THROW(idx.nearest(Point3(std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0)), Error);
}

TEST(SpatialIndex, MatchesLinearScan) {
  const Points P = random_points(1000, 7, 10.0);
  const SpatialIndex idx(P);
  const Points Q = random_points(100, 8, 12.0);
  for (Index k = 0; k < Q.rows(); ++k) {
    const auto [i, d] = scan_nearest(P, Q.row(k).transpose());
    const auto nn = idx.nearest(Q.row(k).transpose());
    EXPECT_EQ(nn.index, i);
    EXPECT_EQ(nn.distance, d);
  }
}

TEST(SpatialIndex, FuzzAgainstLinearScan) {
  // Small integer grids produce many exact ties.
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> coord(-3, 3);
  std::uniform_int_distribution<int> size(1, 60);
  std::uniform_int_distribution<int> leaf(1, 16);
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = size(rng);
    Points P(n, 3);
    for (Index i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) P(i, c) = coord(rng);
    }
    const SpatialIndex idx(P, leaf(rng));
    const Point3 q(coord(rng) * 0.5, coord(rng) * 0.5, coord(rng) * 0.5);
    const auto [i, d] = scan_nearest(P, q);
    const auto nn = idx.nearest(q);
    ASSERT_EQ(nn.index, i) << "trial " << trial;
    ASSERT_EQ(nn.distance, d);
  }
}

TEST(SpatialIndex, RadiusMatchesLinearScan) {
  const Points P = random_points(500, 10, 5.0);
  const SpatialIndex idx(P, 7);
  const Points Q = random_points(50, 11, 5.0);
  for (Index k = 0; k < Q.rows(); ++k) {
    const Point3 q = Q.row(k).transpose();
    std::vector<Index> expect;
    for (Index i = 0; i < P.rows(); ++i) {
      if ((P.row(i).transpose() - q).squaredNorm() <= 1.5 * 1.5) expect.push_back(i);
    }
    EXPECT_EQ(idx.radius(q, 1.5), expect);
  }
}

// --------------------------------------------------------------------------
// DBSCAN

/// Reference DBSCAN over an O(n^2) neighbourhood table with the same
/// ascending-seed, breadth-first expansion order.
std::vector<int> reference_dbscan(const Points& P, double eps, int min_points) {
  const Index n = P.rows();
  std::vector<std::vector<Index>> nbr(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if ((P.row(i) - P.row(j)).squaredNorm() <= eps * eps) nbr[static_cast<size_t>(i)].push_back(j);
    }
  }
  auto core = [&](Index i) { return static_cast<int>(nbr[static_cast<size_t>(i)].size()) >= min_points; };
  std::vector<int> label(static_cast<size_t>(n), -2);  // -2 unvisited
  int next = 0;
  for (Index i = 0; i < n; ++i) {
    if (label[static_cast<size_t>(i)] != -2) continue;
    if (!core(i)) {
      label[static_cast<size_t>(i)] = -1;
      continue;
    }
    const int id = next++;
    label[static_cast<size_t>(i)] = id;
    std::deque<Index> queue{i};
    while (!queue.empty()) {
      const Index p = queue.front();
      queue.pop_front();
      if (!core(p)) continue;
      for (Index q : nbr[static_cast<size_t>(p)]) {
        int& l = label[static_cast<size_t>(q)];
        if (l == -2 || l == -1) {
          const bool fresh = l == -2;
          l = id;
          if (fresh) queue.push_back(q);
        }
      }
    }
  }
  return label;
}

Points grid_group(const Point3& origin, int nx, int ny, double spacing) {
  Points P(nx * ny, 3);
  for (int a = 0; a < nx; ++a) {
    for (int b = 0; b < ny; ++b) P.row(a * ny + b) = (origin + Point3(a * spacing, b * spacing, 0.0)).transpose();
  }
  return P;
}

TEST(Dbscan, TwoDenseGroupsFarApart) {
  Points P(100, 3);
  P.topRows(50) = grid_group(Point3::Zero(), 10, 5, 0.1);
  P.bottomRows(50) = grid_group(Point3(10.0, 0.0, 0.0), 10, 5, 0.1);
  const ClusterSet c = dbscan(PointCloud(P), 0.8, 30);
  EXPECT_EQ(c.cluster_count, 2);
  EXPECT_EQ(c.noise_count(), 0);
  EXPECT_EQ(c.labels[0], 0);
  EXPECT_EQ(c.labels[99], 1);
}

TEST(Dbscan, SparsePointsAreNoise) {
  const Points P = grid_group(Point3::Zero(), 5, 5, 2.0);
  const ClusterSet c = dbscan(PointCloud(P), 0.8, 2);
  EXPECT_EQ(c.cluster_count, 0);
  EXPECT_EQ(c.noise_count(), 25);
}

TEST(Dbscan, GroupBelowCoreThresholdIsNoise) {
  const Points P = grid_group(Point3::Zero(), 5, 2, 0.05);
  const ClusterSet c = dbscan(PointCloud(P), 0.8, 30);
  EXPECT_EQ(c.cluster_count, 0);
  EXPECT_EQ(c.noise_count(), 10);
}

TEST(Dbscan, MatchesReferenceImplementation) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> eps_dist(0.05, 0.6);
  std::uniform_int_distribution<int> mp_dist(1, 8);
  for (int trial = 0; trial < 40; ++trial) {
    const Points P = random_points(200, 300 + trial, 2.0);
    const double eps = eps_dist(rng);
    const int mp = mp_dist(rng);
    const ClusterSet c = dbscan(PointCloud(P), eps, mp);
    EXPECT_EQ(c.labels, reference_dbscan(P, eps, mp)) << "trial " << trial;
  }
}

TEST(Dbscan, LabelInvariants) {
  for (int trial = 0; trial < 10; ++trial) {
    const Points P = random_points(300, 400 + trial, 2.0);
    const ClusterSet c = dbscan(PointCloud(P), 0.4, 5);
    std::vector<int> sizes(static_cast<size_t>(c.cluster_count), 0);
    for (int l : c.labels) {
      ASSERT_GE(l, -1);
      ASSERT_LT(l, c.cluster_count);
      if (l >= 0) ++sizes[static_cast<size_t>(l)];
    }
    for (int s : sizes) EXPECT_GE(s, 1);
  }
}

std::set<std::set<std::vector<double>>> partition(const Points& P, const std::vector<int>& labels) {
  std::map<int, std::set<std::vector<double>>> groups;
  for (Index i = 0; i < P.rows(); ++i) groups[labels[static_cast<size_t>(i)]].insert({P(i, 0), P(i, 1), P(i, 2)});
  std::set<std::set<std::vector<double>>> out;
  for (auto& [l, g] : groups) out.insert(l < 0 ? std::set<std::vector<double>>{} : g);
  return out;
}

TEST(Dbscan, PermutationInvariantUpToRelabeling) {
  // Separated blobs plus isolated outliers: no border point is contested.
  Points P(160, 3);
  P.topRows(60) = grid_group(Point3::Zero(), 10, 6, 0.2);
  P.middleRows(60, 90) = grid_group(Point3(20.0, 0.0, 0.0), 10, 9, 0.2);
  P.bottomRows(10) = grid_group(Point3(-50.0, -50.0, 3.0), 5, 2, 5.0);
  std::vector<Index> perm(static_cast<size_t>(P.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(5);
  const auto ref = partition(P, dbscan(PointCloud(P), 0.5, 4).labels);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Points Q(P.rows(), 3);
    for (Index i = 0; i < P.rows(); ++i) Q.row(i) = P.row(perm[static_cast<size_t>(i)]);
    EXPECT_EQ(partition(Q, dbscan(PointCloud(Q), 0.5, 4).labels), ref);
  }
}

TEST(Dbscan, Extremities) {
  const Points P = random_points(200, 31, 3.0);
  const ClusterSet tiny = dbscan(PointCloud(P), 1e-6, 2);
  EXPECT_EQ(tiny.cluster_count, 0);
  const ClusterSet huge_min = dbscan(PointCloud(P), 0.5, 100000);
  EXPECT_EQ(huge_min.cluster_count, 0);
  const ClusterSet whole = dbscan(PointCloud(P), 1e3, 200);
  EXPECT_EQ(whole.cluster_count, 1);
  EXPECT_EQ(whole.noise_count(), 0);
}

TEST(Dbscan, ClustersFromLabelsCompactsInOrder) {
  const ClusterSet c = clusters_from_labels({5, -1, 5, 2, -3, 2, 9});
  EXPECT_EQ(c.cluster_count, 3);
  EXPECT_EQ(c.labels, (std::vector<int>{0, -1, 0, 1, -1, 1, 2}));
  EXPECT_EQ(c.members(1), (std::vector<Index>{3, 5}));
}

}  // namespace
}  // namespace mbflow
