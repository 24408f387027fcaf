#pragma once

#include <vector>

#include "mbflow/geometry.hpp"

namespace mbflow {

/// Density-based decomposition of a cloud into candidate rigid bodies.
struct ClusterSet {
  static constexpr int kNoise = -1;

  std::vector<int> labels;  // kNoise or a cluster id in [0, cluster_count)
  int cluster_count = 0;
  double eps = 0.8;
  int min_points = 30;

  /// Point indices of cluster `id`, ascending.
  std::vector<Index> members(int id) const;
  std::vector<std::vector<Index>> all_members() const;
  Index noise_count() const;
};

/// Deterministic DBSCAN with Euclidean radius `eps` (inclusive) and core
/// threshold `min_points` (a point counts itself). Seeds are visited in
/// ascending index order and clusters grow breadth-first, so a border point
/// reachable from two clusters joins the one created first.
ClusterSet dbscan(const PointCloud& P, double eps = 0.8, int min_points = 30);

/// Clusters from externally known labels (e.g. ground-truth bodies). Negative
/// labels become noise; remaining labels are compacted to 0..m-1 in order of
/// first appearance.
ClusterSet clusters_from_labels(const std::vector<int>& labels);

}  // namespace mbflow
