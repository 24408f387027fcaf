#pragma once

#include <vector>

#include "mbflow/geometry.hpp"

namespace mbflow {

/// Balanced k-d tree over a fixed set of points. Queries return exactly what a
/// linear scan would, with ties broken towards the lowest point index.
class SpatialIndex {
 public:
  struct Neighbor {
    Index index = -1;
    double distance = 0.0;
  };

  /// Throws if `points` is empty or leaf_size < 1.
  explicit SpatialIndex(Points points, int leaf_size = 12);

  Index size() const { return points_.rows(); }
  const Points& points() const { return points_; }

  /// Throws on a non-finite query.
  Neighbor nearest(const Point3& query) const;

  /// Indices with ||p - query|| <= radius, sorted ascending.
  std::vector<Index> radius(const Point3& query, double radius) const;

 private:
  struct Node {
    Index begin = 0;
    Index end = 0;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
  };

  int build(Index begin, Index end);
  void nearest_impl(int node, const Point3& q, Index& best, double& best_d2) const;
  void radius_impl(int node, const Point3& q, double r2, std::vector<Index>& out) const;

  Points points_;
  int leaf_size_;
  std::vector<Index> order_;
  std::vector<Node> nodes_;
};

SpatialIndex build_index(const PointCloud& P, int leaf_size = 12);

}  // namespace mbflow
