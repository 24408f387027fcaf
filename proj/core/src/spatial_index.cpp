#include "mbflow/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mbflow/error.hpp"

namespace mbflow {

SpatialIndex::SpatialIndex(Points points, int leaf_size)
    : points_(std::move(points)), leaf_size_(leaf_size) {
  if (points_.rows() == 0) throw Error("spatial index: cannot index an empty cloud");
  if (leaf_size_ < 1) throw Error("spatial index: leaf size must be positive");
  check_finite(points_, "spatial index");
  order_.resize(static_cast<size_t>(points_.rows()));
  std::iota(order_.begin(), order_.end(), Index{0});
  nodes_.reserve(static_cast<size_t>(2 * points_.rows() / leaf_size_ + 1));
  build(0, points_.rows());
}

int SpatialIndex::build(Index begin, Index end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (Index k = begin; k < end; ++k) {
    const auto p = points_.row(order_[static_cast<size_t>(k)]).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all points coincide

  const Index mid = begin + (end - begin) / 2;
  auto first = order_.begin() + begin;
  std::nth_element(first, order_.begin() + mid, order_.begin() + end, [&](Index a, Index b) {
    return points_(a, axis) < points_(b, axis);
  });
  const double split = points_(order_[static_cast<size_t>(mid)], axis);

  nodes_[static_cast<size_t>(id)].axis = axis;
  nodes_[static_cast<size_t>(id)].split = split;
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<size_t>(id)].left = left;
  nodes_[static_cast<size_t>(id)].right = right;
  return id;
}

// Left subtree holds coordinates <= split, right subtree >= split.
void SpatialIndex::nearest_impl(int node_id, const Point3& q, Index& best, double& best_d2) const {
  const Node& node = nodes_[static_cast<size_t>(node_id)];
  if (node.axis < 0) {
    for (Index k = node.begin; k < node.end; ++k) {
      const Index i = order_[static_cast<size_t>(k)];
      const double d2 = (points_.row(i).transpose() - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
        best_d2 = d2;
        best = i;
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int near = diff <= 0.0 ? node.left : node.right;
  const int far = diff <= 0.0 ? node.right : node.left;
  nearest_impl(near, q, best, best_d2);
  if (diff * diff <= best_d2) nearest_impl(far, q, best, best_d2);
}

SpatialIndex::Neighbor SpatialIndex::nearest(const Point3& query) const {
  if (!query.allFinite()) throw Error("spatial index: non-finite query point");
  Index best = points_.rows();
  double best_d2 = std::numeric_limits<double>::infinity();
  nearest_impl(0, query, best, best_d2);
  return {best, std::sqrt(best_d2)};
}

void SpatialIndex::radius_impl(int node_id, const Point3& q, double r2, std::vector<Index>& out) const {
  const Node& node = nodes_[static_cast<size_t>(node_id)];
  if (node.axis < 0) {
    for (Index k = node.begin; k < node.end; ++k) {
      const Index i = order_[static_cast<size_t>(k)];
      if ((points_.row(i).transpose() - q).squaredNorm() <= r2) out.push_back(i);
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  if (diff <= 0.0 || diff * diff <= r2) radius_impl(node.left, q, r2, out);
  if (diff >= 0.0 || diff * diff <= r2) radius_impl(node.right, q, r2, out);
}

std::vector<Index> SpatialIndex::radius(const Point3& query, double radius) const {
  if (!query.allFinite()) throw Error("spatial index: non-finite query point");
  std::vector<Index> out;
  if (!(radius >= 0.0)) return out;
  radius_impl(0, query, radius * radius, out);
  std::sort(out.begin(), out.end());
  return out;
}

SpatialIndex build_index(const PointCloud& P, int leaf_size) { return SpatialIndex(P.matrix(), leaf_size); }

}  // namespace mbflow
