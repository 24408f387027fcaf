#pragma once

#include <Eigen/Core>

#include <vector>

namespace mbflow {

using Index = Eigen::Index;
using Point3 = Eigen::Vector3d;
using Points = Eigen::MatrixX3d;

/// Ordered set of 3D points. Row i always refers to the same physical sample;
/// clouds, flows and cluster labels are linked by that index alone.
class PointCloud {
 public:
  /// Throws if `points` is empty or holds a non-finite coordinate (the
  /// message names the offending row).
  explicit PointCloud(Points points, int frame = 0);
  static PointCloud FromPoints(const std::vector<Point3>& points, int frame = 0);

  Index size() const { return points_.rows(); }
  Point3 operator[](Index i) const { return points_.row(i).transpose(); }
  const Points& matrix() const { return points_; }
  int frame() const { return frame_; }

 private:
  Points points_;
  int frame_ = 0;
};

/// Per-point displacement vectors aligned to a source cloud.
class FlowField {
 public:
  FlowField() = default;
  explicit FlowField(Points vectors);
  static FlowField Zero(Index n) { return FlowField(Points::Zero(n, 3)); }

  Index size() const { return vectors_.rows(); }
  Point3 operator[](Index i) const { return vectors_.row(i).transpose(); }
  const Points& matrix() const { return vectors_; }

 private:
  Points vectors_;
};

/// Proper rigid motion (rotation in SO(3), no reflections).
class RigidTransform {
 public:
  RigidTransform() = default;
  /// Throws unless rotation is orthonormal with determinant +1 (tol 1e-9).
  RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static RigidTransform Identity() { return {}; }
  static RigidTransform FromAxisAngle(const Eigen::Vector3d& axis, double angle,
                                      const Eigen::Vector3d& translation);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }

  Point3 operator*(const Point3& p) const { return rotation_ * p + translation_; }
  /// (a * b) applies b first, then a.
  RigidTransform operator*(const RigidTransform& other) const;
  RigidTransform inverse() const;

 private:
  Eigen::Matrix3d rotation_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

PointCloud apply_transform(const RigidTransform& T, const PointCloud& P);

/// output[i] = P[i] + F[i]. Throws on length mismatch.
PointCloud project_flow(const PointCloud& P, const FlowField& F);

/// The flow that moves every point of P by T: F[i] = T(p_i) - p_i.
FlowField rigid_flow(const RigidTransform& T, const PointCloud& P);

/// Throws FormatError if any coordinate is NaN/Inf, naming the row.
void check_finite(const Points& m, const char* what);

}  // namespace mbflow
