#include "mbflow/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <cmath>
#include <string>

#include "mbflow/error.hpp"

namespace mbflow {

void check_finite(const Points& m, const char* what) {
  for (Index i = 0; i < m.rows(); ++i) {
    if (!m.row(i).allFinite()) {
      throw FormatError(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

PointCloud::PointCloud(Points points, int frame) : points_(std::move(points)), frame_(frame) {
  if (points_.rows() == 0) throw FormatError("point cloud must contain at least one point");
  check_finite(points_, "point cloud");
}

PointCloud PointCloud::FromPoints(const std::vector<Point3>& points, int frame) {
  Points m(static_cast<Index>(points.size()), 3);
  for (size_t i = 0; i < points.size(); ++i) m.row(static_cast<Index>(i)) = points[i].transpose();
  return PointCloud(std::move(m), frame);
}

FlowField::FlowField(Points vectors) : vectors_(std::move(vectors)) {
  check_finite(vectors_, "flow field");
}

RigidTransform::RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error("rigid transform: non-finite entries");
  }
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-9) throw Error("rigid transform: rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw Error("rigid transform: rotation determinant must be +1");
  }
}

RigidTransform RigidTransform::FromAxisAngle(const Eigen::Vector3d& axis, double angle,
                                             const Eigen::Vector3d& translation) {
  const double norm = axis.norm();
  if (norm == 0.0) {
    return RigidTransform(Eigen::Matrix3d::Identity(), translation);
  }
  return RigidTransform(Eigen::AngleAxisd(angle, axis / norm).toRotationMatrix(), translation);
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation_ = rotation_ * other.rotation_;
  out.translation_ = rotation_ * other.translation_ + translation_;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(rotation_.transpose() * translation_);
  return out;
}

PointCloud apply_transform(const RigidTransform& T, const PointCloud& P) {
  Points out = P.matrix() * T.rotation().transpose();
  out.rowwise() += T.translation().transpose();
  return PointCloud(std::move(out), P.frame());
}

PointCloud project_flow(const PointCloud& P, const FlowField& F) {
  if (P.size() != F.size()) {
    throw FormatError("project_flow: cloud has " + std::to_string(P.size()) + " points but flow has " +
                      std::to_string(F.size()));
  }
  return PointCloud(P.matrix() + F.matrix(), P.frame());
}

FlowField rigid_flow(const RigidTransform& T, const PointCloud& P) {
  return FlowField(apply_transform(T, P).matrix() - P.matrix());
}

}  // namespace mbflow
