// Shared helpers and independent oracles for the test binaries.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mbflow/geometry.hpp"
#include "mbflow/runtime.hpp"

namespace mbflow::testing {

// Same allocator settings as the command line tool.
inline const bool kAllocatorTuned = (tune_allocator(), true);

inline Points random_points(Index n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Points P(n, 3);
  for (Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) P(i, c) = u(rng);
  }
  return P;
}

inline RigidTransform random_transform(std::mt19937_64& rng, double max_translation = 5.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  const Eigen::Vector3d t(u(rng) * max_translation, u(rng) * max_translation, u(rng) * max_translation);
  return RigidTransform(q.normalized().toRotationMatrix(), t);
}

inline Points transform_points(const RigidTransform& T, const Points& P) {
  Points out(P.rows(), 3);
  for (Index i = 0; i < P.rows(); ++i) out.row(i) = (T * Point3(P.row(i).transpose())).transpose();
  return out;
}

/// Nearest neighbour by linear scan, ties to the lowest index.
inline std::pair<Index, double> scan_nearest(const Points& P, const Point3& q) {
  Index best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < P.rows(); ++i) {
    const double d2 = (P.row(i).transpose() - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return {best, std::sqrt(best_d2)};
}

/// Least-squares rigid fit dst ~ R src + t (Kabsch with reflection guard).
/// Returns the RMS residual.
inline double kabsch_residual(const Points& src, const Points& dst, Eigen::Matrix3d* R_out = nullptr,
                              Eigen::Vector3d* t_out = nullptr) {
  const Eigen::RowVector3d cs = src.colwise().mean();
  const Eigen::RowVector3d cd = dst.colwise().mean();
  const Eigen::MatrixX3d a = src.rowwise() - cs;
  const Eigen::MatrixX3d b = dst.rowwise() - cd;
  const Eigen::Matrix3d H = a.transpose() * b;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) D(2, 2) = -1.0;
  const Eigen::Matrix3d R = svd.matrixV() * D * svd.matrixU().transpose();
  const Eigen::Vector3d t = cd.transpose() - R * cs.transpose();
  if (R_out) *R_out = R;
  if (t_out) *t_out = t;
  const Eigen::MatrixX3d fit = (src * R.transpose()).rowwise() + t.transpose();
  return std::sqrt((fit - dst).rowwise().squaredNorm().mean());
}

/// RMS residual of the best fit dst ~ Q src + t over all orthogonal Q,
/// reflections included.
inline double orthogonal_fit_residual(const Points& src, const Points& dst) {
  const Eigen::RowVector3d cs = src.colwise().mean();
  const Eigen::RowVector3d cd = dst.colwise().mean();
  const Eigen::MatrixX3d a = src.rowwise() - cs;
  const Eigen::MatrixX3d b = dst.rowwise() - cd;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(a.transpose() * b, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d Q = svd.matrixV() * svd.matrixU().transpose();
  return std::sqrt(((a * Q.transpose()) - b).rowwise().squaredNorm().mean());
}

/// Random symmetric matrix with unit diagonal and entries in [0, 1].
inline Eigen::MatrixXd random_unit_diag_symmetric(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i) {
    A(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) A(i, j) = A(j, i) = u(rng);
  }
  return A;
}

/// Largest eigenvalue by a dense symmetric eigensolver.
inline double lambda_max(const Eigen::MatrixXd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

/// Central differences of f around x.
inline Eigen::VectorXd finite_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                       const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd y = x;
  for (Index k = 0; k < x.size(); ++k) {
    y[k] = x[k] + h;
    const double fp = f(y);
    y[k] = x[k] - h;
    const double fm = f(y);
    y[k] = x[k];
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// max_k |a_k - b_k| / max(|a_k|, |b_k|, floor).
inline double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Index k = 0; k < a.size(); ++k) {
    const double denom = std::max({std::abs(a[k]), std::abs(b[k]), floor});
    worst = std::max(worst, std::abs(a[k] - b[k]) / denom);
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mbflow_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mbflow::testing
