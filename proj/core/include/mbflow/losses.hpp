#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "mbflow/autodiff.hpp"
#include "mbflow/dbscan.hpp"
#include "mbflow/geometry.hpp"
#include "mbflow/neural_prior.hpp"
#include "mbflow/spatial_index.hpp"

namespace mbflow {

// ---------------------------------------------------------------------------
// Truncated Chamfer distance
// ---------------------------------------------------------------------------

struct ChamferConfig {
  double truncation = 2.0;  // meters; squared distances are clamped at truncation^2
  bool bidirectional = true;

  void validate() const;
};

struct ChamferTerms {
  double value = 0.0;
  Points gradient;  // d value / d projected, same shape as projected
};

/// Mean over projected points of min(nearest squared distance into target,
/// truncation^2), plus the symmetric term when bidirectional. Correspondences
/// are frozen for the gradient; clamped pairs contribute no gradient.
ChamferTerms truncated_chamfer_terms(const Points& projected, const PointCloud& target,
                                     const ChamferConfig& cfg, const SpatialIndex& target_index);

double truncated_chamfer(const PointCloud& projected, const PointCloud& target, const ChamferConfig& cfg);

ad::Var truncated_chamfer(ad::Var projected, const PointCloud& target, const ChamferConfig& cfg,
                          const SpatialIndex& target_index);

// ---------------------------------------------------------------------------
// Pairwise-distance consistency graph and its spectral score
// ---------------------------------------------------------------------------

struct ConsistencyGraph {
  Points points;  // C, n x 3
  Points flows;   // F, n x 3
  double d_thr = 0.03;
  Eigen::MatrixXd A;  // symmetric, unit diagonal, entries in [0, 1]
};

Eigen::MatrixXd pairwise_distances(const Points& X);

/// A[i,j] = max(0, 1 - (d_ij - dhat_ij)^2 / d_thr^2), exactly zero once
/// |d_ij - dhat_ij| >= d_thr.
Eigen::MatrixXd adjacency_from_distances(const Eigen::MatrixXd& D, const Eigen::MatrixXd& Dhat, double d_thr);

/// Throws on mismatched sizes, empty clusters, d_thr <= 0 or non-finite flow.
ConsistencyGraph adjacency(const Points& C, const Points& F, double d_thr);

/// Differentiable adjacency of the projected cluster `projected` (n x 3)
/// against the fixed source distances D.
ad::Var adjacency(ad::Var projected, const Eigen::MatrixXd& D, double d_thr);

struct SpectralScore {
  Eigen::VectorXd v_star;  // unit norm
  double s = 0.0;          // v*' A v* / n
  int iterations = 0;
};

/// v_{k+1} = A v_k / ||A v_k|| from the all-ones start. Throws if A v vanishes.
Eigen::VectorXd power_iteration(const Eigen::MatrixXd& A, int iterations);
SpectralScore spectral_score(const Eigen::MatrixXd& A, int iterations = 10);

/// 1' A 1 / n^2: the plain average of all pairwise consistencies.
double mean_score(const Eigen::MatrixXd& A);

/// s = v*' A v* / n on the tape. With stop_grad the eigenvector estimate is a
/// constant; otherwise gradients flow through every power-iteration step.
ad::Var spectral_score(ad::Var A, int iterations, bool stop_grad);

// ---------------------------------------------------------------------------
// Multi-body regularizer
// ---------------------------------------------------------------------------

struct MultiBodyConfig {
  double d_thr = 0.03;
  int power_iters = 10;
  int min_cluster_size = 2;
  Index max_cluster_points = 2048;  // larger clusters are subsampled once
  double score_floor = 1e-12;
  bool stop_grad_eigvec = true;
  std::uint64_t subsample_seed = 0;

  void validate() const;
};

/// Precomputed per-cluster state for L_MB = -log(max(mean_i s_i, floor)).
/// Noise points and clusters below min_cluster_size are never regularized.
class MultiBodyRegularizer {
 public:
  MultiBodyRegularizer(const PointCloud& source, const ClusterSet& clusters, const MultiBodyConfig& cfg);

  int active_clusters() const { return static_cast<int>(clusters_.size()); }
  const MultiBodyConfig& config() const { return cfg_; }
  Index source_size() const { return source_size_; }
  /// Source indices used for each active cluster (after subsampling).
  std::vector<std::vector<Index>> cluster_indices() const;

  /// Spectral score of each active cluster under `flow` (source_size x 3).
  std::vector<double> scores(const Points& flow) const;
  /// Returns 0 when no cluster is active.
  double evaluate(const Points& flow) const;
  ad::Var evaluate(ad::Var flow) const;

 private:
  struct Cluster {
    std::vector<Index> indices;
    Points points;
    Eigen::MatrixXd distances;
  };

  void check_flow(const Points& flow) const;

  MultiBodyConfig cfg_;
  Index source_size_ = 0;
  std::vector<Cluster> clusters_;
};

double multibody_loss(const PointCloud& P, const FlowField& F, const ClusterSet& clusters,
                      const MultiBodyConfig& cfg);

// ---------------------------------------------------------------------------
// Combined objective: L_CD(P1 + net(P1), P2) + omega * L_MB(P1, net(P1))
// ---------------------------------------------------------------------------

struct ObjectiveTerms {
  double total = 0.0;
  double chamfer = 0.0;
  double multibody = 0.0;
  Eigen::VectorXd gradient;  // over the network parameters; empty if not requested
};

class SceneFlowObjective {
 public:
  /// A null regularizer or omega == 0 leaves the Chamfer-only objective.
  SceneFlowObjective(PointCloud source, PointCloud target, ChamferConfig chamfer, double omega,
                     std::shared_ptr<const MultiBodyRegularizer> regularizer);

  ObjectiveTerms evaluate(const NeuralPrior& net, bool with_gradient = true) const;

  const PointCloud& source() const { return source_; }
  const PointCloud& target() const { return target_; }
  bool regularized() const { return regularizer_ && omega_ != 0.0; }

 private:
  PointCloud source_;
  PointCloud target_;
  ChamferConfig chamfer_;
  double omega_;
  std::shared_ptr<const MultiBodyRegularizer> regularizer_;
  SpatialIndex target_index_;
};

ObjectiveTerms total_loss(const PointCloud& P1, const PointCloud& P2, const NeuralPrior& net,
                          const ClusterSet& clusters, const ChamferConfig& chamfer,
                          const MultiBodyConfig& multibody, double omega);

}  // namespace mbflow
