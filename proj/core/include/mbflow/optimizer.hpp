#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mbflow/dbscan.hpp"
#include "mbflow/geometry.hpp"
#include "mbflow/losses.hpp"
#include "mbflow/neural_prior.hpp"

namespace mbflow {

struct DbscanParams {
  double eps = 0.8;
  int min_points = 30;
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct SolveConfig {
  double learning_rate = 0.003;
  int max_iters = 1000;
  int patience = 100;
  double omega = 1.0;
  bool enable_rigidity = true;
  ChamferConfig chamfer;
  MultiBodyConfig multibody;
  DbscanParams dbscan;
  MlpArchitecture network;
  AdamParams adam;
  std::uint64_t seed = 0;

  void validate() const;
  /// True when the multi-body term takes part in the objective.
  bool regularized() const { return enable_rigidity && omega != 0.0; }
};

struct LossRecord {
  double total = 0.0;
  double chamfer = 0.0;
  double multibody = 0.0;
};

struct SolveReport {
  FlowField flow;        // net(P1) at the best-loss iterate
  NeuralPrior network;   // parameters of the best-loss iterate
  std::vector<LossRecord> trace;
  int iterations = 0;
  int best_iteration = 0;
  double best_loss = 0.0;
  double wall_seconds = 0.0;
  double cluster_seconds = 0.0;  // DBSCAN, run once before the loop
  int cluster_count = 0;         // clusters found by DBSCAN
  int active_clusters = 0;       // clusters regularized after size filtering
};

/// Adam on a flat parameter vector.
class Adam {
 public:
  Adam(Index size, double learning_rate, AdamParams params = {});
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& gradient);
  int steps() const { return t_; }

 private:
  double lr_;
  AdamParams p_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  int t_ = 0;
};

/// Test-time fit of a neural prior from P1 to P2. Clusters P1 once, then runs
/// Adam on L_CD + omega * L_MB until max_iters or until the best total loss
/// has not improved for `patience` iterations. Throws DivergenceError on a
/// non-finite loss.
SolveReport solve_pair(const PointCloud& P1, const PointCloud& P2, const SolveConfig& cfg);

/// Same, with precomputed clusters (skips DBSCAN).
SolveReport solve_pair(const PointCloud& P1, const PointCloud& P2, const SolveConfig& cfg,
                       const ClusterSet& clusters);

/// Flow of a fitted field at arbitrary query points.
FlowField evaluate_field(const NeuralPrior& net, const Points& queries);
FlowField evaluate_field(const SolveReport& report, const PointCloud& queries);

}  // namespace mbflow
