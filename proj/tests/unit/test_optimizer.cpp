#include <gtest/gtest.h>

#include <algorithm>

#include "mbflow/error.hpp"
#include "mbflow/metrics.hpp"
#include "mbflow/optimizer.hpp"
#include "mbflow/synth.hpp"
#include "support.hpp"

namespace mbflow {
namespace {

using testing::random_points;

SolveConfig fast_config(int iters = 300) {
  SolveConfig cfg;
  cfg.network.hidden_width = 32;
  cfg.network.hidden_layers = 2;
  cfg.max_iters = iters;
  cfg.patience = std::min(100, iters);
  return cfg;
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam adam(3, 0.1);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  adam.step(theta, Eigen::Vector3d(2.0, -0.5, 0.0));
  // Bias-corrected first step is lr * g / (|g| + eps').
  EXPECT_NEAR(theta[0], -0.1, 1e-8);
  EXPECT_NEAR(theta[1], 0.1, 1e-7);
  EXPECT_EQ(theta[2], 0.0);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, MinimizesQuadratic) {
  Adam adam(2, 0.05);
  Eigen::VectorXd theta(2);
  theta << 3.0, -2.0;
  for (int k = 0; k < 2000; ++k) adam.step(theta, 2.0 * theta);
  EXPECT_LT(theta.norm(), 1e-2);
}

TEST(SolveConfig, Validation) {
  SolveConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.patience = cfg.max_iters + 1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.omega = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.dbscan.eps = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(SolvePair, StaticSceneConvergesToZeroFlow) {
  const PointCloud P(random_points(200, 1, 5.0));
  const SolveReport r = solve_pair(P, P, SolveConfig{});
  const FlowMetrics m = flow_metrics(r.flow, FlowField::Zero(P.size()));
  EXPECT_LT(m.epe, 1e-3);
}

TEST(SolvePair, ReportInvariants) {
  const SyntheticScene scene = [] {
    SceneSpec spec;
    spec.points_per_body = 300;
    spec.background_points = 300;
    spec.seed = 3;
    return generate(spec);
  }();
  const SolveConfig cfg = fast_config(150);
  const SolveReport r = solve_pair(scene.frames[0], scene.frames[1], cfg);
  EXPECT_EQ(static_cast<int>(r.trace.size()), r.iterations);
  EXPECT_LE(r.iterations, cfg.max_iters);
  EXPECT_GE(r.best_iteration, 0);
  EXPECT_LT(r.best_iteration, r.iterations);
  EXPECT_EQ(r.best_loss, r.trace[static_cast<size_t>(r.best_iteration)].total);
  double best = r.trace.front().total;
  for (const auto& rec : r.trace) {
    best = std::min(best, rec.total);
    EXPECT_NEAR(rec.total, rec.chamfer + cfg.omega * rec.multibody, 1e-12);
  }
  EXPECT_EQ(best, r.best_loss);
  EXPECT_GT(r.cluster_count, 0);
  EXPECT_GE(r.wall_seconds, r.cluster_seconds);
  // The reported flow is the best iterate's network applied to P1.
  EXPECT_EQ(evaluate_field(r, scene.frames[0]).matrix(), r.flow.matrix());
}

TEST(SolvePair, EarlyStopFiresWithinPatience) {
  const PointCloud P(random_points(100, 4, 3.0));
  SolveConfig cfg = fast_config(1000);
  cfg.patience = 5;
  cfg.learning_rate = 0.05;  // noisy enough to stall
  const SolveReport r = solve_pair(P, PointCloud(random_points(100, 5, 3.0)), cfg);
  EXPECT_LE(r.iterations, r.best_iteration + 1 + cfg.patience);
  if (r.iterations < cfg.max_iters) {
    EXPECT_EQ(r.iterations, r.best_iteration + 1 + cfg.patience);
  }
}

TEST(SolvePair, ZeroOmegaEqualsBaselineBitwise) {
  SceneSpec spec;
  spec.points_per_body = 200;
  spec.background_points = 200;
  spec.seed = 6;
  const SyntheticScene scene = generate(spec);
  SolveConfig a = fast_config(80);
  a.omega = 0.0;
  SolveConfig b = fast_config(80);
  b.enable_rigidity = false;
  const SolveReport ra = solve_pair(scene.frames[0], scene.frames[1], a);
  const SolveReport rb = solve_pair(scene.frames[0], scene.frames[1], b);
  EXPECT_EQ(ra.flow.matrix(), rb.flow.matrix());
  EXPECT_EQ(ra.iterations, rb.iterations);
  for (size_t k = 0; k < ra.trace.size(); ++k) EXPECT_EQ(ra.trace[k].total, rb.trace[k].total);
}

TEST(SolvePair, DeterministicInSeed) {
  SceneSpec spec;
  spec.points_per_body = 200;
  spec.background_points = 200;
  spec.seed = 7;
  const SyntheticScene scene = generate(spec);
  const SolveConfig cfg = fast_config(60);
  const SolveReport r1 = solve_pair(scene.frames[0], scene.frames[1], cfg);
  const SolveReport r2 = solve_pair(scene.frames[0], scene.frames[1], cfg);
  EXPECT_EQ(r1.flow.matrix(), r2.flow.matrix());
  EXPECT_EQ(r1.network.parameters(), r2.network.parameters());
  SolveConfig other = cfg;
  other.seed = 8;
  EXPECT_NE(solve_pair(scene.frames[0], scene.frames[1], other).flow.matrix(), r1.flow.matrix());
}

TEST(SolvePair, PrecomputedClustersMatchInternalDbscan) {
  SceneSpec spec;
  spec.points_per_body = 200;
  spec.background_points = 200;
  spec.seed = 9;
  const SyntheticScene scene = generate(spec);
  const SolveConfig cfg = fast_config(40);
  const ClusterSet c = dbscan(scene.frames[0], cfg.dbscan.eps, cfg.dbscan.min_points);
  const SolveReport a = solve_pair(scene.frames[0], scene.frames[1], cfg);
  const SolveReport b = solve_pair(scene.frames[0], scene.frames[1], cfg, c);
  EXPECT_EQ(a.flow.matrix(), b.flow.matrix());
  EXPECT_EQ(a.cluster_count, c.cluster_count);
}

TEST(SolvePair, DivergenceCarriesIteration) {
  const PointCloud P(random_points(50, 10, 1.0));
  SolveConfig cfg = fast_config(50);
  cfg.learning_rate = 1e300;
  try {
    solve_pair(P, PointCloud(random_points(50, 11, 1.0)), cfg);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos) << e.what();
  }
}

TEST(EvaluateField, PureAndLipschitzBounded) {
  const auto net = NeuralPrior::Init(fast_config().network, 12);
  Points Q = random_points(50, 13, 2.0);
  Q.row(49) = Q.row(0);
  const FlowField F = evaluate_field(net, Q);
  // Equal up to the blocking of the matrix products.
  EXPECT_LT((F.matrix().row(49) - F.matrix().row(0)).cwiseAbs().maxCoeff(), 1e-14);
  // Midpoint of two nearby points stays within the Lipschitz bound of both.
  const double L = net.lipschitz_bound();
  for (Index i = 0; i + 1 < 40; ++i) {
    const Points a = Q.row(i);
    const Points b = Q.row(i) + 0.01 * (Q.row(i + 1) - Q.row(i));
    const Points mid = 0.5 * (a + b);
    const Points fm = evaluate_field(net, mid).matrix();
    const double half = 0.5 * (a - b).norm();
    EXPECT_LE((fm - evaluate_field(net, a).matrix()).norm(), L * half + 1e-12);
    EXPECT_LE((fm - evaluate_field(net, b).matrix()).norm(), L * half + 1e-12);
  }
  MlpArchitecture wide = fast_config().network;
  wide.input_dim = 5;
  EXPECT_THROW(evaluate_field(NeuralPrior::Init(wide, 1), Q), Error);
}

}  // namespace
}  // namespace mbflow
