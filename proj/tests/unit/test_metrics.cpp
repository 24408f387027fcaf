#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mbflow/error.hpp"
#include "mbflow/metrics.hpp"
#include "mbflow/trajectory.hpp"
#include "support.hpp"

namespace mbflow {
namespace {

using testing::random_points;

FlowField constant_flow(Index n, double x, double y = 0.0, double z = 0.0) {
  Points F(n, 3);
  F.rowwise() = Eigen::RowVector3d(x, y, z);
  return FlowField(F);
}

TEST(FlowMetrics, PerfectPrediction) {
  const FlowField gt(random_points(100, 1));
  const FlowMetrics m = flow_metrics(gt, gt);
  EXPECT_EQ(m.epe, 0.0);
  EXPECT_EQ(m.acc_strict, 100.0);
  EXPECT_EQ(m.acc_relaxed, 100.0);
  EXPECT_EQ(m.angle_error, 0.0);
  EXPECT_EQ(m.n_points, 100);
}

TEST(FlowMetrics, AbsoluteClause) {
  const FlowMetrics m = flow_metrics(constant_flow(10, 1.04), constant_flow(10, 1.0));
  EXPECT_NEAR(m.epe, 0.04, 1e-15);
  EXPECT_EQ(m.acc_strict, 100.0);
  EXPECT_EQ(m.acc_relaxed, 100.0);
}

TEST(FlowMetrics, RelativeErrorClause) {
  // EPE 0.09 fails the 5 cm clause but the 4.5% relative error passes.
  const FlowMetrics m = flow_metrics(constant_flow(10, 2.09), constant_flow(10, 2.0));
  EXPECT_NEAR(m.epe, 0.09, 1e-15);
  EXPECT_EQ(m.acc_strict, 100.0);
  EXPECT_EQ(m.acc_relaxed, 100.0);
}

TEST(FlowMetrics, BothClausesFail) {
  const FlowMetrics m = flow_metrics(constant_flow(4, 1.2), constant_flow(4, 1.0));
  EXPECT_EQ(m.acc_strict, 0.0);
  EXPECT_EQ(m.acc_relaxed, 0.0);
}

TEST(FlowMetrics, MixedPercentages) {
  Points P = Points::Zero(4, 3);
  Points G = Points::Zero(4, 3);
  G.col(0).setConstant(10.0);
  P.col(0) << 10.0, 10.3, 10.8, 12.0;  // relative 0, 3%, 8%, 20%
  const FlowMetrics m = flow_metrics(FlowField(P), FlowField(G));
  EXPECT_EQ(m.acc_strict, 50.0);
  EXPECT_EQ(m.acc_relaxed, 75.0);
  EXPECT_NEAR(m.epe, (0.0 + 0.3 + 0.8 + 2.0) / 4.0, 1e-12);
}

TEST(FlowMetrics, ZeroGroundTruthUsesEpsilon) {
  const FlowMetrics m = flow_metrics(constant_flow(3, 0.07), constant_flow(3, 0.0));
  EXPECT_EQ(m.acc_strict, 0.0);
  EXPECT_EQ(m.acc_relaxed, 100.0);
}

TEST(FlowMetrics, AngleOfHomogeneousVectors) {
  // (1,0,0,1) against (0,1,0,1): cos = 1/2.
  const FlowMetrics m = flow_metrics(constant_flow(2, 1.0), constant_flow(2, 0.0, 1.0));
  EXPECT_NEAR(m.angle_error, std::numbers::pi / 3.0, 1e-12);
  // Zero against (1,0,0): cos = 1/sqrt(2).
  const FlowMetrics z = flow_metrics(constant_flow(2, 0.0), constant_flow(2, 1.0));
  EXPECT_NEAR(z.angle_error, std::numbers::pi / 4.0, 1e-12);
}

TEST(FlowMetrics, RejectsMismatch) {
  EXPECT_THROW(flow_metrics(FlowField::Zero(3), FlowField::Zero(4)), Error);
  EXPECT_THROW(flow_metrics(FlowField::Zero(0), FlowField::Zero(0)), Error);
}

TEST(FlowMetrics, Properties) {
  for (int trial = 0; trial < 20; ++trial) {
    const Points G = random_points(200, 100 + trial, 0.5);
    const Points P = G + 0.08 * random_points(200, 200 + trial);
    const FlowMetrics m = flow_metrics(FlowField(P), FlowField(G));
    EXPECT_GE(m.epe, 0.0);
    EXPECT_LE(m.acc_strict, m.acc_relaxed);
    EXPECT_GE(m.acc_strict, 0.0);
    EXPECT_LE(m.acc_relaxed, 100.0);
    // Permutation equivariance.
    Points Pr = P.colwise().reverse();
    Points Gr = G.colwise().reverse();
    const FlowMetrics r = flow_metrics(FlowField(Pr), FlowField(Gr));
    EXPECT_NEAR(r.epe, m.epe, 1e-12);
    EXPECT_EQ(r.acc_strict, m.acc_strict);
    // EPE is linear under uniform scaling.
    EXPECT_NEAR(flow_metrics(FlowField(3.0 * P), FlowField(3.0 * G)).epe, 3.0 * m.epe, 1e-12);
  }
}

TrajectorySet two_frame(const Points& a, const Points& b) { return TrajectorySet({a, b}); }

TEST(TrajMetrics, PerfectPrediction) {
  const TrajectorySet gt({random_points(10, 1), random_points(10, 2), random_points(10, 3)});
  const TrajMetrics m = traj_metrics(gt, gt, 1, 3);
  EXPECT_EQ(m.acc_05, 100.0);
  EXPECT_EQ(m.acc_10, 100.0);
  EXPECT_EQ(m.mean_error, 0.0);
}

TEST(TrajMetrics, AllOffBySevenTenths) {
  const Points seeds = random_points(8, 4);
  const Points end = random_points(8, 5);
  Points off = end;
  off.col(1).array() += 0.7;
  const TrajMetrics m = traj_metrics(two_frame(seeds, off), two_frame(seeds, end), 1, 2);
  EXPECT_EQ(m.acc_05, 0.0);
  EXPECT_EQ(m.acc_10, 100.0);
}

TEST(TrajMetrics, HalfNearHalfFar) {
  const Points seeds = random_points(10, 6);
  const Points end = random_points(10, 7);
  Points pred = end;
  for (Index i = 0; i < 10; ++i) pred(i, 2) += i < 5 ? 0.4 : 1.4;
  const TrajMetrics m = traj_metrics(two_frame(seeds, pred), two_frame(seeds, end), 1, 2);
  EXPECT_EQ(m.acc_05, 50.0);
  EXPECT_EQ(m.acc_10, 50.0);
  EXPECT_NEAR(m.mean_error, 0.9, 1e-12);
}

TEST(TrajMetrics, RejectsMismatchedSeedsAndRanges) {
  const Points seeds = random_points(5, 8);
  Points other = seeds;
  other(0, 0) += 0.1;
  EXPECT_THROW(traj_metrics(two_frame(seeds, seeds), two_frame(other, seeds), 1, 2), Error);
  EXPECT_THROW(traj_metrics(two_frame(seeds, seeds), two_frame(seeds, seeds), 1, 3), Error);
  EXPECT_THROW(traj_metrics(two_frame(seeds, seeds), TrajectorySet({random_points(4, 1), random_points(4, 2)}), 1, 2),
               Error);
}

}  // namespace
}  // namespace mbflow
