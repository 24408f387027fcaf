#include <gtest/gtest.h>

#include <set>

#include "mbflow/error.hpp"
#include "mbflow/losses.hpp"
#include "mbflow/synth.hpp"
#include "support.hpp"

namespace mbflow {
namespace {

SceneSpec small_spec(std::uint64_t seed) {
  SceneSpec spec;
  spec.body_count = 3;
  spec.points_per_body = 300;
  spec.background_points = 400;
  spec.frame_count = 4;
  spec.rot_max_deg = 3.0;
  spec.seed = seed;
  return spec;
}

Points rows_of(const Points& P, const std::vector<int>& labels, int label) {
  std::vector<Index> idx;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) idx.push_back(static_cast<Index>(i));
  }
  Points out(static_cast<Index>(idx.size()), 3);
  for (size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = P.row(idx[k]);
  return out;
}

TEST(SceneSpec, Validation) {
  SceneSpec spec;
  spec.frame_count = 0;
  EXPECT_THROW(generate(spec), Error);
  spec = {};
  spec.noise_sigma = -1.0;
  EXPECT_THROW(generate(spec), Error);
  spec = {};
  spec.body_count = 0;
  spec.background_points = 0;
  EXPECT_THROW(generate(spec), Error);
  spec = {};
  spec.body_motions = {RigidTransform::Identity()};
  EXPECT_THROW(generate(spec), Error);
}

TEST(EgoPreset, Names) {
  EXPECT_EQ(parse_ego_preset("turn"), EgoPreset::kTurn);
  EXPECT_EQ(to_string(EgoPreset::kForward), "forward");
  EXPECT_THROW(parse_ego_preset("reverse"), Error);
}

TEST(Generate, ShapesAndCounts) {
  const SyntheticScene s = generate(small_spec(1));
  ASSERT_EQ(s.frames.size(), 4u);
  ASSERT_EQ(s.gt_flows.size(), 3u);
  ASSERT_EQ(s.labels.size(), 4u);
  EXPECT_EQ(s.gt_trajectories.frame_count(), 4);
  EXPECT_EQ(s.gt_trajectories.point_count(), s.frames[0].size());
  for (size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(static_cast<Index>(s.labels[t].size()), s.frames[t].size());
    if (t < 3) EXPECT_EQ(s.gt_flows[t].size(), s.frames[t].size());
    std::set<int> ids(s.labels[t].begin(), s.labels[t].end());
    EXPECT_EQ(ids, (std::set<int>{kBackgroundLabel, 0, 1, 2}));
  }
  EXPECT_EQ(s.gt_trajectories.frame(1), s.frames[0].matrix());
}

TEST(Generate, DeterministicInSeed) {
  const SyntheticScene a = generate(small_spec(2));
  const SyntheticScene b = generate(small_spec(2));
  const SyntheticScene c = generate(small_spec(3));
  for (size_t t = 0; t < a.frames.size(); ++t) {
    EXPECT_EQ(a.frames[t].matrix(), b.frames[t].matrix());
    EXPECT_EQ(a.labels[t], b.labels[t]);
  }
  EXPECT_EQ(a.gt_flows[1].matrix(), b.gt_flows[1].matrix());
  EXPECT_NE(a.frames[0].matrix(), c.frames[0].matrix());
}

TEST(Generate, ResamplingBreaksCorrespondences) {
  SceneSpec spec = small_spec(4);
  spec.resample = false;
  const SyntheticScene fixed = generate(spec);
  spec.resample = true;
  const SyntheticScene fresh = generate(spec);
  // Without resampling, frame t + gt flow is exactly frame t+1.
  EXPECT_LT((fixed.frames[0].matrix() + fixed.gt_flows[0].matrix() - fixed.frames[1].matrix()).cwiseAbs().maxCoeff(),
            1e-9);
  const Index n = std::min(fresh.frames[0].size(), fresh.frames[1].size());
  const Points moved = fresh.frames[0].matrix().topRows(n) + fresh.gt_flows[0].matrix().topRows(n);
  EXPECT_GT((moved - fresh.frames[1].matrix().topRows(n)).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Generate, StaticWorldHasZeroFlow) {
  SceneSpec spec;
  spec.body_count = 0;
  spec.background_points = 500;
  spec.frame_count = 3;
  const SyntheticScene s = generate(spec);
  for (const auto& f : s.gt_flows) EXPECT_EQ(f.matrix(), Points::Zero(f.size(), 3));
}

TEST(Generate, TranslatingBodyHasConstantFlow) {
  SceneSpec spec;
  spec.body_count = 1;
  spec.points_per_body = 400;
  spec.background_points = 0;
  spec.frame_count = 3;
  spec.body_motions = {RigidTransform(Eigen::Matrix3d::Identity(), Eigen::Vector3d(1.0, 0.0, 0.0))};
  const SyntheticScene s = generate(spec);
  for (const auto& f : s.gt_flows) {
    EXPECT_LT((f.matrix().rowwise() - Eigen::RowVector3d(1.0, 0.0, 0.0)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Generate, BodyFlowsAreRigid) {
  for (EgoPreset ego : {EgoPreset::kNone, EgoPreset::kForward, EgoPreset::kTurn}) {
    SceneSpec spec = small_spec(5);
    spec.ego = ego;
    const SyntheticScene s = generate(spec);
    for (size_t t = 0; t + 1 < s.frames.size(); ++t) {
      const Points P = s.frames[t].matrix();
      const Points Q = P + s.gt_flows[t].matrix();
      for (int body = -1; body < spec.body_count; ++body) {
        const Points src = rows_of(P, s.labels[t], body);
        const Points dst = rows_of(Q, s.labels[t], body);
        EXPECT_LT(testing::kabsch_residual(src, dst), 1e-9) << "body " << body << " ego " << to_string(ego);
      }
    }
  }
}

TEST(Generate, TrueLabelsGiveZeroMultibodyLoss) {
  SceneSpec spec = small_spec(6);
  spec.ego = EgoPreset::kTurn;
  const SyntheticScene s = generate(spec);
  std::vector<int> labels = s.labels[0];
  for (int& l : labels) l = l == kBackgroundLabel ? spec.body_count : l;
  const double loss = multibody_loss(s.frames[0], s.gt_flows[0], clusters_from_labels(labels), MultiBodyConfig{});
  EXPECT_NEAR(loss, 0.0, 1e-12);
}

TEST(Generate, NoiseIsAddedAfterPoses) {
  SceneSpec spec = small_spec(7);
  spec.noise_sigma = 0.02;
  spec.resample = false;
  const SyntheticScene noisy = generate(spec);
  spec.noise_sigma = 0.0;
  const SyntheticScene clean = generate(spec);
  const Points d = noisy.frames[0].matrix() - clean.frames[0].matrix();
  const double rms = std::sqrt(d.squaredNorm() / static_cast<double>(d.size()));
  EXPECT_NEAR(rms, 0.02, 0.002);
}

TEST(Adversarial, GroundTruthHasNoCrossBodyAssignments) {
  SceneSpec spec;
  spec.points_per_body = 800;
  spec.background_points = 600;
  spec.seed = 8;
  const SyntheticScene s = two_body_adversarial(spec);
  EXPECT_EQ(s.spec.body_count, 2);
  EXPECT_EQ(cross_body_assignments(s, 0, s.gt_flows[0]), 0);
  // Zero flow leaves the opposing bodies overlapping their neighbours.
  EXPECT_GE(cross_body_assignments(s, 0, FlowField::Zero(s.frames[0].size())), 0);
  EXPECT_THROW(cross_body_assignments(s, 1, s.gt_flows[0]), Error);
}

TEST(Adversarial, BodiesMoveOppositely) {
  SceneSpec spec;
  spec.seed = 9;
  const SyntheticScene s = two_body_adversarial(spec);
  const Points F = s.gt_flows[0].matrix();
  const Eigen::RowVector3d m0 = rows_of(F, s.labels[0], 0).colwise().mean();
  const Eigen::RowVector3d m1 = rows_of(F, s.labels[0], 1).colwise().mean();
  EXPECT_LT(m0.dot(m1), 0.0);
}

}  // namespace
}  // namespace mbflow
