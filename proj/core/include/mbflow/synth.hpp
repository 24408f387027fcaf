#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mbflow/geometry.hpp"
#include "mbflow/trajectory.hpp"

namespace mbflow {

enum class EgoPreset { kNone, kForward, kTurn };

std::string to_string(EgoPreset e);
EgoPreset parse_ego_preset(const std::string& name);

enum class ShapeKind { kBox, kCylinder, kWall };

/// Surface primitive in its body frame (centered, z up, resting on z = 0).
struct Shape {
  ShapeKind kind = ShapeKind::kBox;
  Eigen::Vector3d size{4.0, 1.8, 1.5};  // box/wall: extents; cylinder: (radius, radius, height)
};

struct SceneSpec {
  int body_count = 2;
  int points_per_body = 800;
  int background_points = 1000;
  int frame_count = 2;
  double rot_max_deg = 1.0;  // per-frame yaw bound of each body
  double trans_max = 1.0;    // per-frame translation bound of each body, meters
  EgoPreset ego = EgoPreset::kNone;
  double ego_speed = 0.5;    // meters per frame for the forward/turn presets
  double ego_yaw_deg = 1.0;  // degrees per frame for the turn preset
  bool resample = true;      // draw fresh surface samples every frame
  bool visible_only = false; // keep only surfaces facing the sensor
  double noise_sigma = 0.0;  // meters, isotropic Gaussian
  bool ground = false;       // static ground patch, plumbing tests only
  double lane_spacing = 6.0; // lateral distance between body lanes, meters
  std::uint64_t seed = 0;
  /// Optional per-body increments (body frame, applied every frame). Bodies
  /// then start with identity heading, so a pure translation is also the
  /// world-frame flow.
  std::vector<RigidTransform> body_motions;
  /// Optional shapes, one per body; defaults cycle box, cylinder, wall.
  std::vector<Shape> body_shapes;
  /// Optional initial body centers (x, y); defaults to one lane per body.
  std::vector<Eigen::Vector2d> body_positions;

  void validate() const;
};

/// Label of static background points.
constexpr int kBackgroundLabel = -1;

struct SyntheticScene {
  std::vector<PointCloud> frames;
  std::vector<FlowField> gt_flows;  // gt_flows[t] lives on frames[t], t = 0..T-2
  std::vector<std::vector<int>> labels;  // body id per point, kBackgroundLabel for the static world
  TrajectorySet gt_trajectories;         // of frame-1 points
  SceneSpec spec;
};

/// Deterministic in spec.seed. Observations are expressed in the sensor frame,
/// so ground truth mixes object motion and ego motion. Ground-truth flow of a
/// point is the exact rigid motion of its body applied to the observed point.
SyntheticScene generate(const SceneSpec& spec);

/// Two boxes a short gap apart moving in opposite directions, observed with
/// sensor-facing resampling so that nearest neighbours often lie on the other
/// body. Uses spec for counts, noise, ego, frames and seed.
SyntheticScene two_body_adversarial(const SceneSpec& spec);

/// Count of points whose nearest target point (in frames[t+1]) under the
/// given flow lies on a different body than the point itself.
Index cross_body_assignments(const SyntheticScene& scene, int pair, const FlowField& flow);

}  // namespace mbflow
