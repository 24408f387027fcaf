#include "mbflow/synth.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "mbflow/error.hpp"
#include "mbflow/spatial_index.hpp"

namespace mbflow {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kSensorHeight = 1.7;

struct SurfaceSample {
  Eigen::Vector3d point;
  Eigen::Vector3d normal;
};

// Uniform sample on the outer surface of a shape (no bottom face).
SurfaceSample sample_surface(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Eigen::Vector3d& s = shape.size;
  switch (shape.kind) {
    case ShapeKind::kBox: {
      const double ax = s.y() * s.z();
      const double ay = s.x() * s.z();
      const double az = s.x() * s.y();
      const double pick = u(rng) * (2.0 * ax + 2.0 * ay + az);
      const double a = u(rng) - 0.5;
      const double b = u(rng) - 0.5;
      if (pick < 2.0 * ax) {
        const double side = pick < ax ? 1.0 : -1.0;
        return {{side * 0.5 * s.x(), a * s.y(), (b + 0.5) * s.z()}, {side, 0.0, 0.0}};
      }
      if (pick < 2.0 * ax + 2.0 * ay) {
        const double side = pick < 2.0 * ax + ay ? 1.0 : -1.0;
        return {{a * s.x(), side * 0.5 * s.y(), (b + 0.5) * s.z()}, {0.0, side, 0.0}};
      }
      return {{a * s.x(), b * s.y(), s.z()}, {0.0, 0.0, 1.0}};
    }
    case ShapeKind::kCylinder: {
      const double r = s.x();
      const double h = s.z();
      const double lateral = 2.0 * std::numbers::pi * r * h;
      const double cap = std::numbers::pi * r * r;
      if (u(rng) * (lateral + cap) < lateral) {
        const double phi = 2.0 * std::numbers::pi * u(rng);
        const Eigen::Vector3d n(std::cos(phi), std::sin(phi), 0.0);
        return {{r * n.x(), r * n.y(), h * u(rng)}, n};
      }
      const double rho = r * std::sqrt(u(rng));
      const double phi = 2.0 * std::numbers::pi * u(rng);
      return {{rho * std::cos(phi), rho * std::sin(phi), h}, {0.0, 0.0, 1.0}};
    }
    case ShapeKind::kWall: {
      // Two-sided plane in x-z; the normal is fixed up later to face the viewer.
      return {{(u(rng) - 0.5) * s.x(), 0.0, u(rng) * s.z()}, {0.0, 1.0, 0.0}};
    }
  }
  return {};
}

// Draws `count` surface points in the body frame. With a viewpoint, points whose
// outward normal faces away from it are rejected.
Points sample_shape(const Shape& shape, int count, std::mt19937_64& rng, const Eigen::Vector3d* viewpoint) {
  Points out(count, 3);
  int kept = 0;
  const long max_tries = 200L * std::max(count, 1);
  for (long tries = 0; kept < count; ++tries) {
    SurfaceSample s = sample_surface(shape, rng);
    if (viewpoint && tries < max_tries) {
      Eigen::Vector3d n = s.normal;
      if (shape.kind == ShapeKind::kWall && n.dot(*viewpoint - s.point) < 0.0) n = -n;
      if (n.dot(*viewpoint - s.point) <= 0.0) continue;
    }
    out.row(kept++) = s.point.transpose();
  }
  return out;
}

Points transform_rows(const RigidTransform& T, const Points& X) {
  Points out = X * T.rotation().transpose();
  out.rowwise() += T.translation().transpose();
  return out;
}

RigidTransform yaw_translate(double yaw, const Eigen::Vector3d& t) {
  return RigidTransform::FromAxisAngle(Eigen::Vector3d::UnitZ(), yaw, t);
}

struct Body {
  Shape shape;
  RigidTransform initial;  // body to world at frame 1
  RigidTransform step;     // body-frame increment per frame
  RigidTransform pose(int frame) const {  // 1-based
    RigidTransform p = initial;
    for (int k = 1; k < frame; ++k) p = p * step;
    return p;
  }
};

struct StaticPart {
  Shape shape;
  RigidTransform pose;
  int points = 0;
};

std::mt19937_64 frame_rng(std::uint64_t seed, int frame, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(frame), static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

std::vector<RigidTransform> ego_poses(const SceneSpec& spec) {
  std::vector<RigidTransform> poses;
  RigidTransform pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.0, 0.0, kSensorHeight));
  RigidTransform step;
  switch (spec.ego) {
    case EgoPreset::kNone:
      break;
    case EgoPreset::kForward:
      step = yaw_translate(0.0, {spec.ego_speed, 0.0, 0.0});
      break;
    case EgoPreset::kTurn:
      step = yaw_translate(spec.ego_yaw_deg * kDeg, {spec.ego_speed, 0.0, 0.0});
      break;
  }
  for (int t = 0; t < spec.frame_count; ++t) {
    poses.push_back(pose);
    pose = pose * step;
  }
  return poses;
}

std::vector<Body> make_bodies(const SceneSpec& spec) {
  std::mt19937_64 rng = frame_rng(spec.seed, -1, 0xb0d1e5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<Shape> defaults = {Shape{ShapeKind::kBox, {4.0, 1.8, 1.5}},
                                       Shape{ShapeKind::kCylinder, {0.5, 0.5, 1.8}},
                                       Shape{ShapeKind::kWall, {3.0, 0.0, 2.5}}};
  std::vector<Body> bodies;
  for (int k = 0; k < spec.body_count; ++k) {
    Body b;
    b.shape = spec.body_shapes.empty() ? defaults[static_cast<size_t>(k) % defaults.size()]
                                       : spec.body_shapes[static_cast<size_t>(k)];
    Eigen::Vector2d xy;
    if (!spec.body_positions.empty()) {
      xy = spec.body_positions[static_cast<size_t>(k)];
    } else {
      xy = {8.0 + 10.0 * (u(rng) - 0.5), (k - 0.5 * (spec.body_count - 1)) * spec.lane_spacing};
    }
    const double heading = spec.body_motions.empty() ? (u(rng) < 0.5 ? 0.0 : std::numbers::pi) : 0.0;
    b.initial = yaw_translate(heading, {xy.x(), xy.y(), 0.0});
    if (!spec.body_motions.empty()) {
      b.step = spec.body_motions[static_cast<size_t>(k)];
    } else {
      const double yaw = (2.0 * u(rng) - 1.0) * spec.rot_max_deg * kDeg;
      const double speed = (0.3 + 0.7 * u(rng)) * spec.trans_max;
      b.step = yaw_translate(yaw, {speed, 0.0, 0.0});
    }
    bodies.push_back(b);
  }
  return bodies;
}

// Two walls flanking the lanes, spanning the bodies' initial extent along x
// with a margin, dense enough for the default clustering radius.
std::vector<StaticPart> make_background(const SceneSpec& spec, const std::vector<Body>& bodies) {
  double x_min = 0.0;
  double x_max = 16.0;
  double y_max = 0.0;
  if (!bodies.empty()) {
    x_min = x_max = bodies.front().initial.translation().x();
    for (const auto& b : bodies) {
      x_min = std::min(x_min, b.initial.translation().x());
      x_max = std::max(x_max, b.initial.translation().x());
      y_max = std::max(y_max, std::abs(b.initial.translation().y()));
    }
  }
  const double margin = 6.0;
  const double half_width = y_max + 0.5 * spec.lane_spacing + 2.0;
  const Shape wall{ShapeKind::kWall, {x_max - x_min + 2.0 * margin, 0.0, 2.5}};
  const double xc = 0.5 * (x_min + x_max);
  const int first = spec.background_points / 2;
  std::vector<StaticPart> parts;
  parts.push_back({wall, yaw_translate(0.0, {xc, half_width, 0.0}), first});
  parts.push_back({wall, yaw_translate(0.0, {xc, -half_width, 0.0}), spec.background_points - first});
  return parts;
}

}  // namespace

std::string to_string(EgoPreset e) {
  switch (e) {
    case EgoPreset::kNone:
      return "none";
    case EgoPreset::kForward:
      return "forward";
    case EgoPreset::kTurn:
      return "turn";
  }
  return "none";
}

EgoPreset parse_ego_preset(const std::string& name) {
  if (name == "none") return EgoPreset::kNone;
  if (name == "forward") return EgoPreset::kForward;
  if (name == "turn") return EgoPreset::kTurn;
  throw FormatError("unknown ego preset '" + name + "' (expected none, forward or turn)");
}

void SceneSpec::validate() const {
  if (body_count < 0) throw Error("scene: body_count must be >= 0");
  if (body_count > 0 && points_per_body < 1) throw Error("scene: points_per_body must be >= 1");
  if (background_points < 0) throw Error("scene: background_points must be >= 0");
  if (body_count * points_per_body + background_points + (ground ? 1 : 0) < 1) {
    throw Error("scene: the scene would contain no points");
  }
  if (frame_count < 1) throw Error("scene: frame_count must be >= 1");
  if (rot_max_deg < 0.0 || trans_max < 0.0 || noise_sigma < 0.0) {
    throw Error("scene: rot_max, trans_max and noise_sigma must be >= 0");
  }
  if (!body_motions.empty() && static_cast<int>(body_motions.size()) != body_count) {
    throw Error("scene: body_motions must have one entry per body");
  }
  if (!body_shapes.empty() && static_cast<int>(body_shapes.size()) != body_count) {
    throw Error("scene: body_shapes must have one entry per body");
  }
  if (!body_positions.empty() && static_cast<int>(body_positions.size()) != body_count) {
    throw Error("scene: body_positions must have one entry per body");
  }
}

SyntheticScene generate(const SceneSpec& spec) {
  spec.validate();
  const int T = spec.frame_count;
  const auto ego = ego_poses(spec);
  const auto bodies = make_bodies(spec);
  auto background = make_background(spec, bodies);
  if (spec.ground) {
    const Eigen::Vector3d c = background.front().pose.translation();
    const double extent = background.front().shape.size.x();
    background.push_back({Shape{ShapeKind::kBox, {extent, 2.0 * c.y(), 0.0}}, yaw_translate(0.0, {c.x(), 0.0, 0.0}),
                          std::max(spec.background_points / 4, 1)});
  }

  // Each part: body-frame samples per frame, its world pose per frame, label.
  struct Part {
    std::vector<Points> samples;  // per frame (or one entry when not resampling)
    std::vector<RigidTransform> poses;
    int label;
  };
  std::vector<Part> parts;
  for (size_t k = 0; k < bodies.size(); ++k) {
    Part p{{}, {}, static_cast<int>(k)};
    for (int t = 1; t <= T; ++t) p.poses.push_back(bodies[k].pose(t));
    parts.push_back(std::move(p));
  }
  for (const auto& bg : background) {
    Part p{{}, std::vector<RigidTransform>(static_cast<size_t>(T), bg.pose), kBackgroundLabel};
    parts.push_back(std::move(p));
  }
  auto count_of = [&](size_t part) {
    return part < bodies.size() ? spec.points_per_body : background[part - bodies.size()].points;
  };
  auto shape_of = [&](size_t part) {
    return part < bodies.size() ? bodies[part].shape : background[part - bodies.size()].shape;
  };

  for (int t = 1; t <= T; ++t) {
    if (!spec.resample && t > 1) break;
    std::mt19937_64 rng = frame_rng(spec.seed, t, 0x5a3b1e);
    for (size_t k = 0; k < parts.size(); ++k) {
      if (count_of(k) == 0) {
        parts[k].samples.emplace_back(0, 3);
        continue;
      }
      const Eigen::Vector3d sensor_body = parts[k].poses[static_cast<size_t>(t - 1)].inverse() *
                                          ego[static_cast<size_t>(t - 1)].translation();
      const Eigen::Vector3d* view = spec.visible_only ? &sensor_body : nullptr;
      parts[k].samples.push_back(sample_shape(shape_of(k), count_of(k), rng, view));
    }
  }

  SyntheticScene scene;
  scene.spec = spec;
  std::vector<Points> frame_points;
  for (int t = 1; t <= T; ++t) {
    std::mt19937_64 noise_rng = frame_rng(spec.seed, t, 0x0153);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
    Index total = 0;
    for (const auto& p : parts) total += p.samples[spec.resample ? static_cast<size_t>(t - 1) : 0].rows();
    Points pts(total, 3);
    std::vector<int> labels;
    labels.reserve(static_cast<size_t>(total));
    Index row = 0;
    const RigidTransform to_sensor = ego[static_cast<size_t>(t - 1)].inverse();
    for (const auto& p : parts) {
      const Points& s = p.samples[spec.resample ? static_cast<size_t>(t - 1) : 0];
      if (s.rows() == 0) continue;
      const Points observed = transform_rows(to_sensor * p.poses[static_cast<size_t>(t - 1)], s);
      pts.middleRows(row, s.rows()) = observed;
      row += s.rows();
      labels.insert(labels.end(), static_cast<size_t>(s.rows()), p.label);
    }
    if (spec.noise_sigma > 0.0) {
      for (Index i = 0; i < pts.rows(); ++i) {
        for (int c = 0; c < 3; ++c) pts(i, c) += noise(noise_rng);
      }
    }
    frame_points.push_back(pts);
    scene.frames.emplace_back(std::move(pts), t);
    scene.labels.push_back(std::move(labels));
  }

  // Sensor-frame motion of a part from frame a to frame b (1-based).
  auto motion = [&](const Part& p, int a, int b) {
    return ego[static_cast<size_t>(b - 1)].inverse() * p.poses[static_cast<size_t>(b - 1)] *
           p.poses[static_cast<size_t>(a - 1)].inverse() * ego[static_cast<size_t>(a - 1)];
  };
  auto apply_by_part = [&](const Points& x, int from, int to) {
    Points out(x.rows(), 3);
    Index row = 0;
    for (const auto& p : parts) {
      const Index n = p.samples[spec.resample ? static_cast<size_t>(from - 1) : 0].rows();
      if (n == 0) continue;
      out.middleRows(row, n) = transform_rows(motion(p, from, to), x.middleRows(row, n));
      row += n;
    }
    return out;
  };

  for (int t = 1; t < T; ++t) {
    const Points& x = frame_points[static_cast<size_t>(t - 1)];
    scene.gt_flows.emplace_back(apply_by_part(x, t, t + 1) - x);
  }
  std::vector<Points> traj;
  for (int t = 1; t <= T; ++t) traj.push_back(t == 1 ? frame_points.front() : apply_by_part(frame_points.front(), 1, t));
  scene.gt_trajectories = TrajectorySet(std::move(traj));
  return scene;
}

SyntheticScene two_body_adversarial(const SceneSpec& base) {
  SceneSpec spec = base;
  spec.body_count = 2;
  const Shape car{ShapeKind::kBox, {4.0, 1.8, 1.5}};
  spec.body_shapes = {car, car};
  const double gap = 1.2;
  const double offset = 0.5 * car.size.y() + 0.5 * gap;
  spec.body_positions = {Eigen::Vector2d(10.0, offset), Eigen::Vector2d(10.0, -offset)};
  const double speed = spec.trans_max > 0.0 ? spec.trans_max : 1.0;
  spec.body_motions = {yaw_translate(0.0, {speed, 0.0, 0.0}), yaw_translate(0.0, {-speed, 0.0, 0.0})};
  spec.resample = true;
  spec.visible_only = true;
  return generate(spec);
}

Index cross_body_assignments(const SyntheticScene& scene, int pair, const FlowField& flow) {
  if (pair < 0 || pair + 1 >= static_cast<int>(scene.frames.size())) throw Error("cross_body: pair out of range");
  const PointCloud& src = scene.frames[static_cast<size_t>(pair)];
  const PointCloud& dst = scene.frames[static_cast<size_t>(pair + 1)];
  if (flow.size() != src.size()) throw Error("cross_body: flow does not match the source frame");
  const auto& src_labels = scene.labels[static_cast<size_t>(pair)];
  const auto& dst_labels = scene.labels[static_cast<size_t>(pair + 1)];
  const SpatialIndex index(dst.matrix());
  Index count = 0;
  for (Index i = 0; i < src.size(); ++i) {
    if (src_labels[static_cast<size_t>(i)] == kBackgroundLabel) continue;
    const auto nn = index.nearest(src[i] + flow[i]);
    count += dst_labels[static_cast<size_t>(nn.index)] != src_labels[static_cast<size_t>(i)] ? 1 : 0;
  }
  return count;
}

}  // namespace mbflow
