#pragma once

#include <functional>
#include <vector>

#include "mbflow/neural_prior.hpp"
#include "mbflow/optimizer.hpp"

namespace mbflow {

/// Positions of a fixed set of points over frames 1..T, stored frame-major.
class TrajectorySet {
 public:
  TrajectorySet() = default;
  /// All frames must have the same number of rows; at least one frame.
  explicit TrajectorySet(std::vector<Points> frames);

  Index point_count() const { return frames_.empty() ? 0 : frames_.front().rows(); }
  int frame_count() const { return static_cast<int>(frames_.size()); }
  /// Positions at 1-based frame t.
  const Points& frame(int t) const;
  Point3 position(Index point, int t) const { return frame(t).row(point).transpose(); }
  const std::vector<Points>& frames() const { return frames_; }

 private:
  std::vector<Points> frames_;
};

/// Flow of the field fitted for pair (t, t+1), evaluated at `positions`.
using PairFieldFn = std::function<Points(int t, const Points& positions)>;

/// Forward Euler: x_1 = seeds, x_{t+1} = x_t + field_t(x_t).
TrajectorySet integrate_fields(const Points& seeds, int frame_count, const PairFieldFn& field);

struct EulerResult {
  TrajectorySet trajectories;
  std::vector<SolveReport> pair_reports;  // one per consecutive pair
};

/// Fits one scene-flow field per consecutive pair of sensor frames and chains
/// them at the propagated positions of the first frame's points. Pair solves
/// run on up to `jobs` threads; results do not depend on scheduling.
EulerResult integrate_euler(const std::vector<PointCloud>& sequence, const SolveConfig& cfg, int jobs = 1);

struct TrajectoryFieldConfig {
  int embed_dim = 4;
  double freq_base = 1.0;  // frequency k uses cos(pi * freq_base * k * tau)
  double cycle_weight = 1.0;
  int steps = 3000;

  void validate() const;
};

/// Time-conditioned motion field f = net(p, embed(t), embed(t_hat)); p + f is
/// the estimate at t_hat of a point seen at p at time t.
class TrajectoryField {
 public:
  TrajectoryField(NeuralPrior net, int frame_count, int embed_dim, double freq_base);

  static MlpArchitecture architecture(MlpArchitecture base, int embed_dim);

  int frame_count() const { return frame_count_; }
  const NeuralPrior& network() const { return net_; }

  /// Cosine encoding of a (possibly fractional) time in [1, T].
  Eigen::RowVectorXd embed(double t) const;

  /// Throws if t or t_hat lies outside [1, T].
  Points query(const Points& p, double t, double t_hat) const;
  Point3 query(const Point3& p, double t, double t_hat) const;
  ad::Var query(const NeuralPrior::Binding& binding, ad::Var points, double t, double t_hat) const;

  /// Positions of `seeds` (observed at `source_frame`) at every frame 1..T.
  TrajectorySet trajectories(const Points& seeds, int source_frame = 1) const;

 private:
  void check_time(double t) const;
  Eigen::MatrixXd inputs(const Points& p, double t, double t_hat) const;

  NeuralPrior net_;
  int frame_count_;
  int embed_dim_;
  double freq_base_;
};

struct FieldFitReport {
  TrajectoryField field;
  std::vector<LossRecord> trace;   // total, chamfer, multibody per step
  std::vector<double> cycle_trace; // round trip t -> x -> t per step
  std::vector<double> composition_trace;  // t -> h -> y against t -> y per step
  double final_cycle = 0.0;        // mean round-trip term over the last 10% of steps
  double wall_seconds = 0.0;
};

/// Mean squared round-trip error ||(p + f(p,t,x)) + f(., x, t) - p||^2.
double round_trip_residual(const TrajectoryField& field, const Points& points, double t, double x);

/// Fits a trajectory field over a whole sequence. Each step draws a source
/// frame t, applies Chamfer towards t-1 and t+1, cycle consistency through
/// random times (round trip t -> x -> t, and t -> y against a hop to a
/// neighbouring frame followed by that frame's flow to y) and, when regularized, the multi-body loss of frame t's
/// clusters (computed once per frame) on the t -> x flow.
FieldFitReport fit_trajectory_field(const std::vector<PointCloud>& sequence, const SolveConfig& cfg,
                                    const TrajectoryFieldConfig& tcfg);

}  // namespace mbflow
