#include "mbflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mbflow/error.hpp"
#include "mbflow/trajectory.hpp"

namespace mbflow {

FlowMetrics flow_metrics(const FlowField& pred, const FlowField& gt, const FlowThresholds& thr) {
  if (pred.size() == 0 || gt.size() == 0) throw Error("flow metrics: empty flow");
  if (pred.size() != gt.size()) {
    throw Error("flow metrics: prediction has " + std::to_string(pred.size()) + " vectors, ground truth " +
                std::to_string(gt.size()));
  }
  const Index n = pred.size();
  double epe_sum = 0.0;
  double angle_sum = 0.0;
  Index strict = 0;
  Index relaxed = 0;
  for (Index i = 0; i < n; ++i) {
    const Eigen::Vector3d p = pred[i];
    const Eigen::Vector3d g = gt[i];
    const double epe = (p - g).norm();
    const double rel = epe / std::max(g.norm(), thr.rel_epsilon);
    epe_sum += epe;
    strict += (epe < thr.strict_abs || rel < thr.strict_rel) ? 1 : 0;
    relaxed += (epe < thr.relaxed_abs || rel < thr.relaxed_rel) ? 1 : 0;

    // arccos of the normalized dot product, in the form that stays exact for
    // (nearly) parallel vectors.
    const Eigen::Vector4d ph = Eigen::Vector4d(p.x(), p.y(), p.z(), 1.0).normalized();
    const Eigen::Vector4d gh = Eigen::Vector4d(g.x(), g.y(), g.z(), 1.0).normalized();
    angle_sum += 2.0 * std::atan2((ph - gh).norm(), (ph + gh).norm());
  }
  const double dn = static_cast<double>(n);
  return {epe_sum / dn, 100.0 * static_cast<double>(strict) / dn, 100.0 * static_cast<double>(relaxed) / dn,
          angle_sum / dn, n};
}

TrajMetrics traj_metrics(const TrajectorySet& pred, const TrajectorySet& gt, int first, int last) {
  if (pred.point_count() != gt.point_count()) throw Error("trajectory metrics: point counts differ");
  if (pred.point_count() == 0) throw Error("trajectory metrics: no trajectories");
  if (first < 1 || last <= first || last > pred.frame_count() || last > gt.frame_count()) {
    throw Error("trajectory metrics: invalid frame range [" + std::to_string(first) + ", " + std::to_string(last) +
                "]");
  }
  const Points& pred_first = pred.frame(first);
  const Points& gt_first = gt.frame(first);
  if ((pred_first - gt_first).cwiseAbs().maxCoeff() > 1e-4) {
    throw Error("trajectory metrics: predicted and ground-truth seeds differ at frame " + std::to_string(first));
  }
  const Eigen::VectorXd err = (pred.frame(last) - gt.frame(last)).rowwise().norm();
  const double n = static_cast<double>(err.size());
  TrajMetrics m;
  m.acc_05 = 100.0 * static_cast<double>((err.array() < 0.5).count()) / n;
  m.acc_10 = 100.0 * static_cast<double>((err.array() < 1.0).count()) / n;
  m.mean_error = err.mean();
  m.first = first;
  m.last = last;
  m.n_points = err.size();
  return m;
}

}  // namespace mbflow
