#pragma once

#include "mbflow/geometry.hpp"

namespace mbflow {

class TrajectorySet;

struct FlowMetrics {
  double epe = 0.0;          // meters
  double acc_strict = 0.0;   // percent, EPE < 0.05 m or relative error < 5%
  double acc_relaxed = 0.0;  // percent, EPE < 0.10 m or relative error < 10%
  double angle_error = 0.0;  // radians
  Index n_points = 0;
};

struct FlowThresholds {
  double strict_abs = 0.05;
  double strict_rel = 0.05;
  double relaxed_abs = 0.10;
  double relaxed_rel = 0.10;
  double rel_epsilon = 1e-12;  // guards zero-norm ground truth
};

/// Mean end-point error, strict/relaxed accuracy and mean angle error. The
/// angle is taken between the homogeneous vectors (f, 1) of prediction and
/// ground truth. Throws on empty or mismatched inputs.
FlowMetrics flow_metrics(const FlowField& pred, const FlowField& gt, const FlowThresholds& thr = {});

struct TrajMetrics {
  double acc_05 = 0.0;  // percent of endpoints within 0.5 m
  double acc_10 = 0.0;  // percent of endpoints within 1.0 m
  double mean_error = 0.0;
  int first = 1;
  int last = 25;
  Index n_points = 0;
};

/// Endpoint accuracy of predicted trajectories at frame `last` (1-based).
/// Predictions and ground truth must agree at `first` (the seeds, within
/// 1e-4 m) or this throws.
TrajMetrics traj_metrics(const TrajectorySet& pred, const TrajectorySet& gt, int first = 1, int last = 25);

}  // namespace mbflow
