#include "mbflow/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>

#include "mbflow/error.hpp"

namespace mbflow {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

SolveReport run(const PointCloud& P1, const PointCloud& P2, const SolveConfig& cfg,
                const std::optional<ClusterSet>& clusters, double cluster_seconds, Clock::time_point start) {
  std::shared_ptr<const MultiBodyRegularizer> reg;
  if (cfg.regularized() && clusters) {
    reg = std::make_shared<const MultiBodyRegularizer>(P1, *clusters, cfg.multibody);
  }
  const SceneFlowObjective objective(P1, P2, cfg.chamfer, cfg.regularized() ? cfg.omega : 0.0, reg);

  NeuralPrior net = NeuralPrior::Init(cfg.network, cfg.seed);
  Eigen::VectorXd theta = net.parameters();
  Eigen::VectorXd best_theta = theta;
  Adam adam(theta.size(), cfg.learning_rate, cfg.adam);

  SolveReport report{FlowField{}, net, {}, 0, 0, std::numeric_limits<double>::infinity(), 0.0, cluster_seconds,
                     clusters ? clusters->cluster_count : 0, reg ? reg->active_clusters() : 0};
  report.trace.reserve(static_cast<size_t>(cfg.max_iters));

  for (int it = 0; it < cfg.max_iters; ++it) {
    net.set_parameters(theta);
    const ObjectiveTerms terms = objective.evaluate(net);
    if (!std::isfinite(terms.total) || !terms.gradient.allFinite()) {
      throw DivergenceError("solve_pair: non-finite loss at iteration " + std::to_string(it), it);
    }
    report.trace.push_back({terms.total, terms.chamfer, terms.multibody});
    if (terms.total < report.best_loss) {
      report.best_loss = terms.total;
      report.best_iteration = it;
      best_theta = theta;
    }
    report.iterations = it + 1;
    if (it - report.best_iteration >= cfg.patience) break;
    adam.step(theta, terms.gradient);
  }

  report.network = NeuralPrior(cfg.network, best_theta, cfg.seed);
  report.flow = evaluate_flow(report.network, P1);
  report.wall_seconds = seconds_since(start);
  return report;
}

}  // namespace

void SolveConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("solve: learning_rate must be positive");
  if (max_iters < 1) throw Error("solve: max_iters must be positive");
  if (patience < 1 || patience > max_iters) throw Error("solve: patience must lie in [1, max_iters]");
  if (!std::isfinite(omega) || omega < 0.0) throw Error("solve: omega must be finite and >= 0");
  if (!(dbscan.eps > 0.0)) throw Error("solve: dbscan eps must be positive");
  if (dbscan.min_points < 1) throw Error("solve: dbscan min_points must be >= 1");
  chamfer.validate();
  multibody.validate();
  network.validate();
  if (network.input_dim != 3) throw Error("solve: scene flow networks take 3D points (input_dim = 3)");
}

Adam::Adam(Index size, double learning_rate, AdamParams params)
    : lr_(learning_rate), p_(params), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& gradient) {
  if (gradient.size() != theta.size() || theta.size() != m_.size()) throw Error("adam: size mismatch");
  ++t_;
  m_ = p_.beta1 * m_ + (1.0 - p_.beta1) * gradient;
  v_ = p_.beta2 * v_ + (1.0 - p_.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(p_.beta1, t_);
  const double c2 = 1.0 - std::pow(p_.beta2, t_);
  theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + p_.epsilon);
}

SolveReport solve_pair(const PointCloud& P1, const PointCloud& P2, const SolveConfig& cfg) {
  cfg.validate();
  const auto start = Clock::now();
  std::optional<ClusterSet> clusters;
  double cluster_seconds = 0.0;
  if (cfg.regularized()) {
    clusters = dbscan(P1, cfg.dbscan.eps, cfg.dbscan.min_points);
    cluster_seconds = seconds_since(start);
  }
  return run(P1, P2, cfg, clusters, cluster_seconds, start);
}

SolveReport solve_pair(const PointCloud& P1, const PointCloud& P2, const SolveConfig& cfg,
                       const ClusterSet& clusters) {
  cfg.validate();
  return run(P1, P2, cfg, clusters, 0.0, Clock::now());
}

FlowField evaluate_field(const NeuralPrior& net, const Points& queries) {
  return FlowField(net.forward(queries));
}

FlowField evaluate_field(const SolveReport& report, const PointCloud& queries) {
  return evaluate_field(report.network, queries.matrix());
}

}  // namespace mbflow
