#include "mbflow/trajectory.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>

#include "mbflow/error.hpp"

namespace mbflow {

TrajectorySet::TrajectorySet(std::vector<Points> frames) : frames_(std::move(frames)) {
  if (frames_.empty()) throw Error("trajectory set: need at least one frame");
  for (const auto& f : frames_) {
    if (f.rows() != frames_.front().rows()) throw Error("trajectory set: frames differ in point count");
    check_finite(f, "trajectory");
  }
}

const Points& TrajectorySet::frame(int t) const {
  if (t < 1 || t > frame_count()) {
    throw Error("trajectory set: frame " + std::to_string(t) + " outside [1, " + std::to_string(frame_count()) +
                "]");
  }
  return frames_[static_cast<size_t>(t - 1)];
}

TrajectorySet integrate_fields(const Points& seeds, int frame_count, const PairFieldFn& field) {
  if (frame_count < 1) throw Error("integrate: frame count must be positive");
  std::vector<Points> frames;
  frames.reserve(static_cast<size_t>(frame_count));
  frames.push_back(seeds);
  for (int t = 1; t < frame_count; ++t) {
    const Points& x = frames.back();
    Points f = field(t, x);
    if (f.rows() != x.rows()) throw Error("integrate: field returned the wrong number of vectors");
    frames.push_back(x + f);
  }
  return TrajectorySet(std::move(frames));
}

EulerResult integrate_euler(const std::vector<PointCloud>& sequence, const SolveConfig& cfg, int jobs) {
  if (sequence.size() < 2) throw Error("integrate_euler: need at least two frames");
  const size_t pairs = sequence.size() - 1;
  std::vector<std::optional<SolveReport>> reports(pairs);
  std::vector<std::exception_ptr> errors(pairs);

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t t = next++; t < pairs; t = next++) {
      try {
        reports[t] = solve_pair(sequence[t], sequence[t + 1], cfg);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(pairs)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (size_t t = 0; t < pairs; ++t) {
    if (!errors[t]) continue;
    try {
      std::rethrow_exception(errors[t]);
    } catch (const std::exception& e) {
      throw Error("integrate_euler: pair " + std::to_string(t + 1) + "->" + std::to_string(t + 2) +
                  " failed: " + e.what());
    }
  }

  EulerResult out;
  for (auto& r : reports) out.pair_reports.push_back(std::move(*r));
  out.trajectories = integrate_fields(sequence.front().matrix(), static_cast<int>(sequence.size()),
                                      [&](int t, const Points& x) {
                                        return out.pair_reports[static_cast<size_t>(t - 1)].network.forward(x);
                                      });
  return out;
}

// ---------------------------------------------------------------------------

TrajectoryField::TrajectoryField(NeuralPrior net, int frame_count, int embed_dim, double freq_base)
    : net_(std::move(net)), frame_count_(frame_count), embed_dim_(embed_dim), freq_base_(freq_base) {
  if (frame_count_ < 2) throw Error("trajectory field: need at least two frames");
  if (embed_dim_ < 1) throw Error("trajectory field: embed_dim must be positive");
  if (!(freq_base_ > 0.0)) throw Error("trajectory field: freq_base must be positive");
  if (net_.architecture().input_dim != 3 + 2 * embed_dim_) {
    throw Error("trajectory field: network input must be 3 + 2 * embed_dim");
  }
}

MlpArchitecture TrajectoryField::architecture(MlpArchitecture base, int embed_dim) {
  base.input_dim = 3 + 2 * embed_dim;
  return base;
}

void TrajectoryField::check_time(double t) const {
  if (!(t >= 1.0 && t <= static_cast<double>(frame_count_))) {
    throw Error("trajectory field: time " + std::to_string(t) + " outside [1, " + std::to_string(frame_count_) +
                "]");
  }
}

Eigen::RowVectorXd TrajectoryField::embed(double t) const {
  check_time(t);
  const double tau = (t - 1.0) / static_cast<double>(frame_count_ - 1);
  Eigen::RowVectorXd e(embed_dim_);
  for (int k = 0; k < embed_dim_; ++k) {
    e[k] = std::cos(std::numbers::pi * freq_base_ * static_cast<double>(k + 1) * tau);
  }
  return e;
}

Eigen::MatrixXd TrajectoryField::inputs(const Points& p, double t, double t_hat) const {
  Eigen::MatrixXd in(p.rows(), 3 + 2 * embed_dim_);
  in.leftCols(3) = p;
  in.middleCols(3, embed_dim_).rowwise() = embed(t);
  in.rightCols(embed_dim_).rowwise() = embed(t_hat);
  return in;
}

Points TrajectoryField::query(const Points& p, double t, double t_hat) const {
  return net_.forward(inputs(p, t, t_hat));
}

Point3 TrajectoryField::query(const Point3& p, double t, double t_hat) const {
  Points m(1, 3);
  m.row(0) = p.transpose();
  return query(m, t, t_hat).row(0).transpose();
}

ad::Var TrajectoryField::query(const NeuralPrior::Binding& binding, ad::Var points, double t, double t_hat) const {
  ad::Tape& tape = *points.tape();
  const Index n = points.rows();
  ad::Matrix times(n, 2 * embed_dim_);
  times.leftCols(embed_dim_).rowwise() = embed(t);
  times.rightCols(embed_dim_).rowwise() = embed(t_hat);
  return net_.forward(binding, ad::concat_cols({points, tape.constant(std::move(times))}));
}

TrajectorySet TrajectoryField::trajectories(const Points& seeds, int source_frame) const {
  check_time(source_frame);
  std::vector<Points> frames;
  for (int k = 1; k <= frame_count_; ++k) {
    frames.push_back(k == source_frame ? seeds : Points(seeds + query(seeds, source_frame, k)));
  }
  return TrajectorySet(std::move(frames));
}

double round_trip_residual(const TrajectoryField& field, const Points& points, double t, double x) {
  const Points forward = points + field.query(points, t, x);
  const Points back = forward + field.query(forward, x, t);
  return (back - points).rowwise().squaredNorm().mean();
}

void TrajectoryFieldConfig::validate() const {
  if (embed_dim < 1) throw Error("trajectory: embed_dim must be >= 1");
  if (!(freq_base > 0.0) || !std::isfinite(freq_base)) throw Error("trajectory: freq_base must be positive");
  if (!(cycle_weight >= 0.0) || !std::isfinite(cycle_weight)) throw Error("trajectory: cycle_weight must be >= 0");
  if (steps < 1) throw Error("trajectory: field_steps must be >= 1");
}

FieldFitReport fit_trajectory_field(const std::vector<PointCloud>& sequence, const SolveConfig& cfg,
                                    const TrajectoryFieldConfig& tcfg) {
  const auto start = std::chrono::steady_clock::now();
  if (sequence.size() < 2) throw Error("fit_trajectory_field: need at least two frames");
  tcfg.validate();
  SolveConfig scene_cfg = cfg;
  scene_cfg.network.input_dim = 3;
  scene_cfg.validate();

  const int T = static_cast<int>(sequence.size());
  const MlpArchitecture arch = TrajectoryField::architecture(cfg.network, tcfg.embed_dim);
  TrajectoryField field(NeuralPrior::Init(arch, cfg.seed), T, tcfg.embed_dim, tcfg.freq_base);

  std::vector<SpatialIndex> indices;
  std::vector<std::shared_ptr<const MultiBodyRegularizer>> regs(sequence.size());
  for (size_t k = 0; k < sequence.size(); ++k) {
    indices.emplace_back(sequence[k].matrix());
    if (cfg.regularized()) {
      const ClusterSet clusters = dbscan(sequence[k], cfg.dbscan.eps, cfg.dbscan.min_points);
      regs[k] = std::make_shared<const MultiBodyRegularizer>(sequence[k], clusters, cfg.multibody);
    }
  }

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> pick_frame(1, T);
  std::uniform_real_distribution<double> pick_time(1.0, static_cast<double>(T));

  Eigen::VectorXd theta = field.network().parameters();
  Adam adam(theta.size(), cfg.learning_rate, cfg.adam);
  FieldFitReport report{field, {}, {}, {}, 0.0, 0.0};

  for (int step = 0; step < tcfg.steps; ++step) {
    const int t = pick_frame(rng);
    const double x = pick_time(rng);
    const double y = pick_time(rng);
    NeuralPrior net(arch, theta, cfg.seed);
    const TrajectoryField current(net, T, tcfg.embed_dim, tcfg.freq_base);

    ad::Tape tape;
    const auto binding = net.bind(tape);
    const PointCloud& src_cloud = sequence[static_cast<size_t>(t - 1)];
    ad::Var src = tape.constant(src_cloud.matrix());

    ad::Var chamfer;
    for (int u : {t - 1, t + 1}) {
      if (u < 1 || u > T) continue;
      const auto& target = sequence[static_cast<size_t>(u - 1)];
      ad::Var proj = src + current.query(binding, src, t, u);
      ad::Var cd = truncated_chamfer(proj, target, cfg.chamfer, indices[static_cast<size_t>(u - 1)]);
      chamfer = chamfer.valid() ? chamfer + cd : cd;
    }

    ad::Var flow_x = current.query(binding, src, t, x);
    ad::Var fwd = src + flow_x;
    ad::Var back = fwd + current.query(binding, fwd, x, t);
    // Round trip t -> x -> t, plus composition: t -> y should agree with one
    // Chamfer-supervised hop to a neighbour h followed by h -> y. The hop path
    // is a fixed target, so supervision is bootstrapped outwards from t +- 1.
    const int h = (t == 1 || (t < T && (step & 1))) ? t + 1 : t - 1;
    ad::Var hop = src + current.query(binding, src, t, h);
    ad::Var via = ad::stop_gradient(hop + current.query(binding, hop, h, y));
    ad::Var direct = src + current.query(binding, src, t, y);
    const double inv_n = 1.0 / static_cast<double>(src_cloud.size());
    ad::Var cycle = ad::scale(ad::sum(ad::square(back - src)), inv_n);
    ad::Var compose = ad::scale(ad::sum(ad::square(via - direct)), inv_n);

    ad::Var total = chamfer + tcfg.cycle_weight * (cycle + compose);
    LossRecord rec{0.0, chamfer.scalar(), 0.0};
    if (cfg.regularized()) {
      ad::Var mb = regs[static_cast<size_t>(t - 1)]->evaluate(flow_x);
      rec.multibody = mb.scalar();
      total = total + cfg.omega * mb;
    }
    rec.total = total.scalar();
    if (!std::isfinite(rec.total)) {
      throw DivergenceError("fit_trajectory_field: non-finite loss at step " + std::to_string(step), step);
    }
    report.trace.push_back(rec);
    report.cycle_trace.push_back(cycle.scalar());
    report.composition_trace.push_back(compose.scalar());

    tape.backward(total);
    adam.step(theta, net.gradient(tape, binding));
  }

  const size_t tail = std::max<size_t>(1, report.cycle_trace.size() / 10);
  double acc = 0.0;
  for (size_t k = report.cycle_trace.size() - tail; k < report.cycle_trace.size(); ++k) acc += report.cycle_trace[k];
  report.final_cycle = acc / static_cast<double>(tail);
  report.field = TrajectoryField(NeuralPrior(arch, theta, cfg.seed), T, tcfg.embed_dim, tcfg.freq_base);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace mbflow
