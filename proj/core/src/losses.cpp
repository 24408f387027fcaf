#include "mbflow/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "mbflow/error.hpp"

namespace mbflow {

void ChamferConfig::validate() const {
  if (!(truncation > 0.0)) throw Error("chamfer: truncation must be positive");
}

namespace {

// Mean clamped squared distance from every row of `from` to its nearest
// point in `index`. The gradient of each unclamped pair is written either to
// the querying row (grad_from) or to the matched indexed row (grad_to).
double directed_term(const Points& from, const SpatialIndex& index, double trunc2, Points* grad_from,
                     Points* grad_to) {
  const Index n = from.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Point3 p = from.row(i).transpose();
    const Index j = index.nearest(p).index;
    const Point3 q = index.points().row(j).transpose();
    const double d2 = (p - q).squaredNorm();
    if (d2 >= trunc2) {
      total += trunc2;
      continue;
    }
    total += d2;
    const Eigen::RowVector3d g = (2.0 * inv_n) * (p - q).transpose();
    if (grad_from) grad_from->row(i) += g;
    if (grad_to) grad_to->row(j) -= g;
  }
  return total * inv_n;
}

}  // namespace

ChamferTerms truncated_chamfer_terms(const Points& projected, const PointCloud& target,
                                     const ChamferConfig& cfg, const SpatialIndex& target_index) {
  cfg.validate();
  if (projected.rows() == 0) throw Error("chamfer: empty projected cloud");
  if (target_index.size() != target.size()) throw Error("chamfer: index does not match target cloud");
  check_finite(projected, "chamfer projected cloud");
  const double trunc2 = cfg.truncation * cfg.truncation;

  ChamferTerms out;
  out.gradient = Points::Zero(projected.rows(), 3);
  out.value = directed_term(projected, target_index, trunc2, &out.gradient, nullptr);
  if (cfg.bidirectional) {
    const SpatialIndex projected_index(projected);
    out.value += directed_term(target.matrix(), projected_index, trunc2, nullptr, &out.gradient);
  }
  return out;
}

double truncated_chamfer(const PointCloud& projected, const PointCloud& target, const ChamferConfig& cfg) {
  return truncated_chamfer_terms(projected.matrix(), target, cfg, build_index(target)).value;
}

ad::Var truncated_chamfer(ad::Var projected, const PointCloud& target, const ChamferConfig& cfg,
                          const SpatialIndex& target_index) {
  if (projected.cols() != 3) throw Error("chamfer: projected cloud must be n x 3");
  ChamferTerms terms = truncated_chamfer_terms(projected.value(), target, cfg, target_index);
  return projected.tape()->record(ad::Matrix::Constant(1, 1, terms.value), {projected},
                                  [grad = std::move(terms.gradient)](const ad::Matrix& g,
                                                                     std::span<ad::Matrix* const> in) {
                                    if (in[0]) *in[0] += g(0, 0) * grad;
                                  });
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd pairwise_distances(const Points& X) {
  const Index n = X.rows();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    const Eigen::RowVector3d xj = X.row(j);
    for (Index i = j + 1; i < n; ++i) {
      const double d = (X.row(i) - xj).norm();
      D(i, j) = d;
      D(j, i) = d;
    }
  }
  return D;
}

Eigen::MatrixXd adjacency_from_distances(const Eigen::MatrixXd& D, const Eigen::MatrixXd& Dhat, double d_thr) {
  if (!(d_thr > 0.0)) throw Error("adjacency: d_thr must be positive");
  if (D.rows() != Dhat.rows() || D.cols() != Dhat.cols()) throw Error("adjacency: distance shapes differ");
  const double t2 = d_thr * d_thr;
  return D.binaryExpr(Dhat, [t2](double d, double dh) {
    const double diff2 = (d - dh) * (d - dh);
    return diff2 >= t2 ? 0.0 : 1.0 - diff2 / t2;
  });
}

ConsistencyGraph adjacency(const Points& C, const Points& F, double d_thr) {
  if (C.rows() == 0) throw Error("adjacency: empty cluster");
  if (C.rows() != F.rows()) throw Error("adjacency: cluster and flow sizes differ");
  if (!(d_thr > 0.0)) throw Error("adjacency: d_thr must be positive");
  check_finite(C, "adjacency cluster");
  check_finite(F, "adjacency flow");
  ConsistencyGraph g{C, F, d_thr, {}};
  g.A = adjacency_from_distances(pairwise_distances(C), pairwise_distances(C + F), d_thr);
  return g;
}

ad::Var adjacency(ad::Var projected, const Eigen::MatrixXd& D, double d_thr) {
  const Points X = projected.value();
  if (X.cols() != 3 || X.rows() != D.rows()) throw Error("adjacency: projected cluster does not match D");
  check_finite(X, "adjacency projected cluster");
  Eigen::MatrixXd Dhat = pairwise_distances(X);
  Eigen::MatrixXd A = adjacency_from_distances(D, Dhat, d_thr);
  const double t2 = d_thr * d_thr;
  const Eigen::MatrixXd* Dp = &D;
  return projected.tape()->record(
      std::move(A), {projected},
      [X, Dhat = std::move(Dhat), Dp, t2](const ad::Matrix& G, std::span<ad::Matrix* const> in) {
        if (!in[0]) return;
        ad::Matrix& gx = *in[0];
        const Eigen::MatrixXd& D = *Dp;
        const Index n = X.rows();
        for (Index j = 0; j < n; ++j) {
          for (Index i = j + 1; i < n; ++i) {
            const double dh = Dhat(i, j);
            const double diff = D(i, j) - dh;
            if (dh <= 0.0 || diff * diff >= t2) continue;
            // dA/d(dhat) = 2 (d - dhat) / t2, and d(dhat)/dx_i = (x_i - x_j) / dhat.
            const double coef = (G(i, j) + G(j, i)) * 2.0 * diff / (t2 * dh);
            if (coef == 0.0) continue;
            const Eigen::RowVector3d delta = coef * (X.row(i) - X.row(j));
            gx.row(i) += delta;
            gx.row(j) -= delta;
          }
        }
      });
}

Eigen::VectorXd power_iteration(const Eigen::MatrixXd& A, int iterations) {
  if (A.rows() != A.cols() || A.rows() == 0) throw Error("power iteration: A must be square and non-empty");
  if (iterations < 1) throw Error("power iteration: need at least one iteration");
  Eigen::VectorXd v = Eigen::VectorXd::Ones(A.rows());
  Eigen::VectorXd w(A.rows());
  for (int k = 0; k < iterations; ++k) {
    w.noalias() = A * v;
    const double norm = w.norm();
    if (!(norm > 0.0)) throw Error("power iteration: A v vanished at step " + std::to_string(k));
    v = w / norm;
  }
  return v;
}

SpectralScore spectral_score(const Eigen::MatrixXd& A, int iterations) {
  SpectralScore out;
  out.v_star = power_iteration(A, iterations);
  out.iterations = iterations;
  out.s = out.v_star.dot(A * out.v_star) / static_cast<double>(A.rows());
  return out;
}

double mean_score(const Eigen::MatrixXd& A) {
  const double n = static_cast<double>(A.rows());
  return A.sum() / (n * n);
}

ad::Var spectral_score(ad::Var A, int iterations, bool stop_grad) {
  const Index n = A.rows();
  if (A.cols() != n || n == 0) throw Error("spectral score: A must be square and non-empty");
  const double inv_n = 1.0 / static_cast<double>(n);
  if (stop_grad) {
    Eigen::VectorXd v = power_iteration(A.value(), iterations);
    const double s = v.dot(A.value() * v) * inv_n;
    return A.tape()->record(ad::Matrix::Constant(1, 1, s), {A},
                            [v = std::move(v), inv_n](const ad::Matrix& g, std::span<ad::Matrix* const> in) {
                              if (in[0]) in[0]->noalias() += (g(0, 0) * inv_n) * v * v.transpose();
                            });
  }
  ad::Tape& tape = *A.tape();
  if (iterations < 1) throw Error("power iteration: need at least one iteration");
  ad::Var v = tape.constant(ad::Matrix::Ones(n, 1));
  for (int k = 0; k < iterations; ++k) {
    ad::Var w = ad::matmul(A, v);
    v = ad::div_scalar(w, ad::sqrt(ad::sum(ad::square(w))));
  }
  return ad::scale(ad::sum(ad::hadamard(v, ad::matmul(A, v))), inv_n);
}

// ---------------------------------------------------------------------------

void MultiBodyConfig::validate() const {
  if (!(d_thr > 0.0)) throw Error("multibody: d_thr must be positive");
  if (power_iters < 1) throw Error("multibody: power_iters must be positive");
  if (min_cluster_size < 1) throw Error("multibody: min_cluster_size must be positive");
  if (max_cluster_points < 1) throw Error("multibody: max_cluster_points must be positive");
  if (!(score_floor > 0.0)) throw Error("multibody: score_floor must be positive");
}

MultiBodyRegularizer::MultiBodyRegularizer(const PointCloud& source, const ClusterSet& clusters,
                                           const MultiBodyConfig& cfg)
    : cfg_(cfg), source_size_(source.size()) {
  cfg_.validate();
  if (static_cast<Index>(clusters.labels.size()) != source.size()) {
    throw Error("multibody: cluster labels (" + std::to_string(clusters.labels.size()) +
                ") do not match the source cloud (" + std::to_string(source.size()) + ")");
  }
  std::mt19937_64 rng(cfg_.subsample_seed);
  for (auto& members : clusters.all_members()) {
    if (static_cast<Index>(members.size()) < cfg_.min_cluster_size) continue;
    if (static_cast<Index>(members.size()) > cfg_.max_cluster_points) {
      std::shuffle(members.begin(), members.end(), rng);
      members.resize(static_cast<size_t>(cfg_.max_cluster_points));
      std::sort(members.begin(), members.end());
    }
    Cluster c;
    c.points.resize(static_cast<Index>(members.size()), 3);
    for (size_t k = 0; k < members.size(); ++k) c.points.row(static_cast<Index>(k)) = source.matrix().row(members[k]);
    c.distances = pairwise_distances(c.points);
    c.indices = std::move(members);
    clusters_.push_back(std::move(c));
  }
}

std::vector<std::vector<Index>> MultiBodyRegularizer::cluster_indices() const {
  std::vector<std::vector<Index>> out;
  for (const auto& c : clusters_) out.push_back(c.indices);
  return out;
}

void MultiBodyRegularizer::check_flow(const Points& flow) const {
  if (flow.rows() != source_size_) {
    throw Error("multibody: flow has " + std::to_string(flow.rows()) + " rows, source has " +
                std::to_string(source_size_));
  }
}

std::vector<double> MultiBodyRegularizer::scores(const Points& flow) const {
  check_flow(flow);
  std::vector<double> out;
  out.reserve(clusters_.size());
  for (const auto& c : clusters_) {
    Points projected(c.points.rows(), 3);
    for (size_t k = 0; k < c.indices.size(); ++k) {
      projected.row(static_cast<Index>(k)) = c.points.row(static_cast<Index>(k)) + flow.row(c.indices[k]);
    }
    const Eigen::MatrixXd A = adjacency_from_distances(c.distances, pairwise_distances(projected), cfg_.d_thr);
    out.push_back(spectral_score(A, cfg_.power_iters).s);
  }
  return out;
}

double MultiBodyRegularizer::evaluate(const Points& flow) const {
  check_finite(flow, "multibody flow");
  const auto s = scores(flow);
  if (s.empty()) return 0.0;
  const double avg = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  return -std::log(std::max(avg, cfg_.score_floor));
}

ad::Var MultiBodyRegularizer::evaluate(ad::Var flow) const {
  check_flow(flow.value());
  ad::Tape& tape = *flow.tape();
  if (clusters_.empty()) return tape.constant(ad::Matrix::Zero(1, 1));
  ad::Var total;
  for (const auto& c : clusters_) {
    ad::Var projected = ad::gather_rows(flow, c.indices) + tape.constant(c.points);
    ad::Var A = adjacency(projected, c.distances, cfg_.d_thr);
    ad::Var s = spectral_score(A, cfg_.power_iters, cfg_.stop_grad_eigvec);
    total = total.valid() ? ad::add(total, s) : s;
  }
  ad::Var avg = ad::scale(total, 1.0 / static_cast<double>(clusters_.size()));
  return ad::neg(ad::log(ad::clamp_min(avg, cfg_.score_floor)));
}

double multibody_loss(const PointCloud& P, const FlowField& F, const ClusterSet& clusters,
                      const MultiBodyConfig& cfg) {
  if (P.size() != F.size()) throw Error("multibody: cloud and flow lengths differ");
  return MultiBodyRegularizer(P, clusters, cfg).evaluate(F.matrix());
}

// ---------------------------------------------------------------------------

SceneFlowObjective::SceneFlowObjective(PointCloud source, PointCloud target, ChamferConfig chamfer, double omega,
                                       std::shared_ptr<const MultiBodyRegularizer> regularizer)
    : source_(std::move(source)),
      target_(std::move(target)),
      chamfer_(chamfer),
      omega_(omega),
      regularizer_(std::move(regularizer)),
      target_index_(target_.matrix()) {
  chamfer_.validate();
  if (!std::isfinite(omega_) || omega_ < 0.0) throw Error("objective: omega must be finite and >= 0");
  if (regularizer_ && regularizer_->source_size() != source_.size()) {
    throw Error("objective: regularizer was built for a different source cloud");
  }
}

ObjectiveTerms SceneFlowObjective::evaluate(const NeuralPrior& net, bool with_gradient) const {
  ad::Tape tape;
  const auto binding = net.bind(tape);
  ad::Var input = tape.constant(source_.matrix());
  ad::Var flow = net.forward(binding, input);
  ObjectiveTerms out;
  if (!flow.value().allFinite()) {
    // Overflowing network: report a non-finite loss instead of failing inside a loss term.
    out.total = out.chamfer = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  ad::Var cd = truncated_chamfer(flow + input, target_, chamfer_, target_index_);

  out.chamfer = cd.scalar();
  ad::Var total = cd;
  if (regularized()) {
    ad::Var mb = regularizer_->evaluate(flow);
    out.multibody = mb.scalar();
    total = cd + omega_ * mb;
  }
  out.total = total.scalar();
  if (with_gradient) {
    tape.backward(total);
    out.gradient = net.gradient(tape, binding);
  }
  return out;
}

ObjectiveTerms total_loss(const PointCloud& P1, const PointCloud& P2, const NeuralPrior& net,
                          const ClusterSet& clusters, const ChamferConfig& chamfer,
                          const MultiBodyConfig& multibody, double omega) {
  auto reg = std::make_shared<const MultiBodyRegularizer>(P1, clusters, multibody);
  return SceneFlowObjective(P1, P2, chamfer, omega, std::move(reg)).evaluate(net);
}

}  // namespace mbflow
