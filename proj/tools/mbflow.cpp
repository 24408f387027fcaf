// mbflow: generate synthetic scenes, fit scene flow, integrate trajectories,
// evaluate predictions and run parameter sweeps.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mbflow/config.hpp"
#include "mbflow/dataio.hpp"
#include "mbflow/error.hpp"
#include "mbflow/metrics.hpp"
#include "mbflow/optimizer.hpp"
#include "mbflow/runtime.hpp"
#include "mbflow/synth.hpp"
#include "mbflow/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mbflow;

namespace {

/// Flags that were given on the command line, for echoing in reports.
std::map<std::string, std::string> given_flags(const CLI::App& app) {
  std::map<std::string, std::string> out;
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->count() == 0 || opt->get_name() == "--help") continue;
    std::string value;
    for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    out[opt->get_name()] = value;
  }
  return out;
}

RunConfig config_from(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

// ----------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int bodies = 2;
  int points_per_body = 800;
  int background = 1000;
  int frames = 2;
  double rot_max = 1.0;
  double trans_max = 1.0;
  std::string ego = "none";
  bool resample = true;
  bool visible_only = false;
  bool ground = false;
  bool adversarial = false;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

void cmd_synth(const SynthArgs& a) {
  if (a.frames < 2) throw Error("--frames must be >= 2 (flow needs at least one frame pair)");
  SceneSpec spec;
  spec.body_count = a.bodies;
  spec.points_per_body = a.points_per_body;
  spec.background_points = a.background;
  spec.frame_count = a.frames;
  spec.rot_max_deg = a.rot_max;
  spec.trans_max = a.trans_max;
  spec.ego = parse_ego_preset(a.ego);
  spec.resample = a.resample;
  spec.visible_only = a.visible_only;
  spec.ground = a.ground;
  spec.noise_sigma = a.noise;
  spec.seed = a.seed;
  const SyntheticScene scene = a.adversarial ? two_body_adversarial(spec) : generate(spec);
  write_scene(a.out, scene);
  std::cout << "wrote " << scene.frames.size() << " frames (" << scene.frames.front().size() << " points in frame 1) to "
            << a.out << "\n";
}

// ----------------------------------------------------------------------------

struct FlowArgs {
  std::string source, target, config, out, report, save_net, load_net, gt;
  bool no_rigidity = false;
  std::optional<std::uint64_t> seed;
};

void cmd_flow(const FlowArgs& a, const std::map<std::string, std::string>& flags) {
  RunConfig cfg = config_from(a.config);
  if (a.no_rigidity) cfg.solve.enable_rigidity = false;
  if (a.seed) cfg.solve.seed = *a.seed;
  const PointCloud P1 = read_cloud(a.source, 1);
  std::optional<FlowField> gt;
  if (!a.gt.empty()) gt = read_flow(a.gt, &P1);

  if (!a.load_net.empty()) {
    // Apply a saved field instead of fitting one.
    const NeuralPrior net = read_network(a.load_net);
    if (net.architecture().input_dim != 3) throw Error(a.load_net + ": not a scene flow network (input_dim != 3)");
    const FlowField f = evaluate_field(net, P1.matrix());
    if (!a.out.empty()) write_flow(a.out, f);
    if (gt) {
      const FlowMetrics m = flow_metrics(f, *gt);
      std::printf("epe %.4f  acc05 %.2f  acc10 %.2f\n", m.epe, m.acc_strict, m.acc_relaxed);
    }
    return;
  }
  if (a.target.empty()) throw Error("--target is required unless --load-net is given");
  const PointCloud P2 = read_cloud(a.target, 2);
  const SolveReport r = solve_pair(P1, P2, cfg.solve);
  std::optional<FlowMetrics> metrics;
  if (gt) metrics = flow_metrics(r.flow, *gt);

  if (!a.out.empty()) write_flow(a.out, r.flow);
  if (!a.save_net.empty()) write_network(a.save_net, r.network);
  if (!a.report.empty()) write_file_atomic(a.report, solve_report_json(r, cfg.solve, metrics, flags));
  std::printf("iterations %d  best %d  loss %.6g  clusters %d  time %.2fs", r.iterations, r.best_iteration,
              r.best_loss, r.active_clusters, r.wall_seconds);
  if (metrics) std::printf("  epe %.4f  acc05 %.2f  acc10 %.2f", metrics->epe, metrics->acc_strict, metrics->acc_relaxed);
  std::printf("\n");
}

// ----------------------------------------------------------------------------

struct TrajArgs {
  std::string seq, mode = "euler", config, out, report;
  bool no_rigidity = false;
  int jobs = 1;
  int last = 25;
  std::optional<std::uint64_t> seed;
};

void cmd_traj(const TrajArgs& a, const std::map<std::string, std::string>& flags) {
  if (a.mode != "euler" && a.mode != "field") throw Error("--mode must be euler or field");
  RunConfig cfg = config_from(a.config);
  if (a.no_rigidity) cfg.solve.enable_rigidity = false;
  if (a.seed) cfg.solve.seed = *a.seed;
  const Sequence seq = load_sequence(a.seq);
  if (seq.frames.size() < 2) throw Error(a.seq + ": need at least two frames");
  const int T = static_cast<int>(seq.frames.size());

  json report = {{"schema", "mbflow.traj_report"}, {"schema_version", 1}, {"mode", a.mode}, {"frames", T},
                 {"n_points", seq.frames.front().size()}, {"flags", flags}};
  TrajectorySet traj;
  if (a.mode == "euler") {
    const EulerResult res = integrate_euler(seq.frames, cfg.solve, thread_limit(a.jobs));
    traj = res.trajectories;
    json pairs = json::array();
    double wall = 0.0;
    for (const auto& p : res.pair_reports) {
      pairs.push_back({{"iterations", p.iterations}, {"best_loss", p.best_loss}, {"wall_seconds", p.wall_seconds},
                       {"active_clusters", p.active_clusters}});
      wall += p.wall_seconds;
    }
    report["pairs"] = pairs;
    report["wall_seconds"] = wall;
  } else {
    const FieldFitReport fit = fit_trajectory_field(seq.frames, cfg.solve, cfg.trajectory);
    traj = fit.field.trajectories(seq.frames.front().matrix(), 1);
    report["final_cycle_loss"] = fit.final_cycle;
    report["round_trip_residual"] = round_trip_residual(fit.field, seq.frames.front().matrix(), 1.0, T);
    report["steps"] = cfg.trajectory.steps;
    report["wall_seconds"] = fit.wall_seconds;
  }
  if (seq.gt_trajectories) {
    const TrajMetrics m = traj_metrics(traj, *seq.gt_trajectories, 1, std::min(a.last, T));
    report["metrics"] = json::parse(traj_metrics_json(m));
    std::printf("acc_05 %.2f  acc_10 %.2f  mean endpoint error %.4f (frames 1->%d)\n", m.acc_05, m.acc_10,
                m.mean_error, m.last);
  }
  if (!a.out.empty()) write_trajectories(a.out, traj);
  if (!a.report.empty()) write_file_atomic(a.report, report.dump(2) + "\n");
}

// ----------------------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, points, out;
  bool traj = false;
  int first = 1;
  int last = 25;
};

void cmd_eval(const EvalArgs& a) {
  std::string text;
  if (a.traj) {
    const TrajectorySet pred = read_trajectories(a.pred);
    const TrajectorySet gt = read_trajectories(a.gt);
    text = traj_metrics_json(traj_metrics(pred, gt, a.first, a.last));
  } else {
    std::optional<PointCloud> cloud;
    if (!a.points.empty()) cloud = read_cloud(a.points, 1);
    const FlowField pred = read_flow(a.pred, cloud ? &*cloud : nullptr);
    const FlowField gt = read_flow(a.gt, cloud ? &*cloud : nullptr);
    if (pred.size() != gt.size()) {
      throw Error("prediction has " + std::to_string(pred.size()) + " vectors but ground truth has " +
                  std::to_string(gt.size()));
    }
    text = flow_metrics_json(flow_metrics(pred, gt));
  }
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(a.out, text);
  }
}

// ----------------------------------------------------------------------------

struct SweepArgs {
  std::string param, values, seq, config, out;
  int pair = 1;
  int jobs = 1;
  bool no_rigidity = false;
};

struct SweepRow {
  std::string value;
  FlowMetrics metrics;
  double wall = 0.0;
  double cluster_wall = 0.0;
  int clusters = 0;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_number(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw Error(what + ": cannot parse '" + s + "' as a number");
  return v;
}

SolveConfig sweep_setting(SolveConfig cfg, const std::string& param, const std::string& value) {
  if (param == "dthr") {
    cfg.multibody.d_thr = to_number(value, "--values");
  } else if (param == "omega") {
    cfg.omega = to_number(value, "--values");
  } else {
    const auto colon = value.find(':');
    if (colon == std::string::npos) throw Error("--values: eps-minpts settings look like EPS:MINPTS, got '" + value + "'");
    cfg.dbscan.eps = to_number(value.substr(0, colon), "--values");
    const double mp = to_number(value.substr(colon + 1), "--values");
    if (mp != static_cast<int>(mp)) throw Error("--values: min_points must be an integer, got '" + value + "'");
    cfg.dbscan.min_points = static_cast<int>(mp);
  }
  cfg.validate();
  return cfg;
}

void cmd_sweep(const SweepArgs& a) {
  if (a.param != "dthr" && a.param != "omega" && a.param != "eps-minpts") {
    throw Error("--param must be dthr, omega or eps-minpts");
  }
  RunConfig cfg = config_from(a.config);
  if (a.no_rigidity) cfg.solve.enable_rigidity = false;
  const auto values = split_list(a.values);
  if (values.empty()) throw Error("--values is empty");
  std::vector<SolveConfig> settings;
  for (const auto& v : values) settings.push_back(sweep_setting(cfg.solve, a.param, v));

  const Sequence seq = load_sequence(a.seq);
  if (a.pair < 1 || a.pair >= static_cast<int>(seq.frames.size())) {
    throw Error("--pair must lie in [1, " + std::to_string(seq.frames.size() - 1) + "]");
  }
  if (seq.gt_flows.empty()) throw Error(a.seq + ": the sequence has no ground-truth flow");
  const PointCloud& P1 = seq.frames[static_cast<std::size_t>(a.pair - 1)];
  const PointCloud& P2 = seq.frames[static_cast<std::size_t>(a.pair)];
  const FlowField& gt = seq.gt_flows[static_cast<std::size_t>(a.pair - 1)];

  std::vector<SweepRow> rows(values.size());
  std::vector<std::exception_ptr> errors(values.size());
  std::size_t next = 0;
  std::mutex mu;
  auto worker = [&]() {
    while (true) {
      std::size_t k = 0;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= values.size()) return;
        k = next++;
      }
      try {
        const SolveReport r = solve_pair(P1, P2, settings[k]);
        rows[k] = {values[k], flow_metrics(r.flow, gt), r.wall_seconds, r.cluster_seconds, r.active_clusters};
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int jobs = std::min<int>(thread_limit(a.jobs), static_cast<int>(values.size()));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t k = 0; k < errors.size(); ++k) {
    if (errors[k]) {
      try {
        std::rethrow_exception(errors[k]);
      } catch (const std::exception& e) {
        throw Error("setting " + values[k] + ": " + e.what());
      }
    }
  }

  std::ostringstream csv;
  csv << "param,value,epe,acc_05,acc_10,angle_rad,wall_seconds,cluster_seconds,m\n";
  csv.precision(10);
  for (const auto& r : rows) {
    csv << a.param << "," << r.value << "," << r.metrics.epe << "," << r.metrics.acc_strict << ","
        << r.metrics.acc_relaxed << "," << r.metrics.angle_error << "," << r.wall << "," << r.cluster_wall << ","
        << r.clusters << "\n";
  }
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_file_atomic(a.out, csv.str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Multi-body rigid scene flow from point cloud pairs and sequences"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-body sequence");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--bodies", sa.bodies, "Number of moving bodies")->capture_default_str();
  synth->add_option("--points-per-body", sa.points_per_body, "Surface samples per body")->capture_default_str();
  synth->add_option("--background", sa.background, "Static background samples")->capture_default_str();
  synth->add_option("--frames", sa.frames, "Frame count (>= 2)")->capture_default_str();
  synth->add_option("--rot-max", sa.rot_max, "Per-frame yaw bound, degrees")->capture_default_str();
  synth->add_option("--trans-max", sa.trans_max, "Per-frame translation bound, meters")->capture_default_str();
  synth->add_option("--ego", sa.ego, "Ego motion preset: none, forward or turn")->capture_default_str();
  synth->add_flag("--resample,!--no-resample", sa.resample, "Independent surface samples per frame (default on)");
  synth->add_flag("--visible-only", sa.visible_only, "Keep only sensor-facing surfaces");
  synth->add_flag("--ground", sa.ground, "Add a static ground patch");
  synth->add_flag("--adversarial", sa.adversarial, "Two nearby boxes moving in opposite directions");
  synth->add_option("--noise", sa.noise, "Gaussian noise sigma, meters")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();

  FlowArgs fa;
  std::uint64_t flow_seed = 0;
  auto* flow = app.add_subcommand("flow", "Fit scene flow between two point clouds");
  flow->add_option("--source", fa.source, "Source cloud (.ply or .csv)")->required();
  flow->add_option("--target", fa.target, "Target cloud (.ply or .csv)");
  flow->add_option("--config", fa.config, "TOML configuration");
  flow->add_option("--out", fa.out, "Output flow file");
  flow->add_option("--report", fa.report, "Output report JSON");
  flow->add_option("--gt", fa.gt, "Ground-truth flow for metrics in the report");
  flow->add_flag("--no-rigidity", fa.no_rigidity, "Chamfer-only baseline (no clustering, no multi-body term)");
  auto* flow_seed_opt = flow->add_option("--seed", flow_seed, "Network initialisation seed");
  flow->add_option("--save-net", fa.save_net, "Write the fitted network parameters");
  flow->add_option("--load-net", fa.load_net, "Apply a saved network to the source instead of fitting");

  TrajArgs ta;
  std::uint64_t traj_seed = 0;
  auto* traj = app.add_subcommand("traj", "Long-term trajectories over a sequence");
  traj->add_option("--seq", ta.seq, "Sequence directory")->required();
  traj->add_option("--mode", ta.mode, "euler or field")->capture_default_str();
  traj->add_option("--config", ta.config, "TOML configuration");
  traj->add_option("--out", ta.out, "Output trajectory file");
  traj->add_option("--report", ta.report, "Output report JSON");
  traj->add_option("--jobs", ta.jobs, "Concurrent pair solves (euler mode)")->capture_default_str();
  traj->add_option("--last", ta.last, "Last frame for endpoint metrics")->capture_default_str();
  traj->add_flag("--no-rigidity", ta.no_rigidity, "Chamfer-only baseline");
  auto* traj_seed_opt = traj->add_option("--seed", traj_seed, "Network initialisation seed");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score predicted flow or trajectories against ground truth");
  eval->add_option("--pred", ea.pred, "Predicted flow or trajectory file")->required();
  eval->add_option("--gt", ea.gt, "Ground-truth flow or trajectory file")->required();
  eval->add_option("--points", ea.points, "Source cloud the flows must match");
  eval->add_flag("--traj", ea.traj, "Inputs are trajectory files");
  eval->add_option("--first", ea.first, "First frame (trajectories)")->capture_default_str();
  eval->add_option("--last", ea.last, "Last frame (trajectories)")->capture_default_str();
  eval->add_option("--out", ea.out, "Output metrics JSON (default: standard output)");

  SweepArgs wa;
  auto* sweep = app.add_subcommand("sweep", "Run one flow solve per parameter value and tabulate metrics");
  sweep->add_option("--param", wa.param, "dthr, omega or eps-minpts")->required();
  sweep->add_option("--values", wa.values, "Comma-separated values (eps-minpts: EPS:MINPTS)")->required();
  sweep->add_option("--seq", wa.seq, "Sequence directory")->required();
  sweep->add_option("--pair", wa.pair, "1-based frame pair index")->capture_default_str();
  sweep->add_option("--config", wa.config, "TOML configuration");
  sweep->add_option("--out", wa.out, "Output CSV (default: standard output)");
  sweep->add_option("--jobs", wa.jobs, "Concurrent settings")->capture_default_str();
  sweep->add_flag("--no-rigidity", wa.no_rigidity, "Chamfer-only baseline for every setting");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) cmd_synth(sa);
    if (*flow) {
      if (flow_seed_opt->count() > 0) fa.seed = flow_seed;
      cmd_flow(fa, given_flags(*flow));
    }
    if (*traj) {
      if (traj_seed_opt->count() > 0) ta.seed = traj_seed;
      cmd_traj(ta, given_flags(*traj));
    }
    if (*eval) cmd_eval(ea);
    if (*sweep) cmd_sweep(wa);
  } catch (const std::exception& e) {
    std::cerr << "mbflow: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
