#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mbflow/geometry.hpp"
#include "mbflow/metrics.hpp"
#include "mbflow/neural_prior.hpp"
#include "mbflow/trajectory.hpp"

namespace mbflow {

struct SyntheticScene;
struct SolveReport;
struct SolveConfig;

// All binary payloads are little-endian f32 on disk and f64 in memory.

enum class CloudFormat { kPlyBinary, kPlyAscii, kCsv };

/// kPlyBinary for ".ply", kCsv for ".csv"; throws otherwise.
CloudFormat cloud_format_for(const std::filesystem::path& path);

std::string encode_cloud(const PointCloud& cloud, CloudFormat format);
/// Accepts binary little-endian or ASCII PLY with float/double x, y, z, or
/// CSV with an "x,y,z" header. `what` prefixes error messages.
PointCloud decode_ply(std::string_view bytes, const std::string& what = "ply", int frame = 0);
PointCloud decode_csv(std::string_view text, const std::string& what = "csv", int frame = 0);

PointCloud read_cloud(const std::filesystem::path& path, int frame = 0);
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud, CloudFormat format);

/// "MBSF", u32 version 1, u64 N, N x 3 f32.
std::string encode_flow(const FlowField& flow);
FlowField decode_flow(std::string_view bytes, const std::string& what = "flow");
/// With `paired`, the flow length must equal the cloud size.
FlowField read_flow(const std::filesystem::path& path, const PointCloud* paired = nullptr);
void write_flow(const std::filesystem::path& path, const FlowField& flow);

/// "MBTJ", u32 version 1, u64 point count, u32 frame count, then per point its
/// frame-major positions (T x 3 f32).
std::string encode_trajectories(const TrajectorySet& traj);
TrajectorySet decode_trajectories(std::string_view bytes, const std::string& what = "trajectories");
TrajectorySet read_trajectories(const std::filesystem::path& path);
void write_trajectories(const std::filesystem::path& path, const TrajectorySet& traj);

/// Header "label", one integer per line.
std::string encode_labels(const std::vector<int>& labels);
std::vector<int> decode_labels(std::string_view text, const std::string& what = "labels");
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);

/// One JSON header line {"format":"mbflow-net","version":1,"architecture":{...},
/// "seed":S,"count":P} followed by P little-endian f64 parameters.
std::string encode_network(const NeuralPrior& net);
NeuralPrior decode_network(std::string_view bytes, const std::string& what = "network");
NeuralPrior read_network(const std::filesystem::path& path);
void write_network(const std::filesystem::path& path, const NeuralPrior& net);

inline constexpr int kManifestVersion = 1;

/// manifest.json of a sequence directory. Paths are relative to it.
struct SequenceManifest {
  int format_version = kManifestVersion;
  std::vector<std::string> frames;
  std::vector<std::string> gt_flows;  // empty or frames.size() - 1
  std::vector<std::string> labels;    // empty or frames.size()
  std::string gt_trajectories;        // optional
  std::string spec_json = "{}";       // generator settings echo
  std::uint64_t seed = 0;
};

std::string encode_manifest(const SequenceManifest& m);
SequenceManifest decode_manifest(std::string_view text, const std::string& what = "manifest");

struct Sequence {
  std::filesystem::path dir;
  SequenceManifest manifest;
  std::vector<PointCloud> frames;
  std::vector<FlowField> gt_flows;
  std::vector<std::vector<int>> labels;
  std::optional<TrajectorySet> gt_trajectories;
};

/// Loads manifest.json and every referenced file, checking that files exist
/// and that point counts agree.
Sequence load_sequence(const std::filesystem::path& dir);

/// Writes frames (PLY), gt flows, labels, gt trajectories and the manifest.
void write_scene(const std::filesystem::path& dir, const SyntheticScene& scene);

/// JSON text of a scene spec.
std::string spec_json(const SyntheticScene& scene);

// Reports. Every report carries "schema" and "schema_version".

std::string flow_metrics_json(const FlowMetrics& m, const FlowThresholds& thr = {});
std::string traj_metrics_json(const TrajMetrics& m);
/// Solve summary: losses, iterations, timings, cluster counts, config echo,
/// optional metrics and the invoking flags.
std::string solve_report_json(const SolveReport& r, const SolveConfig& cfg, const std::optional<FlowMetrics>& metrics,
                              const std::map<std::string, std::string>& flags);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace mbflow
