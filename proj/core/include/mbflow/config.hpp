#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "mbflow/optimizer.hpp"
#include "mbflow/trajectory.hpp"

namespace mbflow {

/// Everything a run can be configured with. Defaults are the reference
/// hyper-parameters (learning rate 0.003, 1000 iterations, patience 100,
/// omega 1, d_thr 0.03, eps 0.8, min_points 30, 10 power iterations).
struct RunConfig {
  SolveConfig solve;
  TrajectoryFieldConfig trajectory;

  void validate() const;
};

/// TOML with sections [optimizer], [loss], [chamfer], [multibody], [dbscan],
/// [network] and [trajectory]. Missing keys keep their defaults; unknown
/// sections or keys, wrong types and invalid values throw FormatError with the
/// line number.
RunConfig parse_config(std::string_view text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

/// TOML text that parses back to `cfg`.
std::string config_to_toml(const RunConfig& cfg);

}  // namespace mbflow
