#include "mbflow/config.hpp"

#define TOML_EXCEPTIONS 1
#define TOML_ENABLE_FORMATTERS 0
#include <toml.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "mbflow/dataio.hpp"
#include "mbflow/error.hpp"

namespace mbflow {

namespace {

/// Reads one typed value and checks its range; errors carry the line.
class Field {
 public:
  Field(const toml::node& node, std::string source, std::string key)
      : node_(node), source_(std::move(source)), key_(std::move(key)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(source_ + ": line " + std::to_string(node_.source().begin.line) + ": " + key_ + ": " + msg);
  }

  double number() const {
    if (const auto* v = node_.as_floating_point()) return check_finite(v->get());
    if (const auto* v = node_.as_integer()) return static_cast<double>(v->get());
    fail("expected a number");
  }
  double positive() const {
    const double v = number();
    if (!(v > 0.0)) fail("must be positive, got " + text(v));
    return v;
  }
  double non_negative() const {
    const double v = number();
    if (!(v >= 0.0)) fail("must be >= 0, got " + text(v));
    return v;
  }
  double unit_interval() const {
    const double v = number();
    if (!(v >= 0.0 && v < 1.0)) fail("must lie in [0, 1), got " + text(v));
    return v;
  }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) const {
    const auto* v = node_.as_integer();
    if (!v) fail("expected an integer");
    if (v->get() < lo || v->get() > hi) {
      fail("must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " + std::to_string(v->get()));
    }
    return v->get();
  }
  int count(int lo = 1) const { return static_cast<int>(integer(lo, std::numeric_limits<int>::max())); }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer(0, std::numeric_limits<std::int64_t>::max())); }
  bool boolean() const {
    const auto* v = node_.as_boolean();
    if (!v) fail("expected true or false");
    return v->get();
  }
  std::string string() const {
    const auto* v = node_.as_string();
    if (!v) fail("expected a string");
    return v->get();
  }

 private:
  double check_finite(double v) const {
    if (!std::isfinite(v)) fail("must be finite");
    return v;
  }
  static std::string text(double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
  }

  const toml::node& node_;
  std::string source_;
  std::string key_;
};

using Setter = std::function<void(RunConfig&, const Field&)>;
using Section = std::map<std::string, Setter>;

const std::map<std::string, Section>& schema() {
  static const std::map<std::string, Section> s = {
      {"optimizer",
       {{"learning_rate", [](RunConfig& c, const Field& f) { c.solve.learning_rate = f.positive(); }},
        {"max_iters", [](RunConfig& c, const Field& f) { c.solve.max_iters = f.count(); }},
        {"patience", [](RunConfig& c, const Field& f) { c.solve.patience = f.count(); }},
        {"seed", [](RunConfig& c, const Field& f) { c.solve.seed = f.seed(); }},
        {"adam_beta1", [](RunConfig& c, const Field& f) { c.solve.adam.beta1 = f.unit_interval(); }},
        {"adam_beta2", [](RunConfig& c, const Field& f) { c.solve.adam.beta2 = f.unit_interval(); }},
        {"adam_epsilon", [](RunConfig& c, const Field& f) { c.solve.adam.epsilon = f.positive(); }}}},
      {"loss",
       {{"omega", [](RunConfig& c, const Field& f) { c.solve.omega = f.non_negative(); }},
        {"enable_rigidity", [](RunConfig& c, const Field& f) { c.solve.enable_rigidity = f.boolean(); }}}},
      {"chamfer",
       {{"truncation", [](RunConfig& c, const Field& f) { c.solve.chamfer.truncation = f.positive(); }},
        {"bidirectional", [](RunConfig& c, const Field& f) { c.solve.chamfer.bidirectional = f.boolean(); }}}},
      {"multibody",
       {{"d_thr", [](RunConfig& c, const Field& f) { c.solve.multibody.d_thr = f.positive(); }},
        {"power_iters", [](RunConfig& c, const Field& f) { c.solve.multibody.power_iters = f.count(); }},
        {"min_cluster_size", [](RunConfig& c, const Field& f) { c.solve.multibody.min_cluster_size = f.count(); }},
        {"max_cluster_points", [](RunConfig& c, const Field& f) { c.solve.multibody.max_cluster_points = f.count(2); }},
        {"score_floor", [](RunConfig& c, const Field& f) { c.solve.multibody.score_floor = f.positive(); }},
        {"stop_grad_eigvec", [](RunConfig& c, const Field& f) { c.solve.multibody.stop_grad_eigvec = f.boolean(); }},
        {"subsample_seed", [](RunConfig& c, const Field& f) { c.solve.multibody.subsample_seed = f.seed(); }}}},
      {"dbscan",
       {{"eps", [](RunConfig& c, const Field& f) { c.solve.dbscan.eps = f.positive(); }},
        {"min_points", [](RunConfig& c, const Field& f) { c.solve.dbscan.min_points = f.count(); }}}},
      {"network",
       {{"hidden_width", [](RunConfig& c, const Field& f) { c.solve.network.hidden_width = f.count(); }},
        {"hidden_layers", [](RunConfig& c, const Field& f) { c.solve.network.hidden_layers = f.count(); }},
        {"activation",
         [](RunConfig& c, const Field& f) {
           try {
             c.solve.network.activation = parse_activation(f.string());
           } catch (const Error& e) {
             f.fail(e.what());
           }
         }}}},
      {"trajectory",
       {{"embed_dim", [](RunConfig& c, const Field& f) { c.trajectory.embed_dim = f.count(); }},
        {"freq_base", [](RunConfig& c, const Field& f) { c.trajectory.freq_base = f.positive(); }},
        {"cycle_weight", [](RunConfig& c, const Field& f) { c.trajectory.cycle_weight = f.non_negative(); }},
        {"field_steps", [](RunConfig& c, const Field& f) { c.trajectory.steps = f.count(); }}}},
  };
  return s;
}

std::string line_of(const toml::node& n) { return "line " + std::to_string(n.source().begin.line); }

}  // namespace

void RunConfig::validate() const {
  solve.validate();
  trajectory.validate();
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  toml::table doc;
  try {
    doc = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    throw FormatError(source + ": line " + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
  }
  RunConfig cfg;
  for (const auto& [name, node] : doc) {
    const std::string section(name.str());
    const auto it = schema().find(section);
    if (it == schema().end()) throw FormatError(source + ": " + line_of(node) + ": unknown section '" + section + "'");
    const auto* table = node.as_table();
    if (!table) throw FormatError(source + ": " + line_of(node) + ": '" + section + "' must be a table");
    for (const auto& [key_name, value] : *table) {
      const std::string key(key_name.str());
      const auto setter = it->second.find(key);
      if (setter == it->second.end()) {
        throw FormatError(source + ": " + line_of(value) + ": unknown key '" + key + "' in [" + section + "]");
      }
      setter->second(cfg, Field(value, source, section + "." + key));
    }
  }
  try {
    cfg.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path), path.string()); }

std::string config_to_toml(const RunConfig& c) {
  std::ostringstream ss;
  ss.precision(17);
  const auto b = [](bool v) { return v ? "true" : "false"; };
  const SolveConfig& s = c.solve;
  ss << "[optimizer]\nlearning_rate = " << s.learning_rate << "\nmax_iters = " << s.max_iters
     << "\npatience = " << s.patience << "\nseed = " << s.seed << "\nadam_beta1 = " << s.adam.beta1
     << "\nadam_beta2 = " << s.adam.beta2 << "\nadam_epsilon = " << s.adam.epsilon << "\n\n";
  ss << "[loss]\nomega = " << s.omega << "\nenable_rigidity = " << b(s.enable_rigidity) << "\n\n";
  ss << "[chamfer]\ntruncation = " << s.chamfer.truncation << "\nbidirectional = " << b(s.chamfer.bidirectional)
     << "\n\n";
  ss << "[multibody]\nd_thr = " << s.multibody.d_thr << "\npower_iters = " << s.multibody.power_iters
     << "\nmin_cluster_size = " << s.multibody.min_cluster_size
     << "\nmax_cluster_points = " << s.multibody.max_cluster_points << "\nscore_floor = " << s.multibody.score_floor
     << "\nstop_grad_eigvec = " << b(s.multibody.stop_grad_eigvec)
     << "\nsubsample_seed = " << s.multibody.subsample_seed << "\n\n";
  ss << "[dbscan]\neps = " << s.dbscan.eps << "\nmin_points = " << s.dbscan.min_points << "\n\n";
  ss << "[network]\nhidden_width = " << s.network.hidden_width << "\nhidden_layers = " << s.network.hidden_layers
     << "\nactivation = \"" << to_string(s.network.activation) << "\"\n\n";
  ss << "[trajectory]\nembed_dim = " << c.trajectory.embed_dim << "\nfreq_base = " << c.trajectory.freq_base
     << "\ncycle_weight = " << c.trajectory.cycle_weight << "\nfield_steps = " << c.trajectory.steps << "\n";
  return ss.str();
}

}  // namespace mbflow
