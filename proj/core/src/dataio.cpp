#include "mbflow/dataio.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include "mbflow/error.hpp"
#include "mbflow/optimizer.hpp"
#include "mbflow/synth.hpp"

namespace mbflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ----------------------------------------------------------------------------
// Little-endian primitives

void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

/// Bounds-checked reader over a byte buffer.
class Cursor {
 public:
  Cursor(std::string_view bytes, std::string what, std::size_t offset = 0)
      : bytes_(bytes), what_(std::move(what)), pos_(offset) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int k = 0; k < width; ++k) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(k)])) << (8 * k);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(what_ + ": " + msg + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      fail("truncated payload (need " + std::to_string(n) + " more bytes, have " + std::to_string(remaining()) + ")");
    }
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t pos_;
};

[[noreturn]] void fail_line(const std::string& what, std::size_t line, const std::string& msg) {
  throw FormatError(what + ": line " + std::to_string(line) + ": " + msg);
}

double promote_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// f32 text that parses back to the same float.
std::string f32_text(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(v));
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t k = s.find(sep, start);
    out.push_back(s.substr(start, k == std::string_view::npos ? std::string_view::npos : k - start));
    if (k == std::string_view::npos) break;
    start = k + 1;
  }
  return out;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

/// Iterates lines with 1-based numbers; a trailing newline does not add a line.
void for_each_line(std::string_view text, const std::function<void(std::size_t, std::string_view)>& fn) {
  std::size_t line = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t k = text.find('\n', start);
    const std::size_t end = k == std::string_view::npos ? text.size() : k;
    fn(++line, text.substr(start, end - start));
    if (k == std::string_view::npos) break;
    start = k + 1;
  }
}

PointCloud make_cloud(Points pts, int frame, const std::string& what) {
  if (pts.rows() == 0) throw FormatError(what + ": no points");
  try {
    return PointCloud(std::move(pts), frame);
  } catch (const Error& e) {
    throw FormatError(what + ": " + e.what());
  }
}

// ----------------------------------------------------------------------------
// PLY

enum class PlyType { kInt8, kUint8, kInt16, kUint16, kInt32, kUint32, kFloat32, kFloat64 };

bool ply_type(std::string_view name, PlyType& t, int& width) {
  struct Entry {
    std::string_view a, b;
    PlyType t;
    int w;
  };
  static constexpr Entry kTypes[] = {
      {"char", "int8", PlyType::kInt8, 1},       {"uchar", "uint8", PlyType::kUint8, 1},
      {"short", "int16", PlyType::kInt16, 2},    {"ushort", "uint16", PlyType::kUint16, 2},
      {"int", "int32", PlyType::kInt32, 4},      {"uint", "uint32", PlyType::kUint32, 4},
      {"float", "float32", PlyType::kFloat32, 4}, {"double", "float64", PlyType::kFloat64, 8},
  };
  for (const auto& e : kTypes) {
    if (name == e.a || name == e.b) {
      t = e.t;
      width = e.w;
      return true;
    }
  }
  return false;
}

double read_ply_binary(Cursor& c, PlyType t) {
  switch (t) {
    case PlyType::kInt8:
      return static_cast<std::int8_t>(c.uint(1));
    case PlyType::kUint8:
      return static_cast<double>(c.uint(1));
    case PlyType::kInt16:
      return static_cast<std::int16_t>(c.uint(2));
    case PlyType::kUint16:
      return static_cast<double>(c.uint(2));
    case PlyType::kInt32:
      return static_cast<std::int32_t>(c.uint(4));
    case PlyType::kUint32:
      return static_cast<double>(c.uint(4));
    case PlyType::kFloat32:
      return c.f32();
    case PlyType::kFloat64:
      return c.f64();
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
  int width;
};

}  // namespace

// ----------------------------------------------------------------------------
// Clouds

CloudFormat cloud_format_for(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".ply" || ext == ".PLY") return CloudFormat::kPlyBinary;
  if (ext == ".csv" || ext == ".CSV") return CloudFormat::kCsv;
  throw FormatError(path.string() + ": unknown point cloud extension '" + ext + "' (expected .ply or .csv)");
}

std::string encode_cloud(const PointCloud& cloud, CloudFormat format) {
  const Points& P = cloud.matrix();
  std::string out;
  if (format == CloudFormat::kCsv) {
    out = "x,y,z\n";
    for (Index i = 0; i < P.rows(); ++i) {
      out += f32_text(P(i, 0)) + "," + f32_text(P(i, 1)) + "," + f32_text(P(i, 2)) + "\n";
    }
    return out;
  }
  const bool binary = format == CloudFormat::kPlyBinary;
  out = "ply\nformat ";
  out += binary ? "binary_little_endian" : "ascii";
  out += " 1.0\nelement vertex " + std::to_string(P.rows()) +
         "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  if (binary) {
    out.reserve(out.size() + static_cast<std::size_t>(P.rows()) * 12);
    for (Index i = 0; i < P.rows(); ++i) {
      for (int c = 0; c < 3; ++c) put_f32(out, P(i, c));
    }
  } else {
    for (Index i = 0; i < P.rows(); ++i) {
      out += f32_text(P(i, 0)) + " " + f32_text(P(i, 1)) + " " + f32_text(P(i, 2)) + "\n";
    }
  }
  return out;
}

PointCloud decode_ply(std::string_view bytes, const std::string& what, int frame) {
  // Header: newline-terminated ASCII lines up to "end_header".
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::string_view {
    const std::size_t k = bytes.find('\n', pos);
    if (k == std::string_view::npos) fail_line(what, line_no + 1, "unterminated header (missing end_header)");
    std::string_view line = bytes.substr(pos, k - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = k + 1;
    ++line_no;
    return line;
  };
  if (next_line() != "ply") fail_line(what, 1, "not a PLY file (missing 'ply' magic)");

  bool have_format = false;
  bool binary = false;
  bool have_vertex = false;
  bool in_vertex = false;
  std::uint64_t count = 0;
  std::vector<PlyProperty> props;
  while (true) {
    const std::string_view line = next_line();
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() != 3) fail_line(what, line_no, "malformed format line");
      if (tok[1] == "binary_little_endian") {
        binary = true;
      } else if (tok[1] == "ascii") {
        binary = false;
      } else {
        fail_line(what, line_no, "unsupported PLY format '" + std::string(tok[1]) + "'");
      }
      if (tok[2] != "1.0") fail_line(what, line_no, "unsupported PLY version '" + std::string(tok[2]) + "'");
      have_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) fail_line(what, line_no, "malformed element line");
      std::uint64_t n = 0;
      if (!parse_int(tok[2], n)) fail_line(what, line_no, "bad element count '" + std::string(tok[2]) + "'");
      if (tok[1] == "vertex") {
        if (have_vertex) fail_line(what, line_no, "duplicate vertex element");
        have_vertex = true;
        in_vertex = true;
        count = n;
      } else {
        if (n != 0) fail_line(what, line_no, "unsupported element '" + std::string(tok[1]) + "' with data");
        in_vertex = false;
      }
    } else if (tok[0] == "property") {
      if (!in_vertex) fail_line(what, line_no, "property outside the vertex element");
      if (tok.size() >= 2 && tok[1] == "list") fail_line(what, line_no, "list properties are not supported");
      if (tok.size() != 3) fail_line(what, line_no, "malformed property line");
      PlyProperty p{std::string(tok[2]), PlyType::kFloat32, 4};
      if (!ply_type(tok[1], p.type, p.width)) {
        fail_line(what, line_no, "unknown property type '" + std::string(tok[1]) + "'");
      }
      for (const auto& q : props) {
        if (q.name == p.name) fail_line(what, line_no, "duplicate property '" + p.name + "'");
      }
      props.push_back(p);
    } else {
      fail_line(what, line_no, "unknown header keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!have_format) throw FormatError(what + ": header has no format line");
  if (!have_vertex) throw FormatError(what + ": header has no vertex element");

  int col[3] = {-1, -1, -1};
  const char* names[3] = {"x", "y", "z"};
  for (std::size_t k = 0; k < props.size(); ++k) {
    for (int c = 0; c < 3; ++c) {
      if (props[k].name == names[c]) {
        if (props[k].type != PlyType::kFloat32 && props[k].type != PlyType::kFloat64) {
          throw FormatError(what + ": property '" + props[k].name + "' must be float or double");
        }
        col[c] = static_cast<int>(k);
      }
    }
  }
  for (int c = 0; c < 3; ++c) {
    if (col[c] < 0) throw FormatError(what + ": missing required vertex property '" + names[c] + "'");
  }

  if (binary) {
    std::size_t stride = 0;
    for (const auto& p : props) stride += static_cast<std::size_t>(p.width);
    const std::size_t payload = bytes.size() - pos;
    if (count > payload / stride) {
      throw FormatError(what + ": truncated payload: " + std::to_string(count) + " vertices need " +
                        std::to_string(count) + " x " + std::to_string(stride) + " bytes after byte " +
                        std::to_string(pos) + ", have " + std::to_string(payload));
    }
    if (count * stride != payload) {
      throw FormatError(what + ": " + std::to_string(payload - count * stride) +
                        " trailing bytes after the vertex payload at byte " + std::to_string(pos + count * stride));
    }
    Points P(static_cast<Index>(count), 3);
    Cursor c(bytes, what, pos);
    for (Index i = 0; i < P.rows(); ++i) {
      const std::size_t at = c.pos();
      for (std::size_t k = 0; k < props.size(); ++k) {
        const double v = read_ply_binary(c, props[k].type);
        for (int d = 0; d < 3; ++d) {
          if (col[d] == static_cast<int>(k)) {
            if (!std::isfinite(v)) {
              throw FormatError(what + ": non-finite " + names[d] + " in vertex " + std::to_string(i) + " at byte " +
                                std::to_string(at));
            }
            P(i, d) = v;
          }
        }
      }
    }
    return make_cloud(std::move(P), frame, what);
  }

  // ASCII body: one vertex per non-empty line.
  const std::size_t max_rows = (bytes.size() - pos) / (2 * props.size()) + 1;
  if (count > max_rows) throw FormatError(what + ": truncated payload: header declares " + std::to_string(count) + " vertices");
  Points P(static_cast<Index>(count), 3);
  Index row = 0;
  std::size_t body_line = line_no;
  for_each_line(bytes.substr(pos), [&](std::size_t n, std::string_view line) {
    body_line = line_no + n;
    const auto tok = split_ws(line);
    if (tok.empty()) return;
    if (row >= P.rows()) fail_line(what, body_line, "more vertices than declared");
    if (tok.size() != props.size()) {
      fail_line(what, body_line, "expected " + std::to_string(props.size()) + " values, found " + std::to_string(tok.size()));
    }
    for (int d = 0; d < 3; ++d) {
      const auto& p = props[static_cast<std::size_t>(col[d])];
      double v = 0.0;
      if (!parse_double(tok[static_cast<std::size_t>(col[d])], v)) {
        fail_line(what, body_line, std::string("cannot parse ") + names[d] + " '" + std::string(tok[static_cast<std::size_t>(col[d])]) + "'");
      }
      if (p.type == PlyType::kFloat32) v = promote_f32(v);
      if (!std::isfinite(v)) fail_line(what, body_line, std::string("non-finite ") + names[d]);
      P(row, d) = v;
    }
    ++row;
  });
  if (row != P.rows()) {
    throw FormatError(what + ": truncated payload: " + std::to_string(row) + " of " + std::to_string(count) +
                      " vertices present (last line " + std::to_string(body_line) + ")");
  }
  return make_cloud(std::move(P), frame, what);
}

PointCloud decode_csv(std::string_view text, const std::string& what, int frame) {
  std::vector<std::string> header;
  int col[3] = {-1, -1, -1};
  std::vector<Eigen::RowVector3d> rows;
  for_each_line(text, [&](std::size_t n, std::string_view line) {
    line = trim(line);
    if (header.empty()) {
      if (line.empty()) fail_line(what, n, "empty header (expected x,y,z)");
      for (auto f : split(line, ',')) header.emplace_back(trim(f));
      const char* names[3] = {"x", "y", "z"};
      for (int c = 0; c < 3; ++c) {
        for (std::size_t k = 0; k < header.size(); ++k) {
          if (header[k] == names[c]) {
            if (col[c] >= 0) fail_line(what, n, std::string("duplicate column '") + names[c] + "'");
            col[c] = static_cast<int>(k);
          }
        }
        if (col[c] < 0) fail_line(what, n, std::string("missing column '") + names[c] + "' in header");
      }
      return;
    }
    if (line.empty()) return;
    const auto fields = split(line, ',');
    if (fields.size() != header.size()) {
      fail_line(what, n, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    Eigen::RowVector3d r;
    for (int c = 0; c < 3; ++c) {
      double v = 0.0;
      const auto f = fields[static_cast<std::size_t>(col[c])];
      if (!parse_double(f, v)) fail_line(what, n, "cannot parse '" + std::string(trim(f)) + "' as a number");
      v = promote_f32(v);
      if (!std::isfinite(v)) fail_line(what, n, "non-finite value");
      r[c] = v;
    }
    rows.push_back(r);
  });
  if (header.empty()) throw FormatError(what + ": empty file (expected header x,y,z)");
  Points P(static_cast<Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) P.row(static_cast<Index>(i)) = rows[i];
  return make_cloud(std::move(P), frame, what);
}

PointCloud read_cloud(const fs::path& path, int frame) {
  const CloudFormat fmt = cloud_format_for(path);
  const std::string bytes = read_file(path);
  return fmt == CloudFormat::kCsv ? decode_csv(bytes, path.string(), frame) : decode_ply(bytes, path.string(), frame);
}

void write_cloud(const fs::path& path, const PointCloud& cloud) { write_cloud(path, cloud, cloud_format_for(path)); }

void write_cloud(const fs::path& path, const PointCloud& cloud, CloudFormat format) {
  write_file_atomic(path, encode_cloud(cloud, format));
}

// ----------------------------------------------------------------------------
// Flow

std::string encode_flow(const FlowField& flow) {
  std::string out = "MBSF";
  put_u32(out, 1);
  put_u64(out, static_cast<std::uint64_t>(flow.size()));
  out.reserve(out.size() + static_cast<std::size_t>(flow.size()) * 12);
  const Points& F = flow.matrix();
  for (Index i = 0; i < F.rows(); ++i) {
    for (int c = 0; c < 3; ++c) put_f32(out, F(i, c));
  }
  return out;
}

FlowField decode_flow(std::string_view bytes, const std::string& what) {
  Cursor c(bytes, what);
  if (c.take(4) != "MBSF") throw FormatError(what + ": bad magic (expected MBSF) at byte 0");
  const std::uint32_t version = c.u32();
  if (version != 1) throw FormatError(what + ": unsupported version " + std::to_string(version) + " at byte 4");
  const std::uint64_t n = c.u64();
  if (n > c.remaining() / 12) c.fail("truncated payload: " + std::to_string(n) + " vectors declared");
  if (n * 12 != c.remaining()) c.fail(std::to_string(c.remaining() - n * 12) + " trailing bytes after the payload");
  Points F(static_cast<Index>(n), 3);
  for (Index i = 0; i < F.rows(); ++i) {
    for (int d = 0; d < 3; ++d) {
      const double v = c.f32();
      if (!std::isfinite(v)) {
        throw FormatError(what + ": non-finite value in vector " + std::to_string(i) + " at byte " + std::to_string(c.pos() - 4));
      }
      F(i, d) = v;
    }
  }
  return FlowField(std::move(F));
}

FlowField read_flow(const fs::path& path, const PointCloud* paired) {
  FlowField f = decode_flow(read_file(path), path.string());
  if (paired && f.size() != paired->size()) {
    throw FormatError(path.string() + ": flow has " + std::to_string(f.size()) + " vectors but the paired cloud has " +
                      std::to_string(paired->size()) + " points");
  }
  return f;
}

void write_flow(const fs::path& path, const FlowField& flow) { write_file_atomic(path, encode_flow(flow)); }

// ----------------------------------------------------------------------------
// Trajectories

std::string encode_trajectories(const TrajectorySet& traj) {
  std::string out = "MBTJ";
  put_u32(out, 1);
  const Index n = traj.point_count();
  const int T = traj.frame_count();
  put_u64(out, static_cast<std::uint64_t>(n));
  put_u32(out, static_cast<std::uint32_t>(T));
  out.reserve(out.size() + static_cast<std::size_t>(n) * static_cast<std::size_t>(T) * 12);
  for (Index i = 0; i < n; ++i) {
    for (int t = 1; t <= T; ++t) {
      for (int c = 0; c < 3; ++c) put_f32(out, traj.frame(t)(i, c));
    }
  }
  return out;
}

TrajectorySet decode_trajectories(std::string_view bytes, const std::string& what) {
  Cursor c(bytes, what);
  if (c.take(4) != "MBTJ") throw FormatError(what + ": bad magic (expected MBTJ) at byte 0");
  const std::uint32_t version = c.u32();
  if (version != 1) throw FormatError(what + ": unsupported version " + std::to_string(version) + " at byte 4");
  const std::uint64_t n = c.u64();
  const std::uint32_t T = c.u32();
  if (T < 1) c.fail("frame count must be >= 1");
  const std::uint64_t per_point = 12ull * T;
  if (n > c.remaining() / per_point) c.fail("truncated payload: " + std::to_string(n) + " trajectories declared");
  if (n * per_point != c.remaining()) c.fail(std::to_string(c.remaining() - n * per_point) + " trailing bytes after the payload");
  std::vector<Points> frames(T, Points(static_cast<Index>(n), 3));
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    for (std::uint32_t t = 0; t < T; ++t) {
      for (int d = 0; d < 3; ++d) {
        const double v = c.f32();
        if (!std::isfinite(v)) c.fail("non-finite value in trajectory " + std::to_string(i));
        frames[t](i, d) = v;
      }
    }
  }
  return TrajectorySet(std::move(frames));
}

TrajectorySet read_trajectories(const fs::path& path) { return decode_trajectories(read_file(path), path.string()); }

void write_trajectories(const fs::path& path, const TrajectorySet& traj) {
  write_file_atomic(path, encode_trajectories(traj));
}

// ----------------------------------------------------------------------------
// Labels

std::string encode_labels(const std::vector<int>& labels) {
  std::string out = "label\n";
  for (int l : labels) out += std::to_string(l) + "\n";
  return out;
}

std::vector<int> decode_labels(std::string_view text, const std::string& what) {
  std::vector<int> labels;
  bool header = false;
  for_each_line(text, [&](std::size_t n, std::string_view line) {
    line = trim(line);
    if (!header) {
      if (line != "label") fail_line(what, n, "missing column 'label' in header");
      header = true;
      return;
    }
    if (line.empty()) return;
    int v = 0;
    if (!parse_int(line, v)) fail_line(what, n, "cannot parse '" + std::string(line) + "' as an integer label");
    labels.push_back(v);
  });
  if (!header) throw FormatError(what + ": empty file (expected header 'label')");
  return labels;
}

std::vector<int> read_labels(const fs::path& path) { return decode_labels(read_file(path), path.string()); }

void write_labels(const fs::path& path, const std::vector<int>& labels) {
  write_file_atomic(path, encode_labels(labels));
}

// ----------------------------------------------------------------------------
// Network checkpoints

std::string encode_network(const NeuralPrior& net) {
  const MlpArchitecture& a = net.architecture();
  const json header = {{"format", "mbflow-net"},
                       {"version", 1},
                       {"architecture",
                        {{"input_dim", a.input_dim},
                         {"hidden_width", a.hidden_width},
                         {"hidden_layers", a.hidden_layers},
                         {"activation", to_string(a.activation)},
                         {"output_dim", a.output_dim}}},
                       {"seed", net.seed()},
                       {"count", net.parameters().size()}};
  std::string out = header.dump() + "\n";
  for (Index k = 0; k < net.parameters().size(); ++k) put_f64(out, net.parameters()[k]);
  return out;
}

NeuralPrior decode_network(std::string_view bytes, const std::string& what) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw FormatError(what + ": missing header line");
  MlpArchitecture arch;
  std::uint64_t seed = 0;
  std::uint64_t count = 0;
  try {
    const json h = json::parse(bytes.substr(0, nl));
    if (h.at("format").get<std::string>() != "mbflow-net") throw FormatError(what + ": not a network checkpoint");
    if (h.at("version").get<int>() != 1) throw FormatError(what + ": unsupported checkpoint version");
    const json& a = h.at("architecture");
    arch.input_dim = a.at("input_dim").get<int>();
    arch.hidden_width = a.at("hidden_width").get<int>();
    arch.hidden_layers = a.at("hidden_layers").get<int>();
    arch.activation = parse_activation(a.at("activation").get<std::string>());
    arch.output_dim = a.at("output_dim").get<int>();
    seed = h.at("seed").get<std::uint64_t>();
    count = h.at("count").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(what + ": bad header: " + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(what + ": bad header: " + e.what());
  }
  if (arch.input_dim > 4096 || arch.hidden_width > 65536 || arch.hidden_layers > 1024) {
    throw FormatError(what + ": architecture out of range");
  }
  try {
    arch.validate();
  } catch (const Error& e) {
    throw FormatError(what + ": " + e.what());
  }
  if (count != static_cast<std::uint64_t>(arch.parameter_count())) {
    throw FormatError(what + ": parameter count " + std::to_string(count) + " does not match the architecture (" +
                      std::to_string(arch.parameter_count()) + ")");
  }
  Cursor c(bytes, what, nl + 1);
  if (count > c.remaining() / 8) c.fail("truncated payload");
  if (count * 8 != c.remaining()) c.fail("trailing bytes after the parameters");
  Eigen::VectorXd params(static_cast<Index>(count));
  for (Index k = 0; k < params.size(); ++k) {
    params[k] = c.f64();
    if (!std::isfinite(params[k])) c.fail("non-finite parameter " + std::to_string(k));
  }
  return NeuralPrior(arch, std::move(params), seed);
}

NeuralPrior read_network(const fs::path& path) { return decode_network(read_file(path), path.string()); }

void write_network(const fs::path& path, const NeuralPrior& net) { write_file_atomic(path, encode_network(net)); }

// ----------------------------------------------------------------------------
// Manifest and sequences

std::string encode_manifest(const SequenceManifest& m) {
  json j = {{"format", "mbflow-sequence"},
            {"format_version", m.format_version},
            {"frames", m.frames},
            {"gt_flows", m.gt_flows},
            {"labels", m.labels},
            {"gt_trajectories", m.gt_trajectories},
            {"seed", m.seed}};
  j["spec"] = json::parse(m.spec_json);
  return j.dump(2) + "\n";
}

SequenceManifest decode_manifest(std::string_view text, const std::string& what) {
  SequenceManifest m;
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "mbflow-sequence") throw FormatError(what + ": not a sequence manifest");
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kManifestVersion) {
      throw FormatError(what + ": unsupported format_version " + std::to_string(m.format_version));
    }
    m.frames = j.at("frames").get<std::vector<std::string>>();
    m.gt_flows = j.value("gt_flows", std::vector<std::string>{});
    m.labels = j.value("labels", std::vector<std::string>{});
    m.gt_trajectories = j.value("gt_trajectories", std::string{});
    m.seed = j.value("seed", std::uint64_t{0});
    m.spec_json = j.contains("spec") ? j.at("spec").dump() : "{}";
  } catch (const json::parse_error& e) {
    throw FormatError(what + ": " + e.what());
  } catch (const json::exception& e) {
    throw FormatError(what + ": bad field: " + e.what());
  }
  if (m.frames.empty()) throw FormatError(what + ": no frames listed");
  if (!m.gt_flows.empty() && m.gt_flows.size() + 1 != m.frames.size()) {
    throw FormatError(what + ": expected " + std::to_string(m.frames.size() - 1) + " gt_flows, found " +
                      std::to_string(m.gt_flows.size()));
  }
  if (!m.labels.empty() && m.labels.size() != m.frames.size()) {
    throw FormatError(what + ": expected " + std::to_string(m.frames.size()) + " label files, found " +
                      std::to_string(m.labels.size()));
  }
  return m;
}

Sequence load_sequence(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError(manifest_path.string() + ": manifest not found");
  Sequence seq;
  seq.dir = dir;
  seq.manifest = decode_manifest(read_file(manifest_path), manifest_path.string());
  auto resolve = [&](const std::string& rel) {
    const fs::path p = dir / rel;
    if (!fs::exists(p)) throw FormatError(manifest_path.string() + ": referenced file '" + rel + "' does not exist");
    return p;
  };
  const auto& m = seq.manifest;
  for (std::size_t t = 0; t < m.frames.size(); ++t) {
    seq.frames.push_back(read_cloud(resolve(m.frames[t]), static_cast<int>(t) + 1));
  }
  for (std::size_t t = 0; t < m.gt_flows.size(); ++t) {
    seq.gt_flows.push_back(read_flow(resolve(m.gt_flows[t]), &seq.frames[t]));
  }
  for (std::size_t t = 0; t < m.labels.size(); ++t) {
    auto labels = read_labels(resolve(m.labels[t]));
    if (static_cast<Index>(labels.size()) != seq.frames[t].size()) {
      throw FormatError(m.labels[t] + ": " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(seq.frames[t].size()) + " points");
    }
    seq.labels.push_back(std::move(labels));
  }
  if (!m.gt_trajectories.empty()) {
    TrajectorySet traj = read_trajectories(resolve(m.gt_trajectories));
    if (traj.point_count() != seq.frames.front().size() || traj.frame_count() != static_cast<int>(seq.frames.size())) {
      throw FormatError(m.gt_trajectories + ": trajectory shape does not match the sequence");
    }
    seq.gt_trajectories = std::move(traj);
  }
  return seq;
}

namespace {

const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kBox:
      return "box";
    case ShapeKind::kCylinder:
      return "cylinder";
    case ShapeKind::kWall:
      return "wall";
  }
  return "box";
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

}  // namespace

std::string spec_json(const SyntheticScene& scene) {
  const SceneSpec& s = scene.spec;
  json j = {{"body_count", s.body_count},
            {"points_per_body", s.points_per_body},
            {"background_points", s.background_points},
            {"frame_count", s.frame_count},
            {"rot_max_deg", s.rot_max_deg},
            {"trans_max", s.trans_max},
            {"ego", to_string(s.ego)},
            {"ego_speed", s.ego_speed},
            {"ego_yaw_deg", s.ego_yaw_deg},
            {"resample", s.resample},
            {"visible_only", s.visible_only},
            {"noise_sigma", s.noise_sigma},
            {"ground", s.ground},
            {"lane_spacing", s.lane_spacing},
            {"seed", s.seed}};
  if (!s.body_motions.empty()) {
    json motions = json::array();
    for (const auto& m : s.body_motions) {
      Eigen::Matrix3d R = m.rotation();
      motions.push_back({{"rotation", vec_json(Eigen::Map<const Eigen::VectorXd>(R.data(), 9))},
                         {"translation", vec_json(m.translation())}});
    }
    j["body_motions"] = motions;
  }
  if (!s.body_shapes.empty()) {
    json shapes = json::array();
    for (const auto& sh : s.body_shapes) shapes.push_back({{"kind", shape_name(sh.kind)}, {"size", vec_json(sh.size)}});
    j["body_shapes"] = shapes;
  }
  if (!s.body_positions.empty()) {
    json pos = json::array();
    for (const auto& p : s.body_positions) pos.push_back(vec_json(p));
    j["body_positions"] = pos;
  }
  return j.dump();
}

void write_scene(const fs::path& dir, const SyntheticScene& scene) {
  fs::create_directories(dir);
  SequenceManifest m;
  m.seed = scene.spec.seed;
  m.spec_json = spec_json(scene);
  auto name = [](const char* stem, std::size_t k, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03zu%s", stem, k, ext);
    return std::string(buf);
  };
  for (std::size_t t = 0; t < scene.frames.size(); ++t) {
    m.frames.push_back(name("frame", t + 1, ".ply"));
    write_cloud(dir / m.frames.back(), scene.frames[t], CloudFormat::kPlyBinary);
    m.labels.push_back(name("labels", t + 1, ".csv"));
    write_labels(dir / m.labels.back(), scene.labels[t]);
  }
  for (std::size_t t = 0; t < scene.gt_flows.size(); ++t) {
    m.gt_flows.push_back(name("flow", t + 1, ".mbsf"));
    write_flow(dir / m.gt_flows.back(), scene.gt_flows[t]);
  }
  if (scene.gt_trajectories.frame_count() > 0) {
    m.gt_trajectories = "trajectories.mbtj";
    write_trajectories(dir / m.gt_trajectories, scene.gt_trajectories);
  }
  write_file_atomic(dir / "manifest.json", encode_manifest(m));
}

// ----------------------------------------------------------------------------
// Reports

namespace {

json thresholds_json(const FlowThresholds& thr) {
  return {{"strict_abs", thr.strict_abs},
          {"strict_rel", thr.strict_rel},
          {"relaxed_abs", thr.relaxed_abs},
          {"relaxed_rel", thr.relaxed_rel},
          {"rel_epsilon", thr.rel_epsilon}};
}

json flow_metrics_object(const FlowMetrics& m, const FlowThresholds& thr) {
  return {{"schema", "mbflow.flow_metrics"},
          {"schema_version", 1},
          {"epe", m.epe},
          {"acc_strict", m.acc_strict},
          {"acc_relaxed", m.acc_relaxed},
          {"angle_error_rad", m.angle_error},
          {"n_points", m.n_points},
          {"thresholds", thresholds_json(thr)}};
}

json config_object(const SolveConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"max_iters", c.max_iters},
          {"patience", c.patience},
          {"omega", c.omega},
          {"enable_rigidity", c.enable_rigidity},
          {"seed", c.seed},
          {"chamfer", {{"truncation", c.chamfer.truncation}, {"bidirectional", c.chamfer.bidirectional}}},
          {"multibody",
           {{"d_thr", c.multibody.d_thr},
            {"power_iters", c.multibody.power_iters},
            {"min_cluster_size", c.multibody.min_cluster_size},
            {"max_cluster_points", c.multibody.max_cluster_points},
            {"stop_grad_eigvec", c.multibody.stop_grad_eigvec},
            {"subsample_seed", c.multibody.subsample_seed}}},
          {"dbscan", {{"eps", c.dbscan.eps}, {"min_points", c.dbscan.min_points}}},
          {"network",
           {{"hidden_width", c.network.hidden_width},
            {"hidden_layers", c.network.hidden_layers},
            {"activation", to_string(c.network.activation)}}}};
}

}  // namespace

std::string flow_metrics_json(const FlowMetrics& m, const FlowThresholds& thr) {
  return flow_metrics_object(m, thr).dump(2) + "\n";
}

std::string traj_metrics_json(const TrajMetrics& m) {
  const json j = {{"schema", "mbflow.traj_metrics"},
                  {"schema_version", 1},
                  {"acc_05", m.acc_05},
                  {"acc_10", m.acc_10},
                  {"mean_error", m.mean_error},
                  {"first", m.first},
                  {"last", m.last},
                  {"n_points", m.n_points}};
  return j.dump(2) + "\n";
}

std::string solve_report_json(const SolveReport& r, const SolveConfig& cfg, const std::optional<FlowMetrics>& metrics,
                              const std::map<std::string, std::string>& flags) {
  json best = {{"total", r.best_loss}, {"chamfer", nullptr}, {"multibody", nullptr}};
  if (r.best_iteration >= 0 && r.best_iteration < static_cast<int>(r.trace.size())) {
    const LossRecord& b = r.trace[static_cast<std::size_t>(r.best_iteration)];
    best = {{"total", b.total}, {"chamfer", b.chamfer}, {"multibody", b.multibody}};
  }
  json j = {{"schema", "mbflow.solve_report"},
            {"schema_version", 1},
            {"n_points", r.flow.size()},
            {"iterations", r.iterations},
            {"best_iteration", r.best_iteration},
            {"best_loss", best},
            {"wall_seconds", r.wall_seconds},
            {"cluster_seconds", r.cluster_seconds},
            {"cluster_count", r.cluster_count},
            {"active_clusters", r.active_clusters},
            {"config", config_object(cfg)},
            {"flags", flags}};
  j["metrics"] = metrics ? flow_metrics_object(*metrics, FlowThresholds{}) : json(nullptr);
  return j.dump(2) + "\n";
}

// ----------------------------------------------------------------------------
// Files

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(path.string() + ": read error");
  return std::move(ss).str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path() && !fs::exists(path.parent_path())) {
    throw Error(path.string() + ": directory does not exist");
  }
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 1000000);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(tmp.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(path.string() + ": write failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(path.string() + ": cannot rename into place");
  }
}

}  // namespace mbflow
