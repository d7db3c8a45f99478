#pragma once

// ASCII XYZ / PLY clouds, one-flag-per-line masks and colored anomaly maps.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mc4ad/geometry.hpp"

namespace mc4ad {

namespace fs = std::filesystem;

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_double(std::string_view tok, double& out) {
  const auto* end = tok.data() + tok.size();
  const auto res = std::from_chars(tok.data(), end, out);
  return res.ec == std::errc{} && res.ptr == end;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::string lower_ext(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

// Float32 round-trip text for a coordinate.
inline std::string fmt_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(v)));
  return buf;
}

inline PointCloud parse_xyz(const std::string& text, const std::string& origin) {
  std::vector<double> xyz;
  std::vector<double> nrm;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  bool with_normals = false;
  bool first = true;
  while (std::getline(is, line)) {
    ++line_no;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (first) {
      with_normals = toks.size() == 6;
      first = false;
    }
    const std::size_t expected = with_normals ? 6 : 3;
    if (toks.size() != expected) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected) +
                      " numbers, got " + std::to_string(toks.size()));
    }
    for (std::size_t k = 0; k < expected; ++k) {
      double v = 0.0;
      if (!parse_double(toks[k], v) || !std::isfinite(v)) {
        throw DataError(origin + ":" + std::to_string(line_no) + ": malformed number '" + std::string(toks[k]) + "'");
      }
      (k < 3 ? xyz : nrm).push_back(v);
    }
  }
  if (xyz.empty()) throw DataError(origin + ": empty point file");
  PointCloud cloud;
  const auto n = static_cast<Eigen::Index>(xyz.size() / 3);
  cloud.points = Eigen::Map<const Points>(xyz.data(), n, 3);
  if (with_normals) cloud.normals = Points(Eigen::Map<const Points>(nrm.data(), n, 3));
  return cloud;
}

inline PointCloud parse_ply(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(is, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next_line() || line != "ply") throw DataError(origin + ": missing 'ply' magic");
  long long vertex_count = -1;
  bool in_vertex = false;
  bool vertex_seen = false;
  std::vector<std::string> props;
  while (true) {
    if (!next_line()) throw DataError(origin + ": unterminated PLY header");
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "end_header") break;
    if (toks[0] == "format") {
      if (toks.size() < 2 || toks[1] != "ascii") {
        throw DataError(origin + ":" + std::to_string(line_no) + ": only ASCII PLY is supported");
      }
    } else if (toks[0] == "element") {
      in_vertex = toks.size() >= 3 && toks[1] == "vertex";
      if (in_vertex) {
        if (vertex_seen) throw DataError(origin + ": duplicate vertex element");
        vertex_seen = true;
        vertex_count = std::stoll(std::string(toks[2]));
      } else if (!vertex_seen) {
        throw DataError(origin + ": vertex element must come first");
      }
    } else if (toks[0] == "property" && in_vertex) {
      if (toks.size() < 3 || toks[1] == "list") throw DataError(origin + ":" + std::to_string(line_no) + ": bad vertex property");
      props.emplace_back(toks.back());
    }
  }
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < props.size(); ++i) col[props[i]] = i;
  for (const char* need : {"x", "y", "z"}) {
    if (!col.count(need)) throw DataError(origin + ": PLY vertex lacks property " + need);
  }
  const bool with_normals = col.count("nx") && col.count("ny") && col.count("nz");
  if (vertex_count <= 0) throw DataError(origin + ": empty point file");

  PointCloud cloud;
  cloud.points.resize(vertex_count, 3);
  Points normals;
  if (with_normals) normals.resize(vertex_count, 3);
  for (long long v = 0; v < vertex_count; ++v) {
    if (!next_line()) throw DataError(origin + ": expected " + std::to_string(vertex_count) + " vertices, got " + std::to_string(v));
    const auto toks = split_ws(line);
    if (toks.size() != props.size()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": expected " + std::to_string(props.size()) +
                      " values, got " + std::to_string(toks.size()));
    }
    auto read = [&](const char* name) {
      double value = 0.0;
      const auto tok = toks[col.at(name)];
      if (!parse_double(tok, value) || !std::isfinite(value)) {
        throw DataError(origin + ":" + std::to_string(line_no) + ": malformed number '" + std::string(tok) + "'");
      }
      return value;
    };
    cloud.points.row(v) << read("x"), read("y"), read("z");
    if (with_normals) normals.row(v) << read("nx"), read("ny"), read("nz");
  }
  if (with_normals) cloud.normals = std::move(normals);
  return cloud;
}

}  // namespace detail

/// Loads an ASCII `.xyz` (x y z per line) or ASCII `.ply` cloud.
inline PointCloud load_cloud(const fs::path& path) {
  const std::string text = detail::read_file(path);
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw DataError(path.string() + ": empty point file");
  if (detail::lower_ext(path) == ".ply" || text.rfind("ply", 0) == 0) return detail::parse_ply(text, path.string());
  return detail::parse_xyz(text, path.string());
}

/// Writes to a temporary sibling and renames over the destination.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write " + tmp.string());
    os << content;
    if (!os) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string ply_text(const PointCloud& cloud) {
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.normals) os << "property float nx\nproperty float ny\nproperty float nz\n";
  os << "end_header\n";
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    os << detail::fmt_coord(cloud.points(i, 0)) << ' ' << detail::fmt_coord(cloud.points(i, 1)) << ' '
       << detail::fmt_coord(cloud.points(i, 2));
    if (cloud.normals) {
      const auto& n = *cloud.normals;
      os << ' ' << detail::fmt_coord(n(i, 0)) << ' ' << detail::fmt_coord(n(i, 1)) << ' ' << detail::fmt_coord(n(i, 2));
    }
    os << '\n';
  }
  return os.str();
}

inline std::string xyz_text(const PointCloud& cloud) {
  std::ostringstream os;
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    os << detail::fmt_coord(cloud.points(i, 0)) << ' ' << detail::fmt_coord(cloud.points(i, 1)) << ' '
       << detail::fmt_coord(cloud.points(i, 2)) << '\n';
  }
  return os.str();
}

/// Writes PLY for a `.ply` path and XYZ otherwise.
inline void save_cloud(const fs::path& path, const PointCloud& cloud) {
  write_file_atomic(path, detail::lower_ext(path) == ".ply" ? ply_text(cloud) : xyz_text(cloud));
}

/// One 0/1 flag per line; the count must equal `expected_n`.
inline Labels load_mask(const fs::path& path, std::size_t expected_n) {
  const std::string text = detail::read_file(path);
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  Labels mask;
  while (std::getline(is, line)) {
    ++line_no;
    const auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 1 || (toks[0] != "0" && toks[0] != "1")) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": mask entries must be 0 or 1, got '" +
                      std::string(line) + "'");
    }
    mask.push_back(toks[0] == "1" ? 1 : 0);
  }
  if (mask.size() != expected_n) {
    throw DataError(path.string() + ": mask has " + std::to_string(mask.size()) + " entries, cloud has " +
                    std::to_string(expected_n) + " points");
  }
  return mask;
}

inline std::string mask_text(const Labels& mask) {
  std::string s;
  s.reserve(mask.size() * 2);
  for (auto m : mask) {
    s += m ? '1' : '0';
    s += '\n';
  }
  return s;
}

inline void save_mask(const fs::path& path, const Labels& mask) { write_file_atomic(path, mask_text(mask)); }

/// Rows of "dx dy dz".
inline void save_field(const fs::path& path, const Points& field) {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index i = 0; i < field.rows(); ++i) os << field(i, 0) << ' ' << field(i, 1) << ' ' << field(i, 2) << '\n';
  write_file_atomic(path, os.str());
}

/// Linear-interpolated percentile (q in [0, 100]).
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Heat-map intensity per point: min(score / p99, 1), 0 when p99 is 0.
inline std::vector<double> heat_intensity(const std::vector<double>& scores) {
  const double p99 = percentile(scores, 99.0);
  std::vector<double> red(scores.size(), 0.0);
  if (p99 > 0.0) {
    for (std::size_t i = 0; i < scores.size(); ++i) red[i] = std::min(scores[i] / p99, 1.0);
  }
  return red;
}

/// ASCII PLY with red proportional to the heat intensity and blue = 1 - red.
inline std::string heat_map_ply(const PointCloud& cloud, const std::vector<double>& scores) {
  if (scores.size() != cloud.size()) throw DataError("heat map: score count does not match cloud");
  const auto red = heat_intensity(scores);
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n"
     << "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    const auto r = static_cast<int>(std::lround(255.0 * red[static_cast<std::size_t>(i)]));
    os << detail::fmt_coord(cloud.points(i, 0)) << ' ' << detail::fmt_coord(cloud.points(i, 1)) << ' '
       << detail::fmt_coord(cloud.points(i, 2)) << ' ' << r << " 0 " << (255 - r) << '\n';
  }
  return os.str();
}

}  // namespace mc4ad
