#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "e3dp/cloud.hpp"
#include "e3dp/error.hpp"

namespace e3dp {

enum class CloudFormat { kPlyAscii, kXyzl };

inline CloudFormat format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ply" ? CloudFormat::kPlyAscii : CloudFormat::kXyzl;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_int(std::string_view s, int& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

inline PointCloud parse_xyzl(std::string_view text, const std::string& source) {
  PointCloud cloud;
  cloud.source_id = source;
  int columns = 0;
  std::vector<int> sem, inst;
  const auto lines = lines_of(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto fields = split_ws(lines[ln]);
    if (fields.empty() || fields.front().front() == '#') continue;
    const int n = static_cast<int>(fields.size());
    if (n != 6 && n != 8)
      throw ParseError(source, ln + 1, "expected 6 or 8 fields, found " + std::to_string(n));
    if (columns == 0) columns = n;
    if (n != columns)
      throw ParseError(source, ln + 1, "field count " + std::to_string(n) + " differs from earlier lines (" +
                                           std::to_string(columns) + ")");
    double v[6];
    for (int k = 0; k < 6; ++k)
      if (!parse_double(fields[k], v[k])) throw ParseError(source, ln + 1, "bad number '" + std::string(fields[k]) + "'");
    cloud.coords.emplace_back(v[0], v[1], v[2]);
    cloud.colors.emplace_back(v[3], v[4], v[5]);
    if (n == 8) {
      int s, i;
      if (!parse_int(fields[6], s) || !parse_int(fields[7], i))
        throw ParseError(source, ln + 1, "bad label field");
      if (s < -1 || i < -1) throw ParseError(source, ln + 1, "labels must be >= -1");
      if (i >= 0 && s < 0) throw ParseError(source, ln + 1, "instance label on semantically unlabeled point");
      sem.push_back(s);
      inst.push_back(i);
    }
  }
  if (cloud.coords.empty()) throw DataError(source + ": empty input (no points)");
  if (columns == 8) {
    cloud.semantic = std::move(sem);
    cloud.instance = std::move(inst);
  }
  return cloud;
}

inline PointCloud parse_ply_ascii(std::string_view text, const std::string& source) {
  const auto lines = lines_of(text);
  if (lines.empty() || split_ws(lines[0]).empty()) throw DataError(source + ": empty input");
  if (lines[0] != "ply") throw ParseError(source, 1, "missing 'ply' magic");

  struct Property {
    std::string type;
    std::string name;
  };
  std::vector<Property> props;
  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false, ascii = false;
  std::size_t ln = 1;
  for (; ln < lines.size(); ++ln) {
    const auto f = split_ws(lines[ln]);
    if (f.empty()) continue;
    if (f[0] == "end_header") {
      ++ln;
      break;
    }
    if (f[0] == "comment" || f[0] == "obj_info") continue;
    if (f[0] == "format") {
      if (f.size() < 3 || f[1] != "ascii") throw ParseError(source, ln + 1, "only 'format ascii 1.0' is supported");
      ascii = true;
    } else if (f[0] == "element") {
      if (f.size() != 3) throw ParseError(source, ln + 1, "malformed element line");
      in_vertex = f[1] == "vertex";
      if (in_vertex) {
        if (seen_vertex) throw ParseError(source, ln + 1, "duplicate vertex element");
        if (std::from_chars(f[2].data(), f[2].data() + f[2].size(), vertex_count).ec != std::errc())
          throw ParseError(source, ln + 1, "bad vertex count");
        seen_vertex = true;
      } else if (!seen_vertex) {
        throw ParseError(source, ln + 1, "vertex element must come first");
      }
    } else if (f[0] == "property") {
      if (f.size() < 3) throw ParseError(source, ln + 1, "malformed property line");
      if (f[1] == "list") {
        if (in_vertex) throw ParseError(source, ln + 1, "list properties on vertices are not supported");
        continue;
      }
      if (in_vertex) props.push_back({std::string(f[1]), std::string(f[2])});
    } else {
      throw ParseError(source, ln + 1, "unexpected header keyword '" + std::string(f[0]) + "'");
    }
  }
  if (!ascii) throw ParseError(source, 1, "missing format line");
  auto find = [&](std::string_view name) -> int {
    for (std::size_t i = 0; i < props.size(); ++i)
      if (props[i].name == name) return static_cast<int>(i);
    return -1;
  };
  const int ix = find("x"), iy = find("y"), iz = find("z");
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError(source, ln, "vertex element lacks x/y/z properties");
  const int ir = find("red"), ig = find("green"), ib = find("blue");
  const int isem = find("semantic"), iinst = find("instance");
  const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;
  auto color_scale = [&](int idx) {
    const auto& t = props[static_cast<std::size_t>(idx)].type;
    return (t == "uchar" || t == "uint8") ? 1.0 / 255.0 : 1.0;
  };

  PointCloud cloud;
  cloud.source_id = source;
  std::vector<int> sem, inst;
  std::size_t read = 0;
  for (; ln < lines.size() && read < vertex_count; ++ln) {
    const auto f = split_ws(lines[ln]);
    if (f.empty()) continue;
    if (f.size() < props.size())
      throw ParseError(source, ln + 1, "expected " + std::to_string(props.size()) + " values, found " +
                                           std::to_string(f.size()));
    std::vector<double> v(props.size());
    for (std::size_t k = 0; k < props.size(); ++k)
      if (!parse_double(f[k], v[k])) throw ParseError(source, ln + 1, "bad number '" + std::string(f[k]) + "'");
    cloud.coords.emplace_back(v[ix], v[iy], v[iz]);
    if (has_color)
      cloud.colors.emplace_back(v[ir] * color_scale(ir), v[ig] * color_scale(ig), v[ib] * color_scale(ib));
    else
      cloud.colors.emplace_back(0.5, 0.5, 0.5);
    if (isem >= 0) sem.push_back(static_cast<int>(v[isem]));
    if (iinst >= 0) inst.push_back(static_cast<int>(v[iinst]));
    ++read;
  }
  if (read < vertex_count)
    throw ParseError(source, ln, "file ends after " + std::to_string(read) + " of " + std::to_string(vertex_count) +
                                     " vertices");
  if (cloud.coords.empty()) throw DataError(source + ": empty input (no vertices)");
  if (isem >= 0) cloud.semantic = std::move(sem);
  if (iinst >= 0) {
    if (!cloud.semantic) cloud.semantic = std::vector<int>(inst.size(), label::kUnlabeled);
    cloud.instance = std::move(inst);
  }
  cloud.validate();
  return cloud;
}

}  // namespace detail

inline PointCloud parse_cloud(std::string_view text, CloudFormat format, const std::string& source) {
  return format == CloudFormat::kPlyAscii ? detail::parse_ply_ascii(text, source) : detail::parse_xyzl(text, source);
}

/// Loads a cloud; `source_id` becomes the file stem.
inline PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
  auto cloud = parse_cloud(detail::slurp(path), format, path.string());
  cloud.source_id = path.stem().string();
  return cloud;
}

inline PointCloud load_cloud(const std::filesystem::path& path) { return load_cloud(path, format_from_path(path)); }

inline std::string xyzl_text(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 64);
  const bool labeled = cloud.has_semantic();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.coords[i];
    const auto& c = cloud.colors[i];
    for (int k = 0; k < 3; ++k) {
      out += detail::format_double(p[k]);
      out += ' ';
    }
    for (int k = 0; k < 3; ++k) {
      out += detail::format_double(c[k]);
      out += k < 2 || labeled ? " " : "";
    }
    if (labeled) {
      out += std::to_string(cloud.semantic_at(i));
      out += ' ';
      out += std::to_string(cloud.instance_at(i));
    }
    out += '\n';
  }
  return out;
}

inline std::string ply_text(const PointCloud& cloud) {
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (cloud.has_semantic()) os << "property int semantic\nproperty int instance\n";
  os << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.coords[i];
    os << detail::format_double(p.x()) << ' ' << detail::format_double(p.y()) << ' ' << detail::format_double(p.z());
    for (int k = 0; k < 3; ++k)
      os << ' ' << static_cast<int>(std::lround(std::clamp(cloud.colors[i][k], 0.0, 1.0) * 255.0));
    if (cloud.has_semantic()) os << ' ' << cloud.semantic_at(i) << ' ' << cloud.instance_at(i);
    os << '\n';
  }
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// Writes xyzl with 8 columns whenever semantic labels are present.
inline void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  write_text_file(path, format == CloudFormat::kPlyAscii ? ply_text(cloud) : xyzl_text(cloud));
}

inline void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  save_cloud(cloud, path, format_from_path(path));
}

}  // namespace e3dp
