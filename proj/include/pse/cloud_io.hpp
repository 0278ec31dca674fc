#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pse/error.hpp"
#include "pse/pointcloud.hpp"

namespace pse {

enum class CloudFormat { xyz, ply };

struct CloudFileData {
  PointCloud cloud;
  std::size_t pad = 0;  // trailing rows added to meet a divisibility rule
};

namespace detail {

inline bool parse_pad_comment(const std::string& text, std::size_t& pad) {
  std::istringstream ss(text);
  std::string word;
  if (!(ss >> word) || word != "pad") return false;
  long long value = 0;
  if (!(ss >> value) || value < 0) return false;
  pad = static_cast<std::size_t>(value);
  return true;
}

inline std::size_t ply_scalar_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" ||
      type == "float" || type == "float32")
    return 4;
  if (type == "double" || type == "float64" || type == "int64" || type == "uint64") return 8;
  return 0;
}

}  // namespace detail

inline CloudFormat format_for_path(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot != std::string::npos) {
    std::string ext = path.substr(dot + 1);
    for (char& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == "ply") return CloudFormat::ply;
  }
  return CloudFormat::xyz;
}

// ---------------------------------------------------------------------------
// XYZ: ASCII, one point per line, three whitespace-separated numbers,
// '#' starts a comment line.
// ---------------------------------------------------------------------------

inline CloudFileData parse_xyz_text(std::istream& in, const std::string& origin) {
  CloudFileData out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      std::size_t pad = 0;
      if (detail::parse_pad_comment(line.substr(first + 1), pad)) out.pad = pad;
      continue;
    }
    std::istringstream ss(line.substr(first));
    Vec3 p;
    std::string extra;
    if (!(ss >> p[0] >> p[1] >> p[2]))
      throw parse_error(origin + ": expected three numbers", line_no);
    if (ss >> extra)
      throw parse_error(origin + ": trailing token '" + extra + "'", line_no);
    out.cloud.pts.push_back(p);
  }
  if (out.cloud.empty()) throw data_error(origin + ": no points");
  if (!all_finite(out.cloud)) throw data_error(origin + ": non-finite coordinates");
  return out;
}

inline void write_xyz_text(std::ostream& os, const PointCloud& cloud, std::size_t pad) {
  if (pad > 0) os << "# pad " << pad << "\n";
  char buf[96];
  for (const Vec3& p : cloud.pts) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// PLY: binary_little_endian 1.0, element vertex with float32 x, y, z.
// Extra fixed-size vertex properties are skipped on read.
// ---------------------------------------------------------------------------

inline CloudFileData parse_ply(std::istream& in, const std::string& origin) {
  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) throw parse_error(origin + ": truncated header", line_no);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  if (next_line() != "ply") throw parse_error(origin + ": missing ply magic", line_no);
  bool format_seen = false;
  std::size_t vertex_count = 0;
  bool in_vertex_element = false, vertex_seen = false;
  // byte offset of x/y/z within one vertex record; npos while undiscovered
  std::size_t stride = 0;
  std::size_t off[3] = {std::string::npos, std::string::npos, std::string::npos};
  CloudFileData out;

  for (;;) {
    std::istringstream ss(next_line());
    std::string tok;
    ss >> tok;
    if (tok.empty() || tok == "comment" || tok == "obj_info") {
      std::string word;
      if (tok == "comment" && ss >> word && word == "pad") {
        long long value = 0;
        if (ss >> value && value >= 0) out.pad = static_cast<std::size_t>(value);
      }
      continue;
    }
    if (tok == "format") {
      std::string kind, version;
      ss >> kind >> version;
      if (kind != "binary_little_endian" || version != "1.0")
        throw parse_error(origin + ": unsupported format '" + kind + " " + version + "'",
                          line_no);
      format_seen = true;
      continue;
    }
    if (tok == "element") {
      std::string name;
      long long count = 0;
      if (!(ss >> name >> count) || count < 0)
        throw parse_error(origin + ": bad element line", line_no);
      in_vertex_element = name == "vertex";
      if (in_vertex_element) {
        vertex_seen = true;
        vertex_count = static_cast<std::size_t>(count);
      }
      continue;
    }
    if (tok == "property") {
      if (!in_vertex_element) continue;  // properties of later elements: unused
      std::string type, name;
      if (!(ss >> type >> name)) throw parse_error(origin + ": bad property line", line_no);
      if (type == "list")
        throw parse_error(origin + ": list properties on vertex are unsupported", line_no);
      const std::size_t sz = detail::ply_scalar_size(type);
      if (sz == 0)
        throw parse_error(origin + ": unknown property type '" + type + "'", line_no);
      if (name == "x" || name == "y" || name == "z") {
        if (type != "float" && type != "float32")
          throw parse_error(origin + ": coordinate property must be float32", line_no);
        off[name[0] - 'x'] = stride;
      }
      stride += sz;
      continue;
    }
    if (tok == "end_header") break;
    throw parse_error(origin + ": unexpected header token '" + tok + "'", line_no);
  }

  if (!format_seen) throw parse_error(origin + ": missing format line", line_no);
  if (!vertex_seen) throw parse_error(origin + ": missing vertex element", line_no);
  if (off[0] == std::string::npos || off[1] == std::string::npos ||
      off[2] == std::string::npos)
    throw parse_error(origin + ": vertex element lacks x/y/z", line_no);
  if (vertex_count == 0) throw data_error(origin + ": no points");

  std::vector<char> record(stride);
  out.cloud.pts.reserve(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (!in.read(record.data(), static_cast<std::streamsize>(stride)))
      throw data_error(origin + ": truncated vertex data at point " + std::to_string(i));
    Vec3 p;
    for (std::size_t d = 0; d < 3; ++d) {
      float f;
      std::memcpy(&f, record.data() + off[d], sizeof(float));
      p[d] = static_cast<double>(f);
    }
    out.cloud.pts.push_back(p);
  }
  if (!all_finite(out.cloud)) throw data_error(origin + ": non-finite coordinates");
  return out;
}

inline void write_ply(std::ostream& os, const PointCloud& cloud, std::size_t pad) {
  os << "ply\nformat binary_little_endian 1.0\n";
  if (pad > 0) os << "comment pad " << pad << "\n";
  os << "element vertex " << cloud.count()
     << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const Vec3& p : cloud.pts) {
    float f[3] = {static_cast<float>(p[0]), static_cast<float>(p[1]),
                  static_cast<float>(p[2])};
    os.write(reinterpret_cast<const char*>(f), sizeof(f));
  }
}

// ---------------------------------------------------------------------------
// File-level entry points
// ---------------------------------------------------------------------------

inline CloudFileData parse_cloud_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path);
  // Sniff the magic rather than trusting the extension.
  char magic[4] = {};
  in.read(magic, 4);
  in.clear();
  in.seekg(0);
  if (std::strncmp(magic, "ply", 3) == 0 && (magic[3] == '\n' || magic[3] == '\r'))
    return parse_ply(in, path);
  return parse_xyz_text(in, path);
}

inline PointCloud parse_cloud(const std::string& path) {
  return parse_cloud_file(path).cloud;
}

inline void write_cloud(const std::string& path, const PointCloud& cloud,
                        std::size_t pad = 0) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot write " + path);
  if (format_for_path(path) == CloudFormat::ply)
    write_ply(os, cloud, pad);
  else
    write_xyz_text(os, cloud, pad);
  if (!os) throw data_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// CSV: ',' delimiter, '\n' line endings, no quoting.
// ---------------------------------------------------------------------------

inline std::string csv_fixed(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline void write_offsets_csv(const std::string& path, const std::vector<Vec3>& offsets) {
  std::ofstream os(path);
  if (!os) throw data_error("cannot write " + path);
  os << "dx,dy,dz\n";
  char buf[96];
  for (const Vec3& d : offsets) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", d[0], d[1], d[2]);
    os << buf;
  }
  if (!os) throw data_error("write failed: " + path);
}

}  // namespace pse
