#include "morphmesh/io.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "morphmesh/errors.hpp"

namespace morphmesh {

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) return "nan";
  return std::string(buf.data(), ptr);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  std::array<char, 17> buf{};
  std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(value));
  return std::string(buf.data(), 16);
}

void write_snapshot(std::ostream& out, const MeshTopology& topo, std::span<const Pose> poses) {
  out << "i,j,px,py,pz,qw,qx,qy,qz\n";
  for (int k = 0; k < topo.node_count(); ++k) {
    const NodeId id = topo.node_id(k);
    const Pose& p = poses[static_cast<std::size_t>(k)];
    out << id.i + 1 << ',' << id.j + 1;
    for (int c = 0; c < 3; ++c) out << ',' << format_double(p.position[c]);
    for (int c = 0; c < 4; ++c) out << ',' << format_double(p.orientation.coeffs()[c]);
    out << '\n';
  }
}

std::vector<NodeRecord> read_snapshot(std::istream& in) {
  std::vector<NodeRecord> out;
  std::string line;
  bool header = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      if (line.rfind("i,j,", 0) == 0) continue;
    }
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw Error(ErrorCode::kConfig, "snapshot line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
      fields.push_back(v);
    }
    if (fields.size() != 9) {
      throw Error(ErrorCode::kConfig, "snapshot line " + std::to_string(line_no) + ": expected 9 fields");
    }
    NodeRecord rec;
    rec.node = {static_cast<int>(fields[0]) - 1, static_cast<int>(fields[1]) - 1};
    rec.pose.position = Vec3(fields[2], fields[3], fields[4]);
    rec.pose.orientation = UnitQuaternion::normalized(Vec4(fields[5], fields[6], fields[7], fields[8]));
    out.push_back(rec);
  }
  return out;
}

std::string trajectory_header(const MeshTopology& topo) {
  std::string h = "t";
  static constexpr const char* kCols[] = {"px", "py", "pz", "qw", "qx", "qy", "qz"};
  for (int k = 0; k < topo.node_count(); ++k) {
    const NodeId id = topo.node_id(k);
    const std::string prefix = std::to_string(id.i + 1) + "_" + std::to_string(id.j + 1) + "_";
    for (const char* c : kCols) {
      h += ',';
      h += prefix;
      h += c;
    }
  }
  return h;
}

std::string trajectory_row(double t, std::span<const Pose> poses) {
  std::string row = format_double(t);
  for (const Pose& p : poses) {
    for (int c = 0; c < 3; ++c) {
      row += ',';
      row += format_double(p.position[c]);
    }
    for (int c = 0; c < 4; ++c) {
      row += ',';
      row += format_double(p.orientation.coeffs()[c]);
    }
  }
  return row;
}

}  // namespace morphmesh
