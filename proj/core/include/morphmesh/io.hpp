#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "morphmesh/mesh.hpp"

namespace morphmesh {

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

struct NodeRecord {
  NodeId node;
  Pose pose;
};

// Mesh snapshot: header "i,j,px,py,pz,qw,qx,qy,qz" then one record per node
// with one-based indices.
void write_snapshot(std::ostream& out, const MeshTopology& topology, std::span<const Pose> poses);
// Throws Error(kConfig) on malformed input; quaternions are renormalized.
std::vector<NodeRecord> read_snapshot(std::istream& in);

// Header of the trajectory CSV: t then px..qz per node labelled "i_j_".
std::string trajectory_header(const MeshTopology& topology);
std::string trajectory_row(double t, std::span<const Pose> poses);

}  // namespace morphmesh
