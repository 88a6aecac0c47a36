#include "prgcn/graph.hpp"

#include <deque>
#include <fstream>
#include <sstream>

namespace prgcn {

namespace {

std::vector<Index> bfs_from(Index start, Index n, const std::vector<std::vector<Index>>& nbrs) {
  std::vector<Index> dist(static_cast<std::size_t>(n), -1);
  std::deque<Index> queue{start};
  dist[static_cast<std::size_t>(start)] = 0;
  while (!queue.empty()) {
    Index v = queue.front();
    queue.pop_front();
    for (Index w : nbrs[static_cast<std::size_t>(v)])
      if (dist[static_cast<std::size_t>(w)] < 0) {
        dist[static_cast<std::size_t>(w)] = dist[static_cast<std::size_t>(v)] + 1;
        queue.push_back(w);
      }
  }
  return dist;
}

}  // namespace

Skeleton build_skeleton(Index num_joints, Index center_joint, std::vector<std::pair<Index, Index>> edges) {
  if (num_joints < 1) throw std::invalid_argument("skeleton: joint count must be positive");
  if (center_joint < 0 || center_joint >= num_joints)
    throw std::invalid_argument("skeleton: center joint " + std::to_string(center_joint) +
                                " out of range [0," + std::to_string(num_joints) + ")");
  std::vector<std::vector<Index>> nbrs(static_cast<std::size_t>(num_joints));
  for (auto [i, j] : edges) {
    if (i < 0 || i >= num_joints || j < 0 || j >= num_joints)
      throw std::invalid_argument("skeleton: edge (" + std::to_string(i) + "," + std::to_string(j) +
                                  ") out of range for " + std::to_string(num_joints) + " joints");
    if (i == j) throw std::invalid_argument("skeleton: self loop at joint " + std::to_string(i));
    nbrs[static_cast<std::size_t>(i)].push_back(j);
    nbrs[static_cast<std::size_t>(j)].push_back(i);
  }

  Skeleton s;
  s.num_joints = num_joints;
  s.center_joint = center_joint;
  s.edges = std::move(edges);
  s.hop.resize(static_cast<std::size_t>(num_joints * num_joints));
  for (Index v = 0; v < num_joints; ++v) {
    auto dist = bfs_from(v, num_joints, nbrs);
    if (v == center_joint) {
      std::string unreachable;
      for (Index w = 0; w < num_joints; ++w)
        if (dist[static_cast<std::size_t>(w)] < 0) unreachable += (unreachable.empty() ? "" : ", ") + std::to_string(w);
      if (!unreachable.empty())
        throw std::invalid_argument("skeleton: graph is disconnected, unreachable joints: " + unreachable);
    }
    for (Index w = 0; w < num_joints; ++w) s.hop[static_cast<std::size_t>(v * num_joints + w)] = dist[static_cast<std::size_t>(w)];
  }
  return s;
}

Skeleton skeleton_preset(const std::string& name) {
  if (name == "kinetics18") {
    // OpenPose 18-joint body model, joint 1 = neck.
    std::vector<std::pair<Index, Index>> e = {{4, 3},   {3, 2},   {7, 6},   {6, 5},  {13, 12}, {12, 11},
                                              {10, 9},  {9, 8},   {11, 5},  {8, 2},  {5, 1},   {2, 1},
                                              {0, 1},   {15, 0},  {14, 0},  {17, 15}, {16, 14}};
    return build_skeleton(18, 1, std::move(e));
  }
  if (name == "ntu25") {
    // Kinect v2 25-joint model, joint 20 = middle spine.
    std::vector<std::pair<Index, Index>> e = {{0, 1},   {1, 20},  {2, 20},  {3, 2},   {4, 20},  {5, 4},
                                              {6, 5},   {7, 6},   {8, 20},  {9, 8},   {10, 9},  {11, 10},
                                              {12, 0},  {13, 12}, {14, 13}, {15, 14}, {16, 0},  {17, 16},
                                              {18, 17}, {19, 18}, {21, 22}, {22, 7},  {23, 24}, {24, 11}};
    return build_skeleton(25, 20, std::move(e));
  }
  throw std::invalid_argument("skeleton: unknown preset '" + name + "' (expected kinetics18 or ntu25)");
}

Skeleton load_skeleton_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("skeleton: cannot open topology file " + path);
  std::string line;
  Index n = 0, center = 0;
  std::vector<std::pair<Index, Index>> edges;
  bool header_seen = false;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    Index a, b;
    if (!(ls >> a)) continue;
    if (!(ls >> b))
      throw std::runtime_error("skeleton: " + path + ":" + std::to_string(line_no) + ": expected two integers");
    if (!header_seen) {
      n = a;
      center = b;
      header_seen = true;
    } else {
      edges.emplace_back(a, b);
    }
  }
  if (!header_seen) throw std::runtime_error("skeleton: " + path + ": missing header line \"N center_joint\"");
  return build_skeleton(n, center, std::move(edges));
}

Skeleton resolve_topology(const std::string& topology) {
  if (is_preset_name(topology)) return skeleton_preset(topology);
  return load_skeleton_file(topology);
}

Index partition_group(const Skeleton& s, Index target, Index source) {
  if (source == target) return 0;
  return s.hop_at(source, s.center_joint) < s.hop_at(target, s.center_joint) ? 1 : 2;
}

PartitionedAdjacency normalized_adjacency(const Skeleton& s, double alpha) {
  if (alpha <= 0) throw std::invalid_argument("normalized_adjacency: alpha must be positive");
  Index n = s.num_joints;
  PartitionedAdjacency adj;
  adj.num_joints = n;
  adj.alpha = alpha;
  adj.raw.assign(PartitionedAdjacency::num_groups, MatrixRM<double>::Zero(n, n));
  for (Index i = 0; i < n; ++i) adj.raw[0](i, i) = 1.0;
  for (auto [a, b] : s.edges) {
    adj.raw[static_cast<std::size_t>(partition_group(s, a, b))](a, b) = 1.0;
    adj.raw[static_cast<std::size_t>(partition_group(s, b, a))](b, a) = 1.0;
  }
  adj.normalized.reserve(adj.raw.size());
  for (const auto& raw : adj.raw) {
    Eigen::VectorXd inv_sqrt = (raw.rowwise().sum().array() + alpha).rsqrt().matrix();
    adj.normalized.push_back(inv_sqrt.asDiagonal() * raw * inv_sqrt.asDiagonal());
  }
  return adj;
}

}  // namespace prgcn
