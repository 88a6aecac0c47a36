#pragma once

#include "prgcn/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

// Skeleton topology, spatial partitioning into self / centripetal /
// centrifugal neighbor groups, and the degree-normalized adjacency stack
// consumed by graph convolutions.

namespace prgcn {

struct Skeleton {
  Index num_joints = 0;
  Index center_joint = 0;
  std::vector<std::pair<Index, Index>> edges;  // undirected, no self loops
  std::vector<Index> hop;                      // row-major N*N shortest hop counts

  Index hop_at(Index i, Index j) const { return hop[static_cast<std::size_t>(i * num_joints + j)]; }
};

// Validates edges, runs BFS from every vertex. Disconnected graphs are
// rejected with the unreachable joints named.
Skeleton build_skeleton(Index num_joints, Index center_joint, std::vector<std::pair<Index, Index>> edges);

// "kinetics18" (N=18, OpenPose body model, center = neck) or
// "ntu25" (N=25, Kinect v2, center = middle spine).
Skeleton skeleton_preset(const std::string& name);

// Plain-text edge list: first line "N center_joint", then one "i j" per line.
Skeleton load_skeleton_file(const std::string& path);

inline bool is_preset_name(const std::string& s) { return s == "kinetics18" || s == "ntu25"; }

// Resolves a topology string to either a preset or an edge-list file.
Skeleton resolve_topology(const std::string& topology);

// Group of source j in the neighborhood of target i:
// 0 self, 1 closer to the center joint, 2 otherwise.
Index partition_group(const Skeleton& s, Index target, Index source);

struct PartitionedAdjacency {
  Index num_joints = 0;
  double alpha = 1e-3;
  // raw[k] are 0/1 indicators, normalized[k] = Lambda_k^{-1/2} raw[k] Lambda_k^{-1/2}
  // with Lambda_k^{ii} = row sum + alpha. Row index = target, column = source.
  std::vector<MatrixRM<double>> raw;
  std::vector<MatrixRM<double>> normalized;

  static constexpr Index num_groups = 3;
};

PartitionedAdjacency normalized_adjacency(const Skeleton& s, double alpha = 1e-3);

// Constant (K, N, N) tensor of the normalized stack.
template <typename Scalar>
Tensor<Scalar> adjacency_tensor(const PartitionedAdjacency& adj) {
  Index n = adj.num_joints;
  Index k = static_cast<Index>(adj.normalized.size());
  ArrayX<Scalar> v(k * n * n);
  for (Index g = 0; g < k; ++g)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        v[(g * n + i) * n + j] = static_cast<Scalar>(adj.normalized[static_cast<std::size_t>(g)](i, j));
  return Tensor<Scalar>({k, n, n}, std::move(v));
}

}  // namespace prgcn
