#pragma once

// Video graphs over snippets. Nodes are zero-based snippet indices.
//
// Adjacency convention: A[i, j] = 1 means node j aggregates the feature of
// node i, so column j of X.A sums the features node j receives.

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdet/tensor.hpp"

namespace sgdet {

/// Directed edge: `target` aggregates the feature of `source`.
struct Edge {
  std::size_t source = 0;
  std::size_t target = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

using EdgeList = std::vector<Edge>;
/// neighbors[i] lists the sources node i aggregates, nearest first.
using NeighborTable = std::vector<std::vector<std::size_t>>;

struct TemporalAdjacency {
  Tensor forward;   ///< column j = e_{j+1}, last column zero
  Tensor backward;  ///< column j = e_{j-1}, first column zero
};

struct VideoGraph {
  std::size_t length = 0;
  std::size_t k = 0;
  TemporalAdjacency temporal;
  std::vector<EdgeList> semantic_layers;
};

/// Throws ConfigError for length 0.
TemporalAdjacency temporal_adjacency(std::size_t length);

/// K nearest neighbours of every node by Euclidean distance between columns
/// of `features` [C x L], excluding the node itself; ties go to the smaller
/// index. Edges are emitted target-major, nearest neighbour first.
EdgeList knn_semantic_edges(const Tensor& features, std::size_t k);

/// Dense L x L indicator matrix of an edge list.
Tensor semantic_adjacency(const EdgeList& edges, std::size_t length);

NeighborTable neighbor_table(const EdgeList& edges, std::size_t length);

/// {"L": .., "K": .., "layers": [[[src, dst], ...], ...]}
nlohmann::json graph_to_json(const VideoGraph& graph);

/// Graphviz rendering: temporal chain plus one colour per semantic layer.
std::string graph_to_dot(const VideoGraph& graph);

}  // namespace sgdet
