#include "sgdet/graph.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <sstream>

#include "sgdet/errors.hpp"

namespace sgdet {

TemporalAdjacency temporal_adjacency(std::size_t length) {
  if (length == 0) throw ConfigError("temporal_adjacency: graph has no nodes");
  std::vector<double> fwd(length * length, 0.0), bwd(length * length, 0.0);
  for (std::size_t j = 0; j + 1 < length; ++j) fwd[(j + 1) * length + j] = 1.0;
  for (std::size_t j = 1; j < length; ++j) bwd[(j - 1) * length + j] = 1.0;
  return {Tensor::from_vector({length, length}, std::move(fwd)),
          Tensor::from_vector({length, length}, std::move(bwd))};
}

EdgeList knn_semantic_edges(const Tensor& features, std::size_t k) {
  if (features.rank() != 2) {
    throw DimensionError("knn_semantic_edges: features must be [C x L], got " +
                         shape_string(features.shape()));
  }
  const std::size_t channels = features.dim(0), length = features.dim(1);
  if (k >= length) {
    throw ConfigError("knn_semantic_edges: K=" + std::to_string(k) + " needs more than " +
                      std::to_string(length) + " nodes");
  }
  if (k == 0) return {};
  const auto x = features.data();

  // Symmetric distance table, each pair computed once.
  std::vector<double> dist(length * length, 0.0);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = i + 1; j < length; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = x[c * length + i] - x[c * length + j];
        acc += d * d;
      }
      dist[i * length + j] = acc;
      dist[j * length + i] = acc;
    }
  }

  EdgeList edges;
  edges.reserve(k * length);
  std::vector<std::size_t> candidates(length - 1);
  for (std::size_t i = 0; i < length; ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < length; ++j)
      if (j != i) candidates[w++] = j;
    const double* row = dist.data() + i * length;
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                      candidates.end(), [row](std::size_t a, std::size_t b) {
                        return row[a] < row[b] || (row[a] == row[b] && a < b);
                      });
    for (std::size_t n = 0; n < k; ++n) edges.push_back({candidates[n], i});
  }
  return edges;
}

Tensor semantic_adjacency(const EdgeList& edges, std::size_t length) {
  std::vector<double> a(length * length, 0.0);
  for (const auto& e : edges) {
    if (e.source >= length || e.target >= length) {
      throw DataError("semantic_adjacency: edge (" + std::to_string(e.source) + ", " +
                      std::to_string(e.target) + ") outside a graph of " +
                      std::to_string(length) + " nodes");
    }
    a[e.source * length + e.target] = 1.0;
  }
  return Tensor::from_vector({length, length}, std::move(a));
}

NeighborTable neighbor_table(const EdgeList& edges, std::size_t length) {
  NeighborTable table(length);
  for (const auto& e : edges) {
    if (e.source >= length || e.target >= length) {
      throw DataError("neighbor_table: edge (" + std::to_string(e.source) + ", " +
                      std::to_string(e.target) + ") outside a graph of " +
                      std::to_string(length) + " nodes");
    }
    table[e.target].push_back(e.source);
  }
  return table;
}

nlohmann::json graph_to_json(const VideoGraph& graph) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : graph.semantic_layers) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : layer) edges.push_back({e.source, e.target});
    layers.push_back(std::move(edges));
  }
  return {{"L", graph.length}, {"K", graph.k}, {"layers", std::move(layers)}};
}

std::string graph_to_dot(const VideoGraph& graph) {
  static constexpr std::array<const char*, 6> kColors = {"red",    "blue",   "darkgreen",
                                                         "orange", "purple", "brown"};
  std::ostringstream os;
  os << "digraph video {\n  rankdir=LR;\n";
  for (std::size_t i = 0; i < graph.length; ++i) os << "  n" << i << ";\n";
  for (std::size_t i = 0; i + 1 < graph.length; ++i) {
    os << "  n" << i << " -> n" << i + 1 << " [color=gray, dir=both];\n";
  }
  for (std::size_t l = 0; l < graph.semantic_layers.size(); ++l) {
    const char* color = kColors[l % kColors.size()];
    for (const auto& e : graph.semantic_layers[l]) {
      os << "  n" << e.source << " -> n" << e.target << " [color=" << color
         << ", constraint=false, label=\"L" << l << "\"];\n";
    }
  }
  os << "}\n";
  return os.str();
}

}  // namespace sgdet
