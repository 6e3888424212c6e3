#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sgdet/checkpoint.hpp"
#include "sgdet/graph.hpp"
#include "sgdet/tensor.hpp"

namespace sgdet {

/// Bottleneck of the temporal stream: pointwise reduce, grouped kernel-3
/// convolution over the snippet chain, pointwise expand.
struct TemporalStreamParams {
  Tensor reduce_w;  ///< [B x C]
  Tensor reduce_b;  ///< [B]
  Tensor conv_w;    ///< [3 x B/g x B]
  Tensor conv_b;    ///< [B]
  Tensor expand_w;  ///< [C x B]
  Tensor expand_b;  ///< [C]
};

/// Bottleneck of the semantic stream: pointwise reduce, grouped edge
/// convolution W_self.Z + W_nbr.Z.A_s, pointwise expand.
struct SemanticStreamParams {
  Tensor reduce_w;    ///< [B x C]
  Tensor reduce_b;    ///< [B]
  Tensor self_w;      ///< [1 x B/g x B]
  Tensor neighbor_w;  ///< [1 x B/g x B]
  Tensor agg_b;       ///< [B]
  Tensor expand_w;    ///< [C x B]
  Tensor expand_b;    ///< [C]
};

struct GCNeXtParams {
  std::size_t width = 0;
  std::size_t bottleneck = 0;
  std::size_t cardinality = 1;
  bool semantic_enabled = true;
  TemporalStreamParams temporal;
  SemanticStreamParams semantic;
};

/// All-zero parameters for a block of the given shape. Throws ConfigError when
/// the cardinality does not divide the bottleneck width (width / ratio).
GCNeXtParams make_gcnext_params(std::size_t width, std::size_t cardinality,
                                std::size_t bottleneck_ratio = 2, bool semantic_enabled = true);

/// Adds the block's tensors to `params` under `prefix` (handles stay shared).
void register_gcnext_params(GCNeXtParams& block, ParameterSet& params, const std::string& prefix);

/// W0.X + W1.X.A, optionally passed through relu.
Tensor edge_aggregate(const Tensor& x, const Tensor& adjacency, const Tensor& w0,
                      const Tensor& w1, bool activate = true);

/// One block: relu(temporal_stream(X) + semantic_stream(X) + X). The semantic
/// edges must come from the block input X.
Tensor gcnext_forward(const Tensor& x, const EdgeList& semantic_edges, const GCNeXtParams& params);

/// Un-activated temporal stream output (for inspection and tests).
Tensor temporal_stream(const Tensor& x, const GCNeXtParams& params);
Tensor semantic_stream(const Tensor& x, const NeighborTable& neighbors, const GCNeXtParams& params);

/// Max |(W2.X + W3.X.A_f + W1.X.A_b) - conv1d_k3(X; [W1, W2, W3])| for C x C
/// matrices W1..W3 (output x input) and X [C x L].
double temporal_stream_equivalence(const Tensor& x, const Tensor& w1, const Tensor& w2,
                                   const Tensor& w3);

/// Packs C_out x C_in matrices [W1, W2, W3] into a kernel-3 conv weight
/// [3 x C_in x C_out].
Tensor pack_conv_kernel(const std::vector<Tensor>& taps);

struct BackboneOutput {
  Tensor block1;                         ///< output of the first block
  Tensor final;                          ///< output of the last block
  std::vector<EdgeList> semantic_edges;  ///< edges used by each block
};

/// Runs the blocks in order, recomputing k-NN edges from each block's input.
BackboneOutput backbone_forward(const Tensor& x, const std::vector<GCNeXtParams>& blocks,
                                std::size_t k);

}  // namespace sgdet
