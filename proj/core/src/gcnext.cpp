#include "sgdet/gcnext.hpp"

#include <algorithm>
#include <cmath>

#include "sgdet/errors.hpp"

namespace sgdet {

namespace {

Tensor pointwise(const Tensor& w, const Tensor& b, const Tensor& x) {
  return add_bias(matmul(w, x), b, 0);
}

}  // namespace

GCNeXtParams make_gcnext_params(std::size_t width, std::size_t cardinality,
                                std::size_t bottleneck_ratio, bool semantic_enabled) {
  if (width == 0 || bottleneck_ratio == 0 || width % bottleneck_ratio != 0) {
    throw ConfigError("gcnext: width " + std::to_string(width) + " not divisible by ratio " +
                      std::to_string(bottleneck_ratio));
  }
  const std::size_t b = width / bottleneck_ratio;
  if (cardinality == 0 || b % cardinality != 0) {
    throw ConfigError("gcnext: cardinality " + std::to_string(cardinality) +
                      " does not divide bottleneck width " + std::to_string(b));
  }
  const std::size_t per_group = b / cardinality;
  GCNeXtParams p;
  p.width = width;
  p.bottleneck = b;
  p.cardinality = cardinality;
  p.semantic_enabled = semantic_enabled;
  p.temporal = {Tensor::zeros({b, width}), Tensor::zeros({b}),
                Tensor::zeros({3, per_group, b}), Tensor::zeros({b}),
                Tensor::zeros({width, b}), Tensor::zeros({width})};
  p.semantic = {Tensor::zeros({b, width}),    Tensor::zeros({b}),
                Tensor::zeros({1, per_group, b}), Tensor::zeros({1, per_group, b}),
                Tensor::zeros({b}),           Tensor::zeros({width, b}),
                Tensor::zeros({width})};
  return p;
}

void register_gcnext_params(GCNeXtParams& block, ParameterSet& params, const std::string& prefix) {
  auto& t = block.temporal;
  t.reduce_w = params.add(prefix + "/temporal/reduce_w", t.reduce_w);
  t.reduce_b = params.add(prefix + "/temporal/reduce_b", t.reduce_b);
  t.conv_w = params.add(prefix + "/temporal/conv_w", t.conv_w);
  t.conv_b = params.add(prefix + "/temporal/conv_b", t.conv_b);
  t.expand_w = params.add(prefix + "/temporal/expand_w", t.expand_w);
  t.expand_b = params.add(prefix + "/temporal/expand_b", t.expand_b);
  if (!block.semantic_enabled) return;
  auto& s = block.semantic;
  s.reduce_w = params.add(prefix + "/semantic/reduce_w", s.reduce_w);
  s.reduce_b = params.add(prefix + "/semantic/reduce_b", s.reduce_b);
  s.self_w = params.add(prefix + "/semantic/self_w", s.self_w);
  s.neighbor_w = params.add(prefix + "/semantic/neighbor_w", s.neighbor_w);
  s.agg_b = params.add(prefix + "/semantic/agg_b", s.agg_b);
  s.expand_w = params.add(prefix + "/semantic/expand_w", s.expand_w);
  s.expand_b = params.add(prefix + "/semantic/expand_b", s.expand_b);
}

Tensor edge_aggregate(const Tensor& x, const Tensor& adjacency, const Tensor& w0,
                      const Tensor& w1, bool activate) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1) ||
      x.rank() != 2 || adjacency.dim(0) != x.dim(1)) {
    throw DimensionError("edge_aggregate: adjacency " + shape_string(adjacency.shape()) +
                         " does not fit features " + shape_string(x.shape()));
  }
  Tensor out = add(matmul(w0, x), matmul(matmul(w1, x), adjacency));
  return activate ? relu(out) : out;
}

Tensor temporal_stream(const Tensor& x, const GCNeXtParams& params) {
  const auto& t = params.temporal;
  Tensor z = relu(pointwise(t.reduce_w, t.reduce_b, x));
  z = relu(add_bias(grouped_conv1d(z, t.conv_w, params.cardinality, 1), t.conv_b, 0));
  return pointwise(t.expand_w, t.expand_b, z);
}

Tensor semantic_stream(const Tensor& x, const NeighborTable& neighbors,
                       const GCNeXtParams& params) {
  const auto& s = params.semantic;
  Tensor z = relu(pointwise(s.reduce_w, s.reduce_b, x));
  Tensor agg = add(grouped_conv1d(z, s.self_w, params.cardinality, 0),
                   grouped_conv1d(gather_sum(z, neighbors), s.neighbor_w, params.cardinality, 0));
  z = relu(add_bias(agg, s.agg_b, 0));
  return pointwise(s.expand_w, s.expand_b, z);
}

Tensor gcnext_forward(const Tensor& x, const EdgeList& semantic_edges,
                      const GCNeXtParams& params) {
  if (x.rank() != 2 || x.dim(0) != params.width) {
    throw ConfigError("gcnext_forward: block width " + std::to_string(params.width) +
                      " does not match input " + shape_string(x.shape()));
  }
  Tensor merged = add(temporal_stream(x, params), x);
  if (params.semantic_enabled) {
    merged = add(merged, semantic_stream(x, neighbor_table(semantic_edges, x.dim(1)), params));
  }
  return relu(merged);
}

Tensor pack_conv_kernel(const std::vector<Tensor>& taps) {
  if (taps.empty()) throw DimensionError("pack_conv_kernel: no taps");
  const std::size_t c_out = taps.front().dim(0), c_in = taps.front().dim(1);
  std::vector<double> w(taps.size() * c_in * c_out);
  for (std::size_t j = 0; j < taps.size(); ++j) {
    if (taps[j].shape() != Shape{c_out, c_in}) {
      throw DimensionError("pack_conv_kernel: tap shapes differ");
    }
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t c = 0; c < c_in; ++c) w[(j * c_in + c) * c_out + o] = taps[j].at(o, c);
  }
  return Tensor::from_vector({taps.size(), c_in, c_out}, std::move(w));
}

double temporal_stream_equivalence(const Tensor& x, const Tensor& w1, const Tensor& w2,
                                   const Tensor& w3) {
  NoGradGuard no_grad;
  const auto adj = temporal_adjacency(x.dim(1));
  Tensor graph_form = add(add(matmul(w2, x), matmul(matmul(w3, x), adj.forward)),
                          matmul(matmul(w1, x), adj.backward));
  Tensor conv_form = grouped_conv1d(x, pack_conv_kernel({w1, w2, w3}), 1, 1);
  double worst = 0.0;
  const auto a = graph_form.data(), b = conv_form.data();
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

BackboneOutput backbone_forward(const Tensor& x, const std::vector<GCNeXtParams>& blocks,
                                std::size_t k) {
  if (blocks.empty()) throw ConfigError("backbone_forward: no blocks");
  BackboneOutput out;
  Tensor h = x;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    EdgeList edges;
    if (blocks[b].semantic_enabled && k > 0) edges = knn_semantic_edges(h, k);
    h = gcnext_forward(h, edges, blocks[b]);
    out.semantic_edges.push_back(std::move(edges));
    if (b == 0) out.block1 = h;
  }
  out.final = h;
  return out;
}

}  // namespace sgdet
