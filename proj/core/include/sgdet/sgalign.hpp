#pragma once

// Sub-graph alignment: turns each anchor's span of snippets into a fixed
// number of feature vectors by interpolating and rescaling along the
// temporal order, once on the raw node features and once on features
// smoothed over each node's semantic neighbours.

#include <cstddef>
#include <memory>
#include <vector>

#include "sgdet/graph.hpp"
#include "sgdet/tensor.hpp"

namespace sgdet {

/// Candidate segment between two snippet positions, start < end.
struct Anchor {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

/// All (start, end) with 0 < start < end < length and end - start < max_duration,
/// in lexicographic order.
std::vector<Anchor> enumerate_anchors(std::size_t length, std::size_t max_duration);

/// Sample positions used for one anchor at resolution tau:
/// d = end - start, s = max(1, floor(d / tau)), T = tau * s,
/// positions start + k * d / T for k in [0, T).
std::vector<double> sample_positions(const Anchor& anchor, std::size_t resolution);

/// Reference implementation for one anchor: interpolate every sample, average
/// runs of s samples, concatenate the tau means. Returns [tau * C].
Tensor interp_rescale(const Tensor& features, const Anchor& anchor, std::size_t resolution);

/// Sparse linear map from nodes to (anchor, bin) rows. Row r = anchor * tau + bin
/// holds the interpolation weights of the samples falling into that bin.
struct SamplingPlan {
  std::size_t length = 0;
  std::size_t resolution = 0;
  std::size_t anchors = 0;
  std::vector<std::size_t> row_begin;  ///< size anchors * resolution + 1
  std::vector<std::size_t> nodes;
  std::vector<double> weights;

  std::size_t rows() const { return anchors * resolution; }
};

/// Plans are shared with the backward rules of the ops that consume them.
using PlanPtr = std::shared_ptr<const SamplingPlan>;

PlanPtr make_sampling_plan(const std::vector<Anchor>& anchors, std::size_t length,
                           std::size_t resolution);

/// Batched interp_rescale: [C x L] -> [J x tau*C].
Tensor apply_plan(const Tensor& features, const PlanPtr& plan);

/// Every column replaced by the mean of its semantic neighbours (self excluded).
Tensor semantic_smooth(const Tensor& features, const EdgeList& edges);

/// Per anchor: [temporal tau1 vectors | semantic tau2 vectors], [J x (tau1 + tau2) * C].
/// tau2 = 0 drops the semantic part.
Tensor sgalign_forward(const Tensor& features, const EdgeList& edges,
                       const std::vector<Anchor>& anchors, std::size_t tau1, std::size_t tau2);

/// apply_plan(features, plan) . weight[row_offset : row_offset + tau*C, :]
/// without materialising the aligned features. Result [J x H].
Tensor aligned_projection(const Tensor& features, const PlanPtr& plan, const Tensor& weight,
                          std::size_t row_offset = 0);

struct ProjectionPart {
  Tensor features;  ///< [C x L]
  PlanPtr plan;
  std::size_t row_offset = 0;
};

/// Sum of aligned_projection over parts sharing one weight and anchor set.
Tensor aligned_projection(const std::vector<ProjectionPart>& parts, const Tensor& weight);

}  // namespace sgdet
