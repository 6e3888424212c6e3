#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sgdet/checkpoint.hpp"
#include "sgdet/segment.hpp"
#include "sgdet/sgalign.hpp"
#include "sgdet/tensor.hpp"

namespace sgdet {

inline constexpr double kDefaultLambda1 = 10.0;
inline constexpr double kDefaultLambda2 = 1e-4;
inline constexpr double kProbabilityEpsilon = 1e-7;

struct HeadParams {
  /// Localization stack: weights [in x out] and biases [out] per layer; the
  /// last layer has exactly two outputs (classification, regression).
  std::vector<Tensor> loc_w;
  std::vector<Tensor> loc_b;
  Tensor node_w;  ///< [2 x C], start and end rows
  Tensor node_b;  ///< [2]
  double lambda1 = kDefaultLambda1;
  double lambda2 = kDefaultLambda2;
};

/// Zero-initialised head for aligned features of width `input_width`,
/// hidden widths `hidden` and backbone width `channels`.
HeadParams make_head_params(std::size_t input_width, const std::vector<std::size_t>& hidden,
                            std::size_t channels);
void register_head_params(HeadParams& head, ParameterSet& params);

/// [J x F] -> [J x 2] with column 0 = p_cls, column 1 = p_reg.
Tensor localization_forward(const Tensor& features, const HeadParams& params);

/// Finishes localization_forward from the first layer's pre-activation [J x H1].
Tensor localization_from_hidden(const Tensor& first_layer, const HeadParams& params);

/// [C x L] -> [L x 2] with column 0 = p_start, column 1 = p_end.
Tensor node_branch_forward(const Tensor& block1_features, const HeadParams& params);

/// Max IoU of every anchor with any ground truth (same units), 0 without ground truth.
std::vector<double> assign_anchor_labels(const std::vector<Anchor>& anchors,
                                         const std::vector<Segment>& ground_truth);

struct NodeLabels {
  std::vector<std::uint8_t> start;
  std::vector<std::uint8_t> end;
};

/// Node l is a start (end) if |l - t| <= max(1, d / 10) for the start (end) t
/// of some ground truth of duration d.
NodeLabels assign_node_labels(std::size_t length, const std::vector<Segment>& ground_truth);

/// Class-balanced binary cross entropy, mean over elements. With n elements
/// and n_pos positives the weights are n / (2 n_pos) and n / (2 n_neg); when one
/// class is absent the other gets weight 1. Probabilities are clipped at 1e-7
/// inside the logarithms.
Tensor weighted_bce(const Tensor& probabilities, const std::vector<double>& targets);

struct SubgraphLossTerms {
  Tensor classification;
  Tensor regression;  ///< already multiplied by lambda1
  Tensor total;
};

/// wbce(p_cls, 1{g_c > 0.5}) + lambda1 * mean((p_reg - g_c)^2).
/// p_cls and p_reg hold J elements each; throws ContractError when J = 0.
SubgraphLossTerms subgraph_loss_terms(const Tensor& p_cls, const Tensor& p_reg,
                                      const std::vector<double>& g_c, double lambda1);
Tensor subgraph_loss(const Tensor& p_cls, const Tensor& p_reg, const std::vector<double>& g_c,
                     double lambda1);

/// wbce over the start channel plus wbce over the end channel.
Tensor node_loss(const Tensor& node_scores, const NodeLabels& labels);

/// Sum of squares over all given tensors.
Tensor parameter_norm(const std::vector<Tensor>& params);

/// L_g + L_n + lambda2 * sum(theta^2).
Tensor total_loss(const Tensor& subgraph, const Tensor& node, const std::vector<Tensor>& params,
                  double lambda2);

}  // namespace sgdet
