#include "sgdet/head.hpp"

#include <algorithm>
#include <cmath>

#include "sgdet/errors.hpp"

namespace sgdet {

HeadParams make_head_params(std::size_t input_width, const std::vector<std::size_t>& hidden,
                            std::size_t channels) {
  HeadParams head;
  std::size_t in = input_width;
  for (std::size_t h : hidden) {
    head.loc_w.push_back(Tensor::zeros({in, h}));
    head.loc_b.push_back(Tensor::zeros({h}));
    in = h;
  }
  head.loc_w.push_back(Tensor::zeros({in, 2}));
  head.loc_b.push_back(Tensor::zeros({2}));
  head.node_w = Tensor::zeros({2, channels});
  head.node_b = Tensor::zeros({2});
  return head;
}

void register_head_params(HeadParams& head, ParameterSet& params) {
  for (std::size_t i = 0; i < head.loc_w.size(); ++i) {
    head.loc_w[i] = params.add("head/fc" + std::to_string(i) + "_w", head.loc_w[i]);
    head.loc_b[i] = params.add("head/fc" + std::to_string(i) + "_b", head.loc_b[i]);
  }
  head.node_w = params.add("node/fc_w", head.node_w);
  head.node_b = params.add("node/fc_b", head.node_b);
}

Tensor localization_from_hidden(const Tensor& first_layer, const HeadParams& params) {
  const std::size_t layers = params.loc_w.size();
  Tensor h = layers > 1 ? add_bias_relu(first_layer, params.loc_b[0], 1)
                        : add_bias(first_layer, params.loc_b[0], 1);
  for (std::size_t i = 1; i < layers; ++i) {
    const Tensor z = matmul(h, params.loc_w[i]);
    h = i + 1 < layers ? add_bias_relu(z, params.loc_b[i], 1) : add_bias(z, params.loc_b[i], 1);
  }
  return sigmoid(h);
}

Tensor localization_forward(const Tensor& features, const HeadParams& params) {
  if (params.loc_w.empty() || features.rank() != 2 || features.dim(1) != params.loc_w[0].dim(0)) {
    throw ConfigError("localization_forward: feature width " +
                      (features.rank() == 2 ? std::to_string(features.dim(1)) : std::string("?")) +
                      " does not match head input width " +
                      (params.loc_w.empty() ? std::string("?")
                                            : std::to_string(params.loc_w[0].dim(0))));
  }
  return localization_from_hidden(matmul(features, params.loc_w[0]), params);
}

Tensor node_branch_forward(const Tensor& block1_features, const HeadParams& params) {
  Tensor logits = add_bias(matmul(params.node_w, block1_features), params.node_b, 0);
  return transpose(sigmoid(logits));
}

std::vector<double> assign_anchor_labels(const std::vector<Anchor>& anchors,
                                         const std::vector<Segment>& ground_truth) {
  std::vector<double> labels(anchors.size(), 0.0);
  for (std::size_t j = 0; j < anchors.size(); ++j) {
    const Segment a{static_cast<double>(anchors[j].start), static_cast<double>(anchors[j].end)};
    for (const auto& gt : ground_truth) labels[j] = std::max(labels[j], segment_iou(a, gt));
  }
  return labels;
}

NodeLabels assign_node_labels(std::size_t length, const std::vector<Segment>& ground_truth) {
  NodeLabels labels{std::vector<std::uint8_t>(length, 0), std::vector<std::uint8_t>(length, 0)};
  for (const auto& gt : ground_truth) {
    const double radius = std::max(1.0, gt.length() / 10.0);
    for (std::size_t l = 0; l < length; ++l) {
      const double pos = static_cast<double>(l);
      if (std::abs(pos - gt.start) <= radius) labels.start[l] = 1;
      if (std::abs(pos - gt.end) <= radius) labels.end[l] = 1;
    }
  }
  return labels;
}

Tensor weighted_bce(const Tensor& probabilities, const std::vector<double>& targets) {
  const std::size_t n = probabilities.numel();
  if (targets.size() != n) {
    throw DimensionError("weighted_bce: " + std::to_string(n) + " probabilities vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (n == 0) throw ContractError("weighted_bce: empty batch");
  std::size_t positives = 0;
  for (double t : targets) positives += t > 0.5 ? 1 : 0;
  const std::size_t negatives = n - positives;
  const double nd = static_cast<double>(n);
  double w_pos = 1.0, w_neg = 1.0;
  if (positives > 0 && negatives > 0) {
    w_pos = nd / (2.0 * static_cast<double>(positives));
    w_neg = nd / (2.0 * static_cast<double>(negatives));
  }

  const auto p = probabilities.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] > 0.5) {
      loss -= w_pos * std::log(std::max(p[i], kProbabilityEpsilon));
    } else {
      loss -= w_neg * std::log(std::max(1.0 - p[i], kProbabilityEpsilon));
    }
  }
  loss /= nd;

  return make_op_result({1}, {loss}, {probabilities},
                        [targets, w_pos, w_neg, nd](detail::Node& self) {
                          auto& in = *self.inputs[0];
                          auto& g = in.ensure_grad();
                          const double up = self.grad[0] / nd;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double pi = in.data[i];
                            if (targets[i] > 0.5) {
                              if (pi > kProbabilityEpsilon) g[i] -= up * w_pos / pi;
                            } else if (1.0 - pi > kProbabilityEpsilon) {
                              g[i] += up * w_neg / (1.0 - pi);
                            }
                          }
                        });
}

SubgraphLossTerms subgraph_loss_terms(const Tensor& p_cls, const Tensor& p_reg,
                                      const std::vector<double>& g_c, double lambda1) {
  const std::size_t j = g_c.size();
  if (j == 0) throw ContractError("subgraph_loss: no anchors");
  if (p_cls.numel() != j || p_reg.numel() != j) {
    throw DimensionError("subgraph_loss: " + std::to_string(p_cls.numel()) + " / " +
                         std::to_string(p_reg.numel()) + " predictions for " + std::to_string(j) +
                         " labels");
  }
  std::vector<double> binary(j);
  for (std::size_t i = 0; i < j; ++i) binary[i] = g_c[i] > 0.5 ? 1.0 : 0.0;
  SubgraphLossTerms terms;
  terms.classification = weighted_bce(p_cls, binary);
  const Tensor target = Tensor::from_vector(p_reg.shape(), g_c);
  terms.regression = scale(sum(square(sub(p_reg, target))), lambda1 / static_cast<double>(j));
  terms.total = add(terms.classification, terms.regression);
  return terms;
}

Tensor subgraph_loss(const Tensor& p_cls, const Tensor& p_reg, const std::vector<double>& g_c,
                     double lambda1) {
  return subgraph_loss_terms(p_cls, p_reg, g_c, lambda1).total;
}

Tensor node_loss(const Tensor& node_scores, const NodeLabels& labels) {
  if (node_scores.rank() != 2 || node_scores.dim(1) != 2 ||
      node_scores.dim(0) != labels.start.size() || labels.end.size() != labels.start.size()) {
    throw DimensionError("node_loss: scores " + shape_string(node_scores.shape()) + " vs " +
                         std::to_string(labels.start.size()) + " labelled nodes");
  }
  const std::vector<double> start(labels.start.begin(), labels.start.end());
  const std::vector<double> end(labels.end.begin(), labels.end.end());
  return add(weighted_bce(slice(node_scores, 1, 0, 1), start),
             weighted_bce(slice(node_scores, 1, 1, 2), end));
}

Tensor parameter_norm(const std::vector<Tensor>& params) {
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& p : params) acc = add(acc, sum(square(p)));
  return acc;
}

Tensor total_loss(const Tensor& subgraph, const Tensor& node, const std::vector<Tensor>& params,
                  double lambda2) {
  Tensor loss = add(subgraph, node);
  if (lambda2 != 0.0) loss = add(loss, scale(parameter_norm(params), lambda2));
  return loss;
}

}  // namespace sgdet
