#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdet/data_io.hpp"
#include "sgdet/head.hpp"
#include "sgdet/model.hpp"

namespace sgdet {

struct TrainConfig {
  ModelConfig model;
  SequenceLayout layout;
  std::size_t batch_size = 16;
  std::size_t phase1_epochs = 5;
  std::size_t phase2_epochs = 5;
  double lr1 = 4e-3;
  double lr2 = 4e-4;
  std::uint64_t seed = 0;
  /// Annotation subset used for training; empty trains on every annotated video.
  std::string subset = "training";

  std::size_t epochs() const { return phase1_epochs + phase2_epochs; }
  /// Step schedule: lr1 for the first phase1_epochs epochs (0-based), then lr2.
  double learning_rate(std::size_t epoch) const { return epoch < phase1_epochs ? lr1 : lr2; }
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// One model input with its precomputed targets.
struct TrainingSample {
  std::string video_id;
  Tensor features;  ///< [C_raw x L]
  std::shared_ptr<const AnchorContext> anchors;
  std::vector<double> anchor_labels;  ///< g_c per anchor
  NodeLabels node_labels;
};

/// Windows every annotated sequence in the training subset and computes labels.
/// Windows without actions are dropped.
std::vector<TrainingSample> prepare_samples(const Dataset& dataset, const TrainConfig& config,
                                            AnchorCache& cache);

struct SampleLoss {
  Tensor subgraph;  ///< L_g
  Tensor node;      ///< L_n
};

/// Forward pass with both branches and the two data terms for one sample.
SampleLoss sample_loss(const Model& model, const TrainingSample& sample);

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Updates every parameter that holds a gradient.
  void step(ParameterSet& params, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochMetrics {
  std::size_t epoch = 0;  ///< 1-based
  double loss_total = 0.0;
  double loss_g = 0.0;
  double loss_n = 0.0;
  double lr = 0.0;

  nlohmann::json to_json() const;
};

/// One pass over `samples` in a seeded random order. Each batch minimises
/// mean(L_g + L_n) + lambda2 * sum(theta^2). Throws NumericError naming the
/// batch when the loss is not finite.
EpochMetrics train_epoch(Model& model, const std::vector<TrainingSample>& samples, Adam& optimizer,
                         std::size_t batch_size, double lr, std::mt19937_64& rng,
                         std::size_t epoch);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Initialises the model from config.seed and runs the two-phase schedule.
std::vector<EpochMetrics> train(Model& model, const std::vector<TrainingSample>& samples,
                                const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace sgdet
