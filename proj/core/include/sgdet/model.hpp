#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdet/checkpoint.hpp"
#include "sgdet/data_io.hpp"
#include "sgdet/gcnext.hpp"
#include "sgdet/head.hpp"
#include "sgdet/postprocess.hpp"
#include "sgdet/sgalign.hpp"

namespace sgdet {

struct ModelConfig {
  std::size_t input_dim = 0;  ///< raw feature width, taken from the data
  std::size_t width = 32;     ///< internal channel width C
  std::size_t blocks = 3;
  std::size_t cardinality = 4;
  std::size_t bottleneck_ratio = 2;
  std::size_t k_neighbors = 4;
  bool semantic = true;  ///< false removes semantic streams and the semantic alignment path
  std::size_t tau1 = 32;
  std::size_t tau2 = 4;
  std::size_t max_duration = 64;
  std::vector<std::size_t> hidden{512, 128};
  double lambda1 = kDefaultLambda1;
  double lambda2 = kDefaultLambda2;

  bool semantic_active() const { return semantic && k_neighbors > 0; }
  std::size_t semantic_resolution() const { return semantic_active() ? tau2 : 0; }
  std::size_t aligned_width() const { return (tau1 + semantic_resolution()) * width; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  void validate() const;
};

/// Anchors and sampling plans for one input length; shared across videos.
struct AnchorContext {
  std::size_t length = 0;
  std::size_t valid_length = 0;
  std::vector<Anchor> anchors;
  PlanPtr temporal;
  PlanPtr semantic;  ///< null when the semantic path is off
};

/// Anchors for inputs of `length` snippets whose first `valid_length` are real;
/// anchors lying entirely in the padding are dropped.
std::shared_ptr<const AnchorContext> make_anchor_context(const ModelConfig& config,
                                                         std::size_t length,
                                                         std::size_t valid_length);

/// Thread-safe memo of anchor contexts keyed by (length, valid_length).
class AnchorCache {
 public:
  explicit AnchorCache(ModelConfig config) : config_(std::move(config)) {}
  std::shared_ptr<const AnchorContext> get(std::size_t length, std::size_t valid_length);

 private:
  ModelConfig config_;
  std::mutex mutex_;
  std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const AnchorContext>> cache_;
};

struct ModelOutput {
  Tensor scores;       ///< [J x 2]: p_cls, p_reg
  Tensor node_scores;  ///< [L x 2]: p_start, p_end (training only)
  BackboneOutput backbone;
};

/// Input projection, GCNeXt backbone, sub-graph alignment, localization head
/// and the training-only node branch.
class Model {
 public:
  explicit Model(ModelConfig config);
  // Parameter handles are shared tensors, so a copy would alias the weights.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  void initialize(std::uint64_t seed);

  /// Raw features [C_raw x L] to the block input [C x L].
  Tensor project_input(const Tensor& features) const;

  /// Full forward pass. The node branch runs only when `with_node_branch`.
  ModelOutput forward(const Tensor& features, const AnchorContext& anchors,
                      bool with_node_branch) const;

  const std::vector<GCNeXtParams>& blocks() const { return blocks_; }
  const HeadParams& head() const { return head_; }

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  /// Restores a model saved with save(); node-branch tensors are optional.
  static Model load(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

 private:
  ModelConfig config_;
  ParameterSet params_;
  Tensor input_w_;
  Tensor input_b_;
  std::vector<GCNeXtParams> blocks_;
  HeadParams head_;
};

/// Converts a [L x C] row-major window into a [C x L] tensor.
Tensor window_tensor(const VideoWindow& window);

/// Scores every anchor of every window of a sequence (no gradient recording).
std::vector<WindowScores> predict_windows(const Model& model, const FeatureSequence& sequence,
                                          const SequenceLayout& layout, AnchorCache& cache);

}  // namespace sgdet
