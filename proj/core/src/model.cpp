#include "sgdet/model.hpp"

#include <cmath>
#include <random>

#include "sgdet/errors.hpp"

namespace sgdet {

using nlohmann::json;

json ModelConfig::to_json() const {
  return {{"input_dim", input_dim},       {"width", width},
          {"blocks", blocks},             {"cardinality", cardinality},
          {"bottleneck_ratio", bottleneck_ratio}, {"k_neighbors", k_neighbors},
          {"semantic", semantic},         {"tau1", tau1},
          {"tau2", tau2},                 {"max_duration", max_duration},
          {"hidden", hidden},             {"lambda1", lambda1},
          {"lambda2", lambda2}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.width = j.value("width", c.width);
  c.blocks = j.value("blocks", c.blocks);
  c.cardinality = j.value("cardinality", c.cardinality);
  c.bottleneck_ratio = j.value("bottleneck_ratio", c.bottleneck_ratio);
  c.k_neighbors = j.value("k_neighbors", c.k_neighbors);
  c.semantic = j.value("semantic", c.semantic);
  c.tau1 = j.value("tau1", c.tau1);
  c.tau2 = j.value("tau2", c.tau2);
  c.max_duration = j.value("max_duration", c.max_duration);
  c.hidden = j.value("hidden", c.hidden);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  return c;
}

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
  if (width == 0 || blocks == 0 || tau1 == 0) {
    throw ConfigError("model: width, blocks and tau1 must be positive");
  }
  if (max_duration < 2) throw ConfigError("model: max_duration must be at least 2");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("model: loss weights must be >= 0");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("model: hidden widths must be positive");
  }
}

std::shared_ptr<const AnchorContext> make_anchor_context(const ModelConfig& config,
                                                         std::size_t length,
                                                         std::size_t valid_length) {
  auto ctx = std::make_shared<AnchorContext>();
  ctx->length = length;
  ctx->valid_length = valid_length;
  for (const auto& a : enumerate_anchors(length, config.max_duration)) {
    if (a.start < valid_length) ctx->anchors.push_back(a);
  }
  ctx->temporal = make_sampling_plan(ctx->anchors, length, config.tau1);
  if (config.semantic_resolution() > 0) {
    ctx->semantic = make_sampling_plan(ctx->anchors, length, config.semantic_resolution());
  }
  return ctx;
}

std::shared_ptr<const AnchorContext> AnchorCache::get(std::size_t length,
                                                      std::size_t valid_length) {
  std::lock_guard lock(mutex_);
  auto& slot = cache_[{length, valid_length}];
  if (!slot) slot = make_anchor_context(config_, length, valid_length);
  return slot;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  input_w_ = params_.add("input/w", Tensor::zeros({config_.width, config_.input_dim}));
  input_b_ = params_.add("input/b", Tensor::zeros({config_.width}));
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    blocks_.push_back(make_gcnext_params(config_.width, config_.cardinality,
                                         config_.bottleneck_ratio, config_.semantic_active()));
    register_gcnext_params(blocks_.back(), params_, "block" + std::to_string(b));
  }
  head_ = make_head_params(config_.aligned_width(), config_.hidden, config_.width);
  head_.lambda1 = config_.lambda1;
  head_.lambda2 = config_.lambda2;
  register_head_params(head_, params_);
}

namespace {

// Fan-in of a weight by layout: [out x in] matmuls, [in x out] head layers,
// [k x in/g x out] convolutions.
std::size_t fan_in(const std::string& name, const Tensor& t) {
  if (t.rank() == 3) return t.dim(0) * t.dim(1);
  if (name.rfind("head/", 0) == 0) return t.dim(0);
  return t.dim(1);
}

bool is_bias(const std::string& name) {
  return name.size() >= 2 && (name.ends_with("_b") || name.ends_with("/b"));
}

}  // namespace

void Model::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, tensor] : params_) {
    auto values = tensor.mutable_data();
    if (is_bias(name)) {
      std::fill(values.begin(), values.end(), 0.0);
      continue;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(name, tensor)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : values) v = dist(rng);
  }
}

Tensor Model::project_input(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(0) != config_.input_dim) {
    throw ConfigError("model expects " + std::to_string(config_.input_dim) +
                      "-dimensional features, got " + shape_string(features.shape()));
  }
  return relu(add_bias(matmul(input_w_, features), input_b_, 0));
}

ModelOutput Model::forward(const Tensor& features, const AnchorContext& anchors,
                           bool with_node_branch) const {
  if (features.rank() != 2 || features.dim(1) != anchors.length) {
    throw DimensionError("model: features " + shape_string(features.shape()) +
                         " do not match anchor context of length " +
                         std::to_string(anchors.length));
  }
  ModelOutput out;
  const Tensor x = project_input(features);
  out.backbone = backbone_forward(x, blocks_, config_.semantic_active() ? config_.k_neighbors : 0);
  const Tensor& final = out.backbone.final;

  // First localization layer applied straight to the aligned sub-graph
  // features: [temporal tau1 bins | semantic tau2 bins] rows of W1.
  std::vector<ProjectionPart> parts{{final, anchors.temporal, 0}};
  if (anchors.semantic) {
    parts.push_back({semantic_smooth(final, out.backbone.semantic_edges.back()), anchors.semantic,
                     config_.tau1 * config_.width});
  }
  out.scores = localization_from_hidden(aligned_projection(parts, head_.loc_w[0]), head_);
  if (with_node_branch) out.node_scores = node_branch_forward(out.backbone.block1, head_);
  return out;
}

void Model::save(const std::filesystem::path& path, const json& extra) const {
  json meta = {{"model", config_.to_json()}};
  if (!extra.is_null()) meta["extra"] = extra;
  save_checkpoint(path, params_, meta.dump());
}

Model Model::load(const std::filesystem::path& path, json* extra) {
  const Checkpoint ck = read_checkpoint(path);
  json meta;
  try {
    meta = json::parse(ck.metadata);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": bad metadata: " + e.what());
  }
  if (!meta.contains("model")) {
    throw FormatError("checkpoint " + path.string() + ": metadata lacks model config");
  }
  Model model(ModelConfig::from_json(meta.at("model")));
  load_into(ck, model.params_, {"node/"});
  if (extra) *extra = meta.value("extra", json());
  return model;
}

Tensor window_tensor(const VideoWindow& window) {
  std::vector<double> cl(window.dim * window.length);
  for (std::size_t l = 0; l < window.length; ++l)
    for (std::size_t c = 0; c < window.dim; ++c)
      cl[c * window.length + l] = window.features[l * window.dim + c];
  return Tensor::from_vector({window.dim, window.length}, std::move(cl));
}

std::vector<WindowScores> predict_windows(const Model& model, const FeatureSequence& sequence,
                                          const SequenceLayout& layout, AnchorCache& cache) {
  NoGradGuard no_grad;
  std::vector<WindowScores> out;
  for (const auto& w : make_windows(sequence, layout, {}, false)) {
    const auto ctx = cache.get(w.length, w.valid_length);
    const ModelOutput y = model.forward(window_tensor(w), *ctx, false);
    WindowScores ws;
    ws.offset = w.offset;
    ws.seconds_per_snippet = w.seconds_per_snippet;
    ws.anchors = ctx->anchors;
    ws.p_cls.resize(ctx->anchors.size());
    ws.p_reg.resize(ctx->anchors.size());
    for (std::size_t j = 0; j < ctx->anchors.size(); ++j) {
      ws.p_cls[j] = y.scores.at(j, 0);
      ws.p_reg[j] = y.scores.at(j, 1);
    }
    out.push_back(std::move(ws));
  }
  return out;
}

}  // namespace sgdet
