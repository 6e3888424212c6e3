#include "sgdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sgdet/errors.hpp"

namespace sgdet {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (epochs() == 0) throw ConfigError("train: at least one epoch is required");
  if (lr1 < 0.0 || lr2 < 0.0) throw ConfigError("train: learning rates must be >= 0");
  if (layout.length < 2) throw ConfigError("train: sequence length must be at least 2");
  if (layout.mode == SequenceLayout::Mode::window && layout.stride == 0) {
    throw ConfigError("train: window stride must be positive");
  }
}

json TrainConfig::to_json() const {
  return {{"model", model.to_json()},   {"layout", layout.to_json()},
          {"batch_size", batch_size},   {"phase1_epochs", phase1_epochs},
          {"phase2_epochs", phase2_epochs}, {"lr1", lr1},
          {"lr2", lr2},                 {"seed", seed},
          {"subset", subset}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("layout")) c.layout = SequenceLayout::from_json(j.at("layout"));
  c.batch_size = j.value("batch_size", c.batch_size);
  c.phase1_epochs = j.value("phase1_epochs", c.phase1_epochs);
  c.phase2_epochs = j.value("phase2_epochs", c.phase2_epochs);
  c.lr1 = j.value("lr1", c.lr1);
  c.lr2 = j.value("lr2", c.lr2);
  c.seed = j.value("seed", c.seed);
  c.subset = j.value("subset", c.subset);
  return c;
}

std::vector<TrainingSample> prepare_samples(const Dataset& dataset, const TrainConfig& config,
                                            AnchorCache& cache) {
  std::vector<TrainingSample> out;
  for (const auto& seq : dataset.sequences) {
    auto it = dataset.annotations.find(seq.video_id);
    if (it == dataset.annotations.end()) continue;
    if (!config.subset.empty() && it->second.subset != config.subset) continue;
    for (auto& w : make_windows(seq, config.layout, it->second.segments, true)) {
      TrainingSample s;
      s.video_id = seq.video_id;
      s.features = window_tensor(w);
      s.anchors = cache.get(w.length, w.valid_length);
      s.anchor_labels = assign_anchor_labels(s.anchors->anchors, w.ground_truth);
      s.node_labels = assign_node_labels(w.length, w.ground_truth);
      out.push_back(std::move(s));
    }
  }
  return out;
}

SampleLoss sample_loss(const Model& model, const TrainingSample& sample) {
  const ModelOutput y = model.forward(sample.features, *sample.anchors, true);
  const Tensor p_cls = slice(y.scores, 1, 0, 1);
  const Tensor p_reg = slice(y.scores, 1, 1, 2);
  return {subgraph_loss(p_cls, p_reg, sample.anchor_labels, model.config().lambda1),
          node_loss(y.node_scores, sample.node_labels)};
}

void Adam::step(ParameterSet& params, double lr) {
  if (m_.empty()) {
    for (const auto& [name, p] : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter set changed size");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t k = 0;
  for (auto& [name, p] : params) {
    auto& m = m_[k];
    auto& v = v_[k];
    ++k;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto x = p.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

json EpochMetrics::to_json() const {
  return {{"epoch", epoch}, {"loss_total", loss_total}, {"loss_g", loss_g},
          {"loss_n", loss_n}, {"lr", lr}};
}

EpochMetrics train_epoch(Model& model, const std::vector<TrainingSample>& samples, Adam& optimizer,
                         std::size_t batch_size, double lr, std::mt19937_64& rng,
                         std::size_t epoch) {
  if (samples.empty()) throw DataError("train: no training windows contain an action");
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  ParameterSet& params = model.parameters();
  const auto thetas = params.tensors();
  EpochMetrics metrics;
  metrics.epoch = epoch;
  metrics.lr = lr;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    const double inv = 1.0 / static_cast<double>(end - begin);
    params.zero_grad();
    double lg = 0.0, ln = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const SampleLoss l = sample_loss(model, samples[order[i]]);
      lg += l.subgraph.item() * inv;
      ln += l.node.item() * inv;
      backward(scale(add(l.subgraph, l.node), inv));
    }
    const Tensor reg = scale(parameter_norm(thetas), model.config().lambda2);
    backward(reg);
    const double total = lg + ln + reg.item();
    if (!std::isfinite(total)) {
      throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batches) + " (first video " +
                         samples[order[begin]].video_id + ")");
    }
    optimizer.step(params, lr);
    metrics.loss_total += total;
    metrics.loss_g += lg;
    metrics.loss_n += ln;
    ++batches;
  }
  metrics.loss_total /= static_cast<double>(batches);
  metrics.loss_g /= static_cast<double>(batches);
  metrics.loss_n /= static_cast<double>(batches);
  return metrics;
}

std::vector<EpochMetrics> train(Model& model, const std::vector<TrainingSample>& samples,
                                const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  model.initialize(config.seed);
  // Separate stream for batch order so it does not depend on parameter count.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam optimizer;
  std::vector<EpochMetrics> history;
  for (std::size_t e = 0; e < config.epochs(); ++e) {
    history.push_back(train_epoch(model, samples, optimizer, config.batch_size,
                                  config.learning_rate(e), rng, e + 1));
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

}  // namespace sgdet
