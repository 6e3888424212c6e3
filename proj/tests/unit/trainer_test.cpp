#include <doctest.h>

#include <cmath>

#include "sgdet/errors.hpp"
#include "sgdet/synth.hpp"
#include "sgdet/trainer.hpp"
#include "test_util.hpp"

using namespace sgdet;
using sgdet::testing::TempDir;

namespace {

Dataset small_dataset(std::uint64_t seed, std::size_t videos = 40) {
  SynthConfig s;
  s.num_videos = videos;
  s.length = 24;
  s.dim = 8;
  s.min_action_length = 3;
  s.max_action_length = 8;
  s.max_actions = 2;
  s.seed = seed;
  return synth_dataset(s);
}

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig c;
  c.model.input_dim = 8;
  c.model.width = 8;
  c.model.cardinality = 2;
  c.model.k_neighbors = 3;
  c.model.tau1 = 8;
  c.model.tau2 = 2;
  c.model.max_duration = 12;
  c.model.hidden = {16, 8};
  c.layout.length = 24;
  c.batch_size = 8;
  c.phase1_epochs = 3;
  c.phase2_epochs = 0;
  c.seed = seed;
  return c;
}

std::vector<double> flat_params(const Model& m) {
  std::vector<double> v;
  for (const auto& [name, t] : m.parameters()) v.insert(v.end(), t.data().begin(), t.data().end());
  return v;
}

double batch_loss(const Model& m, const std::vector<TrainingSample>& samples) {
  double s = 0.0;
  for (const auto& x : samples) {
    const SampleLoss l = sample_loss(m, x);
    s += l.subgraph.item() + l.node.item();
  }
  return s / static_cast<double>(samples.size()) +
         m.config().lambda2 * parameter_norm(m.parameters().tensors()).item();
}

}  // namespace

TEST_CASE("initialisation is seeded and centred") {
  const TrainConfig c = small_config(0);
  Model a(c.model), b(c.model), d(c.model);
  a.initialize(5);
  b.initialize(5);
  d.initialize(6);
  CHECK(flat_params(a) == flat_params(b));
  CHECK(flat_params(a) != flat_params(d));
  for (const auto& [name, t] : a.parameters()) {
    if (name.ends_with("_b") || name.ends_with("/b")) {
      for (double v : t.data()) CHECK(v == 0.0);
    }
  }
  AnchorCache cache(c.model);
  const Dataset ds = small_dataset(1, 5);
  const auto samples = prepare_samples(ds, c, cache);
  REQUIRE(!samples.empty());
  const ModelOutput y = a.forward(samples[0].features, *samples[0].anchors, false);
  double mc = 0.0, mr = 0.0;
  const std::size_t n = std::min<std::size_t>(100, y.scores.dim(0));
  for (std::size_t j = 0; j < n; ++j) {
    mc += y.scores.at(j, 0) / n;
    mr += y.scores.at(j, 1) / n;
  }
  CHECK(std::abs(mc - 0.5) < 0.1);
  CHECK(std::abs(mr - 0.5) < 0.1);
}

TEST_CASE("samples come from the requested subset") {
  TrainConfig c = small_config(0);
  AnchorCache cache(c.model);
  const Dataset ds = small_dataset(2);
  const auto train = prepare_samples(ds, c, cache);
  for (const auto& s : train) CHECK(ds.annotations.at(s.video_id).subset == "training");
  c.subset.clear();
  CHECK(prepare_samples(ds, c, cache).size() > train.size());
  for (const auto& s : train) {
    CHECK(s.anchor_labels.size() == s.anchors->anchors.size());
    CHECK(s.features.shape() == Shape{8, 24});
  }
}

TEST_CASE("zero learning rate keeps parameters and loss") {
  TrainConfig c = small_config(3);
  c.lr1 = c.lr2 = 0.0;
  AnchorCache cache(c.model);
  const auto samples = prepare_samples(small_dataset(3), c, cache);
  Model m(c.model);
  m.initialize(c.seed);
  const auto before = flat_params(m);
  const auto hist = train(m, samples, c);
  CHECK(flat_params(m) == before);
  for (const auto& e : hist) CHECK(std::abs(e.loss_total - hist[0].loss_total) < 1e-12);
}

TEST_CASE("loss decreases over the first epochs") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    CAPTURE(seed);
    const TrainConfig c = small_config(seed);
    AnchorCache cache(c.model);
    const auto samples = prepare_samples(small_dataset(seed), c, cache);
    Model m(c.model);
    const auto hist = train(m, samples, c);
    REQUIRE(hist.size() == 3);
    CHECK(hist[1].loss_total < hist[0].loss_total);
    CHECK(hist[2].loss_total < hist[1].loss_total);
    for (const auto& e : hist) CHECK(e.loss_total == doctest::Approx(e.loss_g + e.loss_n).epsilon(1e-2));
  }
}

TEST_CASE("a small step does not increase the batch loss") {
  const TrainConfig c = small_config(4);
  AnchorCache cache(c.model);
  auto samples = prepare_samples(small_dataset(4), c, cache);
  samples.resize(4);
  Model m(c.model);
  m.initialize(4);
  const double before = batch_loss(m, samples);
  Adam opt;
  std::mt19937_64 rng(0);
  train_epoch(m, samples, opt, samples.size(), 1e-5, rng, 1);
  CHECK(batch_loss(m, samples) <= before + 1e-6);
}

TEST_CASE("training is deterministic") {
  const TrainConfig c = small_config(5);
  AnchorCache cache(c.model);
  const auto samples = prepare_samples(small_dataset(5), c, cache);
  Model a(c.model), b(c.model);
  const auto ha = train(a, samples, c);
  const auto hb = train(b, samples, c);
  CHECK(flat_params(a) == flat_params(b));
  CHECK(ha.back().loss_total == hb.back().loss_total);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir("ckpt");
  const TrainConfig c = small_config(6);
  Model m(c.model);
  m.initialize(6);
  m.save(dir.path() / "m.ckpt", c.to_json());
  nlohmann::json extra;
  const Model back = Model::load(dir.path() / "m.ckpt", &extra);
  CHECK(flat_params(back) == flat_params(m));
  CHECK(TrainConfig::from_json(extra).model.width == 8);
  CHECK(back.config().hidden == c.model.hidden);

  // truncated files are format errors
  std::filesystem::resize_file(dir.path() / "m.ckpt", 30);
  CHECK_THROWS_AS(Model::load(dir.path() / "m.ckpt"), FormatError);
}

TEST_CASE("non-finite features abort with a numeric error") {
  const TrainConfig c = small_config(7);
  AnchorCache cache(c.model);
  auto samples = prepare_samples(small_dataset(7, 10), c, cache);
  std::vector<double> bad(samples[0].features.data().begin(), samples[0].features.data().end());
  bad[3] = std::nan("");
  samples[0].features = Tensor::from_vector(samples[0].features.shape(), bad);
  Model m(c.model);
  m.initialize(7);
  Adam opt;
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(train_epoch(m, samples, opt, 4, 1e-3, rng, 1), NumericError);
}

TEST_CASE("config validation") {
  TrainConfig c = small_config(0);
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config(0);
  c.phase1_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(TrainConfig{}.learning_rate(4) == 4e-3);
  CHECK(TrainConfig{}.learning_rate(5) == 4e-4);
  CHECK(TrainConfig{}.epochs() == 10);
}
