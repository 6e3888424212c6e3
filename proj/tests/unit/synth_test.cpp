#include <doctest.h>

#include "sgdet/errors.hpp"
#include "sgdet/head.hpp"
#include "sgdet/synth.hpp"
#include "test_util.hpp"

using namespace sgdet;
using sgdet::testing::TempDir;

TEST_CASE("same seed gives the same dataset") {
  SynthConfig c;
  c.num_videos = 6;
  c.seed = 3;
  const Dataset a = synth_dataset(c), b = synth_dataset(c);
  REQUIRE(a.sequences.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(a.sequences[i].features == b.sequences[i].features);
  c.seed = 4;
  CHECK(synth_dataset(c).sequences[0].features != a.sequences[0].features);
}

TEST_CASE("noise-free actions equal their class signature") {
  SynthConfig c;
  c.num_videos = 10;
  c.noise = 0.0;
  c.seed = 1;
  const Dataset ds = synth_dataset(c);
  std::map<std::string, std::vector<double>> signature;
  for (const auto& seq : ds.sequences) {
    const auto& ann = ds.annotations.at(seq.video_id);
    CHECK((ann.segments.size() >= 1 && ann.segments.size() <= 3));
    std::vector<bool> inside(seq.length, false);
    for (const auto& s : ann.segments) {
      const auto a = static_cast<std::size_t>(std::llround(s.start / c.seconds_per_snippet));
      const auto b = static_cast<std::size_t>(std::llround(s.end / c.seconds_per_snippet));
      CHECK(a >= 1);
      CHECK(b <= seq.length - 1);
      for (std::size_t l = a; l < b; ++l) {
        inside[l] = true;
        std::vector<double> row(seq.features.begin() + l * seq.dim, seq.features.begin() + (l + 1) * seq.dim);
        auto [it, fresh] = signature.emplace(s.label, row);
        if (!fresh) CHECK(it->second == row);
      }
    }
    for (std::size_t l = 0; l < seq.length; ++l)
      if (!inside[l])
        for (std::size_t ch = 0; ch < seq.dim; ++ch) CHECK(seq.at(l, ch) == 0.0);
  }
}

TEST_CASE("true segments label as g_c = 1") {
  SynthConfig c;
  c.num_videos = 20;
  c.seed = 2;
  const Dataset ds = synth_dataset(c);
  for (const auto& [id, ann] : ds.annotations) {
    std::vector<Segment> gt;
    std::vector<Anchor> anchors;
    for (const auto& s : ann.segments) {
      const double a = s.start / c.seconds_per_snippet, b = s.end / c.seconds_per_snippet;
      gt.push_back({a, b});
      anchors.push_back({static_cast<std::size_t>(std::llround(a)), static_cast<std::size_t>(std::llround(b))});
    }
    for (double g : assign_anchor_labels(anchors, gt)) CHECK(g == 1.0);
    CHECK(ann.subset == (std::stoi(id.substr(2)) % 5 == 4 ? "validation" : "training"));
  }
}

TEST_CASE("write and reload") {
  TempDir dir("synth");
  SynthConfig c;
  c.num_videos = 4;
  c.seed = 9;
  const Dataset ds = synth_dataset(c);
  write_dataset(dir.path(), ds);
  const Dataset back = load_dataset(dir.path() / "manifest.json", dir.path() / "annotations.json");
  REQUIRE(back.sequences.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.sequences[i].video_id == ds.sequences[i].video_id);
    CHECK(back.sequences[i].duration_seconds == ds.sequences[i].duration_seconds);
    for (std::size_t k = 0; k < ds.sequences[i].features.size(); ++k)
      CHECK(back.sequences[i].features[k] == static_cast<double>(static_cast<float>(ds.sequences[i].features[k])));
  }
}

TEST_CASE("impossible layouts fail after the retry limit") {
  SynthConfig c;
  c.num_videos = 1;
  c.length = 12;
  c.min_actions = c.max_actions = 3;
  c.min_action_length = c.max_action_length = 5;
  c.max_retries = 50;
  CHECK_THROWS_AS(synth_dataset(c), DataError);
}
