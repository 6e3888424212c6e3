#include <doctest.h>

#include <fstream>
#include <random>

#include "sgdet/data_io.hpp"
#include "sgdet/errors.hpp"
#include "test_util.hpp"

using namespace sgdet;
using sgdet::testing::TempDir;
namespace fs = std::filesystem;

namespace {

FeatureSequence ramp_sequence(std::size_t length, std::size_t dim) {
  FeatureSequence s;
  s.video_id = "ramp";
  s.dim = dim;
  s.length = length;
  s.duration_seconds = static_cast<double>(length);
  for (std::size_t l = 0; l < length; ++l)
    for (std::size_t c = 0; c < dim; ++c) s.features.push_back(static_cast<double>(l) + 100.0 * c);
  return s;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("feature file round trip and corruption") {
  TempDir dir("features");
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  std::vector<double> rows(7 * 3);
  for (auto& v : rows) v = n(rng);  // float-representable
  const fs::path p = dir.path() / "a.bin";
  write_feature_file(p, 7, 3, rows);
  CHECK(fs::file_size(p) == 20 + 7 * 3 * 4);
  const FeatureFile f = read_feature_file(p);
  CHECK(f.length == 7);
  CHECK(f.dim == 3);
  CHECK(f.rows == rows);
  // byte-deterministic
  write_feature_file(dir.path() / "b.bin", 7, 3, rows);
  CHECK(slurp(p) == slurp(dir.path() / "b.bin"));

  fs::resize_file(p, fs::file_size(p) - 5);
  CHECK_THROWS_AS(read_feature_file(p), FormatError);
  {
    std::ofstream os(dir.path() / "bad.bin", std::ios::binary);
    os << "XXXXsomething else entirely";
  }
  CHECK_THROWS_AS(read_feature_file(dir.path() / "bad.bin"), FormatError);
  CHECK_THROWS_AS(write_feature_file(p, 2, 2, {1.0}), DimensionError);
  try {
    read_feature_file(dir.path() / "bad.bin");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("bad.bin") != std::string::npos);
  }
}

TEST_CASE("dataset loading") {
  TempDir dir("dataset");
  write_manifest(dir.path() / "manifest.json", {});
  const Dataset empty = load_dataset(dir.path() / "manifest.json");
  CHECK(empty.sequences.empty());

  fs::create_directories(dir.path() / "f");
  write_feature_file(dir.path() / "f/v1.bin", 4, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  write_manifest(dir.path() / "manifest.json", {{"v1", "f/v1.bin", 8.0, 16.0, 64}});
  AnnotationSet ann;
  ann["v1"] = {8.0, "training", {{1.0, 3.0, "a"}}};
  write_annotations(dir.path() / "ann.json", ann);
  const Dataset ds = load_dataset(dir.path() / "manifest.json", dir.path() / "ann.json");
  REQUIRE(ds.sequences.size() == 1);
  CHECK(ds.sequences[0].at(2, 1) == 6.0);
  CHECK(ds.annotations.at("v1").segments[0].label == "a");

  ann["v1"].segments.push_back({7.0, 9.0, "a"});
  write_annotations(dir.path() / "ann.json", ann);
  CHECK_THROWS_AS(load_dataset(dir.path() / "manifest.json", dir.path() / "ann.json"), DataError);

  write_manifest(dir.path() / "manifest.json", {{"v1", "f/v1.bin", 8.0, 16.0, 100}});
  CHECK_THROWS_AS(load_dataset(dir.path() / "manifest.json"), DataError);

  write_feature_file(dir.path() / "f/v1.bin", 1, 2, {1.0, std::nan("")});
  write_manifest(dir.path() / "manifest.json", {{"v1", "f/v1.bin", 8.0, 16.0, std::nullopt}});
  CHECK_THROWS_AS(load_dataset(dir.path() / "manifest.json"), DataError);
}

TEST_CASE("annotation json round trip") {
  AnnotationSet ann;
  ann["b"] = {12.5, "validation", {{0.5, 2.0, "x"}, {3.0, 4.0, "y"}}};
  ann["a"] = {3.0, "training", {}};
  const AnnotationSet back = annotations_from_json(annotations_to_json(ann));
  REQUIRE(back.size() == 2);
  CHECK(back.at("b").segments[1].label == "y");
  CHECK(back.at("b").duration == 12.5);
  CHECK(back.at("a").subset == "training");
}

TEST_CASE("rescaling") {
  const FeatureSequence r = ramp_sequence(10, 2);
  CHECK(rescale_sequence(r, 10).features == r.features);
  const FeatureSequence half = rescale_sequence(r, 5);
  REQUIRE(half.length == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    // source position (i + 0.5) * 2 - 0.5
    CHECK(half.at(i, 0) == doctest::Approx(2.0 * i + 0.5).epsilon(1e-14));
    CHECK(half.at(i, 1) == doctest::Approx(100.0 + 2.0 * i + 0.5).epsilon(1e-14));
  }
  FeatureSequence k = r;
  std::fill(k.features.begin(), k.features.end(), 4.25);
  for (std::size_t target : {1u, 3u, 10u, 37u, 100u}) {
    const FeatureSequence up = rescale_sequence(k, target);
    for (double v : up.features) CHECK(v == 4.25);
    const FeatureSequence back = rescale_sequence(up, 10);
    CHECK(back.features == k.features);
  }
}

TEST_CASE("windowing") {
  const FeatureSequence long_seq = ramp_sequence(512, 1);
  const auto w = window_sequence(long_seq, 256, 128, false);
  REQUIRE(w.size() == 3);
  CHECK(w[0].offset == 0);
  CHECK(w[1].offset == 128);
  CHECK(w[2].offset == 256);

  const FeatureSequence short_seq = ramp_sequence(100, 1);
  const auto s = window_sequence(short_seq, 256, 128, false);
  REQUIRE(s.size() == 1);
  CHECK(s[0].valid_length == 100);
  CHECK(s[0].features[99] == 99.0);
  CHECK(s[0].features[100] == 0.0);

  const auto t = window_sequence(long_seq, 256, 128, true, {{10, 20}});
  REQUIRE(t.size() == 1);
  CHECK(t[0].offset == 0);
  CHECK_THROWS_AS(window_sequence(long_seq, 128, 128, false), ConfigError);

  // union of windows covers every snippet
  for (std::size_t len : {1u, 99u, 256u, 300u, 700u}) {
    const auto ws = window_sequence(ramp_sequence(len, 1), 256, 128, false);
    std::vector<bool> covered(len, false);
    for (const auto& x : ws)
      for (std::size_t i = 0; i < x.valid_length; ++i) covered[x.offset + i] = true;
    CHECK(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }));
  }
}

TEST_CASE("layouts produce windows in snippet units") {
  FeatureSequence seq = ramp_sequence(200, 2);
  seq.duration_seconds = 50.0;
  const std::vector<AnnotatedSegment> ann{{10.0, 20.0, "a"}};
  SequenceLayout rescale;
  const auto r = make_windows(seq, rescale, ann, true);
  REQUIRE(r.size() == 1);
  CHECK(r[0].length == 100);
  CHECK(r[0].seconds_per_snippet == 0.5);
  CHECK(r[0].ground_truth[0] == Segment{20.0, 40.0});

  SequenceLayout win{SequenceLayout::Mode::window, 64, 32};
  const auto t = make_windows(seq, win, ann, true);
  for (const auto& w : t) CHECK(!w.ground_truth.empty());
  const auto all = make_windows(seq, win, ann, false);
  CHECK(all.size() > t.size());
  CHECK(SequenceLayout::from_json(win.to_json()).stride == 32);
}
