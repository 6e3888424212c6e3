#include "sgdet/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "sgdet/errors.hpp"

namespace sgdet {

void SynthConfig::validate() const {
  if (length < 4 || dim == 0 || num_classes == 0) {
    throw ConfigError("synth: length >= 4, dim > 0 and num_classes > 0 are required");
  }
  if (min_actions > max_actions) throw ConfigError("synth: min_actions > max_actions");
  if (min_action_length == 0 || min_action_length > max_action_length) {
    throw ConfigError("synth: action length range is empty");
  }
  if (max_action_length + 2 > length) {
    throw ConfigError("synth: actions must be shorter than the video");
  }
  if (noise < 0.0 || !(seconds_per_snippet > 0.0)) {
    throw ConfigError("synth: noise must be >= 0 and seconds_per_snippet > 0");
  }
}

namespace {

std::string video_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "v_%05zu", i);
  return buf;
}

}  // namespace

Dataset synth_dataset(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<double>> signatures(config.num_classes);
  for (auto& s : signatures) {
    s.resize(config.dim);
    for (auto& v : s) v = unit(rng);
  }

  Dataset out;
  std::uniform_int_distribution<std::size_t> count(config.min_actions, config.max_actions);
  std::uniform_int_distribution<std::size_t> span(config.min_action_length,
                                                  config.max_action_length);
  std::uniform_int_distribution<std::size_t> cls(0, config.num_classes - 1);
  for (std::size_t i = 0; i < config.num_videos; ++i) {
    FeatureSequence seq;
    seq.video_id = video_name(i);
    seq.dim = config.dim;
    seq.length = config.length;
    seq.sampling_rate = static_cast<double>(config.frames_per_snippet);
    seq.duration_seconds = static_cast<double>(config.length) * config.seconds_per_snippet;
    seq.features.resize(config.length * config.dim);
    for (auto& v : seq.features) v = config.noise * unit(rng);

    // Planted segments [a, b) in snippets, with one free snippet on both sides.
    std::vector<std::pair<std::size_t, std::size_t>> planted;
    const std::size_t wanted = count(rng);
    std::size_t retries = 0;
    while (planted.size() < wanted) {
      const std::size_t len = span(rng);
      std::uniform_int_distribution<std::size_t> start(1, config.length - 1 - len);
      const std::size_t a = start(rng), b = a + len;
      const bool clash = std::any_of(planted.begin(), planted.end(), [&](const auto& p) {
        return a < p.second + 2 && p.first < b + 2;
      });
      if (!clash) {
        planted.emplace_back(a, b);
        continue;
      }
      if (++retries > config.max_retries) {
        throw DataError("synth: could not place " + std::to_string(wanted) +
                        " non-overlapping actions in " + seq.video_id);
      }
    }
    std::sort(planted.begin(), planted.end());

    VideoAnnotation ann;
    ann.duration = seq.duration_seconds;
    ann.subset = config.validation_every > 0 && i % config.validation_every ==
                                                    config.validation_every - 1
                     ? "validation"
                     : "training";
    for (const auto& [a, b] : planted) {
      const std::size_t c = cls(rng);
      for (std::size_t l = a; l < b; ++l)
        for (std::size_t d = 0; d < config.dim; ++d)
          seq.features[l * config.dim + d] += signatures[c][d];
      ann.segments.push_back({static_cast<double>(a) * config.seconds_per_snippet,
                              static_cast<double>(b) * config.seconds_per_snippet,
                              "class_" + std::to_string(c)});
    }
    out.annotations.emplace(seq.video_id, std::move(ann));
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir / "features");
  std::vector<ManifestEntry> entries;
  for (const auto& seq : dataset.sequences) {
    const std::string rel = "features/" + seq.video_id + ".bin";
    write_feature_file(dir / rel, seq.length, seq.dim, seq.features);
    ManifestEntry e;
    e.video_id = seq.video_id;
    e.feature_file = rel;
    e.duration_seconds = seq.duration_seconds;
    e.sampling_rate = seq.sampling_rate;
    e.frames = static_cast<std::size_t>(static_cast<double>(seq.length) * seq.sampling_rate);
    entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.json", entries);
  write_annotations(dir / "annotations.json", dataset.annotations);
}

}  // namespace sgdet
