#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "sgdet/data_io.hpp"

namespace sgdet {

struct SynthConfig {
  std::size_t num_videos = 200;
  std::size_t length = 100;  ///< snippets per video
  std::size_t dim = 32;      ///< C_raw
  std::size_t min_actions = 1;
  std::size_t max_actions = 3;
  std::size_t min_action_length = 4;
  std::size_t max_action_length = 40;
  std::size_t num_classes = 3;
  double noise = 0.5;
  double seconds_per_snippet = 0.5;
  std::size_t frames_per_snippet = 16;
  /// Every n-th video (index % n == n - 1) goes to the validation subset; 0 disables.
  std::size_t validation_every = 5;
  std::size_t max_retries = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Background snippets are N(0, noise^2). Each planted action covers snippets
/// [a, b) with features equal to its class signature (N(0, 1) per channel)
/// plus the same noise, and is annotated as [a, b) * seconds_per_snippet.
/// Actions never touch the first or last snippet and keep a gap of at least
/// two snippets between them; overlapping draws are retried up to
/// max_retries times before DataError.
Dataset synth_dataset(const SynthConfig& config);

/// Writes manifest.json, annotations.json and features/<id>.bin under `dir`.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

}  // namespace sgdet
