#pragma once

// Dataset ingestion.
//
// Manifest: JSON array of {"video_id", "feature_file", "duration_seconds",
// "sampling_rate"[, "frames"]}, feature paths relative to the manifest.
//
// Feature file: 20-byte little-endian header
//   char magic[4] = "SGDF", u32 version = 1, u32 C, u32 L, u32 dtype (1 = f32)
// followed by L rows of C float32 values.
//
// Annotations: {"database": {video_id: {"duration", "subset",
//   "annotations": [{"segment": [s, e], "label"}]}}}

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdet/segment.hpp"

namespace sgdet {

inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 1;

struct FeatureSequence {
  std::string video_id;
  std::size_t dim = 0;     ///< C_raw
  std::size_t length = 0;  ///< L_raw
  std::vector<double> features;  ///< [length x dim] row-major
  double duration_seconds = 0.0;
  double sampling_rate = 1.0;  ///< frames per snippet

  double at(std::size_t snippet, std::size_t channel) const {
    return features[snippet * dim + channel];
  }
};

struct AnnotatedSegment {
  double start = 0.0;
  double end = 0.0;
  std::string label;
};

struct VideoAnnotation {
  double duration = 0.0;
  std::string subset;
  std::vector<AnnotatedSegment> segments;
};

/// Ordered by video id so iteration is deterministic.
using AnnotationSet = std::map<std::string, VideoAnnotation>;

struct Dataset {
  std::vector<FeatureSequence> sequences;
  AnnotationSet annotations;
};

/// rows is [length x dim] row-major; values are narrowed to float32.
void write_feature_file(const std::filesystem::path& path, std::size_t length, std::size_t dim,
                        const std::vector<double>& rows);

struct FeatureFile {
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<double> rows;
};

/// Throws FormatError (naming the file) on bad magic, version, dtype or size.
FeatureFile read_feature_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string video_id;
  std::string feature_file;
  double duration_seconds = 0.0;
  double sampling_rate = 1.0;
  std::optional<std::size_t> frames;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

AnnotationSet annotations_from_json(const nlohmann::json& doc);
nlohmann::json annotations_to_json(const AnnotationSet& annotations);
AnnotationSet read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const AnnotationSet& annotations);

/// Loads every manifest entry and, when given, the annotation file. Validates
/// finite features, frame counts and 0 <= start < end <= duration.
Dataset load_dataset(const std::filesystem::path& manifest,
                     const std::optional<std::filesystem::path>& annotations = std::nullopt);

/// Linear interpolation along time to exactly `target_length` rows. Output row
/// i samples source position (i + 0.5) * L_raw / target - 0.5, clamped to
/// [0, L_raw - 1].
FeatureSequence rescale_sequence(const FeatureSequence& seq, std::size_t target_length);

/// One fixed-length crop of a sequence.
struct FeatureWindow {
  std::size_t offset = 0;        ///< first snippet in the source sequence
  std::size_t valid_length = 0;  ///< snippets before zero padding
  std::vector<double> features;  ///< [window_length x dim], zero padded
};

/// Windows start at 0, stride, 2*stride, ... until one reaches the end of the
/// sequence; the final window is zero padded. In training mode, windows that
/// overlap none of `actions` (snippet units) are dropped.
std::vector<FeatureWindow> window_sequence(const FeatureSequence& seq, std::size_t window_length,
                                           std::size_t stride, bool training,
                                           const std::vector<Segment>& actions = {});

/// How a video is turned into fixed-length model inputs.
struct SequenceLayout {
  enum class Mode { rescale, window };
  Mode mode = Mode::rescale;
  std::size_t length = 100;  ///< rescale target or window length
  std::size_t stride = 128;  ///< window stride

  nlohmann::json to_json() const;
  static SequenceLayout from_json(const nlohmann::json& j);
};

/// A fixed-length model input with its mapping back to seconds:
/// seconds = (offset + index) * seconds_per_snippet.
struct VideoWindow {
  std::string video_id;
  std::size_t dim = 0;
  std::size_t length = 0;
  std::size_t valid_length = 0;
  double offset = 0.0;
  double seconds_per_snippet = 1.0;
  std::vector<double> features;          ///< [length x dim]
  std::vector<Segment> ground_truth;     ///< window snippet units, clipped to the window
};

/// Applies the layout. Ground truth (seconds) is converted to window units.
/// In training mode windows without actions are dropped.
std::vector<VideoWindow> make_windows(const FeatureSequence& seq, const SequenceLayout& layout,
                                      const std::vector<AnnotatedSegment>& annotations,
                                      bool training);

}  // namespace sgdet
