#include "sgdet/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sgdet/errors.hpp"

namespace sgdet {

static_assert(std::endian::native == std::endian::little,
              "feature file I/O assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kFeatureMagic[4] = {'S', 'G', 'D', 'F'};

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << doc.dump(2) << '\n';
}

}  // namespace

void write_feature_file(const fs::path& path, std::size_t length, std::size_t dim,
                        const std::vector<double>& rows) {
  if (rows.size() != length * dim) {
    throw DimensionError("write_feature_file: " + std::to_string(rows.size()) +
                         " values for a " + std::to_string(length) + "x" + std::to_string(dim) +
                         " sequence");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  const std::uint32_t header[4] = {kFeatureFileVersion, static_cast<std::uint32_t>(dim),
                                   static_cast<std::uint32_t>(length), kDtypeFloat32};
  os.write(kFeatureMagic, sizeof(kFeatureMagic));
  os.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<float> payload(rows.begin(), rows.end());
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!os) throw DataError("failed writing " + path.string());
}

FeatureFile read_feature_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open feature file " + path.string());
  char magic[4];
  std::uint32_t header[4];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kFeatureMagic, sizeof(magic)) != 0) {
    throw FormatError("feature file " + path.string() + ": bad magic");
  }
  if (!is.read(reinterpret_cast<char*>(header), sizeof(header))) {
    throw FormatError("feature file " + path.string() + ": truncated header");
  }
  if (header[0] != kFeatureFileVersion) {
    throw FormatError("feature file " + path.string() + ": unsupported version " +
                      std::to_string(header[0]));
  }
  if (header[3] != kDtypeFloat32) {
    throw FormatError("feature file " + path.string() + ": unsupported dtype " +
                      std::to_string(header[3]));
  }
  FeatureFile file;
  file.dim = header[1];
  file.length = header[2];
  std::vector<float> payload(file.length * file.dim);
  if (!payload.empty() &&
      !is.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(payload.size() * sizeof(float)))) {
    throw FormatError("feature file " + path.string() + ": payload shorter than " +
                      std::to_string(file.length) + "x" + std::to_string(file.dim));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("feature file " + path.string() + ": trailing bytes after payload");
  }
  file.rows.assign(payload.begin(), payload.end());
  return file;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  const json doc = read_json(path);
  if (!doc.is_array()) throw FormatError("manifest " + path.string() + ": expected a JSON array");
  std::vector<ManifestEntry> entries;
  try {
    for (const auto& item : doc) {
      ManifestEntry e;
      e.video_id = item.at("video_id").get<std::string>();
      e.feature_file = item.at("feature_file").get<std::string>();
      e.duration_seconds = item.at("duration_seconds").get<double>();
      e.sampling_rate = item.value("sampling_rate", 1.0);
      if (item.contains("frames")) e.frames = item.at("frames").get<std::size_t>();
      entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  json doc = json::array();
  for (const auto& e : entries) {
    json item = {{"video_id", e.video_id},
                 {"feature_file", e.feature_file},
                 {"duration_seconds", e.duration_seconds},
                 {"sampling_rate", e.sampling_rate}};
    if (e.frames) item["frames"] = *e.frames;
    doc.push_back(std::move(item));
  }
  write_json(path, doc);
}

AnnotationSet annotations_from_json(const json& doc) {
  AnnotationSet out;
  try {
    for (const auto& [video_id, entry] : doc.at("database").items()) {
      VideoAnnotation v;
      v.duration = entry.at("duration").get<double>();
      v.subset = entry.value("subset", std::string("training"));
      for (const auto& a : entry.value("annotations", json::array())) {
        const auto& seg = a.at("segment");
        v.segments.push_back({seg.at(0).get<double>(), seg.at(1).get<double>(),
                              a.value("label", std::string("action"))});
      }
      out.emplace(video_id, std::move(v));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("annotations: ") + e.what());
  }
  return out;
}

json annotations_to_json(const AnnotationSet& annotations) {
  json db = json::object();
  for (const auto& [video_id, v] : annotations) {
    json segs = json::array();
    for (const auto& s : v.segments) {
      segs.push_back({{"segment", {s.start, s.end}}, {"label", s.label}});
    }
    db[video_id] = {{"duration", v.duration}, {"subset", v.subset}, {"annotations", segs}};
  }
  return {{"database", db}};
}

AnnotationSet read_annotations(const fs::path& path) {
  try {
    return annotations_from_json(read_json(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_annotations(const fs::path& path, const AnnotationSet& annotations) {
  write_json(path, annotations_to_json(annotations));
}

Dataset load_dataset(const fs::path& manifest, const std::optional<fs::path>& annotations) {
  Dataset ds;
  const fs::path root = manifest.parent_path();
  for (const auto& entry : read_manifest(manifest)) {
    const fs::path feature_path = root / entry.feature_file;
    FeatureFile file = read_feature_file(feature_path);
    for (double v : file.rows) {
      if (!std::isfinite(v)) {
        throw DataError("feature file " + feature_path.string() + ": non-finite value");
      }
    }
    if (entry.frames && entry.sampling_rate > 0.0) {
      const auto expected = static_cast<std::size_t>(
          std::floor(static_cast<double>(*entry.frames) / entry.sampling_rate));
      if (expected != file.length) {
        throw DataError("video " + entry.video_id + ": " + std::to_string(file.length) +
                        " snippets but floor(frames / sampling_rate) = " +
                        std::to_string(expected));
      }
    }
    if (!(entry.duration_seconds > 0.0)) {
      throw DataError("video " + entry.video_id + ": duration must be positive");
    }
    ds.sequences.push_back({entry.video_id, file.dim, file.length, std::move(file.rows),
                            entry.duration_seconds, entry.sampling_rate});
  }
  if (annotations) {
    ds.annotations = read_annotations(*annotations);
    for (const auto& [video_id, v] : ds.annotations) {
      for (const auto& s : v.segments) {
        if (!(s.start >= 0.0 && s.start < s.end && s.end <= v.duration)) {
          throw DataError("video " + video_id + ": annotation [" + std::to_string(s.start) +
                          ", " + std::to_string(s.end) + "] outside duration " +
                          std::to_string(v.duration));
        }
      }
    }
  }
  return ds;
}

FeatureSequence rescale_sequence(const FeatureSequence& seq, std::size_t target_length) {
  if (seq.length == 0) throw ContractError("rescale_sequence: empty sequence");
  if (target_length == seq.length) return seq;
  FeatureSequence out = seq;
  out.length = target_length;
  out.features.assign(target_length * seq.dim, 0.0);
  const double ratio = static_cast<double>(seq.length) / static_cast<double>(target_length);
  const double last = static_cast<double>(seq.length - 1);
  for (std::size_t i = 0; i < target_length; ++i) {
    const double pos = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, seq.length - 1);
    const double frac = pos - static_cast<double>(lo);
    for (std::size_t c = 0; c < seq.dim; ++c) {
      out.features[i * seq.dim + c] = (1.0 - frac) * seq.at(lo, c) + frac * seq.at(hi, c);
    }
  }
  return out;
}

std::vector<FeatureWindow> window_sequence(const FeatureSequence& seq, std::size_t window_length,
                                           std::size_t stride, bool training,
                                           const std::vector<Segment>& actions) {
  if (stride == 0 || window_length <= stride) {
    throw ConfigError("window_sequence: need window length > stride > 0");
  }
  std::vector<FeatureWindow> windows;
  for (std::size_t start = 0;; start += stride) {
    FeatureWindow w;
    w.offset = start;
    w.valid_length = std::min(window_length, seq.length - std::min(start, seq.length));
    w.features.assign(window_length * seq.dim, 0.0);
    std::copy_n(seq.features.begin() + static_cast<std::ptrdiff_t>(start * seq.dim),
                w.valid_length * seq.dim, w.features.begin());
    bool keep = true;
    if (training) {
      const double lo = static_cast<double>(start);
      const double hi = static_cast<double>(start + w.valid_length);
      keep = std::any_of(actions.begin(), actions.end(),
                         [&](const Segment& a) { return a.end > lo && a.start < hi; });
    }
    if (keep) windows.push_back(std::move(w));
    if (start + window_length >= seq.length) break;
  }
  return windows;
}

json SequenceLayout::to_json() const {
  return {{"mode", mode == Mode::rescale ? "rescale" : "window"},
          {"length", length},
          {"stride", stride}};
}

SequenceLayout SequenceLayout::from_json(const json& j) {
  SequenceLayout l;
  const std::string mode = j.value("mode", std::string("rescale"));
  if (mode == "rescale") {
    l.mode = Mode::rescale;
  } else if (mode == "window") {
    l.mode = Mode::window;
  } else {
    throw ConfigError("unknown sequence layout mode " + mode);
  }
  l.length = j.value("length", l.length);
  l.stride = j.value("stride", l.stride);
  return l;
}

std::vector<VideoWindow> make_windows(const FeatureSequence& seq, const SequenceLayout& layout,
                                      const std::vector<AnnotatedSegment>& annotations,
                                      bool training) {
  std::vector<VideoWindow> out;
  if (layout.mode == SequenceLayout::Mode::rescale) {
    FeatureSequence scaled = rescale_sequence(seq, layout.length);
    VideoWindow w;
    w.video_id = seq.video_id;
    w.dim = seq.dim;
    w.length = layout.length;
    w.valid_length = layout.length;
    w.seconds_per_snippet = seq.duration_seconds / static_cast<double>(layout.length);
    w.features = std::move(scaled.features);
    for (const auto& a : annotations) {
      w.ground_truth.push_back({a.start / w.seconds_per_snippet, a.end / w.seconds_per_snippet});
    }
    if (!training || !w.ground_truth.empty()) out.push_back(std::move(w));
    return out;
  }

  const double sps = seq.duration_seconds / static_cast<double>(seq.length);
  std::vector<Segment> actions;
  for (const auto& a : annotations) actions.push_back({a.start / sps, a.end / sps});
  for (auto& fw : window_sequence(seq, layout.length, layout.stride, training, actions)) {
    VideoWindow w;
    w.video_id = seq.video_id;
    w.dim = seq.dim;
    w.length = layout.length;
    w.valid_length = fw.valid_length;
    w.offset = static_cast<double>(fw.offset);
    w.seconds_per_snippet = sps;
    w.features = std::move(fw.features);
    const double hi = static_cast<double>(layout.length - 1);
    for (const auto& a : actions) {
      const double s = std::clamp(a.start - w.offset, 0.0, hi);
      const double e = std::clamp(a.end - w.offset, 0.0, hi);
      if (e > s) w.ground_truth.push_back({s, e});
    }
    if (training && w.ground_truth.empty()) continue;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace sgdet
