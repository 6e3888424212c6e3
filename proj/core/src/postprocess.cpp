#include "sgdet/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "sgdet/errors.hpp"
#include "sgdet/segment.hpp"

namespace sgdet {

using nlohmann::json;

std::vector<double> fuse_scores(std::span<const double> p_cls, std::span<const double> p_reg,
                                double alpha) {
  if (p_cls.size() != p_reg.size()) {
    throw DimensionError("fuse_scores: " + std::to_string(p_cls.size()) + " vs " +
                         std::to_string(p_reg.size()) + " scores");
  }
  std::vector<double> out(p_cls.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::pow(p_cls[i], alpha) * std::pow(p_reg[i], 1.0 - alpha);
  }
  return out;
}

NmsMethod parse_nms_method(const std::string& name) {
  if (name == "linear") return NmsMethod::linear;
  if (name == "gaussian") return NmsMethod::gaussian;
  throw ConfigError("unknown Soft-NMS method '" + name + "' (expected linear or gaussian)");
}

std::string to_string(NmsMethod method) {
  return method == NmsMethod::linear ? "linear" : "gaussian";
}

namespace {

bool ranks_before(const Detection& a, const Detection& b) {
  return a.score > b.score || (a.score == b.score && a.start < b.start);
}

double iou_or_zero(const Detection& a, const Detection& b) {
  if (!(a.end > a.start) || !(b.end > b.start)) return 0.0;
  return segment_iou({a.start, a.end}, {b.start, b.end});
}

}  // namespace

std::vector<Detection> soft_nms(std::vector<Detection> detections, const SoftNmsConfig& config) {
  std::vector<Detection> kept;
  const std::size_t limit = config.top_m == 0 ? detections.size()
                                              : std::min(config.top_m, detections.size());
  kept.reserve(limit);
  // Selected scores are final and every later selection scores no higher, so
  // stopping after `limit` rounds yields the same top-M as running to exhaustion.
  while (kept.size() < limit && !detections.empty()) {
    auto best = std::min_element(detections.begin(), detections.end(), ranks_before);
    Detection chosen = *best;
    *best = detections.back();
    detections.pop_back();
    for (auto& d : detections) {
      const double iou = iou_or_zero(chosen, d);
      if (config.method == NmsMethod::linear) {
        if (iou > config.threshold) d.score *= 1.0 - iou;
      } else {
        d.score *= std::exp(-(iou * iou) / config.sigma);
      }
    }
    kept.push_back(std::move(chosen));
  }
  std::stable_sort(kept.begin(), kept.end(), ranks_before);
  return kept;
}

std::vector<Detection> finalize_detections(const std::vector<WindowScores>& windows,
                                           double duration, double alpha,
                                           const SoftNmsConfig& nms, const std::string& label) {
  if (!(duration > 0.0)) throw DataError("finalize_detections: duration must be positive");
  std::vector<Detection> all;
  for (const auto& w : windows) {
    if (!(w.seconds_per_snippet > 0.0) || w.offset < 0.0) {
      throw DataError("finalize_detections: invalid window mapping (offset " +
                      std::to_string(w.offset) + ", seconds per snippet " +
                      std::to_string(w.seconds_per_snippet) + ")");
    }
    if (w.p_cls.size() != w.anchors.size() || w.p_reg.size() != w.anchors.size()) {
      throw DataError("finalize_detections: score count does not match anchor count");
    }
    const auto fused = fuse_scores(w.p_cls, w.p_reg, alpha);
    for (std::size_t j = 0; j < w.anchors.size(); ++j) {
      const double s = std::clamp(
          (w.offset + static_cast<double>(w.anchors[j].start)) * w.seconds_per_snippet, 0.0,
          duration);
      const double e = std::clamp(
          (w.offset + static_cast<double>(w.anchors[j].end)) * w.seconds_per_snippet, 0.0,
          duration);
      if (!(e > s)) continue;
      all.push_back({s, e, label, fused[j]});
    }
  }
  return soft_nms(std::move(all), nms);
}

json detections_to_json(const DetectionMap& detections) {
  json results = json::object();
  for (const auto& [video_id, list] : detections) {
    json arr = json::array();
    for (const auto& d : list) {
      arr.push_back({{"segment", {d.start, d.end}}, {"score", d.score}, {"label", d.label}});
    }
    results[video_id] = std::move(arr);
  }
  return {{"version", "sgdet-1.0"}, {"results", std::move(results)}};
}

DetectionMap detections_from_json(const json& doc) {
  DetectionMap out;
  try {
    for (const auto& [video_id, arr] : doc.at("results").items()) {
      auto& list = out[video_id];
      for (const auto& item : arr) {
        const auto& seg = item.at("segment");
        list.push_back({seg.at(0).get<double>(), seg.at(1).get<double>(),
                        item.value("label", std::string("action")),
                        item.at("score").get<double>()});
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("detections: ") + e.what());
  }
  return out;
}

json scores_to_json(const ScoreMap& scores) {
  json videos = json::object();
  for (const auto& [video_id, v] : scores) {
    json windows = json::array();
    for (const auto& w : v.windows) {
      json anchors = json::array();
      for (const auto& a : w.anchors) anchors.push_back({a.start, a.end});
      windows.push_back({{"offset", w.offset},
                         {"seconds_per_snippet", w.seconds_per_snippet},
                         {"anchors", std::move(anchors)},
                         {"p_cls", w.p_cls},
                         {"p_reg", w.p_reg}});
    }
    videos[video_id] = {{"duration", v.duration}, {"windows", std::move(windows)}};
  }
  return {{"version", "sgdet-scores-1"}, {"videos", std::move(videos)}};
}

ScoreMap scores_from_json(const json& doc) {
  ScoreMap out;
  try {
    for (const auto& [video_id, v] : doc.at("videos").items()) {
      VideoScores vs;
      vs.duration = v.at("duration").get<double>();
      for (const auto& w : v.at("windows")) {
        WindowScores ws;
        ws.offset = w.at("offset").get<double>();
        ws.seconds_per_snippet = w.at("seconds_per_snippet").get<double>();
        for (const auto& a : w.at("anchors")) {
          ws.anchors.push_back({a.at(0).get<std::size_t>(), a.at(1).get<std::size_t>()});
        }
        ws.p_cls = w.at("p_cls").get<std::vector<double>>();
        ws.p_reg = w.at("p_reg").get<std::vector<double>>();
        vs.windows.push_back(std::move(ws));
      }
      out.emplace(video_id, std::move(vs));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("scores: ") + e.what());
  }
  return out;
}

}  // namespace sgdet
