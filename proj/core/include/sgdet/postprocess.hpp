#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdet/sgalign.hpp"

namespace sgdet {

/// Scored segment in video seconds.
struct Detection {
  double start = 0.0;
  double end = 0.0;
  std::string label;
  double score = 0.0;
};

/// p = p_cls^alpha * p_reg^(1 - alpha), elementwise.
std::vector<double> fuse_scores(std::span<const double> p_cls, std::span<const double> p_reg,
                                double alpha);

enum class NmsMethod { linear, gaussian };

NmsMethod parse_nms_method(const std::string& name);
std::string to_string(NmsMethod method);

struct SoftNmsConfig {
  NmsMethod method = NmsMethod::linear;
  double threshold = 0.84;  ///< IoU above which the linear rule decays
  double sigma = 0.4;       ///< Gaussian spread
  std::size_t top_m = 100;  ///< 0 keeps everything
};

/// Greedy score decay. Each round selects the highest remaining score (ties:
/// earlier start) and decays the rest by 1 - IoU when IoU > threshold (linear)
/// or exp(-IoU^2 / sigma) (Gaussian). Returns the top_m selections in
/// descending score order.
std::vector<Detection> soft_nms(std::vector<Detection> detections, const SoftNmsConfig& config);

/// Anchor scores of one model input together with its mapping to seconds:
/// seconds = (offset + index) * seconds_per_snippet.
struct WindowScores {
  double offset = 0.0;
  double seconds_per_snippet = 1.0;
  std::vector<Anchor> anchors;
  std::vector<double> p_cls;
  std::vector<double> p_reg;
};

/// Maps every anchor of every window to seconds (clamped to [0, duration]),
/// fuses scores, and runs Soft-NMS over the whole video.
std::vector<Detection> finalize_detections(const std::vector<WindowScores>& windows,
                                           double duration, double alpha,
                                           const SoftNmsConfig& nms, const std::string& label);

/// {"version": ..., "results": {video_id: [{"segment": [s, e], "score", "label"}]}}
using DetectionMap = std::map<std::string, std::vector<Detection>>;
nlohmann::json detections_to_json(const DetectionMap& detections);
DetectionMap detections_from_json(const nlohmann::json& doc);

/// Raw per-window anchor scores, kept so fusion can be re-run offline.
struct VideoScores {
  double duration = 0.0;
  std::vector<WindowScores> windows;
};
using ScoreMap = std::map<std::string, VideoScores>;
nlohmann::json scores_to_json(const ScoreMap& scores);
ScoreMap scores_from_json(const nlohmann::json& doc);

}  // namespace sgdet
