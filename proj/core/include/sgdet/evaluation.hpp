#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgdet/data_io.hpp"
#include "sgdet/postprocess.hpp"
#include "sgdet/segment.hpp"

namespace sgdet {

struct Prediction {
  std::string video_id;
  Segment segment;
  double score = 0.0;
};

struct GroundTruth {
  std::string video_id;
  Segment segment;
};

/// ActivityNet-style AP. Predictions are ranked by score (stable for ties);
/// each matches the highest-IoU unmatched ground truth of its video with
/// IoU >= threshold. AP is the exact area under the monotone precision
/// envelope. No ground truth gives 0.
double average_precision(const std::vector<Prediction>& predictions,
                         const std::vector<GroundTruth>& ground_truth, double threshold);

/// 0.5, 0.55, ..., 0.95
std::vector<double> activitynet_thresholds();
/// 0.3, 0.4, ..., 0.7
std::vector<double> thumos_thresholds();

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> map;  ///< one per threshold
  double average_map = 0.0;
  std::map<std::string, std::vector<double>> class_ap;  ///< label -> AP per threshold
  std::size_t num_predictions = 0;
  std::size_t num_ground_truth = 0;
  bool empty_ground_truth = false;

  /// mAP at the listed threshold closest to `threshold`.
  double map_at(double threshold) const;
  nlohmann::json to_json() const;
  std::string to_table() const;
};

using PredictionsByClass = std::map<std::string, std::vector<Prediction>>;
using GroundTruthByClass = std::map<std::string, std::vector<GroundTruth>>;

/// mAP per threshold as the mean AP over ground-truth classes; predictions for
/// classes without ground truth are ignored.
EvalReport map_suite(const PredictionsByClass& predictions, const GroundTruthByClass& ground_truth,
                     const std::vector<double>& thresholds);

struct EvalInputs {
  PredictionsByClass predictions;
  GroundTruthByClass ground_truth;
};

/// Groups detections and annotations by label. Only videos whose annotation
/// subset matches `subset` (empty = all) are evaluated. With `class_agnostic`
/// every label collapses into one pseudo-class.
EvalInputs group_for_evaluation(const DetectionMap& detections, const AnnotationSet& annotations,
                                const std::string& subset, bool class_agnostic);

}  // namespace sgdet
