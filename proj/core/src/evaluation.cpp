#include "sgdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace sgdet {

using nlohmann::json;

double average_precision(const std::vector<Prediction>& predictions,
                         const std::vector<GroundTruth>& ground_truth, double threshold) {
  if (ground_truth.empty() || predictions.empty()) return 0.0;

  std::unordered_map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    by_video[ground_truth[g].video_id].push_back(g);
  }

  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].score > predictions[b].score;
  });

  std::vector<bool> matched(ground_truth.size(), false);
  std::vector<double> tp(order.size(), 0.0);
  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Prediction& p = predictions[order[rank]];
    auto it = by_video.find(p.video_id);
    if (it == by_video.end()) continue;
    candidates.clear();
    for (std::size_t g : it->second) {
      candidates.emplace_back(segment_iou(p.segment, ground_truth[g].segment), g);
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [iou, g] : candidates) {
      if (iou < threshold) break;
      if (matched[g]) continue;
      matched[g] = true;
      tp[rank] = 1.0;
      break;
    }
  }

  const double npos = static_cast<double>(ground_truth.size());
  const std::size_t n = order.size();
  std::vector<double> precision(n), recall(n);
  double cum_tp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cum_tp += tp[i];
    precision[i] = cum_tp / static_cast<double>(i + 1);
    recall[i] = cum_tp / npos;
  }
  // Monotone envelope from the right, then area over recall increments.
  for (std::size_t i = n - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

std::vector<double> activitynet_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

std::vector<double> thumos_thresholds() { return {0.3, 0.4, 0.5, 0.6, 0.7}; }

double EvalReport::map_at(double threshold) const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (std::abs(thresholds[i] - threshold) < std::abs(thresholds[best] - threshold)) best = i;
  }
  return map.empty() ? 0.0 : map[best];
}

json EvalReport::to_json() const {
  json per = json::object();
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::ostringstream key;
    key << std::fixed << std::setprecision(2) << thresholds[i];
    per[key.str()] = map[i];
  }
  json classes = json::object();
  for (const auto& [label, aps] : class_ap) classes[label] = aps;
  return {{"thresholds", thresholds},
          {"mAP", per},
          {"average_mAP", average_map},
          {"class_AP", classes},
          {"num_predictions", num_predictions},
          {"num_ground_truth", num_ground_truth},
          {"empty_ground_truth", empty_ground_truth}};
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "tIoU    mAP\n";
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    os << std::setprecision(2) << thresholds[i] << "    " << std::setprecision(4) << map[i]
       << '\n';
  }
  os << "average " << average_map << '\n';
  os << "predictions " << num_predictions << ", ground truths " << num_ground_truth << '\n';
  if (empty_ground_truth) os << "warning: no ground truth segments\n";
  return os.str();
}

EvalReport map_suite(const PredictionsByClass& predictions, const GroundTruthByClass& ground_truth,
                     const std::vector<double>& thresholds) {
  EvalReport report;
  report.thresholds = thresholds;
  report.map.assign(thresholds.size(), 0.0);
  for (const auto& [label, preds] : predictions) {
    if (ground_truth.count(label)) report.num_predictions += preds.size();
  }
  for (const auto& [label, gts] : ground_truth) report.num_ground_truth += gts.size();
  report.empty_ground_truth = report.num_ground_truth == 0;
  if (report.empty_ground_truth) return report;

  static const std::vector<Prediction> kNone;
  std::size_t classes = 0;
  for (const auto& [label, gts] : ground_truth) {
    if (gts.empty()) continue;
    ++classes;
    auto it = predictions.find(label);
    const auto& preds = it == predictions.end() ? kNone : it->second;
    auto& aps = report.class_ap[label];
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      aps.push_back(average_precision(preds, gts, thresholds[t]));
      report.map[t] += aps.back();
    }
  }
  for (auto& m : report.map) m /= static_cast<double>(classes);
  report.average_map =
      thresholds.empty()
          ? 0.0
          : std::accumulate(report.map.begin(), report.map.end(), 0.0) /
                static_cast<double>(thresholds.size());
  return report;
}

EvalInputs group_for_evaluation(const DetectionMap& detections, const AnnotationSet& annotations,
                                const std::string& subset, bool class_agnostic) {
  static const std::string kAgnostic = "action";
  EvalInputs in;
  for (const auto& [video_id, v] : annotations) {
    if (!subset.empty() && v.subset != subset) continue;
    for (const auto& s : v.segments) {
      in.ground_truth[class_agnostic ? kAgnostic : s.label].push_back(
          {video_id, {s.start, s.end}});
    }
    auto it = detections.find(video_id);
    if (it == detections.end()) continue;
    for (const auto& d : it->second) {
      if (!(d.end > d.start)) continue;
      in.predictions[class_agnostic ? kAgnostic : d.label].push_back(
          {video_id, {d.start, d.end}, d.score});
    }
  }
  return in;
}

}  // namespace sgdet
