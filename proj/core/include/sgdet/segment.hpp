#pragma once

namespace sgdet {

/// Closed temporal interval; units depend on context (snippets or seconds).
struct Segment {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// |a ∩ b| / |a ∪ b|; 0 for disjoint segments. Throws ContractError when
/// either segment has end <= start.
double segment_iou(const Segment& a, const Segment& b);

}  // namespace sgdet
