#include "sgdet/segment.hpp"

#include <algorithm>
#include <string>

#include "sgdet/errors.hpp"

namespace sgdet {

double segment_iou(const Segment& a, const Segment& b) {
  if (!(a.end > a.start) || !(b.end > b.start)) {
    throw ContractError("segment_iou: degenerate segment [" + std::to_string(a.start) + ", " +
                        std::to_string(a.end) + "] or [" + std::to_string(b.start) + ", " +
                        std::to_string(b.end) + "]");
  }
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = a.length() + b.length() - inter;
  return inter / uni;
}

}  // namespace sgdet
