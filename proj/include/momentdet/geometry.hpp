#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace momentdet {

/// Temporal interval (start, end) in seconds. start < end is enforced at
/// construction; zero-length intervals are rejected rather than clamped.
struct TemporalSegment {
  double start = 0.0;
  double end = 1.0;

  TemporalSegment() = default;
  TemporalSegment(double s, double e) : start(s), end(e) {
    if (!(std::isfinite(s) && std::isfinite(e))) {
      throw std::invalid_argument("TemporalSegment: endpoints must be finite");
    }
    if (!(s < e)) {
      throw std::invalid_argument("TemporalSegment: start must be < end, got [" +
                                  std::to_string(s) + ", " + std::to_string(e) + ")");
    }
  }

  double length() const { return end - start; }
  double center() const { return 0.5 * (start + end); }
};

/// One decoded prediction: a segment, the index of the prompt query it
/// answers, and a confidence in [0, 1].
struct Detection {
  TemporalSegment segment;
  int query_index = 0;
  double score = 0.0;
};

/// Intersection over union of two intervals; 0 when disjoint.
double temporal_iou(const TemporalSegment& a, const TemporalSegment& b);

/// 1-D distance-IoU loss: 1 - IoU + (center distance / enclosing length)^2.
/// Zero iff the segments coincide; symmetric in its arguments.
double diou_loss(const TemporalSegment& pred, const TemporalSegment& gt);

enum class NmsMode { Hard, Gaussian };

struct NmsConfig {
  NmsMode mode = NmsMode::Hard;
  double iou_threshold = 0.6;
  double sigma = 0.5;
  double score_floor = 1e-3;
};

/// Non-maximum suppression, computed independently per query_index.
/// Hard mode drops any detection overlapping a higher-scored kept detection
/// of the same query above iou_threshold; gaussian mode decays scores by
/// exp(-iou^2 / sigma). Results below score_floor are dropped. Output is
/// sorted by descending score; ties break on earlier start, then smaller
/// query_index.
std::vector<Detection> soft_nms(std::vector<Detection> dets, const NmsConfig& cfg);

}  // namespace momentdet
