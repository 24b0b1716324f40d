#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "momentdet/autograd.hpp"
#include "momentdet/geometry.hpp"
#include "momentdet/model.hpp"

namespace momentdet {

struct EvalConfig {
  // ActivityNet-style grid 0.5:0.05:0.95 by default.
  std::vector<double> iou_thresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                        0.75, 0.80, 0.85, 0.90, 0.95};
  std::vector<double> recall_thresholds = {0.5, 0.7};
  double score_floor = 1e-3;
  int top_k = 200;  // per query, before suppression
  NmsConfig nms;

  void validate() const;
};

/// Sigmoid-scores every (row, query) logit, decodes segments from the row's
/// (timestamp, stride), clamps to [0, duration], keeps the per-query top_k
/// above score_floor, then suppresses per query. Deterministic.
std::vector<Detection> decode_detections(const Mat& logits, const Mat& regressions,
                                         const std::vector<RowMeta>& rows, double duration,
                                         const EvalConfig& cfg);

/// Re-indexes each chunk's query_index into the global category list and
/// concatenates; no cross-chunk suppression. chunk_sizes must partition the
/// global list in order.
std::vector<Detection> merge_chunked(const std::vector<std::vector<Detection>>& per_chunk,
                                     const std::vector<int>& chunk_sizes);

struct VideoDetection {
  std::string video_id;
  Detection det;
};

struct VideoGroundTruth {
  std::string video_id;
  int class_index = 0;
  TemporalSegment segment;
};

struct ApReport {
  std::vector<std::pair<double, double>> per_threshold;  // (threshold, mAP)
  double average = 0.0;                                  // mean over thresholds
  std::map<int, double> per_class;                       // class -> AP averaged over thresholds
};

/// Greedy score-descending matching against the same-video same-class
/// unmatched ground truth of highest tIoU; AP by 101-point interpolated
/// precision; classes without ground truth are excluded from the average.
ApReport mean_average_precision(const std::vector<VideoDetection>& dets,
                                const std::vector<VideoGroundTruth>& gts,
                                const std::vector<double>& thresholds,
                                const std::set<std::string>* known_videos = nullptr);

struct RecallReport {
  std::vector<std::pair<double, double>> per_threshold;  // (threshold, recall)
  int total_pairs = 0;
};

/// Retrieval protocol: exactly one ground truth per (video, class) pair; a
/// pair counts as recalled at threshold t iff its single highest-scored
/// detection reaches tIoU >= t.
RecallReport recall_at_1(const std::vector<VideoDetection>& dets,
                         const std::vector<VideoGroundTruth>& gts,
                         const std::vector<double>& thresholds);

}  // namespace momentdet
