#include "momentdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace momentdet {

void EvalConfig::validate() const {
  auto check = [](const std::vector<double>& t, const char* what) {
    if (t.empty()) throw std::invalid_argument(std::string(what) + ": empty threshold list");
    for (size_t i = 0; i < t.size(); ++i) {
      if (!(t[i] > 0.0 && t[i] <= 1.0)) {
        throw std::invalid_argument(std::string(what) + ": thresholds must lie in (0,1]");
      }
      if (i > 0 && !(t[i] > t[i - 1])) {
        throw std::invalid_argument(std::string(what) + ": thresholds must be strictly increasing");
      }
    }
  };
  check(iou_thresholds, "iou_thresholds");
  check(recall_thresholds, "recall_thresholds");
  if (top_k <= 0) throw std::invalid_argument("EvalConfig: top_k must be positive");
  if (score_floor < 0.0) throw std::invalid_argument("EvalConfig: score_floor must be nonnegative");
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool detection_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.segment.start != b.segment.start) return a.segment.start < b.segment.start;
  if (a.segment.end != b.segment.end) return a.segment.end < b.segment.end;
  return a.query_index < b.query_index;
}

}  // namespace

std::vector<Detection> decode_detections(const Mat& logits, const Mat& regressions,
                                         const std::vector<RowMeta>& rows, double duration,
                                         const EvalConfig& cfg) {
  if (logits.rows() != static_cast<Eigen::Index>(rows.size())) {
    throw std::invalid_argument("decode_detections: logits do not match row metadata");
  }
  if (regressions.rows() != logits.rows() || regressions.cols() != 2) {
    throw std::invalid_argument("decode_detections: regressions must be rows x 2");
  }

  const int num_queries = static_cast<int>(logits.cols());
  std::vector<Detection> all;
  for (int q = 0; q < num_queries; ++q) {
    std::vector<Detection> cand;
    for (size_t r = 0; r < rows.size(); ++r) {
      const double score = sigmoid(logits(static_cast<Eigen::Index>(r), q));
      if (score < cfg.score_floor) continue;
      const RowMeta& row = rows[r];
      double start = row.timestamp - regressions(static_cast<Eigen::Index>(r), 0) * row.stride;
      double end = row.timestamp + regressions(static_cast<Eigen::Index>(r), 1) * row.stride;
      start = std::max(0.0, start);
      end = std::min(duration, end);
      if (!(start < end)) continue;
      cand.push_back(Detection{TemporalSegment(start, end), q, score});
    }
    std::sort(cand.begin(), cand.end(), detection_order);
    if (static_cast<int>(cand.size()) > cfg.top_k) cand.resize(static_cast<size_t>(cfg.top_k));
    std::vector<Detection> kept = soft_nms(std::move(cand), cfg.nms);
    all.insert(all.end(), kept.begin(), kept.end());
  }
  std::sort(all.begin(), all.end(), detection_order);
  return all;
}

std::vector<Detection> merge_chunked(const std::vector<std::vector<Detection>>& per_chunk,
                                     const std::vector<int>& chunk_sizes) {
  if (per_chunk.size() != chunk_sizes.size()) {
    throw std::invalid_argument("merge_chunked: chunk count does not match size list");
  }
  std::vector<int> offsets(chunk_sizes.size(), 0);
  int total = 0;
  for (size_t i = 0; i < chunk_sizes.size(); ++i) {
    if (chunk_sizes[i] <= 0) throw std::invalid_argument("merge_chunked: chunk sizes must be positive");
    offsets[i] = total;
    total += chunk_sizes[i];
  }

  std::vector<Detection> merged;
  for (size_t i = 0; i < per_chunk.size(); ++i) {
    for (Detection d : per_chunk[i]) {
      if (d.query_index < 0 || d.query_index >= chunk_sizes[i]) {
        throw std::invalid_argument("merge_chunked: detection query_index " +
                                    std::to_string(d.query_index) + " outside chunk " +
                                    std::to_string(i));
      }
      d.query_index += offsets[i];
      merged.push_back(d);
    }
  }
  std::sort(merged.begin(), merged.end(), detection_order);
  return merged;
}

ApReport mean_average_precision(const std::vector<VideoDetection>& dets,
                                const std::vector<VideoGroundTruth>& gts,
                                const std::vector<double>& thresholds,
                                const std::set<std::string>* known_videos) {
  if (thresholds.empty()) throw std::invalid_argument("mean_average_precision: no thresholds");

  std::set<std::string> videos;
  for (const VideoGroundTruth& g : gts) videos.insert(g.video_id);
  if (known_videos != nullptr) videos.insert(known_videos->begin(), known_videos->end());
  for (const VideoDetection& d : dets) {
    if (videos.count(d.video_id) == 0) {
      throw std::invalid_argument("mean_average_precision: detection references unknown video " +
                                  d.video_id);
    }
  }

  // Ground truths grouped by class, then by video.
  std::map<int, std::map<std::string, std::vector<TemporalSegment>>> gt_by_class;
  for (const VideoGroundTruth& g : gts) {
    gt_by_class[g.class_index][g.video_id].push_back(g.segment);
  }
  std::map<int, std::vector<VideoDetection>> det_by_class;
  for (const VideoDetection& d : dets) det_by_class[d.det.query_index].push_back(d);

  ApReport report;
  std::vector<double> threshold_sums(thresholds.size(), 0.0);
  int classes_with_gt = 0;

  for (const auto& [cls, gt_videos] : gt_by_class) {
    int npos = 0;
    for (const auto& [vid, segs] : gt_videos) npos += static_cast<int>(segs.size());
    if (npos == 0) continue;
    ++classes_with_gt;

    std::vector<VideoDetection> cls_dets;
    if (auto it = det_by_class.find(cls); it != det_by_class.end()) cls_dets = it->second;
    std::sort(cls_dets.begin(), cls_dets.end(), [](const VideoDetection& a, const VideoDetection& b) {
      if (a.det.score != b.det.score) return a.det.score > b.det.score;
      if (a.video_id != b.video_id) return a.video_id < b.video_id;
      if (a.det.segment.start != b.det.segment.start) return a.det.segment.start < b.det.segment.start;
      return a.det.segment.end < b.det.segment.end;
    });

    double class_ap_sum = 0.0;
    for (size_t ti = 0; ti < thresholds.size(); ++ti) {
      const double thr = thresholds[ti];
      std::map<std::string, std::vector<char>> used;
      for (const auto& [vid, segs] : gt_videos) used[vid].assign(segs.size(), 0);

      std::vector<char> is_tp(cls_dets.size(), 0);
      for (size_t di = 0; di < cls_dets.size(); ++di) {
        const VideoDetection& d = cls_dets[di];
        auto git = gt_videos.find(d.video_id);
        if (git == gt_videos.end()) continue;
        const std::vector<TemporalSegment>& segs = git->second;
        std::vector<char>& flags = used[d.video_id];
        int best = -1;
        double best_iou = 0.0;
        for (size_t gi = 0; gi < segs.size(); ++gi) {
          if (flags[gi]) continue;
          const double iou = temporal_iou(d.det.segment, segs[gi]);
          if (iou >= thr && iou > best_iou) {
            best_iou = iou;
            best = static_cast<int>(gi);
          }
        }
        if (best >= 0) {
          flags[static_cast<size_t>(best)] = 1;
          is_tp[di] = 1;
        }
      }

      // 101-point interpolated AP over the full recall range.
      std::vector<double> precision, recall;
      int tp = 0;
      for (size_t di = 0; di < cls_dets.size(); ++di) {
        tp += is_tp[di];
        precision.push_back(static_cast<double>(tp) / static_cast<double>(di + 1));
        recall.push_back(static_cast<double>(tp) / npos);
      }
      double ap = 0.0;
      for (int ri = 0; ri <= 100; ++ri) {
        const double r = ri / 100.0;
        double best_prec = 0.0;
        for (size_t di = 0; di < precision.size(); ++di) {
          if (recall[di] >= r) best_prec = std::max(best_prec, precision[di]);
        }
        ap += best_prec;
      }
      ap /= 101.0;
      threshold_sums[ti] += ap;
      class_ap_sum += ap;
    }
    report.per_class[cls] = class_ap_sum / static_cast<double>(thresholds.size());
  }

  double total = 0.0;
  for (size_t ti = 0; ti < thresholds.size(); ++ti) {
    const double value = classes_with_gt > 0 ? threshold_sums[ti] / classes_with_gt : 0.0;
    report.per_threshold.emplace_back(thresholds[ti], value);
    total += value;
  }
  report.average = total / static_cast<double>(thresholds.size());
  return report;
}

RecallReport recall_at_1(const std::vector<VideoDetection>& dets,
                         const std::vector<VideoGroundTruth>& gts,
                         const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw std::invalid_argument("recall_at_1: no thresholds");

  std::map<std::pair<std::string, int>, TemporalSegment> gt_by_pair;
  for (const VideoGroundTruth& g : gts) {
    const auto key = std::make_pair(g.video_id, g.class_index);
    if (!gt_by_pair.emplace(key, g.segment).second) {
      throw std::invalid_argument("recall_at_1: more than one ground truth for (" + g.video_id +
                                  ", " + std::to_string(g.class_index) + ")");
    }
  }

  std::map<std::pair<std::string, int>, Detection> top;
  for (const VideoDetection& d : dets) {
    const auto key = std::make_pair(d.video_id, d.det.query_index);
    if (gt_by_pair.count(key) == 0) {
      throw std::invalid_argument("recall_at_1: detection for pair (" + d.video_id + ", " +
                                  std::to_string(d.det.query_index) + ") with no ground truth");
    }
    auto it = top.find(key);
    if (it == top.end() || detection_order(d.det, it->second)) top[key] = d.det;
  }

  RecallReport report;
  report.total_pairs = static_cast<int>(gt_by_pair.size());
  for (const double thr : thresholds) {
    int hit = 0;
    for (const auto& [key, seg] : gt_by_pair) {
      auto it = top.find(key);
      if (it != top.end() && temporal_iou(it->second.segment, seg) >= thr) ++hit;
    }
    report.per_threshold.emplace_back(
        thr, report.total_pairs > 0 ? static_cast<double>(hit) / report.total_pairs : 0.0);
  }
  return report;
}

}  // namespace momentdet
