#include "momentdet/geometry.hpp"

#include <algorithm>
#include <map>

namespace momentdet {

double temporal_iou(const TemporalSegment& a, const TemporalSegment& b) {
  const double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
  if (inter <= 0.0) {
    return 0.0;
  }
  const double uni = a.length() + b.length() - inter;
  return inter / uni;
}

double diou_loss(const TemporalSegment& pred, const TemporalSegment& gt) {
  const double iou = temporal_iou(pred, gt);
  const double rho = pred.center() - gt.center();
  const double c = std::max(pred.end, gt.end) - std::min(pred.start, gt.start);
  return 1.0 - iou + (rho * rho) / (c * c);
}

namespace {

// Selection order inside one query: best score first, then earlier start.
bool better(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.segment.start != b.segment.start) return a.segment.start < b.segment.start;
  return a.segment.end < b.segment.end;
}

}  // namespace

std::vector<Detection> soft_nms(std::vector<Detection> dets, const NmsConfig& cfg) {
  for (const Detection& d : dets) {
    if (d.query_index < 0) {
      throw std::invalid_argument("soft_nms: negative query_index");
    }
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw std::invalid_argument("soft_nms: score outside [0,1]");
    }
  }

  std::map<int, std::vector<Detection>> per_query;
  for (Detection& d : dets) {
    per_query[d.query_index].push_back(d);
  }

  std::vector<Detection> kept;
  for (auto& [query, pool] : per_query) {
    while (!pool.empty()) {
      size_t best = 0;
      for (size_t i = 1; i < pool.size(); ++i) {
        if (better(pool[i], pool[best])) best = i;
      }
      if (pool[best].score < cfg.score_floor) break;
      const Detection winner = pool[best];
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
      kept.push_back(winner);

      std::vector<Detection> survivors;
      survivors.reserve(pool.size());
      for (Detection& d : pool) {
        const double iou = temporal_iou(winner.segment, d.segment);
        if (cfg.mode == NmsMode::Hard) {
          if (iou > cfg.iou_threshold) continue;
        } else {
          d.score *= std::exp(-(iou * iou) / cfg.sigma);
        }
        survivors.push_back(d);
      }
      pool = std::move(survivors);
    }
  }

  std::sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.segment.start != b.segment.start) return a.segment.start < b.segment.start;
    return a.query_index < b.query_index;
  });
  return kept;
}

}  // namespace momentdet
