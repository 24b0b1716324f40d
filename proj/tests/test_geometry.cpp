#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "momentdet/geometry.hpp"
#include "momentdet/rng.hpp"

using namespace momentdet;

namespace {

// Independent formula oracles, written from the interval definitions alone.
double iou_oracle(double as, double ae, double bs, double be) {
  const double lo = as > bs ? as : bs;
  const double hi = ae < be ? ae : be;
  const double inter = hi > lo ? hi - lo : 0.0;
  return inter / ((ae - as) + (be - bs) - inter);
}

double diou_oracle(double as, double ae, double bs, double be) {
  const double ca = 0.5 * (as + ae);
  const double cb = 0.5 * (bs + be);
  const double enclose = std::max(ae, be) - std::min(as, bs);
  return 1.0 - iou_oracle(as, ae, bs, be) + ((ca - cb) * (ca - cb)) / (enclose * enclose);
}

TemporalSegment random_segment(Rng& rng) {
  const double start = rng.uniform(0.0, 90.0);
  return TemporalSegment(start, start + rng.uniform(0.1, 30.0));
}

// Straight transliteration of the suppression rule, quadratic and per query.
std::vector<Detection> nms_oracle(std::vector<Detection> dets, double iou_threshold,
                                  double score_floor) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.query_index != b.query_index) return a.query_index < b.query_index;
    if (a.score != b.score) return a.score > b.score;
    if (a.segment.start != b.segment.start) return a.segment.start < b.segment.start;
    return a.segment.end < b.segment.end;
  });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    if (d.score < score_floor) continue;
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.query_index == d.query_index && temporal_iou(k.segment, d.segment) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  std::sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.segment.start != b.segment.start) return a.segment.start < b.segment.start;
    return a.query_index < b.query_index;
  });
  return kept;
}

bool same_detections(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].query_index != b[i].query_index || a[i].score != b[i].score ||
        a[i].segment.start != b[i].segment.start || a[i].segment.end != b[i].segment.end) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("segment construction rejects degenerate intervals") {
  CHECK_THROWS_AS(TemporalSegment(2.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(TemporalSegment(3.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(TemporalSegment(0.0, std::numeric_limits<double>::infinity()),
                  std::invalid_argument);
  CHECK_NOTHROW(TemporalSegment(-1.0, 0.5));  // negative times are legal off-video
}

TEST_CASE("temporal_iou basics") {
  CHECK(temporal_iou({0, 2}, {0, 2}) == doctest::Approx(1.0));
  CHECK(temporal_iou({0, 1}, {2, 3}) == doctest::Approx(0.0));
  CHECK(temporal_iou({0, 2}, {1, 3}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("diou_loss basics") {
  CHECK(diou_loss({0, 2}, {0, 2}) == doctest::Approx(0.0));
  // centers 0.5 and 2.5, enclosure 3
  CHECK(diou_loss({0, 1}, {2, 3}) == doctest::Approx(1.0 + 4.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("iou and diou agree with independent oracles on random pairs") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const TemporalSegment a = random_segment(rng);
    const TemporalSegment b = random_segment(rng);
    CHECK(std::abs(temporal_iou(a, b) - iou_oracle(a.start, a.end, b.start, b.end)) <= 1e-9);
    CHECK(std::abs(diou_loss(a, b) - diou_oracle(a.start, a.end, b.start, b.end)) <= 1e-9);
    // symmetry and range
    CHECK(temporal_iou(a, b) == temporal_iou(b, a));
    CHECK(diou_loss(a, b) == diou_loss(b, a));
    CHECK(temporal_iou(a, b) >= 0.0);
    CHECK(temporal_iou(a, b) <= 1.0);
    CHECK(diou_loss(a, b) >= 0.0);
  }
}

TEST_CASE("iou equals one only for identical segments") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const TemporalSegment a = random_segment(rng);
    const TemporalSegment b = random_segment(rng);
    if (temporal_iou(a, b) == 1.0) {
      CHECK(a.start == b.start);
      CHECK(a.end == b.end);
    }
  }
  CHECK(temporal_iou({1.5, 4.25}, {1.5, 4.25}) == 1.0);
}

TEST_CASE("diou is monotone in center offset for disjoint segments") {
  // Fixed enclosure by construction: slide a unit segment inside [0, 10].
  double prev = -1.0;
  for (double off = 3.0; off <= 8.9; off += 0.5) {
    TemporalSegment pred(off, off + 1.0);
    TemporalSegment gt(0.0, 1.0);
    if (temporal_iou(pred, gt) == 0.0) {
      const double rho = pred.center() - gt.center();
      const double c = std::max(pred.end, gt.end) - std::min(pred.start, gt.start);
      const double expected = 1.0 + rho * rho / (c * c);
      CHECK(diou_loss(pred, gt) == doctest::Approx(expected));
      if (prev >= 0.0) CHECK(diou_loss(pred, gt) > prev - 1e-12);
      prev = diou_loss(pred, gt);
    }
  }
}

TEST_CASE("hard nms removes duplicates and keeps the best score") {
  NmsConfig cfg;
  cfg.iou_threshold = 0.5;
  std::vector<Detection> dets = {{TemporalSegment(0, 2), 0, 0.9}, {TemporalSegment(0, 2), 0, 0.8}};
  const auto kept = soft_nms(dets, cfg);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == doctest::Approx(0.9));
}

TEST_CASE("nms never suppresses across queries") {
  NmsConfig cfg;
  std::vector<Detection> dets = {{TemporalSegment(0, 2), 0, 0.9}, {TemporalSegment(0, 2), 1, 0.8}};
  CHECK(soft_nms(dets, cfg).size() == 2);
}

TEST_CASE("hard nms equals the brute-force oracle and is idempotent") {
  Rng rng(23);
  NmsConfig cfg;
  cfg.iou_threshold = 0.6;
  cfg.score_floor = 0.001;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    const int n = 5 + static_cast<int>(rng.uniform_int(6));
    for (int i = 0; i < n; ++i) {
      const double start = rng.uniform(0.0, 8.0);
      dets.push_back(Detection{TemporalSegment(start, start + rng.uniform(0.5, 4.0)),
                               static_cast<int>(rng.uniform_int(3)), rng.uniform()});
    }
    const auto ours = soft_nms(dets, cfg);
    const auto oracle = nms_oracle(dets, cfg.iou_threshold, cfg.score_floor);
    CHECK(same_detections(ours, oracle));

    // hard-mode output is a fixed point
    CHECK(same_detections(soft_nms(ours, cfg), ours));
    // and contains no same-query pair above the threshold
    for (size_t i = 0; i < ours.size(); ++i) {
      for (size_t j = i + 1; j < ours.size(); ++j) {
        if (ours[i].query_index == ours[j].query_index) {
          CHECK(temporal_iou(ours[i].segment, ours[j].segment) <= cfg.iou_threshold);
        }
      }
    }
  }
}

TEST_CASE("gaussian nms decays overlapping scores instead of dropping") {
  NmsConfig cfg;
  cfg.mode = NmsMode::Gaussian;
  cfg.sigma = 0.5;
  cfg.score_floor = 0.0;
  std::vector<Detection> dets = {{TemporalSegment(0, 2), 0, 0.9}, {TemporalSegment(0, 2), 0, 0.8}};
  const auto kept = soft_nms(dets, cfg);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == doctest::Approx(0.9));
  CHECK(kept[1].score == doctest::Approx(0.8 * std::exp(-1.0 / 0.5)));
}
