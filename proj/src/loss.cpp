#include "momentdet/loss.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace momentdet {

TargetAssignment assign_targets(const std::vector<RowMeta>& rows,
                                const std::vector<GroundTruth>& gts, int num_queries,
                                const LossConfig& cfg) {
  if (num_queries <= 0) throw std::invalid_argument("assign_targets: num_queries must be positive");
  for (const GroundTruth& gt : gts) {
    if (gt.query_index < 0 || gt.query_index >= num_queries) {
      throw std::invalid_argument("assign_targets: query_index " + std::to_string(gt.query_index) +
                                  " outside the prompt's " + std::to_string(num_queries) + " queries");
    }
  }
  if (cfg.range_boundaries.empty()) {
    throw std::invalid_argument("assign_targets: no regression range boundaries");
  }

  const int n = static_cast<int>(rows.size());
  TargetAssignment out;
  out.cls_targets = Mat::Zero(n, num_queries);
  out.positive_mask.assign(static_cast<size_t>(n), 0);
  out.reg_targets.assign(static_cast<size_t>(n), {0.0, 0.0});

  const double inf = std::numeric_limits<double>::infinity();
  for (int r = 0; r < n; ++r) {
    const RowMeta& row = rows[static_cast<size_t>(r)];
    const size_t level = static_cast<size_t>(row.level);
    if (level >= cfg.range_boundaries.size()) {
      throw std::invalid_argument("assign_targets: row level exceeds the configured ranges");
    }
    const double lo = cfg.range_boundaries[level];
    const double hi = level + 1 < cfg.range_boundaries.size() ? cfg.range_boundaries[level + 1] : inf;

    int winner = -1;
    double winner_len = inf;
    for (size_t g = 0; g < gts.size(); ++g) {
      const TemporalSegment& seg = gts[g].segment;
      if (row.timestamp < seg.start || row.timestamp > seg.end) continue;
      if (std::abs(row.timestamp - seg.center()) > cfg.center_sampling_radius * row.stride) continue;
      const double d_start = (row.timestamp - seg.start) / row.stride;
      const double d_end = (seg.end - row.timestamp) / row.stride;
      const double reach = std::max(d_start, d_end);
      if (reach < lo || reach >= hi) continue;
      if (seg.length() < winner_len) {
        winner_len = seg.length();
        winner = static_cast<int>(g);
      }
    }
    if (winner >= 0) {
      const GroundTruth& gt = gts[static_cast<size_t>(winner)];
      out.cls_targets(r, gt.query_index) = 1.0;
      out.positive_mask[static_cast<size_t>(r)] = 1;
      out.reg_targets[static_cast<size_t>(r)] = {(row.timestamp - gt.segment.start) / row.stride,
                                                 (gt.segment.end - row.timestamp) / row.stride};
      ++out.positive_count;
    }
  }
  return out;
}

ag::Var focal_contrastive_loss(const ag::Var& logits, const Mat& cls_targets,
                               const LossConfig& cfg) {
  using namespace ag;
  if (logits->rows() != cls_targets.rows() || logits->cols() != cls_targets.cols()) {
    throw std::invalid_argument("focal_contrastive_loss: logits/targets shape mismatch");
  }
  if (!logits->value.allFinite()) {
    throw std::invalid_argument("focal_contrastive_loss: non-finite logits");
  }

  Var p = sigmoid(logits);
  Var one = constant(Mat::Ones(logits->rows(), logits->cols()));
  Var y = constant(cls_targets);
  Var not_y = constant((1.0 - cls_targets.array()).matrix());

  // -log p = softplus(-x), -log(1-p) = softplus(x)
  Var pos = cmul(cmul(y, pow_const(sub(one, p), cfg.focal_gamma)), softplus(neg(logits)));
  Var negt = cmul(cmul(not_y, pow_const(p, cfg.focal_gamma)), softplus(logits));
  return sum_all(add(scale(pos, cfg.focal_alpha), scale(negt, 1.0 - cfg.focal_alpha)));
}

ag::Var regression_loss(const ag::Var& regressions, const std::vector<RowMeta>& rows,
                        const TargetAssignment& assignment) {
  using namespace ag;
  if (regressions->rows() != static_cast<Eigen::Index>(rows.size()) || regressions->cols() != 2) {
    throw std::invalid_argument("regression_loss: expected rows x 2 regressions");
  }
  if (assignment.positive_mask.size() != rows.size()) {
    throw std::invalid_argument("regression_loss: assignment does not match rows");
  }

  std::vector<int> pos_idx;
  for (size_t r = 0; r < rows.size(); ++r) {
    if (assignment.positive_mask[r]) pos_idx.push_back(static_cast<int>(r));
  }
  if (pos_idx.empty()) return constant(Mat::Zero(1, 1));

  const int np = static_cast<int>(pos_idx.size());
  Mat ts(np, 1), stride(np, 1), gs(np, 1), ge(np, 1);
  for (int i = 0; i < np; ++i) {
    const RowMeta& row = rows[static_cast<size_t>(pos_idx[static_cast<size_t>(i)])];
    const auto& tgt = assignment.reg_targets[static_cast<size_t>(pos_idx[static_cast<size_t>(i)])];
    ts(i, 0) = row.timestamp;
    stride(i, 0) = row.stride;
    gs(i, 0) = row.timestamp - tgt[0] * row.stride;
    ge(i, 0) = row.timestamp + tgt[1] * row.stride;
  }

  Var r_pos = gather_rows(regressions, pos_idx);
  Var c_ts = constant(ts), c_stride = constant(stride);
  Var c_gs = constant(gs), c_ge = constant(ge);
  Var c_leng = constant((ge - gs).eval());
  Var c_gc = constant((0.5 * (gs + ge)).eval());

  Var ps = sub(c_ts, cmul(slice_cols(r_pos, 0, 1), c_stride));
  Var pe = add(c_ts, cmul(slice_cols(r_pos, 1, 1), c_stride));

  Var inter = relu(sub(cmin(pe, c_ge), cmax(ps, c_gs)));
  Var uni = sub(add(sub(pe, ps), c_leng), inter);
  Var iou = cdiv(inter, uni);
  Var rho2 = square(sub(scale(add(ps, pe), 0.5), c_gc));
  Var enclose = sub(cmax(pe, c_ge), cmin(ps, c_gs));
  Var penalty = cdiv(rho2, square(enclose));
  Var per_row = add(sub(constant(Mat::Ones(np, 1)), iou), penalty);
  return sum_all(per_row);
}

ag::Var total_loss(const RawPrediction& prediction, const TargetAssignment& assignment,
                   const LossConfig& cfg) {
  using namespace ag;
  if (prediction.logits->rows() != assignment.cls_targets.rows() ||
      prediction.logits->cols() != assignment.cls_targets.cols()) {
    throw std::invalid_argument("total_loss: prediction/assignment shapes disagree");
  }
  Var cls = focal_contrastive_loss(prediction.logits, assignment.cls_targets, cfg);
  Var reg = regression_loss(prediction.regressions, prediction.rows, assignment);
  Var combined = add(cls, scale(reg, cfg.lambda_reg));
  return scale(combined, 1.0 / std::max(assignment.positive_count, 1));
}

}  // namespace momentdet
