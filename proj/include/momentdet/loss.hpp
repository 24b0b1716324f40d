#pragma once

#include <array>
#include <vector>

#include "momentdet/autograd.hpp"
#include "momentdet/geometry.hpp"
#include "momentdet/model.hpp"

namespace momentdet {

/// One labeled segment bound to a prompt query.
struct GroundTruth {
  TemporalSegment segment;
  int query_index = 0;
};

struct LossConfig {
  double lambda_reg = 1.0;  // weight on the regression term
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double center_sampling_radius = 1.5;  // in strides
  // Level l admits a row when boundaries[l] <= max(d_start, d_end) <
  // boundaries[l+1], distances stride-normalized; the last range is open.
  std::vector<double> range_boundaries = {0.0, 4.0, 8.0, 16.0, 32.0};
};

/// Dense targets for one (prediction rows, ground truths) pair.
struct TargetAssignment {
  Mat cls_targets;                                 // T_ms x L_q, 0/1
  std::vector<char> positive_mask;                 // per row
  std::vector<std::array<double, 2>> reg_targets;  // stride-normalized, valid where positive
  int positive_count = 0;
};

/// Center-sampling assignment with per-level regression ranges; among
/// competing ground truths the shortest segment wins.
TargetAssignment assign_targets(const std::vector<RowMeta>& rows,
                                const std::vector<GroundTruth>& gts, int num_queries,
                                const LossConfig& cfg);

/// Sigmoid focal loss summed over every (row, query) logit; no normalization
/// here (the total divides by the positive count).
ag::Var focal_contrastive_loss(const ag::Var& logits, const Mat& cls_targets,
                               const LossConfig& cfg);

/// Sum of 1-D distance-IoU losses between predicted and target segments
/// decoded at each positive row's (timestamp, stride).
ag::Var regression_loss(const ag::Var& regressions, const std::vector<RowMeta>& rows,
                        const TargetAssignment& assignment);

/// (classification + lambda * regression) / max(positive_count, 1).
ag::Var total_loss(const RawPrediction& prediction, const TargetAssignment& assignment,
                   const LossConfig& cfg);

}  // namespace momentdet
