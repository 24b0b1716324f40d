#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "momentdet/data.hpp"
#include "momentdet/eval.hpp"
#include "momentdet/loss.hpp"
#include "momentdet/model.hpp"

namespace momentdet {

struct OptimConfig {
  double learning_rate = 1e-3;  // peak, reached at the end of warmup
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ScheduleConfig {
  int epochs = 10;
  int warmup_epochs = 5;  // linear ramp, then cosine decay
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  EvalConfig eval;
  OptimConfig optim;
  ScheduleConfig schedule;
  int batch_size = 4;
  uint64_t seed = 0;
  int prompt_cap = 35;  // queries per structured prompt
  std::string negative_pool_path;
  int max_steps = 0;          // optimizer-step cap; 0 = run all epochs
  int eval_interval = 0;      // steps between validation passes; 0 = off
  double target_map50 = 0.0;  // stop early at this validation mAP@0.5; 0 = off

  void validate() const;
};

/// Flat, typed key-value config document. Unknown keys are errors; every
/// field is echoed verbatim into checkpoints and reports.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& rc);

/// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
 public:
  explicit AdamW(OptimConfig cfg) : cfg_(cfg) {}
  void step(ParamStore& params, double lr);

 private:
  OptimConfig cfg_;
  std::map<std::string, std::pair<Mat, Mat>> moments_;
  long t_ = 0;
};

/// Linear warmup to the peak, then cosine decay to zero at total_steps.
double scheduled_lr(double peak, long step, long warmup_steps, long total_steps);

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  std::vector<std::string> eval_categories;  // validation categories; empty = derive from data
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log_path;
  double final_loss = 0.0;
  double best_map50 = -1.0;
  int steps = 0;
  bool reached_target = false;
};

/// Per-sample prompt construction -> forward -> target assignment -> loss ->
/// AdamW step, with JSONL step/epoch/eval records. Bit-reproducible given
/// (config, seed); aborts with DivergenceError when the loss goes non-finite.
TrainResult train(const RunConfig& rc, const std::vector<VideoSample>& data,
                  const std::vector<std::string>& negative_pool, const TrainOptions& options);

struct EvalOutputs {
  nlohmann::json report;
  std::vector<VideoDetection> tad_detections;
  std::vector<std::string> tad_categories;
  std::vector<VideoDetection> mr_detections;
  std::vector<std::pair<std::string, std::string>> mr_pairs;  // (video_id, query)
};

/// Batched-prompt evaluation: categories are chunked, each chunk is scored
/// independently, per-chunk detections are re-indexed and merged, then mAP
/// (detection-task labels) and Recall@1 (retrieval-task labels) are computed.
/// chunk_max_queries of 0 uses rc.prompt_cap.
EvalOutputs evaluate_dataset(Model& model, const RunConfig& rc,
                             const std::vector<VideoSample>& data,
                             std::vector<std::string> categories, int chunk_max_queries = 0);

/// One-shot open-world inference over arbitrary query strings.
std::vector<Detection> detect(Model& model, const RunConfig& rc, const Mat& features,
                              double duration, const std::vector<std::string>& queries);

void write_detections_jsonl(std::ostream& out, const std::vector<VideoDetection>& dets,
                            const std::vector<std::string>& class_names);

/// Convenience: mAP@0.5 of the detection task on `data` (used for validation
/// inside the training loop and by the overfit checks).
double validation_map50(Model& model, const RunConfig& rc, const std::vector<VideoSample>& data,
                        const std::vector<std::string>& categories);

}  // namespace momentdet
