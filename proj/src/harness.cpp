#include "momentdet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "momentdet/checkpoint.hpp"

namespace momentdet {

using nlohmann::json;

void RunConfig::validate() const {
  model.validate();
  eval.validate();
  if (schedule.epochs < 1) throw std::invalid_argument("RunConfig: epochs must be >= 1");
  if (schedule.warmup_epochs < 0 || schedule.warmup_epochs > schedule.epochs) {
    throw std::invalid_argument("RunConfig: warmup_epochs must lie in [0, epochs]");
  }
  if (batch_size < 1) throw std::invalid_argument("RunConfig: batch_size must be >= 1");
  if (prompt_cap < 1) throw std::invalid_argument("RunConfig: prompt_cap must be >= 1");
  if (max_steps < 0 || eval_interval < 0) {
    throw std::invalid_argument("RunConfig: step counts must be nonnegative");
  }
  if (!(optim.learning_rate > 0.0)) throw std::invalid_argument("RunConfig: learning_rate must be positive");
  if (optim.weight_decay < 0.0) throw std::invalid_argument("RunConfig: weight_decay must be nonnegative");
  if (loss.lambda_reg < 0.0) throw std::invalid_argument("RunConfig: lambda_reg must be nonnegative");
  if (static_cast<int>(loss.range_boundaries.size()) != model.pyramid_levels) {
    throw std::invalid_argument("RunConfig: regression_range_boundaries needs one entry per pyramid level");
  }
  for (size_t i = 1; i < loss.range_boundaries.size(); ++i) {
    if (!(loss.range_boundaries[i] > loss.range_boundaries[i - 1])) {
      throw std::invalid_argument("RunConfig: regression_range_boundaries must increase");
    }
  }
}

namespace {

NmsMode nms_mode_from_string(const std::string& s) {
  if (s == "hard") return NmsMode::Hard;
  if (s == "gaussian") return NmsMode::Gaussian;
  throw std::invalid_argument("unknown nms_mode \"" + s + "\" (expected hard|gaussian)");
}

std::string to_string(NmsMode m) { return m == NmsMode::Hard ? "hard" : "gaussian"; }

class FlatConfigReader {
 public:
  explicit FlatConfigReader(const json& j) : j_(j) {
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument(std::string("config key \"") + key + "\": " + e.what());
    }
  }

  void get_string(const char* key, std::string& out) { get<std::string>(key, out); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (used_.count(it.key()) == 0) {
        throw std::invalid_argument("config: unknown key \"" + it.key() + "\"");
      }
    }
  }

 private:
  const json& j_;
  std::set<std::string> used_;
};

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig rc;
  FlatConfigReader r(j);

  r.get("d_input", rc.model.d_input);
  r.get("d_model", rc.model.d_model);
  r.get("heads", rc.model.heads);
  r.get("ffn_mult", rc.model.ffn_mult);
  r.get("fusion_encoder_layers", rc.model.fusion_encoder_layers);
  r.get("pyramid_levels", rc.model.pyramid_levels);
  r.get("fusion_decoder_layers", rc.model.fusion_decoder_layers);
  std::string pooling = to_string(rc.model.pooling);
  r.get_string("pooling", pooling);
  rc.model.pooling = pooling_from_string(pooling);
  r.get("fusion_encoder_enabled", rc.model.fusion_encoder_enabled);
  r.get("fusion_decoder_enabled", rc.model.fusion_decoder_enabled);
  r.get("temporal_mixing", rc.model.temporal_mixing);
  r.get("max_text_tokens", rc.model.max_text_tokens);
  r.get("max_query_tokens", rc.model.max_query_tokens);
  r.get("vocab_size", rc.model.vocab_size);

  r.get("lambda_reg", rc.loss.lambda_reg);
  r.get("focal_alpha", rc.loss.focal_alpha);
  r.get("focal_gamma", rc.loss.focal_gamma);
  r.get("center_sampling_radius", rc.loss.center_sampling_radius);
  r.get("regression_range_boundaries", rc.loss.range_boundaries);

  r.get("iou_thresholds", rc.eval.iou_thresholds);
  r.get("recall_thresholds", rc.eval.recall_thresholds);
  r.get("score_floor", rc.eval.score_floor);
  rc.eval.nms.score_floor = rc.eval.score_floor;
  r.get("top_k", rc.eval.top_k);
  std::string nms_mode = to_string(rc.eval.nms.mode);
  r.get_string("nms_mode", nms_mode);
  rc.eval.nms.mode = nms_mode_from_string(nms_mode);
  r.get("nms_iou_threshold", rc.eval.nms.iou_threshold);
  r.get("nms_sigma", rc.eval.nms.sigma);

  r.get("learning_rate", rc.optim.learning_rate);
  r.get("weight_decay", rc.optim.weight_decay);
  r.get("adam_beta1", rc.optim.beta1);
  r.get("adam_beta2", rc.optim.beta2);
  r.get("adam_eps", rc.optim.eps);

  r.get("epochs", rc.schedule.epochs);
  r.get("warmup_epochs", rc.schedule.warmup_epochs);

  r.get("batch_size", rc.batch_size);
  r.get("seed", rc.seed);
  r.get("prompt_cap", rc.prompt_cap);
  r.get_string("negative_pool_path", rc.negative_pool_path);
  r.get("max_steps", rc.max_steps);
  r.get("eval_interval", rc.eval_interval);
  r.get("target_map50", rc.target_map50);

  r.finish();
  rc.validate();
  return rc;
}

json run_config_to_json(const RunConfig& rc) {
  json j;
  j["d_input"] = rc.model.d_input;
  j["d_model"] = rc.model.d_model;
  j["heads"] = rc.model.heads;
  j["ffn_mult"] = rc.model.ffn_mult;
  j["fusion_encoder_layers"] = rc.model.fusion_encoder_layers;
  j["pyramid_levels"] = rc.model.pyramid_levels;
  j["fusion_decoder_layers"] = rc.model.fusion_decoder_layers;
  j["pooling"] = to_string(rc.model.pooling);
  j["fusion_encoder_enabled"] = rc.model.fusion_encoder_enabled;
  j["fusion_decoder_enabled"] = rc.model.fusion_decoder_enabled;
  j["temporal_mixing"] = rc.model.temporal_mixing;
  j["max_text_tokens"] = rc.model.max_text_tokens;
  j["max_query_tokens"] = rc.model.max_query_tokens;
  j["vocab_size"] = rc.model.vocab_size;

  j["lambda_reg"] = rc.loss.lambda_reg;
  j["focal_alpha"] = rc.loss.focal_alpha;
  j["focal_gamma"] = rc.loss.focal_gamma;
  j["center_sampling_radius"] = rc.loss.center_sampling_radius;
  j["regression_range_boundaries"] = rc.loss.range_boundaries;

  j["iou_thresholds"] = rc.eval.iou_thresholds;
  j["recall_thresholds"] = rc.eval.recall_thresholds;
  j["score_floor"] = rc.eval.score_floor;
  j["top_k"] = rc.eval.top_k;
  j["nms_mode"] = to_string(rc.eval.nms.mode);
  j["nms_iou_threshold"] = rc.eval.nms.iou_threshold;
  j["nms_sigma"] = rc.eval.nms.sigma;

  j["learning_rate"] = rc.optim.learning_rate;
  j["weight_decay"] = rc.optim.weight_decay;
  j["adam_beta1"] = rc.optim.beta1;
  j["adam_beta2"] = rc.optim.beta2;
  j["adam_eps"] = rc.optim.eps;

  j["epochs"] = rc.schedule.epochs;
  j["warmup_epochs"] = rc.schedule.warmup_epochs;

  j["batch_size"] = rc.batch_size;
  j["seed"] = rc.seed;
  j["prompt_cap"] = rc.prompt_cap;
  j["negative_pool_path"] = rc.negative_pool_path;
  j["max_steps"] = rc.max_steps;
  j["eval_interval"] = rc.eval_interval;
  j["target_map50"] = rc.target_map50;
  return j;
}

void AdamW::step(ParamStore& params, double lr) {
  ++t_;
  const double bias1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, var] : params.items()) {
    if (var->grad.size() == 0) var->ensure_grad();
    auto [it, inserted] = moments_.try_emplace(
        name, std::make_pair(Mat::Zero(var->rows(), var->cols()), Mat::Zero(var->rows(), var->cols())));
    Mat& m = it->second.first;
    Mat& v = it->second.second;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * var->grad;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * var->grad.cwiseProduct(var->grad);
    const Mat m_hat = m / bias1;
    const Mat v_hat = v / bias2;
    var->value -= lr * (m_hat.array() / (v_hat.array().sqrt() + cfg_.eps)).matrix();
    var->value -= lr * cfg_.weight_decay * var->value;
  }
}

double scheduled_lr(double peak, long step, long warmup_steps, long total_steps) {
  if (warmup_steps > 0 && step < warmup_steps) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  const long decay_span = std::max<long>(1, total_steps - warmup_steps);
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(decay_span));
  return 0.5 * peak * (1.0 + std::cos(3.14159265358979323846 * progress));
}

namespace {

std::vector<PositiveQuery> collect_positives(const VideoSample& sample) {
  std::vector<PositiveQuery> positives;
  for (const Annotation& a : sample.annotations) {
    auto it = std::find_if(positives.begin(), positives.end(),
                           [&](const PositiveQuery& p) { return p.query == a.query; });
    if (it == positives.end()) {
      positives.push_back(PositiveQuery{a.query, {a.segment}});
    } else {
      it->segments.push_back(a.segment);
    }
  }
  return positives;
}

std::vector<std::string> filtered_pool(const std::vector<std::string>& pool,
                                       const std::vector<PositiveQuery>& positives) {
  std::unordered_set<std::string> taken;
  for (const PositiveQuery& p : positives) taken.insert(p.query);
  std::vector<std::string> out;
  out.reserve(pool.size());
  for (const std::string& q : pool) {
    if (taken.insert(q).second) out.push_back(q);  // also drops duplicates inside the pool
  }
  return out;
}

std::vector<std::string> derive_categories(const std::vector<VideoSample>& data) {
  std::set<std::string> cats;
  for (const VideoSample& s : data) {
    for (const Annotation& a : s.annotations) {
      if (a.task == Task::Tad) cats.insert(a.query);
    }
  }
  return {cats.begin(), cats.end()};
}

json threshold_pairs_to_json(const std::vector<std::pair<double, double>>& pairs) {
  json out = json::array();
  for (const auto& [thr, value] : pairs) out.push_back({thr, value});
  return out;
}

}  // namespace

EvalOutputs evaluate_dataset(Model& model, const RunConfig& rc,
                             const std::vector<VideoSample>& data,
                             std::vector<std::string> categories, int chunk_max_queries) {
  Tokenizer tok(rc.model.vocab_size);
  const int max_queries = chunk_max_queries > 0 ? chunk_max_queries : rc.prompt_cap;

  EvalOutputs out;
  if (categories.empty()) categories = derive_categories(data);

  std::set<std::string> known_videos;
  for (const VideoSample& s : data) known_videos.insert(s.video_id);

  // Detection task: every video is scored against every category chunk.
  if (!categories.empty()) {
    const std::vector<StructuredPrompt> chunks =
        chunk_eval_prompts(categories, tok, max_queries, rc.model.max_text_tokens);
    std::vector<int> chunk_sizes;
    for (const StructuredPrompt& c : chunks) chunk_sizes.push_back(c.num_queries());

    std::map<std::string, int> cat_index;
    for (size_t i = 0; i < categories.size(); ++i) cat_index[categories[i]] = static_cast<int>(i);

    std::vector<VideoGroundTruth> gts;
    for (const VideoSample& sample : data) {
      if (sample.features.rows() == 0) {
        throw std::invalid_argument("evaluate: video " + sample.video_id + " has no features");
      }
      const Mat frames = sample.features.cast<double>();
      std::vector<std::vector<Detection>> per_chunk;
      for (const StructuredPrompt& chunk : chunks) {
        RawPrediction pred = model.forward(frames, sample.duration, chunk);
        per_chunk.push_back(decode_detections(pred.logits->value, pred.regressions->value,
                                              pred.rows, sample.duration, rc.eval));
      }
      for (const Detection& d : merge_chunked(per_chunk, chunk_sizes)) {
        out.tad_detections.push_back(VideoDetection{sample.video_id, d});
      }
      for (const Annotation& a : sample.annotations) {
        if (a.task != Task::Tad) continue;
        auto it = cat_index.find(a.query);
        if (it == cat_index.end()) continue;  // label outside the evaluated category list
        gts.push_back(VideoGroundTruth{sample.video_id, it->second, a.segment});
      }
    }
    out.tad_categories = categories;
    if (!gts.empty()) {
      const ApReport ap =
          mean_average_precision(out.tad_detections, gts, rc.eval.iou_thresholds, &known_videos);
      json tad;
      tad["per_threshold"] = threshold_pairs_to_json(ap.per_threshold);
      tad["average"] = ap.average;
      json per_class = json::object();
      for (const auto& [cls, value] : ap.per_class) {
        per_class[categories[static_cast<size_t>(cls)]] = value;
      }
      tad["per_class"] = per_class;
      tad["num_detections"] = out.tad_detections.size();
      out.report["tad"] = tad;
    }
  }

  // Retrieval task: per-video prompts from that video's event descriptions.
  std::vector<VideoGroundTruth> mr_gts;
  for (const VideoSample& sample : data) {
    std::vector<std::string> queries;
    std::vector<TemporalSegment> segments;
    for (const Annotation& a : sample.annotations) {
      if (a.task != Task::Mr) continue;
      queries.push_back(a.query);
      segments.push_back(a.segment);
    }
    if (queries.empty()) continue;
    const Mat frames = sample.features.cast<double>();
    const std::vector<StructuredPrompt> chunks =
        chunk_eval_prompts(queries, tok, max_queries, rc.model.max_text_tokens);
    std::vector<int> chunk_sizes;
    std::vector<std::vector<Detection>> per_chunk;
    for (const StructuredPrompt& chunk : chunks) {
      chunk_sizes.push_back(chunk.num_queries());
      RawPrediction pred = model.forward(frames, sample.duration, chunk);
      per_chunk.push_back(decode_detections(pred.logits->value, pred.regressions->value, pred.rows,
                                            sample.duration, rc.eval));
    }
    for (const Detection& d : merge_chunked(per_chunk, chunk_sizes)) {
      out.mr_detections.push_back(VideoDetection{sample.video_id, d});
    }
    for (size_t qi = 0; qi < queries.size(); ++qi) {
      mr_gts.push_back(VideoGroundTruth{sample.video_id, static_cast<int>(qi), segments[qi]});
      out.mr_pairs.emplace_back(sample.video_id, queries[qi]);
    }
  }
  if (!mr_gts.empty()) {
    const RecallReport recall = recall_at_1(out.mr_detections, mr_gts, rc.eval.recall_thresholds);
    json mr;
    mr["recall_at_1"] = threshold_pairs_to_json(recall.per_threshold);
    mr["num_pairs"] = recall.total_pairs;
    out.report["mr"] = mr;
  }

  out.report["config"] = run_config_to_json(rc);
  return out;
}

double validation_map50(Model& model, const RunConfig& rc, const std::vector<VideoSample>& data,
                        const std::vector<std::string>& categories) {
  RunConfig probe = rc;
  probe.eval.iou_thresholds = {0.5};
  const EvalOutputs outputs = evaluate_dataset(model, probe, data, categories);
  if (!outputs.report.contains("tad")) return 0.0;
  return outputs.report["tad"]["average"].get<double>();
}

TrainResult train(const RunConfig& rc, const std::vector<VideoSample>& data,
                  const std::vector<std::string>& negative_pool, const TrainOptions& options) {
  rc.validate();
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  for (const VideoSample& s : data) {
    if (s.features.rows() == 0) {
      throw std::invalid_argument("train: video " + s.video_id + " has no features");
    }
  }

  std::filesystem::create_directories(options.out_dir);
  TrainResult result;
  result.log_path = options.out_dir / "train_log.jsonl";
  std::ofstream log(result.log_path);
  if (!log) throw std::runtime_error("cannot write " + result.log_path.string());

  Tokenizer tok(rc.model.vocab_size);
  Model model(rc.model, rc.seed);
  AdamW optimizer(rc.optim);
  Rng order_rng(Rng::mix(rc.seed, "sample-order"));
  Rng prompt_rng(Rng::mix(rc.seed, "prompt-sampling"));

  const long n = static_cast<long>(data.size());
  const long steps_per_epoch = (n + rc.batch_size - 1) / rc.batch_size;
  long total_steps = steps_per_epoch * rc.schedule.epochs;
  if (rc.max_steps > 0) total_steps = std::min<long>(total_steps, rc.max_steps);
  const long warmup_steps = steps_per_epoch * rc.schedule.warmup_epochs;

  std::vector<std::string> eval_categories = options.eval_categories;
  if (eval_categories.empty()) eval_categories = derive_categories(data);

  const json config_echo = run_config_to_json(rc);
  const std::filesystem::path final_path = options.out_dir / "final.ckpt";
  const std::filesystem::path best_path = options.out_dir / "best.ckpt";

  long step = 0;
  bool stop = false;
  for (int epoch = 0; epoch < rc.schedule.epochs && !stop; ++epoch) {
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);

    double epoch_loss_sum = 0.0;
    long epoch_batches = 0;
    size_t cursor = 0;
    while (cursor < order.size() && !stop) {
      const size_t batch_end = std::min(order.size(), cursor + static_cast<size_t>(rc.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(batch_end - cursor);
      model.params().zero_grad();
      double batch_loss = 0.0;

      for (size_t bi = cursor; bi < batch_end; ++bi) {
        const VideoSample& sample = data[order[bi]];
        const std::vector<PositiveQuery> positives = collect_positives(sample);
        auto [prompt, labels] = sample_training_prompt(
            positives, filtered_pool(negative_pool, positives), rc.prompt_cap, prompt_rng, tok,
            rc.model.max_text_tokens);

        std::vector<GroundTruth> gts;
        for (int qi = 0; qi < prompt.num_queries(); ++qi) {
          if (!labels.positive[static_cast<size_t>(qi)]) continue;
          for (const TemporalSegment& seg : labels.segments[static_cast<size_t>(qi)]) {
            gts.push_back(GroundTruth{seg, qi});
          }
        }

        RawPrediction pred = model.forward(sample.features.cast<double>(), sample.duration, prompt);
        const TargetAssignment assignment =
            assign_targets(pred.rows, gts, prompt.num_queries(), rc.loss);
        ag::Var loss = total_loss(pred, assignment, rc.loss);
        const double value = loss->value(0, 0);
        if (!std::isfinite(value)) {
          log << json{{"type", "abort"}, {"step", step}, {"video", sample.video_id},
                      {"reason", "non-finite loss"}}
                     .dump()
              << '\n';
          throw DivergenceError("training diverged at step " + std::to_string(step) + " on video " +
                                sample.video_id + ": loss is non-finite");
        }
        batch_loss += value * inv_batch;
        ag::backward(ag::scale(loss, inv_batch));
      }

      const double lr = scheduled_lr(rc.optim.learning_rate, step, warmup_steps, total_steps);
      optimizer.step(model.params(), lr);
      ++step;
      epoch_loss_sum += batch_loss;
      ++epoch_batches;
      result.final_loss = batch_loss;

      log << json{{"type", "step"}, {"step", step}, {"epoch", epoch}, {"loss", batch_loss}, {"lr", lr}}
                 .dump()
          << '\n';

      if (rc.eval_interval > 0 && (step % rc.eval_interval == 0 || step >= total_steps)) {
        const double map50 = validation_map50(model, rc, data, eval_categories);
        log << json{{"type", "eval"}, {"step", step}, {"map50", map50}}.dump() << '\n';
        if (map50 > result.best_map50) {
          result.best_map50 = map50;
          save_checkpoint(best_path, config_echo, model.params());
          result.best_checkpoint = best_path;
        }
        if (rc.target_map50 > 0.0 && map50 >= rc.target_map50) {
          result.reached_target = true;
          log << json{{"type", "stop"}, {"step", step}, {"reason", "target_map50 reached"}}.dump()
              << '\n';
          stop = true;
        }
      }
      if (step >= total_steps) stop = true;
      cursor = batch_end;
    }
    log << json{{"type", "epoch"}, {"epoch", epoch},
                {"mean_loss", epoch_batches > 0 ? epoch_loss_sum / epoch_batches : 0.0}}
               .dump()
        << '\n';
  }

  save_checkpoint(final_path, config_echo, model.params());
  result.final_checkpoint = final_path;
  if (result.best_checkpoint.empty()) {
    result.best_checkpoint = final_path;
  }
  result.steps = static_cast<int>(step);
  return result;
}

std::vector<Detection> detect(Model& model, const RunConfig& rc, const Mat& features,
                              double duration, const std::vector<std::string>& queries) {
  Tokenizer tok(rc.model.vocab_size);
  const StructuredPrompt prompt = build_prompt(queries, tok, rc.model.max_text_tokens);
  RawPrediction pred = model.forward(features, duration, prompt);
  return decode_detections(pred.logits->value, pred.regressions->value, pred.rows, duration, rc.eval);
}

void write_detections_jsonl(std::ostream& out, const std::vector<VideoDetection>& dets,
                            const std::vector<std::string>& class_names) {
  for (const VideoDetection& d : dets) {
    json j;
    j["video_id"] = d.video_id;
    j["query_index"] = d.det.query_index;
    if (d.det.query_index >= 0 && d.det.query_index < static_cast<int>(class_names.size())) {
      j["query"] = class_names[static_cast<size_t>(d.det.query_index)];
    } else {
      j["query"] = "";
    }
    j["start"] = d.det.segment.start;
    j["end"] = d.det.segment.end;
    j["score"] = d.det.score;
    out << j.dump() << '\n';
  }
}

}  // namespace momentdet
