// Command-line front end: train / evaluate / detect / build-prompts /
// filter-mr-data / synth-data.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "momentdet/checkpoint.hpp"
#include "momentdet/data.hpp"
#include "momentdet/harness.hpp"

using namespace momentdet;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string buf;
  while (std::getline(in, buf)) {
    while (!buf.empty() && (buf.back() == '\r' || buf.back() == '\n')) buf.pop_back();
    if (!buf.empty()) lines.push_back(buf);
  }
  return lines;
}

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<Model> model;
};

LoadedModel load_model(const std::string& checkpoint_path) {
  const CheckpointData ckpt = load_checkpoint(checkpoint_path);
  LoadedModel out;
  out.config = run_config_from_json(ckpt.config);
  out.model = std::make_unique<Model>(out.config.model, out.config.seed);
  load_into(*out.model, ckpt.params);
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Open-vocabulary temporal moment detection over frame features"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model on an annotation corpus");
  std::string train_config, train_data, train_out, train_negatives;
  train_cmd->add_option("--config", train_config, "run config JSON")->required();
  train_cmd->add_option("--data", train_data, "training annotations JSONL")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--negatives", train_negatives,
                        "negative query pool file (overrides negative_pool_path)");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_categories, eval_report, eval_detections;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data, "annotations JSONL")->required();
  eval_cmd->add_option("--categories", eval_categories, "newline-delimited category file");
  eval_cmd->add_option("--report", eval_report, "metrics report JSON output")->required();
  eval_cmd->add_option("--detections", eval_detections, "detections JSONL output");

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "Detect segments for ad-hoc queries");
  std::string det_ckpt, det_features;
  double det_duration = 0.0;
  std::vector<std::string> det_queries;
  detect_cmd->add_option("--checkpoint", det_ckpt)->required();
  detect_cmd->add_option("--features", det_features, "binary feature file")->required();
  detect_cmd->add_option("--duration", det_duration, "video duration in seconds")->required();
  detect_cmd->add_option("--query", det_queries, "query text (repeatable)")->required();

  // build-prompts
  auto* prompts_cmd = app.add_subcommand("build-prompts", "Chunk categories into prompts");
  std::string prompts_categories, prompts_out;
  int prompts_max_queries = 35, prompts_max_tokens = 512;
  prompts_cmd->add_option("--categories", prompts_categories)->required();
  prompts_cmd->add_option("--out", prompts_out, "prompts JSONL output")->required();
  prompts_cmd->add_option("--max-queries", prompts_max_queries);
  prompts_cmd->add_option("--max-tokens", prompts_max_tokens);

  // filter-mr-data
  auto* filter_cmd = app.add_subcommand("filter-mr-data", "Filter a retrieval caption corpus");
  std::string filter_in, filter_out, filter_keywords;
  double filter_sim = 0.4;
  filter_cmd->add_option("--input", filter_in)->required();
  filter_cmd->add_option("--output", filter_out)->required();
  filter_cmd->add_option("--sim-threshold", filter_sim, "similarity floor (default 0.4)");
  filter_cmd->add_option("--keywords-file", filter_keywords)->required();

  // synth-data
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate a synthetic corpus");
  std::string synth_spec, synth_out;
  uint64_t synth_seed = 0;
  synth_cmd->add_option("--spec", synth_spec, "generator spec JSON")->required();
  synth_cmd->add_option("--seed", synth_seed)->required();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (*train_cmd) {
    RunConfig rc = run_config_from_json(read_json_file(train_config));
    const std::vector<VideoSample> data = load_annotations(train_data);
    std::vector<std::string> pool;
    const std::string pool_path = !train_negatives.empty() ? train_negatives : rc.negative_pool_path;
    if (!pool_path.empty()) pool = read_lines(pool_path);
    TrainOptions options;
    options.out_dir = train_out;
    const TrainResult result = train(rc, data, pool, options);
    std::cout << "trained " << result.steps << " steps, final loss " << result.final_loss
              << ", checkpoint " << result.final_checkpoint.string() << "\n";
    if (result.best_map50 >= 0.0) {
      std::cout << "best validation mAP@0.5 " << result.best_map50 << " ("
                << result.best_checkpoint.string() << ")\n";
    }
    return 0;
  }

  if (*eval_cmd) {
    LoadedModel lm = load_model(eval_ckpt);
    const std::vector<VideoSample> data = load_annotations(eval_data);
    std::vector<std::string> categories;
    if (!eval_categories.empty()) categories = read_lines(eval_categories);
    EvalOutputs outputs = evaluate_dataset(*lm.model, lm.config, data, categories);

    if (outputs.report.contains("tad")) {
      std::cout << "threshold  AP\n";
      for (const auto& pair : outputs.report["tad"]["per_threshold"]) {
        std::cout << "  " << pair[0].get<double>() << "     " << pair[1].get<double>() << "\n";
      }
      std::cout << "average mAP " << outputs.report["tad"]["average"].get<double>() << "\n";
    }
    if (outputs.report.contains("mr")) {
      for (const auto& pair : outputs.report["mr"]["recall_at_1"]) {
        std::cout << "recall@1 tIoU " << pair[0].get<double>() << ": " << pair[1].get<double>()
                  << "\n";
      }
    }
    std::ofstream report(eval_report);
    if (!report) throw std::runtime_error("cannot write " + eval_report);
    report << outputs.report.dump(2) << "\n";
    if (!eval_detections.empty()) {
      std::ofstream dets(eval_detections);
      if (!dets) throw std::runtime_error("cannot write " + eval_detections);
      write_detections_jsonl(dets, outputs.tad_detections, outputs.tad_categories);
    }
    return 0;
  }

  if (*detect_cmd) {
    LoadedModel lm = load_model(det_ckpt);
    const Eigen::MatrixXf features = load_features(det_features);
    const std::vector<Detection> dets =
        detect(*lm.model, lm.config, features.cast<double>(), det_duration, det_queries);
    std::vector<VideoDetection> rows;
    for (const Detection& d : dets) rows.push_back(VideoDetection{det_features, d});
    write_detections_jsonl(std::cout, rows, det_queries);
    return 0;
  }

  if (*prompts_cmd) {
    Tokenizer tokenizer;
    const std::vector<std::string> categories = read_lines(prompts_categories);
    const std::vector<StructuredPrompt> chunks =
        chunk_eval_prompts(categories, tokenizer, prompts_max_queries, prompts_max_tokens);
    std::ofstream out(prompts_out);
    if (!out) throw std::runtime_error("cannot write " + prompts_out);
    for (size_t i = 0; i < chunks.size(); ++i) {
      out << json{{"chunk_index", i}, {"queries", chunks[i].queries}, {"text", chunks[i].text}}.dump()
          << '\n';
    }
    std::cout << "wrote " << chunks.size() << " prompt chunks\n";
    return 0;
  }

  if (*filter_cmd) {
    const std::vector<MRCorpusRecord> records = load_mr_records(filter_in);
    std::vector<std::string> keywords = read_lines(filter_keywords);
    FilterStats stats;
    const std::vector<MRCorpusRecord> kept = filter_mr_corpus(records, filter_sim, keywords, &stats);
    save_mr_records(kept, filter_out);
    std::cout << "input records:       " << stats.input << "\n"
              << "kept:                " << stats.kept << "\n"
              << "dropped (similarity):" << stats.dropped_low_similarity << "\n"
              << "dropped (keywords):  " << stats.dropped_no_keyword << "\n";
    return 0;
  }

  if (*synth_cmd) {
    const json j = read_json_file(synth_spec);
    SynthSpec spec;
    if (j.contains("num_videos")) spec.num_videos = j.at("num_videos").get<int>();
    if (j.contains("duration_min")) spec.duration_min = j.at("duration_min").get<double>();
    if (j.contains("duration_max")) spec.duration_max = j.at("duration_max").get<double>();
    if (j.contains("vocab")) spec.vocab = j.at("vocab").get<std::vector<std::string>>();
    if (j.contains("motifs_per_query")) spec.motifs_per_query = j.at("motifs_per_query").get<int>();
    if (j.contains("noise")) spec.noise = j.at("noise").get<double>();
    if (j.contains("feature_dim")) spec.feature_dim = j.at("feature_dim").get<int>();
    if (j.contains("feature_rate")) spec.feature_rate = j.at("feature_rate").get<double>();
    if (j.contains("min_segments")) spec.min_segments = j.at("min_segments").get<int>();
    if (j.contains("max_segments")) spec.max_segments = j.at("max_segments").get<int>();
    if (j.contains("segment_min_len")) spec.segment_min_len = j.at("segment_min_len").get<double>();
    if (j.contains("segment_max_len")) spec.segment_max_len = j.at("segment_max_len").get<double>();
    if (j.contains("mr_fraction")) spec.mr_fraction = j.at("mr_fraction").get<double>();

    std::vector<VideoSample> samples = synth_dataset(spec, synth_seed);
    const std::filesystem::path out_dir(synth_out);
    std::filesystem::create_directories(out_dir / "features");
    for (VideoSample& s : samples) {
      s.features_path = "features/" + s.video_id + ".bin";
      save_features(s.features, out_dir / s.features_path);
    }
    save_annotations(samples, out_dir / "annotations.jsonl");
    std::ofstream vocab_out(out_dir / "vocab.txt");
    for (const std::string& v : spec.vocab) vocab_out << v << '\n';
    std::cout << "wrote " << samples.size() << " videos to " << out_dir.string() << "\n";
    return 0;
  }

  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
