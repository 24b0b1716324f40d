#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "momentdet/checkpoint.hpp"
#include "momentdet/data.hpp"
#include "momentdet/harness.hpp"

namespace py = pybind11;
using namespace momentdet;

namespace {

RunConfig config_from_dict(const py::dict& d) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& item : d) {
    const std::string key = py::cast<std::string>(item.first);
    const py::handle v = item.second;
    if (py::isinstance<py::bool_>(v)) {
      j[key] = py::cast<bool>(v);
    } else if (py::isinstance<py::int_>(v)) {
      j[key] = py::cast<int64_t>(v);
    } else if (py::isinstance<py::float_>(v)) {
      j[key] = py::cast<double>(v);
    } else if (py::isinstance<py::str>(v)) {
      j[key] = py::cast<std::string>(v);
    } else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      j[key] = py::cast<std::vector<double>>(v);
    } else {
      throw std::invalid_argument("config key \"" + key + "\" has an unsupported value type");
    }
  }
  return run_config_from_json(j);
}

class PyModel {
 public:
  PyModel(const py::dict& config, uint64_t seed) : rc_(config_from_dict(config)) {
    rc_.seed = seed;
    model_ = std::make_unique<Model>(rc_.model, seed);
  }

  explicit PyModel(const std::string& checkpoint_path) {
    const CheckpointData ckpt = load_checkpoint(checkpoint_path);
    rc_ = run_config_from_json(ckpt.config);
    model_ = std::make_unique<Model>(rc_.model, rc_.seed);
    load_into(*model_, ckpt.params);
  }

  py::tuple forward(const Eigen::MatrixXd& features, double duration,
                    const std::vector<std::string>& queries) {
    Tokenizer tok(rc_.model.vocab_size);
    const StructuredPrompt prompt = build_prompt(queries, tok, rc_.model.max_text_tokens);
    RawPrediction pred = model_->forward(features, duration, prompt);
    py::list rows;
    for (const RowMeta& r : pred.rows) {
      rows.append(py::make_tuple(r.timestamp, r.stride, r.level));
    }
    return py::make_tuple(pred.logits->value, pred.regressions->value, rows);
  }

  std::vector<Detection> run_detect(const Eigen::MatrixXd& features, double duration,
                                    const std::vector<std::string>& queries) {
    return detect(*model_, rc_, features, duration, queries);
  }

  void save(const std::string& path) const {
    save_checkpoint(path, run_config_to_json(rc_), model_->params());
  }

  std::string config_json() const { return run_config_to_json(rc_).dump(); }

 private:
  RunConfig rc_;
  std::unique_ptr<Model> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Open-vocabulary temporal moment detection core";

  py::class_<TemporalSegment>(m, "TemporalSegment")
      .def(py::init<double, double>(), py::arg("start"), py::arg("end"))
      .def_readonly("start", &TemporalSegment::start)
      .def_readonly("end", &TemporalSegment::end)
      .def("length", &TemporalSegment::length)
      .def("center", &TemporalSegment::center)
      .def("__repr__", [](const TemporalSegment& s) {
        return "TemporalSegment(" + std::to_string(s.start) + ", " + std::to_string(s.end) + ")";
      });

  py::class_<Detection>(m, "Detection")
      .def(py::init([](const TemporalSegment& seg, int query_index, double score) {
             return Detection{seg, query_index, score};
           }),
           py::arg("segment"), py::arg("query_index"), py::arg("score"))
      .def_readonly("segment", &Detection::segment)
      .def_readonly("query_index", &Detection::query_index)
      .def_readonly("score", &Detection::score);

  m.def("temporal_iou", &temporal_iou, py::arg("a"), py::arg("b"));
  m.def("diou_loss", &diou_loss, py::arg("pred"), py::arg("gt"));
  m.def(
      "soft_nms",
      [](std::vector<Detection> dets, const std::string& mode, double iou_threshold, double sigma,
         double score_floor) {
        NmsConfig cfg;
        cfg.mode = mode == "gaussian" ? NmsMode::Gaussian : NmsMode::Hard;
        cfg.iou_threshold = iou_threshold;
        cfg.sigma = sigma;
        cfg.score_floor = score_floor;
        return soft_nms(std::move(dets), cfg);
      },
      py::arg("detections"), py::arg("mode") = "hard", py::arg("iou_threshold") = 0.6,
      py::arg("sigma") = 0.5, py::arg("score_floor") = 1e-3);

  py::class_<StructuredPrompt>(m, "StructuredPrompt")
      .def_readonly("queries", &StructuredPrompt::queries)
      .def_readonly("text", &StructuredPrompt::text)
      .def_readonly("token_ids", &StructuredPrompt::token_ids)
      .def_property_readonly("query_spans", [](const StructuredPrompt& p) {
        py::list spans;
        for (const QuerySpan& s : p.query_spans) spans.append(py::make_tuple(s.begin, s.end));
        return spans;
      });

  m.def(
      "build_prompt",
      [](const std::vector<std::string>& queries, int max_tokens) {
        Tokenizer tok;
        return build_prompt(queries, tok, max_tokens);
      },
      py::arg("queries"), py::arg("max_tokens") = 512);

  m.def(
      "chunk_eval_prompts",
      [](const std::vector<std::string>& categories, int max_queries, int max_tokens) {
        Tokenizer tok;
        return chunk_eval_prompts(categories, tok, max_queries, max_tokens);
      },
      py::arg("categories"), py::arg("max_queries") = 35, py::arg("max_tokens") = 512);

  m.def(
      "tokenize",
      [](const std::string& text) {
        Tokenizer tok;
        py::list out;
        for (const Token& t : tok.encode(text)) out.append(py::make_tuple(t.id, t.begin, t.end));
        return out;
      },
      py::arg("text"));

  py::class_<MRCorpusRecord>(m, "MRCorpusRecord")
      .def(py::init([](const std::string& video_id, double start, double end,
                       const std::string& caption, double similarity) {
             return MRCorpusRecord{video_id, TemporalSegment(start, end), caption, similarity};
           }),
           py::arg("video_id"), py::arg("start"), py::arg("end"), py::arg("caption"),
           py::arg("similarity"))
      .def_readonly("video_id", &MRCorpusRecord::video_id)
      .def_readonly("caption", &MRCorpusRecord::caption)
      .def_readonly("similarity", &MRCorpusRecord::similarity);

  m.def(
      "filter_mr_corpus",
      [](const std::vector<MRCorpusRecord>& records, double sim_threshold,
         const std::vector<std::string>& keywords) {
        FilterStats stats;
        auto kept = filter_mr_corpus(records, sim_threshold, keywords, &stats);
        py::dict s;
        s["input"] = stats.input;
        s["kept"] = stats.kept;
        s["dropped_low_similarity"] = stats.dropped_low_similarity;
        s["dropped_no_keyword"] = stats.dropped_no_keyword;
        return py::make_tuple(kept, s);
      },
      py::arg("records"), py::arg("sim_threshold") = 0.4, py::arg("keywords"));

  py::class_<VideoSample>(m, "VideoSample")
      .def_readonly("video_id", &VideoSample::video_id)
      .def_readonly("duration", &VideoSample::duration)
      .def_property_readonly("features", [](const VideoSample& s) { return s.features; })
      .def_property_readonly("annotations", [](const VideoSample& s) {
        py::list out;
        for (const Annotation& a : s.annotations) {
          py::dict d;
          d["start"] = a.segment.start;
          d["end"] = a.segment.end;
          d["query"] = a.query;
          d["task"] = to_string(a.task);
          out.append(d);
        }
        return out;
      });

  m.def(
      "synth_dataset",
      [](int num_videos, const std::vector<std::string>& vocab, double noise, double duration_min,
         double duration_max, int feature_dim, uint64_t seed) {
        SynthSpec spec;
        spec.num_videos = num_videos;
        spec.vocab = vocab;
        spec.noise = noise;
        spec.duration_min = duration_min;
        spec.duration_max = duration_max;
        spec.feature_dim = feature_dim;
        return synth_dataset(spec, seed);
      },
      py::arg("num_videos"), py::arg("vocab"), py::arg("noise") = 0.5,
      py::arg("duration_min") = 48.0, py::arg("duration_max") = 96.0, py::arg("feature_dim") = 16,
      py::arg("seed") = 0);

  m.def(
      "mean_average_precision",
      [](const std::vector<std::tuple<std::string, int, double, double, double>>& dets,
         const std::vector<std::tuple<std::string, int, double, double>>& gts,
         const std::vector<double>& thresholds) {
        std::vector<VideoDetection> vdets;
        for (const auto& [vid, cls, start, end, score] : dets) {
          vdets.push_back(VideoDetection{vid, Detection{TemporalSegment(start, end), cls, score}});
        }
        std::vector<VideoGroundTruth> vgts;
        for (const auto& [vid, cls, start, end] : gts) {
          vgts.push_back(VideoGroundTruth{vid, cls, TemporalSegment(start, end)});
        }
        const ApReport report = mean_average_precision(vdets, vgts, thresholds);
        py::dict out;
        py::dict per_threshold;
        for (const auto& [thr, v] : report.per_threshold) {
          per_threshold[py::float_(thr)] = v;
        }
        out["per_threshold"] = per_threshold;
        out["average"] = report.average;
        py::dict per_class;
        for (const auto& [cls, v] : report.per_class) per_class[py::int_(cls)] = v;
        out["per_class"] = per_class;
        return out;
      },
      py::arg("detections"), py::arg("ground_truths"), py::arg("thresholds"));

  m.def(
      "recall_at_1",
      [](const std::vector<std::tuple<std::string, int, double, double, double>>& dets,
         const std::vector<std::tuple<std::string, int, double, double>>& gts,
         const std::vector<double>& thresholds) {
        std::vector<VideoDetection> vdets;
        for (const auto& [vid, cls, start, end, score] : dets) {
          vdets.push_back(VideoDetection{vid, Detection{TemporalSegment(start, end), cls, score}});
        }
        std::vector<VideoGroundTruth> vgts;
        for (const auto& [vid, cls, start, end] : gts) {
          vgts.push_back(VideoGroundTruth{vid, cls, TemporalSegment(start, end)});
        }
        const RecallReport report = recall_at_1(vdets, vgts, thresholds);
        py::dict out;
        for (const auto& [thr, v] : report.per_threshold) out[py::float_(thr)] = v;
        return out;
      },
      py::arg("detections"), py::arg("ground_truths"), py::arg("thresholds"));

  py::class_<PyModel>(m, "Model")
      .def(py::init<const py::dict&, uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return std::make_unique<PyModel>(path); })
      .def("forward", &PyModel::forward, py::arg("features"), py::arg("duration"),
           py::arg("queries"))
      .def("detect", &PyModel::run_detect, py::arg("features"), py::arg("duration"),
           py::arg("queries"))
      .def("save", &PyModel::save, py::arg("path"))
      .def("config_json", &PyModel::config_json);
}
