#include "momentdet/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace momentdet {

using nlohmann::json;

Task task_from_string(const std::string& s) {
  if (s == "tad") return Task::Tad;
  if (s == "mr") return Task::Mr;
  throw std::invalid_argument("unknown task \"" + s + "\" (expected tad|mr)");
}

std::string to_string(Task t) { return t == Task::Tad ? "tad" : "mr"; }

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

// Whole-word, case-insensitive containment; keywords may span several words.
bool contains_word(const std::string& caption_lower, const std::string& keyword) {
  size_t pos = caption_lower.find(keyword);
  while (pos != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(static_cast<unsigned char>(caption_lower[pos - 1]));
    const size_t end = pos + keyword.size();
    const bool right_ok =
        end >= caption_lower.size() || !is_word_char(static_cast<unsigned char>(caption_lower[end]));
    if (left_ok && right_ok) return true;
    pos = caption_lower.find(keyword, pos + 1);
  }
  return false;
}

}  // namespace

std::vector<MRCorpusRecord> filter_mr_corpus(const std::vector<MRCorpusRecord>& records,
                                             double sim_threshold,
                                             const std::vector<std::string>& keywords,
                                             FilterStats* stats) {
  if (keywords.empty()) throw std::invalid_argument("filter_mr_corpus: keyword list is empty");
  for (const std::string& k : keywords) {
    if (k.empty()) throw std::invalid_argument("filter_mr_corpus: empty keyword");
    if (k != lower(k)) {
      throw std::invalid_argument("filter_mr_corpus: keywords must be lowercase, got \"" + k + "\"");
    }
  }

  FilterStats local;
  local.input = records.size();
  std::vector<MRCorpusRecord> kept;
  kept.reserve(records.size());
  for (const MRCorpusRecord& rec : records) {
    if (!(rec.similarity >= sim_threshold)) {
      ++local.dropped_low_similarity;
      continue;
    }
    const std::string caption = lower(rec.caption);
    bool hit = false;
    for (const std::string& k : keywords) {
      if (contains_word(caption, k)) {
        hit = true;
        break;
      }
    }
    if (!hit) {
      ++local.dropped_no_keyword;
      continue;
    }
    kept.push_back(rec);
  }
  local.kept = kept.size();
  if (stats != nullptr) *stats = local;
  return kept;
}

void SynthSpec::validate() const {
  if (num_videos <= 0) throw std::invalid_argument("SynthSpec: num_videos must be positive");
  if (!(duration_min > 0.0) || duration_max < duration_min) {
    throw std::invalid_argument("SynthSpec: degenerate duration range");
  }
  if (vocab.empty()) throw std::invalid_argument("SynthSpec: vocabulary is empty");
  if (motifs_per_query <= 0) throw std::invalid_argument("SynthSpec: motifs_per_query must be positive");
  if (noise < 0.0) throw std::invalid_argument("SynthSpec: noise must be nonnegative");
  if (feature_dim <= 0) throw std::invalid_argument("SynthSpec: feature_dim must be positive");
  if (!(feature_rate > 0.0)) throw std::invalid_argument("SynthSpec: feature_rate must be positive");
  if (min_segments < 0 || max_segments < min_segments) {
    throw std::invalid_argument("SynthSpec: bad segment count range");
  }
  if (!(segment_min_len > 0.0) || segment_max_len < segment_min_len) {
    throw std::invalid_argument("SynthSpec: degenerate segment length range");
  }
  if (segment_max_len >= duration_min) {
    throw std::invalid_argument("SynthSpec: segments must be shorter than the shortest video");
  }
  if (mr_fraction < 0.0 || mr_fraction > 1.0) {
    throw std::invalid_argument("SynthSpec: mr_fraction must be in [0,1]");
  }
}

std::vector<VideoSample> synth_dataset(const SynthSpec& spec, uint64_t seed) {
  spec.validate();

  // Motif vectors are derived from the seed only, so every video agrees on them.
  Rng motif_rng(Rng::mix(seed, "motifs"));
  const int q_count = static_cast<int>(spec.vocab.size());
  std::vector<std::vector<Eigen::VectorXf>> motifs(static_cast<size_t>(q_count));
  for (int q = 0; q < q_count; ++q) {
    for (int m = 0; m < spec.motifs_per_query; ++m) {
      Eigen::VectorXf v(spec.feature_dim);
      for (int i = 0; i < spec.feature_dim; ++i) v(i) = static_cast<float>(motif_rng.normal());
      motifs[static_cast<size_t>(q)].push_back(std::move(v));
    }
  }
  Eigen::VectorXf null_motif(spec.feature_dim);
  for (int i = 0; i < spec.feature_dim; ++i) null_motif(i) = static_cast<float>(motif_rng.normal());

  std::vector<VideoSample> out;
  out.reserve(static_cast<size_t>(spec.num_videos));
  for (int vi = 0; vi < spec.num_videos; ++vi) {
    Rng rng(Rng::mix(Rng::mix(seed, "video"), static_cast<uint64_t>(vi)));
    VideoSample sample;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%04d", vi);
    sample.video_id = buf;
    sample.duration = rng.uniform(spec.duration_min, spec.duration_max);
    const int frames = std::max(1, static_cast<int>(std::llround(sample.duration * spec.feature_rate)));

    const bool is_mr = rng.uniform() < spec.mr_fraction;
    const int want =
        spec.min_segments + static_cast<int>(rng.uniform_int(
                                static_cast<uint64_t>(spec.max_segments - spec.min_segments + 1)));

    struct Planted {
      TemporalSegment seg;
      int query = 0;
      int motif = 0;
    };
    std::vector<Planted> planted;
    std::vector<int> used_queries;
    for (int s = 0; s < want; ++s) {
      bool placed = false;
      for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        const double len = rng.uniform(spec.segment_min_len, spec.segment_max_len);
        const double start = rng.uniform(0.0, sample.duration - len);
        const TemporalSegment cand(start, start + len);
        bool overlaps = false;
        for (const Planted& p : planted) {
          if (cand.start < p.seg.end + 0.5 && p.seg.start < cand.end + 0.5) {
            overlaps = true;
            break;
          }
        }
        if (overlaps) continue;
        int query = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(q_count)));
        if (is_mr) {
          // Retrieval protocol wants one ground truth per (video, query) pair.
          if (static_cast<int>(used_queries.size()) >= q_count) break;
          while (std::count(used_queries.begin(), used_queries.end(), query) > 0) {
            query = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(q_count)));
          }
        }
        planted.push_back(Planted{cand, query, static_cast<int>(rng.uniform_int(
                                                   static_cast<uint64_t>(spec.motifs_per_query)))});
        used_queries.push_back(query);
        placed = true;
      }
    }
    std::sort(planted.begin(), planted.end(),
              [](const Planted& a, const Planted& b) { return a.seg.start < b.seg.start; });

    sample.features.resize(frames, spec.feature_dim);
    const double dt = sample.duration / frames;
    for (int f = 0; f < frames; ++f) {
      const double ts = (f + 0.5) * dt;
      const Eigen::VectorXf* base = &null_motif;
      for (const Planted& p : planted) {
        if (ts >= p.seg.start && ts < p.seg.end) {
          base = &motifs[static_cast<size_t>(p.query)][static_cast<size_t>(p.motif)];
          break;
        }
      }
      for (int c = 0; c < spec.feature_dim; ++c) {
        sample.features(f, c) =
            (*base)(c) + static_cast<float>(spec.noise * rng.normal());
      }
    }

    for (const Planted& p : planted) {
      sample.annotations.push_back(Annotation{
          p.seg, spec.vocab[static_cast<size_t>(p.query)], is_mr ? Task::Mr : Task::Tad});
    }
    out.push_back(std::move(sample));
  }
  return out;
}

namespace {

[[noreturn]] void record_error(const std::filesystem::path& path, size_t line,
                               const std::string& field, const std::string& what) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + field + ": " + what);
}

template <class T>
T require(const json& j, const char* field, const std::filesystem::path& path, size_t line) {
  if (!j.contains(field)) record_error(path, line, field, "missing field");
  try {
    return j.at(field).get<T>();
  } catch (const json::exception& e) {
    record_error(path, line, field, e.what());
  }
}

}  // namespace

std::vector<VideoSample> load_annotations(const std::filesystem::path& path, bool load_feature_files) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotation file " + path.string());

  std::vector<VideoSample> out;
  std::string buf;
  size_t line = 0;
  while (std::getline(in, buf)) {
    ++line;
    if (buf.empty()) continue;
    json j;
    try {
      j = json::parse(buf);
    } catch (const json::exception& e) {
      record_error(path, line, "<line>", e.what());
    }
    const int version = require<int>(j, "schema_version", path, line);
    if (version != 1) record_error(path, line, "schema_version", "unsupported version");

    VideoSample sample;
    sample.video_id = require<std::string>(j, "video_id", path, line);
    if (sample.video_id.empty()) record_error(path, line, "video_id", "must be nonempty");
    sample.duration = require<double>(j, "duration", path, line);
    if (!(sample.duration > 0.0) || !std::isfinite(sample.duration)) {
      record_error(path, line, "duration", "must be positive and finite");
    }
    if (j.contains("features_path")) {
      sample.features_path = require<std::string>(j, "features_path", path, line);
    }
    if (!j.contains("annotations")) record_error(path, line, "annotations", "missing field");
    if (!j.at("annotations").is_array()) record_error(path, line, "annotations", "must be an array");
    size_t ai = 0;
    for (const json& ja : j.at("annotations")) {
      const std::string field = "annotations[" + std::to_string(ai) + "]";
      const double start = require<double>(ja, "start", path, line);
      const double end = require<double>(ja, "end", path, line);
      const std::string query = require<std::string>(ja, "query", path, line);
      const std::string task = require<std::string>(ja, "task", path, line);
      if (!(start < end)) record_error(path, line, field + ".end", "segment start must be < end");
      if (start < 0.0) record_error(path, line, field + ".start", "segment start must be >= 0");
      if (end > sample.duration) {
        record_error(path, line, field + ".end",
                     "segment end " + std::to_string(end) + " exceeds duration " +
                         std::to_string(sample.duration) + " of video " + sample.video_id);
      }
      if (query.empty()) record_error(path, line, field + ".query", "must be nonempty");
      Annotation ann;
      ann.segment = TemporalSegment(start, end);
      ann.query = query;
      try {
        ann.task = task_from_string(task);
      } catch (const std::invalid_argument& e) {
        record_error(path, line, field + ".task", e.what());
      }
      sample.annotations.push_back(std::move(ann));
      ++ai;
    }
    if (load_feature_files && !sample.features_path.empty()) {
      const std::filesystem::path fp = path.parent_path() / sample.features_path;
      try {
        sample.features = load_features(fp);
      } catch (const std::exception& e) {
        record_error(path, line, "features_path", e.what());
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

void save_annotations(const std::vector<VideoSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write annotation file " + path.string());
  for (const VideoSample& sample : samples) {
    json j;
    j["schema_version"] = 1;
    j["video_id"] = sample.video_id;
    j["duration"] = sample.duration;
    json anns = json::array();
    for (const Annotation& a : sample.annotations) {
      anns.push_back({{"start", a.segment.start},
                      {"end", a.segment.end},
                      {"query", a.query},
                      {"task", to_string(a.task)}});
    }
    j["annotations"] = std::move(anns);
    if (!sample.features_path.empty()) j["features_path"] = sample.features_path;
    out << j.dump() << '\n';
  }
}

Eigen::MatrixXf load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature file " + path.string());
  uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in) throw std::runtime_error("feature file " + path.string() + " is truncated");
  if (rows == 0 || cols == 0 || static_cast<uint64_t>(rows) * cols > (1ULL << 30)) {
    throw std::runtime_error("feature file " + path.string() + " has an implausible header");
  }
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(float)) * rows * cols);
  if (!in) throw std::runtime_error("feature file " + path.string() + " is truncated");
  return m;
}

void save_features(const Eigen::MatrixXf& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write feature file " + path.string());
  const uint32_t rows = static_cast<uint32_t>(features.rows());
  const uint32_t cols = static_cast<uint32_t>(features.cols());
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = features;
  out.write(reinterpret_cast<const char*>(rm.data()),
            static_cast<std::streamsize>(sizeof(float)) * rows * cols);
}

std::vector<MRCorpusRecord> load_mr_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open record file " + path.string());
  std::vector<MRCorpusRecord> out;
  std::string buf;
  size_t line = 0;
  while (std::getline(in, buf)) {
    ++line;
    if (buf.empty()) continue;
    json j;
    try {
      j = json::parse(buf);
    } catch (const json::exception& e) {
      record_error(path, line, "<line>", e.what());
    }
    MRCorpusRecord rec;
    rec.video_id = require<std::string>(j, "video_id", path, line);
    const double start = require<double>(j, "start", path, line);
    const double end = require<double>(j, "end", path, line);
    if (!(start < end)) record_error(path, line, "end", "segment start must be < end");
    rec.segment = TemporalSegment(start, end);
    rec.caption = require<std::string>(j, "caption", path, line);
    rec.similarity = require<double>(j, "similarity", path, line);
    if (!(rec.similarity >= 0.0 && rec.similarity <= 1.0)) {
      record_error(path, line, "similarity", "must be in [0,1]");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void save_mr_records(const std::vector<MRCorpusRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write record file " + path.string());
  for (const MRCorpusRecord& rec : records) {
    json j = {{"video_id", rec.video_id},
              {"start", rec.segment.start},
              {"end", rec.segment.end},
              {"caption", rec.caption},
              {"similarity", rec.similarity}};
    out << j.dump() << '\n';
  }
}

}  // namespace momentdet
