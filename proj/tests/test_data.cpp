#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "momentdet/data.hpp"

using namespace momentdet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("momentdet_test_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

MRCorpusRecord rec(const std::string& id, double sim, const std::string& caption) {
  return MRCorpusRecord{id, TemporalSegment(0.0, 5.0), caption, sim};
}

}  // namespace

TEST_CASE("filter keeps only high-similarity keyword matches") {
  const std::vector<std::string> keywords = {"running", "swimming"};
  FilterStats stats;
  const std::vector<MRCorpusRecord> records = {
      rec("a", 0.39, "a man is running outside"),  // below the similarity floor
      rec("b", 0.9, "a quiet empty hallway"),      // no keyword
      rec("c", 0.9, "a man is running outside"),
      rec("d", 0.4, "kids swimming in a pool"),    // boundary similarity is kept
      rec("e", 0.8, "he was runninggg"),           // substring, not a word match
      rec("f", 0.8, "Running in the RAIN"),        // case-insensitive
  };
  const auto kept = filter_mr_corpus(records, 0.4, keywords, &stats);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].video_id == "c");
  CHECK(kept[1].video_id == "d");
  CHECK(kept[2].video_id == "f");
  CHECK(stats.input == 6);
  CHECK(stats.kept == 3);
  CHECK(stats.dropped_low_similarity == 1);
  CHECK(stats.dropped_no_keyword == 2);
}

TEST_CASE("filter validates keywords and is monotone in the threshold") {
  CHECK_THROWS_AS(filter_mr_corpus({rec("a", 0.5, "x")}, 0.4, {}), std::invalid_argument);
  CHECK_THROWS_AS(filter_mr_corpus({rec("a", 0.5, "x")}, 0.4, {"Running"}), std::invalid_argument);

  Rng rng(2);
  std::vector<MRCorpusRecord> records;
  for (int i = 0; i < 200; ++i) {
    records.push_back(rec("v" + std::to_string(i), rng.uniform(),
                          rng.uniform() < 0.5 ? "somebody is running" : "nothing happens"));
  }
  auto ids = [](const std::vector<MRCorpusRecord>& v) {
    std::set<std::string> out;
    for (const auto& r : v) out.insert(r.video_id);
    return out;
  };
  const auto loose = ids(filter_mr_corpus(records, 0.3, {"running"}));
  const auto tight = ids(filter_mr_corpus(records, 0.7, {"running"}));
  for (const auto& id : tight) CHECK(loose.count(id) == 1);
}

TEST_CASE("synthetic corpus is deterministic and closed over the vocabulary") {
  SynthSpec spec;
  spec.num_videos = 8;
  spec.vocab = {"high jump", "surfing", "walking the dog"};
  spec.noise = 0.3;

  const auto a = synth_dataset(spec, 7);
  const auto b = synth_dataset(spec, 7);
  REQUIRE(a.size() == 8);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].video_id == b[i].video_id);
    CHECK(a[i].duration == b[i].duration);
    CHECK(a[i].features == b[i].features);
    REQUIRE(a[i].annotations.size() == b[i].annotations.size());
    for (size_t k = 0; k < a[i].annotations.size(); ++k) {
      CHECK(a[i].annotations[k].segment.start == b[i].annotations[k].segment.start);
      CHECK(a[i].annotations[k].query == b[i].annotations[k].query);
      const auto& q = a[i].annotations[k].query;
      CHECK(std::find(spec.vocab.begin(), spec.vocab.end(), q) != spec.vocab.end());
    }
  }
  const auto c = synth_dataset(spec, 8);
  bool any_diff = false;
  for (size_t i = 0; i < a.size() && !any_diff; ++i) any_diff = a[i].features != c[i].features;
  CHECK(any_diff);
}

TEST_CASE("noise-free generation plants motifs exactly and is separable") {
  SynthSpec spec;
  spec.num_videos = 6;
  spec.vocab = {"one", "two", "three", "four"};
  spec.noise = 0.0;

  const auto data = synth_dataset(spec, 3);

  // collect the motif of each query from some in-segment frame, then check
  // that a nearest-motif frame classifier is perfect
  std::map<std::string, Eigen::VectorXf> motif_of;
  for (const VideoSample& v : data) {
    const double dt = v.duration / v.features.rows();
    for (const Annotation& ann : v.annotations) {
      for (int f = 0; f < v.features.rows(); ++f) {
        const double ts = (f + 0.5) * dt;
        if (ts >= ann.segment.start && ts < ann.segment.end) {
          motif_of[ann.query] = v.features.row(f);
          break;
        }
      }
    }
  }
  REQUIRE(!motif_of.empty());

  for (const VideoSample& v : data) {
    const double dt = v.duration / v.features.rows();
    for (int f = 0; f < v.features.rows(); ++f) {
      const double ts = (f + 0.5) * dt;
      const Annotation* inside = nullptr;
      for (const Annotation& ann : v.annotations) {
        if (ts >= ann.segment.start && ts < ann.segment.end) {
          inside = &ann;
          break;
        }
      }
      if (inside != nullptr && motif_of.count(inside->query) > 0) {
        CHECK((v.features.row(f).transpose() - motif_of[inside->query]).cwiseAbs().maxCoeff() ==
              0.0f);
      }
    }
  }
}

TEST_CASE("annotation files round trip exactly") {
  TempDir dir;
  SynthSpec spec;
  spec.num_videos = 5;
  spec.vocab = {"a", "b"};
  spec.mr_fraction = 0.4;
  auto samples = synth_dataset(spec, 11);
  for (auto& s : samples) {
    s.features_path = s.video_id + ".bin";
    save_features(s.features, dir.path / s.features_path);
  }
  const fs::path file = dir.path / "annotations.jsonl";
  save_annotations(samples, file);
  const auto loaded = load_annotations(file);

  REQUIRE(loaded.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].video_id == samples[i].video_id);
    CHECK(loaded[i].duration == samples[i].duration);
    CHECK(loaded[i].features_path == samples[i].features_path);
    CHECK(loaded[i].features == samples[i].features);
    REQUIRE(loaded[i].annotations.size() == samples[i].annotations.size());
    for (size_t k = 0; k < samples[i].annotations.size(); ++k) {
      CHECK(loaded[i].annotations[k].segment.start == samples[i].annotations[k].segment.start);
      CHECK(loaded[i].annotations[k].segment.end == samples[i].annotations[k].segment.end);
      CHECK(loaded[i].annotations[k].query == samples[i].annotations[k].query);
      CHECK(loaded[i].annotations[k].task == samples[i].annotations[k].task);
    }
  }

  // save -> load -> save produces identical bytes
  const fs::path file2 = dir.path / "annotations2.jsonl";
  save_annotations(loaded, file2);
  std::ifstream f1(file), f2(file2);
  const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
}

TEST_CASE("annotation loader names the line and field on errors") {
  TempDir dir;
  const fs::path file = dir.path / "bad.jsonl";
  {
    std::ofstream out(file);
    out << R"({"schema_version":1,"video_id":"ok","duration":10.0,"annotations":[]})" << "\n";
    out << R"({"schema_version":1,"video_id":"bad","duration":10.0,"annotations":[{"start":2.0,"end":75.0,"query":"q","task":"tad"}]})"
        << "\n";
  }
  try {
    load_annotations(file);
    FAIL("expected a validation error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2:") != std::string::npos);
    CHECK(msg.find("annotations[0].end") != std::string::npos);
    CHECK(msg.find("bad") != std::string::npos);
  }

  const fs::path empty = dir.path / "empty.jsonl";
  std::ofstream(empty).close();
  CHECK(load_annotations(empty).empty());
}

TEST_CASE("feature files round trip") {
  TempDir dir;
  Eigen::MatrixXf m(3, 4);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) m(r, c) = static_cast<float>(0.25 * r - 1.5 * c);
  }
  const fs::path file = dir.path / "f.bin";
  save_features(m, file);
  CHECK(load_features(file) == m);
  CHECK(fs::file_size(file) == 8 + 3 * 4 * 4);

  std::ofstream(dir.path / "trunc.bin", std::ios::binary).write("xx", 2);
  CHECK_THROWS_AS(load_features(dir.path / "trunc.bin"), std::runtime_error);
}

TEST_CASE("synth spec validation") {
  SynthSpec spec;
  spec.vocab = {"a"};
  spec.duration_min = 0.0;
  CHECK_THROWS_AS(synth_dataset(spec, 0), std::invalid_argument);
  spec = SynthSpec{};
  CHECK_THROWS_AS(synth_dataset(spec, 0), std::invalid_argument);  // empty vocab
}
