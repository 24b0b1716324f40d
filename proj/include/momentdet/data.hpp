#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "momentdet/geometry.hpp"
#include "momentdet/rng.hpp"

namespace momentdet {

enum class Task { Tad, Mr };

Task task_from_string(const std::string& s);
std::string to_string(Task t);

struct Annotation {
  TemporalSegment segment;
  std::string query;
  Task task = Task::Tad;
};

/// One untrimmed video: per-frame features plus labeled segments.
/// Background-only videos (no annotations) are legal.
struct VideoSample {
  std::string video_id;
  double duration = 0.0;
  Eigen::MatrixXf features;   // T x D_in; may be empty when only annotations were loaded
  std::string features_path;  // relative path recorded in the annotation file
  std::vector<Annotation> annotations;
};

/// One candidate caption for the moment-retrieval corpus, carrying a
/// precomputed caption-video similarity in [0, 1].
struct MRCorpusRecord {
  std::string video_id;
  TemporalSegment segment;
  std::string caption;
  double similarity = 0.0;
};

struct FilterStats {
  size_t input = 0;
  size_t kept = 0;
  size_t dropped_low_similarity = 0;
  size_t dropped_no_keyword = 0;
};

/// Keeps records with similarity >= sim_threshold whose caption contains at
/// least one keyword as a case-insensitive whole-word match. Stable order.
std::vector<MRCorpusRecord> filter_mr_corpus(const std::vector<MRCorpusRecord>& records,
                                             double sim_threshold,
                                             const std::vector<std::string>& keywords,
                                             FilterStats* stats = nullptr);

/// Synthetic corpus recipe: every video plants 1..max_segments non-overlapping
/// segments; frames inside a planted segment are drawn around a query-specific
/// motif vector, background frames around a shared null motif, plus gaussian
/// noise. Fully reproducible by seed.
struct SynthSpec {
  int num_videos = 32;
  double duration_min = 48.0;
  double duration_max = 96.0;
  std::vector<std::string> vocab;
  int motifs_per_query = 1;
  double noise = 0.5;
  int feature_dim = 16;
  double feature_rate = 1.0;  // frames per second
  int min_segments = 1;
  int max_segments = 4;
  double segment_min_len = 4.0;
  double segment_max_len = 16.0;
  double mr_fraction = 0.0;  // fraction of videos labeled as retrieval samples

  void validate() const;
};

std::vector<VideoSample> synth_dataset(const SynthSpec& spec, uint64_t seed);

/// Line-delimited JSON, one VideoSample per line, schema_version 1. Loading
/// validates every record and names the line and field on failure; feature
/// matrices referenced by features_path are loaded relative to the file.
std::vector<VideoSample> load_annotations(const std::filesystem::path& path,
                                          bool load_feature_files = true);
void save_annotations(const std::vector<VideoSample>& samples, const std::filesystem::path& path);

/// Flat binary feature file: u32 T, u32 D, then T*D little-endian float32.
Eigen::MatrixXf load_features(const std::filesystem::path& path);
void save_features(const Eigen::MatrixXf& features, const std::filesystem::path& path);

std::vector<MRCorpusRecord> load_mr_records(const std::filesystem::path& path);
void save_mr_records(const std::vector<MRCorpusRecord>& records, const std::filesystem::path& path);

}  // namespace momentdet
