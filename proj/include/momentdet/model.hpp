#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "momentdet/autograd.hpp"
#include "momentdet/prompt.hpp"
#include "momentdet/rng.hpp"

namespace momentdet {

enum class Pooling { Average, Max, Attentive };

Pooling pooling_from_string(const std::string& s);
std::string to_string(Pooling p);

struct ModelConfig {
  int d_input = 16;   // per-frame feature width fed to the video encoder
  int d_model = 32;   // shared embedding width D
  int heads = 4;
  int ffn_mult = 4;
  int fusion_encoder_layers = 3;
  int pyramid_levels = 5;
  int fusion_decoder_layers = 6;
  Pooling pooling = Pooling::Average;
  bool fusion_encoder_enabled = true;  // early video/text fusion on or off
  bool fusion_decoder_enabled = true;  // late video/query fusion on or off
  bool temporal_mixing = true;
  int max_text_tokens = 512;
  int max_query_tokens = 64;  // position table length, relative to span start
  int vocab_size = 8192;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Modality { Video, Text };
enum class Stage { Raw, Fused, Multiscale, Decoded };

/// Per-row placement of a video feature row on the time axis.
struct RowMeta {
  double timestamp = 0.0;  // seconds, center of the window the row covers
  double stride = 0.0;     // seconds covered per step at this pyramid level
  int level = 0;
};

/// Stage-tagged feature matrix. Video maps carry per-row time metadata; text
/// maps leave `rows` empty.
struct FeatureMap {
  ag::Var values;
  Modality modality = Modality::Video;
  Stage stage = Stage::Raw;
  std::vector<RowMeta> rows;
};

/// Pooled per-query vectors, aligned 1:1 with the prompt's query list.
struct QueryRepresentations {
  ag::Var values;  // L_q x D
};

/// Dense per-row outputs before decoding: classification logits against every
/// prompt query and nonnegative stride-normalized (d_start, d_end) distances.
struct RawPrediction {
  ag::Var logits;       // T_ms x L_q
  ag::Var regressions;  // T_ms x 2
  std::vector<RowMeta> rows;
};

/// Named parameter registry; iteration order is creation order and is stable
/// across runs, which checkpointing and the optimizer rely on.
class ParamStore {
 public:
  ag::Var add(const std::string& name, Mat init);
  const ag::Var& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::pair<std::string, ag::Var>>& items() const { return items_; }
  size_t size() const { return items_.size(); }
  void zero_grad();

 private:
  std::vector<std::pair<std::string, ag::Var>> items_;
  std::map<std::string, size_t> index_;
};

/// The fusion architecture: pluggable frame/text encoders, an early
/// cross-modality fusion encoder, a multiscale temporal pyramid, a per-query
/// span pooler, a late query-guided fusion decoder, and the prediction heads.
///
/// A model instance is single-writer: training mutates parameters and must be
/// serialized externally; inference with frozen parameters is safe from
/// multiple threads only on distinct instances (forward passes write
/// gradients' graph state into fresh nodes, parameters are read-only).
class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  FeatureMap encode_video(const Mat& frames, double duration);
  FeatureMap encode_text(const StructuredPrompt& prompt);
  std::pair<FeatureMap, FeatureMap> fuse_early(const FeatureMap& video, const FeatureMap& text,
                                               const StructuredPrompt& prompt);
  FeatureMap build_pyramid(const FeatureMap& video_fused);
  QueryRepresentations pool_queries(const FeatureMap& text_fused,
                                    const std::vector<QuerySpan>& spans);
  FeatureMap fuse_late(const FeatureMap& video_ms, const QueryRepresentations& queries);
  RawPrediction predict(const FeatureMap& video_decoded, const QueryRepresentations& queries);

  /// Full pipeline; deterministic for fixed parameters.
  RawPrediction forward(const Mat& frames, double duration, const StructuredPrompt& prompt);

 private:
  ag::Var attention(const std::string& prefix, const ag::Var& q_in, const ag::Var& kv_in,
                    const Mat* mask, bool cross);
  ag::Var ffn(const std::string& prefix, const ag::Var& x);
  Mat span_self_attention_mask(const StructuredPrompt& prompt) const;

  ModelConfig cfg_;
  ParamStore params_;
};

}  // namespace momentdet
