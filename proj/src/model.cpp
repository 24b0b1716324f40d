#include "momentdet/model.hpp"

#include <cmath>
#include <stdexcept>

namespace momentdet {

Pooling pooling_from_string(const std::string& s) {
  if (s == "average") return Pooling::Average;
  if (s == "max") return Pooling::Max;
  if (s == "attentive") return Pooling::Attentive;
  throw std::invalid_argument("unknown pooling mode \"" + s +
                              "\" (expected average|max|attentive)");
}

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::Average: return "average";
    case Pooling::Max: return "max";
    case Pooling::Attentive: return "attentive";
  }
  return "average";
}

void ModelConfig::validate() const {
  if (d_input <= 0 || d_model <= 0) throw std::invalid_argument("ModelConfig: widths must be positive");
  if (heads <= 0 || d_model % heads != 0) {
    throw std::invalid_argument("ModelConfig: heads must divide d_model");
  }
  if (ffn_mult <= 0) throw std::invalid_argument("ModelConfig: ffn_mult must be positive");
  if (fusion_encoder_layers < 0 || fusion_decoder_layers < 0) {
    throw std::invalid_argument("ModelConfig: layer counts must be nonnegative");
  }
  if (pyramid_levels < 1) throw std::invalid_argument("ModelConfig: need at least one pyramid level");
  if (max_text_tokens < 1 || max_query_tokens < 1) {
    throw std::invalid_argument("ModelConfig: token limits must be positive");
  }
  if (vocab_size <= Tokenizer::kReservedIds) {
    throw std::invalid_argument("ModelConfig: vocab_size too small");
  }
}

ag::Var ParamStore::add(const std::string& name, Mat init) {
  if (index_.count(name) > 0) throw std::logic_error("ParamStore: duplicate parameter " + name);
  ag::Var v = ag::parameter(std::move(init), name);
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

const ag::Var& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter named " + name);
  return items_[it->second].second;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : items_) v->zero_grad();
}

namespace {

constexpr double kMaskOff = -1e30;

Mat init_weight(Rng& rng, int rows, int cols, double stddev = 0.02) {
  Mat w(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) w(r, c) = rng.truncated_normal(stddev);
  }
  return w;
}

void add_linear(ParamStore& ps, Rng& rng, const std::string& prefix, int in, int out) {
  ps.add(prefix + ".w", init_weight(rng, in, out));
  ps.add(prefix + ".b", Mat::Zero(1, out));
}

void add_layer_norm(ParamStore& ps, const std::string& prefix, int d) {
  ps.add(prefix + ".gamma", Mat::Ones(1, d));
  ps.add(prefix + ".beta", Mat::Zero(1, d));
}

void add_attention_params(ParamStore& ps, Rng& rng, const std::string& prefix, int d, bool cross) {
  ps.add(prefix + ".wq", init_weight(rng, d, d));
  ps.add(prefix + ".bq", Mat::Zero(1, d));
  ps.add(prefix + ".wk", init_weight(rng, d, d));
  ps.add(prefix + ".bk", Mat::Zero(1, d));
  ps.add(prefix + ".wv", init_weight(rng, d, d));
  ps.add(prefix + ".bv", Mat::Zero(1, d));
  ps.add(prefix + ".wo", init_weight(rng, d, d));
  ps.add(prefix + ".bo", Mat::Zero(1, d));
  add_layer_norm(ps, prefix + ".ln_q", d);
  if (cross) add_layer_norm(ps, prefix + ".ln_kv", d);
}

void add_ffn_params(ParamStore& ps, Rng& rng, const std::string& prefix, int d, int mult) {
  ps.add(prefix + ".w1", init_weight(rng, d, d * mult));
  ps.add(prefix + ".b1", Mat::Zero(1, d * mult));
  ps.add(prefix + ".w2", init_weight(rng, d * mult, d));
  ps.add(prefix + ".b2", Mat::Zero(1, d));
  add_layer_norm(ps, prefix + ".ln", d);
}

}  // namespace

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(seed, "model-init"));
  const int d = cfg_.d_model;

  add_linear(params_, rng, "video_encoder.in", cfg_.d_input, d);
  params_.add("video_encoder.w_mix", init_weight(rng, 3 * d, d));
  params_.add("video_encoder.b_mix", Mat::Zero(1, d));

  params_.add("text_encoder.tok_emb", init_weight(rng, cfg_.vocab_size, d));
  params_.add("text_encoder.pos_emb", init_weight(rng, cfg_.max_query_tokens, d));

  for (int l = 0; l < cfg_.fusion_encoder_layers; ++l) {
    const std::string p = "fusion_encoder.l" + std::to_string(l);
    add_attention_params(params_, rng, p + ".self_v", d, false);
    add_attention_params(params_, rng, p + ".self_p", d, false);
    add_attention_params(params_, rng, p + ".cross_v", d, true);
    add_attention_params(params_, rng, p + ".cross_p", d, true);
    add_ffn_params(params_, rng, p + ".ffn_v", d, cfg_.ffn_mult);
    add_ffn_params(params_, rng, p + ".ffn_p", d, cfg_.ffn_mult);
  }

  for (int l = 0; l < cfg_.pyramid_levels; ++l) {
    const std::string p = "pyramid.l" + std::to_string(l);
    add_attention_params(params_, rng, p + ".self", d, false);
    add_ffn_params(params_, rng, p + ".ffn", d, cfg_.ffn_mult);
  }

  params_.add("query_pooler.attn_query", init_weight(rng, d, 1));

  for (int l = 0; l < cfg_.fusion_decoder_layers; ++l) {
    const std::string p = "fusion_decoder.l" + std::to_string(l);
    add_attention_params(params_, rng, p + ".cross", d, true);
    add_attention_params(params_, rng, p + ".self", d, false);
    add_ffn_params(params_, rng, p + ".ffn", d, cfg_.ffn_mult);
  }

  params_.add("heads.cls_proj", init_weight(rng, d, d));
  // Prior bias so the dense classification starts near P(positive) = 0.01.
  const double pi = 0.01;
  Mat cls_bias(1, 1);
  cls_bias(0, 0) = -std::log((1.0 - pi) / pi);
  params_.add("heads.cls_bias", cls_bias);
  params_.add("heads.reg_w1", init_weight(rng, d, d));
  params_.add("heads.reg_b1", Mat::Zero(1, d));
  params_.add("heads.reg_w2", init_weight(rng, d, 2));
  params_.add("heads.reg_b2", Mat::Zero(1, 2));
}

ag::Var Model::attention(const std::string& prefix, const ag::Var& q_in, const ag::Var& kv_in,
                         const Mat* mask, bool cross) {
  using namespace ag;
  const int d = cfg_.d_model;
  const int dh = d / cfg_.heads;

  Var qn = layer_norm(q_in, params_.at(prefix + ".ln_q.gamma"), params_.at(prefix + ".ln_q.beta"));
  Var kn = cross ? layer_norm(kv_in, params_.at(prefix + ".ln_kv.gamma"),
                              params_.at(prefix + ".ln_kv.beta"))
                 : qn;

  Var Q = add_rowvec(matmul(qn, params_.at(prefix + ".wq")), params_.at(prefix + ".bq"));
  Var K = add_rowvec(matmul(kn, params_.at(prefix + ".wk")), params_.at(prefix + ".bk"));
  Var V = add_rowvec(matmul(kn, params_.at(prefix + ".wv")), params_.at(prefix + ".bv"));

  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(cfg_.heads));
  for (int h = 0; h < cfg_.heads; ++h) {
    Var Qh = slice_cols(Q, h * dh, dh);
    Var Kh = slice_cols(K, h * dh, dh);
    Var Vh = slice_cols(V, h * dh, dh);
    Var scores = scale(matmul(Qh, transpose(Kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (mask != nullptr) scores = add(scores, constant(*mask));
    heads.push_back(matmul(softmax_rows(scores), Vh));
  }
  Var out = add_rowvec(matmul(concat_cols(heads), params_.at(prefix + ".wo")),
                       params_.at(prefix + ".bo"));
  return add(q_in, out);
}

ag::Var Model::ffn(const std::string& prefix, const ag::Var& x) {
  using namespace ag;
  Var xn = layer_norm(x, params_.at(prefix + ".ln.gamma"), params_.at(prefix + ".ln.beta"));
  Var h = gelu(add_rowvec(matmul(xn, params_.at(prefix + ".w1")), params_.at(prefix + ".b1")));
  return add(x, add_rowvec(matmul(h, params_.at(prefix + ".w2")), params_.at(prefix + ".b2")));
}

Mat Model::span_self_attention_mask(const StructuredPrompt& prompt) const {
  const int n = prompt.num_tokens();
  Mat mask = Mat::Constant(n, n, kMaskOff);
  for (int i = 0; i < n; ++i) mask(i, i) = 0.0;  // separators attend to themselves only
  for (const QuerySpan& span : prompt.query_spans) {
    mask.block(span.begin, span.begin, span.size(), span.size()).setZero();
  }
  return mask;
}

FeatureMap Model::encode_video(const Mat& frames, double duration) {
  using namespace ag;
  const Eigen::Index t = frames.rows();
  if (t < 1) throw std::invalid_argument("encode_video: need at least one frame");
  if (frames.cols() != cfg_.d_input) {
    throw std::invalid_argument("encode_video: expected " + std::to_string(cfg_.d_input) +
                                " input channels, got " + std::to_string(frames.cols()));
  }
  if (!frames.allFinite()) throw std::invalid_argument("encode_video: non-finite input");
  if (!(std::isfinite(duration) && duration > 0.0)) {
    throw std::invalid_argument("encode_video: duration must be positive");
  }

  Var x = constant(frames);
  Var base = add_rowvec(matmul(x, params_.at("video_encoder.in.w")), params_.at("video_encoder.in.b"));

  Var out = base;
  if (cfg_.temporal_mixing && t > 1) {
    Mat up = Mat::Zero(t, t), down = Mat::Zero(t, t);
    for (Eigen::Index i = 1; i < t; ++i) up(i, i - 1) = 1.0;
    for (Eigen::Index i = 0; i + 1 < t; ++i) down(i, i + 1) = 1.0;
    Var window = concat_cols({matmul(constant(up), base), base, matmul(constant(down), base)});
    Var mixed = add_rowvec(matmul(window, params_.at("video_encoder.w_mix")),
                           params_.at("video_encoder.b_mix"));
    out = add(base, mixed);
  }

  FeatureMap fm;
  fm.values = out;
  fm.modality = Modality::Video;
  fm.stage = Stage::Raw;
  const double dt = duration / static_cast<double>(t);
  fm.rows.reserve(static_cast<size_t>(t));
  for (Eigen::Index i = 0; i < t; ++i) {
    fm.rows.push_back(RowMeta{(static_cast<double>(i) + 0.5) * dt, dt, 0});
  }
  return fm;
}

FeatureMap Model::encode_text(const StructuredPrompt& prompt) {
  using namespace ag;
  if (prompt.num_tokens() > cfg_.max_text_tokens) {
    throw std::invalid_argument("encode_text: prompt has " + std::to_string(prompt.num_tokens()) +
                                " tokens, budget is " + std::to_string(cfg_.max_text_tokens));
  }
  if (prompt.num_tokens() == 0) throw std::invalid_argument("encode_text: empty prompt");

  std::vector<int> ids = prompt.token_ids;
  for (int& id : ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw std::invalid_argument("encode_text: token id out of range");
  }
  // Positions restart at each query span, so a query's representation does not
  // depend on where it sits in the prompt.
  std::vector<int> pos(ids.size(), 0);
  for (const QuerySpan& span : prompt.query_spans) {
    for (int i = span.begin; i < span.end; ++i) {
      pos[static_cast<size_t>(i)] = std::min(i - span.begin, cfg_.max_query_tokens - 1);
    }
  }

  Var emb = add(gather_rows(params_.at("text_encoder.tok_emb"), ids),
                gather_rows(params_.at("text_encoder.pos_emb"), pos));
  FeatureMap fm;
  fm.values = emb;
  fm.modality = Modality::Text;
  fm.stage = Stage::Raw;
  return fm;
}

std::pair<FeatureMap, FeatureMap> Model::fuse_early(const FeatureMap& video, const FeatureMap& text,
                                                    const StructuredPrompt& prompt) {
  if (video.modality != Modality::Video || text.modality != Modality::Text) {
    throw std::invalid_argument("fuse_early: expects (video, text) maps");
  }
  if (video.values->cols() != text.values->cols()) {
    throw std::invalid_argument("fuse_early: embedding widths disagree");
  }

  FeatureMap v_out = video;
  FeatureMap t_out = text;
  v_out.stage = Stage::Fused;
  t_out.stage = Stage::Fused;
  if (!cfg_.fusion_encoder_enabled || cfg_.fusion_encoder_layers == 0) {
    return {v_out, t_out};
  }

  const Mat span_mask = span_self_attention_mask(prompt);
  ag::Var v = video.values;
  ag::Var p = text.values;
  for (int l = 0; l < cfg_.fusion_encoder_layers; ++l) {
    const std::string pre = "fusion_encoder.l" + std::to_string(l);
    ag::Var v_self = attention(pre + ".self_v", v, v, nullptr, false);
    ag::Var p_self = attention(pre + ".self_p", p, p, &span_mask, false);
    v = ffn(pre + ".ffn_v", attention(pre + ".cross_v", v_self, p_self, nullptr, true));
    p = ffn(pre + ".ffn_p", attention(pre + ".cross_p", p_self, v_self, nullptr, true));
  }
  v_out.values = v;
  t_out.values = p;
  return {v_out, t_out};
}

FeatureMap Model::build_pyramid(const FeatureMap& video_fused) {
  using namespace ag;
  if (video_fused.modality != Modality::Video || video_fused.stage != Stage::Fused) {
    throw std::invalid_argument("build_pyramid: expects the fused video map");
  }
  const Eigen::Index t = video_fused.values->rows();
  const Eigen::Index min_len = Eigen::Index(1) << (cfg_.pyramid_levels - 1);
  if (t < min_len) {
    throw std::invalid_argument("build_pyramid: need at least " + std::to_string(min_len) +
                                " frames for " + std::to_string(cfg_.pyramid_levels) +
                                " levels, got " + std::to_string(t));
  }

  Var cur = video_fused.values;
  std::vector<RowMeta> cur_meta = video_fused.rows;
  std::vector<Var> level_values;
  std::vector<RowMeta> all_meta;

  for (int l = 0; l < cfg_.pyramid_levels; ++l) {
    if (l > 0) {
      const Eigen::Index n = cur->rows();
      const Eigen::Index m = (n + 1) / 2;
      Mat pool = Mat::Zero(m, n);
      std::vector<RowMeta> next_meta;
      next_meta.reserve(static_cast<size_t>(m));
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index a = 2 * i;
        const Eigen::Index b = std::min(n, a + 2);
        const double w = 1.0 / static_cast<double>(b - a);
        double ts = 0.0;
        for (Eigen::Index j = a; j < b; ++j) {
          pool(i, j) = w;
          ts += cur_meta[static_cast<size_t>(j)].timestamp;
        }
        next_meta.push_back(RowMeta{ts / static_cast<double>(b - a),
                                    cur_meta[static_cast<size_t>(a)].stride * 2.0, l});
      }
      cur = matmul(constant(pool), cur);
      cur_meta = std::move(next_meta);
    }
    const std::string pre = "pyramid.l" + std::to_string(l);
    cur = ffn(pre + ".ffn", attention(pre + ".self", cur, cur, nullptr, false));
    level_values.push_back(cur);
    all_meta.insert(all_meta.end(), cur_meta.begin(), cur_meta.end());
  }

  FeatureMap fm;
  fm.values = concat_rows(level_values);
  fm.modality = Modality::Video;
  fm.stage = Stage::Multiscale;
  fm.rows = std::move(all_meta);
  return fm;
}

QueryRepresentations Model::pool_queries(const FeatureMap& text_fused,
                                         const std::vector<QuerySpan>& spans) {
  using namespace ag;
  if (text_fused.modality != Modality::Text) {
    throw std::invalid_argument("pool_queries: expects a text map");
  }
  if (spans.empty()) throw std::invalid_argument("pool_queries: no spans");

  std::vector<Var> pooled;
  pooled.reserve(spans.size());
  for (const QuerySpan& span : spans) {
    if (span.size() <= 0 || span.begin < 0 || span.end > text_fused.values->rows()) {
      throw std::invalid_argument("pool_queries: invalid span [" + std::to_string(span.begin) +
                                  ", " + std::to_string(span.end) + ")");
    }
    Var rows = slice_rows(text_fused.values, span.begin, span.size());
    switch (cfg_.pooling) {
      case Pooling::Average:
        pooled.push_back(mean_rows(rows));
        break;
      case Pooling::Max:
        pooled.push_back(maxpool_rows(rows));
        break;
      case Pooling::Attentive: {
        Var scores = scale(matmul(rows, params_.at("query_pooler.attn_query")),
                           1.0 / std::sqrt(static_cast<double>(cfg_.d_model)));
        Var weights = softmax_rows(transpose(scores));  // 1 x len
        Var first = slice_rows(rows, 0, 1);
        Var broadcast = matmul(constant(Mat::Ones(span.size(), 1)), first);
        // Shifted form: constant spans pool to the first row exactly.
        pooled.push_back(add(first, matmul(weights, sub(rows, broadcast))));
        break;
      }
    }
  }
  QueryRepresentations out;
  out.values = concat_rows(pooled);
  return out;
}

FeatureMap Model::fuse_late(const FeatureMap& video_ms, const QueryRepresentations& queries) {
  if (video_ms.modality != Modality::Video || video_ms.stage != Stage::Multiscale) {
    throw std::invalid_argument("fuse_late: expects the multiscale video map");
  }
  if (video_ms.values->cols() != queries.values->cols()) {
    throw std::invalid_argument("fuse_late: embedding widths disagree");
  }

  FeatureMap out = video_ms;
  out.stage = Stage::Decoded;
  if (!cfg_.fusion_decoder_enabled || cfg_.fusion_decoder_layers == 0) {
    return out;
  }
  ag::Var x = video_ms.values;
  for (int l = 0; l < cfg_.fusion_decoder_layers; ++l) {
    const std::string pre = "fusion_decoder.l" + std::to_string(l);
    x = attention(pre + ".cross", x, queries.values, nullptr, true);
    x = attention(pre + ".self", x, x, nullptr, false);
    x = ffn(pre + ".ffn", x);
  }
  out.values = x;
  return out;
}

RawPrediction Model::predict(const FeatureMap& video_decoded, const QueryRepresentations& queries) {
  using namespace ag;
  if (video_decoded.stage != Stage::Decoded) {
    throw std::invalid_argument("predict: expects the decoded video map");
  }
  Var vd = video_decoded.values;
  Var proj = matmul(vd, params_.at("heads.cls_proj"));
  Var logits = add_scalar_var(
      scale(matmul(proj, transpose(queries.values)), 1.0 / std::sqrt(static_cast<double>(cfg_.d_model))),
      params_.at("heads.cls_bias"));

  Var h = gelu(add_rowvec(matmul(vd, params_.at("heads.reg_w1")), params_.at("heads.reg_b1")));
  Var raw = add_rowvec(matmul(h, params_.at("heads.reg_w2")), params_.at("heads.reg_b2"));

  RawPrediction out;
  out.logits = logits;
  out.regressions = softplus(raw);
  out.rows = video_decoded.rows;
  return out;
}

RawPrediction Model::forward(const Mat& frames, double duration, const StructuredPrompt& prompt) {
  FeatureMap fv = encode_video(frames, duration);
  FeatureMap fp = encode_text(prompt);
  auto [v_fused, p_fused] = fuse_early(fv, fp, prompt);
  FeatureMap ms = build_pyramid(v_fused);
  QueryRepresentations q = pool_queries(p_fused, prompt.query_spans);
  FeatureMap decoded = fuse_late(ms, q);
  return predict(decoded, q);
}

}  // namespace momentdet
