#include <doctest.h>

#include <cmath>

#include "momentdet/model.hpp"

using namespace momentdet;

namespace {

Mat random_frames(Rng& rng, int t, int d) {
  Mat m(t, d);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
  }
  return m;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_input = 6;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.fusion_encoder_layers = 1;
  cfg.pyramid_levels = 3;
  cfg.fusion_decoder_layers = 1;
  return cfg;
}

// Residual branches die when the value path and feed-forward outputs are
// zeroed; attention/ffn blocks then reduce to the identity.
void zero_residual_branches(Model& model) {
  for (const auto& [name, var] : model.params().items()) {
    const bool value_path = name.ends_with(".wv") || name.ends_with(".bv") || name.ends_with(".bo");
    const bool ffn_out = name.ends_with(".w2") || name.ends_with(".b2");
    if (value_path || ffn_out) var->value.setZero();
  }
}

int multiscale_rows(int t, int levels) {
  int total = 0, cur = t;
  for (int l = 0; l < levels; ++l) {
    total += cur;
    cur = (cur + 1) / 2;
  }
  return total;
}

}  // namespace

TEST_CASE("video encoder shape, finiteness, and per-frame behavior") {
  Rng rng(1);
  ModelConfig cfg = tiny_config();
  Model model(cfg, 0);

  const Mat frames = random_frames(rng, 8, cfg.d_input);
  FeatureMap fm = model.encode_video(frames, 8.0);
  CHECK(fm.values->rows() == 8);
  CHECK(fm.values->cols() == cfg.d_model);
  CHECK(fm.values->value.allFinite());
  CHECK(fm.rows.size() == 8);
  CHECK(fm.rows[0].timestamp == doctest::Approx(0.5));
  CHECK(fm.rows[7].timestamp == doctest::Approx(7.5));

  // with the mixing branch zeroed, identical frames embed identically
  model.params().at("video_encoder.w_mix")->value.setZero();
  model.params().at("video_encoder.b_mix")->value.setZero();
  Mat same = frames.row(3).replicate(4, 1);
  FeatureMap per_frame = model.encode_video(same, 4.0);
  for (int r = 1; r < 4; ++r) {
    CHECK((per_frame.values->value.row(r) - per_frame.values->value.row(0)).cwiseAbs().maxCoeff() ==
          0.0);
  }

  CHECK_THROWS_AS(model.encode_video(Mat::Zero(0, cfg.d_input), 1.0), std::invalid_argument);
  CHECK_THROWS_AS(model.encode_video(Mat::Zero(4, cfg.d_input + 1), 4.0), std::invalid_argument);
}

TEST_CASE("text encoder is position-relative within spans") {
  ModelConfig cfg = tiny_config();
  Model model(cfg, 0);
  Tokenizer tok(cfg.vocab_size);

  // the same query in different prompt positions embeds identically
  const StructuredPrompt a = build_prompt({"high jump", "surfing"}, tok);
  const StructuredPrompt b = build_prompt({"surfing", "high jump"}, tok);
  const FeatureMap fa = model.encode_text(a);
  const FeatureMap fb = model.encode_text(b);

  const QuerySpan sa = a.query_spans[0];  // "high jump" first
  const QuerySpan sb = b.query_spans[1];  // "high jump" second
  REQUIRE(sa.size() == sb.size());
  for (int i = 0; i < sa.size(); ++i) {
    CHECK((fa.values->value.row(sa.begin + i) - fb.values->value.row(sb.begin + i))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("early fusion preserves shapes") {
  Rng rng(2);
  ModelConfig cfg = tiny_config();
  Model model(cfg, 0);
  Tokenizer tok(cfg.vocab_size);

  const StructuredPrompt prompt = build_prompt({"one", "two words", "three word query"}, tok);
  FeatureMap fv = model.encode_video(random_frames(rng, 8, cfg.d_input), 8.0);
  FeatureMap fp = model.encode_text(prompt);
  auto [v2, p2] = model.fuse_early(fv, fp, prompt);
  CHECK(v2.values->rows() == 8);
  CHECK(v2.values->cols() == cfg.d_model);
  CHECK(p2.values->rows() == prompt.num_tokens());
  CHECK(v2.stage == Stage::Fused);
  CHECK(v2.values->value.allFinite());
  CHECK(p2.values->value.allFinite());
}

TEST_CASE("early and late fusion reduce to the identity with zero residual branches") {
  Rng rng(3);
  ModelConfig cfg = tiny_config();
  Model model(cfg, 0);
  Tokenizer tok(cfg.vocab_size);
  zero_residual_branches(model);

  const StructuredPrompt prompt = build_prompt({"alpha", "beta"}, tok);
  FeatureMap fv = model.encode_video(random_frames(rng, 8, cfg.d_input), 8.0);
  FeatureMap fp = model.encode_text(prompt);
  auto [v2, p2] = model.fuse_early(fv, fp, prompt);
  CHECK((v2.values->value - fv.values->value).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p2.values->value - fp.values->value).cwiseAbs().maxCoeff() == 0.0);

  FeatureMap ms = model.build_pyramid(v2);
  QueryRepresentations q = model.pool_queries(p2, prompt.query_spans);
  FeatureMap dec = model.fuse_late(ms, q);
  CHECK((dec.values->value - ms.values->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pyramid row counts, strides, and level-0 timestamps") {
  Rng rng(4);
  ModelConfig cfg = tiny_config();
  cfg.pyramid_levels = 5;
  Model model(cfg, 0);

  for (const int t : {64, 16}) {
    FeatureMap fv = model.encode_video(random_frames(rng, t, cfg.d_input), static_cast<double>(t));
    fv.stage = Stage::Fused;
    FeatureMap ms = model.build_pyramid(fv);
    CHECK(ms.values->rows() == multiscale_rows(t, 5));
    CHECK(static_cast<int>(ms.rows.size()) == multiscale_rows(t, 5));
    // level 0 keeps the frame timestamps and stride
    for (int i = 0; i < t; ++i) {
      CHECK(ms.rows[static_cast<size_t>(i)].level == 0);
      CHECK(ms.rows[static_cast<size_t>(i)].timestamp == doctest::Approx(i + 0.5));
      CHECK(ms.rows[static_cast<size_t>(i)].stride == doctest::Approx(1.0));
    }
    // strides double per level
    double expect_stride = 1.0;
    int cursor = 0, rows_at_level = t;
    for (int l = 0; l < 5; ++l) {
      CHECK(ms.rows[static_cast<size_t>(cursor)].stride == doctest::Approx(expect_stride));
      cursor += rows_at_level;
      rows_at_level = (rows_at_level + 1) / 2;
      expect_stride *= 2.0;
    }
  }
  CHECK(multiscale_rows(64, 5) == 124);
  CHECK(multiscale_rows(16, 5) == 31);

  FeatureMap small = model.encode_video(random_frames(rng, 15, cfg.d_input), 15.0);
  small.stage = Stage::Fused;
  CHECK_THROWS_AS(model.build_pyramid(small), std::invalid_argument);
}

TEST_CASE("query pooling modes") {
  Rng rng(5);
  ModelConfig cfg = tiny_config();

  for (const Pooling mode : {Pooling::Average, Pooling::Max, Pooling::Attentive}) {
    cfg.pooling = mode;
    Model model(cfg, 0);
    Mat rows = random_frames(rng, 10, cfg.d_model);
    FeatureMap text{ag::constant(rows), Modality::Text, Stage::Fused, {}};

    // single-token span passes the row through untouched
    QueryRepresentations single = model.pool_queries(text, {QuerySpan{4, 5}});
    CHECK((single.values->value.row(0) - rows.row(4)).cwiseAbs().maxCoeff() == 0.0);

    // constant spans of any length pool to that row exactly
    Mat repeated = rows.row(2).replicate(50, 1);
    FeatureMap const_text{ag::constant(repeated), Modality::Text, Stage::Fused, {}};
    for (const int len : {1, 3, 17, 50}) {
      QueryRepresentations pooled = model.pool_queries(const_text, {QuerySpan{0, len}});
      CHECK((pooled.values->value.row(0) - rows.row(2)).cwiseAbs().maxCoeff() == 0.0);
    }

    CHECK_THROWS_AS(model.pool_queries(text, {QuerySpan{3, 3}}), std::invalid_argument);
  }

  // average pooling is the arithmetic mean
  cfg.pooling = Pooling::Average;
  Model model(cfg, 0);
  Mat two(2, 2);
  two << 1, 3, 3, 5;
  Mat padded(2, cfg.d_model);
  padded.setZero();
  padded.block(0, 0, 2, 2) = two;
  FeatureMap text{ag::constant(padded), Modality::Text, Stage::Fused, {}};
  QueryRepresentations avg = model.pool_queries(text, {QuerySpan{0, 2}});
  CHECK(avg.values->value(0, 0) == doctest::Approx(2.0));
  CHECK(avg.values->value(0, 1) == doctest::Approx(4.0));
}

TEST_CASE("prediction heads: logits shape, zero-projection logit, decoding arithmetic") {
  Rng rng(6);
  ModelConfig cfg = tiny_config();
  Model model(cfg, 0);
  Tokenizer tok(cfg.vocab_size);

  const StructuredPrompt prompt = build_prompt({"aa", "bb", "cc"}, tok);
  RawPrediction pred = model.forward(random_frames(rng, 16, cfg.d_input), 16.0, prompt);
  CHECK(pred.logits->rows() == multiscale_rows(16, cfg.pyramid_levels));
  CHECK(pred.logits->cols() == 3);
  CHECK(pred.regressions->rows() == pred.logits->rows());
  CHECK(pred.regressions->cols() == 2);
  CHECK(pred.regressions->value.minCoeff() >= 0.0);
  CHECK(pred.logits->value.allFinite());

  // orthogonal projected video row and query row with zero bias -> logit 0
  Model plain(cfg, 0);
  plain.params().at("heads.cls_proj")->value = Mat::Identity(cfg.d_model, cfg.d_model);
  plain.params().at("heads.cls_bias")->value.setZero();
  Mat vd = Mat::Zero(1, cfg.d_model);
  vd(0, 0) = 1.0;
  Mat qv = Mat::Zero(1, cfg.d_model);
  qv(0, 1) = 1.0;
  FeatureMap decoded{ag::constant(vd), Modality::Video, Stage::Decoded, {RowMeta{0.5, 1.0, 0}}};
  RawPrediction ortho = plain.predict(decoded, QueryRepresentations{ag::constant(qv)});
  CHECK(ortho.logits->value(0, 0) == doctest::Approx(0.0));

  // decode formula: (timestamp - d_start * stride, timestamp + d_end * stride)
  const RowMeta row{10.0, 2.0, 1};
  const double start = row.timestamp - 1.5 * row.stride;
  const double end = row.timestamp + 2.0 * row.stride;
  CHECK(start == doctest::Approx(7.0));
  CHECK(end == doctest::Approx(14.0));
}

TEST_CASE("forward is deterministic") {
  Rng rng(7);
  ModelConfig cfg = tiny_config();
  Model model(cfg, 3);
  Tokenizer tok(cfg.vocab_size);
  const StructuredPrompt prompt = build_prompt({"first", "second"}, tok);
  const Mat frames = random_frames(rng, 8, cfg.d_input);

  RawPrediction a = model.forward(frames, 8.0, prompt);
  RawPrediction b = model.forward(frames, 8.0, prompt);
  CHECK((a.logits->value - b.logits->value).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.regressions->value - b.regressions->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("with both fusion stages disabled the video path ignores the text") {
  Rng rng(8);
  ModelConfig cfg = tiny_config();
  cfg.fusion_encoder_enabled = false;
  cfg.fusion_decoder_enabled = false;
  Model model(cfg, 0);
  Tokenizer tok(cfg.vocab_size);

  const Mat frames = random_frames(rng, 8, cfg.d_input);
  RawPrediction a = model.forward(frames, 8.0, build_prompt({"cats", "dogs"}, tok));
  RawPrediction b = model.forward(frames, 8.0, build_prompt({"completely different text here"}, tok));
  // regressions read only video features, so they cannot see the prompt
  CHECK((a.regressions->value - b.regressions->value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("disabled fusion stages are identity pass-throughs") {
  Rng rng(9);
  ModelConfig cfg = tiny_config();
  cfg.fusion_encoder_enabled = false;
  Model model(cfg, 0);
  Tokenizer tok(cfg.vocab_size);

  const StructuredPrompt prompt = build_prompt({"q"}, tok);
  FeatureMap fv = model.encode_video(random_frames(rng, 8, cfg.d_input), 8.0);
  FeatureMap fp = model.encode_text(prompt);
  auto [v2, p2] = model.fuse_early(fv, fp, prompt);
  CHECK(v2.values.get() == fv.values.get());
  CHECK(p2.values.get() == fp.values.get());
}

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  cfg.heads = 3;  // does not divide d_model = 8
  CHECK_THROWS_AS(Model(cfg, 0), std::invalid_argument);
  cfg = tiny_config();
  cfg.pyramid_levels = 0;
  CHECK_THROWS_AS(Model(cfg, 0), std::invalid_argument);
}
