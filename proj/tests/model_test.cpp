#include "scone/model.hpp"

#include <gtest/gtest.h>

#include "scone/train.hpp"

namespace scone {
namespace {

ModelConfig tiny_config(std::uint32_t fgram_layers = 1) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.ffw_size = 16;
  cfg.n_heads = 2;
  cfg.max_seq_len = 6;
  cfg.vocab_size = 12;
  cfg.fgram_n_max = 3;
  cfg.fgram_n_layers = fgram_layers;
  cfg.precision = Dtype::f64;
  return cfg;
}

// ---------------------------------------------------------------------------
// Independent re-implementation of the forward math with plain loops; no
// Eigen, no shared code. Pre-norm blocks, causal softmax, tanh GELU,
// final norm, linear head.

using Row = std::vector<double>;
using Grid = std::vector<Row>;

Grid to_grid(const Mat<double>& m) {
  Grid g(m.rows(), Row(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

Row naive_layer_norm_row(const Row& x, const Row& gain, const Row& bias) {
  double mu = 0;
  for (double v : x) mu += v;
  mu /= x.size();
  double var = 0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= x.size();
  double rstd = 1.0 / std::sqrt(var + 1e-5);
  Row out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mu) * rstd * gain[j] + bias[j];
  return out;
}

Grid naive_matmul_bias(const Grid& x, const Grid& w, const Row& b) {
  Grid out(x.size(), Row(w[0].size(), 0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < w[0].size(); ++c) {
      double acc = b.empty() ? 0.0 : b[c];
      for (std::size_t j = 0; j < w.size(); ++j) acc += x[i][j] * w[j][c];
      out[i][c] = acc;
    }
  return out;
}

double naive_gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

Grid naive_stack(const StackParams<double>& p, std::uint32_t n_heads, Grid x) {
  std::size_t d = x[0].size();
  std::size_t dh = d / n_heads;
  for (const auto& blk : p.blocks) {
    Grid wq = to_grid(blk.wq), wk = to_grid(blk.wk), wv = to_grid(blk.wv), wo = to_grid(blk.wo);
    Row bq = to_grid(blk.bq)[0], bk = to_grid(blk.bk)[0], bv = to_grid(blk.bv)[0],
        bo = to_grid(blk.bo)[0];
    Row g1 = to_grid(blk.ln1_gain)[0], b1 = to_grid(blk.ln1_bias)[0];
    Grid ln1(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) ln1[i] = naive_layer_norm_row(x[i], g1, b1);
    Grid q = naive_matmul_bias(ln1, wq, bq);
    Grid k = naive_matmul_bias(ln1, wk, bk);
    Grid v = naive_matmul_bias(ln1, wv, bv);
    Grid mix(x.size(), Row(d, 0));
    for (std::uint32_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<double> scores(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += q[i][h * dh + c] * k[j][h * dh + c];
          scores[j] = s / std::sqrt(static_cast<double>(dh));
        }
        double mx = *std::max_element(scores.begin(), scores.end());
        double sum = 0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          sum += s;
        }
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t c = 0; c < dh; ++c)
            mix[i][h * dh + c] += scores[j] / sum * v[j][h * dh + c];
      }
    }
    Grid att = naive_matmul_bias(mix, wo, bo);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) x[i][c] += att[i][c];

    Row g2 = to_grid(blk.ln2_gain)[0], bb2 = to_grid(blk.ln2_bias)[0];
    Grid ln2(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) ln2[i] = naive_layer_norm_row(x[i], g2, bb2);
    Grid pre = naive_matmul_bias(ln2, to_grid(blk.ffw_in_w), to_grid(blk.ffw_in_b)[0]);
    for (auto& row : pre)
      for (double& vv : row) vv = naive_gelu(vv);
    Grid out = naive_matmul_bias(pre, to_grid(blk.ffw_out_w), to_grid(blk.ffw_out_b)[0]);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) x[i][c] += out[i][c];
  }
  Row gf = to_grid(p.final_gain)[0], bf = to_grid(p.final_bias)[0];
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = naive_layer_norm_row(x[i], gf, bf);
  return x;
}

Row naive_fgram_forward(const SconeModel<double>& model, const NGramKey& key) {
  Grid x(key.size(), Row(model.config.d_model));
  for (std::size_t t = 0; t < key.size(); ++t)
    for (std::uint32_t c = 0; c < model.config.d_model; ++c)
      x[t][c] = model.token_embedding(key[t], c) + model.fgram_stack.position(t, c);
  return naive_stack(model.fgram_stack, model.config.n_heads, std::move(x)).back();
}

Grid naive_logits(const SconeModel<double>& model, const Grid& emb) {
  Grid x = emb;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < x[i].size(); ++c) x[i][c] += model.main_stack.position(i, c);
  Grid y = naive_stack(model.main_stack, model.config.n_heads, std::move(x));
  return naive_matmul_bias(y, to_grid(model.head_w), to_grid(model.head_b)[0]);
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

// ---------------------------------------------------------------------------

TEST(FgramForward, ZeroModelGivesZeroVector) {
  auto model = zero_model<double>(tiny_config());
  NGramKey key{7, 3};
  Mat<double> out = fgram_forward(model, key);
  for (Eigen::Index c = 0; c < out.cols(); ++c) EXPECT_EQ(out(0, c), 0.0);
}

TEST(FgramForward, MatchesIndependentReimplementation) {
  auto model = init_model<double>(tiny_config(2), 321);
  for (const NGramKey& key : {NGramKey{7, 3}, NGramKey{0, 11, 5}, NGramKey{2, 2}}) {
    Mat<double> got = fgram_forward(model, key);
    Row want = naive_fgram_forward(model, key);
    for (Eigen::Index c = 0; c < got.cols(); ++c)
      EXPECT_LT(rel_diff(got(0, c), want[c]), 1e-6) << "key len " << key.size() << " col " << c;
  }
}

TEST(FgramForward, DifferentContextsGiveDifferentOutputs) {
  auto model = init_model<double>(tiny_config(), 99);
  Mat<double> a = fgram_forward(model, NGramKey{7, 3});
  Mat<double> b = fgram_forward(model, NGramKey{7, 3, 7});
  EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FgramForward, ContractErrors) {
  auto model = init_model<double>(tiny_config(), 1);
  EXPECT_THROW(fgram_forward(model, NGramKey{1}), ContractError);
  EXPECT_THROW(fgram_forward(model, NGramKey{1, 2, 3, 4}), ContractError);
  auto plain = init_model<double>(tiny_config(0), 1);
  EXPECT_THROW(fgram_forward(plain, NGramKey{1, 2}), ContractError);
}

TEST(SconeEmbed, BaselineIsExactRowGather) {
  auto model = init_model<double>(tiny_config(), 3);
  TokenSequence seq{{4, 9, 0, 4}};
  MatchTags tags;
  tags.lengths = {1, 1, 1, 1};
  tags.ids.assign(4, kNoFGram);
  Mat<double> emb = scone_embed(model, seq, tags, EmbedMode::live);
  for (int i = 0; i < 4; ++i)
    for (Eigen::Index c = 0; c < emb.cols(); ++c)
      EXPECT_EQ(emb(i, c), model.token_embedding(seq[i], c));
}

TEST(SconeEmbed, RoutesMatchedPositionsThroughFgramModel) {
  auto model = init_model<double>(tiny_config(), 5);
  TokenSequence seq{{7, 3, 7, 3, 7, 9}};
  MatchTags tags;
  tags.lengths = {1, 2, 2, 3, 2, 1};
  tags.ids = {kNoFGram, 1, 0, 2, 0, kNoFGram};
  Mat<double> emb = scone_embed(model, seq, tags, EmbedMode::live);
  // Fallback positions use the table.
  for (int i : {0, 5})
    for (Eigen::Index c = 0; c < emb.cols(); ++c)
      EXPECT_EQ(emb(i, c), model.token_embedding(seq[i], c));
  // Matched positions equal a direct f-gram forward of the span.
  Mat<double> e1 = fgram_forward(model, NGramKey{7, 3});
  Mat<double> e3 = fgram_forward(model, NGramKey{3, 7, 3});
  for (Eigen::Index c = 0; c < emb.cols(); ++c) {
    EXPECT_EQ(emb(1, c), e1(0, c));
    EXPECT_EQ(emb(3, c), e3(0, c));
  }
}

TEST(MainForward, RowsAreDistributions) {
  auto model = init_model<double>(tiny_config(0), 8);
  Rng rng(4);
  Mat<double> emb(5, 8);
  for (Eigen::Index i = 0; i < emb.rows(); ++i)
    for (Eigen::Index j = 0; j < emb.cols(); ++j) emb(i, j) = rng.normal();
  Mat<double> probs = main_forward(model, emb);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    EXPECT_NEAR(probs.row(i).sum(), 1.0, 1e-6);
    for (Eigen::Index j = 0; j < probs.cols(); ++j) EXPECT_GE(probs(i, j), 0.0);
  }
}

TEST(MainForward, CausalMaskPrefixBitIdentical) {
  auto model = init_model<float>([] {
    ModelConfig c = tiny_config(0);
    c.precision = Dtype::f32;
    return c;
  }(), 15);
  Rng rng(6);
  Mat<float> emb(6, 8);
  for (Eigen::Index i = 0; i < emb.rows(); ++i)
    for (Eigen::Index j = 0; j < emb.cols(); ++j) emb(i, j) = static_cast<float>(rng.normal());
  Mat<float> base = main_forward(model, emb);
  for (int t = 0; t + 1 < 6; ++t) {
    Mat<float> mutated = emb;
    mutated.row(t + 1).setConstant(0.5f);
    Mat<float> probs = main_forward(model, mutated);
    for (int i = 0; i <= t; ++i)
      for (Eigen::Index j = 0; j < probs.cols(); ++j)
        ASSERT_EQ(probs(i, j), base(i, j)) << "t " << t << " row " << i;
  }
}

TEST(MainForward, ZeroModelIsUniform) {
  auto model = zero_model<double>(tiny_config(0));
  Mat<double> emb = Mat<double>::Zero(3, 8);
  Mat<double> probs = main_forward(model, emb);
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index j = 0; j < probs.cols(); ++j)
      EXPECT_NEAR(probs(i, j), 1.0 / 12.0, 1e-15);
}

TEST(MainForward, LengthContract) {
  auto model = init_model<double>(tiny_config(0), 1);
  Mat<double> empty(0, 8), too_long = Mat<double>::Zero(7, 8).eval();
  EXPECT_THROW(main_forward(model, empty), ContractError);
  EXPECT_THROW(main_forward(model, too_long), ContractError);
}

TEST(MainForward, MatchesIndependentReimplementation) {
  auto model = init_model<double>(tiny_config(0), 777);
  Rng rng(8);
  Mat<double> emb(4, 8);
  for (Eigen::Index i = 0; i < emb.rows(); ++i)
    for (Eigen::Index j = 0; j < emb.cols(); ++j) emb(i, j) = rng.normal() * 0.5;
  Mat<double> logits = logits_from_embeddings(model, emb);
  Grid want = naive_logits(model, to_grid(emb));
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
      EXPECT_LT(rel_diff(logits(i, j), want[i][j]), 1e-6);
}

TEST(Loss, UniformModelGivesLogVocab) {
  auto model = zero_model<double>(tiny_config(0));
  std::vector<TokenSequence> seqs{TokenSequence{{5, 5}}};
  MatchTags tags;
  tags.lengths = {1, 1};
  tags.ids = {kNoFGram, kNoFGram};
  std::vector<MatchTags> all_tags{tags};
  auto stats = lm_loss(model, std::span<const TokenSequence>(seqs),
                       std::span<const MatchTags>(all_tags));
  EXPECT_NEAR(stats.mean(), std::log(12.0), 1e-12);
}

TEST(Loss, GradMatchesCentralDifferencesOnTinyModel) {
  auto report = grad_check(tiny_config(1), 1e-4, 5, 3);
  EXPECT_TRUE(report.passed) << "worst group " << report.worst_group << " err "
                             << report.max_rel_err;
  EXPECT_LT(report.max_rel_err, 1e-4);
}

TEST(Loss, TiedWeightsGradMatchesCentralDifferences) {
  ModelConfig cfg = tiny_config(1);
  cfg.weight_tying = true;
  auto report = grad_check(cfg, 1e-4, 6, 2);
  EXPECT_TRUE(report.passed) << report.worst_group << " " << report.max_rel_err;
}

TEST(GradCheck, ZeroToleranceAlwaysFails) {
  auto report = grad_check(tiny_config(1), 0.0, 5, 2);
  EXPECT_FALSE(report.passed);
}

TEST(GradCheck, ZeroParamsGiveHeadSymmetricGradients) {
  // With all-zero parameters every head sees identical (zero) inputs, so the
  // per-head blocks of the attention gradients must be identical.
  ModelConfig cfg = tiny_config(0);
  auto model = zero_model<double>(cfg);
  std::vector<TokenSequence> seqs{TokenSequence{{1, 2, 3, 4}}};
  MatchTags tags;
  tags.lengths.assign(4, 1);
  tags.ids.assign(4, kNoFGram);
  std::vector<MatchTags> all_tags{tags};
  auto grads = zeros_like(model);
  lm_loss_and_grad(model, std::span<const TokenSequence>(seqs),
                   std::span<const MatchTags>(all_tags), grads);
  const auto& b = grads.main_stack.blocks[0];
  Eigen::Index dh = cfg.d_model / cfg.n_heads;
  EXPECT_EQ((b.wq.leftCols(dh) - b.wq.rightCols(dh)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((b.wk.leftCols(dh) - b.wk.rightCols(dh)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((b.wv.leftCols(dh) - b.wv.rightCols(dh)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BaselineReduction, EmptyVocabularyMatchesPlainModelBitwise) {
  // A SCONE model whose batch has no matched positions must produce exactly
  // the plain model's loss and gradients on the shared parameters.
  ModelConfig scone_cfg = tiny_config(2);
  scone_cfg.precision = Dtype::f32;
  auto scone_model = init_model<float>(scone_cfg, 42);
  ModelConfig plain_cfg = scone_cfg;
  plain_cfg.fgram_n_layers = 0;
  auto plain_model = zero_model<float>(plain_cfg);
  plain_model.token_embedding = scone_model.token_embedding;
  plain_model.main_stack = scone_model.main_stack;
  plain_model.head_w = scone_model.head_w;
  plain_model.head_b = scone_model.head_b;

  Rng rng(7);
  std::vector<TokenSequence> seqs;
  std::vector<MatchTags> tags;
  for (int s = 0; s < 4; ++s) {
    TokenSequence seq;
    for (int i = 0; i < 6; ++i) seq.tokens.push_back(static_cast<TokenId>(rng.below(12)));
    MatchTags t;
    t.lengths.assign(6, 1);
    t.ids.assign(6, kNoFGram);
    seqs.push_back(std::move(seq));
    tags.push_back(std::move(t));
  }

  auto g_scone = zeros_like(scone_model);
  auto g_plain = zeros_like(plain_model);
  auto l_scone = lm_loss_and_grad(scone_model, std::span<const TokenSequence>(seqs),
                                  std::span<const MatchTags>(tags), g_scone);
  auto l_plain = lm_loss_and_grad(plain_model, std::span<const TokenSequence>(seqs),
                                  std::span<const MatchTags>(tags), g_plain);
  EXPECT_EQ(l_scone.loss_sum, l_plain.loss_sum);

  // Shared parameter gradients are bit-identical; f-gram gradients are zero.
  EXPECT_EQ((g_scone.token_embedding - g_plain.token_embedding).cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ((g_scone.head_w - g_plain.head_w).cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_EQ((g_scone.main_stack.position - g_plain.main_stack.position).cwiseAbs().maxCoeff(),
            0.0f);
  for (std::size_t b = 0; b < g_plain.main_stack.blocks.size(); ++b) {
    EXPECT_EQ((g_scone.main_stack.blocks[b].wq - g_plain.main_stack.blocks[b].wq)
                  .cwiseAbs()
                  .maxCoeff(),
              0.0f);
    EXPECT_EQ((g_scone.main_stack.blocks[b].ffw_in_w - g_plain.main_stack.blocks[b].ffw_in_w)
                  .cwiseAbs()
                  .maxCoeff(),
              0.0f);
  }
  for (const auto& blk : g_scone.fgram_stack.blocks)
    EXPECT_EQ(blk.wq.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Train, ZeroStepsLeavesModelBitIdentical) {
  ModelConfig cfg = tiny_config(1);
  cfg.precision = Dtype::f32;
  auto model = init_model<float>(cfg, 10);
  std::string before = encode_checkpoint(model);
  TrainOptions opts;
  opts.steps = 0;
  std::vector<TokenSequence> seqs{TokenSequence{{1, 2, 3}}};
  MatchTags t;
  t.lengths.assign(3, 1);
  t.ids.assign(3, kNoFGram);
  std::vector<MatchTags> tags{t};
  train(model, std::span<const TokenSequence>(seqs), std::span<const MatchTags>(tags), opts);
  EXPECT_EQ(encode_checkpoint(model), before);
}

TEST(Train, SameSeedSameTrace) {
  ModelConfig cfg = tiny_config(1);
  cfg.precision = Dtype::f32;
  Rng rng(20);
  std::vector<TokenSequence> seqs;
  std::vector<MatchTags> tags;
  FGramVocabulary vocab;
  vocab.n_max = 3;
  vocab.entries = {{{1, 2}, 5}, {{2, 3, 4}, 3}};
  FGramIndex index(vocab);
  for (int s = 0; s < 8; ++s) {
    TokenSequence seq;
    for (int i = 0; i < 6; ++i) seq.tokens.push_back(static_cast<TokenId>(rng.below(12)));
    tags.push_back(tag_sequence(index, seq));
    seqs.push_back(std::move(seq));
  }
  TrainOptions opts;
  opts.steps = 5;
  opts.batch_size = 4;
  opts.seed = 31;

  auto m1 = init_model<float>(cfg, 10);
  auto m2 = init_model<float>(cfg, 10);
  auto r1 = train(m1, std::span<const TokenSequence>(seqs), std::span<const MatchTags>(tags), opts);
  auto r2 = train(m2, std::span<const TokenSequence>(seqs), std::span<const MatchTags>(tags), opts);
  ASSERT_EQ(r1.loss_trace.size(), r2.loss_trace.size());
  for (std::size_t i = 0; i < r1.loss_trace.size(); ++i)
    EXPECT_EQ(r1.loss_trace[i], r2.loss_trace[i]);
  EXPECT_EQ(encode_checkpoint(m1), encode_checkpoint(m2));
}

TEST(Train, LossDecreasesOnRepetitiveData) {
  ModelConfig cfg = tiny_config(0);
  cfg.precision = Dtype::f32;
  auto model = init_model<float>(cfg, 12);
  std::vector<TokenSequence> seqs;
  std::vector<MatchTags> tags;
  for (int s = 0; s < 4; ++s) {
    TokenSequence seq{{1, 2, 3, 1, 2, 3}};
    MatchTags t;
    t.lengths.assign(6, 1);
    t.ids.assign(6, kNoFGram);
    seqs.push_back(seq);
    tags.push_back(t);
  }
  TrainOptions opts;
  opts.steps = 60;
  opts.batch_size = 4;
  opts.peak_lr = 1e-2;
  opts.seed = 5;
  auto result =
      train(model, std::span<const TokenSequence>(seqs), std::span<const MatchTags>(tags), opts);
  EXPECT_LT(result.loss_trace.back(), result.loss_trace.front() * 0.5);
}

TEST(Train, DivergenceAborts) {
  ModelConfig cfg = tiny_config(0);
  cfg.precision = Dtype::f32;
  auto model = init_model<float>(cfg, 8);
  std::vector<TokenSequence> seqs;
  std::vector<MatchTags> tags;
  Rng rng(2);
  for (int s = 0; s < 8; ++s) {
    TokenSequence seq;
    for (int i = 0; i < 6; ++i) seq.tokens.push_back(static_cast<TokenId>(rng.below(12)));
    MatchTags t;
    t.lengths.assign(6, 1);
    t.ids.assign(6, kNoFGram);
    seqs.push_back(std::move(seq));
    tags.push_back(std::move(t));
  }
  TrainOptions opts;
  opts.steps = 200;
  opts.batch_size = 4;
  opts.peak_lr = 50.0;  // guaranteed blow-up
  opts.divergence_patience = 5;
  opts.seed = 3;
  try {
    train(model, std::span<const TokenSequence>(seqs), std::span<const MatchTags>(tags), opts);
    FAIL() << "expected divergence abort";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripsBitExactly) {
  ModelConfig cfg = tiny_config(2);
  cfg.precision = Dtype::f32;
  auto model = init_model<float>(cfg, 55);
  std::string bytes = encode_checkpoint(model);
  auto loaded = decode_checkpoint<float>(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  EXPECT_EQ(encode_checkpoint(loaded), bytes);
  EXPECT_EQ(loaded.config.fgram_n_layers, 2u);
}

TEST(Checkpoint, PrecisionMismatchRejected) {
  auto model = init_model<double>(tiny_config(1), 3);
  std::string bytes = encode_checkpoint(model);
  EXPECT_THROW(decode_checkpoint<float>(std::span<const std::uint8_t>(
                   reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size())),
               ContractError);
}

TEST(Checkpoint, TruncationRejected) {
  auto model = init_model<double>(tiny_config(1), 3);
  std::string bytes = encode_checkpoint(model);
  std::string cut = bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(decode_checkpoint<double>(std::span<const std::uint8_t>(
                   reinterpret_cast<const std::uint8_t*>(cut.data()), cut.size())),
               Error);
}

TEST(ModelConfig, InvariantsEnforced) {
  ModelConfig cfg = tiny_config();
  cfg.n_heads = 3;  // 8 % 3 != 0
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = tiny_config();
  cfg.ffw_size = 4;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = tiny_config();
  cfg.fgram_n_max = 9;
  EXPECT_THROW(cfg.validate(), ContractError);
}

TEST(ModelConfig, FgramPositionTableHasExactlyNRows) {
  auto model = init_model<double>(tiny_config(1), 3);
  EXPECT_EQ(model.fgram_stack.position.rows(), 3);
  EXPECT_EQ(model.main_stack.position.rows(), 6);
}

}  // namespace
}  // namespace scone
