// The model: token embedding table, f-gram transformer, main causal
// transformer, prediction head. Forward, analytic backward, and the
// causal-LM objective, templated on the compute scalar (float for runs,
// double for gradient checking).
//
// Blocks are pre-norm: x += attn(ln1(x)); x += ffw(ln2(x)); a final norm
// closes each stack. The main stack adds a learned absolute position row per
// token and applies a causal mask. The f-gram stack is the same block design
// with its own position table of n rows; its output is the last-position
// vector, which becomes the input embedding of the matched token.
//
// Checkpoint format ("SCNM"): config block (u32 d_model, u32 n_layers,
// u32 ffw_size, u32 n_heads, u32 max_seq_len, u32 vocab_size,
// u32 fgram_n_max, u8 weight_tying, u8 precision dtype, u32 fgram_n_layers),
// then one record per named tensor:
// [u16 name len][name][u8 dtype][u8 rank][rank x u64 dims][row-major data LE].
#pragma once

#include <Eigen/Dense>
#include <map>

#include "scone/matcher.hpp"

namespace scone {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 2;        // main stack depth
  std::uint32_t ffw_size = 256;
  std::uint32_t n_heads = 2;
  std::uint32_t max_seq_len = 128;   // N_max
  std::uint32_t vocab_size = 256;
  std::uint32_t fgram_n_max = 3;     // n: longest f-gram the model accepts
  std::uint32_t fgram_n_layers = 0;  // 0 = no f-gram stack (plain baseline)
  bool weight_tying = false;
  Dtype precision = Dtype::f32;

  void validate() const {
    require(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0,
            "ModelConfig: d_model must be divisible by n_heads");
    require(ffw_size >= d_model, "ModelConfig: ffw_size must be >= d_model");
    require(max_seq_len >= 2, "ModelConfig: max_seq_len must be >= 2");
    require(vocab_size >= 2, "ModelConfig: vocab_size must be >= 2");
    require(fgram_n_max >= 2 && fgram_n_max <= 8, "ModelConfig: fgram_n_max must be in [2,8]");
    require(precision == Dtype::f32 || precision == Dtype::f64,
            "ModelConfig: precision must be fp32 or fp64");
  }
  bool has_fgram_stack() const { return fgram_n_layers > 0; }
};

template <typename Scalar>
struct BlockParams {
  Mat<Scalar> ln1_gain, ln1_bias;          // 1 x d
  Mat<Scalar> wq, wk, wv, wo;              // d x d
  Mat<Scalar> bq, bk, bv, bo;              // 1 x d
  Mat<Scalar> ln2_gain, ln2_bias;          // 1 x d
  Mat<Scalar> ffw_in_w, ffw_out_w;         // d x ffw, ffw x d
  Mat<Scalar> ffw_in_b, ffw_out_b;         // 1 x ffw, 1 x d
};

template <typename Scalar>
struct StackParams {
  Mat<Scalar> position;                    // rows x d
  std::vector<BlockParams<Scalar>> blocks;
  Mat<Scalar> final_gain, final_bias;      // 1 x d
};

template <typename Scalar>
struct SconeModel {
  ModelConfig config;
  Mat<Scalar> token_embedding;             // V x d
  StackParams<Scalar> main_stack;          // position: N_max x d
  StackParams<Scalar> fgram_stack;         // position: n x d; empty when absent
  Mat<Scalar> head_w;                      // d x V; unused (0x0) when tied
  Mat<Scalar> head_b;                      // 1 x V
};

// Visits every learnable tensor in a fixed order; the same order drives
// initialization, the optimizer, serialization, and gradient checking.
template <typename Scalar, typename Fn>
void for_each_param(SconeModel<Scalar>& model, Fn&& fn) {
  fn("token_embedding", model.token_embedding);
  auto visit_stack = [&](const std::string& prefix, StackParams<Scalar>& stack) {
    fn(prefix + ".position", stack.position);
    for (std::size_t i = 0; i < stack.blocks.size(); ++i) {
      auto& b = stack.blocks[i];
      std::string p = prefix + ".block" + std::to_string(i);
      fn(p + ".ln1.gain", b.ln1_gain);
      fn(p + ".ln1.bias", b.ln1_bias);
      fn(p + ".attn.wq", b.wq);
      fn(p + ".attn.bq", b.bq);
      fn(p + ".attn.wk", b.wk);
      fn(p + ".attn.bk", b.bk);
      fn(p + ".attn.wv", b.wv);
      fn(p + ".attn.bv", b.bv);
      fn(p + ".attn.wo", b.wo);
      fn(p + ".attn.bo", b.bo);
      fn(p + ".ln2.gain", b.ln2_gain);
      fn(p + ".ln2.bias", b.ln2_bias);
      fn(p + ".ffw.in_w", b.ffw_in_w);
      fn(p + ".ffw.in_b", b.ffw_in_b);
      fn(p + ".ffw.out_w", b.ffw_out_w);
      fn(p + ".ffw.out_b", b.ffw_out_b);
    }
    fn(prefix + ".final.gain", stack.final_gain);
    fn(prefix + ".final.bias", stack.final_bias);
  };
  visit_stack("main", model.main_stack);
  if (model.config.has_fgram_stack()) visit_stack("fgram", model.fgram_stack);
  if (!model.config.weight_tying) fn("head.w", model.head_w);
  fn("head.b", model.head_b);
}

template <typename Scalar, typename Fn>
void for_each_param(const SconeModel<Scalar>& model, Fn&& fn) {
  for_each_param(const_cast<SconeModel<Scalar>&>(model),
                 [&](const std::string& name, Mat<Scalar>& m) {
                   fn(name, static_cast<const Mat<Scalar>&>(m));
                 });
}

template <typename Scalar>
std::vector<Mat<Scalar>*> param_list(SconeModel<Scalar>& model) {
  std::vector<Mat<Scalar>*> out;
  for_each_param(model, [&](const std::string&, Mat<Scalar>& m) { out.push_back(&m); });
  return out;
}

template <typename Scalar>
std::uint64_t param_count(const SconeModel<Scalar>& model) {
  std::uint64_t n = 0;
  for_each_param(model, [&](const std::string&, const Mat<Scalar>& m) { n += m.size(); });
  return n;
}

namespace detail {

template <typename Scalar>
void shape_stack(StackParams<Scalar>& stack, const ModelConfig& cfg, std::uint32_t layers,
                 std::uint32_t position_rows) {
  std::uint32_t d = cfg.d_model, f = cfg.ffw_size;
  stack.position.setZero(position_rows, d);
  stack.blocks.resize(layers);
  for (auto& b : stack.blocks) {
    b.ln1_gain.setZero(1, d);
    b.ln1_bias.setZero(1, d);
    b.wq.setZero(d, d);
    b.wk.setZero(d, d);
    b.wv.setZero(d, d);
    b.wo.setZero(d, d);
    b.bq.setZero(1, d);
    b.bk.setZero(1, d);
    b.bv.setZero(1, d);
    b.bo.setZero(1, d);
    b.ln2_gain.setZero(1, d);
    b.ln2_bias.setZero(1, d);
    b.ffw_in_w.setZero(d, f);
    b.ffw_in_b.setZero(1, f);
    b.ffw_out_w.setZero(f, d);
    b.ffw_out_b.setZero(1, d);
  }
  stack.final_gain.setZero(1, d);
  stack.final_bias.setZero(1, d);
}

}  // namespace detail

// All-zero model of the configured shape.
template <typename Scalar>
SconeModel<Scalar> zero_model(const ModelConfig& cfg) {
  cfg.validate();
  SconeModel<Scalar> m;
  m.config = cfg;
  m.token_embedding.setZero(cfg.vocab_size, cfg.d_model);
  detail::shape_stack(m.main_stack, cfg, cfg.n_layers, cfg.max_seq_len);
  if (cfg.has_fgram_stack())
    detail::shape_stack(m.fgram_stack, cfg, cfg.fgram_n_layers, cfg.fgram_n_max);
  if (!cfg.weight_tying) m.head_w.setZero(cfg.d_model, cfg.vocab_size);
  m.head_b.setZero(1, cfg.vocab_size);
  return m;
}

// Model-shaped zero structure; used for gradients and optimizer moments.
template <typename Scalar>
SconeModel<Scalar> zeros_like(const SconeModel<Scalar>& model) {
  return zero_model<Scalar>(model.config);
}

// Gaussian(0, 0.02) weights, zero biases, unit norm gains; the draw order is
// the parameter visit order, so a seed pins every weight.
template <typename Scalar>
SconeModel<Scalar> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  SconeModel<Scalar> m = zero_model<Scalar>(cfg);
  Rng rng(seed);
  for_each_param(m, [&](const std::string& name, Mat<Scalar>& p) {
    bool is_gain = name.ends_with(".gain");
    bool is_bias = name.ends_with(".bias") || name.ends_with("_b") ||
                   name.ends_with(".bq") || name.ends_with(".bk") ||
                   name.ends_with(".bv") || name.ends_with(".bo") || name == "head.b";
    if (is_gain) {
      p.setOnes();
    } else if (is_bias) {
      p.setZero();
    } else {
      for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j)
          p(i, j) = static_cast<Scalar>(rng.normal() * 0.02);
    }
  });
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward primitives.

namespace detail {

inline constexpr double kLnEps = 1e-5;

template <typename Scalar>
struct LayerNormTrace {
  Mat<Scalar> out;
  std::vector<Scalar> mean, rstd;  // per row
};

template <typename Scalar>
LayerNormTrace<Scalar> layer_norm(const Mat<Scalar>& x, const Mat<Scalar>& gain,
                                  const Mat<Scalar>& bias) {
  LayerNormTrace<Scalar> t;
  Eigen::Index m = x.rows(), d = x.cols();
  t.out.resize(m, d);
  t.mean.resize(m);
  t.rstd.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    Scalar mu = x.row(i).mean();
    Scalar var = (x.row(i).array() - mu).square().sum() / static_cast<Scalar>(d);
    Scalar rstd = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLnEps));
    t.mean[i] = mu;
    t.rstd[i] = rstd;
    t.out.row(i) =
        (((x.row(i).array() - mu) * rstd) * gain.row(0).array() + bias.row(0).array()).matrix();
  }
  return t;
}

// dx from dy; accumulates parameter gradients in place.
template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& x, const LayerNormTrace<Scalar>& t,
                                const Mat<Scalar>& gain, const Mat<Scalar>& dy,
                                Mat<Scalar>& dgain, Mat<Scalar>& dbias) {
  Eigen::Index m = x.rows(), d = x.cols();
  Mat<Scalar> dx(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    auto xhat = ((x.row(i).array() - t.mean[i]) * t.rstd[i]).eval();
    dgain.row(0).array() += dy.row(i).array() * xhat;
    dbias.row(0).array() += dy.row(i).array();
    auto dxhat = (dy.row(i).array() * gain.row(0).array()).eval();
    Scalar m1 = dxhat.mean();
    Scalar m2 = (dxhat * xhat).mean();
    dx.row(i) = (t.rstd[i] * (dxhat - m1 - xhat * m2)).matrix();
  }
  return dx;
}

template <typename Scalar>
Scalar gelu_one(Scalar x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  double xd = static_cast<double>(x);
  return static_cast<Scalar>(0.5 * xd * (1.0 + std::tanh(c * (xd + a * xd * xd * xd))));
}

template <typename Scalar>
Scalar gelu_grad_one(Scalar x) {
  constexpr double c = 0.7978845608028654;
  constexpr double a = 0.044715;
  double xd = static_cast<double>(x);
  double u = c * (xd + a * xd * xd * xd);
  double th = std::tanh(u);
  double sech2 = 1.0 - th * th;
  return static_cast<Scalar>(0.5 * (1.0 + th) + 0.5 * xd * sech2 * c * (1.0 + 3.0 * a * xd * xd));
}

template <typename Scalar>
struct BlockTrace {
  Mat<Scalar> input;                       // x entering the block
  LayerNormTrace<Scalar> ln1;
  Mat<Scalar> q, k, v;                     // m x d
  std::vector<Mat<Scalar>> probs;          // per head, m x m causal row-softmax
  Mat<Scalar> att_mix;                     // m x d, heads concatenated
  Mat<Scalar> after_attn;                  // x + attention output
  LayerNormTrace<Scalar> ln2;
  Mat<Scalar> ffw_pre;                     // m x ffw
  Mat<Scalar> ffw_act;                     // m x ffw
};

template <typename Scalar>
struct StackTrace {
  Mat<Scalar> input;                       // embeddings + position
  std::vector<BlockTrace<Scalar>> blocks;
  Mat<Scalar> pre_final;                   // x entering the final norm
  LayerNormTrace<Scalar> final_ln;
};

// Causal attention + feed-forward for one block. Row i of the score matrix
// only ever reads keys j <= i, which keeps every output a bit-exact function
// of its prefix.
template <typename Scalar>
Mat<Scalar> block_forward(const BlockParams<Scalar>& p, const Mat<Scalar>& x,
                          std::uint32_t n_heads, BlockTrace<Scalar>* trace) {
  Eigen::Index m = x.rows(), d = x.cols();
  Eigen::Index dh = d / n_heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  auto ln1 = layer_norm(x, p.ln1_gain, p.ln1_bias);
  Mat<Scalar> q = (ln1.out * p.wq).rowwise() + p.bq.row(0);
  Mat<Scalar> k = (ln1.out * p.wk).rowwise() + p.bk.row(0);
  Mat<Scalar> v = (ln1.out * p.wv).rowwise() + p.bv.row(0);

  Mat<Scalar> att_mix(m, d);
  std::vector<Mat<Scalar>> probs;
  probs.reserve(n_heads);
  for (std::uint32_t h = 0; h < n_heads; ++h) {
    auto qh = q.middleCols(h * dh, dh);
    auto kh = k.middleCols(h * dh, dh);
    auto vh = v.middleCols(h * dh, dh);
    Mat<Scalar> scores = qh * kh.transpose() * scale;  // m x m
    Mat<Scalar> prob = Mat<Scalar>::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      Scalar mx = scores(i, 0);
      for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
      Scalar sum = 0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        Scalar e = std::exp(scores(i, j) - mx);
        prob(i, j) = e;
        sum += e;
      }
      for (Eigen::Index j = 0; j <= i; ++j) prob(i, j) /= sum;
    }
    att_mix.middleCols(h * dh, dh) = prob * vh;
    if (trace) probs.push_back(std::move(prob));
  }
  Mat<Scalar> after_attn = x + ((att_mix * p.wo).rowwise() + p.bo.row(0)).matrix();

  auto ln2 = layer_norm(after_attn, p.ln2_gain, p.ln2_bias);
  Mat<Scalar> pre = (ln2.out * p.ffw_in_w).rowwise() + p.ffw_in_b.row(0);
  Mat<Scalar> act(pre.rows(), pre.cols());
  for (Eigen::Index i = 0; i < pre.rows(); ++i)
    for (Eigen::Index j = 0; j < pre.cols(); ++j) act(i, j) = gelu_one(pre(i, j));
  Mat<Scalar> out = after_attn + ((act * p.ffw_out_w).rowwise() + p.ffw_out_b.row(0)).matrix();

  if (trace) {
    trace->input = x;
    trace->ln1 = std::move(ln1);
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->probs = std::move(probs);
    trace->att_mix = std::move(att_mix);
    trace->after_attn = std::move(after_attn);
    trace->ln2 = std::move(ln2);
    trace->ffw_pre = std::move(pre);
    trace->ffw_act = std::move(act);
  }
  return out;
}

template <typename Scalar>
Mat<Scalar> block_backward(const BlockParams<Scalar>& p, const BlockTrace<Scalar>& t,
                           std::uint32_t n_heads, const Mat<Scalar>& dout,
                           BlockParams<Scalar>& g) {
  Eigen::Index m = t.input.rows(), d = t.input.cols();
  Eigen::Index dh = d / n_heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  // Feed-forward branch.
  Mat<Scalar> dffw_out = dout;  // gradient of (act * W2 + b2)
  g.ffw_out_b.row(0) += dffw_out.colwise().sum();
  g.ffw_out_w += t.ffw_act.transpose() * dffw_out;
  Mat<Scalar> dact = dffw_out * p.ffw_out_w.transpose();
  Mat<Scalar> dpre(dact.rows(), dact.cols());
  for (Eigen::Index i = 0; i < dact.rows(); ++i)
    for (Eigen::Index j = 0; j < dact.cols(); ++j)
      dpre(i, j) = dact(i, j) * gelu_grad_one(t.ffw_pre(i, j));
  g.ffw_in_b.row(0) += dpre.colwise().sum();
  g.ffw_in_w += t.ln2.out.transpose() * dpre;
  Mat<Scalar> dln2_out = dpre * p.ffw_in_w.transpose();
  Mat<Scalar> dafter_attn =
      dout + layer_norm_backward(t.after_attn, t.ln2, p.ln2_gain, dln2_out, g.ln2_gain,
                                 g.ln2_bias);

  // Attention branch.
  Mat<Scalar> datt_out = dafter_attn;  // gradient of (att_mix * Wo + bo)
  g.bo.row(0) += datt_out.colwise().sum();
  g.wo += t.att_mix.transpose() * datt_out;
  Mat<Scalar> datt_mix = datt_out * p.wo.transpose();

  Mat<Scalar> dq = Mat<Scalar>::Zero(m, d);
  Mat<Scalar> dk = Mat<Scalar>::Zero(m, d);
  Mat<Scalar> dv = Mat<Scalar>::Zero(m, d);
  for (std::uint32_t h = 0; h < n_heads; ++h) {
    auto qh = t.q.middleCols(h * dh, dh);
    auto kh = t.k.middleCols(h * dh, dh);
    auto vh = t.v.middleCols(h * dh, dh);
    const Mat<Scalar>& prob = t.probs[h];
    auto doh = datt_mix.middleCols(h * dh, dh);
    Mat<Scalar> dprob = doh * vh.transpose();           // m x m; only j<=i used
    dv.middleCols(h * dh, dh) = prob.transpose() * doh;
    Mat<Scalar> dscores = Mat<Scalar>::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      Scalar dot = 0;
      for (Eigen::Index j = 0; j <= i; ++j) dot += prob(i, j) * dprob(i, j);
      for (Eigen::Index j = 0; j <= i; ++j)
        dscores(i, j) = prob(i, j) * (dprob(i, j) - dot);
    }
    dq.middleCols(h * dh, dh) = dscores * kh * scale;
    dk.middleCols(h * dh, dh) = dscores.transpose() * qh * scale;
  }
  g.bq.row(0) += dq.colwise().sum();
  g.bk.row(0) += dk.colwise().sum();
  g.bv.row(0) += dv.colwise().sum();
  g.wq += t.ln1.out.transpose() * dq;
  g.wk += t.ln1.out.transpose() * dk;
  g.wv += t.ln1.out.transpose() * dv;
  Mat<Scalar> dln1_out =
      dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
  Mat<Scalar> dx =
      dafter_attn + layer_norm_backward(t.input, t.ln1, p.ln1_gain, dln1_out, g.ln1_gain,
                                        g.ln1_bias);
  return dx;
}

// input: embeddings + position rows, already summed.
template <typename Scalar>
Mat<Scalar> stack_forward(const StackParams<Scalar>& stack, const ModelConfig& cfg,
                          Mat<Scalar> input, StackTrace<Scalar>* trace) {
  Mat<Scalar> x = std::move(input);
  if (trace) {
    trace->input = x;
    trace->blocks.resize(stack.blocks.size());
  }
  for (std::size_t b = 0; b < stack.blocks.size(); ++b)
    x = block_forward(stack.blocks[b], x, cfg.n_heads, trace ? &trace->blocks[b] : nullptr);
  auto fin = layer_norm(x, stack.final_gain, stack.final_bias);
  if (trace) {
    trace->pre_final = std::move(x);
    trace->final_ln = fin;
  }
  return fin.out;
}

// dy on the stack output; returns gradient on the stack input.
template <typename Scalar>
Mat<Scalar> stack_backward(const StackParams<Scalar>& stack, const ModelConfig& cfg,
                           const StackTrace<Scalar>& trace, const Mat<Scalar>& dy,
                           StackParams<Scalar>& g) {
  Mat<Scalar> dx = layer_norm_backward(trace.pre_final, trace.final_ln, stack.final_gain, dy,
                                       g.final_gain, g.final_bias);
  for (std::size_t b = stack.blocks.size(); b-- > 0;)
    dx = block_backward(stack.blocks[b], trace.blocks[b], cfg.n_heads, dx, g.blocks[b]);
  return dx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// f-gram transformer.

// Contextual embedding for one f-gram key: token embeddings plus the f-gram
// position rows, through the f-gram stack, last-position output.
template <typename Scalar>
Mat<Scalar> fgram_forward(const SconeModel<Scalar>& model, std::span<const TokenId> key,
                          detail::StackTrace<Scalar>* trace = nullptr) {
  const auto& cfg = model.config;
  require(cfg.has_fgram_stack(), "fgram_forward: model has no f-gram stack");
  require(key.size() >= 2 && key.size() <= cfg.fgram_n_max,
          "fgram_forward: key length " + std::to_string(key.size()) + " outside [2, " +
              std::to_string(cfg.fgram_n_max) + "]");
  Eigen::Index L = static_cast<Eigen::Index>(key.size());
  Mat<Scalar> input(L, cfg.d_model);
  for (Eigen::Index t = 0; t < L; ++t) {
    require(key[t] < cfg.vocab_size, "fgram_forward: token id out of range");
    input.row(t) = model.token_embedding.row(key[t]) + model.fgram_stack.position.row(t);
  }
  Mat<Scalar> out = detail::stack_forward(model.fgram_stack, cfg, std::move(input), trace);
  return out.row(L - 1);
}

// ---------------------------------------------------------------------------
// SCONE embedding (the training/inference split of the method).

enum class EmbedMode { baseline, live, store };

inline const char* embed_mode_name(EmbedMode m) {
  switch (m) {
    case EmbedMode::baseline: return "baseline";
    case EmbedMode::live: return "scone-live";
    case EmbedMode::store: return "scone-store";
  }
  return "?";
}

struct NoStore {
  std::vector<float> get(std::span<const TokenId>) const {
    throw ContractError("scone_embed: store mode requires a store");
  }
};

// Per-position input embeddings: the token table row where tags[i] == 1,
// otherwise the f-gram vector for the span ending at i, computed live or
// fetched from a baked store. Baseline mode ignores tags entirely.
template <typename Scalar, typename StoreLike = NoStore>
Mat<Scalar> scone_embed(const SconeModel<Scalar>& model, const TokenSequence& seq,
                        const MatchTags& tags, EmbedMode mode,
                        const StoreLike* store = nullptr) {
  const auto& cfg = model.config;
  Eigen::Index m = static_cast<Eigen::Index>(seq.size());
  require(m >= 1, "scone_embed: empty sequence");
  if (mode != EmbedMode::baseline)
    require(tags.size() == seq.size(), "scone_embed: tags length mismatch");
  if (mode == EmbedMode::store)
    require(store != nullptr, "scone_embed: store mode requires a store");

  Mat<Scalar> out(m, cfg.d_model);
  // Live f-gram outputs are cached per distinct key within this call.
  NGramMap cache;
  std::vector<Mat<Scalar>> cached;
  for (Eigen::Index i = 0; i < m; ++i) {
    std::uint32_t len = mode == EmbedMode::baseline ? 1 : tags.lengths[i];
    if (len <= 1) {
      require(seq[i] < cfg.vocab_size, "scone_embed: token id out of range");
      out.row(i) = model.token_embedding.row(seq[i]);
      continue;
    }
    std::span<const TokenId> key(seq.tokens.data() + (i + 1 - len), len);
    if (mode == EmbedMode::live) {
      std::uint64_t& slot = cache.find_or_insert(key, cached.size());
      if (slot == cached.size()) cached.push_back(fgram_forward(model, key));
      out.row(i) = cached[slot].row(0);
    } else {
      std::vector<float> vec = store->get(key);  // throws on a store miss
      require(vec.size() == cfg.d_model, "scone_embed: store vector dimension mismatch");
      for (Eigen::Index c = 0; c < out.cols(); ++c)
        out(i, c) = static_cast<Scalar>(vec[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Main model forward.

template <typename Scalar>
Mat<Scalar> logits_from_embeddings(const SconeModel<Scalar>& model,
                                   const Mat<Scalar>& embeddings,
                                   detail::StackTrace<Scalar>* trace = nullptr) {
  const auto& cfg = model.config;
  Eigen::Index m = embeddings.rows();
  require(m >= 1 && m <= cfg.max_seq_len,
          "main_forward: sequence length " + std::to_string(m) + " outside [1, " +
              std::to_string(cfg.max_seq_len) + "]");
  Mat<Scalar> input = embeddings + model.main_stack.position.topRows(m);
  Mat<Scalar> y = detail::stack_forward(model.main_stack, cfg, std::move(input), trace);
  if (cfg.weight_tying)
    return ((y * model.token_embedding.transpose()).rowwise() + model.head_b.row(0)).eval();
  return ((y * model.head_w).rowwise() + model.head_b.row(0)).eval();
}

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& logits) {
  Mat<Scalar> probs(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Scalar mx = logits.row(i).maxCoeff();
    auto e = (logits.row(i).array() - mx).exp().eval();
    probs.row(i) = (e / e.sum()).matrix();
  }
  return probs;
}

// Next-token distributions for every prefix of the embedded sequence. Row t
// is the distribution after prefix length t+1; it depends only on positions
// <= t through the causal mask.
template <typename Scalar>
Mat<Scalar> main_forward(const SconeModel<Scalar>& model, const Mat<Scalar>& embeddings) {
  return softmax_rows(logits_from_embeddings(model, embeddings));
}

// ---------------------------------------------------------------------------
// Causal LM loss and gradients.

template <typename Scalar>
struct LossStats {
  double loss_sum = 0;          // summed next-token cross-entropy, nats
  std::uint64_t positions = 0;  // predicted positions
  double mean() const { return positions ? loss_sum / static_cast<double>(positions) : 0.0; }
};

// Mean next-token cross-entropy over the batch, with gradients for every
// parameter accumulated into `grads` (model-shaped, caller-zeroed).
// Gradients flow through matched positions into the f-gram stack and the
// token embedding table; nothing is stopped.
template <typename Scalar>
LossStats<Scalar> lm_loss_and_grad(const SconeModel<Scalar>& model,
                                   std::span<const TokenSequence> seqs,
                                   std::span<const MatchTags> tags,
                                   SconeModel<Scalar>& grads,
                                   std::int64_t batch_id = -1) {
  const auto& cfg = model.config;
  require(!seqs.empty(), "lm_loss_and_grad: empty batch");
  require(seqs.size() == tags.size(), "lm_loss_and_grad: tags/sequences mismatch");
  for (const auto& s : seqs)
    require(s.size() >= 2, "lm_loss_and_grad: every sequence must have length >= 2");

  // Pass 1: collect the distinct f-gram keys of the batch and the positions
  // they serve, then run the f-gram stack once per key.
  struct KeyWork {
    NGramKey key;
    Mat<Scalar> embedding;           // 1 x d
    detail::StackTrace<Scalar> trace;
    Mat<Scalar> grad_out;            // 1 x d, summed over positions using this key
  };
  NGramMap key_slots;
  std::vector<KeyWork> keys;
  for (std::uint32_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    const auto& tag = tags[s];
    require(tag.size() == seq.size(), "lm_loss_and_grad: tags length mismatch");
    for (std::uint32_t i = 0; i < seq.size(); ++i) {
      std::uint32_t len = tag.lengths[i];
      if (len <= 1) continue;
      require(cfg.has_fgram_stack(),
              "lm_loss_and_grad: matched positions require an f-gram stack");
      std::span<const TokenId> key(seq.tokens.data() + (i + 1 - len), len);
      std::uint64_t& slot = key_slots.find_or_insert(key, keys.size());
      if (slot == keys.size()) {
        KeyWork w;
        w.key.assign(key.begin(), key.end());
        keys.push_back(std::move(w));
      }
    }
  }
  for (auto& w : keys) {
    w.embedding = fgram_forward(model, w.key, &w.trace);
    w.grad_out = Mat<Scalar>::Zero(1, cfg.d_model);
  }

  // Pass 2: per sequence, assemble inputs, forward, cross-entropy, backward.
  LossStats<Scalar> stats;
  for (std::uint32_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    Eigen::Index m = static_cast<Eigen::Index>(seq.size());
    require(m <= cfg.max_seq_len, "lm_loss_and_grad: sequence exceeds max_seq_len");
    stats.positions += seq.size() - 1;
  }

  double inv_positions = 1.0 / static_cast<double>(stats.positions);
  for (std::uint32_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    const auto& tag = tags[s];
    Eigen::Index m = static_cast<Eigen::Index>(seq.size());

    Mat<Scalar> emb(m, cfg.d_model);
    for (Eigen::Index i = 0; i < m; ++i) {
      std::uint32_t len = tag.lengths[i];
      if (len <= 1) {
        require(seq[i] < cfg.vocab_size, "lm_loss_and_grad: token id out of range");
        emb.row(i) = model.token_embedding.row(seq[i]);
      } else {
        std::span<const TokenId> key(seq.tokens.data() + (i + 1 - len), len);
        emb.row(i) = keys[*key_slots.find(key)].embedding.row(0);
      }
    }

    detail::StackTrace<Scalar> trace;
    Mat<Scalar> logits = logits_from_embeddings(model, emb, &trace);

    // Cross-entropy of each next token; rows 0..m-2 predict positions 1..m-1.
    Mat<Scalar> dlogits = Mat<Scalar>::Zero(m, cfg.vocab_size);
    for (Eigen::Index i = 0; i + 1 < m; ++i) {
      TokenId target = seq[i + 1];
      Scalar mx = logits.row(i).maxCoeff();
      auto shifted = (logits.row(i).array() - mx).eval();
      Scalar lse = std::log(shifted.exp().sum()) + mx;
      double ce = static_cast<double>(lse - logits(i, target));
      stats.loss_sum += ce;
      auto p = (logits.row(i).array() - lse).exp().eval();
      dlogits.row(i) = (p * static_cast<Scalar>(inv_positions)).matrix();
      dlogits(i, target) -= static_cast<Scalar>(inv_positions);
    }

    // Head backward.
    Mat<Scalar> dy;
    if (cfg.weight_tying) {
      grads.token_embedding += dlogits.transpose() * trace.final_ln.out;
      dy = dlogits * model.token_embedding;
    } else {
      grads.head_w += trace.final_ln.out.transpose() * dlogits;
      dy = dlogits * model.head_w.transpose();
    }
    grads.head_b.row(0) += dlogits.colwise().sum();

    Mat<Scalar> dinput =
        detail::stack_backward(model.main_stack, cfg, trace, dy, grads.main_stack);
    grads.main_stack.position.topRows(m) += dinput;

    for (Eigen::Index i = 0; i < m; ++i) {
      std::uint32_t len = tag.lengths[i];
      if (len <= 1) {
        grads.token_embedding.row(seq[i]) += dinput.row(i);
      } else {
        std::span<const TokenId> key(seq.tokens.data() + (i + 1 - len), len);
        keys[*key_slots.find(key)].grad_out.row(0) += dinput.row(i);
      }
    }
  }

  // Pass 3: backpropagate each distinct key once through the f-gram stack.
  for (auto& w : keys) {
    Eigen::Index L = static_cast<Eigen::Index>(w.key.size());
    Mat<Scalar> dy = Mat<Scalar>::Zero(L, cfg.d_model);
    dy.row(L - 1) = w.grad_out.row(0);
    Mat<Scalar> dinput =
        detail::stack_backward(model.fgram_stack, cfg, w.trace, dy, grads.fgram_stack);
    for (Eigen::Index t = 0; t < L; ++t) {
      grads.token_embedding.row(w.key[t]) += dinput.row(t);
      grads.fgram_stack.position.row(t) += dinput.row(t);
    }
  }

  if (!std::isfinite(stats.loss_sum))
    throw Error("non-finite loss in batch " + std::to_string(batch_id));
  return stats;
}

// Loss only (no gradients); shares the forward math via a throwaway tag path.
template <typename Scalar, typename StoreLike = NoStore>
LossStats<Scalar> lm_loss(const SconeModel<Scalar>& model, std::span<const TokenSequence> seqs,
                          std::span<const MatchTags> tags, EmbedMode mode = EmbedMode::live,
                          const StoreLike* store = nullptr) {
  LossStats<Scalar> stats;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    require(seq.size() >= 2, "lm_loss: every sequence must have length >= 2");
    Mat<Scalar> emb = scone_embed(model, seq, tags[s], mode, store);
    Mat<Scalar> logits = logits_from_embeddings(model, emb);
    Eigen::Index m = logits.rows();
    for (Eigen::Index i = 0; i + 1 < m; ++i) {
      TokenId target = seq[i + 1];
      Scalar mx = logits.row(i).maxCoeff();
      auto shifted = (logits.row(i).array() - mx).eval();
      Scalar lse = std::log(shifted.exp().sum()) + mx;
      stats.loss_sum += static_cast<double>(lse - logits(i, target));
      stats.positions++;
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoint IO.

namespace detail {

template <typename Scalar>
constexpr Dtype scalar_dtype() {
  if constexpr (std::is_same_v<Scalar, float>) return Dtype::f32;
  else return Dtype::f64;
}

}  // namespace detail

inline void encode_model_config(std::string& out, const ModelConfig& cfg) {
  put_u32(out, cfg.d_model);
  put_u32(out, cfg.n_layers);
  put_u32(out, cfg.ffw_size);
  put_u32(out, cfg.n_heads);
  put_u32(out, cfg.max_seq_len);
  put_u32(out, cfg.vocab_size);
  put_u32(out, cfg.fgram_n_max);
  put_u8(out, cfg.weight_tying ? 1 : 0);
  put_u8(out, static_cast<std::uint8_t>(cfg.precision));
  put_u32(out, cfg.fgram_n_layers);
}

inline ModelConfig decode_model_config(ByteReader& r) {
  ModelConfig cfg;
  cfg.d_model = r.u32();
  cfg.n_layers = r.u32();
  cfg.ffw_size = r.u32();
  cfg.n_heads = r.u32();
  cfg.max_seq_len = r.u32();
  cfg.vocab_size = r.u32();
  cfg.fgram_n_max = r.u32();
  cfg.weight_tying = r.u8() != 0;
  cfg.precision = static_cast<Dtype>(r.u8());
  cfg.fgram_n_layers = r.u32();
  return cfg;
}

template <typename Scalar>
std::string encode_checkpoint(const SconeModel<Scalar>& model) {
  require(detail::scalar_dtype<Scalar>() == model.config.precision,
          "encode_checkpoint: scalar type does not match config precision");
  std::string out;
  out.append("SCNM");
  encode_model_config(out, model.config);
  for_each_param(model, [&](const std::string& name, const Mat<Scalar>& p) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    put_u8(out, static_cast<std::uint8_t>(model.config.precision));
    put_u8(out, 2);  // rank: all parameters are matrices
    put_u64(out, static_cast<std::uint64_t>(p.rows()));
    put_u64(out, static_cast<std::uint64_t>(p.cols()));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        if constexpr (std::is_same_v<Scalar, float>) put_f32(out, p(i, j));
        else put_f64(out, p(i, j));
      }
  });
  return out;
}

template <typename Scalar>
void write_checkpoint(const std::filesystem::path& path, const SconeModel<Scalar>& model) {
  commit_file(path, encode_checkpoint(model));
}

inline ModelConfig peek_checkpoint_config(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  r.expect_magic("SCNM");
  return decode_model_config(r);
}

template <typename Scalar>
SconeModel<Scalar> decode_checkpoint(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  r.expect_magic("SCNM");
  ModelConfig cfg = decode_model_config(r);
  cfg.validate();
  require(detail::scalar_dtype<Scalar>() == cfg.precision,
          "decode_checkpoint: checkpoint precision is " + dtype_name(cfg.precision));
  SconeModel<Scalar> model = zero_model<Scalar>(cfg);

  std::map<std::string, Mat<Scalar>> tensors;
  while (!r.at_end()) {
    std::uint16_t name_len = r.u16();
    auto name_bytes = r.take(name_len);
    std::string name(reinterpret_cast<const char*>(name_bytes.data()), name_len);
    Dtype dtype = static_cast<Dtype>(r.u8());
    if (dtype != cfg.precision)
      throw ParseError("tensor " + name + " dtype mismatch", r.offset() - 1);
    std::uint8_t rank = r.u8();
    if (rank != 2) throw ParseError("tensor " + name + " has rank != 2", r.offset() - 1);
    std::uint64_t rows = r.u64(), cols = r.u64();
    Mat<Scalar> m(rows, cols);
    for (std::uint64_t i = 0; i < rows; ++i)
      for (std::uint64_t j = 0; j < cols; ++j) {
        if constexpr (std::is_same_v<Scalar, float>) m(i, j) = r.f32();
        else m(i, j) = r.f64();
      }
    if (!tensors.emplace(name, std::move(m)).second)
      throw ParseError("duplicate tensor " + name, r.offset());
  }

  for_each_param(model, [&](const std::string& name, Mat<Scalar>& p) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("checkpoint missing tensor " + name);
    if (it->second.rows() != p.rows() || it->second.cols() != p.cols())
      throw ValidationError("checkpoint tensor " + name + " has wrong shape");
    p = std::move(it->second);
    tensors.erase(it);
  });
  if (!tensors.empty())
    throw ValidationError("checkpoint has unexpected tensor " + tensors.begin()->first);
  return model;
}

template <typename Scalar>
SconeModel<Scalar> load_checkpoint(const std::filesystem::path& path) {
  auto data = read_file(path);
  return decode_checkpoint<Scalar>(data);
}

// Content digests used to tie baked artifacts to their inputs.
inline std::uint64_t fingerprint_vocab(const FGramVocabulary& vocab) {
  std::string bytes = encode_fgram_vocab(vocab);
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

template <typename Scalar>
std::uint64_t fingerprint_model(const SconeModel<Scalar>& model) {
  std::string bytes = encode_checkpoint(model);
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

}  // namespace scone
