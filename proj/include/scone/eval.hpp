// Evaluation: next-word prediction (baseline / live f-gram model / baked
// store), perplexity and bits-per-character, and forward-FLOPS accounting.
//
// The FLOPS breakdown, per layer per token: attention projections 2*4*d^2,
// attention scores+values 2*2*seq_len*d, feed-forward 2*2*d*ffw; plus logits
// 2*d*|V| per token. Embedding lookups cost zero, which is what makes
// store-served inference cost exactly the baseline's forward pass.
#pragma once

#include "scone/model.hpp"
#include "scone/store.hpp"

namespace scone {

// Distribution over the next token after the full sequence.
template <typename Scalar, typename StoreLike = NoStore>
Mat<Scalar> predict_next(const SconeModel<Scalar>& model, const TokenSequence& seq,
                         const MatchTags& tags, EmbedMode mode,
                         const StoreLike* store = nullptr) {
  Mat<Scalar> emb = scone_embed(model, seq, tags, mode, store);
  Mat<Scalar> probs = main_forward(model, emb);
  return probs.row(probs.rows() - 1);
}

// Convenience entry that performs its own longest-match tagging against any
// membership oracle (an FGramIndex, or a store).
template <typename Scalar, typename Oracle, typename StoreLike = NoStore>
Mat<Scalar> predict_next_tagging(const SconeModel<Scalar>& model, const Oracle& oracle,
                                 const TokenSequence& seq, EmbedMode mode,
                                 const StoreLike* store = nullptr) {
  MatchTags tags = tag_sequence(oracle, seq);
  return predict_next(model, seq, tags, mode, store);
}

struct EvalReport {
  std::string corpus;
  EmbedMode mode = EmbedMode::baseline;
  std::uint64_t token_count = 0;      // predicted positions
  double mean_cross_entropy = 0;      // nats per token
  double perplexity = 0;              // exp(mean_cross_entropy)
  std::optional<double> bits_per_character;
  std::uint64_t character_count = 0;

  static EvalReport from_loss(std::string corpus, EmbedMode mode, double loss_sum,
                              std::uint64_t positions) {
    EvalReport r;
    r.corpus = std::move(corpus);
    r.mode = mode;
    r.token_count = positions;
    r.mean_cross_entropy = positions ? loss_sum / static_cast<double>(positions) : 0.0;
    r.perplexity = std::exp(r.mean_cross_entropy);
    return r;
  }
};

template <typename Scalar, typename StoreLike = NoStore>
EvalReport perplexity(const SconeModel<Scalar>& model, EmbedMode mode,
                      const CorpusShard& corpus, std::span<const MatchTags> tags,
                      const StoreLike* store = nullptr, std::string corpus_name = "") {
  require(!corpus.sequences.empty(), "perplexity: empty corpus");
  auto stats = lm_loss(model, std::span<const TokenSequence>(corpus.sequences), tags, mode, store);
  return EvalReport::from_loss(std::move(corpus_name), mode, stats.loss_sum, stats.positions);
}

// BPC = total cross-entropy in bits / character count. char_counts aligns
// with the corpus sequences.
template <typename Scalar, typename StoreLike = NoStore>
EvalReport bits_per_character(const SconeModel<Scalar>& model, EmbedMode mode,
                              const CorpusShard& corpus, std::span<const MatchTags> tags,
                              std::span<const std::uint64_t> char_counts,
                              const StoreLike* store = nullptr, std::string corpus_name = "") {
  require(char_counts.size() == corpus.sequences.size(),
          "bits_per_character: char_counts must align with sequences");
  for (std::uint64_t c : char_counts)
    require(c > 0, "bits_per_character: character counts must be positive");
  EvalReport r = perplexity(model, mode, corpus, tags, store, std::move(corpus_name));
  std::uint64_t chars = 0;
  for (std::uint64_t c : char_counts) chars += c;
  double total_nats = r.mean_cross_entropy * static_cast<double>(r.token_count);
  r.character_count = chars;
  r.bits_per_character = (total_nats / std::log(2.0)) / static_cast<double>(chars);
  return r;
}

// The paper-style table reports one number per corpus plus an "Average"; it
// is ambiguous whether that averages corpora or tokens, so emit both.
struct EvalSummary {
  double corpus_average_perplexity = 0;  // mean of per-corpus perplexities
  double token_average_perplexity = 0;   // exp of token-weighted mean CE
};

inline EvalSummary summarize(std::span<const EvalReport> reports) {
  require(!reports.empty(), "summarize: no reports");
  double ppl_sum = 0, nats = 0;
  std::uint64_t tokens = 0;
  for (const auto& r : reports) {
    ppl_sum += r.perplexity;
    nats += r.mean_cross_entropy * static_cast<double>(r.token_count);
    tokens += r.token_count;
  }
  EvalSummary s;
  s.corpus_average_perplexity = ppl_sum / static_cast<double>(reports.size());
  s.token_average_perplexity = std::exp(nats / static_cast<double>(tokens));
  return s;
}

inline std::string eval_report_line(const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "corpus=%s mode=%s tokens=%llu ce_nats=%.6f ppl=%.6f",
                r.corpus.empty() ? "-" : r.corpus.c_str(), embed_mode_name(r.mode),
                static_cast<unsigned long long>(r.token_count), r.mean_cross_entropy,
                r.perplexity);
  std::string line = buf;
  if (r.bits_per_character) {
    std::snprintf(buf, sizeof(buf), " bpc=%.6f chars=%llu", *r.bits_per_character,
                  static_cast<unsigned long long>(r.character_count));
    line += buf;
  }
  return line;
}

// ---------------------------------------------------------------------------
// FLOPS accounting.

enum class FlopsMode { baseline, scone_store, scone_live_training };

struct FlopsReport {
  std::uint64_t attention_projections = 0;
  std::uint64_t attention_scores_values = 0;
  std::uint64_t feed_forward = 0;
  std::uint64_t logits = 0;
  std::uint64_t fgram_component = 0;  // zero at inference by construction
  std::uint64_t total() const {
    return attention_projections + attention_scores_values + feed_forward + logits +
           fgram_component;
  }
};

// Forward FLOPS for one sequence. In scone_live_training mode the f-gram
// term covers `matched_tokens` positions each running a key of
// `avg_key_len` tokens through the f-gram stack; both default to the
// worst case (every token matched at the longest length).
inline FlopsReport estimate_flops(const ModelConfig& cfg, std::uint64_t seq_len, FlopsMode mode,
                                  std::optional<std::uint64_t> matched_tokens = std::nullopt,
                                  std::optional<std::uint64_t> avg_key_len = std::nullopt) {
  require(seq_len >= 1 && seq_len <= cfg.max_seq_len,
          "estimate_flops: seq_len outside [1, max_seq_len]");
  const std::uint64_t d = cfg.d_model, ffw = cfg.ffw_size, v = cfg.vocab_size;
  const std::uint64_t L = cfg.n_layers;

  FlopsReport r;
  r.attention_projections = L * seq_len * 8 * d * d;
  r.attention_scores_values = L * seq_len * 4 * seq_len * d;
  r.feed_forward = L * seq_len * 4 * d * ffw;
  r.logits = seq_len * 2 * d * v;

  if (mode == FlopsMode::scone_live_training) {
    std::uint64_t matched = matched_tokens.value_or(seq_len);
    std::uint64_t key_len = avg_key_len.value_or(cfg.fgram_n_max);
    std::uint64_t Lf = cfg.fgram_n_layers;
    // Per matched token: a key_len-token sequence through the f-gram stack.
    r.fgram_component =
        matched * Lf * key_len * (8 * d * d + 4 * key_len * d + 4 * d * ffw);
  }
  return r;
}

inline std::string flops_report_line(const FlopsReport& r, FlopsMode mode) {
  const char* name = mode == FlopsMode::baseline ? "baseline"
                     : mode == FlopsMode::scone_store ? "scone-store"
                                                      : "scone-live-training";
  return std::string("mode=") + name +
         " attn_proj=" + std::to_string(r.attention_projections) +
         " attn_sv=" + std::to_string(r.attention_scores_values) +
         " ffw=" + std::to_string(r.feed_forward) + " logits=" + std::to_string(r.logits) +
         " fgram=" + std::to_string(r.fgram_component) + " total=" + std::to_string(r.total());
}

}  // namespace scone
