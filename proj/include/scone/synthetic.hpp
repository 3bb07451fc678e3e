// Synthetic second-order Markov text. Each context (a, b) owns a small,
// deterministic set of candidate next tokens with skewed weights; candidates
// are drawn from a Zipf-like marginal so a modest top-S f-gram vocabulary
// covers most of the stream. Rows derive from (structure_seed, a, b) alone,
// so corpora with the same structure seed share one underlying process while
// different stream seeds give disjoint samples.
#pragma once

#include <unordered_map>

#include "scone/corpus.hpp"

namespace scone {

struct MarkovConfig {
  std::uint32_t vocab_size = 256;
  std::uint32_t support = 4;     // candidate next tokens per context
  double zipf_exponent = 1.1;    // skew of the candidate marginal
  std::uint64_t structure_seed = 1;
};

class MarkovSource {
 public:
  explicit MarkovSource(const MarkovConfig& cfg) : cfg_(cfg) {
    require(cfg.vocab_size >= 2, "MarkovSource: vocab_size must be >= 2");
    require(cfg.support >= 1 && cfg.support <= cfg.vocab_size,
            "MarkovSource: support must be in [1, vocab_size]");
    // Cumulative Zipf marginal over token ids.
    zipf_cum_.resize(cfg.vocab_size);
    double sum = 0;
    for (std::uint32_t t = 0; t < cfg.vocab_size; ++t) {
      sum += 1.0 / std::pow(static_cast<double>(t + 1), cfg.zipf_exponent);
      zipf_cum_[t] = sum;
    }
    for (double& c : zipf_cum_) c /= sum;
  }

  CorpusShard sample(std::uint64_t stream_seed, std::uint64_t n_tokens,
                     std::uint32_t seq_len) const {
    require(seq_len >= 2, "MarkovSource: seq_len must be >= 2");
    CorpusShard shard;
    Rng rng(stream_seed ^ 0x5eed5eed5eed5eedull);
    std::uint64_t remaining = n_tokens;
    while (remaining > 0) {
      std::uint32_t len = static_cast<std::uint32_t>(
          std::min<std::uint64_t>(seq_len, remaining));
      if (len < 2) break;  // drop a trailing fragment shorter than a bigram
      TokenSequence seq;
      seq.tokens.reserve(len);
      TokenId a = zipf_draw(rng), b = zipf_draw(rng);
      seq.tokens.push_back(a);
      seq.tokens.push_back(b);
      while (seq.tokens.size() < len) {
        TokenId next = draw_next(a, b, rng);
        seq.tokens.push_back(next);
        a = b;
        b = next;
      }
      remaining -= seq.tokens.size();
      shard.push(std::move(seq));
    }
    return shard;
  }

  // Entropy rate estimate in nats/token from a sampled stream; useful as the
  // optimal-perplexity floor in experiment logs.
  double conditional_entropy(std::uint64_t stream_seed, std::uint64_t n_tokens) const {
    Rng rng(stream_seed ^ 0x0e17aa11ull);
    TokenId a = zipf_draw(rng), b = zipf_draw(rng);
    double nats = 0;
    for (std::uint64_t i = 0; i < n_tokens; ++i) {
      const Row& row = row_for(a, b);
      std::uint32_t pick = pick_index(row, rng);
      nats -= std::log(row.prob[pick]);
      TokenId next = row.candidates[pick];
      a = b;
      b = next;
    }
    return nats / static_cast<double>(n_tokens);
  }

 private:
  struct Row {
    std::vector<TokenId> candidates;
    std::vector<double> prob;  // normalized
    std::vector<double> cum;
  };

  TokenId zipf_draw(Rng& rng) const {
    double u = rng.uniform();
    auto it = std::lower_bound(zipf_cum_.begin(), zipf_cum_.end(), u);
    return static_cast<TokenId>(it - zipf_cum_.begin());
  }

  const Row& row_for(TokenId a, TokenId b) const {
    std::uint64_t ctx = (static_cast<std::uint64_t>(a) << 32) | b;
    auto it = rows_.find(ctx);
    if (it != rows_.end()) return it->second;
    // Deterministic in (structure_seed, a, b); independent of visit order.
    Rng rng(cfg_.structure_seed ^ (ctx * 0x9e3779b97f4a7c15ull + 0x7f4a7c15ull));
    Row row;
    while (row.candidates.size() < cfg_.support) {
      TokenId cand = zipf_draw(rng);
      if (std::find(row.candidates.begin(), row.candidates.end(), cand) ==
          row.candidates.end())
        row.candidates.push_back(cand);
    }
    double sum = 0;
    for (std::uint32_t i = 0; i < cfg_.support; ++i) {
      double w = -std::log(1.0 - rng.uniform());  // exponential(1)
      row.prob.push_back(w);
      sum += w;
    }
    double acc = 0;
    for (double& p : row.prob) {
      p /= sum;
      acc += p;
      row.cum.push_back(acc);
    }
    row.cum.back() = 1.0;
    return rows_.emplace(ctx, std::move(row)).first->second;
  }

  std::uint32_t pick_index(const Row& row, Rng& rng) const {
    double u = rng.uniform();
    auto it = std::lower_bound(row.cum.begin(), row.cum.end(), u);
    return static_cast<std::uint32_t>(std::min<std::size_t>(
        static_cast<std::size_t>(it - row.cum.begin()), row.cum.size() - 1));
  }

  TokenId draw_next(TokenId a, TokenId b, Rng& rng) const {
    const Row& row = row_for(a, b);
    return row.candidates[pick_index(row, rng)];
  }

  MarkovConfig cfg_;
  std::vector<double> zipf_cum_;
  mutable std::unordered_map<std::uint64_t, Row> rows_;
};

}  // namespace scone
