// Frequent n-gram ("f-gram") discovery.
//
// One counting scan per gram length k in [2, n_max]; the previous scan's
// table prunes candidates that cannot reach the frequency threshold, since a
// k-gram never occurs more often than its (k-1)-prefix or (k-1)-suffix.
// Survivors from all scans are ranked by count, top S become the f-gram
// vocabulary.
//
// Vocabulary file format ("SCNV"): u32 version, u32 n_max, u64 S,
// u64 min_count, u64 cutoff_frequency, then S records
// [u8 len][len x u32 token id][u64 count] in rank order.
#pragma once

#include <algorithm>

#include "scone/corpus.hpp"
#include "scone/ngram_map.hpp"

namespace scone {

struct CountTable {
  std::uint32_t k = 0;
  NGramMap counts;
};

// Counts every k-gram occurring at least min_count times. When prune_against
// (the filtered (k-1)-gram table) is given, windows whose (k-1)-prefix or
// (k-1)-suffix did not survive the previous scan are skipped outright; by the
// monotonicity argument above the result is identical to unpruned counting.
inline CountTable count_kgrams(const CorpusShard& corpus, std::uint32_t k,
                               std::uint64_t min_count,
                               const CountTable* prune_against = nullptr) {
  require(k >= 2, "count_kgrams: k must be >= 2");
  require(min_count >= 1, "count_kgrams: min_count must be >= 1");
  if (prune_against)
    require(prune_against->k == k - 1,
            "count_kgrams: prune table must hold (k-1)-grams, got k=" +
                std::to_string(prune_against->k));

  CountTable raw;
  raw.k = k;
  for (const auto& seq : corpus.sequences) {
    if (seq.size() < k) continue;
    const TokenId* base = seq.tokens.data();
    for (std::size_t j = 0; j + k <= seq.size(); ++j) {
      std::span<const TokenId> window(base + j, k);
      if (prune_against) {
        if (!prune_against->counts.contains(window.first(k - 1)) ||
            !prune_against->counts.contains(window.subspan(1)))
          continue;
      }
      raw.counts.find_or_insert(window, 0)++;
    }
  }
  if (min_count <= 1) return raw;

  CountTable filtered;
  filtered.k = k;
  raw.counts.for_each([&](std::span<const TokenId> key, std::uint64_t count) {
    if (count >= min_count) filtered.counts.insert(key, count);
  });
  return filtered;
}

// Merges per-shard tables by summing counts; associative and commutative on
// the multiset of (key, count) pairs. `min_count` re-filters the sum.
inline CountTable merge_count_tables(std::span<const CountTable> tables,
                                     std::uint64_t min_count = 1) {
  require(!tables.empty(), "merge_count_tables: need at least one table");
  CountTable sum;
  sum.k = tables.front().k;
  for (const auto& t : tables) {
    require(t.k == sum.k, "merge_count_tables: mixed gram lengths");
    t.counts.for_each([&](std::span<const TokenId> key, std::uint64_t count) {
      sum.counts.find_or_insert(key, 0) += count;
    });
  }
  if (min_count <= 1) return sum;
  CountTable filtered;
  filtered.k = sum.k;
  sum.counts.for_each([&](std::span<const TokenId> key, std::uint64_t count) {
    if (count >= min_count) filtered.counts.insert(key, count);
  });
  return filtered;
}

struct FGramEntry {
  NGramKey key;
  std::uint64_t count;
};

struct FGramVocabulary {
  std::vector<FGramEntry> entries;  // rank order: count desc, length asc, lexicographic asc
  std::uint32_t n_max = 0;
  std::uint64_t requested_size = 0;
  std::uint64_t min_count = 0;
  std::uint64_t cutoff_frequency = 0;  // count of the last admitted entry
  bool short_fall = false;             // fewer than requested_size candidates survived

  std::uint64_t size() const { return entries.size(); }
};

// Rank order. Ties on count break toward shorter grams, then ascending
// token-id order; a strict total order, so top-S prefixes nest as S grows.
inline bool fgram_rank_less(const NGramKey& a, std::uint64_t ca, const NGramKey& b,
                            std::uint64_t cb) {
  if (ca != cb) return ca > cb;
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

// min_count_first_scan lets the k=2 scan run at a lower threshold (the
// published procedure only thresholds subsequent scans); pruning stays exact
// for any value <= min_count because a looser previous table only prunes
// less. Defaults to min_count.
inline FGramVocabulary build_fgram_vocab(const CorpusShard& corpus, std::uint32_t n_max,
                                         std::uint64_t S, std::uint64_t min_count,
                                         std::optional<std::uint64_t> min_count_first_scan =
                                             std::nullopt) {
  require(n_max >= 2 && n_max <= 8, "build_fgram_vocab: n_max must be in [2,8]");
  require(S >= 1, "build_fgram_vocab: S must be >= 1");
  require(min_count >= 1, "build_fgram_vocab: min_count must be >= 1");
  std::uint64_t first_scan = min_count_first_scan.value_or(min_count);
  require(first_scan >= 1 && first_scan <= min_count,
          "build_fgram_vocab: min_count_first_scan must be in [1, min_count]");

  std::vector<std::pair<NGramKey, std::uint64_t>> candidates;
  CountTable prev;
  for (std::uint32_t k = 2; k <= n_max; ++k) {
    CountTable table = count_kgrams(corpus, k, k == 2 ? first_scan : min_count,
                                    k == 2 ? nullptr : &prev);
    table.counts.for_each([&](std::span<const TokenId> key, std::uint64_t count) {
      candidates.emplace_back(NGramKey(key.begin(), key.end()), count);
    });
    prev = std::move(table);
  }

  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return fgram_rank_less(a.first, a.second, b.first, b.second);
  });

  FGramVocabulary vocab;
  vocab.n_max = n_max;
  vocab.requested_size = S;
  vocab.min_count = min_count;
  vocab.short_fall = candidates.size() < S;
  std::size_t take = std::min<std::size_t>(S, candidates.size());
  vocab.entries.reserve(take);
  for (std::size_t i = 0; i < take; ++i)
    vocab.entries.push_back({std::move(candidates[i].first), candidates[i].second});
  vocab.cutoff_frequency = vocab.entries.empty() ? 0 : vocab.entries.back().count;
  return vocab;
}

// Number of distinct k-grams meeting min_count, for each k in [k_lo, k_hi].
inline std::vector<std::pair<std::uint32_t, std::uint64_t>> unique_kgram_counts(
    const CorpusShard& corpus, std::uint32_t k_lo, std::uint32_t k_hi,
    std::uint64_t min_count) {
  require(k_lo >= 2 && k_lo <= k_hi && k_hi <= 8, "unique_kgram_counts: bad k range");
  std::vector<std::pair<std::uint32_t, std::uint64_t>> out;
  CountTable prev;
  for (std::uint32_t k = 2; k <= k_hi; ++k) {
    CountTable table = count_kgrams(corpus, k, min_count, k == 2 ? nullptr : &prev);
    if (k >= k_lo) out.emplace_back(k, table.counts.size());
    prev = std::move(table);
  }
  return out;
}

// For each threshold, the fraction of vocabulary entries whose corpus
// occurrence count exceeds it. An entry's "updates" are its occurrences.
inline std::vector<std::pair<std::uint64_t, double>> update_histogram(
    const CorpusShard& corpus, const Vocabulary& vocab,
    std::span<const std::uint64_t> thresholds) {
  require(!thresholds.empty(), "update_histogram: thresholds must be non-empty");
  std::vector<std::uint64_t> occurrences(vocab.size, 0);
  for (const auto& seq : corpus.sequences)
    for (TokenId t : seq.tokens) occurrences[t]++;
  std::vector<std::pair<std::uint64_t, double>> out;
  out.reserve(thresholds.size());
  for (std::uint64_t thr : thresholds) {
    std::uint64_t above = 0;
    for (std::uint64_t c : occurrences)
      if (c > thr) above++;
    out.emplace_back(thr, static_cast<double>(above) / static_cast<double>(vocab.size));
  }
  return out;
}

// --------------------------------------------------------------------------
// Vocabulary file IO.

inline std::string encode_fgram_vocab(const FGramVocabulary& vocab) {
  std::string out;
  out.append("SCNV");
  put_u32(out, 1);
  put_u32(out, vocab.n_max);
  put_u64(out, vocab.entries.size());
  put_u64(out, vocab.min_count);
  put_u64(out, vocab.cutoff_frequency);
  for (const auto& e : vocab.entries) {
    put_u8(out, static_cast<std::uint8_t>(e.key.size()));
    for (TokenId t : e.key) put_u32(out, t);
    put_u64(out, e.count);
  }
  return out;
}

inline void write_fgram_vocab(const std::filesystem::path& path, const FGramVocabulary& vocab) {
  commit_file(path, encode_fgram_vocab(vocab));
}

inline FGramVocabulary decode_fgram_vocab(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  r.expect_magic("SCNV");
  std::uint32_t version = r.u32();
  if (version != 1) throw ParseError("unsupported vocab version " + std::to_string(version), 4);
  FGramVocabulary vocab;
  vocab.n_max = r.u32();
  std::uint64_t s = r.u64();
  vocab.min_count = r.u64();
  vocab.cutoff_frequency = r.u64();
  vocab.requested_size = s;
  vocab.entries.reserve(s);
  for (std::uint64_t i = 0; i < s; ++i) {
    std::uint8_t len = r.u8();
    if (len < 2 || len > vocab.n_max)
      throw ParseError("f-gram length " + std::to_string(len) + " outside [2, n_max]",
                       r.offset() - 1);
    FGramEntry e;
    e.key.reserve(len);
    for (std::uint8_t j = 0; j < len; ++j) e.key.push_back(r.u32());
    e.count = r.u64();
    vocab.entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw ParseError("trailing bytes after vocabulary records", r.offset());
  return vocab;
}

inline FGramVocabulary load_fgram_vocab(const std::filesystem::path& path) {
  auto data = read_file(path);
  return decode_fgram_vocab(data);
}

}  // namespace scone
