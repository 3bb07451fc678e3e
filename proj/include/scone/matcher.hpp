// Longest-match f-gram lookup and corpus tagging.
//
// At position i the match is the longest span (sigma_{j}, ..., sigma_i) in
// the vocabulary, with length capped at n_max; probing runs longest-first
// with early exit, so at most n_max - 1 membership queries per position.
// Pre-tagging a corpus moves all matching out of the training loop.
//
// Tagged-corpus file format ("SCNT"): u32 version, then per sequence
// [u32 seq_len][seq_len x (u8 tag, u64 fgram_id)]; id is u64 max for tag=1.
#pragma once

#include "scone/discovery.hpp"

namespace scone {

inline constexpr std::uint64_t kNoFGram = std::numeric_limits<std::uint64_t>::max();

// Exact key -> dense id lookup over an f-gram vocabulary; ids are vocabulary
// ranks. Immutable once built.
class FGramIndex {
 public:
  FGramIndex() = default;

  explicit FGramIndex(const FGramVocabulary& vocab) : n_max_(vocab.n_max) {
    map_.reserve(vocab.entries.size());
    for (std::uint64_t rank = 0; rank < vocab.entries.size(); ++rank) {
      if (!map_.insert(vocab.entries[rank].key, rank))
        throw Error("build_index: duplicate key at rank " + std::to_string(rank));
    }
  }

  std::uint64_t size() const { return map_.size(); }
  std::uint32_t n_max() const { return n_max_; }

  std::optional<std::uint64_t> find(std::span<const TokenId> key) const {
    return map_.find(key);
  }

 private:
  NGramMap map_;
  std::uint32_t n_max_ = 0;
};

inline FGramIndex build_index(const FGramVocabulary& vocab) { return FGramIndex(vocab); }

struct MatchResult {
  std::uint64_t start;                   // j: first position of the match
  std::uint32_t length;                  // i - j + 1; 1 means token fallback
  std::optional<std::uint64_t> fgram_id; // absent iff length == 1
};

struct ProbeStats {
  std::uint64_t probes = 0;
};

// Longest f-gram ending at position i. MembershipOracle is anything with
// n_max() and find(span) -> optional id; both FGramIndex and the embedding
// stores qualify.
template <typename MembershipOracle>
MatchResult longest_match(const MembershipOracle& index, const TokenSequence& seq,
                          std::uint64_t i, ProbeStats* stats = nullptr) {
  require(i < seq.size(), "longest_match: position " + std::to_string(i) +
                              " out of range (length " + std::to_string(seq.size()) + ")");
  std::uint32_t cap = static_cast<std::uint32_t>(
      std::min<std::uint64_t>(index.n_max(), i + 1));
  const TokenId* base = seq.tokens.data();
  for (std::uint32_t len = cap; len >= 2; --len) {
    if (stats) stats->probes++;
    auto id = index.find(std::span<const TokenId>(base + (i + 1 - len), len));
    if (id) return {i + 1 - len, len, *id};
  }
  return {i, 1, std::nullopt};
}

// Per-position longest-match lengths and ids for one sequence.
struct MatchTags {
  std::vector<std::uint8_t> lengths;
  std::vector<std::uint64_t> ids;  // kNoFGram where lengths[i] == 1

  std::size_t size() const { return lengths.size(); }
};

template <typename MembershipOracle>
MatchTags tag_sequence(const MembershipOracle& index, const TokenSequence& seq,
                       ProbeStats* stats = nullptr) {
  MatchTags tags;
  tags.lengths.reserve(seq.size());
  tags.ids.reserve(seq.size());
  for (std::uint64_t i = 0; i < seq.size(); ++i) {
    MatchResult m = longest_match(index, seq, i, stats);
    tags.lengths.push_back(static_cast<std::uint8_t>(m.length));
    tags.ids.push_back(m.fgram_id.value_or(kNoFGram));
  }
  return tags;
}

template <typename MembershipOracle>
std::vector<MatchTags> tag_corpus(const MembershipOracle& index, const CorpusShard& corpus,
                                  ProbeStats* stats = nullptr) {
  std::vector<MatchTags> out;
  out.reserve(corpus.sequences.size());
  for (const auto& seq : corpus.sequences) out.push_back(tag_sequence(index, seq, stats));
  return out;
}

// Mean matched length over every tagged token (1 counts as unmatched).
inline double avg_match_length(std::span<const MatchTags> tags) {
  std::uint64_t total = 0, tokens = 0;
  for (const auto& t : tags) {
    tokens += t.lengths.size();
    for (std::uint8_t len : t.lengths) total += len;
  }
  require(tokens > 0, "avg_match_length: no tagged tokens");
  return static_cast<double>(total) / static_cast<double>(tokens);
}

// f-gram flavor of the update histogram: an entry's updates are its
// longest-match hits over the corpus.
inline std::vector<std::pair<std::uint64_t, double>> update_histogram(
    const CorpusShard& corpus, const FGramVocabulary& vocab,
    std::span<const std::uint64_t> thresholds) {
  require(!thresholds.empty(), "update_histogram: thresholds must be non-empty");
  FGramIndex index(vocab);
  std::vector<std::uint64_t> hits(vocab.size(), 0);
  for (const auto& seq : corpus.sequences) {
    for (std::uint64_t i = 0; i < seq.size(); ++i) {
      MatchResult m = longest_match(index, seq, i);
      if (m.fgram_id) hits[*m.fgram_id]++;
    }
  }
  std::vector<std::pair<std::uint64_t, double>> out;
  out.reserve(thresholds.size());
  for (std::uint64_t thr : thresholds) {
    std::uint64_t above = 0;
    for (std::uint64_t h : hits)
      if (h > thr) above++;
    double denom = vocab.size() ? static_cast<double>(vocab.size()) : 1.0;
    out.emplace_back(thr, static_cast<double>(above) / denom);
  }
  return out;
}

// --------------------------------------------------------------------------
// Tagged-corpus file IO.

inline std::string encode_tags(std::span<const MatchTags> tags) {
  std::string out;
  out.append("SCNT");
  put_u32(out, 1);
  for (const auto& t : tags) {
    put_u32(out, static_cast<std::uint32_t>(t.size()));
    for (std::size_t i = 0; i < t.size(); ++i) {
      put_u8(out, t.lengths[i]);
      put_u64(out, t.ids[i]);
    }
  }
  return out;
}

inline void write_tags(const std::filesystem::path& path, std::span<const MatchTags> tags) {
  commit_file(path, encode_tags(tags));
}

inline std::vector<MatchTags> decode_tags(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  r.expect_magic("SCNT");
  std::uint32_t version = r.u32();
  if (version != 1) throw ParseError("unsupported tags version " + std::to_string(version), 4);
  std::vector<MatchTags> out;
  while (!r.at_end()) {
    std::uint32_t len = r.u32();
    MatchTags t;
    t.lengths.reserve(len);
    t.ids.reserve(len);
    for (std::uint32_t i = 0; i < len; ++i) {
      std::uint8_t tag = r.u8();
      std::uint64_t id = r.u64();
      if (tag < 1) throw ParseError("tag must be >= 1", r.offset() - 9);
      if ((tag == 1) != (id == kNoFGram))
        throw ParseError("tag/id mismatch (tag=1 iff sentinel id)", r.offset() - 9);
      t.lengths.push_back(tag);
      t.ids.push_back(id);
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<MatchTags> load_tags(const std::filesystem::path& path) {
  auto data = read_file(path);
  return decode_tags(data);
}

}  // namespace scone
