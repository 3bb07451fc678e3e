// Tokenized-corpus representation and IO.
//
// A corpus is a list of token sequences; n-grams, matches, and the training
// objective never cross sequence boundaries. Two interchange formats:
//   binary-u32: magic "SCNC", u32 version=1, then records
//               [u32 seq_len][seq_len x u32 token id], little-endian.
//   text-ids:   one sequence per line, space-separated decimal ids.
#pragma once

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>
#include <string_view>

#include "scone/common.hpp"

namespace scone {

struct Vocabulary {
  std::uint32_t size = 0;
  // Optional id -> display string table, for debugging only.
  std::vector<std::string> display;

  explicit Vocabulary(std::uint32_t size_, std::vector<std::string> display_ = {})
      : size(size_), display(std::move(display_)) {
    require(size >= 2, "Vocabulary: size must be >= 2");
    require(display.empty() || display.size() == size,
            "Vocabulary: display table size mismatch");
  }

  static Vocabulary bytes() { return Vocabulary(256); }
};

struct TokenSequence {
  std::vector<TokenId> tokens;

  std::size_t size() const { return tokens.size(); }
  TokenId operator[](std::size_t i) const { return tokens[i]; }
};

struct CorpusShard {
  std::vector<TokenSequence> sequences;
  std::uint64_t token_count = 0;

  void push(TokenSequence seq) {
    token_count += seq.size();
    sequences.push_back(std::move(seq));
  }

  // Appends all of `other`, preserving order; token_count stays consistent.
  void append(const CorpusShard& other) {
    sequences.insert(sequences.end(), other.sequences.begin(), other.sequences.end());
    token_count += other.token_count;
  }
};

enum class CorpusFormat { binary_u32, text_ids };

namespace detail {
inline void validate_token(TokenId id, const Vocabulary& vocab,
                           std::size_t seq_index, std::size_t pos) {
  if (id >= vocab.size)
    throw ValidationError("token id " + std::to_string(id) + " out of range (vocab size " +
                          std::to_string(vocab.size) + ") at sequence " +
                          std::to_string(seq_index) + ", position " + std::to_string(pos));
}
}  // namespace detail

inline CorpusShard load_corpus_bytes(std::span<const std::uint8_t> data,
                                     CorpusFormat format, const Vocabulary& vocab) {
  CorpusShard shard;
  if (format == CorpusFormat::binary_u32) {
    if (data.empty()) return shard;  // empty file -> empty shard
    ByteReader r(data);
    r.expect_magic("SCNC");
    std::uint32_t version = r.u32();
    if (version != 1) throw ParseError("unsupported corpus version " + std::to_string(version), 4);
    while (!r.at_end()) {
      std::uint32_t len = r.u32();
      if (len == 0) throw ParseError("zero-length sequence record", r.offset() - 4);
      TokenSequence seq;
      seq.tokens.reserve(len);
      for (std::uint32_t i = 0; i < len; ++i) {
        TokenId id = r.u32();
        detail::validate_token(id, vocab, shard.sequences.size(), i);
        seq.tokens.push_back(id);
      }
      shard.push(std::move(seq));
    }
    return shard;
  }

  // text-ids
  std::string_view text(reinterpret_cast<const char*>(data.data()), data.size());
  std::size_t line_start = 0, line_no = 0;
  while (line_start <= text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    std::string_view line = text.substr(
        line_start, line_end == std::string_view::npos ? std::string_view::npos
                                                       : line_end - line_start);
    if (line_start == text.size() && line.empty()) break;
    TokenSequence seq;
    std::size_t p = 0;
    while (p < line.size()) {
      while (p < line.size() && line[p] == ' ') ++p;
      if (p >= line.size()) break;
      std::uint64_t value = 0;
      auto [ptr, ec] = std::from_chars(line.data() + p, line.data() + line.size(), value);
      if (ec != std::errc() || value > std::numeric_limits<std::uint32_t>::max())
        throw ParseError("malformed token id on line " + std::to_string(line_no + 1),
                         line_start + p);
      TokenId id = static_cast<TokenId>(value);
      detail::validate_token(id, vocab, line_no, seq.size());
      seq.tokens.push_back(id);
      p = static_cast<std::size_t>(ptr - line.data());
    }
    if (!seq.tokens.empty()) shard.push(std::move(seq));
    if (line_end == std::string_view::npos) break;
    line_start = line_end + 1;
    ++line_no;
  }
  return shard;
}

inline CorpusShard load_corpus(const std::filesystem::path& path, CorpusFormat format,
                               const Vocabulary& vocab) {
  auto data = read_file(path);
  return load_corpus_bytes(data, format, vocab);
}

inline std::string encode_corpus(const CorpusShard& shard, CorpusFormat format) {
  std::string out;
  if (format == CorpusFormat::binary_u32) {
    out.append("SCNC");
    put_u32(out, 1);
    for (const auto& seq : shard.sequences) {
      put_u32(out, static_cast<std::uint32_t>(seq.size()));
      for (TokenId id : seq.tokens) put_u32(out, id);
    }
  } else {
    for (const auto& seq : shard.sequences) {
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out.push_back(' ');
        out.append(std::to_string(seq[i]));
      }
      out.push_back('\n');
    }
  }
  return out;
}

inline void write_corpus(const std::filesystem::path& path, const CorpusShard& shard,
                         CorpusFormat format) {
  commit_file(path, encode_corpus(shard, format));
}

// Trivial stand-in tokenizer: token id == byte value, vocabulary size 256.
// Splits the input into chunks of max_seq_len.
inline CorpusShard byte_tokenize(std::string_view text, std::size_t max_seq_len) {
  require(max_seq_len >= 1, "byte_tokenize: max_seq_len must be positive");
  CorpusShard shard;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t len = std::min(max_seq_len, text.size() - pos);
    TokenSequence seq;
    seq.tokens.reserve(len);
    for (std::size_t i = 0; i < len; ++i)
      seq.tokens.push_back(static_cast<std::uint8_t>(text[pos + i]));
    shard.push(std::move(seq));
    pos += len;
  }
  return shard;
}

}  // namespace scone
