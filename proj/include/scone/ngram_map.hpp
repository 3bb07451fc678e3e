// Exact-membership hash map from n-gram keys to 64-bit values.
//
// Keys live in one flat token pool and lookups take spans, so the hot paths
// (counting windows, longest-match probes, store queries) never allocate.
// Open addressing with linear probing over a power-of-2 bucket array;
// iteration follows insertion order, which keeps every consumer
// deterministic.
#pragma once

#include "scone/common.hpp"

namespace scone {

using NGramKey = std::vector<TokenId>;

inline std::uint64_t hash_ngram(std::span<const TokenId> key) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (TokenId t : key) {
    for (int i = 0; i < 4; ++i) {
      h ^= (t >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

class NGramMap {
 public:
  struct Entry {
    std::uint64_t pool_offset;
    std::uint32_t len;
    std::uint64_t value;
  };

  NGramMap() = default;

  std::uint64_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  void reserve(std::uint64_t n) {
    pool_.reserve(pool_.size() + n * 2);
    entries_.reserve(n);
    rehash_if_needed(n);
  }

  std::optional<std::uint64_t> find(std::span<const TokenId> key) const {
    const Entry* e = lookup(key);
    return e ? std::optional<std::uint64_t>(e->value) : std::nullopt;
  }

  bool contains(std::span<const TokenId> key) const { return lookup(key) != nullptr; }

  // Inserts key -> value; returns false (and leaves the map unchanged) if the
  // key is already present. The span must not alias this map's own storage.
  bool insert(std::span<const TokenId> key, std::uint64_t value) {
    bool inserted = false;
    slot_for(key, value, &inserted);
    return inserted;
  }

  // Returns the value slot for key, inserting it with `init` if absent.
  std::uint64_t& find_or_insert(std::span<const TokenId> key, std::uint64_t init) {
    bool inserted = false;
    return slot_for(key, init, &inserted);
  }

  std::span<const TokenId> key_of(const Entry& e) const {
    return std::span<const TokenId>(pool_.data() + e.pool_offset, e.len);
  }

  // Insertion-order iteration.
  const std::vector<Entry>& entries() const { return entries_; }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const Entry& e : entries_) fn(key_of(e), e.value);
  }

 private:
  const Entry* lookup(std::span<const TokenId> key) const {
    if (buckets_.empty()) return nullptr;
    std::uint64_t mask = buckets_.size() - 1;
    std::uint64_t b = hash_ngram(key) & mask;
    while (buckets_[b] != kEmpty) {
      const Entry& e = entries_[buckets_[b] - 1];
      if (e.len == key.size() &&
          std::equal(key.begin(), key.end(), pool_.begin() + e.pool_offset))
        return &e;
      b = (b + 1) & mask;
    }
    return nullptr;
  }

  std::uint64_t& slot_for(std::span<const TokenId> key, std::uint64_t init, bool* inserted) {
    rehash_if_needed(entries_.size() + 1);
    std::uint64_t mask = buckets_.size() - 1;
    std::uint64_t b = hash_ngram(key) & mask;
    while (buckets_[b] != kEmpty) {
      Entry& e = entries_[buckets_[b] - 1];
      if (e.len == key.size() &&
          std::equal(key.begin(), key.end(), pool_.begin() + e.pool_offset)) {
        *inserted = false;
        return e.value;
      }
      b = (b + 1) & mask;
    }
    Entry e{pool_.size(), static_cast<std::uint32_t>(key.size()), init};
    pool_.insert(pool_.end(), key.begin(), key.end());
    entries_.push_back(e);
    buckets_[b] = entries_.size();  // 1-based
    *inserted = true;
    return entries_.back().value;
  }

  void rehash_if_needed(std::uint64_t want) {
    // Grow at 70% load.
    if (!buckets_.empty() && want * 10 <= buckets_.size() * 7) return;
    std::uint64_t cap = 16;
    while (cap * 7 < want * 10) cap <<= 1;
    if (cap <= buckets_.size()) return;
    buckets_.assign(cap, kEmpty);
    std::uint64_t mask = cap - 1;
    for (std::uint64_t i = 0; i < entries_.size(); ++i) {
      std::uint64_t b = hash_ngram(key_of(entries_[i])) & mask;
      while (buckets_[b] != kEmpty) b = (b + 1) & mask;
      buckets_[b] = i + 1;
    }
  }

  static constexpr std::uint64_t kEmpty = 0;

  std::vector<TokenId> pool_;
  std::vector<Entry> entries_;
  std::vector<std::uint64_t> buckets_;  // 1-based indices into entries_
};

}  // namespace scone
