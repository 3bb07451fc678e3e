// Serving baked f-gram embeddings.
//
// Two backends behind one interface:
//   memory: the whole payload resident, keys in a hash dictionary.
//   disk:   the table file memory-mapped; vectors are read on demand. Keys
//           live in a sorted array (binary search) built from the vocabulary
//           file, so the payload itself is never loaded eagerly.
// Both are read-only after open and return byte-identical vectors.
#pragma once

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>

#include "scone/bake.hpp"

namespace scone {

enum class StoreBackend { memory, disk };

inline const char* backend_name(StoreBackend b) {
  return b == StoreBackend::memory ? "memory" : "disk";
}

struct SpaceReport {
  std::uint64_t payload_bytes = 0;   // S * d * bytes_per_value, exact
  std::uint64_t index_bytes = 0;     // persisted key records
  std::uint64_t overhead_bytes = 0;  // file headers / container framing
  std::uint64_t total() const { return payload_bytes + index_bytes + overhead_bytes; }
};

// Payload arithmetic only; a concrete store fills in index and overhead.
inline SpaceReport estimate_space(std::uint64_t S, std::uint64_t d,
                                  std::uint64_t bytes_per_value) {
  require(S > 0 && d > 0 && bytes_per_value > 0, "estimate_space: inputs must be positive");
  unsigned __int128 payload = static_cast<unsigned __int128>(S) * d * bytes_per_value;
  require(payload <= static_cast<unsigned __int128>(std::numeric_limits<std::int64_t>::max()),
          "estimate_space: payload exceeds 2^63 bytes");
  return SpaceReport{static_cast<std::uint64_t>(payload), 0, 0};
}

namespace detail {

class MappedFile {
 public:
  MappedFile() = default;
  explicit MappedFile(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0) throw IoError("cannot open " + path.string());
    struct stat st{};
    if (::fstat(fd_, &st) != 0) {
      ::close(fd_);
      throw IoError("fstat failed on " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* p = ::mmap(nullptr, size_, PROT_READ, MAP_SHARED, fd_, 0);
      if (p == MAP_FAILED) {
        ::close(fd_);
        throw IoError("mmap failed on " + path.string());
      }
      data_ = static_cast<const std::uint8_t*>(p);
    }
  }
  MappedFile(MappedFile&& other) noexcept { *this = std::move(other); }
  MappedFile& operator=(MappedFile&& other) noexcept {
    reset();
    std::swap(fd_, other.fd_);
    std::swap(data_, other.data_);
    std::swap(size_, other.size_);
    return *this;
  }
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;
  ~MappedFile() { reset(); }

  std::span<const std::uint8_t> bytes() const { return {data_, size_}; }
  bool valid() const { return data_ != nullptr; }

  // Best-effort page-cache eviction; returns false when the platform refuses.
  bool drop_caches() const {
    if (fd_ < 0) return false;
    bool ok = ::posix_fadvise(fd_, 0, 0, POSIX_FADV_DONTNEED) == 0;
    if (data_ != nullptr)
      ok = ::madvise(const_cast<std::uint8_t*>(data_), size_, MADV_DONTNEED) == 0 && ok;
    return ok;
  }

 private:
  void reset() {
    if (data_) ::munmap(const_cast<std::uint8_t*>(data_), size_);
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    data_ = nullptr;
    size_ = 0;
  }
  int fd_ = -1;
  const std::uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
};

// Canonical key order: shorter first, then ascending token ids.
inline bool key_less(std::span<const TokenId> a, std::span<const TokenId> b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace detail

class EmbeddingStore {
 public:
  static EmbeddingStore open(const std::filesystem::path& table_path,
                             const std::filesystem::path& vocab_path, StoreBackend backend) {
    EmbeddingStore store;
    store.backend_ = backend;
    store.table_path_ = table_path;
    store.vocab_path_ = vocab_path;

    FGramVocabulary vocab = load_fgram_vocab(vocab_path);
    std::uint64_t vocab_fp = fingerprint_file(vocab_path);

    if (backend == StoreBackend::memory) {
      auto bytes = read_file(table_path);
      store.header_ = decode_table_header(bytes);
      store.resident_.assign(bytes.begin() + kTableHeaderBytes, bytes.end());
    } else {
      store.mapped_ = detail::MappedFile(table_path);
      store.header_ = decode_table_header(store.mapped_.bytes());
    }
    if (store.header_.vocab_fingerprint != vocab_fp)
      throw Error("open_store: table was baked for a different vocabulary (fingerprint " +
                  std::to_string(store.header_.vocab_fingerprint) + " vs " +
                  std::to_string(vocab_fp) + ")");
    if (store.header_.S != vocab.size())
      throw Error("open_store: table has " + std::to_string(store.header_.S) +
                  " vectors but vocabulary has " + std::to_string(vocab.size()));

    store.n_max_ = vocab.n_max;
    store.index_record_bytes_ = 0;
    for (const auto& e : vocab.entries)
      store.index_record_bytes_ += 1 + 4 * e.key.size() + 8;

    if (backend == StoreBackend::memory) {
      store.hash_index_.reserve(vocab.size());
      for (std::uint64_t rank = 0; rank < vocab.size(); ++rank)
        store.hash_index_.insert(vocab.entries[rank].key, rank);
    } else {
      // Sorted key array over a flat pool; binary search at query time.
      store.sorted_ranks_.resize(vocab.size());
      store.key_offsets_.resize(vocab.size() + 1, 0);
      for (std::uint64_t rank = 0; rank < vocab.size(); ++rank)
        store.key_offsets_[rank + 1] =
            store.key_offsets_[rank] + vocab.entries[rank].key.size();
      store.key_pool_.reserve(store.key_offsets_.back());
      for (const auto& e : vocab.entries)
        store.key_pool_.insert(store.key_pool_.end(), e.key.begin(), e.key.end());
      for (std::uint64_t i = 0; i < vocab.size(); ++i) store.sorted_ranks_[i] = i;
      std::sort(store.sorted_ranks_.begin(), store.sorted_ranks_.end(),
                [&](std::uint64_t a, std::uint64_t b) {
                  return detail::key_less(store.key_span(a), store.key_span(b));
                });
    }
    return store;
  }

  StoreBackend backend() const { return backend_; }
  std::uint64_t size() const { return header_.S; }
  std::uint32_t dim() const { return header_.d; }
  Dtype dtype() const { return header_.dtype; }
  std::uint32_t n_max() const { return n_max_; }
  std::uint64_t vocab_fingerprint() const { return header_.vocab_fingerprint; }
  std::uint64_t model_fingerprint() const { return header_.model_fingerprint; }

  // The key of a given rank; ranks follow vocabulary order in both backends.
  std::span<const TokenId> key_at(std::uint64_t rank) const {
    require(rank < header_.S, "store: rank out of range");
    if (backend_ == StoreBackend::memory) return hash_index_.key_of(hash_index_.entries()[rank]);
    return key_span(rank);
  }

  // Membership probe; also satisfies the matcher's oracle interface.
  std::optional<std::uint64_t> find(std::span<const TokenId> key) const {
    if (backend_ == StoreBackend::memory) return hash_index_.find(key);
    std::uint64_t lo = 0, hi = sorted_ranks_.size();
    while (lo < hi) {
      std::uint64_t mid = lo + (hi - lo) / 2;
      if (detail::key_less(key_span(sorted_ranks_[mid]), key)) lo = mid + 1;
      else hi = mid;
    }
    if (lo < sorted_ranks_.size()) {
      auto candidate = key_span(sorted_ranks_[lo]);
      if (candidate.size() == key.size() &&
          std::equal(key.begin(), key.end(), candidate.begin()))
        return sorted_ranks_[lo];
    }
    return std::nullopt;
  }

  std::vector<float> get_by_rank(std::uint64_t rank) const {
    require(rank < header_.S, "store: rank out of range");
    const std::uint8_t* base;
    if (backend_ == StoreBackend::memory) {
      base = resident_.data();
    } else {
      base = mapped_.bytes().data() + kTableHeaderBytes;
    }
    std::size_t vec_bytes = header_.d * dtype_size(header_.dtype);
    const std::uint8_t* p = base + rank * vec_bytes;
    std::vector<float> out(header_.d);
    if (header_.dtype == Dtype::f32) {
      std::memcpy(out.data(), p, vec_bytes);
    } else {
      for (std::uint32_t c = 0; c < header_.d; ++c) {
        std::uint16_t h = static_cast<std::uint16_t>(p[2 * c]) |
                          (static_cast<std::uint16_t>(p[2 * c + 1]) << 8);
        out[c] = half_to_float(h);
      }
    }
    return out;
  }

  std::vector<float> get(std::span<const TokenId> key) const {
    auto rank = find(key);
    if (!rank) {
      std::string text;
      for (TokenId t : key) text += (text.empty() ? "" : ",") + std::to_string(t);
      throw Error("store: key (" + text + ") not present");
    }
    return get_by_rank(*rank);
  }

  // Order-preserving batched lookup; duplicates fetch duplicate vectors.
  std::vector<std::vector<float>> get_batch(std::span<const NGramKey> keys) const {
    std::vector<std::vector<float>> out;
    out.reserve(keys.size());
    for (const auto& key : keys) out.push_back(get(key));
    return out;
  }

  SpaceReport space_report() const {
    SpaceReport r = estimate_space(header_.S, header_.d, dtype_size(header_.dtype));
    r.index_bytes = index_record_bytes_;
    // Table header plus the vocabulary-file header that persists the index.
    r.overhead_bytes = kTableHeaderBytes + 36;
    return r;
  }

  // Best-effort page-cache eviction for cold-read measurements; only
  // meaningful for the disk backend.
  bool drop_caches() const {
    if (backend_ != StoreBackend::disk) return false;
    return mapped_.drop_caches();
  }

 private:
  std::span<const TokenId> key_span(std::uint64_t rank) const {
    return {key_pool_.data() + key_offsets_[rank],
            key_offsets_[rank + 1] - key_offsets_[rank]};
  }

  StoreBackend backend_ = StoreBackend::memory;
  std::filesystem::path table_path_, vocab_path_;
  TableHeader header_;
  std::uint32_t n_max_ = 0;
  std::uint64_t index_record_bytes_ = 0;

  // memory backend
  std::vector<std::uint8_t> resident_;
  NGramMap hash_index_;

  // disk backend
  detail::MappedFile mapped_;
  std::vector<TokenId> key_pool_;
  std::vector<std::uint64_t> key_offsets_;
  std::vector<std::uint64_t> sorted_ranks_;
};

// ---------------------------------------------------------------------------
// Latency benchmark.

struct LatencyStats {
  std::uint32_t batch_size = 0;
  std::uint64_t trials = 0;
  double median_ms = 0;
  double mean_ms = 0;
  double p99_ms = 0;
  bool cold = false;    // requested and honoured
  bool warm = true;     // true when cold was requested but unavailable
};

// Amortized per-token query latency. Each simulated token probes candidate
// lengths longest-first against the store (up to n_max - 1 membership
// queries) and then fetches the matched vector, mirroring inference.
inline std::vector<LatencyStats> measure_latency(const EmbeddingStore& store,
                                                 std::span<const std::uint32_t> batch_sizes,
                                                 std::uint64_t trials, bool cold,
                                                 std::uint64_t seed = 12345) {
  require(trials >= 1, "measure_latency: trials must be >= 1");
  require(store.size() >= 1, "measure_latency: empty store");

  Rng rng(seed);
  std::vector<LatencyStats> results;
  volatile float sink = 0;  // keeps fetches observable
  for (std::uint32_t batch : batch_sizes) {
    require(batch >= 1, "measure_latency: batch size must be >= 1");
    std::vector<double> samples;
    samples.reserve(trials);
    double sum = 0;
    bool honoured_cold = cold;
    std::vector<std::uint64_t> hit_ranks(batch);
    for (std::uint64_t trial = 0; trial < trials; ++trial) {
      // Matched key per token, drawn uniformly from the store's key set;
      // drawn before the clock starts.
      for (std::uint32_t b = 0; b < batch; ++b) hit_ranks[b] = rng.below(store.size());
      if (cold && !store.drop_caches()) honoured_cold = false;

      auto t0 = std::chrono::steady_clock::now();
      float acc = 0;
      for (std::uint32_t b = 0; b < batch; ++b) {
        std::span<const TokenId> key = store.key_at(hit_ranks[b]);
        // Longest-first probing: misses for lengths above the true match.
        for (std::uint32_t len = store.n_max(); len > key.size(); --len) {
          TokenId probe_buf[8];
          for (std::uint32_t i = 0; i < len; ++i)
            probe_buf[i] = i < key.size() ? key[i] : 0xfffffffeu;  // guaranteed miss
          (void)store.find(std::span<const TokenId>(probe_buf, len));
        }
        auto rank = store.find(key);
        auto vec = store.get_by_rank(*rank);
        acc += vec[0];
      }
      auto t1 = std::chrono::steady_clock::now();
      sink = sink + acc;
      double ms = std::chrono::duration<double, std::milli>(t1 - t0).count() /
                  static_cast<double>(batch);
      samples.push_back(ms);
      sum += ms;
    }
    std::sort(samples.begin(), samples.end());
    LatencyStats s;
    s.batch_size = batch;
    s.trials = trials;
    s.median_ms = samples[samples.size() / 2];
    s.mean_ms = sum / static_cast<double>(trials);
    s.p99_ms = samples[std::min(samples.size() - 1,
                                static_cast<std::size_t>(std::ceil(0.99 * samples.size())) - 1)];
    s.cold = cold && honoured_cold;
    s.warm = !s.cold;
    results.push_back(s);
  }
  return results;
}

inline std::string latency_report_line(const EmbeddingStore& store, const LatencyStats& s) {
  std::string line;
  line += std::string(backend_name(store.backend()));
  line += " S=" + std::to_string(store.size());
  line += " d=" + std::to_string(store.dim());
  line += " batch_size=" + std::to_string(s.batch_size);
  line += " trials=" + std::to_string(s.trials);
  char buf[64];
  std::snprintf(buf, sizeof(buf), " median_ms=%.6f", s.median_ms);
  line += buf;
  std::snprintf(buf, sizeof(buf), " mean_ms=%.6f", s.mean_ms);
  line += buf;
  std::snprintf(buf, sizeof(buf), " p99_ms=%.6f", s.p99_ms);
  line += buf;
  line += s.warm ? " cache=warm" : " cache=cold";
  return line;
}

}  // namespace scone
