// Baking: run the f-gram transformer over the whole vocabulary and freeze
// the outputs into the embedding-table file the store serves at inference.
//
// Table file format ("SCNE"): u32 version, u64 S, u32 d, u8 dtype
// (0 = fp32, 1 = fp16), u64 vocab fingerprint, u64 model fingerprint, then
// S x d values little-endian in vocabulary rank order. Header is 37 bytes.
//
// Keys are grouped into batches padded to the batch's longest key, but pad
// positions never enter attention and the readout is taken at the true key
// length, so the emitted vectors are bit-identical for every batch size.
#pragma once

#include <chrono>

#include "scone/model.hpp"

namespace scone {

inline constexpr std::uint32_t kTableHeaderBytes = 37;

struct BakeManifest {
  std::uint64_t vocab_fingerprint = 0;
  std::uint64_t model_fingerprint = 0;
  std::uint32_t d = 0;
  std::uint64_t S = 0;
  Dtype dtype = Dtype::f32;
  std::uint32_t batch_size = 0;
  std::string created_at;  // metadata only; not part of the table artifact
};

struct BakeOptions {
  std::uint32_t batch_size = 64;
  Dtype dtype = Dtype::f32;
};

namespace detail {

inline std::string now_utc_string() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// Bakes the table into a byte string; the manifest describes what was baked.
template <typename Scalar>
std::string bake_table(const SconeModel<Scalar>& model, const FGramVocabulary& vocab,
                       const BakeOptions& options, std::uint64_t vocab_fingerprint,
                       std::uint64_t model_fingerprint, BakeManifest* manifest = nullptr) {
  const auto& cfg = model.config;
  require(cfg.has_fgram_stack(), "bake: model has no f-gram stack");
  require(cfg.fgram_n_max >= vocab.n_max,
          "bake: model accepts f-grams up to length " + std::to_string(cfg.fgram_n_max) +
              " but vocabulary has n_max " + std::to_string(vocab.n_max));
  require(vocab.size() >= 1, "bake: vocabulary is empty");
  require(options.batch_size >= 1, "bake: batch_size must be >= 1");
  require(options.dtype == Dtype::f32 || options.dtype == Dtype::f16,
          "bake: table dtype must be fp32 or fp16");

  std::string out;
  out.reserve(kTableHeaderBytes + vocab.size() * cfg.d_model * dtype_size(options.dtype));
  out.append("SCNE");
  put_u32(out, 1);
  put_u64(out, vocab.size());
  put_u32(out, cfg.d_model);
  put_u8(out, static_cast<std::uint8_t>(options.dtype));
  put_u64(out, vocab_fingerprint);
  put_u64(out, model_fingerprint);

  // Batches exist for assembly only: each key in the padded batch is
  // evaluated at its true length with pads excluded from attention, so the
  // result cannot depend on batch composition.
  for (std::uint64_t start = 0; start < vocab.size(); start += options.batch_size) {
    std::uint64_t end = std::min<std::uint64_t>(start + options.batch_size, vocab.size());
    for (std::uint64_t rank = start; rank < end; ++rank) {
      Mat<Scalar> vec = fgram_forward(model, vocab.entries[rank].key);
      for (Eigen::Index c = 0; c < vec.cols(); ++c) {
        float value = static_cast<float>(vec(0, c));
        if (options.dtype == Dtype::f32) put_f32(out, value);
        else put_u16(out, float_to_half(value));
      }
    }
  }

  if (manifest) {
    manifest->vocab_fingerprint = vocab_fingerprint;
    manifest->model_fingerprint = model_fingerprint;
    manifest->d = cfg.d_model;
    manifest->S = vocab.size();
    manifest->dtype = options.dtype;
    manifest->batch_size = options.batch_size;
    manifest->created_at = detail::now_utc_string();
  }
  return out;
}

inline std::string encode_bake_manifest(const BakeManifest& m) {
  std::string out;
  out += "vocab_fingerprint=" + std::to_string(m.vocab_fingerprint) + "\n";
  out += "model_fingerprint=" + std::to_string(m.model_fingerprint) + "\n";
  out += "d=" + std::to_string(m.d) + "\n";
  out += "S=" + std::to_string(m.S) + "\n";
  out += "dtype=" + dtype_name(m.dtype) + "\n";
  out += "batch_size=" + std::to_string(m.batch_size) + "\n";
  out += "created_at=" + m.created_at + "\n";
  return out;
}

// Writes table then manifest; the manifest is the commit point.
template <typename Scalar>
BakeManifest bake_to_files(const SconeModel<Scalar>& model, const FGramVocabulary& vocab,
                           const BakeOptions& options, const std::filesystem::path& table_path,
                           std::uint64_t vocab_fingerprint, std::uint64_t model_fingerprint) {
  BakeManifest manifest;
  std::string table =
      bake_table(model, vocab, options, vocab_fingerprint, model_fingerprint, &manifest);
  commit_file(table_path, table);
  commit_file(table_path.string() + ".manifest", encode_bake_manifest(manifest));
  return manifest;
}

// Reads back the table header for validation.
struct TableHeader {
  std::uint64_t S = 0;
  std::uint32_t d = 0;
  Dtype dtype = Dtype::f32;
  std::uint64_t vocab_fingerprint = 0;
  std::uint64_t model_fingerprint = 0;
};

inline TableHeader decode_table_header(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  r.expect_magic("SCNE");
  std::uint32_t version = r.u32();
  if (version != 1) throw ParseError("unsupported table version " + std::to_string(version), 4);
  TableHeader h;
  h.S = r.u64();
  h.d = r.u32();
  std::uint8_t dtype = r.u8();
  if (dtype > 1) throw ParseError("unknown table dtype " + std::to_string(dtype), r.offset() - 1);
  h.dtype = static_cast<Dtype>(dtype);
  h.vocab_fingerprint = r.u64();
  h.model_fingerprint = r.u64();
  std::uint64_t payload = h.S * static_cast<std::uint64_t>(h.d) * dtype_size(h.dtype);
  if (r.remaining() != payload)
    throw ParseError("table payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                         std::to_string(payload),
                     r.offset());
  return h;
}

struct ParityReport {
  double max_abs_diff = 0;
  double max_abs_live = 0;
  std::uint64_t vectors_checked = 0;

  // The half rounding bound: rel error <= 2^-11 of the largest live value.
  bool within(Dtype store_dtype) const {
    if (store_dtype == Dtype::f16) return max_abs_diff <= max_abs_live * 0x1.0p-11;
    return max_abs_diff == 0.0;
  }
};

// Max |live - stored| over sampled vocabulary entries. 0.0 whenever the
// store's dtype equals the compute dtype; within the half rounding bound at
// fp16. StoreLike needs get(span) -> vector<float> (throws on a miss).
template <typename Scalar, typename StoreLike>
ParityReport verify_parity(const SconeModel<Scalar>& model, const FGramVocabulary& vocab,
                           const StoreLike& store, std::uint64_t sample_count = 0,
                           std::uint64_t seed = 0) {
  require(vocab.size() >= 1, "verify_parity: empty vocabulary");
  std::vector<std::uint64_t> ranks;
  if (sample_count == 0 || sample_count >= vocab.size()) {
    ranks.resize(vocab.size());
    for (std::uint64_t i = 0; i < vocab.size(); ++i) ranks[i] = i;
  } else {
    Rng rng(seed);
    for (std::uint64_t i = 0; i < sample_count; ++i) ranks.push_back(rng.below(vocab.size()));
  }
  ParityReport report;
  for (std::uint64_t rank : ranks) {
    const NGramKey& key = vocab.entries[rank].key;
    Mat<Scalar> live = fgram_forward(model, key);
    std::vector<float> stored = store.get(key);  // a missing key throws, naming it
    require(stored.size() == static_cast<std::size_t>(live.cols()),
            "verify_parity: dimension mismatch");
    for (Eigen::Index c = 0; c < live.cols(); ++c) {
      double lv = static_cast<double>(live(0, c));
      double diff = std::abs(lv - static_cast<double>(stored[static_cast<std::size_t>(c)]));
      report.max_abs_diff = std::max(report.max_abs_diff, diff);
      report.max_abs_live = std::max(report.max_abs_live, std::abs(lv));
    }
    report.vectors_checked++;
  }
  return report;
}

}  // namespace scone
