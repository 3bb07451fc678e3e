// Shared primitives: error types, little-endian binary IO, content
// fingerprints, a portable deterministic RNG, and IEEE-754 binary16
// conversion. Everything downstream builds on these.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scone {

using TokenId = std::uint32_t;

// ---------------------------------------------------------------------------
// Errors

// Base class for everything this library throws.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated a documented precondition.
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// A file could not be decoded; carries the byte offset of the failure.
struct ParseError : Error {
  ParseError(const std::string& msg, std::uint64_t offset)
      : Error(msg + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::uint64_t byte_offset;
};

// Decoded data failed a semantic check (e.g. token id out of range).
struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// ---------------------------------------------------------------------------
// Little-endian encoding. Explicit byte shuffling keeps the on-disk formats
// identical on any host.

inline void put_u8(std::string& out, std::uint8_t v) {
  out.push_back(static_cast<char>(v));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}
inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

// Cursor over an in-memory buffer. Reads throw ParseError past the end.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() { return gather<std::uint16_t>(2); }
  std::uint32_t u32() { return gather<std::uint32_t>(4); }
  std::uint64_t u64() { return gather<std::uint64_t>(8); }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::span<const std::uint8_t> take(std::uint64_t n) {
    if (remaining() < n)
      throw ParseError("unexpected end of data (need " + std::to_string(n) +
                           " bytes, have " + std::to_string(remaining()) + ")",
                       pos_);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  void expect_magic(const char (&magic)[5]) {
    auto got = take(4);
    if (std::memcmp(got.data(), magic, 4) != 0)
      throw ParseError(std::string("bad magic, expected \"") + magic + "\"", pos_ - 4);
  }

 private:
  template <typename T>
  T gather(int n) {
    auto bytes = take(n);
    T v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::uint64_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Whole-file helpers with write-then-rename commit: a crashed or failed run
// never leaves a truncated artifact at the destination path.

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path.string());
  return data;
}

inline void commit_file(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
  }
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit. Used as the content fingerprint in artifact headers and
// manifests; not cryptographic.

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> data,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fingerprint_file(const std::filesystem::path& path) {
  auto data = read_file(path);
  return fnv1a64(data);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 is portable, but the standard
// distributions are not; these samplers pin the exact bit streams so runs
// reproduce across standard libraries.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

  std::uint64_t next_u64() {
    // xorshift* over a splitmix-initialized state.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below: n must be positive");
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 == 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Independent child stream; order of derivation, not call order, fixes it.
  Rng fork(std::uint64_t stream) const {
    return Rng(splitmix(state_ ^ (0x9e3779b97f4a7c15ull + stream)));
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    x = x ^ (x >> 31);
    return x ? x : 0x1ull;
  }

  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = rng.below(i);
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// IEEE-754 binary16 with round-to-nearest-even. This is the 16-bit payload
// dtype of the embedding table format.

inline std::uint16_t float_to_half(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  std::int32_t exp = static_cast<std::int32_t>((bits >> 23) & 0xff) - 127 + 15;
  std::uint32_t mant = bits & 0x7fffffu;

  if (((bits >> 23) & 0xff) == 0xff) {  // inf or nan
    return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
  }
  if (exp >= 31) {  // overflow -> inf
    return static_cast<std::uint16_t>(sign | 0x7c00u);
  }
  if (exp <= 0) {  // subnormal or zero
    if (exp < -10) return sign;
    mant |= 0x800000u;  // restore implicit bit
    int shift = 14 - exp;  // 14..24
    std::uint32_t half_mant = mant >> shift;
    std::uint32_t rem = mant & ((1u << shift) - 1);
    std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half_mant & 1u))) half_mant++;
    return static_cast<std::uint16_t>(sign | half_mant);
  }
  // Normal: keep 10 mantissa bits, round on the lower 13.
  std::uint32_t half_mant = mant >> 13;
  std::uint32_t rem = mant & 0x1fffu;
  std::uint16_t h = static_cast<std::uint16_t>(sign | (exp << 10) | half_mant);
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) h++;  // may carry into exp: correct
  return h;
}

inline float half_to_float(std::uint16_t h) {
  std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1f;
  std::uint32_t mant = h & 0x3ffu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {  // subnormal: normalize
      int e = -1;
      std::uint32_t m = mant;
      do {
        m <<= 1;
        e++;
      } while ((m & 0x400u) == 0);
      bits = sign | ((127 - 15 - e) << 23) | ((m & 0x3ffu) << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

// ---------------------------------------------------------------------------
// Dtype tags shared by the binary formats.

enum class Dtype : std::uint8_t { f32 = 0, f16 = 1, f64 = 2 };

inline std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f32: return 4;
    case Dtype::f16: return 2;
    case Dtype::f64: return 8;
  }
  throw ContractError("unknown dtype tag " + std::to_string(static_cast<int>(d)));
}

inline std::string dtype_name(Dtype d) {
  switch (d) {
    case Dtype::f32: return "fp32";
    case Dtype::f16: return "fp16";
    case Dtype::f64: return "fp64";
  }
  return "?";
}

inline std::optional<Dtype> dtype_from_name(std::string_view name) {
  if (name == "fp32") return Dtype::f32;
  if (name == "fp16") return Dtype::f16;
  if (name == "fp64") return Dtype::f64;
  return std::nullopt;
}

}  // namespace scone
