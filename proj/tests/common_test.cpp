#include "scone/common.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <set>

namespace scone {
namespace {

TEST(ByteIo, RoundTripsScalars) {
  std::string buf;
  put_u8(buf, 0xab);
  put_u16(buf, 0x1234);
  put_u32(buf, 0xdeadbeef);
  put_u64(buf, 0x0123456789abcdefull);
  put_f32(buf, 1.5f);
  put_f64(buf, -2.25);
  ByteReader r(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(buf.data()), buf.size()));
  EXPECT_EQ(r.u8(), 0xab);
  EXPECT_EQ(r.u16(), 0x1234);
  EXPECT_EQ(r.u32(), 0xdeadbeefu);
  EXPECT_EQ(r.u64(), 0x0123456789abcdefull);
  EXPECT_EQ(r.f32(), 1.5f);
  EXPECT_EQ(r.f64(), -2.25);
  EXPECT_TRUE(r.at_end());
}

TEST(ByteIo, LittleEndianLayout) {
  std::string buf;
  put_u32(buf, 0x04030201);
  ASSERT_EQ(buf.size(), 4u);
  EXPECT_EQ(buf[0], 1);
  EXPECT_EQ(buf[1], 2);
  EXPECT_EQ(buf[2], 3);
  EXPECT_EQ(buf[3], 4);
}

TEST(ByteIo, ReadPastEndThrowsWithOffset) {
  std::vector<std::uint8_t> data{1, 2, 3};
  ByteReader r(data);
  r.u16();
  try {
    r.u32();
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.byte_offset, 2u);
  }
}

TEST(Fingerprint, MatchesPublishedFnvVectors) {
  EXPECT_EQ(fnv1a64(std::span<const std::uint8_t>{}), 0xcbf29ce484222325ull);
  std::uint8_t a = 'a';
  EXPECT_EQ(fnv1a64(std::span<const std::uint8_t>(&a, 1)), 0xaf63dc4c8601ec8cull);
}

TEST(CommitFile, WritesAtomicallyAndLeavesNoTemp) {
  auto dir = std::filesystem::temp_directory_path() / "scone_commit_test";
  std::filesystem::create_directories(dir);
  auto path = dir / "artifact.bin";
  commit_file(path, "hello");
  EXPECT_EQ(read_file(path).size(), 5u);
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  commit_file(path, "rewritten");  // overwrite is fine
  EXPECT_EQ(read_file(path).size(), 9u);
  std::filesystem::remove_all(dir);
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 100; ++i) differs |= (a2.next_u64() != c.next_u64());
  EXPECT_TRUE(differs);
}

TEST(Rng, BelowIsInRangeAndCoversSmallDomains) {
  Rng rng(7);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    std::uint64_t v = rng.below(5);
    EXPECT_LT(v, 5u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 5u);
}

TEST(Rng, NormalHasSaneMoments) {
  Rng rng(11);
  double sum = 0, sumsq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sumsq / n, 1.0, 0.03);
}

TEST(Rng, ShuffleIsAPermutation) {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  Rng rng(3);
  shuffle(v, rng);
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 100u);
}

// Every finite half value survives a round trip through float exactly.
TEST(Half, RoundTripIsExactForAllFiniteHalves) {
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    std::uint16_t bits = static_cast<std::uint16_t>(h);
    if (((bits >> 10) & 0x1f) == 0x1f) continue;  // inf/nan
    float f = half_to_float(bits);
    EXPECT_EQ(float_to_half(f), bits) << "half bits " << h;
  }
}

// Independent nearest-even oracle: the conversion result must be at least as
// close to the input as both neighbouring half values, with ties broken to
// the even mantissa.
TEST(Half, RoundsToNearestEven) {
  Rng rng(99);
  auto check = [](float f) {
    std::uint16_t h = float_to_half(f);
    if (((h >> 10) & 0x1f) == 0x1f) return;  // overflowed to inf; checked below
    double v = half_to_float(h);
    double err = std::abs(static_cast<double>(f) - v);
    for (int delta : {-1, 1}) {
      std::uint16_t n = static_cast<std::uint16_t>(h + delta);
      if ((n & 0x8000) != (h & 0x8000)) continue;     // crossed zero
      if (((n >> 10) & 0x1f) == 0x1f) continue;       // neighbour is inf
      double nv = half_to_float(n);
      double nerr = std::abs(static_cast<double>(f) - nv);
      EXPECT_LE(err, nerr) << "f=" << f;
      if (nerr == err) EXPECT_EQ(h & 1, 0) << "tie must round to even, f=" << f;
    }
  };
  for (int i = 0; i < 100000; ++i) {
    double mag = std::exp((rng.uniform() * 2 - 1) * 12.0);
    check(static_cast<float>((rng.uniform() * 2 - 1) * mag));
  }
  check(0.0f);
  check(-0.0f);
  check(65504.0f);   // max finite half
  check(5.96e-8f);   // smallest subnormal neighbourhood
}

TEST(Half, SaturatesAndPropagatesSpecials) {
  EXPECT_EQ(float_to_half(1e10f), 0x7c00);
  EXPECT_EQ(float_to_half(-1e10f), 0xfc00);
  EXPECT_EQ(float_to_half(std::numeric_limits<float>::infinity()), 0x7c00);
  std::uint16_t nan_h = float_to_half(std::numeric_limits<float>::quiet_NaN());
  EXPECT_EQ((nan_h >> 10) & 0x1f, 0x1f);
  EXPECT_NE(nan_h & 0x3ff, 0);
  EXPECT_TRUE(std::isnan(half_to_float(nan_h)));
}

TEST(Dtype, NamesRoundTrip) {
  for (Dtype d : {Dtype::f32, Dtype::f16, Dtype::f64}) {
    auto back = dtype_from_name(dtype_name(d));
    ASSERT_TRUE(back.has_value());
    EXPECT_EQ(*back, d);
  }
  EXPECT_FALSE(dtype_from_name("fp8").has_value());
}

}  // namespace
}  // namespace scone
