#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <vector>

#include "fixtures.hpp"
#include "fk/errors.hpp"
#include "fk/hashing.hpp"
#include "fk/matrix.hpp"
#include "fk/rng.hpp"

using fk::Matrix;

TEST(Hashing, KnownVectors) {
  EXPECT_EQ(fk::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(fk::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hashing, FileMatchesBytes) {
  auto dir = fixture::scratch("hash");
  std::ofstream(dir / "f.txt", std::ios::binary) << "abc";
  EXPECT_EQ(fk::sha256_file(dir / "f.txt"), fk::sha256_hex("abc"));
  EXPECT_THROW(fk::sha256_file(dir / "missing"), fk::IoError);
}

TEST(Rng, SplitMixReferenceValue) {
  std::uint64_t s = 0;
  EXPECT_EQ(fk::splitmix64(s), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(fk::splitmix64(s), 0x6e789e6aa1b965f4ULL);
}

TEST(Rng, SameSeedSameStream) {
  fk::Xoshiro256 a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs = differs || x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, DeriveSeedSeparatesLabels) {
  EXPECT_EQ(fk::derive_seed(7, "rate:10"), fk::derive_seed(7, "rate:10"));
  EXPECT_NE(fk::derive_seed(7, "rate:10"), fk::derive_seed(7, "rate:30"));
  EXPECT_NE(fk::derive_seed(7, "blind"), fk::derive_seed(8, "blind"));
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  fk::Xoshiro256 r(1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, UniformAndNormalMoments) {
  fk::Xoshiro256 r(9);
  const int n = 100000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.01);
  const double mean = sn / n;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(std::sqrt(sn2 / n - mean * mean), 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  fk::Xoshiro256 r(3);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(std::span<int>(w));
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(Matrix, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(Matrix(0, 3), fk::ShapeError);
  EXPECT_THROW(Matrix(2, 0), fk::ShapeError);
  EXPECT_THROW(Matrix(1, 2, {1.0}), fk::ShapeError);
  EXPECT_THROW(Matrix(1, 2, {1.0, std::nan("")}), fk::ValidationError);
  EXPECT_THROW(Matrix({{1.0, INFINITY}}), fk::ValidationError);
}

TEST(Matrix, SlicesAndStacks) {
  Matrix m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(m.transpose(), (Matrix{{1, 4}, {2, 5}, {3, 6}}));
  EXPECT_EQ(m.row_slice(1, 1), (Matrix{{4, 5, 6}}));
  EXPECT_EQ(m.col_slice(1, 2), (Matrix{{2, 3}, {5, 6}}));
  const std::vector<std::size_t> idx{1, 0, 1};
  EXPECT_EQ(m.gather_rows(idx), (Matrix{{4, 5, 6}, {1, 2, 3}, {4, 5, 6}}));
  const std::vector<Matrix> parts{Matrix{{1, 2}}, Matrix{{3, 4}}};
  EXPECT_EQ(fk::vstack(parts), (Matrix{{1, 2}, {3, 4}}));
  EXPECT_EQ(fk::hstack(parts), (Matrix{{1, 2, 3, 4}}));
  EXPECT_THROW(m.row_slice(1, 2), fk::ShapeError);
}

TEST(Matrix, FkmxRoundTripIsBitExact) {
  fk::Xoshiro256 r(5);
  const Matrix m = fixture::uniform(7, 3, r, -1e300, 1e300);
  std::stringstream ss;
  fk::write_fkmx(ss, m);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 8u + 7u * 3u * 8u);
  EXPECT_EQ(bytes.substr(0, 4), "FKMX");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 7);  // little-endian rows
  const Matrix back = fk::read_fkmx(ss);
  ASSERT_EQ(back.rows(), 7u);
  EXPECT_TRUE(std::equal(m.data().begin(), m.data().end(), back.data().begin(),
                         [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }));
}

TEST(Matrix, FkmxBadMagicAndTruncation) {
  std::stringstream bad("FKMY\x01\0\0\0\x01\0\0\0");
  EXPECT_THROW(fk::read_fkmx(bad), fk::IoError);
  std::stringstream ss;
  fk::write_fkmx(ss, Matrix{{1, 2}});
  std::string s = ss.str();
  s.pop_back();
  std::stringstream cut(s);
  EXPECT_THROW(fk::read_fkmx(cut), fk::IoError);
}

TEST(Matrix, CsvRoundTripIsExact) {
  fk::Xoshiro256 r(11);
  const Matrix m = fixture::uniform(4, 5, r);
  std::stringstream ss;
  fk::write_csv(ss, m);
  EXPECT_EQ(fk::read_csv(ss), m);
}

TEST(Errors, CarryPathAndOffset) {
  const fk::ValidationError v("bad", "/a/b");
  EXPECT_EQ(v.path(), "/a/b");
  const fk::ParseError p("oops", 12);
  EXPECT_EQ(p.offset(), 12u);
  EXPECT_NE(std::string(p.what()).find("12"), std::string::npos);
}
