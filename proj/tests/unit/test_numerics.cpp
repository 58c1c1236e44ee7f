#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "fixtures.hpp"
#include "fk/errors.hpp"
#include "fk/numerics.hpp"
#include "oracles.hpp"

using fk::Matrix;

namespace {

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double sum_weighted(const Matrix& y, const Matrix& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * w.data()[i];
  return s;
}

}  // namespace

TEST(Matmul, IdentityAndScalar) {
  const Matrix m{{1, 2}, {3, 4}, {5, 6}};
  EXPECT_EQ(fk::matmul(Matrix::identity(3), m), m);
  EXPECT_EQ(fk::matmul(Matrix{{2}}, Matrix{{3}}), Matrix{{6}});
  EXPECT_THROW(fk::matmul(m, m), fk::ShapeError);
}

TEST(Matmul, BitwiseEqualToNaiveLoop) {
  fk::Xoshiro256 r(1);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = fixture::uniform(5, 4, r), b = fixture::uniform(4, 3, r);
    EXPECT_TRUE(bit_equal(fk::matmul(a, b), oracle::matmul(a, b)));
  }
}

TEST(Softmax, Examples) {
  EXPECT_EQ(fk::softmax_rows(Matrix{{42.0}}), Matrix{{1.0}});
  const Matrix eq = fk::softmax_rows(Matrix{{3, 3, 3, 3}});
  for (double x : eq.data()) EXPECT_DOUBLE_EQ(x, 0.25);
  const Matrix s = fk::softmax_rows(Matrix{{0.0, std::log(3.0)}});
  EXPECT_NEAR(s(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(s(0, 1), 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneUpTo700) {
  fk::Xoshiro256 r(2);
  const Matrix m = fixture::uniform(50, 17, r, -700, 700);
  const Matrix s = fk::softmax_rows(m);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double sum = 0;
    for (double x : s.row(i)) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Mlp, IdentityWeightsAndReluKill) {
  const auto p = fk::MlpParams::identity(3);
  const Matrix x{{0.5, 2, 0}, {1, 1, 1}};
  EXPECT_EQ(fk::mlp_forward(x, p), x);
  EXPECT_EQ(fk::mlp_forward(Matrix{{-1}}, fk::MlpParams::identity(1)), Matrix{{0}});
  EXPECT_THROW(fk::mlp_forward(Matrix{{1, 2}}, p), fk::ShapeError);
}

TEST(Mlp, MatchesNaiveOracle) {
  fk::Xoshiro256 r(3);
  for (int t = 0; t < 10; ++t) {
    const auto p = fk::MlpParams::random(6, 5, 4, 100 + t);
    const Matrix x = fixture::uniform(3, 6, r);
    EXPECT_LT(oracle::max_abs_diff(fk::mlp_forward(x, p), oracle::mlp(x, p)), 1e-12);
  }
}

TEST(Mlp, AnalyticGradientMatchesFiniteDifference) {
  fk::Xoshiro256 r(4);
  for (int t = 0; t < 10; ++t) {
    const auto p = fk::MlpParams::random(5, 7, 3, 200 + t);
    const Matrix x = fixture::uniform(4, 5, r);
    const Matrix dy = fixture::uniform(4, 3, r);
    const auto g = fk::mlp_backward(x, p, dy);
    const Matrix fd = fk::finite_diff_grad([&](const Matrix& z) { return sum_weighted(fk::mlp_forward(z, p), dy); }, x);
    EXPECT_LT(fk::relative_error(g.dx, fd), 1e-4);
    const Matrix fd_w1 = fk::finite_diff_grad(
        [&](const Matrix& w) {
          auto q = p;
          q.w1 = w;
          return sum_weighted(fk::mlp_forward(x, q), dy);
        },
        p.w1);
    EXPECT_LT(fk::relative_error(g.dw1, fd_w1), 1e-4);
  }
}

TEST(CrossAttention, SingleKeyReturnsValue) {
  const auto p = fk::CrossAttnParams::identity(3, 2, 1);
  const Matrix q{{0.3, -1, 2}, {5, 5, 5}};
  const Matrix kv{{1, 2, 3}};
  const Matrix out = fk::cross_attention(q, kv, kv, p);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out(i, c), kv(0, c));
}

TEST(CrossAttention, OrthogonalQueryGivesUniformMix) {
  fk::CrossAttnParams p = fk::CrossAttnParams::identity(3, 1, 1);
  const Matrix q{{0, 0, 1}};
  const Matrix k{{1, 0, 0}, {0, 1, 0}, {-1, 0, 0}};
  const Matrix v{{3, 0, 0}, {0, 6, 0}, {0, 0, 9}};
  const Matrix out = fk::cross_attention(q, k, v, p);
  EXPECT_NEAR(out(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(out(0, 1), 2.0, 1e-15);
  EXPECT_NEAR(out(0, 2), 3.0, 1e-15);
}

TEST(CrossAttention, MatchesUnrolledOracle) {
  fk::Xoshiro256 r(5);
  for (std::size_t heads : {1, 2, 4}) {
    for (bool residual : {false, true}) {
      auto p = fk::CrossAttnParams::random(4, 2, heads, 300 + heads);
      p.residual = residual;
      const Matrix q = fixture::uniform(3, 4, r), k = fixture::uniform(5, 4, r), v = fixture::uniform(5, 4, r);
      EXPECT_LT(oracle::max_abs_diff(fk::cross_attention(q, k, v, p), oracle::attention(q, k, v, p)), 1e-12);
    }
  }
}

TEST(CrossAttention, ShapeErrors) {
  const auto p = fk::CrossAttnParams::identity(3);
  EXPECT_THROW(fk::cross_attention(Matrix{{1, 2}}, Matrix{{1, 2, 3}}, Matrix{{1, 2, 3}}, p), fk::ShapeError);
  EXPECT_THROW(fk::cross_attention(Matrix{{1, 2, 3}}, Matrix{{1, 2, 3}}, Matrix{{1, 2, 3}, {1, 2, 3}}, p),
               fk::ShapeError);
  EXPECT_THROW(fk::CrossAttnParams::random(6, 2, 4, 1), fk::ShapeError);
}

TEST(CrossAttention, InvariantUnderJointKeyValuePermutation) {
  fk::Xoshiro256 r(6);
  const auto p = fk::CrossAttnParams::random(6, 2, 2, 7);
  const Matrix q = fixture::uniform(4, 6, r), k = fixture::uniform(9, 6, r), v = fixture::uniform(9, 6, r);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  r.shuffle(std::span<std::size_t>(perm));
  const Matrix a = fk::cross_attention(q, k, v, p);
  const Matrix b = fk::cross_attention(q, k.gather_rows(perm), v.gather_rows(perm), p);
  EXPECT_LT(fk::relative_error(a, b), 1e-12);
}

TEST(CrossAttention, BackwardMatchesFiniteDifference) {
  fk::Xoshiro256 r(7);
  for (std::size_t heads : {1, 2}) {
    auto p = fk::CrossAttnParams::random(4, 2, heads, 40 + heads);
    const Matrix q = fixture::uniform(3, 4, r), k = fixture::uniform(5, 4, r), v = fixture::uniform(5, 4, r);
    const Matrix dout = fixture::uniform(3, 4, r);
    const auto g = fk::cross_attention_backward(q, k, v, p, dout);
    auto f_q = [&](const Matrix& z) { return sum_weighted(fk::cross_attention(z, k, v, p), dout); };
    auto f_k = [&](const Matrix& z) { return sum_weighted(fk::cross_attention(q, z, v, p), dout); };
    auto f_v = [&](const Matrix& z) { return sum_weighted(fk::cross_attention(q, k, z, p), dout); };
    EXPECT_LT(fk::relative_error(g.dq, fk::finite_diff_grad(f_q, q)), 1e-4);
    EXPECT_LT(fk::relative_error(g.dk, fk::finite_diff_grad(f_k, k)), 1e-4);
    EXPECT_LT(fk::relative_error(g.dv, fk::finite_diff_grad(f_v, v)), 1e-4);
    auto f_wq = [&](const Matrix& w) {
      auto pp = p;
      pp.layers[0].wq = w;
      return sum_weighted(fk::cross_attention(q, k, v, pp), dout);
    };
    EXPECT_LT(fk::relative_error(g.layers[0].dwq, fk::finite_diff_grad(f_wq, p.layers[0].wq)), 1e-4);
  }
}

TEST(FiniteDiff, LinearAndQuadratic) {
  const Matrix x{{1, -2}, {0.5, 3}};
  const Matrix g1 = fk::finite_diff_grad(
      [](const Matrix& z) {
        double s = 0;
        for (double v : z.data()) s += v;
        return s;
      },
      x);
  for (double v : g1.data()) EXPECT_NEAR(v, 1.0, 1e-9);
  const Matrix g2 = fk::finite_diff_grad(
      [](const Matrix& z) {
        double s = 0;
        for (double v : z.data()) s += 0.5 * v * v;
        return s;
      },
      x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g2.data()[i], x.data()[i], 1e-6);
}

TEST(Cosine, Examples) {
  const Matrix a{{1, 0}, {0, 1}, {1, 1}, {0, 0}};
  const Matrix s = fk::cosine_similarity_matrix(a, a);
  EXPECT_EQ(s(0, 0), 1.0);
  EXPECT_EQ(s(2, 2), 1.0);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_NEAR(s(2, 0), 0.70710678118654752, 1e-12);
  EXPECT_EQ(s(3, 0), 0.0);  // zero-norm row
  EXPECT_EQ(s(3, 3), 0.0);
  EXPECT_THROW(fk::cosine_similarity_matrix(a, Matrix{{1, 2, 3}}), fk::ShapeError);
}

TEST(Cosine, ScaleInvariant) {
  fk::Xoshiro256 r(8);
  const Matrix a = fixture::uniform(6, 5, r), b = fixture::uniform(4, 5, r);
  Matrix a3 = a;
  for (double& x : a3.data()) x *= 3.7;
  const Matrix s1 = fk::cosine_similarity_matrix(a, b), s2 = fk::cosine_similarity_matrix(a3, b);
  EXPECT_LT(oracle::max_abs_diff(s1, s2), 1e-12);
  for (double x : s1.data()) {
    EXPECT_LE(std::abs(x), 1.0 + 1e-15);
  }
}
