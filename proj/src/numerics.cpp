#include "fk/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fk/errors.hpp"
#include "fk/rng.hpp"

namespace fk {

namespace {

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

Matrix add_row_vector(Matrix m, const std::vector<double>& b) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += b[c];
  return m;
}

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Xoshiro256& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = (2.0 * rng.uniform01() - 1.0) * bound;
  return m;
}

// a * b^T without materializing the transpose.
Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += ai[t] * bj[t];
      out(i, j) = s;
    }
  }
  return out;
}

// Everything one layer's backward pass needs.
struct LayerCache {
  Matrix x;  // layer input (query side)
  Matrix qp;
  Matrix kp;
  Matrix vp;
  std::vector<Matrix> attn;  // per head, n_q x n_k
  Matrix concat;             // n_q x D, heads side by side
  Matrix out;
};

LayerCache layer_forward(const Matrix& x, const Matrix& k, const Matrix& v, const AttnLayer& layer,
                         std::size_t heads, bool residual) {
  const std::size_t dim = layer.wq.rows();
  const std::size_t head_dim = dim / heads;
  const double scale = std::sqrt(static_cast<double>(head_dim));

  LayerCache c{x, matmul(x, layer.wq), matmul(k, layer.wk), matmul(v, layer.wv), {}, Matrix(x.rows(), dim),
               Matrix(x.rows(), dim)};
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix qh = c.qp.col_slice(h * head_dim, head_dim);
    const Matrix kh = c.kp.col_slice(h * head_dim, head_dim);
    const Matrix vh = c.vp.col_slice(h * head_dim, head_dim);
    Matrix logits = matmul_bt(qh, kh);
    for (double& z : logits.data()) z /= scale;
    Matrix a = softmax_rows(logits);
    const Matrix oh = matmul(a, vh);
    for (std::size_t r = 0; r < oh.rows(); ++r)
      for (std::size_t col = 0; col < head_dim; ++col) c.concat(r, h * head_dim + col) = oh(r, col);
    c.attn.push_back(std::move(a));
  }
  c.out = matmul(c.concat, layer.wo);
  if (residual) {
    for (std::size_t i = 0; i < c.out.size(); ++i) c.out.data()[i] += x.data()[i];
  }
  return c;
}

// Forward only: same arithmetic order as layer_forward, without the caches.
Matrix layer_forward_lean(const Matrix& x, const Matrix& k, const Matrix& v, const AttnLayer& layer,
                          std::size_t heads, bool residual) {
  const std::size_t dim = layer.wq.rows();
  const std::size_t head_dim = dim / heads;
  const double scale = std::sqrt(static_cast<double>(head_dim));
  const Matrix qp = matmul(x, layer.wq), kp = matmul(k, layer.wk), vp = matmul(v, layer.wv);
  Matrix concat(x.rows(), dim);
  std::vector<double> a(k.rows());
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto qi = qp.row(i);
      for (std::size_t j = 0; j < k.rows(); ++j) {
        const auto kj = kp.row(j);
        double s = 0.0;
        for (std::size_t t = 0; t < head_dim; ++t) s += qi[off + t] * kj[off + t];
        a[j] = s / scale;
      }
      const double mx = *std::max_element(a.begin(), a.end());
      double sum = 0.0;
      for (double& z : a) {
        z = std::exp(z - mx);
        sum += z;
      }
      for (double& z : a) z /= sum;
      auto oi = concat.row(i);
      for (std::size_t j = 0; j < k.rows(); ++j) {
        const double aij = a[j];
        const auto vj = vp.row(j);
        for (std::size_t t = 0; t < head_dim; ++t) oi[off + t] += aij * vj[off + t];
      }
    }
  }
  Matrix out = matmul(concat, layer.wo);
  if (residual) {
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += x.data()[i];
  }
  return out;
}

void accumulate(Matrix& into, const Matrix& add) {
  for (std::size_t i = 0; i < into.size(); ++i) into.data()[i] += add.data()[i];
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + dims(a) + " * " + dims(b));
  Matrix out(a.rows(), b.cols());
  // i-k-j order; each output entry still accumulates over k in ascending order.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto oi = out.row(i);
    for (std::size_t t = 0; t < a.cols(); ++t) {
      const double aik = a(i, t);
      auto bk = b.row(t);
      for (std::size_t j = 0; j < b.cols(); ++j) oi[j] += aik * bk[j];
    }
  }
  require_finite(out, "matmul");
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& x : o) x /= sum;
  }
  return out;
}

void MlpParams::validate() const {
  if (b1.size() != w1.cols()) throw ShapeError("mlp: b1 length != W1 cols");
  if (w2.rows() != w1.cols()) throw ShapeError("mlp: W2 rows != W1 cols");
  if (b2.size() != w2.cols()) throw ShapeError("mlp: b2 length != W2 cols");
}

MlpParams MlpParams::identity(std::size_t dim) {
  return {Matrix::identity(dim), std::vector<double>(dim, 0.0), Matrix::identity(dim),
          std::vector<double>(dim, 0.0)};
}

MlpParams MlpParams::random(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                            std::uint64_t seed) {
  Xoshiro256 rng(seed);
  Matrix w1 = uniform_matrix(d_in, d_hidden, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
  Matrix w2 = uniform_matrix(d_hidden, d_out, 1.0 / std::sqrt(static_cast<double>(d_hidden)), rng);
  return {std::move(w1), std::vector<double>(d_hidden, 0.0), std::move(w2),
          std::vector<double>(d_out, 0.0)};
}

Matrix mlp_forward(const Matrix& x, const MlpParams& p) {
  p.validate();
  if (x.cols() != p.d_in()) {
    throw ShapeError("mlp_forward: input width " + std::to_string(x.cols()) + " != d_in " +
                     std::to_string(p.d_in()));
  }
  Matrix h = add_row_vector(matmul(x, p.w1), p.b1);
  for (double& z : h.data()) z = std::max(z, 0.0);
  Matrix y = add_row_vector(matmul(h, p.w2), p.b2);
  require_finite(y, "mlp_forward");
  return y;
}

MlpGrads mlp_backward(const Matrix& x, const MlpParams& p, const Matrix& dy) {
  p.validate();
  if (x.cols() != p.d_in()) throw ShapeError("mlp_backward: input width mismatch");
  if (dy.rows() != x.rows() || dy.cols() != p.d_out()) throw ShapeError("mlp_backward: dy shape");

  const Matrix pre = add_row_vector(matmul(x, p.w1), p.b1);
  Matrix h = pre;
  for (double& z : h.data()) z = std::max(z, 0.0);

  Matrix dh = matmul(dy, p.w2.transpose());
  for (std::size_t i = 0; i < dh.size(); ++i) {
    if (pre.data()[i] <= 0.0) dh.data()[i] = 0.0;
  }
  MlpGrads g{matmul(dh, p.w1.transpose()), matmul(x.transpose(), dh),
             std::vector<double>(p.d_hidden(), 0.0), matmul(h.transpose(), dy),
             std::vector<double>(p.d_out(), 0.0)};
  for (std::size_t r = 0; r < dh.rows(); ++r)
    for (std::size_t c = 0; c < dh.cols(); ++c) g.db1[c] += dh(r, c);
  for (std::size_t r = 0; r < dy.rows(); ++r)
    for (std::size_t c = 0; c < dy.cols(); ++c) g.db2[c] += dy(r, c);
  return g;
}

std::size_t CrossAttnParams::dim() const {
  if (layers.empty()) throw ShapeError("cross-attention: no layers");
  return layers.front().wq.rows();
}

void CrossAttnParams::validate() const {
  const std::size_t d = dim();
  if (num_heads == 0 || d % num_heads != 0) {
    throw ShapeError("cross-attention: D=" + std::to_string(d) + " not divisible by num_heads=" +
                     std::to_string(num_heads));
  }
  for (const auto& l : layers) {
    for (const Matrix* w : {&l.wq, &l.wk, &l.wv, &l.wo}) {
      if (w->rows() != d || w->cols() != d) throw ShapeError("cross-attention: projection must be DxD");
    }
  }
}

CrossAttnParams CrossAttnParams::identity(std::size_t dim, std::size_t num_layers,
                                          std::size_t num_heads) {
  if (num_heads == 0 || dim % num_heads != 0) {
    throw ShapeError("cross-attention: D=" + std::to_string(dim) + " not divisible by num_heads=" +
                     std::to_string(num_heads));
  }
  CrossAttnParams p;
  p.num_heads = num_heads;
  for (std::size_t i = 0; i < num_layers; ++i) {
    p.layers.push_back({Matrix::identity(dim), Matrix::identity(dim), Matrix::identity(dim),
                        Matrix::identity(dim)});
  }
  return p;
}

CrossAttnParams CrossAttnParams::random(std::size_t dim, std::size_t num_layers,
                                        std::size_t num_heads, std::uint64_t seed) {
  if (num_heads == 0 || dim % num_heads != 0) {
    throw ShapeError("cross-attention: D=" + std::to_string(dim) + " not divisible by num_heads=" +
                     std::to_string(num_heads));
  }
  Xoshiro256 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  CrossAttnParams p;
  p.num_heads = num_heads;
  for (std::size_t i = 0; i < num_layers; ++i) {
    Matrix wq = uniform_matrix(dim, dim, bound, rng);
    Matrix wk = uniform_matrix(dim, dim, bound, rng);
    Matrix wv = uniform_matrix(dim, dim, bound, rng);
    Matrix wo = uniform_matrix(dim, dim, bound, rng);
    p.layers.push_back({std::move(wq), std::move(wk), std::move(wv), std::move(wo)});
  }
  return p;
}

Matrix cross_attention(const Matrix& q, const Matrix& k, const Matrix& v, const CrossAttnParams& p) {
  p.validate();
  const std::size_t d = p.dim();
  if (q.cols() != d || k.cols() != d || v.cols() != d) {
    throw ShapeError("cross_attention: q " + dims(q) + ", k " + dims(k) + ", v " + dims(v) +
                     " vs D=" + std::to_string(d));
  }
  if (k.rows() != v.rows()) throw ShapeError("cross_attention: k and v row counts differ");
  Matrix x = q;
  for (const auto& layer : p.layers) x = layer_forward_lean(x, k, v, layer, p.num_heads, p.residual);
  require_finite(x, "cross_attention");
  return x;
}

CrossAttnGrads cross_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                        const CrossAttnParams& p, const Matrix& dout) {
  p.validate();
  const std::size_t d = p.dim();
  if (q.cols() != d || k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw ShapeError("cross_attention_backward: shape mismatch");
  }
  if (dout.rows() != q.rows() || dout.cols() != d) throw ShapeError("cross_attention_backward: dout");

  std::vector<LayerCache> caches;
  Matrix x = q;
  for (const auto& layer : p.layers) {
    caches.push_back(layer_forward(x, k, v, layer, p.num_heads, p.residual));
    x = caches.back().out;
  }

  const std::size_t head_dim = d / p.num_heads;
  const double scale = std::sqrt(static_cast<double>(head_dim));
  CrossAttnGrads g{Matrix(q.rows(), d), Matrix(k.rows(), d), Matrix(v.rows(), d), {}};
  g.layers.resize(p.layers.size(), {Matrix(d, d), Matrix(d, d), Matrix(d, d), Matrix(d, d)});

  Matrix dy = dout;
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const AttnLayer& layer = p.layers[li];
    const LayerCache& c = caches[li];
    g.layers[li].dwo = matmul(c.concat.transpose(), dy);
    const Matrix dconcat = matmul(dy, layer.wo.transpose());

    Matrix dqp(c.qp.rows(), d);
    Matrix dkp(c.kp.rows(), d);
    Matrix dvp(c.vp.rows(), d);
    for (std::size_t h = 0; h < p.num_heads; ++h) {
      const std::size_t off = h * head_dim;
      const Matrix& a = c.attn[h];
      const Matrix doh = dconcat.col_slice(off, head_dim);
      const Matrix qh = c.qp.col_slice(off, head_dim);
      const Matrix kh = c.kp.col_slice(off, head_dim);
      const Matrix vh = c.vp.col_slice(off, head_dim);

      const Matrix dvh = matmul(a.transpose(), doh);
      Matrix ds = matmul_bt(doh, vh);  // dA
      for (std::size_t r = 0; r < ds.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t col = 0; col < ds.cols(); ++col) dot += ds(r, col) * a(r, col);
        for (std::size_t col = 0; col < ds.cols(); ++col) ds(r, col) = a(r, col) * (ds(r, col) - dot) / scale;
      }
      const Matrix dqh = matmul(ds, kh);
      const Matrix dkh = matmul(ds.transpose(), qh);
      for (std::size_t r = 0; r < dqp.rows(); ++r)
        for (std::size_t col = 0; col < head_dim; ++col) dqp(r, off + col) = dqh(r, col);
      for (std::size_t r = 0; r < dkp.rows(); ++r)
        for (std::size_t col = 0; col < head_dim; ++col) {
          dkp(r, off + col) = dkh(r, col);
          dvp(r, off + col) = dvh(r, col);
        }
    }
    g.layers[li].dwq = matmul(c.x.transpose(), dqp);
    g.layers[li].dwk = matmul(k.transpose(), dkp);
    g.layers[li].dwv = matmul(v.transpose(), dvp);
    accumulate(g.dk, matmul(dkp, layer.wk.transpose()));
    accumulate(g.dv, matmul(dvp, layer.wv.transpose()));

    Matrix dx = matmul(dqp, layer.wq.transpose());
    if (p.residual) accumulate(dx, dy);
    dy = std::move(dx);
  }
  g.dq = std::move(dy);
  return g;
}

Matrix finite_diff_grad(const ScalarFn& f, const Matrix& x, double eps) {
  if (!(eps > 0.0)) throw ValidationError("finite_diff_grad: eps must be positive");
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    probe.data()[i] = orig + eps;
    const double up = f(probe);
    probe.data()[i] = orig - eps;
    const double down = f(probe);
    probe.data()[i] = orig;
    grad.data()[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("cosine_similarity_matrix: " + dims(a) + " vs " + dims(b));
  auto sq_norms = [](const Matrix& m) {
    std::vector<double> n(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (double x : m.row(r)) n[r] += x * x;
    return n;
  };
  const auto na = sq_norms(a);
  const auto nb = sq_norms(b);
  Matrix s = matmul_bt(a, b);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): a row against itself gives exactly 1.
      s(i, j) = (na[i] == 0.0 || nb[j] == 0.0) ? 0.0 : s(i, j) / std::sqrt(na[i] * nb[j]);
    }
  }
  return s;
}

double relative_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("relative_error: shape mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    diff += d * d;
    na += a.data()[i] * a.data()[i];
    nb += b.data()[i] * b.data()[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace fk
