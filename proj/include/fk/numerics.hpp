#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "fk/matrix.hpp"

namespace fk {

Matrix matmul(const Matrix& a, const Matrix& b);

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

/// Two-layer perceptron y = relu(x W1 + b1) W2 + b2.
struct MlpParams {
  Matrix w1;               // d_in x d_hidden
  std::vector<double> b1;  // d_hidden
  Matrix w2;               // d_hidden x d_out
  std::vector<double> b2;  // d_out

  std::size_t d_in() const noexcept { return w1.rows(); }
  std::size_t d_hidden() const noexcept { return w1.cols(); }
  std::size_t d_out() const noexcept { return w2.cols(); }

  /// Throws ShapeError unless the chain d_in -> d_hidden -> d_out is consistent.
  void validate() const;

  static MlpParams identity(std::size_t dim);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static MlpParams random(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                          std::uint64_t seed);
};

Matrix mlp_forward(const Matrix& x, const MlpParams& p);

struct MlpGrads {
  Matrix dx;
  Matrix dw1;
  std::vector<double> db1;
  Matrix dw2;
  std::vector<double> db2;
};

/// Gradients of sum(dy .* mlp_forward(x, p)). The ReLU derivative at 0 is taken as 0.
MlpGrads mlp_backward(const Matrix& x, const MlpParams& p, const Matrix& dy);

struct AttnLayer {
  Matrix wq;
  Matrix wk;
  Matrix wv;
  Matrix wo;
};

/// Stack of cross-attention layers sharing one model width D.
struct CrossAttnParams {
  std::vector<AttnLayer> layers;
  std::size_t num_heads = 1;
  /// Adds the layer input to the layer output. Off by default.
  bool residual = false;

  std::size_t dim() const;
  void validate() const;

  static CrossAttnParams identity(std::size_t dim, std::size_t num_layers = 2,
                                  std::size_t num_heads = 1);
  /// Uniform(-1/sqrt(D), 1/sqrt(D)) projections drawn from a seeded xoshiro256** stream.
  static CrossAttnParams random(std::size_t dim, std::size_t num_layers, std::size_t num_heads,
                                std::uint64_t seed);
};

/// Scaled dot-product cross-attention, applied layer by layer. Layer i's output
/// becomes layer i+1's query; keys and values stay fixed to `k` and `v`.
Matrix cross_attention(const Matrix& q, const Matrix& k, const Matrix& v, const CrossAttnParams& p);

struct AttnLayerGrads {
  Matrix dwq;
  Matrix dwk;
  Matrix dwv;
  Matrix dwo;
};

struct CrossAttnGrads {
  Matrix dq;
  Matrix dk;
  Matrix dv;
  std::vector<AttnLayerGrads> layers;
};

/// Gradients of sum(dout .* cross_attention(q, k, v, p)).
CrossAttnGrads cross_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                        const CrossAttnParams& p, const Matrix& dout);

using ScalarFn = std::function<double(const Matrix&)>;

/// Central-difference gradient of f at x.
Matrix finite_diff_grad(const ScalarFn& f, const Matrix& x, double eps = 1e-6);

/// S[i][j] = cos(a_i, b_j). A zero-norm row has similarity 0 with everything.
Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b);

/// ||a - b|| / max(||a||, ||b||), or 0 when both are zero.
double relative_error(const Matrix& a, const Matrix& b);

}  // namespace fk
