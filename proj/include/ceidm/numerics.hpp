#pragma once

#include <functional>
#include <vector>

#include "ceidm/rng.hpp"
#include "ceidm/types.hpp"

namespace ceidm {

// Row-major dense tensor of 64-bit floats. Non-finite values are rejected at
// construction.
struct Tensor {
  std::vector<Index> shape;
  Vec data;

  Tensor(std::vector<Index> shape_, Vec data_);

  Index size() const { return data.size(); }
};

double sigmoid(double x);

// Smooth GELU approximation x * sigmoid(1.702 x); differentiable everywhere,
// which the finite-difference checks rely on.
double quick_gelu(double x);
double quick_gelu_grad(double x);

// Numerically stable softmax (max subtraction). Output is positive and sums
// to 1 within 1e-12.
Vec softmax(const Eigen::Ref<const Vec>& x);

// Softmax applied independently to each row.
Mat row_softmax(const Mat& scores);

struct LinearLayer {
  Mat weight;  // out x in
  Vec bias;    // out

  static LinearLayer init(Index out, Index in, Rng& rng);
  static LinearLayer zeros(Index out, Index in);

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }
};

Vec linear_apply(const LinearLayer& layer, const Eigen::Ref<const Vec>& x);

// Two-layer perceptron: out(quick_gelu(hidden(x))).
struct Mlp {
  LinearLayer hidden;
  LinearLayer out;

  static Mlp init(Index out, Index hidden_dim, Index in, Rng& rng);
  static Mlp zeros(Index out, Index hidden_dim, Index in);

  Vec apply(const Eigen::Ref<const Vec>& x) const;

  // Applies the MLP to every row of x independently.
  Mat apply_rows(const Mat& x) const;

  Index in_dim() const { return hidden.in_dim(); }
  Index out_dim() const { return out.out_dim(); }
};

// Single-head attention projections over a shared token dimension.
struct AttentionParams {
  Mat wq, wk, wv;  // each d x d
  int head_count = 1;

  static AttentionParams init(Index d, Rng& rng);
  static AttentionParams zeros(Index d);
  static AttentionParams identity(Index d);

  Index dim() const { return wq.rows(); }
};

// Scaled dot-product self-attention over row-token matrices:
// softmax(Q K^T / sqrt(d)) V with Q = X Wq^T, K = X Wk^T, V = X Wv^T.
Mat self_attention(const Mat& tokens, const AttentionParams& params);

// Cross-attention: queries from `queries` rows, keys/values from `context`
// rows. Both must share the params dimension.
Mat cross_attention(const Mat& queries, const Mat& context,
                    const AttentionParams& params);

struct AttentionGrads {
  Mat d_tokens;
  Mat d_wq, d_wk, d_wv;
};

// Reverse-mode gradients of self_attention given d(output).
AttentionGrads self_attention_backward(const Mat& tokens,
                                       const AttentionParams& params,
                                       const Mat& d_out);

// Symmetric PSD square root via eigendecomposition. Eigenvalues below 1e-10
// are clamped to zero; values below -1e-10 raise NumericError, as does an
// asymmetric input.
Mat psd_sqrt(const Mat& m);

// Max over coordinates of |g_analytic - g_fd| / max(1e-8, |g_a| + |g_fd|),
// central differences with step eps (eps must lie in [1e-7, 1e-3]).
double grad_check(const std::function<double(const Vec&)>& f,
                  const std::function<Vec(const Vec&)>& grad_f, const Vec& x,
                  double eps);

}  // namespace ceidm
