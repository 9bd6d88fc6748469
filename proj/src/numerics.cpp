#include "ceidm/numerics.hpp"

#include <cmath>
#include <string>

#include "ceidm/errors.hpp"

namespace ceidm {

Tensor::Tensor(std::vector<Index> shape_, Vec data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  Index expected = 1;
  for (Index d : shape) {
    if (d <= 0) throw ValidationError("tensor dimension must be positive");
    expected *= d;
  }
  if (expected != data.size())
    throw ValidationError("tensor shape/data mismatch: expected " +
                          std::to_string(expected) + " values, got " +
                          std::to_string(data.size()));
  if (!data.allFinite())
    throw ValidationError("tensor contains non-finite values");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double quick_gelu(double x) { return x * sigmoid(1.702 * x); }

double quick_gelu_grad(double x) {
  const double s = sigmoid(1.702 * x);
  return s + 1.702 * x * s * (1.0 - s);
}

Vec softmax(const Eigen::Ref<const Vec>& x) {
  if (x.size() == 0) throw ValidationError("softmax: empty input");
  if (!x.allFinite()) throw ValidationError("softmax: non-finite input");
  const double m = x.maxCoeff();
  Vec e = (x.array() - m).exp();
  return e / e.sum();
}

Mat row_softmax(const Mat& scores) {
  Mat out(scores.rows(), scores.cols());
  for (Index r = 0; r < scores.rows(); ++r)
    out.row(r) = softmax(scores.row(r).transpose()).transpose();
  return out;
}

LinearLayer LinearLayer::init(Index out, Index in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearLayer layer;
  layer.weight = rng.uniform_mat(out, in, -bound, bound);
  layer.bias = rng.uniform_mat(out, 1, -bound, bound).col(0);
  return layer;
}

LinearLayer LinearLayer::zeros(Index out, Index in) {
  return {Mat::Zero(out, in), Vec::Zero(out)};
}

Vec linear_apply(const LinearLayer& layer, const Eigen::Ref<const Vec>& x) {
  if (x.size() != layer.in_dim())
    throw ValidationError("linear_apply: input dim " + std::to_string(x.size()) +
                          " != layer in dim " + std::to_string(layer.in_dim()));
  return layer.weight * x + layer.bias;
}

Mlp Mlp::init(Index out, Index hidden_dim, Index in, Rng& rng) {
  return {LinearLayer::init(hidden_dim, in, rng),
          LinearLayer::init(out, hidden_dim, rng)};
}

Mlp Mlp::zeros(Index out, Index hidden_dim, Index in) {
  return {LinearLayer::zeros(hidden_dim, in), LinearLayer::zeros(out, hidden_dim)};
}

Vec Mlp::apply(const Eigen::Ref<const Vec>& x) const {
  Vec h = linear_apply(hidden, x);
  for (Index i = 0; i < h.size(); ++i) h[i] = quick_gelu(h[i]);
  return linear_apply(out, h);
}

Mat Mlp::apply_rows(const Mat& x) const {
  if (x.cols() != in_dim())
    throw ValidationError("Mlp::apply_rows: input dim mismatch");
  Mat h = (x * hidden.weight.transpose()).rowwise() + hidden.bias.transpose();
  h = h.unaryExpr([](double v) { return quick_gelu(v); });
  return ((h * out.weight.transpose()).rowwise() + out.bias.transpose()).eval();
}

AttentionParams AttentionParams::init(Index d, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams p;
  p.wq = rng.uniform_mat(d, d, -bound, bound);
  p.wk = rng.uniform_mat(d, d, -bound, bound);
  p.wv = rng.uniform_mat(d, d, -bound, bound);
  return p;
}

AttentionParams AttentionParams::zeros(Index d) {
  return {Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d), 1};
}

AttentionParams AttentionParams::identity(Index d) {
  return {Mat::Identity(d, d), Mat::Identity(d, d), Mat::Identity(d, d), 1};
}

namespace {

void require_token_dim(const Mat& tokens, const AttentionParams& params,
                       const char* who) {
  if (tokens.rows() == 0)
    throw ValidationError(std::string(who) + ": empty token sequence");
  if (tokens.cols() != params.dim())
    throw ValidationError(std::string(who) + ": token dim " +
                          std::to_string(tokens.cols()) + " != params dim " +
                          std::to_string(params.dim()));
}

}  // namespace

Mat self_attention(const Mat& tokens, const AttentionParams& params) {
  require_token_dim(tokens, params, "self_attention");
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.dim()));
  Mat q = tokens * params.wq.transpose();
  Mat k = tokens * params.wk.transpose();
  Mat v = tokens * params.wv.transpose();
  Mat attn = row_softmax(q * k.transpose() * scale);
  return attn * v;
}

Mat cross_attention(const Mat& queries, const Mat& context,
                    const AttentionParams& params) {
  require_token_dim(queries, params, "cross_attention");
  require_token_dim(context, params, "cross_attention");
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.dim()));
  Mat q = queries * params.wq.transpose();
  Mat k = context * params.wk.transpose();
  Mat v = context * params.wv.transpose();
  Mat attn = row_softmax(q * k.transpose() * scale);
  return attn * v;
}

AttentionGrads self_attention_backward(const Mat& tokens,
                                       const AttentionParams& params,
                                       const Mat& d_out) {
  require_token_dim(tokens, params, "self_attention_backward");
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.dim()));
  Mat q = tokens * params.wq.transpose();
  Mat k = tokens * params.wk.transpose();
  Mat v = tokens * params.wv.transpose();
  Mat attn = row_softmax(q * k.transpose() * scale);

  // out = attn * v
  Mat d_attn = d_out * v.transpose();
  Mat d_v = attn.transpose() * d_out;

  // softmax rows: dS = A .* (dA - rowsum(dA .* A))
  Mat d_scores(attn.rows(), attn.cols());
  for (Index r = 0; r < attn.rows(); ++r) {
    const double dot = d_attn.row(r).cwiseProduct(attn.row(r)).sum();
    d_scores.row(r) =
        (attn.row(r).array() * (d_attn.row(r).array() - dot)).matrix();
  }
  Mat d_q = d_scores * k * scale;
  Mat d_k = d_scores.transpose() * q * scale;

  AttentionGrads g;
  g.d_tokens = d_q * params.wq + d_k * params.wk + d_v * params.wv;
  g.d_wq = d_q.transpose() * tokens;
  g.d_wk = d_k.transpose() * tokens;
  g.d_wv = d_v.transpose() * tokens;
  return g;
}

Mat psd_sqrt(const Mat& m) {
  if (m.rows() != m.cols()) throw ValidationError("psd_sqrt: matrix not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw NumericError("psd_sqrt: matrix not symmetric within tolerance");
  Mat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  if (es.info() != Eigen::Success)
    throw NumericError("psd_sqrt: eigendecomposition failed");
  Vec lam = es.eigenvalues();
  for (Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < -1e-10)
      throw NumericError("psd_sqrt: indefinite matrix, eigenvalue " +
                         std::to_string(lam[i]));
    lam[i] = lam[i] < 1e-10 ? 0.0 : std::sqrt(lam[i]);
  }
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

double grad_check(const std::function<double(const Vec&)>& f,
                  const std::function<Vec(const Vec&)>& grad_f, const Vec& x,
                  double eps) {
  if (eps < 1e-7 || eps > 1e-3)
    throw ValidationError("grad_check: eps must lie in [1e-7, 1e-3]");
  const Vec g = grad_f(x);
  if (g.size() != x.size())
    throw ValidationError("grad_check: gradient size mismatch");
  double worst = 0.0;
  Vec probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double fp = f(probe);
    probe[i] = x[i] - eps;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite function value while probing");
    const double fd = (fp - fm) / (2.0 * eps);
    const double rel =
        std::abs(g[i] - fd) / std::max(1e-8, std::abs(g[i]) + std::abs(fd));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace ceidm
