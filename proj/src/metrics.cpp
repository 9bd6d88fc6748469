#include "ceidm/metrics.hpp"

#include <cmath>

#include "ceidm/errors.hpp"

namespace ceidm {

GaussianStats gaussian_stats(const Mat& features) {
  const Index n = features.rows();
  if (n < 2) throw ValidationError("gaussian_stats: need at least 2 samples");
  if (!features.allFinite())
    throw ValidationError("gaussian_stats: non-finite features");
  GaussianStats s;
  s.n = n;
  s.mean = features.colwise().mean();
  const Mat centered = features.rowwise() - s.mean.transpose();
  s.covariance =
      centered.transpose() * centered / static_cast<double>(n - 1);
  // Symmetrize away accumulation asymmetry before any psd_sqrt consumer.
  s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
  return s;
}

double fid(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size())
    throw ValidationError("fid: dimension mismatch");
  const Mat root_a = psd_sqrt(a.covariance);
  Mat inner = root_a * b.covariance * root_a;
  inner = 0.5 * (inner + inner.transpose());
  const double trace_cross = psd_sqrt(inner).trace();
  const double value = (a.mean - b.mean).squaredNorm() + a.covariance.trace() +
                       b.covariance.trace() - 2.0 * trace_cross;
  if (value < -1e-8)
    throw NumericError("fid: distance came out negative (" +
                       std::to_string(value) + ")");
  return value < 0.0 ? 0.0 : value;
}

namespace {

constexpr Index kBlock = 256;

double poly3(double dot_over_d) {
  const double base = dot_over_d + 1.0;
  return base * base * base;
}

// Sum of k(x_i, y_j) over a row block pair, kernel (x.y/d + 1)^3.
double block_kernel_sum(const Mat& x, Index x0, Index xn, const Mat& y,
                        Index y0, Index yn, double inv_d) {
  const Mat gram =
      x.middleRows(x0, xn) * y.middleRows(y0, yn).transpose() * inv_d;
  double sum = 0.0;
  for (Index i = 0; i < gram.rows(); ++i)
    for (Index j = 0; j < gram.cols(); ++j) sum += poly3(gram(i, j));
  return sum;
}

// Within-set sum excluding the diagonal.
double within_sum(const Mat& x, double inv_d) {
  double total = 0.0;
  for (Index i0 = 0; i0 < x.rows(); i0 += kBlock) {
    const Index in = std::min(kBlock, x.rows() - i0);
    for (Index j0 = 0; j0 < x.rows(); j0 += kBlock) {
      const Index jn = std::min(kBlock, x.rows() - j0);
      const Mat gram =
          x.middleRows(i0, in) * x.middleRows(j0, jn).transpose() * inv_d;
      for (Index i = 0; i < in; ++i)
        for (Index j = 0; j < jn; ++j)
          if (i0 + i != j0 + j) total += poly3(gram(i, j));
    }
  }
  return total;
}

}  // namespace

MMDEstimate kid(const Mat& x, const Mat& y) {
  const Index m = x.rows();
  const Index n = y.rows();
  if (m < 2 || n < 2) throw ValidationError("kid: need at least 2 samples per set");
  if (x.cols() != y.cols()) throw ValidationError("kid: dimension mismatch");
  if (!x.allFinite() || !y.allFinite())
    throw ValidationError("kid: non-finite features");
  const double inv_d = 1.0 / static_cast<double>(x.cols());

  const double xx = within_sum(x, inv_d) / static_cast<double>(m * (m - 1));
  const double yy = within_sum(y, inv_d) / static_cast<double>(n * (n - 1));

  double cross = 0.0;
  for (Index i0 = 0; i0 < m; i0 += kBlock) {
    const Index in = std::min(kBlock, m - i0);
    for (Index j0 = 0; j0 < n; j0 += kBlock) {
      const Index jn = std::min(kBlock, n - j0);
      cross += block_kernel_sum(x, i0, in, y, j0, jn, inv_d);
    }
  }
  cross /= static_cast<double>(m) * static_cast<double>(n);

  return {xx + yy - 2.0 * cross, m, n};
}

}  // namespace ceidm
