#pragma once

#include "ceidm/numerics.hpp"

namespace ceidm {

struct GaussianStats {
  Vec mean;
  Mat covariance;  // 1/(n-1) normalization, symmetric PSD within clamping
  Index n = 0;
};

// Sample mean and unbiased covariance of the rows of X (n >= 2).
GaussianStats gaussian_stats(const Mat& features);

// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}). The product root trace is
// evaluated through the symmetric form (Sa^{1/2} Sb Sa^{1/2})^{1/2}, which has
// the same trace and stays inside psd_sqrt's domain. Values in [-1e-8, 0]
// clamp to zero, anything lower is an error.
double fid(const GaussianStats& a, const GaussianStats& b);

struct MMDEstimate {
  double value = 0.0;  // unbiased, may be slightly negative
  Index m = 0;
  Index n = 0;
};

// Unbiased squared MMD with kernel (x.y / d + 1)^3: diagonal-free means of
// the within-set kernels plus the full-mean cross term with factor -2.
// Accumulates block-wise rather than materializing the full Gram matrices.
MMDEstimate kid(const Mat& x, const Mat& y);

}  // namespace ceidm
