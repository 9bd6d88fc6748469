#include "ceidm/ecn.hpp"

#include <cmath>

#include "ceidm/errors.hpp"

namespace ceidm {

FeatureMap FeatureMap::zeros(int h, int w, Index channels) {
  return {h, w, Mat::Zero(static_cast<Index>(h) * w, channels)};
}

void FeatureMap::validate() const {
  if (height < 1 || width < 1 || channels() < 1)
    throw ValidationError("feature map: dimensions must be >= 1");
  if (data.rows() != static_cast<Index>(height) * width)
    throw ValidationError("feature map: row count != height * width");
  if (!data.allFinite())
    throw ValidationError("feature map: non-finite values");
}

void ECNConfig::validate() const {
  if (!(temp > 0.0)) throw ValidationError("ecn: temp must be positive");
  if (kernel_sizes.empty())
    throw ValidationError("ecn: kernel size list must be non-empty");
  for (int k : kernel_sizes)
    if (k < 1 || k % 2 == 0)
      throw ValidationError("ecn: kernel sizes must be odd and >= 1");
}

Conv Conv::zeros(int kernel, Index out_channels, Index in_channels) {
  Conv c;
  c.kernel = kernel;
  c.taps.assign(static_cast<size_t>(kernel) * kernel,
                Mat::Zero(out_channels, in_channels));
  return c;
}

Conv Conv::init(int kernel, Index out_channels, Index in_channels, Rng& rng) {
  const double fan_in = static_cast<double>(in_channels) * kernel * kernel;
  const double bound = 1.0 / std::sqrt(fan_in);
  Conv c;
  c.kernel = kernel;
  c.taps.reserve(static_cast<size_t>(kernel) * kernel);
  for (int t = 0; t < kernel * kernel; ++t)
    c.taps.push_back(rng.uniform_mat(out_channels, in_channels, -bound, bound));
  return c;
}

namespace {

// Rows of `x` shifted by (dy, dx) with zero padding, so that
// shifted.row(y * W + x) == x.row((y+dy) * W + (x+dx)) where in bounds.
Mat shifted_rows(const FeatureMap& x, int dy, int dx) {
  Mat out = Mat::Zero(x.data.rows(), x.data.cols());
  const int h = x.height, w = x.width;
  const int y_lo = std::max(0, -dy), y_hi = std::min(h, h - dy);
  const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
  if (y_lo >= y_hi || x_lo >= x_hi) return out;
  const int span = x_hi - x_lo;
  for (int y = y_lo; y < y_hi; ++y) {
    const Index dst = static_cast<Index>(y) * w + x_lo;
    const Index src = static_cast<Index>(y + dy) * w + (x_lo + dx);
    out.middleRows(dst, span) = x.data.middleRows(src, span);
  }
  return out;
}

}  // namespace

FeatureMap conv_apply(const Conv& conv, const FeatureMap& x) {
  x.validate();
  if (conv.in_channels() != x.channels())
    throw ValidationError("conv: channel mismatch");
  const int r = conv.kernel / 2;
  FeatureMap y{x.height, x.width,
               Mat::Zero(x.data.rows(), conv.out_channels())};
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const Mat& w = conv.taps[static_cast<size_t>(dy + r) * conv.kernel +
                               (dx + r)];
      if (w.isZero(0.0)) continue;
      y.data.noalias() += shifted_rows(x, dy, dx) * w.transpose();
    }
  return y;
}

FeatureMap conv_apply_transpose(const Conv& conv, const FeatureMap& d_out) {
  d_out.validate();
  if (conv.out_channels() != d_out.channels())
    throw ValidationError("conv transpose: channel mismatch");
  const int r = conv.kernel / 2;
  FeatureMap d_in{d_out.height, d_out.width,
                  Mat::Zero(d_out.data.rows(), conv.in_channels())};
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const Mat& w = conv.taps[static_cast<size_t>(dy + r) * conv.kernel +
                               (dx + r)];
      if (w.isZero(0.0)) continue;
      // y[p] += W x[p + o]  =>  d_in[p + o] += W^T d_out[p], i.e. a shift by
      // -o of (d_out W).
      FeatureMap contrib{d_out.height, d_out.width, d_out.data * w};
      d_in.data.noalias() += shifted_rows(contrib, -dy, -dx);
    }
  return d_in;
}

ECNParams ECNParams::init(Index channels, Index text_dim, const ECNConfig& cfg,
                          Rng& rng) {
  cfg.validate();
  ECNParams p;
  p.mask_mlp = Mlp::init(channels, channels, text_dim, rng);
  for (int k : cfg.kernel_sizes)
    p.enhance.push_back(Conv::init(k, channels, channels, rng));
  for (int k : cfg.kernel_sizes)
    p.fuse_branches.push_back(Conv::init(k, 2 * channels, 2 * channels, rng));
  p.fuse_gate = Mlp::init(static_cast<Index>(cfg.kernel_sizes.size()), channels,
                          2 * channels, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(2 * channels));
  p.fuse_proj = rng.uniform_mat(channels, 2 * channels, -bound, bound);
  return p;
}

ECNParams ECNParams::zeros(Index channels, Index text_dim, const ECNConfig& cfg) {
  cfg.validate();
  ECNParams p;
  p.mask_mlp = Mlp::zeros(channels, channels, text_dim);
  for (int k : cfg.kernel_sizes)
    p.enhance.push_back(Conv::zeros(k, channels, channels));
  for (int k : cfg.kernel_sizes)
    p.fuse_branches.push_back(Conv::zeros(k, 2 * channels, 2 * channels));
  p.fuse_gate = Mlp::zeros(static_cast<Index>(cfg.kernel_sizes.size()), channels,
                           2 * channels);
  p.fuse_proj = Mat::Zero(channels, 2 * channels);
  return p;
}

SoftMask entity_mask(const FeatureMap& visual, const Vec& entity_embedding,
                     const Mlp& mlp, double temp) {
  visual.validate();
  if (!(temp > 0.0)) throw ValidationError("entity_mask: temp must be positive");
  const Vec semantic = mlp.apply(entity_embedding);
  if (semantic.size() != visual.channels())
    throw ValidationError("entity_mask: mlp output dim != channels");
  const double scale = 1.0 / std::sqrt(static_cast<double>(visual.channels()));
  SoftMask mask{visual.height, visual.width, Vec(visual.positions())};
  for (Index p = 0; p < visual.positions(); ++p) {
    const double score = visual.data.row(p).dot(semantic) * scale;
    mask.values[p] = sigmoid(score / temp);
  }
  return mask;
}

FeatureMap apply_mask(const FeatureMap& visual, const SoftMask& mask) {
  if (mask.height != visual.height || mask.width != visual.width)
    throw ValidationError("apply_mask: spatial dims mismatch");
  FeatureMap out = visual;
  out.data = mask.values.asDiagonal() * visual.data;
  return out;
}

FeatureMap multiscale_enhance(const FeatureMap& x,
                              const std::vector<Conv>& branches) {
  if (branches.empty())
    throw ValidationError("multiscale_enhance: no branches");
  FeatureMap acc = FeatureMap::zeros(x.height, x.width, x.channels());
  for (const auto& conv : branches) acc.data += conv_apply(conv, x).data;
  FeatureMap out = x;
  out.data += acc.data / static_cast<double>(branches.size());
  return out;
}

FuseResult dynamic_fuse(const FeatureMap& x_subject, const FeatureMap& x_object,
                        const ECNParams& params) {
  if (x_subject.height != x_object.height || x_subject.width != x_object.width ||
      x_subject.channels() != x_object.channels())
    throw ValidationError("dynamic_fuse: entity map shape mismatch");

  FeatureMap concat{x_subject.height, x_subject.width,
                    Mat(x_subject.positions(), 2 * x_subject.channels())};
  concat.data << x_subject.data, x_object.data;

  const Vec pooled = concat.data.colwise().mean();
  const Vec alpha = softmax(params.fuse_gate.apply(pooled));
  if (alpha.size() != static_cast<Index>(params.fuse_branches.size()))
    throw ValidationError("dynamic_fuse: gate output != branch count");

  Mat blended = Mat::Zero(concat.positions(), concat.channels());
  for (size_t k = 0; k < params.fuse_branches.size(); ++k)
    blended += alpha[static_cast<Index>(k)] *
               conv_apply(params.fuse_branches[k], concat).data;

  FuseResult result;
  result.alpha = alpha;
  result.map = FeatureMap{concat.height, concat.width,
                          blended * params.fuse_proj.transpose()};
  return result;
}

FeatureMap ecn_combine(
    const FeatureMap& iea_out, const FeatureMap& fused,
    const std::function<FeatureMap(const FeatureMap&)>& cross_attention) {
  if (iea_out.height != fused.height || iea_out.width != fused.width ||
      iea_out.channels() != fused.channels())
    throw ValidationError("ecn_combine: shape mismatch");
  FeatureMap ca_in = iea_out;
  ca_in.data += fused.data;
  const FeatureMap ca_out = cross_attention(ca_in);
  if (ca_out.data.rows() != iea_out.data.rows() ||
      ca_out.data.cols() != iea_out.data.cols())
    throw ValidationError("ecn_combine: cross-attention changed the shape");
  FeatureMap out = iea_out;
  out.data += ca_out.data;
  return out;
}

}  // namespace ceidm
