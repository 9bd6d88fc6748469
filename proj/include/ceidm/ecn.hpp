#pragma once

#include <functional>
#include <vector>

#include "ceidm/numerics.hpp"

namespace ceidm {

// Spatial feature map: data row p = y * width + x holds the d channels at
// position (x, y).
struct FeatureMap {
  int height = 0;
  int width = 0;
  Mat data;  // (height * width) x channels

  static FeatureMap zeros(int h, int w, Index channels);

  Index channels() const { return data.cols(); }
  Index positions() const { return data.rows(); }
  void validate() const;
};

// Per-position weights, every value strictly inside (0, 1).
struct SoftMask {
  int height = 0;
  int width = 0;
  Vec values;
};

struct ECNConfig {
  double temp = 2.0;
  std::vector<int> kernel_sizes{1, 3, 5};
  bool enabled = true;

  void validate() const;
};

// Bias-free 2-D convolution, square odd kernel, zero padding, shape
// preserving. Tap weights are (out x in) matrices indexed row-major over the
// kernel window.
struct Conv {
  int kernel = 1;
  std::vector<Mat> taps;  // kernel*kernel entries, each out_channels x in_channels

  static Conv zeros(int kernel, Index out_channels, Index in_channels);
  static Conv init(int kernel, Index out_channels, Index in_channels, Rng& rng);

  Index in_channels() const { return taps.empty() ? 0 : taps[0].cols(); }
  Index out_channels() const { return taps.empty() ? 0 : taps[0].rows(); }
};

FeatureMap conv_apply(const Conv& conv, const FeatureMap& x);

// Transpose of conv_apply as a linear operator (for gradient propagation).
FeatureMap conv_apply_transpose(const Conv& conv, const FeatureMap& d_out);

struct ECNParams {
  Mlp mask_mlp;                   // entity embedding (text dim) -> channels
  std::vector<Conv> enhance;      // per kernel size, d -> d
  std::vector<Conv> fuse_branches;  // per kernel size, 2d -> 2d
  Mlp fuse_gate;                  // pooled 2d -> branch count
  Mat fuse_proj;                  // d x 2d, the 1x1 projection back to d

  static ECNParams init(Index channels, Index text_dim, const ECNConfig& cfg,
                        Rng& rng);
  static ECNParams zeros(Index channels, Index text_dim, const ECNConfig& cfg);
};

// sigmoid(<mlp(e), V_p> / (sqrt(d) * temp)) per position.
SoftMask entity_mask(const FeatureMap& visual, const Vec& entity_embedding,
                     const Mlp& mlp, double temp);

FeatureMap apply_mask(const FeatureMap& visual, const SoftMask& mask);

// x + mean over kernel sizes of conv_k(x).
FeatureMap multiscale_enhance(const FeatureMap& x,
                              const std::vector<Conv>& branches);

struct FuseResult {
  FeatureMap map;
  Vec alpha;  // softmax branch weights, sums to 1
};

// Channel-concat the two entity maps, derive branch weights from the pooled
// features, blend the branch convolutions and project back to d channels.
FuseResult dynamic_fuse(const FeatureMap& x_subject, const FeatureMap& x_object,
                        const ECNParams& params);

// ca_in = iea_out + fused; result = iea_out + cross_attention(ca_in). The CA
// residual is anchored to the IEA output, not to its own input.
FeatureMap ecn_combine(
    const FeatureMap& iea_out, const FeatureMap& fused,
    const std::function<FeatureMap(const FeatureMap&)>& cross_attention);

}  // namespace ceidm
