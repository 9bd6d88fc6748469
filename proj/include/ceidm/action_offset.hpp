#pragma once

#include <string>
#include <vector>

#include "ceidm/embedding.hpp"
#include "ceidm/numerics.hpp"

namespace ceidm {

struct ActionCluster {
  Mat centroids;                 // k x d, row per centroid
  std::vector<int> assignments;  // per point, indexes a centroid row
  double inertia = 0.0;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
  int iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding. Stops when the max centroid
// movement drops below tol or max_iter is reached; empty clusters are
// re-seeded to the point farthest from its assigned centroid. The recorded
// inertia sequence is non-increasing (checked inline).
ActionCluster kmeans(const Mat& points, int k, std::uint64_t seed,
                     int max_iter = 100, double tol = 1e-8);

// a + lambda * c / |c|: shift along the cluster centroid's own direction.
Vec global_offset(const Vec& a, const Vec& centroid, double lambda);

// a + lambda * (c - a) / |c - a|: shift toward (positive) or away from the
// centroid. lambda == |c - a| lands exactly on the centroid.
Vec local_offset(const Vec& a, const Vec& centroid, double lambda);

struct OffsetConfig {
  std::vector<double> global_offsets{0.1, -0.1};
  std::vector<double> local_offsets{0.05, -0.05};

  void validate() const;
};

struct TokenTriple {
  Vec e_s, e_a, e_o;
};

// G[0] is the unmodified triple; entries 1..m carry re-embedded offset action
// variants (global offsets first, then local, in config order). Offsets whose
// direction degenerates are skipped and recorded, reducing m.
struct OffsetGroup {
  std::vector<TokenTriple> entries;
  int m = 0;
  std::vector<std::string> skipped;
};

OffsetGroup build_offset_group(const InteractionTokens& tokens,
                               const Vec& action_raw,
                               const ActionCluster& cluster, int point_index,
                               const OffsetConfig& cfg,
                               const EmbeddingStack& stack,
                               const HOIInstance& instance);

}  // namespace ceidm
