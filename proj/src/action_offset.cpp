#include "ceidm/action_offset.hpp"

#include <cmath>
#include <limits>

#include "ceidm/errors.hpp"
#include "ceidm/rng.hpp"

namespace ceidm {

namespace {

double sq_dist(const Mat& points, Index p, const Mat& centroids, Index c) {
  return (points.row(p) - centroids.row(c)).squaredNorm();
}

std::vector<int> assign_nearest(const Mat& points, const Mat& centroids) {
  std::vector<int> assign(points.rows());
  for (Index p = 0; p < points.rows(); ++p) {
    int best = 0;
    double best_d = sq_dist(points, p, centroids, 0);
    for (Index c = 1; c < centroids.rows(); ++c) {
      const double d = sq_dist(points, p, centroids, c);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    assign[p] = best;
  }
  return assign;
}

double total_inertia(const Mat& points, const std::vector<int>& assign,
                     const Mat& centroids) {
  double sum = 0.0;
  for (Index p = 0; p < points.rows(); ++p)
    sum += sq_dist(points, p, centroids, assign[p]);
  return sum;
}

Mat seed_kmeanspp(const Mat& points, int k, Rng& rng) {
  const Index n = points.rows();
  Mat centroids(k, points.cols());
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);

  const Index first = static_cast<Index>(rng.uniform_index(n));
  centroids.row(0) = points.row(first);
  chosen[first] = true;
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Index p = 0; p < n; ++p) {
      const double d = (points.row(p) - centroids.row(c - 1)).squaredNorm();
      min_d2[p] = std::min(min_d2[p], d);
      total += min_d2[p];
    }
    Index pick = -1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (Index p = 0; p < n; ++p) {
        if (min_d2[p] <= 0.0) continue;
        acc += min_d2[p];
        pick = p;
        if (acc >= target) break;
      }
    }
    if (pick < 0) {
      // All remaining mass sits on already-chosen locations (duplicates);
      // take the first index not yet used as a centroid.
      for (Index p = 0; p < n; ++p)
        if (!chosen[p]) {
          pick = p;
          break;
        }
      if (pick < 0) pick = first;
    }
    centroids.row(c) = points.row(pick);
    chosen[pick] = true;
  }
  return centroids;
}

// Moves each empty centroid onto the point currently farthest from its
// assigned centroid and reassigns that point.
void fix_empty_clusters(const Mat& points, std::vector<int>& assign,
                        Mat& centroids) {
  const int k = static_cast<int>(centroids.rows());
  for (int attempt = 0; attempt < k; ++attempt) {
    std::vector<int> counts(k, 0);
    for (int a : assign) ++counts[a];
    int empty = -1;
    for (int c = 0; c < k; ++c)
      if (counts[c] == 0) {
        empty = c;
        break;
      }
    if (empty < 0) return;

    Index farthest = 0;
    double far_d = -1.0;
    for (Index p = 0; p < points.rows(); ++p) {
      if (counts[assign[p]] <= 1) continue;  // do not empty another cluster
      const double d = sq_dist(points, p, centroids, assign[p]);
      if (d > far_d) {
        far_d = d;
        farthest = p;
      }
    }
    if (far_d < 0.0) return;  // nothing movable (duplicate points)
    centroids.row(empty) = points.row(farthest);
    assign[farthest] = empty;
  }
}

}  // namespace

ActionCluster kmeans(const Mat& points, int k, std::uint64_t seed, int max_iter,
                     double tol) {
  const Index n = points.rows();
  if (k < 1 || k > n)
    throw ValidationError("kmeans: k must satisfy 1 <= k <= n (k=" +
                          std::to_string(k) + ", n=" + std::to_string(n) + ")");
  if (!points.allFinite()) throw ValidationError("kmeans: non-finite points");

  Rng rng = substream(seed, "kmeans");
  Mat centroids = seed_kmeanspp(points, k, rng);

  ActionCluster result;
  std::vector<int> assign;
  double prev_inertia = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iter; ++iter) {
    assign = assign_nearest(points, centroids);
    fix_empty_clusters(points, assign, centroids);

    const double inertia = total_inertia(points, assign, centroids);
    // Lloyd guarantees monotone descent; a rise signals a broken update.
    if (inertia > prev_inertia * (1.0 + 1e-12) + 1e-12)
      throw NumericError("kmeans: inertia increased across an iteration");
    result.inertia_history.push_back(inertia);
    prev_inertia = inertia;
    result.iterations = iter + 1;

    Mat means = Mat::Zero(k, points.cols());
    std::vector<int> counts(k, 0);
    for (Index p = 0; p < n; ++p) {
      means.row(assign[p]) += points.row(p);
      ++counts[assign[p]];
    }
    double movement = 0.0;
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) means.row(c) /= static_cast<double>(counts[c]);
      else means.row(c) = centroids.row(c);
      movement = std::max(movement, (means.row(c) - centroids.row(c)).norm());
    }
    centroids = means;  // centroids are now exact means of `assign`
    if (movement < tol) break;
  }

  result.centroids = centroids;
  result.assignments = assign;
  result.inertia = total_inertia(points, assign, centroids);
  return result;
}

Vec global_offset(const Vec& a, const Vec& centroid, double lambda) {
  if (a.size() != centroid.size())
    throw ValidationError("global_offset: dim mismatch");
  const double norm = centroid.norm();
  if (norm <= 1e-12)
    throw NumericError("global_offset: centroid direction degenerate (norm " +
                       std::to_string(norm) + ")");
  return a + (lambda / norm) * centroid;
}

Vec local_offset(const Vec& a, const Vec& centroid, double lambda) {
  if (a.size() != centroid.size())
    throw ValidationError("local_offset: dim mismatch");
  const Vec to_centroid = centroid - a;
  const double norm = to_centroid.norm();
  if (norm <= 1e-12)
    throw NumericError("local_offset: point coincides with its centroid");
  return a + (lambda / norm) * to_centroid;
}

void OffsetConfig::validate() const {
  if (global_offsets.empty() || local_offsets.empty())
    throw ValidationError("offset config: offset lists must be non-empty");
  for (double v : global_offsets)
    if (!std::isfinite(v))
      throw ValidationError("offset config: non-finite global offset");
  for (double v : local_offsets)
    if (!std::isfinite(v))
      throw ValidationError("offset config: non-finite local offset");
}

OffsetGroup build_offset_group(const InteractionTokens& tokens,
                               const Vec& action_raw,
                               const ActionCluster& cluster, int point_index,
                               const OffsetConfig& cfg,
                               const EmbeddingStack& stack,
                               const HOIInstance& instance) {
  cfg.validate();
  if (point_index < 0 ||
      point_index >= static_cast<int>(cluster.assignments.size()))
    throw ValidationError("build_offset_group: point index out of range");

  const Vec centroid =
      cluster.centroids.row(cluster.assignments[point_index]).transpose();
  const BBox action_box = union_box(instance.subject_box, instance.object_box);

  OffsetGroup group;
  group.entries.push_back({tokens.e_s, tokens.e_a, tokens.e_o});

  auto push_variant = [&](const Vec& offset_raw) {
    const Vec e_variant =
        stack.embed_action_vector(offset_raw, action_box, instance.index);
    group.entries.push_back({tokens.e_s, e_variant, tokens.e_o});
  };

  for (double lambda : cfg.global_offsets) {
    try {
      push_variant(global_offset(action_raw, centroid, lambda));
    } catch (const NumericError& e) {
      group.skipped.push_back("global " + std::to_string(lambda) + ": " +
                              e.what());
    }
  }
  for (double lambda : cfg.local_offsets) {
    try {
      push_variant(local_offset(action_raw, centroid, lambda));
    } catch (const NumericError& e) {
      group.skipped.push_back("local " + std::to_string(lambda) + ": " +
                              e.what());
    }
  }
  group.m = static_cast<int>(group.entries.size()) - 1;
  return group;
}

}  // namespace ceidm
