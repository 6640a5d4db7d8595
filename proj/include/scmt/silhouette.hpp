#ifndef SCMT_SILHOUETTE_HPP_
#define SCMT_SILHOUETTE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "scmt/common.hpp"

namespace scmt {

struct SilhouetteResult {
  double score = 0.0;               // mean over all points
  std::vector<double> per_point;    // s_i in [-1, 1]
};

// Cluster-separation coefficient per point: s_i = (b_i - a_i) / max(a_i, b_i)
// with a_i the mean distance to the point's own cluster (excluding itself)
// and b_i the smallest mean distance to any other cluster. Euclidean
// distances; points in singleton clusters score 0, as does the 0/0 case of
// fully coincident clusters.
inline SilhouetteResult silhouette_score(const std::vector<std::vector<double>>& points,
                                         const std::vector<int>& labels) {
  const size_t n = points.size();
  SCMT_REQUIRE(labels.size() == n, "silhouette: label count mismatch");
  SCMT_REQUIRE(n >= 2, "silhouette: need at least two points");
  const size_t dim = points[0].size();
  std::map<int, int> cluster_sizes;
  for (size_t i = 0; i < n; ++i) {
    SCMT_REQUIRE(points[i].size() == dim, "silhouette: ragged point dimensions");
    cluster_sizes[labels[i]] += 1;
  }
  SCMT_REQUIRE(cluster_sizes.size() >= 2, "silhouette: need at least two clusters");

  // Sum of distances from each point to each cluster, O(n^2) pairs once.
  std::map<int, size_t> cluster_index;
  for (const auto& [label, count] : cluster_sizes) {
    size_t idx = cluster_index.size();
    cluster_index[label] = idx;
  }
  const size_t k = cluster_index.size();
  std::vector<double> dist_sum(n * k, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (size_t f = 0; f < dim; ++f) {
        double d = points[i][f] - points[j][f];
        d2 += d * d;
      }
      double d = std::sqrt(d2);
      dist_sum[i * k + cluster_index[labels[j]]] += d;
      dist_sum[j * k + cluster_index[labels[i]]] += d;
    }
  }

  SilhouetteResult result;
  result.per_point.resize(n, 0.0);
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const int own_label = labels[i];
    const size_t own = cluster_index[own_label];
    const int own_size = cluster_sizes[own_label];
    double s = 0.0;
    if (own_size > 1) {
      double a = dist_sum[i * k + own] / static_cast<double>(own_size - 1);
      double b = std::numeric_limits<double>::infinity();
      for (const auto& [label, count] : cluster_sizes) {
        if (label == own_label) continue;
        b = std::min(b, dist_sum[i * k + cluster_index[label]] /
                            static_cast<double>(count));
      }
      double denom = std::max(a, b);
      s = denom > 0.0 ? (b - a) / denom : 0.0;
    }
    result.per_point[i] = s;
    acc += s;
  }
  result.score = acc / static_cast<double>(n);
  return result;
}

}  // namespace scmt

#endif  // SCMT_SILHOUETTE_HPP_
