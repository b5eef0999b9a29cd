#pragma once

#include <vector>

#include "cpnet/vec3.hpp"

namespace cpnet {

// Exact k-nearest-neighbor table. Row i lists the k neighbors of point i in
// ascending distance order (ties by lower index); the query point itself is
// never in its own row.
struct NeighborIndex {
    int k = 0;
    std::vector<std::vector<int>> indices;
    std::vector<std::vector<double>> distances;
};

// Per-point graph-frequency response of the normalized Laplacian residual.
struct FrequencyScores {
    std::vector<double> scores;
    int k_graph = 0;
};

NeighborIndex knn(const std::vector<Vec3>& points, int k);

// Greedy max-min farthest point sampling. Starts at the point nearest the
// centroid (ties by lexicographic coordinate order, then index); each later
// pick maximizes the distance to the selected set (ties by lower index).
std::vector<int> fps(const std::vector<Vec3>& points, int m);

// Builds the symmetrized binary kNN graph, forms L = I - D^{-1/2} A D^{-1/2}
// and scores each point by the Euclidean norm of its row of L*X. High score =
// sharp local geometric variation.
FrequencyScores laplacian_scores(const std::vector<Vec3>& points, int k_graph);

// Two-directional, non-squared chamfer distance:
// sum_p min_q |p-q| + sum_q min_p |q-p|.
double chamfer(const std::vector<Vec3>& p, const std::vector<Vec3>& q);

// Precomputed inverse-distance interpolation stencil from a source point set
// to a query point set: per query, k source indices and normalized weights.
// A query within 1e-12 of a source copies that source verbatim (one-hot row).
struct IdwPlan {
    int k = 0;
    std::vector<int> indices;      // query-major, k per query
    std::vector<double> weights;   // same layout, rows sum to 1
    std::size_t n_queries() const { return k == 0 ? 0 : indices.size() / k; }
};

IdwPlan idw_plan(const std::vector<Vec3>& src_points, const std::vector<Vec3>& query_points,
                 int k = 3);

// Applies an IDW stencil to row-major features (n_src x channels).
std::vector<double> interpolate_idw(const std::vector<Vec3>& src_points,
                                    const std::vector<double>& src_features, int channels,
                                    const std::vector<Vec3>& query_points, int k = 3);

// Unit eigenvector of the smallest eigenvalue of a symmetric 3x3 matrix.
Vec3 least_variance_direction(const double m[3][3]);

}  // namespace cpnet
