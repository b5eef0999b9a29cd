#include "cpnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cpnet/errors.hpp"

namespace cpnet {

namespace {

// (distance, index) pairs ordered ascending, ties by lower index.
struct DistIdx {
    double d;
    int i;
    bool operator<(const DistIdx& o) const { return d != o.d ? d < o.d : i < o.i; }
};

}  // namespace

NeighborIndex knn(const std::vector<Vec3>& points, int k) {
    const int n = static_cast<int>(points.size());
    if (k < 1 || k >= n) throw BadK("knn requires 1 <= k < N");

    NeighborIndex out;
    out.k = k;
    out.indices.assign(n, {});
    out.distances.assign(n, {});

    std::vector<DistIdx> cand(n - 1);
    for (int i = 0; i < n; ++i) {
        int m = 0;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            cand[m++] = {norm2(points[j] - points[i]), j};
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        auto& idx = out.indices[i];
        auto& dst = out.distances[i];
        idx.resize(k);
        dst.resize(k);
        for (int j = 0; j < k; ++j) {
            idx[j] = cand[j].i;
            dst[j] = std::sqrt(cand[j].d);
        }
    }
    return out;
}

std::vector<int> fps(const std::vector<Vec3>& points, int m) {
    const int n = static_cast<int>(points.size());
    if (m < 1 || m > n) throw BadM("fps requires 1 <= m <= N");

    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : points) centroid += p;
    centroid *= 1.0 / static_cast<double>(n);

    int start = 0;
    double best = norm2(points[0] - centroid);
    for (int i = 1; i < n; ++i) {
        const double d = norm2(points[i] - centroid);
        if (d < best || (d == best && lex_less(points[i], points[start]))) {
            best = d;
            start = i;
        }
    }

    std::vector<int> picked;
    picked.reserve(m);
    picked.push_back(start);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    int last = start;
    while (static_cast<int>(picked.size()) < m) {
        int next = -1;
        double far = -1.0;
        for (int i = 0; i < n; ++i) {
            const double d2 = norm2(points[i] - points[last]);
            if (d2 < min_d2[i]) min_d2[i] = d2;
            if (min_d2[i] > far) {
                far = min_d2[i];
                next = i;
            }
        }
        picked.push_back(next);
        last = next;
    }
    return picked;
}

FrequencyScores laplacian_scores(const std::vector<Vec3>& points, int k_graph) {
    const int n = static_cast<int>(points.size());
    const NeighborIndex nbr = knn(points, k_graph);  // validates k_graph

    // Symmetrize: edge (i, j) exists if either endpoint lists the other.
    std::vector<std::vector<int>> adj(n);
    for (int i = 0; i < n; ++i)
        for (const int j : nbr.indices[i]) {
            adj[i].push_back(j);
            adj[j].push_back(i);
        }
    std::vector<int> degree(n);
    for (int i = 0; i < n; ++i) {
        auto& a = adj[i];
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
        degree[i] = static_cast<int>(a.size());
    }

    // The residual is evaluated on centroid-centered coordinates: normalized
    // Laplacian rows do not sum to one, so raw coordinates would leak the
    // cloud's absolute position into the scores under translation.
    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : points) centroid += p;
    centroid *= 1.0 / static_cast<double>(n);

    FrequencyScores out;
    out.k_graph = k_graph;
    out.scores.resize(n);
    for (int i = 0; i < n; ++i) {
        Vec3 r = points[i] - centroid;
        if (degree[i] > 0) {
            const double di = std::sqrt(static_cast<double>(degree[i]));
            for (const int j : adj[i]) {
                const double w = 1.0 / (di * std::sqrt(static_cast<double>(degree[j])));
                r -= (points[j] - centroid) * w;
            }
        } else {
            r = {0, 0, 0};  // isolated vertex convention
        }
        out.scores[i] = norm(r);
    }
    return out;
}

double chamfer(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
    if (p.empty() || q.empty()) throw EmptyCloud("chamfer needs two nonempty clouds");
    double total = 0.0;
    for (const Vec3& a : p) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& b : q) best = std::min(best, norm2(a - b));
        total += std::sqrt(best);
    }
    for (const Vec3& b : q) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& a : p) best = std::min(best, norm2(b - a));
        total += std::sqrt(best);
    }
    return total;
}

IdwPlan idw_plan(const std::vector<Vec3>& src_points, const std::vector<Vec3>& query_points,
                 int k) {
    const int ns = static_cast<int>(src_points.size());
    if (ns == 0) throw EmptySource("idw interpolation needs a nonempty source set");
    if (k < 1) throw BadK("idw interpolation needs k >= 1");
    k = std::min(k, ns);

    IdwPlan plan;
    plan.k = k;
    plan.indices.resize(query_points.size() * k);
    plan.weights.resize(query_points.size() * k);

    std::vector<DistIdx> cand(ns);
    for (std::size_t q = 0; q < query_points.size(); ++q) {
        for (int j = 0; j < ns; ++j) cand[j] = {norm2(src_points[j] - query_points[q]), j};
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (int j = 0; j < k; ++j) cand[j].d = std::sqrt(cand[j].d);
        int* idx = &plan.indices[q * k];
        double* wgt = &plan.weights[q * k];
        if (cand[0].d < 1e-12) {
            // Coincident query copies that source exactly.
            for (int j = 0; j < k; ++j) {
                idx[j] = cand[j].i;
                wgt[j] = j == 0 ? 1.0 : 0.0;
            }
            continue;
        }
        double sum = 0.0;
        for (int j = 0; j < k; ++j) {
            idx[j] = cand[j].i;
            wgt[j] = 1.0 / (cand[j].d + 1e-8);
            sum += wgt[j];
        }
        for (int j = 0; j < k; ++j) wgt[j] /= sum;
    }
    return plan;
}

std::vector<double> interpolate_idw(const std::vector<Vec3>& src_points,
                                    const std::vector<double>& src_features, int channels,
                                    const std::vector<Vec3>& query_points, int k) {
    if (channels <= 0 || src_features.size() != src_points.size() * static_cast<std::size_t>(channels))
        throw ShapeMismatch("interpolate_idw: features must be n_src x channels");
    const IdwPlan plan = idw_plan(src_points, query_points, k);
    std::vector<double> out(query_points.size() * channels, 0.0);
    for (std::size_t q = 0; q < query_points.size(); ++q)
        for (int j = 0; j < plan.k; ++j) {
            const double w = plan.weights[q * plan.k + j];
            const double* src = &src_features[plan.indices[q * plan.k + j] * channels];
            double* dst = &out[q * channels];
            for (int c = 0; c < channels; ++c) dst[c] += w * src[c];
        }
    return out;
}

Vec3 least_variance_direction(const double m[3][3]) {
    // Cyclic Jacobi on a symmetric 3x3. A handful of sweeps drives the
    // off-diagonal mass to ~0 at double precision.
    double a[3][3];
    double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a[i][j] = m[i][j];

    for (int sweep = 0; sweep < 24; ++sweep) {
        double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
        if (off == 0.0) break;
        for (int p = 0; p < 2; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int r = 0; r < 3; ++r) {
                    const double arp = a[r][p], arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for (int r = 0; r < 3; ++r) {
                    const double apr = a[p][r], aqr = a[q][r];
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
                for (int r = 0; r < 3; ++r) {
                    const double vrp = v[r][p], vrq = v[r][q];
                    v[r][p] = c * vrp - s * vrq;
                    v[r][q] = s * vrp + c * vrq;
                }
            }
    }
    int smallest = 0;
    if (a[1][1] < a[smallest][smallest]) smallest = 1;
    if (a[2][2] < a[smallest][smallest]) smallest = 2;
    return normalized({v[0][smallest], v[1][smallest], v[2][smallest]});
}

}  // namespace cpnet
