#include "cpnet/disentangle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cpnet/errors.hpp"
#include "cpnet/rng.hpp"

namespace cpnet {

namespace {

Vec3 point_noise(std::uint64_t seed, int point_index, double std_dev, double clip) {
    Rng rng(substream(seed, "jitter", static_cast<std::uint64_t>(point_index)));
    Vec3 d{std_dev * rng.gaussian(), std_dev * rng.gaussian(), std_dev * rng.gaussian()};
    if (clip > 0.0) {
        d.x = std::clamp(d.x, -clip, clip);
        d.y = std::clamp(d.y, -clip, clip);
        d.z = std::clamp(d.z, -clip, clip);
    }
    return d;
}

// Seeded 4-way centroid clustering (Lloyd iterations from random distinct
// seeds). Stands in for the NMF part extraction used by manners A and F.
std::vector<int> cluster_assignments(const std::vector<Vec3>& points, std::uint64_t seed) {
    const int n = static_cast<int>(points.size());
    const int k = std::min(4, n);
    Rng rng(substream(seed, "cluster"));

    std::vector<int> centers;
    while (static_cast<int>(centers.size()) < k) {
        const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        if (std::find(centers.begin(), centers.end(), c) == centers.end()) centers.push_back(c);
    }
    std::vector<Vec3> centroids;
    for (const int c : centers) centroids.push_back(points[c]);

    std::vector<int> assign(n, 0);
    for (int iter = 0; iter < 16; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = norm2(points[i] - centroids[0]);
            for (int c = 1; c < k; ++c) {
                const double d = norm2(points[i] - centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
        std::vector<Vec3> sums(k, Vec3{0, 0, 0});
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            sums[assign[i]] += points[i];
            ++counts[assign[i]];
        }
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0) centroids[c] = sums[c] * (1.0 / counts[c]);
    }
    return assign;
}

PerturbedCloud make_jittered(const DisentangledCloud& d, const std::vector<int>& targets,
                             Manner manner, double std_dev, std::uint64_t seed, double clip,
                             bool contour_first_order) {
    const auto& src = d.source.points;
    PerturbedCloud out;
    out.manner = manner;
    out.std_dev = std_dev;
    out.seed = seed;
    out.target_index = targets;

    std::vector<char> is_target(src.size(), 0);
    for (const int t : targets) is_target[t] = 1;

    std::vector<int> order;
    if (contour_first_order) {
        order = d.contour_idx;
        order.insert(order.end(), d.content_idx.begin(), d.content_idx.end());
        if (d.dropped_idx) order.push_back(*d.dropped_idx);
    } else {
        order.resize(src.size());
        std::iota(order.begin(), order.end(), 0);
    }

    out.points.reserve(order.size());
    out.source_index = order;
    for (const int i : order) {
        Vec3 p = src[i];
        if (is_target[i]) p += point_noise(seed, i, std_dev, clip);
        out.points.push_back(p);
    }
    for (const int t : targets) out.noise.push_back(point_noise(seed, t, std_dev, clip));
    return out;
}

PerturbedCloud make_deleted(const DisentangledCloud& d, const std::vector<int>& deleted,
                            Manner manner, double std_dev, std::uint64_t seed) {
    const auto& src = d.source.points;
    std::vector<char> gone(src.size(), 0);
    for (const int t : deleted) gone[t] = 1;

    PerturbedCloud out;
    out.manner = manner;
    out.std_dev = std_dev;
    out.seed = seed;
    out.target_index = deleted;
    for (int i = 0; i < static_cast<int>(src.size()); ++i) {
        if (gone[i]) continue;
        out.points.push_back(src[i]);
        out.source_index.push_back(i);
    }
    if (out.points.empty()) throw EmptyResult("perturbation deleted every point");
    return out;
}

}  // namespace

Manner manner_from_char(char c) {
    if (c >= 'a' && c <= 'i') c = static_cast<char>(c - 'a' + 'A');
    if (c < 'A' || c > 'I') throw InvalidSpec(std::string("unknown perturbation manner '") + c + "'");
    return static_cast<Manner>(c - 'A');
}

char to_char(Manner m) { return static_cast<char>('A' + static_cast<int>(m)); }

bool manner_deletes(Manner m) {
    return m == Manner::A || m == Manner::B || m == Manner::C || m == Manner::D;
}

DisentangledCloud disentangle(const PointCloud& cloud, int k_graph) {
    const int n = static_cast<int>(cloud.points.size());
    if (n < 4) throw TooFewPoints("disentangle needs at least 4 points");

    DisentangledCloud out;
    out.source = cloud;
    out.scores = laplacian_scores(cloud.points, k_graph);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = out.scores.scores[a], sb = out.scores.scores[b];
        return sa != sb ? sa > sb : a < b;
    });

    const int m = n / 2;
    out.contour_idx.assign(order.begin(), order.begin() + m);
    if (n % 2 != 0) out.dropped_idx = order[m];
    out.content_idx.assign(order.end() - m, order.end());
    return out;
}

PerturbedCloud perturb(const DisentangledCloud& d, Manner manner, double std_dev,
                       std::uint64_t seed, double clip) {
    if (std_dev < 0.0) throw InvalidSpec("std must be nonnegative");
    const auto& src = d.source.points;
    Rng pick(substream(seed, "pick"));

    switch (manner) {
        case Manner::A: {
            const auto assign = cluster_assignments(src, seed);
            const int target = static_cast<int>(pick.below(4));
            std::vector<int> deleted;
            for (int i = 0; i < static_cast<int>(src.size()); ++i)
                if (assign[i] == target) deleted.push_back(i);
            return make_deleted(d, deleted, manner, std_dev, seed);
        }
        case Manner::B: return make_deleted(d, d.content_idx, manner, std_dev, seed);
        case Manner::C: return make_deleted(d, d.contour_idx, manner, std_dev, seed);
        case Manner::D:
            return make_deleted(d, pick.uniform() < 0.5 ? d.contour_idx : d.content_idx, manner,
                                std_dev, seed);
        case Manner::E: {
            std::vector<int> all(src.size());
            std::iota(all.begin(), all.end(), 0);
            return make_jittered(d, all, manner, std_dev, seed, clip, false);
        }
        case Manner::F: {
            const auto assign = cluster_assignments(src, seed);
            const int target = static_cast<int>(pick.below(4));
            std::vector<int> targets;
            for (int i = 0; i < static_cast<int>(src.size()); ++i)
                if (assign[i] == target) targets.push_back(i);
            return make_jittered(d, targets, manner, std_dev, seed, clip, false);
        }
        case Manner::G: return make_jittered(d, d.content_idx, manner, std_dev, seed, clip, false);
        case Manner::H:
            // The paper's module: P' = perturbed contour block, then exact
            // content block.
            return make_jittered(d, d.contour_idx, manner, std_dev, seed, clip, true);
        case Manner::I:
            return make_jittered(d, pick.uniform() < 0.5 ? d.contour_idx : d.content_idx, manner,
                                 std_dev, seed, clip, false);
    }
    throw InvalidSpec("unreachable manner");
}

PerturbedCloud jitter_count_variant(const DisentangledCloud& d, int count, double std_dev,
                                    std::uint64_t seed, double clip) {
    const int n = static_cast<int>(d.source.points.size());
    if (count < 0 || count > n) throw BadCount("jitter count must be in [0, N]");

    // Global score ranking, same ordering disentangle used.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = d.scores.scores[a], sb = d.scores.scores[b];
        return sa != sb ? sa > sb : a < b;
    });
    std::vector<int> targets(order.begin(), order.begin() + count);
    return make_jittered(d, targets, Manner::H, std_dev, seed, clip, false);
}

}  // namespace cpnet
