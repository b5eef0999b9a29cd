#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cpnet/cloud.hpp"
#include "cpnet/geometry.hpp"

namespace cpnet {

// Index partition of a cloud into a contour half (highest graph-frequency
// scores) and a content half (lowest). Ties at the cut go to the contour side
// by lower index. For odd N the single median-score point is dropped and
// recorded.
struct DisentangledCloud {
    PointCloud source;
    std::vector<int> contour_idx;
    std::vector<int> content_idx;
    std::optional<int> dropped_idx;
    FrequencyScores scores;

    int half_size() const { return static_cast<int>(contour_idx.size()); }
};

// Perturbation manners A..I. H (jitter contour points) is the default module;
// the rest are ablation baselines.
enum class Manner { A, B, C, D, E, F, G, H, I };

Manner manner_from_char(char c);
char to_char(Manner m);
bool manner_deletes(Manner m);

// Perturbed cloud P'. For jitter manners the output has N points; for delete
// manners only the survivors remain. source_index maps each output row to its
// source point; target_index lists the source points that were jittered or
// deleted, in the order their noise rows were drawn.
struct PerturbedCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> noise;
    std::vector<int> source_index;
    std::vector<int> target_index;
    Manner manner = Manner::H;
    double std_dev = 0.0;
    std::uint64_t seed = 0;
};

DisentangledCloud disentangle(const PointCloud& cloud, int k_graph);

// Applies one Table-class perturbation manner. Noise is i.i.d. zero-mean
// Gaussian per coordinate, drawn from a per-point substream of `seed`, so the
// same point gets the same noise under every manner that targets it. For
// manner H the output is ordered contour block first, then content block;
// other manners keep source order. clip > 0 clamps each noise component to
// [-clip, clip] (off by default).
PerturbedCloud perturb(const DisentangledCloud& d, Manner manner, double std_dev,
                       std::uint64_t seed, double clip = 0.0);

// Table VII variant: jitters only the `count` highest-scored points.
// count = N/2 targets exactly the contour half; count = N jitters everything.
PerturbedCloud jitter_count_variant(const DisentangledCloud& d, int count, double std_dev,
                                    std::uint64_t seed, double clip = 0.0);

}  // namespace cpnet
