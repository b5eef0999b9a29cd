#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpnet/cloud.hpp"
#include "cpnet/disentangle.hpp"
#include "cpnet/params.hpp"
#include "cpnet/tensor.hpp"

namespace cpnet {

// Network shape. The classification variant is encoder-only (features stay at
// the last level); the segmentation variant adds the transition-up decoder
// and per-level point-wise heads propagated to the input resolution.
struct CpNetConfig {
    enum class Variant { classification, segmentation };

    Variant variant = Variant::segmentation;
    std::vector<int> points_per_level;    // e.g. {256, 128, 64, 32}
    std::vector<int> channels_per_level;  // e.g. {32, 64, 128, 256}
    int k_neighbors = 16;
    int head_width = 32;        // per-level output channels of the point-wise heads
    int weight_mlp_hidden = 16;
    int fold_hidden = 64;
    int normal_hidden = 64;
    bool use_batch_norm = true;
    bool normal_head = true;
    bool relation_abs_coords = true;  // absolute coordinates in the RS-Conv relation vector
    int fold_grid_side = 0;           // 0 = ceil(sqrt(N))
    double bn_eps = 1e-5;

    int levels() const { return static_cast<int>(points_per_level.size()); }
    int pointwise_channels() const;
    void validate(int n_points) const;

    static CpNetConfig preset(Variant v, int n_points);
};

enum class BnMode { train_update, train_pure, eval };

struct ForwardOptions {
    BnMode bn_mode = BnMode::train_pure;
    double bn_momentum = 0.9;
};

// Fixed 2D lattice the folding decoder deforms: fold_grid_side^2 >= n points
// on a unit square centered at the origin, row-major, truncated to n.
struct FoldingGrid {
    Tensor grid;  // [n, 2] constant
    int side = 0;
    static FoldingGrid make(int n, int side = 0);
};

// Output of one branch pass.
struct BranchResult {
    Tensor y;        // [rows, C_y] point-wise features
    Tensor g;        // [1, C_y] global feature
    Tensor recon;    // [grid_n, 3] folded reconstruction
    Tensor normals;  // [rows, 3] unit rows, undefined when the head is off
    std::vector<int> y_input_index;  // Y row -> index into the branch input points
    std::vector<Vec3> y_points;      // coordinates of Y rows
};

// Dual-branch outputs. y/g belong to the basic branch (original cloud),
// y_prime/g_prime to the assistant branch (perturbed cloud). *_orig_index maps
// feature rows back to original-cloud point indices so the point-wise losses
// can pair corresponding points even when the perturbation reordered or
// deleted points.
struct BranchOutputs {
    Tensor y, g;
    Tensor y_prime, g_prime;
    Tensor recon, recon_prime;
    Tensor normals;
    std::vector<int> y_orig_index;
    std::vector<int> y_prime_orig_index;
    std::vector<int> normals_orig_index;
};

// Row pairing between basic and assistant point-wise features: row
// basic_rows[i] of Y corresponds to row assist_rows[i] of Y'.
struct RowAlignment {
    std::vector<int> basic_rows;
    std::vector<int> assist_rows;
};
RowAlignment align_rows(const BranchOutputs& outputs);

// Creates every parameter and buffer of the network. Weight matrices are
// uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)) from a per-name
// substream of `seed`; biases start at zero.
void init_params(ParamStore& store, const CpNetConfig& cfg, std::uint64_t seed);

struct RsconvResult {
    std::vector<Vec3> points_out;
    Tensor feats_out;
    std::vector<int> fps_indices;  // into points_in
};

// Per-level sampling positions (indices into the previous level's point
// list). When the assistant branch mirrors the basic branch's plan, feature
// rows of the two branches correspond one-to-one by source point, which the
// point-wise consistency losses require.
struct SamplingPlan {
    std::vector<std::vector<int>> level_positions;
};

// One RS-Conv set-abstraction level: FPS downsampling, per-neighbor relation
// vectors mapped to channel weights, weighted max aggregation, then a
// channel-raising layer.
RsconvResult rsconv_level(ParamBinder& pb, const CpNetConfig& cfg, int level,
                          const std::vector<Vec3>& points_in, const Tensor& feats_in,
                          int points_out_count, const ForwardOptions& opts,
                          const std::vector<int>* preset_indices = nullptr);

// Decoder step: Q_{l-1} = MLP(MLP(interp(Q_l)) + MLP(F_prev)).
Tensor transition_up(ParamBinder& pb, int level, const Tensor& q_l, const Tensor& f_prev,
                     const std::vector<Vec3>& points_l, const std::vector<Vec3>& points_prev);

// Per-level features propagated to the query points and concatenated.
Tensor pointwise_head(ParamBinder& pb, const CpNetConfig& cfg, const std::vector<Tensor>& q_levels,
                      const std::vector<std::vector<Vec3>>& level_points,
                      const std::vector<Vec3>& query_points);

// Column-wise max over rows -> [1, C].
Tensor global_feature(const Tensor& y);

// Per-row unit normal estimates from (p_i (+) y_i (+) G).
Tensor predict_normals(ParamBinder& pb, const std::vector<Vec3>& points, const Tensor& y,
                       const Tensor& g);

// Folding decoder: P_hat = MLP(G_rep (+) MLP(G_rep (+) grid)).
Tensor fold_reconstruct(ParamBinder& pb, const Tensor& g, const FoldingGrid& grid);

// Full single-branch pass. recon_points = grid size of the folding decoder
// (the point count of the cloud being reconstructed). A sampling plan, when
// given, overrides the per-level FPS selection; plan_out, when given,
// receives the selection that was used.
BranchResult forward_branch(ParamBinder& pb, const CpNetConfig& cfg,
                            const std::vector<Vec3>& points, int recon_points,
                            const ForwardOptions& opts, const SamplingPlan* plan = nullptr,
                            SamplingPlan* plan_out = nullptr);

// Weight-shared dual pass: basic branch on the original cloud, assistant
// branch on the perturbed one, both reconstructing the original point count.
BranchOutputs dual_forward(const PointCloud& original, const PerturbedCloud& perturbed,
                           ParamBinder& pb, const CpNetConfig& cfg, const ForwardOptions& opts);

}  // namespace cpnet
