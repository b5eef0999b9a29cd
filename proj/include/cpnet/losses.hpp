#pragma once

#include <set>
#include <string>
#include <vector>

#include "cpnet/model.hpp"
#include "cpnet/tensor.hpp"

namespace cpnet {

enum class LossTerm { cg, cl, cl2g, recon, normal };

enum class LossPreset {
    segmentation,          // {CL, recon, normal}
    classification,        // {CG, CL, CL2G, recon}
    classification_cg2g,   // {CG, CL2G, recon} consistency subset
    basic_only,            // {recon, normal}: no consistency terms, no assistant branch
    all,                   // all five terms
};

LossPreset loss_preset_from_string(const std::string& s);
std::string to_string(LossPreset p);

struct LossConfig {
    double tau = 0.1;
    std::set<LossTerm> enabled;
    int batch_size = 1;
    bool normalize_logits = true;
    bool symmetric_cl = false;

    bool has(LossTerm t) const { return enabled.count(t) > 0; }
    void validate() const;
    static LossConfig preset(LossPreset p);
};

struct LossBreakdown {
    double cg = 0, cl = 0, cl2g = 0, recon = 0, normal = 0, total = 0;
};

// Scalar loss tensors for one evaluation; disabled terms stay undefined.
struct LossTerms {
    Tensor cg, cl, cl2g, recon, normal, total;
    LossBreakdown values() const;
};

// 1 - cos(G, G'). Throws ZeroVector on a zero-norm input.
Tensor loss_cg(const Tensor& g, const Tensor& g_prime, bool normalize = true);

// Point-wise InfoNCE: anchors from the basic branch, candidates from the
// assistant branch, positives on the diagonal. Rows are l2-normalized before
// the dot products unless normalize is off.
Tensor loss_cl(const Tensor& y, const Tensor& y_prime, double tau, bool normalize = true,
               bool symmetric = false);

// Local-to-global InfoNCE for one sample against the batch globals of the
// other branch (both directions). own_index selects the positive column.
// A batch of one yields exactly zero and counts a degenerate-batch warning.
Tensor loss_cl2g(const Tensor& y, const Tensor& y_prime, const Tensor& g_batch,
                 const Tensor& g_prime_batch, double tau, int own_index, bool normalize = true);

// Number of times loss_cl2g was evaluated with B = 1 in this process.
long cl2g_degenerate_batch_count();

// chamfer(P, recon) + chamfer(P, recon'): both branches reconstruct the
// original cloud.
Tensor loss_recon(const std::vector<Vec3>& original, const Tensor& recon,
                  const Tensor& recon_prime);

// 1 - mean_i cos(pred_i, ground_i). Rows are assumed unit length.
Tensor loss_normal(const Tensor& pred, const std::vector<Vec3>& ground);

// Single-sample composition of the enabled terms (CL2G under its B = 1
// degenerate semantics). Training batches use loss_cl2g directly.
LossTerms total_loss(const BranchOutputs& outputs, const PointCloud& cloud,
                     const LossConfig& cfg);

}  // namespace cpnet
