#include "cpnet/losses.hpp"

#include <atomic>
#include <cmath>
#include <iostream>

#include "cpnet/errors.hpp"

namespace cpnet {

namespace {

std::atomic<long> g_cl2g_b1_count{0};

double row_norm_min(const Tensor& t) {
    double worst = std::numeric_limits<double>::infinity();
    const double* d = t.data();
    for (int i = 0; i < t.dim(0); ++i) {
        double n2 = 0.0;
        for (int j = 0; j < t.dim(1); ++j) n2 += d[i * t.dim(1) + j] * d[i * t.dim(1) + j];
        worst = std::min(worst, n2);
    }
    return std::sqrt(worst);
}

Tensor maybe_normalize(const Tensor& t, bool normalize) {
    return normalize ? l2_normalize(t, 1) : t;
}

// InfoNCE with logits [rows, cols] and positives at column pos[i] for row i:
// sum_i (logsumexp(logits_i) - logits_i[pos_i]).
Tensor info_nce(const Tensor& logits, const std::vector<int>& positives) {
    Tensor lse = logsumexp(logits, 1);  // [rows]
    const int rows = logits.dim(0);
    const int cols = logits.dim(1);
    // Pick the positive per row with a constant one-hot mask.
    Tensor mask(Shape{rows, cols});
    double* md = mask.data();
    for (int i = 0; i < rows; ++i) md[static_cast<std::size_t>(i) * cols + positives[i]] = 1.0;
    Tensor pos = sum(mul(logits, mask), 1);  // [rows]
    return sum_all(sub(lse, pos));
}

}  // namespace

LossPreset loss_preset_from_string(const std::string& s) {
    if (s == "segmentation") return LossPreset::segmentation;
    if (s == "classification") return LossPreset::classification;
    if (s == "classification_cg2g") return LossPreset::classification_cg2g;
    if (s == "basic_only") return LossPreset::basic_only;
    if (s == "all") return LossPreset::all;
    throw ConfigError("unknown loss preset '" + s + "'");
}

std::string to_string(LossPreset p) {
    switch (p) {
        case LossPreset::segmentation: return "segmentation";
        case LossPreset::classification: return "classification";
        case LossPreset::classification_cg2g: return "classification_cg2g";
        case LossPreset::basic_only: return "basic_only";
        case LossPreset::all: return "all";
    }
    return "?";
}

void LossConfig::validate() const {
    if (tau <= 0.0) throw ConfigError("loss temperature tau must be positive");
    if (enabled.empty()) throw ConfigError("at least one loss term must be enabled");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

LossConfig LossConfig::preset(LossPreset p) {
    LossConfig cfg;
    switch (p) {
        case LossPreset::segmentation:
            cfg.enabled = {LossTerm::cl, LossTerm::recon, LossTerm::normal};
            break;
        case LossPreset::classification:
            cfg.enabled = {LossTerm::cg, LossTerm::cl, LossTerm::cl2g, LossTerm::recon};
            break;
        case LossPreset::classification_cg2g:
            cfg.enabled = {LossTerm::cg, LossTerm::cl2g, LossTerm::recon};
            break;
        case LossPreset::basic_only:
            cfg.enabled = {LossTerm::recon, LossTerm::normal};
            break;
        case LossPreset::all:
            cfg.enabled = {LossTerm::cg, LossTerm::cl, LossTerm::cl2g, LossTerm::recon,
                           LossTerm::normal};
            break;
    }
    return cfg;
}

LossBreakdown LossTerms::values() const {
    LossBreakdown b;
    if (cg.defined()) b.cg = cg.item();
    if (cl.defined()) b.cl = cl.item();
    if (cl2g.defined()) b.cl2g = cl2g.item();
    if (recon.defined()) b.recon = recon.item();
    if (normal.defined()) b.normal = normal.item();
    if (total.defined()) b.total = total.item();
    return b;
}

Tensor loss_cg(const Tensor& g, const Tensor& g_prime, bool normalize) {
    if (g.shape() != g_prime.shape() || g.rank() != 2 || g.dim(0) != 1)
        throw ShapeMismatch("loss_cg expects two [1, c] global features");
    if (row_norm_min(g) < 1e-15 || row_norm_min(g_prime) < 1e-15)
        throw ZeroVector("loss_cg: zero-norm global feature");
    Tensor cos = normalize ? cosine_similarity(g, g_prime)
                           : sum(mul(g, g_prime), 1);
    return add_scalar(neg(cos), 1.0);
}

Tensor loss_cl(const Tensor& y, const Tensor& y_prime, double tau, bool normalize,
               bool symmetric) {
    if (y.shape() != y_prime.shape() || y.rank() != 2)
        throw ShapeMismatch("loss_cl expects equally shaped [n, c] features");
    if (tau <= 0.0) throw ConfigError("loss_cl: tau must be positive");
    const int n = y.dim(0);
    Tensor yn = maybe_normalize(y, normalize);
    Tensor ypn = maybe_normalize(y_prime, normalize);
    std::vector<int> diag(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;
    Tensor logits = scalar_mul(matmul(yn, transpose(ypn)), 1.0 / tau);
    Tensor fwd = info_nce(logits, diag);
    if (!symmetric) return fwd;
    Tensor bwd = info_nce(transpose(logits), diag);
    return scalar_mul(add(fwd, bwd), 0.5);
}

Tensor loss_cl2g(const Tensor& y, const Tensor& y_prime, const Tensor& g_batch,
                 const Tensor& g_prime_batch, double tau, int own_index, bool normalize) {
    if (g_batch.rank() != 2 || g_prime_batch.shape() != g_batch.shape())
        throw ShapeMismatch("loss_cl2g expects stacked [B, c] global features");
    if (y.dim(1) != g_batch.dim(1) || y_prime.dim(1) != g_batch.dim(1))
        throw ShapeMismatch("loss_cl2g: feature widths disagree");
    const int b = g_batch.dim(0);
    if (own_index < 0 || own_index >= b) throw ShapeMismatch("loss_cl2g: own_index out of range");
    if (tau <= 0.0) throw ConfigError("loss_cl2g: tau must be positive");

    if (b == 1) {
        const long seen = g_cl2g_b1_count.fetch_add(1) + 1;
        if (seen == 1)
            std::cerr << "warning: CL2G with batch size 1 is identically zero (softmax over a "
                         "single candidate)\n";
    }

    Tensor yn = maybe_normalize(y, normalize);
    Tensor ypn = maybe_normalize(y_prime, normalize);
    Tensor gn = maybe_normalize(g_batch, normalize);
    Tensor gpn = maybe_normalize(g_prime_batch, normalize);

    std::vector<int> own(static_cast<std::size_t>(yn.dim(0)), own_index);
    Tensor term1 = info_nce(scalar_mul(matmul(yn, transpose(gpn)), 1.0 / tau), own);
    std::vector<int> own2(static_cast<std::size_t>(ypn.dim(0)), own_index);
    Tensor term2 = info_nce(scalar_mul(matmul(ypn, transpose(gn)), 1.0 / tau), own2);
    return add(term1, term2);
}

long cl2g_degenerate_batch_count() { return g_cl2g_b1_count.load(); }

Tensor loss_recon(const std::vector<Vec3>& original, const Tensor& recon,
                  const Tensor& recon_prime) {
    return add(chamfer_to(recon, original), chamfer_to(recon_prime, original));
}

Tensor loss_normal(const Tensor& pred, const std::vector<Vec3>& ground) {
    if (pred.rank() != 2 || pred.dim(1) != 3 ||
        pred.dim(0) != static_cast<int>(ground.size()))
        throw ShapeMismatch("loss_normal expects aligned [n, 3] inputs");
    Tensor cos = sum(mul(pred, points_tensor(ground)), 1);  // rows are unit length
    return add_scalar(neg(mean(cos, 0)), 1.0);
}

LossTerms total_loss(const BranchOutputs& outputs, const PointCloud& cloud,
                     const LossConfig& cfg) {
    cfg.validate();
    LossTerms t;
    std::vector<Tensor> parts;

    if (cfg.has(LossTerm::cg)) {
        t.cg = loss_cg(outputs.g, outputs.g_prime, cfg.normalize_logits);
        parts.push_back(t.cg);
    }
    RowAlignment align;
    if (cfg.has(LossTerm::cl) || cfg.has(LossTerm::cl2g)) align = align_rows(outputs);
    if (cfg.has(LossTerm::cl)) {
        t.cl = loss_cl(gather_rows(outputs.y, align.basic_rows),
                       gather_rows(outputs.y_prime, align.assist_rows), cfg.tau,
                       cfg.normalize_logits, cfg.symmetric_cl);
        parts.push_back(t.cl);
    }
    if (cfg.has(LossTerm::cl2g)) {
        t.cl2g = loss_cl2g(gather_rows(outputs.y, align.basic_rows),
                           gather_rows(outputs.y_prime, align.assist_rows), outputs.g,
                           outputs.g_prime, cfg.tau, 0, cfg.normalize_logits);
        parts.push_back(t.cl2g);
    }
    if (cfg.has(LossTerm::recon)) {
        t.recon = loss_recon(cloud.points, outputs.recon, outputs.recon_prime);
        parts.push_back(t.recon);
    }
    if (cfg.has(LossTerm::normal)) {
        if (!cloud.normals) throw ConfigError("normal loss enabled but the cloud has no normals");
        if (!outputs.normals.defined())
            throw ConfigError("normal loss enabled but the model has no normal head");
        std::vector<Vec3> ground;
        ground.reserve(outputs.normals_orig_index.size());
        for (const int i : outputs.normals_orig_index)
            ground.push_back((*cloud.normals)[static_cast<std::size_t>(i)]);
        t.normal = loss_normal(outputs.normals, ground);
        parts.push_back(t.normal);
    }

    t.total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) t.total = add(t.total, parts[i]);
    return t;
}

}  // namespace cpnet
