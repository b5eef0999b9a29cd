// Acceptance suite. Each criterion prints exactly one PASS/FAIL line; the
// process exits nonzero if any requested criterion fails. Run with a list of
// criterion numbers (1..11) or with no arguments for all of them.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cpnet/cloud.hpp"
#include "cpnet/config.hpp"
#include "cpnet/disentangle.hpp"
#include "cpnet/errors.hpp"
#include "cpnet/geometry.hpp"
#include "cpnet/losses.hpp"
#include "cpnet/model.hpp"
#include "cpnet/params.hpp"
#include "cpnet/rng.hpp"
#include "cpnet/tensor.hpp"
#include "cpnet/trainer.hpp"

using namespace cpnet;
namespace fs = std::filesystem;

namespace {

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

double median3(double a, double b, double c) {
    return std::max(std::min(a, b), std::min(std::max(a, b), c));
}

std::vector<Vec3> random_points(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Vec3> pts(static_cast<std::size_t>(n));
    for (Vec3& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    return pts;
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

void rotate_cloud(PointCloud& cloud, std::uint64_t seed, bool full_so3) {
    Rng rr(seed);
    const double a = rr.uniform(0, 6.283185307179586);
    const double b = full_so3 ? std::acos(rr.uniform(-1, 1)) : 0.0;
    const double g = full_so3 ? rr.uniform(0, 6.283185307179586) : 0.0;
    const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b),
                 cg = std::cos(g), sg = std::sin(g);
    auto rot = [&](const Vec3& p) {
        const Vec3 q{ca * p.x - sa * p.y, sa * p.x + ca * p.y, p.z};
        const Vec3 r{cb * q.x + sb * q.z, q.y, -sb * q.x + cb * q.z};
        return Vec3{cg * r.x - sg * r.y, sg * r.x + cg * r.y, r.z};
    };
    for (Vec3& p : cloud.points) p = rot(p);
    if (cloud.normals)
        for (Vec3& n : *cloud.normals) n = rot(n);
}

void anisotropic_scale(PointCloud& cloud, std::uint64_t seed) {
    Rng ar(seed);
    const Vec3 sc{ar.uniform(0.5, 1.25), ar.uniform(0.5, 1.25), ar.uniform(0.5, 1.25)};
    for (Vec3& p : cloud.points) {
        p.x *= sc.x;
        p.y *= sc.y;
        p.z *= sc.z;
    }
    if (cloud.normals)
        for (Vec3& n : *cloud.normals) {
            n.x /= sc.x;
            n.y /= sc.y;
            n.z /= sc.z;
            n = normalized(n);
        }
    cloud = normalize_unit_sphere(cloud);
}

// ---- independent brute-force oracles (criterion 2) -------------------------

double brute_chamfer(const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
    double total = 0.0;
    for (const Vec3& a : p) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& b : q) best = std::min(best, norm(a - b));
        total += best;
    }
    for (const Vec3& b : q) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& a : p) best = std::min(best, norm(b - a));
        total += best;
    }
    return total;
}

std::vector<double> l2n_rows(const Tensor& t) {
    std::vector<double> out(static_cast<std::size_t>(t.size()));
    for (int i = 0; i < t.dim(0); ++i) {
        double n2 = 0;
        for (int j = 0; j < t.dim(1); ++j) n2 += t.at(i, j) * t.at(i, j);
        const double inv = 1.0 / std::sqrt(n2 + 1e-24);
        for (int j = 0; j < t.dim(1); ++j)
            out[static_cast<std::size_t>(i) * t.dim(1) + j] = t.at(i, j) * inv;
    }
    return out;
}

double brute_cl(const Tensor& y, const Tensor& yp, double tau) {
    const int n = y.dim(0), c = y.dim(1);
    const auto a = l2n_rows(y), b = l2n_rows(yp);
    double total = 0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> logits(static_cast<std::size_t>(n));
        double m = -1e300;
        for (int j = 0; j < n; ++j) {
            double dot = 0;
            for (int ch = 0; ch < c; ++ch)
                dot += a[static_cast<std::size_t>(i) * c + ch] *
                       b[static_cast<std::size_t>(j) * c + ch];
            logits[static_cast<std::size_t>(j)] = dot / tau;
            m = std::max(m, logits[static_cast<std::size_t>(j)]);
        }
        double z = 0;
        for (int j = 0; j < n; ++j) z += std::exp(logits[static_cast<std::size_t>(j)] - m);
        total += m + std::log(z) - logits[static_cast<std::size_t>(i)];
    }
    return total;
}

double brute_cl2g(const Tensor& y, const Tensor& yp, const Tensor& g, const Tensor& gp,
                  double tau, int own) {
    const int c = y.dim(1);
    const auto gn = l2n_rows(g), gpn = l2n_rows(gp);
    auto term = [&](const Tensor& feats, const std::vector<double>& globals) {
        const auto fn = l2n_rows(feats);
        const int b = g.dim(0);
        double total = 0;
        for (int i = 0; i < feats.dim(0); ++i) {
            std::vector<double> logits(static_cast<std::size_t>(b));
            double m = -1e300;
            for (int k = 0; k < b; ++k) {
                double dot = 0;
                for (int ch = 0; ch < c; ++ch)
                    dot += fn[static_cast<std::size_t>(i) * c + ch] *
                           globals[static_cast<std::size_t>(k) * c + ch];
                logits[static_cast<std::size_t>(k)] = dot / tau;
                m = std::max(m, logits[static_cast<std::size_t>(k)]);
            }
            double z = 0;
            for (int k = 0; k < b; ++k) z += std::exp(logits[static_cast<std::size_t>(k)] - m);
            total += m + std::log(z) - logits[static_cast<std::size_t>(own)];
        }
        return total;
    };
    return term(y, gpn) + term(yp, gn);
}

// ---- shared experiment setups ----------------------------------------------

// Criterion 7/8 task: three parameter-varying shape families under
// anisotropic scaling and azimuthal rotation, 150 clouds per class.
struct ClsTask {
    std::vector<PointCloud> all;     // 450 clouds, class-major
    std::vector<PointCloud> train;   // first 100 of each class
    std::vector<int> labels;
    CpNetConfig mcfg;
};

ClsTask build_cls_task(std::uint64_t seed) {
    ClsTask task;
    const ShapeKind kinds[3] = {ShapeKind::torus, ShapeKind::cylinder, ShapeKind::barbell};
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 150; ++i) {
            ShapeSpec s;
            s.kind = kinds[k];
            s.n_points = 64;
            s.noise_std = 0.10;
            s.seed = substream(seed, "cls-data", static_cast<std::uint64_t>(k),
                               static_cast<std::uint64_t>(i));
            PointCloud cloud = gen_shape(s);
            anisotropic_scale(cloud, substream(s.seed, "aniso"));
            rotate_cloud(cloud, substream(s.seed, "rot"), /*full_so3=*/false);
            task.all.push_back(cloud);
            task.labels.push_back(k);
            if (i < 100) task.train.push_back(cloud);
        }
    task.mcfg.variant = CpNetConfig::Variant::classification;
    task.mcfg.points_per_level = {64, 32, 8};
    task.mcfg.channels_per_level = {16, 32, 64};
    task.mcfg.k_neighbors = 12;
    task.mcfg.weight_mlp_hidden = 12;
    task.mcfg.fold_hidden = 32;
    task.mcfg.use_batch_norm = false;
    task.mcfg.normal_head = false;
    return task;
}

TrainConfig cls_train_config(std::uint64_t seed, bool dual) {
    TrainConfig tcfg;
    tcfg.epochs = 20;
    tcfg.batch_size = 8;
    tcfg.seed = seed;
    if (dual) {
        tcfg.loss = LossConfig::preset(LossPreset::classification);
    } else {
        tcfg.dual_branch = false;
        tcfg.loss.enabled = {LossTerm::recon};  // encoder-only variant has no normal head
    }
    tcfg.loss.batch_size = tcfg.batch_size;
    return tcfg;
}

double cls_probe_accuracy(ParamStore& params, const ClsTask& task, std::uint64_t seed) {
    const auto features = extract_features_classify(params, task.mcfg, task.all);
    return linear_probe_classify(features, task.labels, 100.0 / 150.0, substream(seed, "probe"))
        .accuracy;
}

// Criterion 9 task: 100 barbells with seed-varied proportions.
struct SegTask {
    std::vector<PointCloud> clouds;
    std::vector<std::vector<int>> labels;
    std::vector<int> cats;
    CpNetConfig mcfg;
};

SegTask build_seg_task(std::uint64_t seed) {
    SegTask task;
    for (int i = 0; i < 100; ++i) {
        ShapeSpec s;
        s.kind = ShapeKind::barbell;
        s.n_points = 128;
        s.noise_std = 0.04;
        s.seed = substream(seed, "barbell", static_cast<std::uint64_t>(i));
        task.clouds.push_back(gen_shape(s));
        task.labels.push_back(*task.clouds.back().part_labels);
        task.cats.push_back(0);
    }
    task.mcfg.variant = CpNetConfig::Variant::segmentation;
    task.mcfg.points_per_level = {128, 64, 32, 16};
    task.mcfg.channels_per_level = {16, 32, 48, 64};
    task.mcfg.k_neighbors = 12;
    task.mcfg.head_width = 16;
    task.mcfg.weight_mlp_hidden = 12;
    task.mcfg.fold_hidden = 32;
    task.mcfg.normal_hidden = 32;
    task.mcfg.use_batch_norm = false;
    task.mcfg.normal_head = true;
    return task;
}

double seg_probe_miou(ParamStore& params, const SegTask& task, std::uint64_t seed) {
    const auto features = extract_features_segment(params, task.mcfg, task.clouds);
    return linear_probe_segment(features, task.labels, task.cats, 0.1, substream(seed, "probe"))
        .instance_miou;
}

// Criterion 6/11 dataset: mixed sphere/cube/torus clouds.
std::vector<PointCloud> mixed_clouds(int count, int n_points, std::uint64_t seed) {
    const ShapeKind kinds[3] = {ShapeKind::sphere, ShapeKind::cube, ShapeKind::torus};
    std::vector<PointCloud> out;
    for (int i = 0; i < count; ++i) {
        ShapeSpec s;
        s.kind = kinds[i % 3];
        s.n_points = n_points;
        s.noise_std = 0.0;
        s.seed = substream(seed, "mixed", static_cast<std::uint64_t>(i));
        out.push_back(gen_shape(s));
    }
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CPNET_CLI_PATH) + " " + args;
    const int rc = std::system(cmd.c_str());
    return rc < 0 ? rc : WEXITSTATUS(rc);
}

// ---- criteria ---------------------------------------------------------------

bool crit1(std::string& detail) {
    const double t0 = now_s();
    const GradCheckResult res = dual_branch_grad_check({});  // N=64, B=2, 200 probes
    const double secs = now_s() - t0;
    detail = "max relative error " + fmt(res.max_rel_error, 10) + " over " +
             std::to_string(res.evaluated) + " probes (bound 1e-4), " + fmt(secs, 1) +
             " s (bound 120 s)";
    return res.max_rel_error < 1e-4 && secs < 120.0;
}

bool crit2(std::string& detail) {
    double worst_chamfer = 0, worst_cl = 0, worst_cl2g = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto p = random_points(8 + static_cast<int>(s % 25), substream(s, "ch-p"));
        const auto q = random_points(6 + static_cast<int>((s * 7) % 27), substream(s, "ch-q"));
        worst_chamfer = std::max(worst_chamfer, std::abs(chamfer(p, q) - brute_chamfer(p, q)));

        const int n = 4 + static_cast<int>(s % 29);
        const int c = 5 + static_cast<int>(s % 12);
        const Tensor y = random_tensor({n, c}, substream(s, "cl-y"));
        const Tensor yp = random_tensor({n, c}, substream(s, "cl-yp"));
        worst_cl = std::max(worst_cl, std::abs(loss_cl(y, yp, 0.1).item() - brute_cl(y, yp, 0.1)));

        const int b = 2 + static_cast<int>(s % 3);
        const int rows = 3 + static_cast<int>(s % 14);
        const Tensor g = random_tensor({b, c}, substream(s, "g"));
        const Tensor gp = random_tensor({b, c}, substream(s, "gp"));
        const Tensor ys = random_tensor({rows, c}, substream(s, "ys"));
        const Tensor yps = random_tensor({rows, c}, substream(s, "yps"));
        const int own = static_cast<int>(s % b);
        worst_cl2g = std::max(worst_cl2g, std::abs(loss_cl2g(ys, yps, g, gp, 0.1, own).item() -
                                                   brute_cl2g(ys, yps, g, gp, 0.1, own)));
    }
    detail = "max |impl - oracle|: chamfer " + fmt(worst_chamfer, 12) + ", cl " +
             fmt(worst_cl, 12) + ", cl2g " + fmt(worst_cl2g, 12) + " (bound 1e-9)";
    return worst_chamfer < 1e-9 && worst_cl < 1e-9 && worst_cl2g < 1e-9;
}

bool crit3(std::string& detail) {
    // Partition invariants on 100 seeded clouds.
    for (std::uint64_t s = 0; s < 100; ++s) {
        const int n = 16 + static_cast<int>(s % 7) * 12;
        PointCloud c;
        c.points = random_points(n - (n % 2), substream(s, "dis"));
        const DisentangledCloud d = disentangle(c, 6);
        const int m = static_cast<int>(c.points.size()) / 2;
        if (static_cast<int>(d.contour_idx.size()) != m ||
            static_cast<int>(d.content_idx.size()) != m) {
            detail = "half sizes wrong at seed " + std::to_string(s);
            return false;
        }
        std::set<int> seen(d.contour_idx.begin(), d.contour_idx.end());
        for (const int i : d.content_idx) seen.insert(i);
        if (static_cast<int>(seen.size()) != 2 * m) {
            detail = "partition overlaps at seed " + std::to_string(s);
            return false;
        }
        double min_contour = 1e300, max_content = -1e300;
        for (const int i : d.contour_idx) min_contour = std::min(min_contour, d.scores.scores[i]);
        for (const int i : d.content_idx) max_content = std::max(max_content, d.scores.scores[i]);
        if (min_contour < max_content) {
            detail = "score ordering violated at seed " + std::to_string(s);
            return false;
        }
    }

    // Plane + spike: the spike must land in the contour half.
    PointCloud plane;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            if (i != 4 || j != 4)
                plane.points.push_back({static_cast<double>(i), static_cast<double>(j), 0.0});
    plane.points.push_back({4.0, 4.0, 3.0});
    const int spike = static_cast<int>(plane.points.size()) - 1;
    const DisentangledCloud dp = disentangle(plane, 8);
    if (std::count(dp.contour_idx.begin(), dp.contour_idx.end(), spike) != 1) {
        detail = "spike not in the contour half";
        return false;
    }

    // Rigid-motion equivariance of the index partition on 20 seeded rotations.
    PointCloud base;
    base.points = random_points(64, 321);
    const DisentangledCloud d1 = disentangle(base, 8);
    for (std::uint64_t s = 0; s < 20; ++s) {
        PointCloud moved = base;
        rotate_cloud(moved, substream(s, "equi"), /*full_so3=*/true);
        const DisentangledCloud d2 = disentangle(moved, 8);
        if (d1.contour_idx != d2.contour_idx || d1.content_idx != d2.content_idx) {
            detail = "partition changed under rotation seed " + std::to_string(s);
            return false;
        }
    }
    detail = "100 seeded partitions, spike placement, 20 rotations";
    return true;
}

bool crit4(std::string& detail) {
    double worst = 0.0;
    const Tensor g = random_tensor({1, 16}, 7);
    worst = std::max(worst, std::abs(loss_cg(g, g).item()));

    const std::vector<Vec3> ground = {{0, 0, 1}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const Tensor aligned = points_tensor(ground);
    worst = std::max(worst, std::abs(loss_normal(aligned, ground).item()));
    Tensor anti(Shape{4, 3});
    for (int i = 0; i < 12; ++i) anti.data()[i] = -aligned.at(i);
    worst = std::max(worst, std::abs(loss_normal(anti, ground).item() - 2.0));
    const Tensor ortho({4, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0});
    worst = std::max(worst, std::abs(loss_normal(ortho, ground).item() - 1.0));

    const auto pts = random_points(24, 9);
    const Tensor exact = points_tensor(pts);
    worst = std::max(worst, std::abs(loss_recon(pts, exact, exact).item()));

    const Tensor y1 = random_tensor({1, 8}, 10);
    worst = std::max(worst, std::abs(loss_cl(y1, random_tensor({1, 8}, 11), 0.1).item()));

    const Tensor yb = random_tensor({5, 8}, 12);
    const Tensor gb = random_tensor({1, 8}, 13);
    worst = std::max(worst, std::abs(loss_cl2g(yb, random_tensor({5, 8}, 14), gb,
                                               random_tensor({1, 8}, 15), 0.1, 0)
                                         .item()));
    detail = "max |identity-case deviation| " + fmt(worst, 15) + " (bound 1e-12)";
    return worst <= 1e-12;
}

bool crit5(std::string& detail) {
    TrainConfig cfg;
    const bool ok = lr_at(0, cfg) == 0.001 && lr_at(20, cfg) == 0.0007 && lr_at(40, cfg) == 0.00049;
    detail = "lr(0) = " + fmt(lr_at(0, cfg), 6) + ", lr(20) = " + fmt(lr_at(20, cfg), 6) +
             ", lr(40) = " + fmt(lr_at(40, cfg), 7) + " (exact)";
    return ok;
}

bool crit6(std::string& detail) {
    const std::uint64_t seed = 42;
    const auto dataset = mixed_clouds(200, 256, seed);
    const CpNetConfig mcfg = CpNetConfig::preset(CpNetConfig::Variant::segmentation, 256);
    TrainConfig tcfg;
    tcfg.epochs = 100;
    tcfg.batch_size = 4;
    tcfg.seed = seed;
    tcfg.loss = LossConfig::preset(LossPreset::segmentation);
    tcfg.loss.batch_size = 4;

    const double t0 = now_s();
    const TrainResult run = pretrain(dataset, mcfg, tcfg);
    const double secs = now_s() - t0;

    const double first = run.epoch_mean_total.front();
    const double last = run.epoch_mean_total.back();

    // Bitwise reproducibility: a fresh 2-epoch run must replay the long run's
    // first two epochs exactly.
    TrainConfig short_cfg = tcfg;
    short_cfg.epochs = 2;
    const TrainResult replay = pretrain(dataset, mcfg, short_cfg);
    bool bitwise = replay.history.size() <= run.history.size();
    for (std::size_t i = 0; bitwise && i < replay.history.size(); ++i)
        bitwise = replay.history[i].loss.total == run.history[i].loss.total &&
                  replay.history[i].loss.cl == run.history[i].loss.cl &&
                  replay.history[i].loss.recon == run.history[i].loss.recon &&
                  replay.history[i].loss.normal == run.history[i].loss.normal;

    detail = "epoch-1 mean " + fmt(first, 2) + " -> epoch-100 mean " + fmt(last, 2) + " (ratio " +
             fmt(last / first, 3) + ", bound 0.5); " + fmt(secs / 60.0, 1) +
             " min (bound 30); bitwise replay " + (bitwise ? "ok" : "FAILED");
    return last <= 0.5 * first && secs < 1800.0 && bitwise;
}

bool crit7(std::string& detail) {
    double trained_acc[3], baseline_acc[3];
    for (int s = 0; s < 3; ++s) {
        const std::uint64_t seed = static_cast<std::uint64_t>(s + 1);
        const ClsTask task = build_cls_task(seed);
        ParamStore random_params;
        init_params(random_params, task.mcfg, substream(seed, "baseline"));
        baseline_acc[s] = cls_probe_accuracy(random_params, task, seed);
        TrainResult run = pretrain(task.train, task.mcfg, cls_train_config(seed, /*dual=*/true));
        trained_acc[s] = cls_probe_accuracy(run.params, task, seed);
    }
    const double med_tr = median3(trained_acc[0], trained_acc[1], trained_acc[2]);
    const double med_gap = median3(trained_acc[0] - baseline_acc[0], trained_acc[1] - baseline_acc[1],
                                   trained_acc[2] - baseline_acc[2]);
    detail = "median trained accuracy " + fmt(med_tr, 4) + " (bound 0.80); median gap over random init " +
             fmt(med_gap * 100.0, 1) + " pts (bound 10); per seed trained {" + fmt(trained_acc[0], 3) +
             ", " + fmt(trained_acc[1], 3) + ", " + fmt(trained_acc[2], 3) + "} baseline {" +
             fmt(baseline_acc[0], 3) + ", " + fmt(baseline_acc[1], 3) + ", " + fmt(baseline_acc[2], 3) +
             "}";
    return med_tr >= 0.80 && med_gap >= 0.10;
}

bool crit8(std::string& detail) {
    double dual_acc[3], basic_acc[3];
    for (int s = 0; s < 3; ++s) {
        const std::uint64_t seed = static_cast<std::uint64_t>(s + 1);
        const ClsTask task = build_cls_task(seed);
        TrainResult dual = pretrain(task.train, task.mcfg, cls_train_config(seed, /*dual=*/true));
        dual_acc[s] = cls_probe_accuracy(dual.params, task, seed);
        TrainResult basic = pretrain(task.train, task.mcfg, cls_train_config(seed, /*dual=*/false));
        basic_acc[s] = cls_probe_accuracy(basic.params, task, seed);
    }
    const double med_dual = median3(dual_acc[0], dual_acc[1], dual_acc[2]);
    const double med_basic = median3(basic_acc[0], basic_acc[1], basic_acc[2]);
    detail = "median probe accuracy: dual " + fmt(med_dual, 4) + " vs basic-only " +
             fmt(med_basic, 4) + " (gap " + fmt((med_dual - med_basic) * 100.0, 1) +
             " pts); per seed dual {" + fmt(dual_acc[0], 3) + ", " + fmt(dual_acc[1], 3) + ", " +
             fmt(dual_acc[2], 3) + "} basic {" + fmt(basic_acc[0], 3) + ", " + fmt(basic_acc[1], 3) +
             ", " + fmt(basic_acc[2], 3) + "}";
    return med_dual >= med_basic;
}

bool crit9(std::string& detail) {
    double gaps[3], trained_miou[3], random_miou[3];
    for (int s = 0; s < 3; ++s) {
        const std::uint64_t seed = static_cast<std::uint64_t>(s + 1);
        const SegTask task = build_seg_task(seed);
        ParamStore random_params;
        init_params(random_params, task.mcfg, substream(seed, "baseline"));
        random_miou[s] = seg_probe_miou(random_params, task, seed);
        TrainConfig tcfg;
        tcfg.epochs = 40;
        tcfg.batch_size = 8;
        tcfg.seed = seed;
        tcfg.loss = LossConfig::preset(LossPreset::segmentation);
        tcfg.loss.batch_size = 8;
        TrainResult run = pretrain(task.clouds, task.mcfg, tcfg);
        trained_miou[s] = seg_probe_miou(run.params, task, seed);
        gaps[s] = trained_miou[s] - random_miou[s];
    }
    const double med_gap = median3(gaps[0], gaps[1], gaps[2]);
    detail = "median instance-mIoU gap " + fmt(med_gap * 100.0, 1) +
             " pts (bound 5); per seed trained {" + fmt(trained_miou[0], 3) + ", " +
             fmt(trained_miou[1], 3) + ", " + fmt(trained_miou[2], 3) + "} random {" +
             fmt(random_miou[0], 3) + ", " + fmt(random_miou[1], 3) + ", " + fmt(random_miou[2], 3) +
             "}";
    return med_gap >= 0.05;
}

bool crit10(std::string& detail) {
    const PointCloud cloud = gen_shape({ShapeKind::torus, 128, 11, 0.01});
    const CpNetConfig mcfg = CpNetConfig::preset(CpNetConfig::Variant::segmentation, 128);
    ParamStore store;
    init_params(store, mcfg, 3);
    const ForwardOptions opts{BnMode::train_pure, 0.9};

    Tape tape;
    ParamBinder binder(tape, store);
    const BranchResult base = forward_branch(binder, mcfg, cloud.points, 128, opts);

    double worst_g = 0.0;
    Rng rng(substream(99, "perm"));
    for (int rep = 0; rep < 20; ++rep) {
        PointCloud shuffled = cloud;
        for (std::size_t i = shuffled.points.size(); i > 1; --i)
            std::swap(shuffled.points[i - 1], shuffled.points[rng.below(i)]);
        Tape t2;
        ParamBinder b2(t2, store);
        const BranchResult perm = forward_branch(b2, mcfg, shuffled.points, 128, opts);
        for (int c = 0; c < base.g.size(); ++c)
            worst_g = std::max(worst_g, std::abs(base.g.at(c) - perm.g.at(c)));
    }

    // Assistant equals basic at zero perturbation.
    const DisentangledCloud d = disentangle(cloud, 16);
    const PerturbedCloud p = perturb(d, Manner::H, 0.0, 5);
    Tape t3;
    ParamBinder b3(t3, store);
    const BranchOutputs outs = dual_forward(cloud, p, b3, mcfg, opts);
    const RowAlignment align = align_rows(outs);
    double worst_y = 0.0;
    for (std::size_t k = 0; k < align.basic_rows.size(); ++k)
        for (int c = 0; c < outs.y.dim(1); ++c)
            worst_y = std::max(worst_y, std::abs(outs.y.at(align.basic_rows[k], c) -
                                                 outs.y_prime.at(align.assist_rows[k], c)));
    for (int c = 0; c < outs.g.size(); ++c)
        worst_y = std::max(worst_y, std::abs(outs.g.at(c) - outs.g_prime.at(c)));

    detail = "max |G(perm) - G| " + fmt(worst_g, 14) + " over 20 permutations; max |Y' - Y| at std 0 " +
             fmt(worst_y, 14) + " (bounds 1e-9)";
    return worst_g < 1e-9 && worst_y < 1e-9 && align.basic_rows.size() == 128;
}

bool crit11(std::string& detail) {
    const fs::path dir = fs::temp_directory_path() / "cpnet_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);

    // (a) File-format round trips: second save byte-identical.
    const PointCloud cloud = gen_shape({ShapeKind::barbell, 96, 5, 0.0});
    for (const CloudFormat fmt : {CloudFormat::xyz, CloudFormat::off, CloudFormat::ply_ascii}) {
        const std::string p1 = (dir / "rt1").string();
        const std::string p2 = (dir / "rt2").string();
        save_cloud(cloud, p1, fmt);
        save_cloud(load_cloud(p1, fmt), p2, fmt);
        if (slurp(p1) != slurp(p2)) {
            detail = "file round trip not byte-identical";
            return false;
        }
    }

    // (b) Checkpoint resume reproduces the uninterrupted run.
    const auto data = mixed_clouds(12, 64, 17);
    CpNetConfig mcfg;
    mcfg.variant = CpNetConfig::Variant::segmentation;
    mcfg.points_per_level = {64, 32, 16};
    mcfg.channels_per_level = {8, 12, 16};
    mcfg.k_neighbors = 6;
    mcfg.head_width = 8;
    mcfg.weight_mlp_hidden = 6;
    mcfg.fold_hidden = 16;
    mcfg.normal_hidden = 12;
    TrainConfig tcfg;
    tcfg.epochs = 6;
    tcfg.batch_size = 4;
    tcfg.seed = 23;
    tcfg.k_graph = 8;
    const TrainResult straight = pretrain(data, mcfg, tcfg);
    TrainConfig half_cfg = tcfg;
    half_cfg.epochs = 3;
    const TrainResult half = pretrain(data, mcfg, half_cfg);
    Checkpoint ckpt;
    ckpt.params = half.params.clone();
    ckpt.epoch = 3;
    ckpt.config_fingerprint = train_fingerprint(mcfg, tcfg, 64);
    ckpt.history = half.history;
    const std::string ckpt_path = (dir / "resume.ckpt").string();
    save_checkpoint(ckpt, ckpt_path);
    const Checkpoint loaded = load_checkpoint(ckpt_path);
    const TrainResult resumed = pretrain(data, mcfg, tcfg, &loaded);
    if (resumed.history.size() != straight.history.size() ||
        resumed.params.serialize() != straight.params.serialize()) {
        detail = "checkpoint resume diverged from the straight-through run";
        return false;
    }
    for (std::size_t i = 0; i < straight.history.size(); ++i)
        if (resumed.history[i].loss.total != straight.history[i].loss.total) {
            detail = "resumed step " + std::to_string(i) + " differs";
            return false;
        }

    // (c) All nine perturbation manners train 20 epochs with finite losses.
    for (char m = 'A'; m <= 'I'; ++m) {
        TrainConfig manner_cfg = tcfg;
        manner_cfg.epochs = 20;
        manner_cfg.manner = manner_from_char(m);
        const TrainResult run = pretrain(data, mcfg, manner_cfg);
        for (const StepRecord& rec : run.history)
            if (!std::isfinite(rec.loss.total)) {
                detail = std::string("manner ") + m + " produced a non-finite loss";
                return false;
            }
    }

    // (d) CLI surface: exit codes and determinism.
    const std::string out1 = (dir / "gen1").string();
    const std::string out2 = (dir / "gen2").string();
    if (run_cli("gen --kind torus --n 96 --count 3 --seed 9 --out " + out1 + " >/dev/null") != 0 ||
        run_cli("gen --kind torus --n 96 --count 3 --seed 9 --out " + out2 + " >/dev/null") != 0) {
        detail = "cli gen failed";
        return false;
    }
    for (const char* f : {"cloud_0000.xyz", "cloud_0002.parts", "index.json"})
        if (slurp(out1 + "/" + f) != slurp(out2 + "/" + f) || slurp(out1 + "/" + f).empty()) {
            detail = std::string("cli gen not deterministic for ") + f;
            return false;
        }
    if (run_cli("gen --kind sphere --n 4 --count 1 --out " + (dir / "bad").string() +
                " 2>/dev/null") != 2) {
        detail = "gen with n below minimum must exit 2";
        return false;
    }
    if (run_cli("decompose --in " + (dir / "missing.xyz").string() + " 2>/dev/null") != 3) {
        detail = "decompose on a missing input must exit 3";
        return false;
    }
    const std::string in_cloud = out1 + "/cloud_0000.xyz";
    if (run_cli("decompose --in " + in_cloud + " --k 8 --out-contour " + (dir / "s.xyz").string() +
                " --out-content " + (dir / "g.xyz").string() + " >/dev/null") != 0) {
        detail = "decompose failed";
        return false;
    }
    if (load_cloud((dir / "s.xyz").string(), CloudFormat::xyz).points.size() != 48 ||
        load_cloud((dir / "g.xyz").string(), CloudFormat::xyz).points.size() != 48) {
        detail = "decompose halves are not N/2";
        return false;
    }
    if (run_cli("perturb --in " + in_cloud + " --manner Z --out " + (dir / "z.xyz").string() +
                " 2>/dev/null") != 2) {
        detail = "perturb with an unknown manner must exit 2";
        return false;
    }
    if (run_cli("perturb --in " + in_cloud + " --manner H --std 0 --k 8 --out " +
                (dir / "p0.xyz").string() + " >/dev/null") != 0) {
        detail = "perturb failed";
        return false;
    }
    const PointCloud original = load_cloud(in_cloud, CloudFormat::xyz);
    const PointCloud zero_std = load_cloud((dir / "p0.xyz").string(), CloudFormat::xyz);
    std::vector<Vec3> a = original.points, b = zero_std.points;
    auto lex = [](const Vec3& u, const Vec3& v) { return lex_less(u, v); };
    std::sort(a.begin(), a.end(), lex);
    std::sort(b.begin(), b.end(), lex);
    for (std::size_t i = 0; i < a.size(); ++i)
        if (norm(a[i] - b[i]) > 1e-8) {
            detail = "zero-std perturbation changed the point set";
            return false;
        }

    // CL2G with batch 1 warns and still trains.
    const std::string conf_path = (dir / "b1.conf").string();
    {
        std::ofstream conf(conf_path);
        conf << "seed = 3\nout_dir = " << (dir / "b1_run").string()
             << "\ndata.kinds = sphere\ndata.count = 4\ndata.n_points = 64\n"
             << "model.variant = classification\nmodel.points = 64,32,16\n"
             << "model.channels = 8,12,16\nloss.preset = classification\n"
             << "train.epochs = 1\ntrain.batch_size = 1\n";
    }
    const std::string stderr_path = (dir / "b1.stderr").string();
    if (run_cli("pretrain --config " + conf_path + " >/dev/null 2>" + stderr_path) != 0) {
        detail = "pretrain with B=1 failed";
        return false;
    }
    if (slurp(stderr_path).find("warning") == std::string::npos) {
        detail = "no warning line for CL2G with batch size 1";
        return false;
    }

    detail = "round trips byte-exact, resume step-exact, 9 manners finite over 20 epochs, CLI codes";
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
    if (wanted.empty())
        for (int i = 1; i <= 11; ++i) wanted.push_back(i);

    const struct {
        int id;
        const char* name;
        bool (*fn)(std::string&);
    } criteria[] = {
        {1, "gradient integrity", crit1},
        {2, "oracle equivalence", crit2},
        {3, "disentangle correctness", crit3},
        {4, "loss identity cases", crit4},
        {5, "schedule fidelity", crit5},
        {6, "training convergence", crit6},
        {7, "representation quality", crit7},
        {8, "dual-branch benefit", crit8},
        {9, "segmentation analogue", crit9},
        {10, "set-function property", crit10},
        {11, "plumbing", crit11},
    };

    int failures = 0;
    for (const int id : wanted) {
        bool found = false;
        for (const auto& c : criteria) {
            if (c.id != id) continue;
            found = true;
            std::string detail;
            bool ok = false;
            try {
                ok = c.fn(detail);
            } catch (const std::exception& e) {
                detail = std::string("exception: ") + e.what();
            }
            std::printf("[%s] criterion %d (%s): %s\n", ok ? "PASS" : "FAIL", c.id, c.name,
                        detail.c_str());
            std::fflush(stdout);
            if (!ok) ++failures;
        }
        if (!found) {
            std::printf("[FAIL] criterion %d: unknown criterion id\n", id);
            ++failures;
        }
    }
    return failures == 0 ? 0 : 1;
}
