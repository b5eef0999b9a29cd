#include "cpnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "cpnet/errors.hpp"
#include "cpnet/rng.hpp"

namespace cpnet {

namespace {

using nlohmann::ordered_json;

std::vector<PointCloud> resample_to_common_size(const std::vector<PointCloud>& dataset) {
    std::size_t n_min = dataset[0].points.size();
    bool uniform = true;
    for (const PointCloud& c : dataset) {
        if (c.points.size() != n_min) uniform = false;
        n_min = std::min(n_min, c.points.size());
    }
    if (uniform) return dataset;
    std::vector<PointCloud> out;
    out.reserve(dataset.size());
    for (const PointCloud& c : dataset) {
        const std::vector<int> keep = fps(c.points, static_cast<int>(n_min));
        PointCloud r;
        r.id = c.id;
        for (const int i : keep) r.points.push_back(c.points[static_cast<std::size_t>(i)]);
        if (c.normals) {
            std::vector<Vec3> nn;
            for (const int i : keep) nn.push_back((*c.normals)[static_cast<std::size_t>(i)]);
            r.normals = std::move(nn);
        }
        if (c.part_labels) {
            std::vector<int> ll;
            for (const int i : keep) ll.push_back((*c.part_labels)[static_cast<std::size_t>(i)]);
            r.part_labels = std::move(ll);
        }
        out.push_back(std::move(r));
    }
    return out;
}

ordered_json step_json(const StepRecord& r) {
    ordered_json j;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["lr"] = r.lr;
    j["cg"] = r.loss.cg;
    j["cl"] = r.loss.cl;
    j["cl2g"] = r.loss.cl2g;
    j["recon"] = r.loss.recon;
    j["normal"] = r.loss.normal;
    j["total"] = r.loss.total;
    return j;
}

// Gradient-descent multinomial logistic regression. Features are centered
// and divided by one global scale (pooled std); per-dimension standardization
// would blow numerically tiny dimensions up to unit size, which turns a
// frozen random encoder into an artificially strong baseline. The linear-SVM
// protocol this probe stands in for consumes raw features.
struct LogisticProbe {
    int dim = 0, classes = 0;
    std::vector<double> mean;  // per-dim centering from the train split
    double scale = 1.0;        // single pooled scale
    std::vector<double> w;     // [dim, classes]
    std::vector<double> b;     // [classes]

    void fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y, int n_classes,
             int iterations = 2400, double lr = 1.0, double l2 = 1e-5) {
        const int n = static_cast<int>(x.size());
        dim = static_cast<int>(x[0].size());
        classes = n_classes;
        mean.assign(static_cast<std::size_t>(dim), 0.0);
        for (const auto& row : x)
            for (int d = 0; d < dim; ++d) mean[static_cast<std::size_t>(d)] += row[static_cast<std::size_t>(d)];
        for (double& m : mean) m /= n;
        double pooled = 0.0;
        for (const auto& row : x)
            for (int d = 0; d < dim; ++d) {
                const double c = row[static_cast<std::size_t>(d)] - mean[static_cast<std::size_t>(d)];
                pooled += c * c;
            }
        scale = std::max(std::sqrt(pooled / (static_cast<double>(n) * dim)), 1e-12);

        std::vector<double> xs(static_cast<std::size_t>(n) * dim);
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < dim; ++d)
                xs[static_cast<std::size_t>(i) * dim + d] =
                    (x[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] - mean[static_cast<std::size_t>(d)]) /
                    scale;

        w.assign(static_cast<std::size_t>(dim) * classes, 0.0);
        b.assign(static_cast<std::size_t>(classes), 0.0);
        std::vector<double> logits(static_cast<std::size_t>(classes));
        std::vector<double> gw(w.size());
        std::vector<double> gb(b.size());
        for (int it = 0; it < iterations; ++it) {
            std::fill(gw.begin(), gw.end(), 0.0);
            std::fill(gb.begin(), gb.end(), 0.0);
            for (int i = 0; i < n; ++i) {
                const double* xi = &xs[static_cast<std::size_t>(i) * dim];
                double m = -1e300;
                for (int c = 0; c < classes; ++c) {
                    double v = b[static_cast<std::size_t>(c)];
                    for (int d = 0; d < dim; ++d) v += xi[d] * w[static_cast<std::size_t>(d) * classes + c];
                    logits[static_cast<std::size_t>(c)] = v;
                    m = std::max(m, v);
                }
                double z = 0.0;
                for (int c = 0; c < classes; ++c) z += std::exp(logits[static_cast<std::size_t>(c)] - m);
                for (int c = 0; c < classes; ++c) {
                    const double p = std::exp(logits[static_cast<std::size_t>(c)] - m) / z;
                    const double err = p - (y[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0);
                    gb[static_cast<std::size_t>(c)] += err;
                    for (int d = 0; d < dim; ++d)
                        gw[static_cast<std::size_t>(d) * classes + c] += err * xi[d];
                }
            }
            const double inv_n = 1.0 / n;
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * (gw[j] * inv_n + l2 * w[j]);
            for (std::size_t j = 0; j < b.size(); ++j) b[j] -= lr * gb[j] * inv_n;
        }
    }

    int predict(const double* row) const {
        int best = 0;
        double bv = -1e300;
        for (int c = 0; c < classes; ++c) {
            double v = b[static_cast<std::size_t>(c)];
            for (int d = 0; d < dim; ++d)
                v += (row[d] - mean[static_cast<std::size_t>(d)]) / scale *
                     w[static_cast<std::size_t>(d) * classes + c];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        return best;
    }
};

// Stratified train/test split over items with integer strata labels.
void stratified_split(const std::vector<int>& strata, double train_fraction, std::uint64_t seed,
                      std::vector<int>& train_idx, std::vector<int>& test_idx) {
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ConfigError("train_fraction must lie in (0, 1)");
    std::map<int, std::vector<int>> groups;
    for (std::size_t i = 0; i < strata.size(); ++i)
        groups[strata[i]].push_back(static_cast<int>(i));
    Rng rng(substream(seed, "probe-split"));
    for (auto& [label, idx] : groups) {
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        const int n = static_cast<int>(idx.size());
        int n_train = static_cast<int>(std::lround(train_fraction * n));
        n_train = std::clamp(n_train, 1, std::max(1, n - 1));
        for (int i = 0; i < n; ++i)
            (i < n_train ? train_idx : test_idx).push_back(idx[static_cast<std::size_t>(i)]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
}

void put_u32v(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void put_u64v(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void put_f64v(std::vector<std::uint8_t>& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64v(out, bits);
}

constexpr char kCkptMagic[9] = "CPNETCK1";

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
    if (lr_period < 1 || bn_period < 1) throw ConfigError("schedule periods must be >= 1");
    if (noise_std < 0.0) throw ConfigError("noise_std must be nonnegative");
    loss.validate();
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ConfigError("epoch must be >= 0");
    return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_period));
}

double bn_momentum_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ConfigError("epoch must be >= 0");
    const double m = cfg.bn_momentum0 * std::pow(cfg.bn_decay, static_cast<double>(epoch / cfg.bn_period));
    return std::max(m, cfg.bn_floor);
}

std::uint64_t train_fingerprint(const CpNetConfig& mcfg, const TrainConfig& tcfg, int n_points) {
    std::string s = "v1|variant=" +
                    std::to_string(static_cast<int>(mcfg.variant)) + "|pts=";
    for (const int p : mcfg.points_per_level) s += std::to_string(p) + ",";
    s += "|ch=";
    for (const int c : mcfg.channels_per_level) s += std::to_string(c) + ",";
    s += "|k=" + std::to_string(mcfg.k_neighbors) + "|head=" + std::to_string(mcfg.head_width);
    s += "|bn=" + std::to_string(mcfg.use_batch_norm) + "|nh=" + std::to_string(mcfg.normal_head);
    s += "|n=" + std::to_string(n_points);
    s += "|seed=" + std::to_string(tcfg.seed) + "|b=" + std::to_string(tcfg.batch_size);
    s += "|manner=" + std::string(1, to_char(tcfg.manner)) + "|std=" + std::to_string(tcfg.noise_std);
    s += "|jc=" + std::to_string(tcfg.jitter_count) + "|dual=" + std::to_string(tcfg.dual_branch);
    s += "|kg=" + std::to_string(tcfg.k_graph) + "|tau=" + std::to_string(tcfg.loss.tau);
    s += "|terms=";
    for (const LossTerm t : tcfg.loss.enabled) s += std::to_string(static_cast<int>(t)) + ",";
    return fnv1a(s);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCkptMagic, kCkptMagic + 8);
    put_u32v(out, 1);  // version
    put_u64v(out, ckpt.config_fingerprint);
    put_u32v(out, static_cast<std::uint32_t>(ckpt.epoch));
    const auto params = ckpt.params.serialize();
    put_u64v(out, params.size());
    out.insert(out.end(), params.begin(), params.end());
    put_u64v(out, ckpt.history.size());
    for (const StepRecord& r : ckpt.history) {
        put_u32v(out, static_cast<std::uint32_t>(r.epoch));
        put_u32v(out, static_cast<std::uint32_t>(r.step));
        put_f64v(out, r.lr);
        put_f64v(out, r.loss.cg);
        put_f64v(out, r.loss.cl);
        put_f64v(out, r.loss.cl2g);
        put_f64v(out, r.loss.recon);
        put_f64v(out, r.loss.normal);
        put_f64v(out, r.loss.total);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileNotFound(path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    std::size_t at = 0;
    auto need = [&](std::size_t n) {
        if (bytes.size() - at < n) throw VersionMismatch("truncated checkpoint: " + path);
    };
    auto get_u32 = [&]() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
        at += 4;
        return v;
    };
    auto get_u64 = [&]() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
        at += 8;
        return v;
    };
    auto get_f64 = [&]() {
        const std::uint64_t bits = get_u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    };

    need(8);
    if (std::memcmp(bytes.data(), kCkptMagic, 8) != 0)
        throw VersionMismatch("not a checkpoint file: " + path);
    at = 8;
    const std::uint32_t version = get_u32();
    if (version != 1) throw VersionMismatch("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.config_fingerprint = get_u64();
    ckpt.epoch = static_cast<int>(get_u32());
    const std::uint64_t params_len = get_u64();
    need(params_len);
    ckpt.params = ParamStore::deserialize(bytes.data() + at, params_len);
    at += params_len;
    const std::uint64_t n_hist = get_u64();
    for (std::uint64_t i = 0; i < n_hist; ++i) {
        StepRecord r;
        r.epoch = static_cast<int>(get_u32());
        r.step = static_cast<int>(get_u32());
        r.lr = get_f64();
        r.loss.cg = get_f64();
        r.loss.cl = get_f64();
        r.loss.cl2g = get_f64();
        r.loss.recon = get_f64();
        r.loss.normal = get_f64();
        r.loss.total = get_f64();
        ckpt.history.push_back(r);
    }
    return ckpt;
}

TrainResult pretrain(const std::vector<PointCloud>& dataset_in, const CpNetConfig& mcfg,
                     const TrainConfig& tcfg, const Checkpoint* resume) {
    tcfg.validate();
    if (dataset_in.empty()) throw ConfigError("pretrain: empty dataset");
    const std::vector<PointCloud> dataset = resample_to_common_size(dataset_in);
    const int n_points = static_cast<int>(dataset[0].points.size());
    mcfg.validate(n_points);
    if (tcfg.loss.has(LossTerm::normal))
        for (const PointCloud& c : dataset)
            if (!c.normals)
                throw ConfigError("normal loss enabled but cloud '" + c.id + "' has no normals");
    if (tcfg.loss.has(LossTerm::cl2g) && tcfg.batch_size == 1)
        std::cerr << "warning: CL2G enabled with batch size 1; the term is identically zero\n";

    const std::uint64_t fingerprint = train_fingerprint(mcfg, tcfg, n_points);

    TrainResult result;
    int start_epoch = 0;
    if (resume) {
        if (resume->config_fingerprint != fingerprint)
            throw ConfigError("checkpoint does not match this configuration");
        result.params = resume->params.clone();
        result.history = resume->history;
        start_epoch = resume->epoch;
    } else {
        init_params(result.params, mcfg, tcfg.seed);
    }

    // Contour/content splits never change per cloud; compute once.
    std::vector<DisentangledCloud> splits;
    splits.reserve(dataset.size());
    for (const PointCloud& c : dataset) splits.push_back(disentangle(c, tcfg.k_graph));

    const bool out_files = !tcfg.out_dir.empty();
    std::ofstream metrics;
    std::ofstream epochs_csv;
    if (out_files) {
        std::filesystem::create_directories(tcfg.out_dir);
        const auto mode = resume ? std::ios::app : std::ios::trunc;
        metrics.open(tcfg.out_dir + "/metrics.jsonl", mode);
        epochs_csv.open(tcfg.out_dir + "/epochs.csv", mode);
        if (!metrics || !epochs_csv) throw IoError("cannot open metrics files in " + tcfg.out_dir);
        if (!resume) epochs_csv << "epoch,lr,cg,cl,cl2g,recon,normal,total\n";
    }

    for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, tcfg);
        const double bn_m = bn_momentum_at(epoch, tcfg);
        const AdamHyper hyper{lr, 0.9, 0.999, 1e-8};

        std::vector<int> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(substream(tcfg.seed, "data", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        LossBreakdown epoch_sum;
        int steps_in_epoch = 0;

        for (std::size_t batch_start = 0; batch_start < order.size();
             batch_start += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t batch_end =
                std::min(order.size(), batch_start + static_cast<std::size_t>(tcfg.batch_size));
            const int b_actual = static_cast<int>(batch_end - batch_start);

            Tape tape;
            ParamBinder binder(tape, result.params);
            const ForwardOptions opts{BnMode::train_update, bn_m};

            std::vector<Tensor> sample_terms;
            std::vector<Tensor> cl2g_y, cl2g_yp, cl2g_g, cl2g_gp;
            LossBreakdown sums;

            for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
                const int ci = order[bi];
                const PointCloud& cloud = dataset[static_cast<std::size_t>(ci)];
                const DisentangledCloud& split = splits[static_cast<std::size_t>(ci)];
                const std::uint64_t pseed = substream(tcfg.seed, "noise",
                                                      static_cast<std::uint64_t>(epoch),
                                                      static_cast<std::uint64_t>(ci));

                if (tcfg.dual_branch) {
                    const PerturbedCloud perturbed =
                        tcfg.jitter_count >= 0
                            ? jitter_count_variant(split, tcfg.jitter_count, tcfg.noise_std, pseed,
                                                   tcfg.noise_clip)
                            : perturb(split, tcfg.manner, tcfg.noise_std, pseed, tcfg.noise_clip);
                    BranchOutputs outs = dual_forward(cloud, perturbed, binder, mcfg, opts);

                    RowAlignment align;
                    if (tcfg.loss.has(LossTerm::cl) || tcfg.loss.has(LossTerm::cl2g)) {
                        align = align_rows(outs);
                        if (align.basic_rows.empty())
                            throw SizeMismatch("no corresponding points between branches");
                    }
                    if (tcfg.loss.has(LossTerm::cg)) {
                        Tensor t = loss_cg(outs.g, outs.g_prime, tcfg.loss.normalize_logits);
                        sums.cg += t.item();
                        sample_terms.push_back(t);
                    }
                    if (tcfg.loss.has(LossTerm::cl)) {
                        Tensor t = loss_cl(gather_rows(outs.y, align.basic_rows),
                                           gather_rows(outs.y_prime, align.assist_rows),
                                           tcfg.loss.tau, tcfg.loss.normalize_logits,
                                           tcfg.loss.symmetric_cl);
                        sums.cl += t.item();
                        sample_terms.push_back(t);
                    }
                    if (tcfg.loss.has(LossTerm::cl2g)) {
                        cl2g_y.push_back(gather_rows(outs.y, align.basic_rows));
                        cl2g_yp.push_back(gather_rows(outs.y_prime, align.assist_rows));
                        cl2g_g.push_back(outs.g);
                        cl2g_gp.push_back(outs.g_prime);
                    }
                    if (tcfg.loss.has(LossTerm::recon)) {
                        Tensor t = loss_recon(cloud.points, outs.recon, outs.recon_prime);
                        sums.recon += t.item();
                        sample_terms.push_back(t);
                    }
                    if (tcfg.loss.has(LossTerm::normal)) {
                        std::vector<Vec3> ground;
                        for (const int i : outs.normals_orig_index)
                            ground.push_back((*cloud.normals)[static_cast<std::size_t>(i)]);
                        Tensor t = loss_normal(outs.normals, ground);
                        sums.normal += t.item();
                        sample_terms.push_back(t);
                    }
                } else {
                    // Basic branch alone: reconstruction (+ normals) on the
                    // original cloud; consistency terms do not apply.
                    BranchResult basic = forward_branch(binder, mcfg, cloud.points, n_points, opts);
                    if (tcfg.loss.has(LossTerm::recon)) {
                        Tensor t = chamfer_to(basic.recon, cloud.points);
                        sums.recon += t.item();
                        sample_terms.push_back(t);
                    }
                    if (tcfg.loss.has(LossTerm::normal)) {
                        std::vector<Vec3> ground;
                        for (const int i : basic.y_input_index)
                            ground.push_back((*cloud.normals)[static_cast<std::size_t>(i)]);
                        Tensor t = loss_normal(basic.normals, ground);
                        sums.normal += t.item();
                        sample_terms.push_back(t);
                    }
                }
            }

            if (tcfg.loss.has(LossTerm::cl2g) && tcfg.dual_branch) {
                Tensor g_stack = cl2g_g.size() == 1 ? cl2g_g[0] : concat(cl2g_g, 0);
                Tensor gp_stack = cl2g_gp.size() == 1 ? cl2g_gp[0] : concat(cl2g_gp, 0);
                for (int s = 0; s < b_actual; ++s) {
                    Tensor t = loss_cl2g(cl2g_y[static_cast<std::size_t>(s)],
                                         cl2g_yp[static_cast<std::size_t>(s)], g_stack, gp_stack,
                                         tcfg.loss.tau, s, tcfg.loss.normalize_logits);
                    sums.cl2g += t.item();
                    sample_terms.push_back(t);
                }
            }

            if (sample_terms.empty()) throw ConfigError("no loss terms produced for this batch");
            Tensor total = sample_terms[0];
            for (std::size_t i = 1; i < sample_terms.size(); ++i)
                total = add(total, sample_terms[i]);

            StepRecord rec;
            rec.epoch = epoch;
            rec.step = steps_in_epoch;
            rec.lr = lr;
            const double inv_b = 1.0 / b_actual;
            rec.loss.cg = sums.cg * inv_b;
            rec.loss.cl = sums.cl * inv_b;
            rec.loss.cl2g = sums.cl2g * inv_b;
            rec.loss.recon = sums.recon * inv_b;
            rec.loss.normal = sums.normal * inv_b;
            rec.loss.total = rec.loss.cg + rec.loss.cl + rec.loss.cl2g + rec.loss.recon +
                             rec.loss.normal;
            if (!std::isfinite(rec.loss.total))
                throw NonFiniteLoss(static_cast<long>(result.history.size()),
                                    "epoch " + std::to_string(epoch) + " step " +
                                        std::to_string(steps_in_epoch));

            const GradStore gs = tape.backward(total);
            adam_step(result.params, binder.gradients(gs), hyper);

            result.history.push_back(rec);
            if (out_files) metrics << step_json(rec).dump() << "\n";
            epoch_sum.cg += rec.loss.cg;
            epoch_sum.cl += rec.loss.cl;
            epoch_sum.cl2g += rec.loss.cl2g;
            epoch_sum.recon += rec.loss.recon;
            epoch_sum.normal += rec.loss.normal;
            epoch_sum.total += rec.loss.total;
            ++steps_in_epoch;
        }

        const double inv_steps = steps_in_epoch > 0 ? 1.0 / steps_in_epoch : 0.0;
        result.epoch_mean_total.push_back(epoch_sum.total * inv_steps);
        if (out_files) {
            epochs_csv << epoch << ',' << lr << ',' << epoch_sum.cg * inv_steps << ','
                       << epoch_sum.cl * inv_steps << ',' << epoch_sum.cl2g * inv_steps << ','
                       << epoch_sum.recon * inv_steps << ',' << epoch_sum.normal * inv_steps << ','
                       << epoch_sum.total * inv_steps << "\n";
        }

        if (out_files && tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0 &&
            epoch + 1 < tcfg.epochs) {
            Checkpoint ckpt;
            ckpt.params = result.params.clone();
            ckpt.epoch = epoch + 1;
            ckpt.config_fingerprint = fingerprint;
            ckpt.history = result.history;
            save_checkpoint(ckpt, tcfg.out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) +
                                      ".ckpt");
        }
    }

    if (out_files) {
        Checkpoint ckpt;
        ckpt.params = result.params.clone();
        ckpt.epoch = tcfg.epochs;
        ckpt.config_fingerprint = fingerprint;
        ckpt.history = result.history;
        save_checkpoint(ckpt, tcfg.out_dir + "/checkpoint_final.ckpt");
    }
    return result;
}

std::vector<std::vector<double>> extract_features_classify(ParamStore& store,
                                                           const CpNetConfig& cfg,
                                                           const std::vector<PointCloud>& clouds) {
    std::vector<std::vector<double>> out;
    out.reserve(clouds.size());
    for (const PointCloud& c : clouds) {
        Tape tape;
        ParamBinder binder(tape, store);
        const ForwardOptions opts{BnMode::eval, 0.0};
        BranchResult r = forward_branch(binder, cfg, c.points, static_cast<int>(c.points.size()),
                                        opts);
        out.push_back(r.g.vec());
    }
    return out;
}

std::vector<Tensor> extract_features_segment(ParamStore& store, const CpNetConfig& cfg,
                                             const std::vector<PointCloud>& clouds) {
    if (cfg.variant != CpNetConfig::Variant::segmentation)
        throw VariantMismatch("per-point features require the segmentation variant");
    std::vector<Tensor> out;
    out.reserve(clouds.size());
    for (const PointCloud& c : clouds) {
        Tape tape;
        ParamBinder binder(tape, store);
        const ForwardOptions opts{BnMode::eval, 0.0};
        BranchResult r = forward_branch(binder, cfg, c.points, static_cast<int>(c.points.size()),
                                        opts);
        out.push_back(r.y.detached());
    }
    return out;
}

std::string ProbeReport::to_json() const {
    ordered_json j;
    j["task"] = task;
    if (task == "classify") {
        j["accuracy"] = accuracy;
    } else {
        j["instance_miou"] = instance_miou;
        j["category_miou"] = category_miou;
    }
    j["train_fraction"] = train_fraction;
    ordered_json pc = ordered_json::object();
    for (const auto& [k, v] : per_class) pc[k] = v;
    j["per_class"] = pc;
    return j.dump(2);
}

ProbeReport linear_probe_classify(const std::vector<std::vector<double>>& features,
                                  const std::vector<int>& labels, double train_fraction,
                                  std::uint64_t seed) {
    if (features.size() != labels.size() || features.empty())
        throw ShapeMismatch("features and labels must align");
    const int n_classes = 1 + *std::max_element(labels.begin(), labels.end());
    std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) throw DegenerateLabels("classification probe needs >= 2 classes");

    std::vector<int> train_idx, test_idx;
    stratified_split(labels, train_fraction, seed, train_idx, test_idx);

    std::vector<std::vector<double>> xtr;
    std::vector<int> ytr;
    for (const int i : train_idx) {
        xtr.push_back(features[static_cast<std::size_t>(i)]);
        ytr.push_back(labels[static_cast<std::size_t>(i)]);
    }
    LogisticProbe probe;
    probe.fit(xtr, ytr, n_classes);

    ProbeReport rep;
    rep.task = "classify";
    rep.train_fraction = train_fraction;
    std::map<int, std::pair<int, int>> per_class;  // label -> (correct, total)
    int correct = 0;
    for (const int i : test_idx) {
        const int pred = probe.predict(features[static_cast<std::size_t>(i)].data());
        auto& [c_ok, c_all] = per_class[labels[static_cast<std::size_t>(i)]];
        ++c_all;
        if (pred == labels[static_cast<std::size_t>(i)]) {
            ++c_ok;
            ++correct;
        }
    }
    rep.accuracy = test_idx.empty() ? 0.0 : static_cast<double>(correct) / test_idx.size();
    for (const auto& [label, counts] : per_class)
        rep.per_class["class_" + std::to_string(label)] =
            counts.second ? static_cast<double>(counts.first) / counts.second : 0.0;
    return rep;
}

GradCheckResult dual_branch_grad_check(const ToyGradCheckSpec& spec) {
    CpNetConfig mcfg;
    mcfg.variant = CpNetConfig::Variant::segmentation;
    mcfg.points_per_level = {spec.n_points, spec.n_points / 2, spec.n_points / 4,
                             spec.n_points / 8};
    mcfg.channels_per_level = {16, 32, 48, 64};
    mcfg.k_neighbors = 8;
    mcfg.head_width = 16;
    mcfg.weight_mlp_hidden = 8;
    mcfg.fold_hidden = 32;
    mcfg.normal_hidden = 32;
    mcfg.normal_head = true;
    mcfg.use_batch_norm = true;

    const ShapeKind kinds[3] = {ShapeKind::sphere, ShapeKind::torus, ShapeKind::cube};
    std::vector<PointCloud> clouds;
    std::vector<PerturbedCloud> perturbed;
    for (int b = 0; b < spec.batch; ++b) {
        ShapeSpec ss;
        ss.kind = kinds[b % 3];
        ss.n_points = spec.n_points;
        ss.seed = substream(spec.seed, "gradcheck-cloud", static_cast<std::uint64_t>(b));
        clouds.push_back(gen_shape(ss));
        const DisentangledCloud split = disentangle(clouds.back(), 8);
        perturbed.push_back(perturb(split, Manner::H, 0.02,
                                    substream(spec.seed, "gradcheck-noise",
                                              static_cast<std::uint64_t>(b))));
    }

    ParamStore store;
    init_params(store, mcfg, spec.seed);
    const LossConfig lcfg = [] {
        LossConfig c = LossConfig::preset(LossPreset::all);
        return c;
    }();

    const auto loss_fn = [&](Tape& tape, ParamBinder& binder) {
        (void)tape;
        const ForwardOptions opts{BnMode::train_pure, 0.9};
        std::vector<Tensor> terms;
        std::vector<Tensor> ys, yps, gs, gps;
        for (int b = 0; b < spec.batch; ++b) {
            BranchOutputs outs =
                dual_forward(clouds[static_cast<std::size_t>(b)],
                             perturbed[static_cast<std::size_t>(b)], binder, mcfg, opts);
            const RowAlignment align = align_rows(outs);
            terms.push_back(loss_cg(outs.g, outs.g_prime));
            terms.push_back(loss_cl(gather_rows(outs.y, align.basic_rows),
                                    gather_rows(outs.y_prime, align.assist_rows), lcfg.tau));
            terms.push_back(loss_recon(clouds[static_cast<std::size_t>(b)].points, outs.recon,
                                       outs.recon_prime));
            std::vector<Vec3> ground;
            for (const int i : outs.normals_orig_index)
                ground.push_back(
                    (*clouds[static_cast<std::size_t>(b)].normals)[static_cast<std::size_t>(i)]);
            terms.push_back(loss_normal(outs.normals, ground));
            ys.push_back(gather_rows(outs.y, align.basic_rows));
            yps.push_back(gather_rows(outs.y_prime, align.assist_rows));
            gs.push_back(outs.g);
            gps.push_back(outs.g_prime);
        }
        Tensor g_stack = gs.size() == 1 ? gs[0] : concat(gs, 0);
        Tensor gp_stack = gps.size() == 1 ? gps[0] : concat(gps, 0);
        for (int b = 0; b < spec.batch; ++b)
            terms.push_back(loss_cl2g(ys[static_cast<std::size_t>(b)],
                                      yps[static_cast<std::size_t>(b)], g_stack, gp_stack,
                                      lcfg.tau, b));
        Tensor total = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
        return total;
    };

    GradCheckOptions opts;
    opts.h = spec.h;
    opts.sample = spec.sample;
    opts.seed = spec.seed;
    return grad_check(store, loss_fn, opts);
}

ProbeReport linear_probe_segment(const std::vector<Tensor>& pointwise_features,
                                 const std::vector<std::vector<int>>& part_labels,
                                 const std::vector<int>& categories, double train_fraction,
                                 std::uint64_t seed) {
    if (pointwise_features.size() != part_labels.size() ||
        pointwise_features.size() != categories.size() || pointwise_features.empty())
        throw ShapeMismatch("per-cloud features, labels and categories must align");

    int n_parts = 0;
    for (const auto& labels : part_labels)
        for (const int l : labels) n_parts = std::max(n_parts, l + 1);
    std::set<int> distinct;
    for (const auto& labels : part_labels) distinct.insert(labels.begin(), labels.end());
    if (distinct.size() < 2) throw DegenerateLabels("segmentation probe needs >= 2 parts");

    std::vector<int> train_idx, test_idx;
    stratified_split(categories, train_fraction, seed, train_idx, test_idx);

    std::vector<std::vector<double>> xtr;
    std::vector<int> ytr;
    for (const int ci : train_idx) {
        const Tensor& y = pointwise_features[static_cast<std::size_t>(ci)];
        const auto& labels = part_labels[static_cast<std::size_t>(ci)];
        if (y.dim(0) != static_cast<int>(labels.size()))
            throw ShapeMismatch("labels must align with points");
        for (int r = 0; r < y.dim(0); ++r) {
            xtr.emplace_back(y.data() + static_cast<std::size_t>(r) * y.dim(1),
                             y.data() + static_cast<std::size_t>(r + 1) * y.dim(1));
            ytr.push_back(labels[static_cast<std::size_t>(r)]);
        }
    }
    LogisticProbe probe;
    probe.fit(xtr, ytr, n_parts);

    ProbeReport rep;
    rep.task = "segment";
    rep.train_fraction = train_fraction;

    std::map<int, std::vector<double>> per_category_ious;
    std::map<int, std::vector<double>> per_part_ious;
    std::vector<double> cloud_ious;
    for (const int ci : test_idx) {
        const Tensor& y = pointwise_features[static_cast<std::size_t>(ci)];
        const auto& labels = part_labels[static_cast<std::size_t>(ci)];
        std::vector<int> pred(static_cast<std::size_t>(y.dim(0)));
        for (int r = 0; r < y.dim(0); ++r)
            pred[static_cast<std::size_t>(r)] =
                probe.predict(y.data() + static_cast<std::size_t>(r) * y.dim(1));

        // Mean IoU over parts present in ground truth or prediction.
        std::vector<double> ious;
        for (int part = 0; part < n_parts; ++part) {
            int inter = 0, uni = 0;
            for (std::size_t r = 0; r < labels.size(); ++r) {
                const bool in_gt = labels[r] == part;
                const bool in_pred = pred[r] == part;
                inter += in_gt && in_pred;
                uni += in_gt || in_pred;
            }
            if (uni == 0) continue;
            const double iou = static_cast<double>(inter) / uni;
            ious.push_back(iou);
            per_part_ious[part].push_back(iou);
        }
        const double cloud_iou =
            ious.empty() ? 0.0 : std::accumulate(ious.begin(), ious.end(), 0.0) / ious.size();
        cloud_ious.push_back(cloud_iou);
        per_category_ious[categories[static_cast<std::size_t>(ci)]].push_back(cloud_iou);
    }

    rep.instance_miou = cloud_ious.empty()
                            ? 0.0
                            : std::accumulate(cloud_ious.begin(), cloud_ious.end(), 0.0) /
                                  cloud_ious.size();
    double cat_sum = 0.0;
    for (const auto& [cat, v] : per_category_ious)
        cat_sum += std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    rep.category_miou = per_category_ious.empty() ? 0.0 : cat_sum / per_category_ious.size();
    for (const auto& [part, v] : per_part_ious)
        rep.per_class["part_" + std::to_string(part)] =
            std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    return rep;
}

}  // namespace cpnet
