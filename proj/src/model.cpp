#include "cpnet/model.hpp"

#include <algorithm>
#include <cmath>

#include "cpnet/errors.hpp"
#include "cpnet/rng.hpp"

namespace cpnet {

namespace {

Tensor uniform_init(const Shape& shape, int fan_in, int fan_out, std::uint64_t seed,
                    const std::string& name) {
    Rng rng(hash_combine(substream(seed, "init"), fnv1a(name)));
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(shape);
    double* d = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i) d[i] = rng.uniform(-s, s);
    return t;
}

void create_linear(ParamStore& store, const std::string& prefix, int in, int out,
                   std::uint64_t seed) {
    store.create(prefix + ".w", uniform_init({in, out}, in, out, seed, prefix + ".w"));
    store.create(prefix + ".b", Tensor(Shape{out}));
}

Tensor linear(ParamBinder& pb, const std::string& prefix, const Tensor& x) {
    return add(matmul(x, pb(prefix + ".w")), pb(prefix + ".b"));
}

void create_bn(ParamStore& store, const std::string& prefix, int c) {
    store.create(prefix + ".gamma", Tensor::full({c}, 1.0));
    store.create(prefix + ".beta", Tensor(Shape{c}));
    store.create(prefix + ".run_mean", Tensor(Shape{c}), /*trainable=*/false);
    store.create(prefix + ".run_var", Tensor::full({c}, 1.0), /*trainable=*/false);
}

Tensor apply_bn(ParamBinder& pb, const CpNetConfig& cfg, const std::string& prefix,
                const Tensor& x, const ForwardOptions& opts) {
    if (opts.bn_mode == BnMode::eval)
        return batch_norm_eval(x, pb(prefix + ".gamma"), pb(prefix + ".beta"),
                               pb.buffer(prefix + ".run_mean"), pb.buffer(prefix + ".run_var"),
                               cfg.bn_eps);
    std::vector<double> mu, var;
    Tensor out = batch_norm_train(x, pb(prefix + ".gamma"), pb(prefix + ".beta"), cfg.bn_eps,
                                  &mu, &var);
    if (opts.bn_mode == BnMode::train_update) {
        ParamStore& store = pb.store();
        const double m = opts.bn_momentum;
        double* rm = store.get(prefix + ".run_mean").data();
        double* rv = store.get(prefix + ".run_var").data();
        for (std::size_t i = 0; i < mu.size(); ++i) {
            rm[i] = m * rm[i] + (1.0 - m) * mu[i];
            rv[i] = m * rv[i] + (1.0 - m) * var[i];
        }
    }
    return out;
}

int encoder_in_channels(const CpNetConfig& cfg, int level) {
    return level == 0 ? 3 : cfg.channels_per_level[static_cast<std::size_t>(level - 1)];
}

}  // namespace

int CpNetConfig::pointwise_channels() const {
    if (variant == Variant::segmentation) return levels() * head_width;
    return channels_per_level.back();
}

void CpNetConfig::validate(int n_points) const {
    if (points_per_level.empty()) throw ConfigError("points_per_level is empty");
    if (channels_per_level.size() != points_per_level.size())
        throw ConfigError("channels_per_level must match points_per_level in length");
    if (points_per_level[0] > n_points)
        throw ConfigError("points_per_level[0] exceeds the cloud size");
    for (std::size_t i = 0; i < points_per_level.size(); ++i) {
        if (points_per_level[i] < 1) throw ConfigError("points_per_level entries must be >= 1");
        if (i > 0 && points_per_level[i] >= points_per_level[i - 1])
            throw ConfigError("points_per_level must be strictly decreasing");
        if (channels_per_level[i] < 1) throw ConfigError("channels_per_level entries must be >= 1");
    }
    if (k_neighbors < 1) throw ConfigError("k_neighbors must be >= 1");
    if (head_width < 1) throw ConfigError("head_width must be >= 1");
}

CpNetConfig CpNetConfig::preset(Variant v, int n_points) {
    CpNetConfig cfg;
    cfg.variant = v;
    const int l = v == Variant::segmentation ? 4 : 3;
    const int base_channels[4] = {32, 64, 128, 256};
    int pts = n_points;
    for (int i = 0; i < l; ++i) {
        cfg.points_per_level.push_back(std::max(4, pts));
        cfg.channels_per_level.push_back(base_channels[i]);
        pts /= 2;
    }
    cfg.normal_head = v == Variant::segmentation;
    return cfg;
}

FoldingGrid FoldingGrid::make(int n, int side) {
    if (n < 1) throw ShapeMismatch("folding grid needs n >= 1");
    if (side <= 0) side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    if (side * side < n) throw ShapeMismatch("fold_grid_side^2 must cover the cloud size");
    FoldingGrid fg;
    fg.side = side;
    Tensor grid(Shape{n, 2});
    double* d = grid.data();
    for (int i = 0; i < n; ++i) {
        const int r = i / side;
        const int c = i % side;
        d[2 * i] = side == 1 ? 0.0 : -0.5 + static_cast<double>(c) / (side - 1);
        d[2 * i + 1] = side == 1 ? 0.0 : -0.5 + static_cast<double>(r) / (side - 1);
    }
    fg.grid = grid;
    return fg;
}

void init_params(ParamStore& store, const CpNetConfig& cfg, std::uint64_t seed) {
    const int l_count = cfg.levels();
    for (int l = 0; l < l_count; ++l) {
        const std::string p = "encoder.l" + std::to_string(l);
        const int c_in = encoder_in_channels(cfg, l);
        const int c_out = cfg.channels_per_level[static_cast<std::size_t>(l)];
        create_linear(store, p + ".wmlp.fc1", 10, cfg.weight_mlp_hidden, seed);
        create_linear(store, p + ".wmlp.fc2", cfg.weight_mlp_hidden, c_in, seed);
        create_linear(store, p + ".raise", c_in, c_out, seed);
        if (cfg.use_batch_norm) create_bn(store, p + ".bn", c_out);
    }
    if (cfg.variant == CpNetConfig::Variant::segmentation) {
        for (int l = l_count - 1; l >= 1; --l) {
            const std::string p = "decoder.l" + std::to_string(l);
            const int c_l = cfg.channels_per_level[static_cast<std::size_t>(l)];
            const int c_prev = cfg.channels_per_level[static_cast<std::size_t>(l - 1)];
            create_linear(store, p + ".inner", c_l, c_prev, seed);
            create_linear(store, p + ".skip", c_prev, c_prev, seed);
            create_linear(store, p + ".outer", c_prev, c_prev, seed);
        }
        for (int l = 0; l < l_count; ++l)
            create_linear(store, "head.y" + std::to_string(l),
                          cfg.channels_per_level[static_cast<std::size_t>(l)], cfg.head_width,
                          seed);
    }
    const int c_y = cfg.pointwise_channels();
    if (cfg.normal_head) {
        create_linear(store, "normal.fc1", 3 + 2 * c_y, cfg.normal_hidden, seed);
        create_linear(store, "normal.fc2", cfg.normal_hidden, 3, seed);
    }
    create_linear(store, "fold.m1.fc1", c_y + 2, cfg.fold_hidden, seed);
    create_linear(store, "fold.m1.fc2", cfg.fold_hidden, cfg.fold_hidden, seed);
    create_linear(store, "fold.m1.fc3", cfg.fold_hidden, 3, seed);
    create_linear(store, "fold.m2.fc1", c_y + 3, cfg.fold_hidden, seed);
    create_linear(store, "fold.m2.fc2", cfg.fold_hidden, cfg.fold_hidden, seed);
    create_linear(store, "fold.m2.fc3", cfg.fold_hidden, 3, seed);
}

RsconvResult rsconv_level(ParamBinder& pb, const CpNetConfig& cfg, int level,
                          const std::vector<Vec3>& points_in, const Tensor& feats_in,
                          int points_out_count, const ForwardOptions& opts,
                          const std::vector<int>* preset_indices) {
    const int n_in = static_cast<int>(points_in.size());
    if (feats_in.rank() != 2 || feats_in.dim(0) != n_in)
        throw ShapeMismatch("rsconv_level: features must align with points");
    if (points_out_count > n_in)
        throw ShapeMismatch("rsconv_level: cannot sample more points than provided");
    const int c_in = feats_in.dim(1);
    const int k = std::min(cfg.k_neighbors, n_in - 1);
    const std::string prefix = "encoder.l" + std::to_string(level);

    RsconvResult res;
    if (preset_indices) {
        if (static_cast<int>(preset_indices->size()) != points_out_count)
            throw ShapeMismatch("rsconv_level: sampling plan size mismatch");
        res.fps_indices = *preset_indices;
    } else {
        res.fps_indices = fps(points_in, points_out_count);
    }
    res.points_out.reserve(points_out_count);
    for (const int i : res.fps_indices) res.points_out.push_back(points_in[i]);

    const NeighborIndex nbr = knn(points_in, k);

    // Relation tensor depends on coordinates only, so it enters as a constant.
    const int m = points_out_count;
    Tensor rel(Shape{m * k, 10});
    std::vector<int> flat_neighbors;
    flat_neighbors.reserve(static_cast<std::size_t>(m) * k);
    double* rd = rel.data();
    for (int c = 0; c < m; ++c) {
        const int center = res.fps_indices[c];
        const Vec3 pc = points_in[center];
        for (int j = 0; j < k; ++j) {
            const int nj = nbr.indices[center][j];
            flat_neighbors.push_back(nj);
            const Vec3 pn = points_in[nj];
            const Vec3 d = pc - pn;
            double* row = rd + static_cast<std::size_t>(c * k + j) * 10;
            row[0] = nbr.distances[center][j];
            row[1] = d.x;
            row[2] = d.y;
            row[3] = d.z;
            if (cfg.relation_abs_coords) {
                row[4] = pc.x;
                row[5] = pc.y;
                row[6] = pc.z;
                row[7] = pn.x;
                row[8] = pn.y;
                row[9] = pn.z;
            }
        }
    }

    Tensor weights = linear(pb, prefix + ".wmlp.fc2", relu(linear(pb, prefix + ".wmlp.fc1", rel)));
    Tensor gathered = gather_rows(feats_in, flat_neighbors);            // [m*k, c_in]
    Tensor weighted = reshape(mul(weights, gathered), {m, k, c_in});    // [m, k, c_in]
    Tensor agg = max_pool(weighted, 1).values;                          // [m, c_in]
    Tensor raised = linear(pb, prefix + ".raise", agg);
    if (cfg.use_batch_norm) raised = apply_bn(pb, cfg, prefix + ".bn", raised, opts);
    res.feats_out = relu(raised);
    return res;
}

Tensor transition_up(ParamBinder& pb, int level, const Tensor& q_l, const Tensor& f_prev,
                     const std::vector<Vec3>& points_l, const std::vector<Vec3>& points_prev) {
    if (q_l.dim(0) != static_cast<int>(points_l.size()) ||
        f_prev.dim(0) != static_cast<int>(points_prev.size()))
        throw ShapeMismatch("transition_up: features must align with their point sets");
    const std::string prefix = "decoder.l" + std::to_string(level);
    const IdwPlan plan = idw_plan(points_l, points_prev);
    Tensor upsampled = interp_rows(q_l, plan);
    Tensor inner = relu(linear(pb, prefix + ".inner", upsampled));
    Tensor skip = relu(linear(pb, prefix + ".skip", f_prev));
    return relu(linear(pb, prefix + ".outer", add(inner, skip)));
}

Tensor pointwise_head(ParamBinder& pb, const CpNetConfig& cfg, const std::vector<Tensor>& q_levels,
                      const std::vector<std::vector<Vec3>>& level_points,
                      const std::vector<Vec3>& query_points) {
    if (cfg.variant != CpNetConfig::Variant::segmentation)
        throw VariantMismatch("pointwise_head requires the segmentation variant");
    if (q_levels.size() != level_points.size() || q_levels.empty())
        throw ShapeMismatch("pointwise_head: per-level inputs misaligned");
    std::vector<Tensor> ys;
    for (std::size_t l = 0; l < q_levels.size(); ++l) {
        const IdwPlan plan = idw_plan(level_points[l], query_points);
        Tensor up = interp_rows(q_levels[l], plan);
        ys.push_back(relu(linear(pb, "head.y" + std::to_string(l), up)));
    }
    return ys.size() == 1 ? ys[0] : concat(ys, 1);
}

Tensor global_feature(const Tensor& y) {
    if (y.rank() != 2 || y.dim(0) < 1) throw ShapeMismatch("global_feature expects nonempty [n, c]");
    return max_pool(y, 0, /*keepdims=*/true).values;
}

Tensor predict_normals(ParamBinder& pb, const std::vector<Vec3>& points, const Tensor& y,
                       const Tensor& g) {
    const int n = static_cast<int>(points.size());
    if (y.dim(0) != n) throw ShapeMismatch("predict_normals: features must align with points");
    Tensor coords = points_tensor(points);
    Tensor g_rep = broadcast_to(g, {n, g.dim(1)});
    Tensor input = concat({coords, y, g_rep}, 1);
    Tensor h = relu(linear(pb, "normal.fc1", input));
    Tensor raw = linear(pb, "normal.fc2", h);
    return l2_normalize(raw, 1);
}

Tensor fold_reconstruct(ParamBinder& pb, const Tensor& g, const FoldingGrid& grid) {
    const int n = grid.grid.dim(0);
    Tensor g_rep = broadcast_to(g, {n, g.dim(1)});
    Tensor in1 = concat({g_rep, grid.grid}, 1);
    Tensor mid = linear(pb, "fold.m1.fc3",
                        relu(linear(pb, "fold.m1.fc2", relu(linear(pb, "fold.m1.fc1", in1)))));
    Tensor in2 = concat({g_rep, mid}, 1);
    return linear(pb, "fold.m2.fc3",
                  relu(linear(pb, "fold.m2.fc2", relu(linear(pb, "fold.m2.fc1", in2)))));
}

BranchResult forward_branch(ParamBinder& pb, const CpNetConfig& cfg,
                            const std::vector<Vec3>& points, int recon_points,
                            const ForwardOptions& opts, const SamplingPlan* plan,
                            SamplingPlan* plan_out) {
    cfg.validate(static_cast<int>(points.size()));
    const int l_count = cfg.levels();

    std::vector<std::vector<Vec3>> level_points(static_cast<std::size_t>(l_count));
    std::vector<Tensor> level_feats(static_cast<std::size_t>(l_count));
    std::vector<std::vector<int>> level_source(static_cast<std::size_t>(l_count));

    // Level-0 features are centroid-centered coordinates; absolute position
    // enters only through the relation vectors (and only when
    // relation_abs_coords is set), which keeps the flag's translation
    // invariance meaningful.
    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : points) centroid += p;
    centroid *= 1.0 / static_cast<double>(points.size());
    std::vector<Vec3> centered;
    centered.reserve(points.size());
    for (const Vec3& p : points) centered.push_back(p - centroid);

    if (plan && static_cast<int>(plan->level_positions.size()) != l_count)
        throw ShapeMismatch("sampling plan does not cover every level");
    if (plan_out) plan_out->level_positions.assign(static_cast<std::size_t>(l_count), {});

    const std::vector<Vec3>* pts_in = &points;
    Tensor feats_in = points_tensor(centered);
    for (int l = 0; l < l_count; ++l) {
        RsconvResult r = rsconv_level(pb, cfg, l, *pts_in, feats_in,
                                      cfg.points_per_level[static_cast<std::size_t>(l)], opts,
                                      plan ? &plan->level_positions[static_cast<std::size_t>(l)]
                                           : nullptr);
        if (plan_out) plan_out->level_positions[static_cast<std::size_t>(l)] = r.fps_indices;
        // Track original-input indices through the FPS chain.
        std::vector<int>& src = level_source[static_cast<std::size_t>(l)];
        src.reserve(r.fps_indices.size());
        if (l == 0) {
            src = r.fps_indices;
        } else {
            for (const int i : r.fps_indices)
                src.push_back(level_source[static_cast<std::size_t>(l - 1)][i]);
        }
        level_points[static_cast<std::size_t>(l)] = std::move(r.points_out);
        level_feats[static_cast<std::size_t>(l)] = std::move(r.feats_out);
        pts_in = &level_points[static_cast<std::size_t>(l)];
        feats_in = level_feats[static_cast<std::size_t>(l)];
    }

    BranchResult out;
    if (cfg.variant == CpNetConfig::Variant::segmentation) {
        std::vector<Tensor> q(static_cast<std::size_t>(l_count));
        q[static_cast<std::size_t>(l_count - 1)] = level_feats[static_cast<std::size_t>(l_count - 1)];
        for (int l = l_count - 1; l >= 1; --l)
            q[static_cast<std::size_t>(l - 1)] =
                transition_up(pb, l, q[static_cast<std::size_t>(l)],
                              level_feats[static_cast<std::size_t>(l - 1)],
                              level_points[static_cast<std::size_t>(l)],
                              level_points[static_cast<std::size_t>(l - 1)]);
        out.y = pointwise_head(pb, cfg, q, level_points, points);
        out.y_points = points;
        out.y_input_index.resize(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) out.y_input_index[i] = static_cast<int>(i);
    } else {
        out.y = level_feats[static_cast<std::size_t>(l_count - 1)];
        out.y_points = level_points[static_cast<std::size_t>(l_count - 1)];
        out.y_input_index = level_source[static_cast<std::size_t>(l_count - 1)];
    }
    out.g = global_feature(out.y);
    const FoldingGrid grid = FoldingGrid::make(recon_points, cfg.fold_grid_side);
    out.recon = fold_reconstruct(pb, out.g, grid);
    if (cfg.normal_head) out.normals = predict_normals(pb, out.y_points, out.y, out.g);
    return out;
}

BranchOutputs dual_forward(const PointCloud& original, const PerturbedCloud& perturbed,
                           ParamBinder& pb, const CpNetConfig& cfg, const ForwardOptions& opts) {
    const int n = static_cast<int>(original.points.size());
    if (perturbed.points.size() != perturbed.source_index.size())
        throw SizeMismatch("perturbed cloud lacks a source index per point");
    if (perturbed.points.size() > static_cast<std::size_t>(n))
        throw SizeMismatch("perturbed cloud has more points than the original");
    for (const int s : perturbed.source_index)
        if (s < 0 || s >= n) throw SizeMismatch("perturbed source index out of range");

    SamplingPlan basic_plan;
    BranchResult basic = forward_branch(pb, cfg, original.points, n, opts, nullptr, &basic_plan);

    // For same-N perturbations the assistant mirrors the basic branch's
    // sampling so features stay paired point-for-point; the relations and
    // neighborhoods still see the perturbed geometry. Delete manners fall
    // back to independent sampling over the survivors.
    BranchResult assist;
    if (perturbed.points.size() == static_cast<std::size_t>(n)) {
        std::vector<int> inverse(static_cast<std::size_t>(n), -1);
        for (std::size_t r = 0; r < perturbed.source_index.size(); ++r)
            inverse[static_cast<std::size_t>(perturbed.source_index[r])] = static_cast<int>(r);
        SamplingPlan assist_plan = basic_plan;
        for (int& pos : assist_plan.level_positions[0]) pos = inverse[static_cast<std::size_t>(pos)];
        assist = forward_branch(pb, cfg, perturbed.points, n, opts, &assist_plan);
    } else {
        // Deleted-point manners: shrink the level plan proportionally so the
        // survivor cloud still fits the hierarchy.
        CpNetConfig assist_cfg = cfg;
        const double ratio =
            static_cast<double>(perturbed.points.size()) / static_cast<double>(n);
        int prev = static_cast<int>(perturbed.points.size()) + 1;
        for (std::size_t l = 0; l < assist_cfg.points_per_level.size(); ++l) {
            int want = static_cast<int>(
                std::floor(cfg.points_per_level[l] * ratio + 0.5));
            want = std::min(want, prev - 1);
            want = std::max(want, 1);
            assist_cfg.points_per_level[l] = want;
            prev = want;
        }
        assist = forward_branch(pb, assist_cfg, perturbed.points, n, opts);
    }

    BranchOutputs out;
    out.y = basic.y;
    out.g = basic.g;
    out.recon = basic.recon;
    out.normals = basic.normals;
    out.y_prime = assist.y;
    out.g_prime = assist.g;
    out.recon_prime = assist.recon;
    out.y_orig_index = basic.y_input_index;
    out.y_prime_orig_index.reserve(assist.y_input_index.size());
    for (const int i : assist.y_input_index)
        out.y_prime_orig_index.push_back(perturbed.source_index[static_cast<std::size_t>(i)]);
    if (basic.normals.defined()) out.normals_orig_index = basic.y_input_index;
    return out;
}

RowAlignment align_rows(const BranchOutputs& outputs) {
    // Map original index -> basic row, then pair assistant rows through it.
    int max_idx = -1;
    for (const int i : outputs.y_orig_index) max_idx = std::max(max_idx, i);
    for (const int i : outputs.y_prime_orig_index) max_idx = std::max(max_idx, i);
    std::vector<int> basic_row(static_cast<std::size_t>(max_idx + 1), -1);
    for (std::size_t r = 0; r < outputs.y_orig_index.size(); ++r)
        basic_row[static_cast<std::size_t>(outputs.y_orig_index[r])] = static_cast<int>(r);

    RowAlignment out;
    for (std::size_t r = 0; r < outputs.y_prime_orig_index.size(); ++r) {
        const int b = basic_row[static_cast<std::size_t>(outputs.y_prime_orig_index[r])];
        if (b < 0) continue;
        out.basic_rows.push_back(b);
        out.assist_rows.push_back(static_cast<int>(r));
    }
    return out;
}

}  // namespace cpnet
