#include <doctest.h>

#include <cmath>
#include <functional>

#include "cpnet/errors.hpp"
#include "cpnet/params.hpp"
#include "cpnet/rng.hpp"
#include "cpnet/tensor.hpp"

using namespace cpnet;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// Analytic gradient of scalar = f(x) with respect to x.
Tensor analytic_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    Tape tape;
    const Tensor xw = tape.watch(x);
    const Tensor y = f(xw);
    const GradStore gs = tape.backward(y);
    return gs.grad(xw.node(), x.shape());
}

// Central finite differences, the independent oracle.
double fd_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, std::int64_t idx,
               double h = 1e-6) {
    Tensor xp(x.shape(), x.vec());
    xp.data()[idx] += h;
    const double fp = f(xp).item();
    Tensor xm(x.shape(), x.vec());
    xm.data()[idx] -= h;
    const double fm = f(xm).item();
    return (fp - fm) / (2.0 * h);
}

// Max relative error of the analytic gradient against finite differences over
// every element of x.
double max_grad_error(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    const Tensor an = analytic_grad(f, x);
    double worst = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double fd = fd_grad(f, x, i);
        const double a = an.at(static_cast<int>(i));
        worst = std::max(worst, std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)}));
    }
    return worst;
}

// Random fixed projection makes scalar objectives sensitive to every output.
Tensor project(const Tensor& y, std::uint64_t seed) {
    return sum_all(mul(y, random_tensor(y.shape(), seed, 0.1, 1.1)));
}

}  // namespace

TEST_CASE("matmul: identity forward") {
    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor out = matmul(a, eye);
    for (int i = 0; i < 4; ++i) CHECK(out.at(i) == a.at(i));
}

TEST_CASE("matmul: shape mismatch") {
    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeMismatch);
}

TEST_CASE("sum(x*x): gradient is exactly 2x") {
    const Tensor x({3}, {1, 2, 3});
    const Tensor g = analytic_grad([](const Tensor& t) { return sum_all(mul(t, t)); }, x);
    CHECK(g.at(0) == 2.0);
    CHECK(g.at(1) == 4.0);
    CHECK(g.at(2) == 6.0);
}

TEST_CASE("every differentiable primitive passes a finite-difference check") {
    const Tensor x = random_tensor({4, 5}, 1);
    const Tensor x3 = random_tensor({2, 3, 4}, 2);
    const Tensor b_full = random_tensor({4, 5}, 3);
    const Tensor b_row = random_tensor({5}, 4);
    const Tensor b_col = random_tensor({4, 1}, 5);
    const Tensor b_pos = random_tensor({4, 5}, 6, 0.5, 1.5);
    const Tensor w = random_tensor({5, 3}, 7);

    auto check = [](const char* name, const std::function<Tensor(const Tensor&)>& f,
                    const Tensor& at) {
        INFO(name);
        CHECK(max_grad_error(f, at) < 1e-6);
    };

    check("matmul_lhs", [&](const Tensor& t) { return project(matmul(t, w), 10); }, x);
    check("matmul_rhs", [&](const Tensor& t) { return project(matmul(x, t), 11); }, w);
    check("add", [&](const Tensor& t) { return project(add(t, b_full), 12); }, x);
    check("add_bcast_row", [&](const Tensor& t) { return project(add(x, t), 13); }, b_row);
    check("add_bcast_col", [&](const Tensor& t) { return project(add(x, t), 14); }, b_col);
    check("sub", [&](const Tensor& t) { return project(sub(t, b_full), 15); }, x);
    check("mul", [&](const Tensor& t) { return project(mul(t, b_full), 16); }, x);
    check("mul_bcast", [&](const Tensor& t) { return project(mul(x, t), 17); }, b_col);
    check("div_lhs", [&](const Tensor& t) { return project(div(t, b_pos), 18); }, x);
    check("div_rhs", [&](const Tensor& t) { return project(div(x, t), 19); }, b_pos);
    check("scalar_mul", [&](const Tensor& t) { return project(scalar_mul(t, -2.5), 20); }, x);
    check("add_scalar", [&](const Tensor& t) { return project(add_scalar(t, 1.25), 21); }, x);
    check("relu", [&](const Tensor& t) { return project(relu(t), 22); }, x);
    check("tanh", [&](const Tensor& t) { return project(tanh_op(t), 23); }, x);
    check("exp", [&](const Tensor& t) { return project(exp_op(t), 24); }, x);
    check("log", [&](const Tensor& t) { return project(log_op(t), 25); }, b_pos);
    check("sqrt", [&](const Tensor& t) { return project(sqrt_op(t), 26); }, b_pos);
    check("concat",
          [&](const Tensor& t) { return project(concat({t, b_full, mul(t, b_full)}, 1), 27); }, x);
    check("slice", [&](const Tensor& t) { return project(slice(t, 1, 1, 3), 28); }, x);
    check("reshape", [&](const Tensor& t) { return project(reshape(t, {2, 10}), 29); }, x);
    check("transpose", [&](const Tensor& t) { return project(transpose(t), 30); }, x);
    check("broadcast_to", [&](const Tensor& t) { return project(broadcast_to(t, {4, 5}), 31); },
          b_row);
    check("sum_axis0", [&](const Tensor& t) { return project(sum(t, 0), 32); }, x);
    check("sum_axis1_keep", [&](const Tensor& t) { return project(sum(t, 1, true), 33); }, x);
    check("mean", [&](const Tensor& t) { return project(mean(t, 1), 34); }, x);
    check("sum3d", [&](const Tensor& t) { return project(sum(t, 1), 35); }, x3);
    check("max_pool_ax1", [&](const Tensor& t) { return project(max_pool(t, 1).values, 36); }, x);
    check("max_pool_3d", [&](const Tensor& t) { return project(max_pool(t, 1).values, 37); }, x3);
    check("logsumexp", [&](const Tensor& t) { return project(logsumexp(t, 1), 38); }, x);
    check("softmax", [&](const Tensor& t) { return project(softmax_logsumexp(t, 1), 39); }, x);
    check("l2_normalize", [&](const Tensor& t) { return project(l2_normalize(t, 1), 40); }, x);
    check("cosine_similarity",
          [&](const Tensor& t) { return project(cosine_similarity(t, b_full), 41); }, x);
    check("gather_rows",
          [&](const Tensor& t) { return project(gather_rows(t, {3, 0, 0, 2}), 42); }, x);
    check("take_diag", [&](const Tensor& t) { return project(take_diag(matmul(t, w)), 43); },
          random_tensor({3, 5}, 44));
    check("batch_norm",
          [&](const Tensor& t) {
              return project(batch_norm_train(t, b_row, random_tensor({5}, 45), 1e-5), 46);
          },
          x);
}

TEST_CASE("interp_rows and chamfer_to match finite differences") {
    const std::vector<Vec3> src = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0.4, 0.6, 0.2}};
    const std::vector<Vec3> queries = {{0.2, 0.1, 0}, {0.8, 0.3, 0.1}, {0.5, 0.5, 0.5}};
    const IdwPlan plan = idw_plan(src, queries);
    const Tensor feats = random_tensor({4, 6}, 50);
    CHECK(max_grad_error([&](const Tensor& t) { return project(interp_rows(t, plan), 51); },
                         feats) < 1e-6);

    const std::vector<Vec3> target = {{0, 0, 0}, {1, 0.2, 0}, {0.3, 0.9, 0.5}};
    const Tensor pred = random_tensor({5, 3}, 52);
    CHECK(max_grad_error([&](const Tensor& t) { return chamfer_to(t, target); }, pred) < 1e-6);
}

TEST_CASE("max_pool: ties route the gradient to the lowest index") {
    const Tensor x({1, 4}, {2.0, 7.0, 7.0, 1.0});
    Tape tape;
    const Tensor xw = tape.watch(x);
    const MaxPoolResult mp = max_pool(xw, 1);
    CHECK(mp.values.at(0) == 7.0);
    CHECK(mp.argmax[0] == 1);
    const GradStore gs = tape.backward(sum_all(mp.values));
    const Tensor g = gs.grad(xw.node(), x.shape());
    CHECK(g.at(0) == 0.0);
    CHECK(g.at(1) == 1.0);
    CHECK(g.at(2) == 0.0);
    CHECK(g.at(3) == 0.0);
}

TEST_CASE("l2_normalize: unit rows") {
    Tensor x = random_tensor({6, 4}, 60, -2, 2);
    const Tensor n = l2_normalize(x, 1);
    for (int i = 0; i < 6; ++i) {
        double norm2 = 0;
        for (int j = 0; j < 4; ++j) norm2 += n.at(i, j) * n.at(i, j);
        CHECK(std::abs(std::sqrt(norm2) - 1.0) < 1e-9);
    }
}

TEST_CASE("batch_norm: train-mode statistics and eval-mode affinity") {
    const Tensor x = random_tensor({32, 3}, 61, -3, 5);
    const Tensor gamma = Tensor::full({3}, 1.0);
    const Tensor beta = Tensor({3});
    const Tensor y = batch_norm_train(x, gamma, beta, 1e-9);
    for (int c = 0; c < 3; ++c) {
        double m = 0, v = 0;
        for (int i = 0; i < 32; ++i) m += y.at(i, c);
        m /= 32;
        for (int i = 0; i < 32; ++i) v += (y.at(i, c) - m) * (y.at(i, c) - m);
        v /= 32;
        CHECK(std::abs(m) < 1e-9);
        CHECK(std::abs(v - 1.0) < 1e-6);
    }

    // Eval mode must be an affine map: f(a*x1 + (1-a)*x2) = a*f(x1) + (1-a)*f(x2).
    const Tensor rm({3}, {0.5, -1.0, 2.0});
    const Tensor rv({3}, {1.5, 0.5, 2.0});
    const Tensor g2({3}, {1.1, 0.9, 1.3});
    const Tensor b2({3}, {0.1, -0.2, 0.3});
    const Tensor x1 = random_tensor({4, 3}, 62);
    const Tensor x2 = random_tensor({4, 3}, 63);
    const double a = 0.3;
    const Tensor lhs = batch_norm_eval(add(scalar_mul(x1, a), scalar_mul(x2, 1 - a)), g2, b2, rm,
                                       rv, 1e-5);
    const Tensor rhs = add(scalar_mul(batch_norm_eval(x1, g2, b2, rm, rv, 1e-5), a),
                           scalar_mul(batch_norm_eval(x2, g2, b2, rm, rv, 1e-5), 1 - a));
    for (int i = 0; i < lhs.size(); ++i)
        CHECK(lhs.at(i) == doctest::Approx(rhs.at(i)).epsilon(1e-12));
}

TEST_CASE("softmax_logsumexp: overflow-safe shift invariance") {
    const Tensor x = random_tensor({3, 7}, 64, -2, 2);
    const Tensor p1 = softmax_logsumexp(x, 1);
    const Tensor p2 = softmax_logsumexp(add_scalar(x, 1e4), 1);
    for (int i = 0; i < p1.size(); ++i) CHECK(std::abs(p1.at(i) - p2.at(i)) < 1e-9);
}

TEST_CASE("backward: constant loss yields all-zero gradients") {
    Tape tape;
    const Tensor x = tape.watch(random_tensor({3, 3}, 65));
    const Tensor unused = mul(x, x);
    const GradStore gs = tape.backward(Tensor::scalar(5.0));
    const Tensor g = gs.grad(x.node(), x.shape());
    for (int i = 0; i < g.size(); ++i) CHECK(g.at(i) == 0.0);
    (void)unused;
}

TEST_CASE("backward: non-scalar loss is rejected") {
    Tape tape;
    const Tensor x = tape.watch(random_tensor({3, 3}, 66));
    const Tensor y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), NonScalarLoss);
}

TEST_CASE("backward: repeated calls on one tape give identical results") {
    Tape tape;
    const Tensor x = tape.watch(random_tensor({4, 4}, 67));
    const Tensor loss = sum_all(mul(relu(x), x));
    const GradStore g1 = tape.backward(loss);
    const GradStore g2 = tape.backward(loss);
    const Tensor a = g1.grad(x.node(), x.shape());
    const Tensor b = g2.grad(x.node(), x.shape());
    for (int i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("backward: unreachable watched tensors get zero gradients") {
    Tape tape;
    const Tensor x = tape.watch(random_tensor({2, 2}, 68));
    const Tensor y = tape.watch(random_tensor({2, 2}, 69));
    const GradStore gs = tape.backward(sum_all(mul(x, x)));
    const Tensor gy = gs.grad(y.node(), y.shape());
    for (int i = 0; i < gy.size(); ++i) CHECK(gy.at(i) == 0.0);
}

TEST_CASE("mixing tensors from two tapes is an error") {
    Tape t1, t2;
    const Tensor a = t1.watch(random_tensor({2, 2}, 70));
    const Tensor b = t2.watch(random_tensor({2, 2}, 71));
    CHECK_THROWS_AS(add(a, b), Error);
}

TEST_CASE("composed MLP gradient matches finite differences below 1e-4") {
    const Tensor x = random_tensor({6, 8}, 72);
    const Tensor w1 = random_tensor({8, 10}, 73);
    const Tensor b1 = random_tensor({10}, 74, -0.1, 0.1);
    const Tensor w2 = random_tensor({10, 4}, 75);
    const Tensor b2 = random_tensor({4}, 76, -0.1, 0.1);

    auto net = [&](const Tensor& w1t) {
        const Tensor h = relu(add(matmul(x, w1t), b1));
        const Tensor out = add(matmul(h, w2), b2);
        return project(mean_all(mul(out, out)), 77);
    };
    CHECK(max_grad_error(net, w1) < 1e-4);
}

TEST_CASE("finite checks flag non-finite op results when enabled") {
    set_finite_checks(true);
    const Tensor x({2}, {1.0, -1.0});
    CHECK_THROWS_AS(log_op(x), NonFinite);
    set_finite_checks(false);
    CHECK(std::isnan(log_op(x).at(1)));
}

TEST_CASE("adam: zero gradient leaves parameters untouched") {
    ParamStore store;
    store.create("w", Tensor({2, 2}, {1, 2, 3, 4}));
    GradMap grads;
    grads.emplace("w", Tensor({2, 2}));
    adam_step(store, grads, {});
    CHECK(store.get("w").at(3) == 4.0);
}

TEST_CASE("adam: first scalar step with unit gradient moves by ~-lr") {
    // Bias correction makes m_hat = v_hat = 1, so the update is
    // -lr / (1 + eps) at the defaults.
    ParamStore store;
    store.create("w", Tensor::scalar(0.0));
    GradMap grads;
    grads.emplace("w", Tensor::scalar(1.0));
    adam_step(store, grads, {});
    CHECK(store.get("w").item() == doctest::Approx(-0.001).epsilon(1e-7));
    CHECK(store.entry("w").adam_step == 1);
}

TEST_CASE("adam: constant gradient drives the parameter monotonically") {
    ParamStore store;
    store.create("w", Tensor::scalar(0.5));
    double prev = 0.5;
    for (int i = 0; i < 25; ++i) {
        GradMap grads;
        grads.emplace("w", Tensor::scalar(2.0));
        adam_step(store, grads, {});
        const double now = store.get("w").item();
        CHECK(now < prev);
        prev = now;
    }
}

TEST_CASE("adam: misaligned gradients are rejected") {
    ParamStore store;
    store.create("w", Tensor({2}));
    GradMap bad_shape;
    bad_shape.emplace("w", Tensor({3}));
    CHECK_THROWS_AS(adam_step(store, bad_shape, {}), Misaligned);
    GradMap unknown;
    unknown.emplace("nope", Tensor({2}));
    CHECK_THROWS_AS(adam_step(store, unknown, {}), Misaligned);
}

TEST_CASE("param container: byte-identical round trip with optimizer state") {
    ParamStore store;
    store.create("layer.w", random_tensor({3, 4}, 80));
    store.create("layer.b", random_tensor({4}, 81));
    store.create("bn.run_mean", random_tensor({4}, 82), /*trainable=*/false);
    GradMap grads;
    grads.emplace("layer.w", random_tensor({3, 4}, 83));
    grads.emplace("layer.b", random_tensor({4}, 84));
    adam_step(store, grads, {});

    const auto bytes1 = store.serialize();
    ParamStore back = ParamStore::deserialize(bytes1.data(), bytes1.size());
    const auto bytes2 = back.serialize();
    CHECK(bytes1 == bytes2);
    CHECK(back.get("layer.w").vec() == store.get("layer.w").vec());
    CHECK(back.entry("layer.b").adam_step == 1);
    CHECK_FALSE(back.is_trainable("bn.run_mean"));
}

TEST_CASE("param container: corrupted magic is a version mismatch") {
    std::vector<std::uint8_t> junk = {'X', 'X', 'X', 'X', 'X', 'X', 'X', 'X', 1, 0, 0, 0};
    CHECK_THROWS_AS(ParamStore::deserialize(junk.data(), junk.size()), VersionMismatch);
}

TEST_CASE("grad_check: quadratic form is exact to 1e-8") {
    ParamStore store;
    store.create("w", random_tensor({4, 4}, 90));
    const auto loss_fn = [](Tape&, ParamBinder& binder) {
        const Tensor w = binder("w");
        return sum_all(mul(w, w));
    };
    const GradCheckResult res = grad_check(store, loss_fn);
    CHECK(res.max_rel_error < 1e-8);
    CHECK(res.evaluated == 16);
}

TEST_CASE("grad_check: seeded sampling limits the probe count") {
    ParamStore store;
    store.create("w", random_tensor({8, 8}, 91));
    GradCheckOptions opts;
    opts.sample = 10;
    const auto loss_fn = [](Tape&, ParamBinder& binder) {
        return sum_all(exp_op(scalar_mul(binder("w"), 0.1)));
    };
    const GradCheckResult res = grad_check(store, loss_fn, opts);
    CHECK(res.evaluated == 10);
    CHECK(res.max_rel_error < 1e-6);
}
