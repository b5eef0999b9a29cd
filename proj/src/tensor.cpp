#include "cpnet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>

#include "cpnet/errors.hpp"

namespace cpnet {

namespace {

std::atomic<bool> g_finite_checks{false};

// C[m,n] (+)= A[m,k] * B[k,n]
void mm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, int m,
           int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T. B is transposed into scratch first so the
// inner loop is a contiguous axpy the compiler can vectorize.
void mm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c, int m,
           int k, int n) {
    std::vector<double> bt(static_cast<std::size_t>(k) * n);
    for (int j = 0; j < n; ++j)
        for (int kk = 0; kk < k; ++kk)
            bt[static_cast<std::size_t>(kk) * n + j] = b[static_cast<std::size_t>(j) * k + kk];
    mm_nn(a, bt.data(), c, m, k, n);
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, int m,
           int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        const double* brow = b + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void check_finite(const Tensor& t, const char* op) {
    if (!g_finite_checks.load(std::memory_order_relaxed)) return;
    const double* d = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(d[i]))
            throw NonFinite(std::string(op) + " produced a non-finite value");
}

// Right-aligned numpy-style broadcast layout for one operand against an
// output shape: stride 0 marks broadcast dimensions.
std::vector<std::int64_t> bcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::int64_t> strides(out.size(), 0);
    std::int64_t st = 1;
    const int off = static_cast<int>(out.size()) - static_cast<int>(s.size());
    for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        if (s[d] == out[d + off]) {
            strides[d + off] = st;
        } else if (s[d] == 1) {
            strides[d + off] = 0;
        } else {
            throw ShapeMismatch("cannot broadcast " + shape_str(s) + " to " + shape_str(out));
        }
        st *= s[d];
    }
    return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeMismatch("incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Walks every element of `out_shape`, calling fn(out_flat, a_flat, b_flat).
template <typename F>
void bcast_walk(const Shape& out_shape, const std::vector<std::int64_t>& sa,
                const std::vector<std::int64_t>& sb, F&& fn) {
    const int rank = static_cast<int>(out_shape.size());
    const std::int64_t n = numel(out_shape);
    std::vector<std::int64_t> idx(rank, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        fn(i, oa, ob);
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out_shape[d]) break;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

// Splits a shape around an axis: (outer, len, inner).
void axis_split(const Shape& s, int axis, std::int64_t& outer, std::int64_t& len,
                std::int64_t& inner) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    outer = 1;
    inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s[d];
    len = s[axis];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
}

Shape reduced_shape(const Shape& s, int axis, bool keepdims) {
    Shape out = s;
    if (keepdims) {
        out[axis] = 1;
    } else {
        out.erase(out.begin() + axis);
        if (out.empty()) out = {1};
    }
    return out;
}

// fwd(a, b), da(a, b, out), db(a, b, out) are inlined functors.
template <typename F, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F fwd, DA da, DB db) {
    if (!a.defined() || !b.defined()) throw Error(std::string(name) + ": undefined tensor");
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const auto sa = bcast_strides(a.shape(), out_shape);
    const auto sb = bcast_strides(b.shape(), out_shape);
    Tensor out(out_shape);
    {
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        if (a.shape() == b.shape()) {
            const std::int64_t n = out.size();
            for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
        } else {
            bcast_walk(out_shape, sa, sb, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                po[o] = fwd(pa[ia], pb[ib]);
            });
        }
    }
    check_finite(out, name);
    Tape* tp = Tape::joint({&a, &b});
    if (!tp) return out;
    Tensor out_c = out;  // value copy shared with the attached result
    const bool same_shape = a.shape() == b.shape();
    return tp->attach(out, [a, b, out_c, out_shape, sa, sb, da, db,
                            same_shape](const Tensor& g, GradStore& gs) {
        const double* pg = g.data();
        const double* pa = a.data();
        const double* pb = b.data();
        const double* po = out_c.data();
        double* ga = a.has_node() ? gs.slot(a.node(), a.shape()) : nullptr;
        double* gb = b.has_node() ? gs.slot(b.node(), b.shape()) : nullptr;
        if (same_shape) {
            const std::int64_t n = out_c.size();
            if (ga)
                for (std::int64_t i = 0; i < n; ++i) ga[i] += pg[i] * da(pa[i], pb[i], po[i]);
            if (gb)
                for (std::int64_t i = 0; i < n; ++i) gb[i] += pg[i] * db(pa[i], pb[i], po[i]);
            return;
        }
        bcast_walk(out_shape, sa, sb, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            if (ga) ga[ia] += pg[o] * da(pa[ia], pb[ib], po[o]);
            if (gb) gb[ib] += pg[o] * db(pa[ia], pb[ib], po[o]);
        });
    });
}

template <typename F, typename D>
Tensor unary_op(const Tensor& a, const char* name, F fwd, D dval) {
    if (!a.defined()) throw Error(std::string(name) + ": undefined tensor");
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    check_finite(out, name);
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    Tensor out_c = out;
    return tp->attach(out, [a, out_c, dval](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        const double* pa = a.data();
        const double* po = out_c.data();
        const std::int64_t n = a.size();
        for (std::int64_t i = 0; i < n; ++i) ga[i] += pg[i] * dval(pa[i], po[i]);
    });
}

}  // namespace

std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (const int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(static_cast<std::size_t>(numel(shape_)), 0.0)) {
    for (const int d : shape_)
        if (d <= 0) throw ShapeMismatch("nonpositive dimension in " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(data))) {
    if (numel(shape_) != static_cast<std::int64_t>(data_->size()))
        throw ShapeMismatch("data size does not match shape " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), v);
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
}

double* GradStore::slot(int node, const Shape& shape) {
    Tensor& g = grads_[static_cast<std::size_t>(node)];
    if (!g.defined()) g = Tensor(shape);
    return g.data();
}

Tensor GradStore::grad(int node, const Shape& shape) const {
    const Tensor& g = grads_[static_cast<std::size_t>(node)];
    return g.defined() ? g : Tensor(shape);
}

Tensor Tape::watch(const Tensor& t) {
    if (!t.defined()) throw Error("cannot watch an undefined tensor");
    if (t.tape_ == this) return t;
    if (t.tape_ != nullptr) throw Error("tensor already belongs to another tape");
    Tensor out = t;
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back({nullptr});
    return out;
}

Tensor Tape::attach(Tensor out, BackFn back) {
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back({std::move(back)});
    return out;
}

Tape* Tape::joint(std::initializer_list<const Tensor*> ts) {
    Tape* tp = nullptr;
    for (const Tensor* t : ts) {
        if (!t->has_node()) continue;
        if (tp == nullptr) {
            tp = t->tape();
        } else if (tp != t->tape()) {
            throw Error("operands belong to different tapes");
        }
    }
    return tp;
}

GradStore Tape::backward(const Tensor& loss) const {
    GradStore gs(nodes_.size());
    if (!loss.defined()) throw NonScalarLoss("loss tensor is undefined");
    if (loss.size() != 1) throw NonScalarLoss("loss must be a scalar, got " + shape_str(loss.shape()));
    if (!loss.has_node() || loss.tape() != this) return gs;  // constant loss: all-zero grads

    *gs.slot(loss.node(), loss.shape()) = 1.0;
    for (int i = loss.node(); i >= 0; --i) {
        if (!gs.has(i)) continue;
        const Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.back) n.back(gs.grad(i, {1}), gs);
    }
    return gs;
}

void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out(Shape{m, n});
    mm_nn(a.data(), b.data(), out.data(), m, k, n);
    check_finite(out, "matmul");
    Tape* tp = Tape::joint({&a, &b});
    if (!tp) return out;
    return tp->attach(out, [a, b, m, k, n](const Tensor& g, GradStore& gs) {
        if (a.has_node()) mm_nt(g.data(), b.data(), gs.slot(a.node(), a.shape()), m, n, k);
        if (b.has_node()) mm_tn(a.data(), g.data(), gs.slot(b.node(), b.shape()), m, k, n);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

Tensor scalar_mul(const Tensor& a, double s) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * s;
    check_finite(out, "scalar_mul");
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    return tp->attach(out, [a, s](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        for (std::int64_t i = 0; i < a.size(); ++i) ga[i] += pg[i] * s;
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + s;
    check_finite(out, "add_scalar");
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    return tp->attach(out, [a](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        for (std::int64_t i = 0; i < a.size(); ++i) ga[i] += pg[i];
    });
}

Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

Tensor relu(const Tensor& a) {
    return unary_op(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh_op(const Tensor& a) {
    return unary_op(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_op(const Tensor& a) {
    return unary_op(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_op(const Tensor& a) {
    return unary_op(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_op(const Tensor& a) {
    return unary_op(
        a, "sqrt", [](double x) { return std::sqrt(x); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeMismatch("concat of zero tensors");
    const int rank = parts[0].rank();
    if (axis < 0 || axis >= rank) throw ShapeMismatch("concat axis out of range");
    Shape out_shape = parts[0].shape();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != rank) throw ShapeMismatch("concat rank mismatch");
        for (int d = 0; d < rank; ++d)
            if (d != axis && p.dim(d) != out_shape[d])
                throw ShapeMismatch("concat shape mismatch on axis " + std::to_string(d));
        total += p.dim(axis);
    }
    out_shape[axis] = total;

    std::int64_t outer, len, inner;
    axis_split(out_shape, axis, outer, len, inner);
    Tensor out(out_shape);
    double* po = out.data();
    std::int64_t col = 0;
    for (const Tensor& p : parts) {
        const std::int64_t plen = p.dim(axis) * inner;
        const double* pp = p.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(pp + o * plen, pp + (o + 1) * plen, po + o * len * inner + col);
        col += plen;
    }
    check_finite(out, "concat");

    Tape* tp = nullptr;
    for (const Tensor& p : parts) {
        if (!p.has_node()) continue;
        if (tp && tp != p.tape()) throw Error("operands belong to different tapes");
        tp = p.tape();
    }
    if (!tp) return out;
    std::vector<Tensor> saved = parts;
    return tp->attach(out, [saved, outer, len, inner](const Tensor& g, GradStore& gs) {
        const double* pg = g.data();
        std::int64_t col = 0;
        for (const Tensor& p : saved) {
            const std::int64_t plen = p.size() / outer;
            if (p.has_node()) {
                double* gp = gs.slot(p.node(), p.shape());
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = pg + o * len * inner + col;
                    double* dst = gp + o * plen;
                    for (std::int64_t i = 0; i < plen; ++i) dst[i] += src[i];
                }
            }
            col += plen;
        }
    });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    if (axis < 0 || axis >= a.rank() || start < 0 || len < 1 || start + len > a.dim(axis))
        throw ShapeMismatch("slice out of range");
    std::int64_t outer, alen, inner;
    axis_split(a.shape(), axis, outer, alen, inner);
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    Tensor out(out_shape);
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy(pa + (o * alen + start) * inner, pa + (o * alen + start + len) * inner,
                  po + o * len * inner);
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    return tp->attach(out, [a, axis, start, len, outer, alen, inner](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = pg + o * len * inner;
            double* dst = ga + (o * alen + start) * inner;
            for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        throw ShapeMismatch("reshape " + shape_str(a.shape()) + " -> " + shape_str(new_shape));
    Tensor out(new_shape, a.vec());
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    return tp->attach(out, [a](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        for (std::int64_t i = 0; i < a.size(); ++i) ga[i] += pg[i];
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeMismatch("transpose expects rank 2");
    const int m = a.dim(0), n = a.dim(1);
    Tensor out(Shape{n, m});
    const double* pa = a.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) po[static_cast<std::size_t>(j) * m + i] = pa[static_cast<std::size_t>(i) * n + j];
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    return tp->attach(out, [a, m, n](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i) ga[static_cast<std::size_t>(i) * n + j] += pg[static_cast<std::size_t>(j) * m + i];
    });
}

Tensor broadcast_to(const Tensor& a, const Shape& target) {
    const auto sa = bcast_strides(a.shape(), target);
    Tensor out(target);
    const double* pa = a.data();
    double* po = out.data();
    const std::vector<std::int64_t> zero(target.size(), 0);
    bcast_walk(target, sa, zero,
               [&](std::int64_t o, std::int64_t ia, std::int64_t) { po[o] = pa[ia]; });
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    return tp->attach(out, [a, target, sa, zero](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        bcast_walk(target, sa, zero,
                   [&](std::int64_t o, std::int64_t ia, std::int64_t) { ga[ia] += pg[o]; });
    });
}

Tensor sum(const Tensor& a, int axis, bool keepdims) {
    std::int64_t outer, len, inner;
    axis_split(a.shape(), axis, outer, len, inner);
    Tensor out(reduced_shape(a.shape(), axis, keepdims));
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t l = 0; l < len; ++l) {
            const double* src = pa + (o * len + l) * inner;
            double* dst = po + o * inner;
            for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    check_finite(out, "sum");
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    return tp->attach(out, [a, outer, len, inner](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t l = 0; l < len; ++l) {
                double* dst = ga + (o * len + l) * inner;
                const double* src = pg + o * inner;
                for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
    });
}

Tensor mean(const Tensor& a, int axis, bool keepdims) {
    return scalar_mul(sum(a, axis, keepdims), 1.0 / a.dim(axis));
}

Tensor sum_all(const Tensor& a) {
    Tensor flat = reshape(a, {static_cast<int>(a.size())});
    return sum(flat, 0);
}

Tensor mean_all(const Tensor& a) { return scalar_mul(sum_all(a), 1.0 / static_cast<double>(a.size())); }

MaxPoolResult max_pool(const Tensor& a, int axis, bool keepdims) {
    std::int64_t outer, len, inner;
    axis_split(a.shape(), axis, outer, len, inner);
    Tensor out(reduced_shape(a.shape(), axis, keepdims));
    std::vector<std::int64_t> argmax(static_cast<std::size_t>(outer * inner));
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            std::int64_t best = (o * len) * inner + i;
            double bv = pa[best];
            for (std::int64_t l = 1; l < len; ++l) {
                const std::int64_t at = (o * len + l) * inner + i;
                if (pa[at] > bv) {  // strict: ties keep the lowest index
                    bv = pa[at];
                    best = at;
                }
            }
            po[o * inner + i] = bv;
            argmax[static_cast<std::size_t>(o * inner + i)] = best;
        }
    MaxPoolResult res;
    res.argmax = argmax;
    Tape* tp = Tape::joint({&a});
    if (!tp) {
        res.values = out;
        return res;
    }
    res.values = tp->attach(out, [a, argmax](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        for (std::size_t i = 0; i < argmax.size(); ++i) ga[argmax[i]] += pg[i];
    });
    return res;
}

Tensor logsumexp(const Tensor& a, int axis, bool keepdims) {
    std::int64_t outer, len, inner;
    axis_split(a.shape(), axis, outer, len, inner);
    Tensor out(reduced_shape(a.shape(), axis, keepdims));
    const double* pa = a.data();
    double* po = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::int64_t l = 0; l < len; ++l)
                m = std::max(m, pa[(o * len + l) * inner + i]);
            double s = 0.0;
            for (std::int64_t l = 0; l < len; ++l)
                s += std::exp(pa[(o * len + l) * inner + i] - m);
            po[o * inner + i] = m + std::log(s);
        }
    check_finite(out, "logsumexp");
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    Tensor out_c = out;
    return tp->attach(out, [a, out_c, outer, len, inner](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        const double* pa = a.data();
        const double* po = out_c.data();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
                const double lse = po[o * inner + i];
                const double gv = pg[o * inner + i];
                if (gv == 0.0) continue;
                for (std::int64_t l = 0; l < len; ++l) {
                    const std::int64_t at = (o * len + l) * inner + i;
                    ga[at] += gv * std::exp(pa[at] - lse);
                }
            }
    });
}

Tensor softmax_logsumexp(const Tensor& a, int axis) {
    return exp_op(sub(a, logsumexp(a, axis, /*keepdims=*/true)));
}

Tensor l2_normalize(const Tensor& a, int axis, double eps) {
    Tensor n2 = sum(mul(a, a), axis, /*keepdims=*/true);
    Tensor den = sqrt_op(add_scalar(n2, eps * eps));
    return div(a, den);
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
    if (a.shape() != b.shape() || a.rank() != 2)
        throw ShapeMismatch("cosine_similarity expects equal rank-2 shapes");
    return sum(mul(l2_normalize(a, 1, eps), l2_normalize(b, 1, eps)), 1);
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean, std::vector<double>* batch_var) {
    if (x.rank() != 2) throw ShapeMismatch("batch_norm expects [n, c]");
    Tensor mu = mean(x, 0);                       // [c]
    Tensor xc = sub(x, mu);                       // broadcast over rows
    Tensor var = mean(mul(xc, xc), 0);            // [c], biased
    if (batch_mean) *batch_mean = mu.vec();
    if (batch_var) *batch_var = var.vec();
    Tensor xhat = div(xc, sqrt_op(add_scalar(var, eps)));
    return add(mul(xhat, gamma), beta);
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, double eps) {
    if (x.rank() != 2) throw ShapeMismatch("batch_norm expects [n, c]");
    Tensor xc = sub(x, running_mean.detached());
    Tensor xhat = div(xc, sqrt_op(add_scalar(running_var.detached(), eps)));
    return add(mul(xhat, gamma), beta);
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
    if (a.rank() != 2) throw ShapeMismatch("gather_rows expects [n, c]");
    const int n = a.dim(0), c = a.dim(1);
    for (const int r : rows)
        if (r < 0 || r >= n) throw ShapeMismatch("gather_rows index out of range");
    Tensor out(Shape{static_cast<int>(rows.size()), c});
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(pa + static_cast<std::size_t>(rows[i]) * c,
                  pa + static_cast<std::size_t>(rows[i] + 1) * c, po + i * c);
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    return tp->attach(out, [a, rows, c](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double* dst = ga + static_cast<std::size_t>(rows[i]) * c;
            const double* src = pg + i * c;
            for (int j = 0; j < c; ++j) dst[j] += src[j];
        }
    });
}

Tensor take_diag(const Tensor& a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw ShapeMismatch("take_diag expects square [n, n]");
    const int n = a.dim(0);
    Tensor out(Shape{n});
    const double* pa = a.data();
    double* po = out.data();
    for (int i = 0; i < n; ++i) po[i] = pa[static_cast<std::size_t>(i) * n + i];
    Tape* tp = Tape::joint({&a});
    if (!tp) return out;
    return tp->attach(out, [a, n](const Tensor& g, GradStore& gs) {
        double* ga = gs.slot(a.node(), a.shape());
        const double* pg = g.data();
        for (int i = 0; i < n; ++i) ga[static_cast<std::size_t>(i) * n + i] += pg[i];
    });
}

Tensor interp_rows(const Tensor& feats, const IdwPlan& plan) {
    if (feats.rank() != 2) throw ShapeMismatch("interp_rows expects [n, c]");
    const int c = feats.dim(1);
    const int q = static_cast<int>(plan.n_queries());
    Tensor out(Shape{q, c});
    const double* pf = feats.data();
    double* po = out.data();
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < plan.k; ++j) {
            const double w = plan.weights[static_cast<std::size_t>(i) * plan.k + j];
            if (w == 0.0) continue;
            const double* src = pf + static_cast<std::size_t>(plan.indices[static_cast<std::size_t>(i) * plan.k + j]) * c;
            double* dst = po + static_cast<std::size_t>(i) * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += w * src[ch];
        }
    check_finite(out, "interp_rows");
    Tape* tp = Tape::joint({&feats});
    if (!tp) return out;
    return tp->attach(out, [feats, plan, q, c](const Tensor& g, GradStore& gs) {
        double* gf = gs.slot(feats.node(), feats.shape());
        const double* pg = g.data();
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < plan.k; ++j) {
                const double w = plan.weights[static_cast<std::size_t>(i) * plan.k + j];
                if (w == 0.0) continue;
                double* dst = gf + static_cast<std::size_t>(plan.indices[static_cast<std::size_t>(i) * plan.k + j]) * c;
                const double* src = pg + static_cast<std::size_t>(i) * c;
                for (int ch = 0; ch < c; ++ch) dst[ch] += w * src[ch];
            }
    });
}

Tensor chamfer_to(const Tensor& pred, const std::vector<Vec3>& target) {
    if (pred.rank() != 2 || pred.dim(1) != 3) throw ShapeMismatch("chamfer_to expects [m, 3]");
    if (pred.dim(0) == 0 || target.empty()) throw EmptyCloud("chamfer needs nonempty clouds");
    const int m = pred.dim(0);
    const int n = static_cast<int>(target.size());
    const double* pp = pred.data();

    auto pred_at = [&](int j) {
        return Vec3{pp[3 * j], pp[3 * j + 1], pp[3 * j + 2]};
    };

    // pred -> target nearest
    std::vector<int> near_t(m);
    std::vector<double> dist_t(m);
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
        const Vec3 p = pred_at(j);
        double best = std::numeric_limits<double>::infinity();
        int bi = 0;
        for (int i = 0; i < n; ++i) {
            const double d = norm2(p - target[static_cast<std::size_t>(i)]);
            if (d < best) {
                best = d;
                bi = i;
            }
        }
        near_t[j] = bi;
        dist_t[j] = std::sqrt(best);
        total += dist_t[j];
    }
    // target -> pred nearest
    std::vector<int> near_p(n);
    std::vector<double> dist_p(n);
    for (int i = 0; i < n; ++i) {
        const Vec3 t = target[static_cast<std::size_t>(i)];
        double best = std::numeric_limits<double>::infinity();
        int bj = 0;
        for (int j = 0; j < m; ++j) {
            const double d = norm2(pred_at(j) - t);
            if (d < best) {
                best = d;
                bj = j;
            }
        }
        near_p[i] = bj;
        dist_p[i] = std::sqrt(best);
        total += dist_p[i];
    }

    Tensor out = Tensor::scalar(total);
    check_finite(out, "chamfer");
    Tape* tp = Tape::joint({&pred});
    if (!tp) return out;
    return tp->attach(out, [pred, target, near_t, dist_t, near_p, dist_p, m, n](const Tensor& g,
                                                                                GradStore& gs) {
        double* gp = gs.slot(pred.node(), pred.shape());
        const double gv = g.item();
        const double* pp = pred.data();
        for (int j = 0; j < m; ++j) {
            if (dist_t[j] <= 0.0) continue;
            const Vec3 d = Vec3{pp[3 * j], pp[3 * j + 1], pp[3 * j + 2]} -
                           target[static_cast<std::size_t>(near_t[j])];
            const double s = gv / dist_t[j];
            gp[3 * j] += s * d.x;
            gp[3 * j + 1] += s * d.y;
            gp[3 * j + 2] += s * d.z;
        }
        for (int i = 0; i < n; ++i) {
            if (dist_p[i] <= 0.0) continue;
            const int j = near_p[i];
            const Vec3 d = Vec3{pp[3 * j], pp[3 * j + 1], pp[3 * j + 2]} -
                           target[static_cast<std::size_t>(i)];
            const double s = gv / dist_p[i];
            gp[3 * j] += s * d.x;
            gp[3 * j + 1] += s * d.y;
            gp[3 * j + 2] += s * d.z;
        }
    });
}

Tensor points_tensor(const std::vector<Vec3>& pts) {
    Tensor out(Shape{static_cast<int>(pts.size()), 3});
    double* po = out.data();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        po[3 * i] = pts[i].x;
        po[3 * i + 1] = pts[i].y;
        po[3 * i + 2] = pts[i].z;
    }
    return out;
}

}  // namespace cpnet
