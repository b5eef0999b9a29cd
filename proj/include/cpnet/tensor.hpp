#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cpnet/geometry.hpp"
#include "cpnet/vec3.hpp"

namespace cpnet {

class Tape;

using Shape = std::vector<int>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major double tensor. Copies share immutable storage; an optional
// node id ties a tensor to the Tape that produced it.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor full(Shape shape, double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }

    const double* data() const { return data_->data(); }
    double* data() { return data_->data(); }
    const std::vector<double>& vec() const { return *data_; }

    double item() const;  // value of a one-element tensor
    double at(int i) const { return (*data_)[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const { return (*data_)[static_cast<std::size_t>(i) * shape_[1] + j]; }

    bool has_node() const { return node_ >= 0; }
    int node() const { return node_; }
    Tape* tape() const { return tape_; }
    Tensor detached() const;  // same storage, no tape link

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
    friend class Tape;
};

// Per-node gradient buffers produced by Tape::backward.
class GradStore {
public:
    explicit GradStore(std::size_t n_nodes) : grads_(n_nodes) {}
    // Accumulation slot for a node, allocated as zeros on first touch.
    double* slot(int node, const Shape& shape);
    bool has(int node) const { return grads_[static_cast<std::size_t>(node)].defined(); }
    // Gradient of a node; zeros(shape) if the node was never reached.
    Tensor grad(int node, const Shape& shape) const;

private:
    std::vector<Tensor> grads_;
};

// Reverse-mode differentiation record. Nodes are appended in execution order,
// so walking them backwards is a valid topological sweep. Single-threaded by
// contract; independent tapes on separate threads are fine.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers t as a leaf of this tape.
    Tensor watch(const Tensor& t);

    // Gradients of a scalar loss with respect to every reachable node.
    // A loss with no tape link yields an all-zero GradStore. Repeated calls
    // return identical results.
    GradStore backward(const Tensor& loss) const;

    std::size_t num_nodes() const { return nodes_.size(); }

    using BackFn = std::function<void(const Tensor& grad_out, GradStore& gs)>;
    // Used by op implementations: links `out` to this tape.
    Tensor attach(Tensor out, BackFn back);

    // Tape shared by the given tensors; null when all are constants.
    // Mixing tapes throws.
    static Tape* joint(std::initializer_list<const Tensor*> ts);

private:
    struct Node {
        BackFn back;  // null for leaves
    };
    std::vector<Node> nodes_;
};

// When enabled, every op output is scanned for NaN/Inf (throws NonFinite).
void set_finite_checks(bool on);
bool finite_checks_enabled();

// ---- primitive ops -------------------------------------------------------
// Binary elementwise ops broadcast numpy-style (ranks right-aligned, each
// dimension equal or 1).

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor sqrt_op(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor transpose(const Tensor& a);  // rank 2
Tensor broadcast_to(const Tensor& a, const Shape& target);
Tensor sum(const Tensor& a, int axis, bool keepdims = false);
Tensor mean(const Tensor& a, int axis, bool keepdims = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

struct MaxPoolResult {
    Tensor values;
    std::vector<std::int64_t> argmax;  // flat input index per output element, ties to lowest
};
MaxPoolResult max_pool(const Tensor& a, int axis, bool keepdims = false);

// Numerically stable log(sum(exp(x))) along an axis; gradient is softmax(x).
Tensor logsumexp(const Tensor& a, int axis, bool keepdims = false);
Tensor softmax_logsumexp(const Tensor& a, int axis);

// Rows scaled to unit Euclidean norm: x / sqrt(sum(x^2, axis) + eps^2).
Tensor l2_normalize(const Tensor& a, int axis, double eps = 1e-12);

// Per-row cosine similarity of two equally shaped rank-2 tensors -> [n].
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-12);

// Batch normalization over axis 0 of [n, c] using batch statistics. Built
// from primitives, so it differentiates like any composite. batch_mean /
// batch_var, when given, receive the statistics for running updates.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean = nullptr,
                        std::vector<double>* batch_var = nullptr);
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, double eps);

// ---- point-cloud flavored ops --------------------------------------------

// [len(rows), c] from a [n, c] tensor; backward scatter-adds.
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);

// Diagonal of a square matrix -> [n].
Tensor take_diag(const Tensor& a);

// Applies a fixed IDW stencil to [n_src, c] features -> [n_query, c].
Tensor interp_rows(const Tensor& feats, const IdwPlan& plan);

// Two-directional non-squared chamfer distance between a differentiable
// prediction [m, 3] and a constant target cloud -> scalar. Nearest-neighbor
// assignments are treated as locally constant; an exactly zero pair
// contributes zero gradient.
Tensor chamfer_to(const Tensor& pred, const std::vector<Vec3>& target);

Tensor points_tensor(const std::vector<Vec3>& pts);  // constant [n, 3]

}  // namespace cpnet
