#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cpnet/tensor.hpp"

namespace cpnet {

struct AdamHyper {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named trainable parameters plus non-trainable buffers (e.g. batch-norm
// running statistics), with per-parameter Adam state. Iteration order is the
// sorted name order everywhere, which keeps runs reproducible.
class ParamStore {
public:
    struct Entry {
        Tensor value;
        bool trainable = true;
        Tensor adam_m, adam_v;  // allocated on first optimizer step
        std::int64_t adam_step = 0;
    };

    Tensor& create(const std::string& name, Tensor init, bool trainable = true);
    bool contains(const std::string& name) const { return entries_.count(name) > 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    void set_value(const std::string& name, const std::vector<double>& data);
    bool is_trainable(const std::string& name) const;

    std::vector<std::string> names() const;
    std::size_t size() const { return entries_.size(); }
    std::int64_t trainable_elements() const;

    Entry& entry(const std::string& name);
    const std::map<std::string, Entry>& entries() const { return entries_; }

    // Deep copy (fresh storage for every tensor).
    ParamStore clone() const;

    // Flat container: "CPNETPS1" magic, a name/shape/offset index, then raw
    // little-endian f64 payloads (value, then Adam moments when present).
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

    // In-memory form of the same container, used by checkpoints.
    std::vector<std::uint8_t> serialize() const;
    static ParamStore deserialize(const std::uint8_t* data, std::size_t size);

private:
    std::map<std::string, Entry> entries_;
};

using GradMap = std::map<std::string, Tensor>;

// One bias-corrected Adam update. Gradients are looked up by name; parameters
// without a gradient entry are left untouched, gradients with no matching
// parameter (or a mismatched shape) raise Misaligned.
void adam_step(ParamStore& store, const GradMap& grads, const AdamHyper& hyper);

// Binds store parameters onto a tape on first use and remembers the node ids
// so gradients can be read back by name after Tape::backward.
class ParamBinder {
public:
    ParamBinder(Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {}

    // Trainable (watched) view of a parameter.
    Tensor operator()(const std::string& name);
    // Constant view of a buffer; never watched.
    const Tensor& buffer(const std::string& name) const;

    Tape& tape() { return *tape_; }
    ParamStore& store() { return *store_; }

    // Per-name gradients for every parameter touched through this binder;
    // untouched or unreachable parameters get zeros.
    GradMap gradients(const GradStore& gs) const;

private:
    Tape* tape_;
    ParamStore* store_;
    std::map<std::string, Tensor> bound_;
};

struct GradCheckOptions {
    double h = 1e-5;
    // Number of parameter elements to probe; 0 checks every element.
    int sample = 0;
    std::uint64_t seed = 17;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    std::int64_t evaluated = 0;
};

// Central-difference check of analytic gradients. loss_fn must be a pure
// function of the store contents; it is invoked with a fresh tape each time.
GradCheckResult grad_check(ParamStore& store,
                           const std::function<Tensor(Tape&, ParamBinder&)>& loss_fn,
                           const GradCheckOptions& opts = {});

}  // namespace cpnet
