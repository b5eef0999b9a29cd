#include "cpnet/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cpnet/errors.hpp"
#include "cpnet/rng.hpp"

namespace cpnet {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64s(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
    for (const double d : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u64(out, bits);
    }
}

struct Reader {
    const std::uint8_t* p;
    std::size_t left;

    void need(std::size_t n) const {
        if (left < n) throw ParseError("<container>", 0, "truncated parameter container");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        p += 4;
        left -= 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        p += 8;
        left -= 8;
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
    std::vector<double> f64s(std::size_t n) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t bits = u64();
            std::memcpy(&v[i], &bits, 8);
        }
        return v;
    }
};

constexpr char kMagic[9] = "CPNETPS1";

}  // namespace

Tensor& ParamStore::create(const std::string& name, Tensor init, bool trainable) {
    if (entries_.count(name)) throw Error("parameter '" + name + "' already exists");
    Entry e;
    e.value = std::move(init);
    e.trainable = trainable;
    return entries_.emplace(name, std::move(e)).first->second.value;
}

const Tensor& ParamStore::get(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second.value;
}

Tensor& ParamStore::get(const std::string& name) {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second.value;
}

void ParamStore::set_value(const std::string& name, const std::vector<double>& data) {
    Tensor& t = get(name);
    if (static_cast<std::int64_t>(data.size()) != t.size())
        throw Misaligned("set_value size mismatch for '" + name + "'");
    std::copy(data.begin(), data.end(), t.data());
}

bool ParamStore::is_trainable(const std::string& name) const {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second.trainable;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

std::int64_t ParamStore::trainable_elements() const {
    std::int64_t n = 0;
    for (const auto& [k, e] : entries_)
        if (e.trainable) n += e.value.size();
    return n;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    const auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& [name, e] : entries_) {
        Entry c;
        c.value = Tensor(e.value.shape(), e.value.vec());
        c.trainable = e.trainable;
        if (e.adam_m.defined()) c.adam_m = Tensor(e.adam_m.shape(), e.adam_m.vec());
        if (e.adam_v.defined()) c.adam_v = Tensor(e.adam_v.shape(), e.adam_v.vec());
        c.adam_step = e.adam_step;
        out.entries_.emplace(name, std::move(c));
    }
    return out;
}

std::vector<std::uint8_t> ParamStore::serialize() const {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, 1);  // version
    put_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(e.trainable ? 1 : 0);
        out.push_back(static_cast<std::uint8_t>(e.value.rank()));
        for (const int d : e.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        out.push_back(e.adam_m.defined() ? 1 : 0);
        put_u64(out, static_cast<std::uint64_t>(e.adam_step));
        put_f64s(out, e.value.vec());
        if (e.adam_m.defined()) {
            put_f64s(out, e.adam_m.vec());
            put_f64s(out, e.adam_v.vec());
        }
    }
    return out;
}

ParamStore ParamStore::deserialize(const std::uint8_t* data, std::size_t size) {
    Reader r{data, size};
    if (r.str(8) != std::string(kMagic, kMagic + 8))
        throw VersionMismatch("not a parameter container");
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw VersionMismatch("unsupported container version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    ParamStore store;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const bool trainable = r.str(1)[0] != 0;
        const int rank = static_cast<unsigned char>(r.str(1)[0]);
        Shape shape(static_cast<std::size_t>(rank));
        for (int d = 0; d < rank; ++d) shape[static_cast<std::size_t>(d)] = static_cast<int>(r.u32());
        const bool has_adam = r.str(1)[0] != 0;
        const std::int64_t step = static_cast<std::int64_t>(r.u64());
        const std::size_t n = static_cast<std::size_t>(numel(shape));
        Entry e;
        e.value = Tensor(shape, r.f64s(n));
        e.trainable = trainable;
        e.adam_step = step;
        if (has_adam) {
            e.adam_m = Tensor(shape, r.f64s(n));
            e.adam_v = Tensor(shape, r.f64s(n));
        }
        store.entries_.emplace(name, std::move(e));
    }
    return store;
}

void ParamStore::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound(path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes.data(), bytes.size());
}

void adam_step(ParamStore& store, const GradMap& grads, const AdamHyper& hyper) {
    if (hyper.lr <= 0.0) throw Error("adam: lr must be positive");
    for (const auto& [name, grad] : grads) {
        if (!store.contains(name)) throw Misaligned("gradient for unknown parameter '" + name + "'");
        ParamStore::Entry& e = store.entry(name);
        if (!e.trainable) throw Misaligned("gradient for non-trainable buffer '" + name + "'");
        if (grad.shape() != e.value.shape())
            throw Misaligned("gradient shape mismatch for '" + name + "'");
        if (!e.adam_m.defined()) {
            e.adam_m = Tensor(e.value.shape());
            e.adam_v = Tensor(e.value.shape());
        }
        ++e.adam_step;
        const double b1 = hyper.beta1, b2 = hyper.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(e.adam_step));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(e.adam_step));
        double* p = e.value.data();
        double* m = e.adam_m.data();
        double* v = e.adam_v.data();
        const double* g = grad.data();
        const std::int64_t n = e.value.size();
        for (std::int64_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
        }
    }
}

Tensor ParamBinder::operator()(const std::string& name) {
    const auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Tensor watched = tape_->watch(store_->get(name));
    bound_.emplace(name, watched);
    return watched;
}

const Tensor& ParamBinder::buffer(const std::string& name) const { return store_->get(name); }

GradMap ParamBinder::gradients(const GradStore& gs) const {
    GradMap out;
    for (const auto& [name, t] : bound_) out.emplace(name, gs.grad(t.node(), t.shape()));
    return out;
}

GradCheckResult grad_check(ParamStore& store,
                           const std::function<Tensor(Tape&, ParamBinder&)>& loss_fn,
                           const GradCheckOptions& opts) {
    // Analytic pass.
    GradMap analytic;
    {
        Tape tape;
        ParamBinder binder(tape, store);
        const Tensor loss = loss_fn(tape, binder);
        const GradStore gs = tape.backward(loss);
        analytic = binder.gradients(gs);
    }

    auto eval = [&]() {
        Tape tape;
        ParamBinder binder(tape, store);
        return loss_fn(tape, binder).item();
    };

    // Every trainable element, optionally subsampled.
    std::vector<std::pair<std::string, std::int64_t>> probes;
    for (const std::string& name : store.names()) {
        if (!store.is_trainable(name)) continue;
        const std::int64_t n = store.get(name).size();
        for (std::int64_t i = 0; i < n; ++i) probes.emplace_back(name, i);
    }
    if (opts.sample > 0 && static_cast<std::int64_t>(probes.size()) > opts.sample) {
        Rng rng(substream(opts.seed, "gradcheck"));
        for (std::size_t i = probes.size(); i > 1; --i)
            std::swap(probes[i - 1], probes[rng.below(i)]);
        probes.resize(static_cast<std::size_t>(opts.sample));
    }

    GradCheckResult res;
    for (const auto& [name, idx] : probes) {
        double* slot = store.get(name).data() + idx;
        const double saved = *slot;
        *slot = saved + opts.h;
        const double f_plus = eval();
        *slot = saved - opts.h;
        const double f_minus = eval();
        *slot = saved;
        const double fd = (f_plus - f_minus) / (2.0 * opts.h);
        const double an = analytic.count(name) ? analytic.at(name).at(static_cast<int>(idx)) : 0.0;
        const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
        ++res.evaluated;
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_param = name;
            res.worst_index = idx;
        }
    }
    return res;
}

}  // namespace cpnet
