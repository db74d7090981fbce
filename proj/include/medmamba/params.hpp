#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "medmamba/rng.hpp"
#include "medmamba/tape.hpp"
#include "medmamba/tensor.hpp"

namespace medmamba {

// Flat, creation-ordered parameter store. The order is the checkpoint
// order and the gradient-accumulation order, so it must be deterministic.
template <typename R>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<R> value;
    };

    int add(std::string name, Tensor<R> value) {
        entries_.push_back({std::move(name), std::move(value)});
        return static_cast<int>(entries_.size()) - 1;
    }

    int add_uniform(std::string name, Shape shape, int64_t fan_in, Rng& rng) {
        Tensor<R> t(std::move(shape));
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<R>(rng.uniform(-bound, bound));
        return add(std::move(name), std::move(t));
    }

    int add_normal_scaled(std::string name, Shape shape, double scale, Rng& rng) {
        Tensor<R> t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<R>(rng.normal() * scale);
        return add(std::move(name), std::move(t));
    }

    int add_zeros(std::string name, Shape shape) { return add(std::move(name), Tensor<R>(std::move(shape))); }

    int add_full(std::string name, Shape shape, R v) {
        return add(std::move(name), Tensor<R>::full(std::move(shape), v));
    }

    size_t size() const { return entries_.size(); }
    Entry& entry(int i) { return entries_[i]; }
    const Entry& entry(int i) const { return entries_[i]; }
    Tensor<R>& value(int i) { return entries_[i].value; }
    const Tensor<R>& value(int i) const { return entries_[i].value; }

    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

    template <typename R2>
    ParamStore<R2> cast() const {
        ParamStore<R2> out;
        for (const auto& e : entries_) out.add(e.name, e.value.template cast<R2>());
        return out;
    }

private:
    std::vector<Entry> entries_;
};

// All parameters of a store bound as leaves of one tape, in store order.
template <typename R>
struct Bound {
    Tape<R>* tape = nullptr;
    std::vector<Var<R>> vars;

    Var<R> operator[](int i) const { return vars[i]; }
};

template <typename R>
Bound<R> bind(Tape<R>& tape, const ParamStore<R>& store, bool requires_grad) {
    Bound<R> b;
    b.tape = &tape;
    b.vars.reserve(store.size());
    for (size_t i = 0; i < store.size(); ++i)
        b.vars.push_back(tape.leaf(store.value(static_cast<int>(i)), requires_grad));
    return b;
}

// Adds the bound leaves' gradients into a store-aligned accumulator.
template <typename R>
void harvest_grads(const Bound<R>& b, std::vector<Tensor<R>>& acc) {
    for (size_t i = 0; i < b.vars.size(); ++i) {
        const Tensor<R>& g = b.vars[i].grad();
        if (!g.defined()) continue;
        if (!acc[i].defined()) acc[i] = Tensor<R>(b.vars[i].value().shape());
        for (int64_t j = 0; j < g.numel(); ++j) acc[i][j] += g[j];
    }
}

// Checkpoint format: a text header of "name dim0 dim1 ..." lines bracketed
// by counts, then the raw little-endian f32 payload in header order.
template <typename R>
void save_checkpoint(const ParamStore<R>& store, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    f << "medmamba-checkpoint v1\n" << store.size() << "\n";
    for (size_t i = 0; i < store.size(); ++i) {
        const auto& e = store.entry(static_cast<int>(i));
        f << e.name;
        for (int64_t d : e.value.shape()) f << " " << d;
        f << "\n";
    }
    f << "payload\n";
    for (size_t i = 0; i < store.size(); ++i) {
        const auto& v = store.value(static_cast<int>(i));
        std::vector<float> buf(v.numel());
        for (int64_t j = 0; j < v.numel(); ++j) buf[j] = static_cast<float>(v[j]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
}

template <typename R>
void load_checkpoint(ParamStore<R>& store, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
    std::string magic, version;
    f >> magic >> version;
    if (magic != "medmamba-checkpoint" || version != "v1")
        throw std::runtime_error("checkpoint: bad header in " + path);
    size_t count = 0;
    f >> count;
    if (count != store.size())
        throw std::runtime_error("checkpoint: parameter count mismatch: file has " +
                                 std::to_string(count) + ", model has " +
                                 std::to_string(store.size()));
    f >> std::ws;
    for (size_t i = 0; i < count; ++i) {
        std::string line;
        std::getline(f, line);
        std::istringstream is(line);
        std::string name;
        is >> name;
        Shape shape;
        int64_t d;
        while (is >> d) shape.push_back(d);
        const auto& e = store.entry(static_cast<int>(i));
        if (name != e.name || shape != e.value.shape())
            throw std::runtime_error("checkpoint: entry " + std::to_string(i) + " expected " +
                                     e.name + shape_str(e.value.shape()) + ", file has " + name +
                                     shape_str(shape));
    }
    std::string payload;
    std::getline(f, payload);
    if (payload != "payload") throw std::runtime_error("checkpoint: missing payload marker");
    for (size_t i = 0; i < count; ++i) {
        auto& v = store.value(static_cast<int>(i));
        std::vector<float> buf(v.numel());
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f) throw std::runtime_error("checkpoint: truncated payload");
        for (int64_t j = 0; j < v.numel(); ++j) v[j] = static_cast<R>(buf[j]);
    }
}

}  // namespace medmamba
