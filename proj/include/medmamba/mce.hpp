#pragma once

#include <string>
#include <vector>

#include "medmamba/ops.hpp"
#include "medmamba/ops_nn.hpp"
#include "medmamba/params.hpp"

namespace medmamba {

// Multi-scale convolutional embedding: per-scale depthwise temporal convs,
// a pointwise lift to D features per scale, concatenation, projection to D
// and a LayerNorm. Everything before the projection is per-channel.
struct MceIds {
    std::vector<int> dw;    // per scale: (C, k_m)
    std::vector<int> lift;  // per scale: (1, D)
    int proj = -1;          // (M*D, D)
    int ln_gain = -1, ln_bias = -1;
    std::vector<int64_t> kernels;
    int64_t D = 0;
};

template <typename R>
MceIds make_mce(ParamStore<R>& ps, const std::string& prefix, int64_t C, int64_t D,
                const std::vector<int64_t>& kernels, Rng& rng) {
    if (kernels.empty()) throw std::invalid_argument("mce: at least one kernel scale required");
    MceIds ids;
    ids.kernels = kernels;
    ids.D = D;
    for (size_t m = 0; m < kernels.size(); ++m) {
        const std::string tag = prefix + ".scale" + std::to_string(kernels[m]);
        ids.dw.push_back(ps.add_uniform(tag + ".dw", {C, kernels[m]}, kernels[m], rng));
        ids.lift.push_back(ps.add_uniform(tag + ".lift", {1, D}, 1, rng));
    }
    const int64_t M = static_cast<int64_t>(kernels.size());
    ids.proj = ps.add_uniform(prefix + ".proj", {M * D, D}, M * D, rng);
    ids.ln_gain = ps.add_full(prefix + ".ln_gain", {D}, R(1));
    ids.ln_bias = ps.add_zeros(prefix + ".ln_bias", {D});
    return ids;
}

// One scale's per-channel features (T, C, D), for the kernel ablations.
template <typename R>
Var<R> mce_single_scale(const Bound<R>& p, const MceIds& ids, Var<R> x, size_t m) {
    const int64_t T = x.value().dim(0), C = x.value().dim(1);
    auto c1 = conv1d_dw(x, p[ids.dw[m]], ConvMode::Same);        // (T, C)
    auto col = reshape(c1, {T * C, 1});
    auto lifted = matmul(col, p[ids.lift[m]]);                   // (T*C, D)
    return reshape(lifted, {T, C, ids.D});
}

// Full embedding x (T, C) -> (T, C, D).
template <typename R>
Var<R> mce_embed(const Bound<R>& p, const MceIds& ids, Var<R> x) {
    const int64_t T = x.value().dim(0), C = x.value().dim(1);
    std::vector<Var<R>> scales;
    for (size_t m = 0; m < ids.kernels.size(); ++m) {
        auto c1 = conv1d_dw(x, p[ids.dw[m]], ConvMode::Same);
        auto col = reshape(c1, {T * C, 1});
        scales.push_back(matmul(col, p[ids.lift[m]]));  // (T*C, D)
    }
    auto cat = (scales.size() == 1) ? scales[0] : concat_lastdim<R>(scales);
    auto proj = matmul(cat, p[ids.proj]);  // (T*C, D)
    auto normed = layernorm(proj, p[ids.ln_gain], p[ids.ln_bias]);
    return reshape(normed, {T, C, ids.D});
}

// Single linear embedding used by the no-MCE ablation: a pointwise lift of
// the scalar sample value to D features, then the same LayerNorm.
struct LinearEmbedIds {
    int lift = -1;
    int ln_gain = -1, ln_bias = -1;
    int64_t D = 0;
};

template <typename R>
LinearEmbedIds make_linear_embed(ParamStore<R>& ps, const std::string& prefix, int64_t D,
                                 Rng& rng) {
    LinearEmbedIds ids;
    ids.D = D;
    ids.lift = ps.add_uniform(prefix + ".lift", {1, D}, 1, rng);
    ids.ln_gain = ps.add_full(prefix + ".ln_gain", {D}, R(1));
    ids.ln_bias = ps.add_zeros(prefix + ".ln_bias", {D});
    return ids;
}

template <typename R>
Var<R> linear_embed(const Bound<R>& p, const LinearEmbedIds& ids, Var<R> x) {
    const int64_t T = x.value().dim(0), C = x.value().dim(1);
    auto col = reshape(x, {T * C, 1});
    auto lifted = matmul(col, p[ids.lift]);
    auto normed = layernorm(lifted, p[ids.ln_gain], p[ids.ln_bias]);
    return reshape(normed, {T, C, ids.D});
}

}  // namespace medmamba
