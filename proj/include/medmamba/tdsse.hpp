#pragma once

#include <optional>
#include <string>
#include <vector>

#include "medmamba/fft.hpp"
#include "medmamba/ops.hpp"
#include "medmamba/ops_fft.hpp"
#include "medmamba/ops_nn.hpp"
#include "medmamba/params.hpp"
#include "medmamba/ssm.hpp"

namespace medmamba {

// Tri-branch temporal encoder: raw and first-difference views through
// bidirectional SSMs, a spectral view through a learnable complex filter,
// local element gates per branch, and a softmax over views. Ablations drop
// branches; a single remaining view gets weight 1.
struct TdsseIds {
    BiSsmIds raw;
    BiSsmIds diff;
    int wfreq = -1;  // (2, F, 1, D)
    std::vector<int> lg_W, lg_b;  // one local gate per active view
    int mlp1 = -1, mlp2 = -1;     // (v*D, Hg), (Hg, v)
    bool has_diff = true, has_freq = true;
    int64_t D = 0, Hg = 0;

    int64_t n_views() const { return 1 + (has_diff ? 1 : 0) + (has_freq ? 1 : 0); }
};

template <typename R>
TdsseIds make_tdsse(ParamStore<R>& ps, const std::string& prefix, int64_t T, int64_t D,
                    int64_t N, int64_t E, int64_t d_conv, bool has_diff, bool has_freq,
                    Rng& rng) {
    TdsseIds ids;
    ids.has_diff = has_diff;
    ids.has_freq = has_freq;
    ids.D = D;
    ids.Hg = D;
    ids.raw = make_bissm(ps, prefix + ".raw", D, N, E, d_conv, rng);
    if (has_diff) ids.diff = make_bissm(ps, prefix + ".diff", D, N, E, d_conv, rng);
    if (has_freq) {
        // identity filter at init: 1 + 0i in every bin
        const int64_t F = fft::rfft_bins(T);
        Tensor<R> w(Shape{2, F, 1, D});
        for (int64_t i = 0; i < F * D; ++i) w[i] = R(1);
        ids.wfreq = ps.add(prefix + ".wfreq", std::move(w));
    }
    const int64_t v = ids.n_views();
    for (int64_t i = 0; i < v; ++i) {
        const std::string tag = prefix + ".gate" + std::to_string(i);
        ids.lg_W.push_back(ps.add_uniform(tag + ".W", {D, D}, D, rng));
        ids.lg_b.push_back(ps.add_zeros(tag + ".b", {D}));
    }
    if (v > 1) {
        ids.mlp1 = ps.add_uniform(prefix + ".mlp1", {v * D, ids.Hg}, v * D, rng);
        ids.mlp2 = ps.add_uniform(prefix + ".mlp2", {ids.Hg, v}, ids.Hg, rng);
    }
    return ids;
}

// Spectral view: per-bin complex filtering along the time axis; real
// output by construction. The imaginary filter components of bin 0 (and
// the Nyquist bin for even T) cannot affect a real signal, so they are
// masked out of the computation entirely rather than left as degenerate
// parameters.
template <typename R>
Var<R> freq_view(Var<R> z, Var<R> wfreq) {
    const int64_t T = z.value().dim(0);
    const Shape ws = wfreq.shape();
    const int64_t F = ws[1], D = ws[3];
    Tensor<R> mask = Tensor<R>::full(ws, R(1));
    for (int64_t d = 0; d < D; ++d) {
        mask[F * D + 0 * D + d] = R(0);  // imag plane, bin 0
        if (T % 2 == 0) mask[F * D + (T / 2) * D + d] = R(0);
    }
    auto weff = mul(wfreq, z.tape->constant(std::move(mask)));
    return irfft(complex_mul(rfft(z), weff), T);
}

template <typename R>
Var<R> local_gate(Var<R> h, Var<R> W, Var<R> b) {
    return mul(sigmoid(add(matmul(h, W), b)), h);
}

template <typename R>
struct TdsseOut {
    Var<R> z_temp;
    Var<R> alpha;  // (n_views)
};

// h is the normalized layer input, residual the un-normalized stream.
// alpha_override pins the view weights (used by tests and diagnostics);
// dropout_mask, when bound, multiplies the fused pre-residual term.
template <typename R>
TdsseOut<R> tdsse_forward(const Bound<R>& p, const TdsseIds& ids, Var<R> h, Var<R> residual,
                          std::optional<Var<R>> dropout_mask = std::nullopt,
                          std::optional<Tensor<R>> alpha_override = std::nullopt) {
    Tape<R>& t = *h.tape;
    std::vector<Var<R>> views;
    views.push_back(bidirectional_ssm(p, ids.raw, h, 0));
    if (ids.has_diff) views.push_back(bidirectional_ssm(p, ids.diff, diff_time(h), 0));
    if (ids.has_freq) views.push_back(freq_view(h, p[ids.wfreq]));

    std::vector<Var<R>> gated;
    for (size_t i = 0; i < views.size(); ++i)
        gated.push_back(local_gate(views[i], p[ids.lg_W[i]], p[ids.lg_b[i]]));

    const int64_t v = static_cast<int64_t>(views.size());
    Var<R> alpha;
    if (alpha_override) {
        if (alpha_override->numel() != v)
            throw std::invalid_argument("tdsse: alpha override size mismatch");
        alpha = t.constant(alpha_override->clone());
    } else if (v == 1) {
        alpha = t.constant(Tensor<R>::full(Shape{1}, R(1)));
    } else {
        std::vector<Var<R>> pooled;
        for (auto& g : gated) pooled.push_back(mean_axes(g, {0, 1}));  // (D)
        auto cat = concat_lastdim<R>(pooled);                          // (v*D)
        auto hidden = silu(matmul(cat, p[ids.mlp1]));
        alpha = softmax_lastdim(matmul(hidden, p[ids.mlp2]));
    }

    Var<R> fused = scale_by_element(gated[0], alpha, 0);
    for (int64_t i = 1; i < v; ++i)
        fused = add(fused, scale_by_element(gated[i], alpha, i));
    if (dropout_mask) fused = mul(fused, *dropout_mask);

    TdsseOut<R> out;
    out.z_temp = add(fused, residual);
    out.alpha = alpha;
    return out;
}

}  // namespace medmamba
