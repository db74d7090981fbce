#pragma once

#include <stdexcept>
#include <vector>

#include "medmamba/fft.hpp"
#include "medmamba/ops.hpp"
#include "medmamba/tape.hpp"

namespace medmamba {

// Complex tensors on the tape use the stacked layout (2, ...): plane 0 is
// the real part, plane 1 the imaginary part.

// Real FFT along axis 0: x (T, ...) -> (2, F, ...) with F = T/2 + 1.
template <typename R>
Var<R> rfft(Var<R> x) {
    Tape<R>& t = *x.tape;
    const Tensor<R>& xv = x.value();
    if (xv.rank() < 1 || xv.dim(0) < 1) throw std::invalid_argument("rfft: T >= 1 required");
    const int64_t T = xv.dim(0);
    const int64_t L = xv.numel() / T;
    const int64_t F = fft::rfft_bins(T);

    Shape os{2, F};
    for (size_t i = 1; i < xv.rank(); ++i) os.push_back(xv.dim(i));
    Tensor<R> out = Tensor<R>::uninit(os);
    fft::rfft_lanes<R>(xv.data(), T, L, out.data(), out.data() + F * L);

    const bool rg = t.node(x.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t xid = x.id, oid = o.id;
    t.set_backward(o, [xid, oid, T, L, F](Tape<R>& tp) {
        // adjoint: zero-pad the F bins to T and run the unnormalized
        // inverse transform; the real plane is dL/dx
        const Tensor<R>& g = tp.node(oid).grad;
        std::vector<R> re(T * L, R(0)), im(T * L, R(0));
        std::copy(g.data(), g.data() + F * L, re.begin());
        std::copy(g.data() + F * L, g.data() + 2 * F * L, im.begin());
        fft::fft_rows<R>(re.data(), im.data(), T, L, +1);
        Tensor<R>& gx = tp.grad_buffer(xid);
        for (int64_t i = 0; i < T * L; ++i) gx[i] += re[i];
    });
    return o;
}

// Inverse real FFT along axis 0: z (2, F, ...) -> (T, ...).
template <typename R>
Var<R> irfft(Var<R> z, int64_t T) {
    Tape<R>& t = *z.tape;
    const Tensor<R>& zv = z.value();
    if (zv.rank() < 2 || zv.dim(0) != 2)
        throw std::invalid_argument("irfft: stacked complex input required");
    const int64_t F = zv.dim(1);
    if (F != fft::rfft_bins(T))
        throw std::invalid_argument("irfft: bin count mismatch: " + std::to_string(F) +
                                    " bins for T = " + std::to_string(T));
    const int64_t L = zv.numel() / (2 * F);

    Shape os{T};
    for (size_t i = 2; i < zv.rank(); ++i) os.push_back(zv.dim(i));
    Tensor<R> out = Tensor<R>::uninit(os);
    fft::irfft_lanes<R>(zv.data(), zv.data() + F * L, T, L, out.data());

    const bool rg = t.node(z.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t zid = z.id, oid = o.id;
    t.set_backward(o, [zid, oid, T, L, F](Tape<R>& tp) {
        // adjoint: forward transform of the output gradient; interior bins
        // pick up a factor 2 from the Hermitian completion
        const Tensor<R>& g = tp.node(oid).grad;
        std::vector<R> re(g.data(), g.data() + T * L), im(T * L, R(0));
        fft::fft_rows<R>(re.data(), im.data(), T, L, -1);
        Tensor<R>& gz = tp.grad_buffer(zid);
        const R invT = R(1) / static_cast<R>(T);
        for (int64_t k = 0; k < F; ++k) {
            const bool edge = (k == 0) || (T % 2 == 0 && k == T / 2);
            const R w = (edge ? R(1) : R(2)) * invT;
            for (int64_t l = 0; l < L; ++l) {
                gz[k * L + l] += w * re[k * L + l];
                gz[F * L + k * L + l] += w * im[k * L + l];
            }
        }
    });
    return o;
}

// Elementwise complex product z * w where both are stacked (2, F, C, D) and
// w broadcasts over the channel axis (extent 1).
template <typename R>
Var<R> complex_mul(Var<R> z, Var<R> w) {
    Tape<R>& t = *z.tape;
    const Tensor<R>& zv = z.value();
    const Tensor<R>& wv = w.value();
    if (zv.rank() != 4 || wv.rank() != 4 || zv.dim(0) != 2 || wv.dim(0) != 2)
        throw std::invalid_argument("complex_mul: stacked (2,F,C,D) operands required");
    const int64_t F = zv.dim(1), C = zv.dim(2), D = zv.dim(3);
    const int64_t WC = wv.dim(2);
    if (wv.dim(1) != F || wv.dim(3) != D || (WC != C && WC != 1))
        throw std::invalid_argument("complex_mul: shape mismatch beyond channel broadcast: " +
                                    shape_str(zv.shape()) + " vs " + shape_str(wv.shape()));

    const int64_t n = F * C * D;
    Tensor<R> out = Tensor<R>::uninit(zv.shape());
    const R* zr = zv.data();
    const R* zi = zv.data() + n;
    const R* wr = wv.data();
    const R* wi = wv.data() + F * WC * D;
    auto widx = [=](int64_t f, int64_t c, int64_t d) {
        return (f * WC + (WC == 1 ? 0 : c)) * D + d;
    };
    for (int64_t f = 0; f < F; ++f)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t d = 0; d < D; ++d) {
                const int64_t i = (f * C + c) * D + d;
                const int64_t j = widx(f, c, d);
                out[i] = zr[i] * wr[j] - zi[i] * wi[j];
                out[n + i] = zr[i] * wi[j] + zi[i] * wr[j];
            }

    const bool rg = t.any_requires({z.id, w.id});
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t zid = z.id, wid = w.id, oid = o.id;
    t.set_backward(o, [zid, wid, oid, F, C, D, WC, n, widx](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        const Tensor<R>& zv2 = tp.node(zid).value;
        const Tensor<R>& wv2 = tp.node(wid).value;
        const R* gr = g.data();
        const R* gi = g.data() + n;
        const R* zr = zv2.data();
        const R* zi = zv2.data() + n;
        const R* wr = wv2.data();
        const R* wi = wv2.data() + F * WC * D;
        const bool nz = tp.node(zid).requires_grad;
        const bool nw = tp.node(wid).requires_grad;
        Tensor<R>* gz = nz ? &tp.grad_buffer(zid) : nullptr;
        Tensor<R>* gw = nw ? &tp.grad_buffer(wid) : nullptr;
        const int64_t wn = F * WC * D;
        for (int64_t f = 0; f < F; ++f)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t d = 0; d < D; ++d) {
                    const int64_t i = (f * C + c) * D + d;
                    const int64_t j = widx(f, c, d);
                    if (nz) {
                        (*gz)[i] += gr[i] * wr[j] + gi[i] * wi[j];
                        (*gz)[n + i] += -gr[i] * wi[j] + gi[i] * wr[j];
                    }
                    if (nw) {
                        (*gw)[j] += gr[i] * zr[i] + gi[i] * zi[i];
                        (*gw)[wn + j] += -gr[i] * zi[i] + gi[i] * zr[i];
                    }
                }
    });
    return o;
}

}  // namespace medmamba
