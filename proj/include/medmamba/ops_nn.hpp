#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>

#include "medmamba/linalg.hpp"
#include "medmamba/ops.hpp"
#include "medmamba/tape.hpp"

namespace medmamba {

enum class ConvMode { Same, Causal };

namespace detail {

inline void conv_check(int64_t T, int64_t k, ConvMode mode) {
    if (k < 1) throw std::invalid_argument("conv1d: kernel width must be >= 1");
    if (mode == ConvMode::Same) {
        // causal mode tolerates k > T: the extra taps only see padding
        if (k > T) throw std::invalid_argument("conv1d: kernel wider than sequence");
        if (k % 2 == 0) throw std::invalid_argument("conv1d: same mode requires odd kernel");
    }
}

}  // namespace detail

// Depthwise temporal convolution of a T x C signal, one kernel row per
// channel. Same mode zero-pads symmetrically, causal pads the past only.
template <typename R>
Var<R> conv1d_dw(Var<R> x, Var<R> kernel, ConvMode mode) {
    Tape<R>& t = *x.tape;
    const Tensor<R>& xv = x.value();
    const Tensor<R>& kv = kernel.value();
    if (xv.rank() != 2 || kv.rank() != 2 || kv.dim(0) != xv.dim(1))
        throw std::invalid_argument("conv1d_dw: expected x[T,C], kernel[C,k]");
    const int64_t T = xv.dim(0), C = xv.dim(1), k = kv.dim(1);
    detail::conv_check(T, k, mode);
    const int64_t off = (mode == ConvMode::Same) ? (k - 1) / 2 : (k - 1);

    Tensor<R> out(xv.shape());
    for (int64_t tt = 0; tt < T; ++tt) {
        for (int64_t j = 0; j < k; ++j) {
            const int64_t src = tt + j - off;
            if (src < 0 || src >= T) continue;
            const R* xr = xv.data() + src * C;
            R* orow = out.data() + tt * C;
            const R* kr = kv.data();
            for (int64_t c = 0; c < C; ++c) orow[c] += kr[c * k + j] * xr[c];
        }
    }

    const bool rg = t.any_requires({x.id, kernel.id});
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t xid = x.id, kid = kernel.id, oid = o.id;
    t.set_backward(o, [xid, kid, oid, T, C, k, off](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        const Tensor<R>& xv2 = tp.node(xid).value;
        const Tensor<R>& kv2 = tp.node(kid).value;
        if (tp.node(xid).requires_grad) {
            Tensor<R>& gx = tp.grad_buffer(xid);
            for (int64_t tt = 0; tt < T; ++tt) {
                for (int64_t j = 0; j < k; ++j) {
                    const int64_t src = tt + j - off;
                    if (src < 0 || src >= T) continue;
                    const R* grow = g.data() + tt * C;
                    R* gxr = gx.data() + src * C;
                    for (int64_t c = 0; c < C; ++c) gxr[c] += kv2[c * k + j] * grow[c];
                }
            }
        }
        if (tp.node(kid).requires_grad) {
            Tensor<R>& gk = tp.grad_buffer(kid);
            for (int64_t tt = 0; tt < T; ++tt) {
                for (int64_t j = 0; j < k; ++j) {
                    const int64_t src = tt + j - off;
                    if (src < 0 || src >= T) continue;
                    const R* grow = g.data() + tt * C;
                    const R* xr = xv2.data() + src * C;
                    for (int64_t c = 0; c < C; ++c) gk[c * k + j] += grow[c] * xr[c];
                }
            }
        }
    });
    return o;
}

// Depthwise conv over one of the first two axes of an (A0, A1, D) tensor,
// one kernel row per feature d. Used for the local conv inside SSM blocks,
// where the sequence runs along time (axis 0) or channels (axis 1).
template <typename R>
Var<R> conv1d_feat(Var<R> x, Var<R> kernel, ConvMode mode, int seq_axis) {
    Tape<R>& t = *x.tape;
    const Tensor<R>& xv = x.value();
    const Tensor<R>& kv = kernel.value();
    if (xv.rank() != 3 || kv.rank() != 2 || kv.dim(0) != xv.dim(2))
        throw std::invalid_argument("conv1d_feat: expected x[A0,A1,D], kernel[D,k]");
    if (seq_axis != 0 && seq_axis != 1) throw std::invalid_argument("conv1d_feat: bad axis");
    const int64_t S = xv.dim(seq_axis), L = xv.dim(1 - seq_axis), D = xv.dim(2);
    const int64_t k = kv.dim(1);
    detail::conv_check(S, k, mode);
    const int64_t off = (mode == ConvMode::Same) ? (k - 1) / 2 : (k - 1);
    const int64_t sstep = (seq_axis == 0) ? L * D : D;
    const int64_t lstep = (seq_axis == 0) ? D : S * D;

    Tensor<R> out(xv.shape());
    for (int64_t l = 0; l < L; ++l) {
        for (int64_t s = 0; s < S; ++s) {
            R* orow = out.data() + l * lstep + s * sstep;
            for (int64_t j = 0; j < k; ++j) {
                const int64_t src = s + j - off;
                if (src < 0 || src >= S) continue;
                const R* xr = xv.data() + l * lstep + src * sstep;
                const R* kd = kv.data();
                for (int64_t d = 0; d < D; ++d) orow[d] += kd[d * k + j] * xr[d];
            }
        }
    }

    const bool rg = t.any_requires({x.id, kernel.id});
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t xid = x.id, kid = kernel.id, oid = o.id;
    t.set_backward(o, [xid, kid, oid, S, L, D, k, off, sstep, lstep](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        const Tensor<R>& xv2 = tp.node(xid).value;
        const Tensor<R>& kv2 = tp.node(kid).value;
        const bool nx = tp.node(xid).requires_grad;
        const bool nk = tp.node(kid).requires_grad;
        Tensor<R>* gx = nx ? &tp.grad_buffer(xid) : nullptr;
        Tensor<R>* gk = nk ? &tp.grad_buffer(kid) : nullptr;
        for (int64_t l = 0; l < L; ++l) {
            for (int64_t s = 0; s < S; ++s) {
                const R* grow = g.data() + l * lstep + s * sstep;
                for (int64_t j = 0; j < k; ++j) {
                    const int64_t src = s + j - off;
                    if (src < 0 || src >= S) continue;
                    const int64_t xoff = l * lstep + src * sstep;
                    if (nx) {
                        R* gxr = gx->data() + xoff;
                        for (int64_t d = 0; d < D; ++d) gxr[d] += kv2[d * k + j] * grow[d];
                    }
                    if (nk) {
                        const R* xr = xv2.data() + xoff;
                        for (int64_t d = 0; d < D; ++d) (*gk)[d * k + j] += grow[d] * xr[d];
                    }
                }
            }
        }
    });
    return o;
}

// First difference along axis 0 with a zero first row: out[0] = 0,
// out[t] = x[t] - x[t-1]. Constant-in-time inputs map to zero.
template <typename R>
Var<R> diff_time(Var<R> x) {
    Tape<R>& t = *x.tape;
    const Tensor<R>& xv = x.value();
    if (xv.rank() < 1) throw std::invalid_argument("diff_time: rank >= 1 required");
    const int64_t T = xv.dim(0);
    const int64_t inner = xv.numel() / std::max<int64_t>(T, 1);
    Tensor<R> out(xv.shape());
    for (int64_t s = 1; s < T; ++s) {
        const R* cur = xv.data() + s * inner;
        const R* prev = xv.data() + (s - 1) * inner;
        R* o = out.data() + s * inner;
        for (int64_t q = 0; q < inner; ++q) o[q] = cur[q] - prev[q];
    }
    const bool rg = t.node(x.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t xid = x.id, oid = o.id;
    t.set_backward(o, [xid, oid, T, inner](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        Tensor<R>& gx = tp.grad_buffer(xid);
        for (int64_t s = 0; s < T; ++s) {
            R* gxr = gx.data() + s * inner;
            if (s >= 1) {
                const R* gr = g.data() + s * inner;
                for (int64_t q = 0; q < inner; ++q) gxr[q] += gr[q];
            }
            if (s + 1 < T) {
                const R* gn = g.data() + (s + 1) * inner;
                for (int64_t q = 0; q < inner; ++q) gxr[q] -= gn[q];
            }
        }
    });
    return o;
}

// LayerNorm over the last axis with affine gain/bias, eps = 1e-5.
template <typename R>
Var<R> layernorm(Var<R> x, Var<R> gain, Var<R> bias, R eps = R(1e-5)) {
    Tape<R>& t = *x.tape;
    const Tensor<R>& xv = x.value();
    const int64_t D = xv.shape().back();
    if (gain.value().numel() != D || bias.value().numel() != D)
        throw std::invalid_argument("layernorm: gain/bias must have last-dim width");
    const int64_t rows = xv.numel() / D;

    auto xhat = std::make_shared<Tensor<R>>(Tensor<R>::uninit(xv.shape()));
    auto inv = std::make_shared<Tensor<R>>(Tensor<R>::uninit(Shape{rows}));
    Tensor<R> out = Tensor<R>::uninit(xv.shape());
    const R* gp = gain.value().data();
    const R* bp = bias.value().data();
    for (int64_t r = 0; r < rows; ++r) {
        const R* xr = xv.data() + r * D;
        R mu = 0;
        for (int64_t j = 0; j < D; ++j) mu += xr[j];
        mu /= R(D);
        R var = 0;
        for (int64_t j = 0; j < D; ++j) {
            const R d = xr[j] - mu;
            var += d * d;
        }
        var /= R(D);
        const R iv = R(1) / std::sqrt(var + eps);
        (*inv)[r] = iv;
        R* xh = xhat->data() + r * D;
        R* orow = out.data() + r * D;
        for (int64_t j = 0; j < D; ++j) {
            xh[j] = (xr[j] - mu) * iv;
            orow[j] = gp[j] * xh[j] + bp[j];
        }
    }

    const bool rg = t.any_requires({x.id, gain.id, bias.id});
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t xid = x.id, gid = gain.id, bid = bias.id, oid = o.id;
    t.set_backward(o, [xid, gid, bid, oid, rows, D, xhat, inv](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        const R* gainp = tp.node(gid).value.data();
        const bool nx = tp.node(xid).requires_grad;
        const bool ng = tp.node(gid).requires_grad;
        const bool nb = tp.node(bid).requires_grad;
        Tensor<R>* gx = nx ? &tp.grad_buffer(xid) : nullptr;
        Tensor<R>* gg = ng ? &tp.grad_buffer(gid) : nullptr;
        Tensor<R>* gb = nb ? &tp.grad_buffer(bid) : nullptr;
        std::vector<R> gxh(D);
        for (int64_t r = 0; r < rows; ++r) {
            const R* gr = g.data() + r * D;
            const R* xh = xhat->data() + r * D;
            if (ng || nb) {
                for (int64_t j = 0; j < D; ++j) {
                    if (ng) (*gg)[j] += gr[j] * xh[j];
                    if (nb) (*gb)[j] += gr[j];
                }
            }
            if (nx) {
                R m1 = 0, m2 = 0;
                for (int64_t j = 0; j < D; ++j) {
                    gxh[j] = gr[j] * gainp[j];
                    m1 += gxh[j];
                    m2 += gxh[j] * xh[j];
                }
                m1 /= R(D);
                m2 /= R(D);
                const R iv = (*inv)[r];
                R* gxr = gx->data() + r * D;
                for (int64_t j = 0; j < D; ++j) gxr[j] += iv * (gxh[j] - m1 - xh[j] * m2);
            }
        }
    });
    return o;
}

// Stabilized cross-entropy of raw logits against an integer label.
template <typename R>
Var<R> cross_entropy(Var<R> logits, int64_t label) {
    Tape<R>& t = *logits.tape;
    const Tensor<R>& lv = logits.value();
    const int64_t K = lv.numel();
    if (label < 0 || label >= K) throw std::invalid_argument("cross_entropy: label out of range");
    R m = lv[0];
    for (int64_t j = 1; j < K; ++j) m = std::max(m, lv[j]);
    R s = 0;
    for (int64_t j = 0; j < K; ++j) s += std::exp(lv[j] - m);
    const R lse = m + std::log(s);
    const R loss = lse - lv[label];

    auto probs = std::make_shared<Tensor<R>>(Shape{K});
    for (int64_t j = 0; j < K; ++j) (*probs)[j] = std::exp(lv[j] - lse);

    const bool rg = t.node(logits.id).requires_grad;
    Var<R> o = t.push(Tensor<R>::scalar(loss), rg);
    if (!rg) return o;
    const int32_t lid = logits.id, oid = o.id;
    t.set_backward(o, [lid, oid, label, K, probs](Tape<R>& tp) {
        const R g = tp.node(oid).grad[0];
        Tensor<R>& gl = tp.grad_buffer(lid);
        for (int64_t j = 0; j < K; ++j)
            gl[j] += g * ((*probs)[j] - (j == label ? R(1) : R(0)));
    });
    return o;
}

// out[t] = A * z[t] for every time slice of z (T, C, D), A (C, C).
template <typename R>
Var<R> seq_matmul(Var<R> A, Var<R> z) {
    Tape<R>& t = *A.tape;
    const Tensor<R>& av = A.value();
    const Tensor<R>& zv = z.value();
    if (av.rank() != 2 || zv.rank() != 3 || av.dim(0) != av.dim(1) || av.dim(0) != zv.dim(1))
        throw std::invalid_argument("seq_matmul: expected A[C,C], z[T,C,D]");
    const int64_t T = zv.dim(0), C = zv.dim(1), D = zv.dim(2);

    Tensor<R> out = Tensor<R>::uninit(zv.shape());
    for (int64_t tt = 0; tt < T; ++tt)
        gemm<R>(false, false, C, D, C, R(1), av.data(), zv.data() + tt * C * D, R(0),
                out.data() + tt * C * D);

    const bool rg = t.any_requires({A.id, z.id});
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t aid = A.id, zid = z.id, oid = o.id;
    t.set_backward(o, [aid, zid, oid, T, C, D](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        const Tensor<R>& av2 = tp.node(aid).value;
        const Tensor<R>& zv2 = tp.node(zid).value;
        if (tp.node(aid).requires_grad) {
            Tensor<R>& ga = tp.grad_buffer(aid);
            for (int64_t tt = 0; tt < T; ++tt)
                gemm<R>(false, true, C, C, D, R(1), g.data() + tt * C * D,
                        zv2.data() + tt * C * D, R(1), ga.data());
        }
        if (tp.node(zid).requires_grad) {
            Tensor<R>& gz = tp.grad_buffer(zid);
            for (int64_t tt = 0; tt < T; ++tt)
                gemm<R>(true, false, C, D, C, R(1), av2.data(), g.data() + tt * C * D, R(1),
                        gz.data() + tt * C * D);
        }
    });
    return o;
}

// Differentiable matrix exponential (scaling-and-squaring, Taylor terms).
template <typename R>
Var<R> matrix_exp(Var<R> M, int64_t cap = 256) {
    Tape<R>& t = *M.tape;
    auto ws = std::make_shared<MatExpWorkspace<R>>(matrix_exp_forward(M.value(), cap));
    const bool rg = t.node(M.id).requires_grad;
    Var<R> o = t.push(ws->result.clone(), rg);
    if (!rg) return o;
    const int32_t mid = M.id, oid = o.id;
    t.set_backward(o, [mid, oid, ws](Tape<R>& tp) {
        Tensor<R> gm = matrix_exp_backward(*ws, tp.node(mid).value, tp.node(oid).grad);
        tp.accum(mid, gm);
    });
    return o;
}

// Acyclicity penalty tr(exp(A o A)) - C with the analytic adjoint
// 2A o exp(A o A)^T; only the exponential's forward value is needed.
template <typename R>
Var<R> dag_penalty(Var<R> A) {
    Tape<R>& t = *A.tape;
    const Tensor<R>& av = A.value();
    if (av.rank() != 2 || av.dim(0) != av.dim(1))
        throw std::invalid_argument("dag_penalty: square matrix required");
    const int64_t C = av.dim(0);
    Tensor<R> H(Shape{C, C});
    for (int64_t i = 0; i < C * C; ++i) H[i] = av[i] * av[i];
    auto E = std::make_shared<Tensor<R>>(matrix_exp_value(H));
    R loss = -R(C);
    for (int64_t i = 0; i < C; ++i) loss += E->at2(i, i);

    const bool rg = t.node(A.id).requires_grad;
    Var<R> o = t.push(Tensor<R>::scalar(loss), rg);
    if (!rg) return o;
    const int32_t aid = A.id, oid = o.id;
    t.set_backward(o, [aid, oid, C, E](Tape<R>& tp) {
        const R g = tp.node(oid).grad[0];
        const Tensor<R>& av2 = tp.node(aid).value;
        Tensor<R>& ga = tp.grad_buffer(aid);
        for (int64_t i = 0; i < C; ++i)
            for (int64_t j = 0; j < C; ++j)
                ga.at2(i, j) += g * R(2) * av2.at2(i, j) * E->at2(j, i);
    });
    return o;
}

}  // namespace medmamba
