#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "medmamba/fastmath.hpp"
#include "medmamba/ops.hpp"
#include "medmamba/tape.hpp"

namespace medmamba {

namespace zoh {

// Discrete decay exp(delta * a) for one diagonal state entry.
template <typename R>
inline R abar(R a, R delta) {
    return exp_rt(delta * a);
}

// phi = (exp(delta*a) - 1) / a, so bbar = phi * B. The removable
// singularity at delta*a -> 0 is handled by a short series.
template <typename R>
inline R phi(R a, R delta, R ab) {
    const R x = delta * a;
    if (std::abs(x) < R(1e-6)) return delta * (R(1) + x / R(2) + x * x / R(6));
    return (ab - R(1)) / a;
}

// d phi / d a; the exact form cancels catastrophically for small
// |delta*a|, so the series branch switches earlier than the forward one.
template <typename R>
inline R dphi_da(R a, R delta, R ab, R ph) {
    const R x = delta * a;
    if (std::abs(x) < R(1e-3))
        return delta * delta * (R(0.5) + x / R(3) + x * x / R(8) + x * x * x / R(30));
    return (delta * ab - ph) / a;
}

}  // namespace zoh

// Value-level ZOH discretization of a diagonal system: returns (Abar[N],
// Bbar[N x Din]) for one step size.
template <typename R>
std::pair<Tensor<R>, Tensor<R>> zoh_discretize(const Tensor<R>& a, R delta, const Tensor<R>& B) {
    if (delta <= R(0)) throw std::invalid_argument("zoh_discretize: delta must be > 0");
    if (a.rank() != 1 || B.rank() != 2 || B.dim(0) != a.dim(0))
        throw std::invalid_argument("zoh_discretize: expected a[N], B[N,Din]");
    const int64_t N = a.dim(0), Din = B.dim(1);
    Tensor<R> ab(Shape{N}), bb(Shape{N, Din});
    for (int64_t n = 0; n < N; ++n) {
        ab[n] = zoh::abar(a[n], delta);
        const R ph = zoh::phi(a[n], delta, ab[n]);
        for (int64_t d = 0; d < Din; ++d) bb.at2(n, d) = ph * B.at2(n, d);
    }
    return {std::move(ab), std::move(bb)};
}

namespace detail {

template <typename T>
using RawVec = std::vector<T, uninit_allocator<T>>;

template <typename R>
struct ScanSaved {
    RawVec<R> xs;    // states, lane-major: (L, S, N, Din)
    RawVec<R> abar;  // (L, S, N)
    RawVec<R> phi;   // (L, S, N)
    RawVec<R> ct;    // C transposed to (N, Din)
    RawVec<R> a;     // -exp(a_log)
};

// One affine-map composition step of the associative scan:
// (later a2,b2) o (earlier a1,b1) = (a2*a1, a2*b1 + b2).
template <typename R>
inline void compose(const R* a1, const R* b1, const R* a2, const R* b2, R* ao, R* bo, int64_t N,
                    int64_t Din) {
    for (int64_t n = 0; n < N; ++n) {
        const R a2n = a2[n];
        ao[n] = a2n * a1[n];
        const R* b1n = b1 + n * Din;
        const R* b2n = b2 + n * Din;
        R* bon = bo + n * Din;
        for (int64_t d = 0; d < Din; ++d) bon[d] = a2n * b1n[d] + b2n[d];
    }
}

}  // namespace detail

// Input-conditioned diagonal SSM scan. u is (A0, A1, Din) with the
// sequence running along seq_axis; delta is (A0, A1); a_log is the log of
// the negated diagonal state matrix. Output is the pre-gate response
// y = C x + Dskip u. `parallel` switches the forward evaluation to a
// work-efficient associative tree scan with identical math.
template <typename R>
Var<R> selective_scan(Var<R> u, Var<R> delta, Var<R> a_log, Var<R> B, Var<R> Cmat, Var<R> Dskip,
                      int seq_axis = 0, bool parallel = false) {
    Tape<R>& t = *u.tape;
    const Tensor<R>& uv = u.value();
    const Tensor<R>& dv = delta.value();
    const Tensor<R>& av = a_log.value();
    const Tensor<R>& bv = B.value();
    const Tensor<R>& cv = Cmat.value();
    const Tensor<R>& skv = Dskip.value();
    if (uv.rank() != 3) throw std::invalid_argument("selective_scan: u must be rank 3");
    if (seq_axis != 0 && seq_axis != 1) throw std::invalid_argument("selective_scan: bad axis");
    const int64_t S = uv.dim(seq_axis);
    const int64_t L = uv.dim(1 - seq_axis);
    const int64_t Din = uv.dim(2);
    const int64_t N = av.dim(0);
    if (dv.rank() != 2 || dv.dim(0) != uv.dim(0) || dv.dim(1) != uv.dim(1))
        throw std::invalid_argument("selective_scan: delta shape mismatch");
    if (bv.rank() != 2 || bv.dim(0) != N || bv.dim(1) != Din)
        throw std::invalid_argument("selective_scan: B shape mismatch");
    if (cv.rank() != 2 || cv.dim(0) != Din || cv.dim(1) != N)
        throw std::invalid_argument("selective_scan: C shape mismatch");
    if (skv.numel() != Din) throw std::invalid_argument("selective_scan: Dskip shape mismatch");

    const int64_t sstep = (seq_axis == 0) ? L * Din : Din;
    const int64_t lstep = (seq_axis == 0) ? Din : S * Din;
    const int64_t dstep_s = (seq_axis == 0) ? L : 1;
    const int64_t dstep_l = (seq_axis == 0) ? 1 : S;

    auto saved = std::make_shared<detail::ScanSaved<R>>();
    saved->xs.resize(static_cast<size_t>(L) * S * N * Din);
    saved->abar.resize(static_cast<size_t>(L) * S * N);
    saved->phi.resize(static_cast<size_t>(L) * S * N);
    saved->ct.resize(static_cast<size_t>(N) * Din);
    saved->a.resize(N);
    for (int64_t n = 0; n < N; ++n) saved->a[n] = -std::exp(av[n]);
    for (int64_t d = 0; d < Din; ++d)
        for (int64_t n = 0; n < N; ++n) saved->ct[n * Din + d] = cv.at2(d, n);

    // decay/input coefficients per (lane, step, state)
    for (int64_t l = 0; l < L; ++l)
        for (int64_t s = 0; s < S; ++s) {
            const R del = dv[s * dstep_s + l * dstep_l];
            R* __restrict__ ab = saved->abar.data() + (l * S + s) * N;
            R* __restrict__ ph = saved->phi.data() + (l * S + s) * N;
            for (int64_t n = 0; n < N; ++n) {
                ab[n] = zoh::abar(saved->a[n], del);
                ph[n] = zoh::phi(saved->a[n], del, ab[n]);
            }
        }

    if (!parallel) {
        std::vector<R> x(static_cast<size_t>(N) * Din);
        for (int64_t l = 0; l < L; ++l) {
            std::fill(x.begin(), x.end(), R(0));
            for (int64_t s = 0; s < S; ++s) {
                const R* __restrict__ urow = uv.data() + l * lstep + s * sstep;
                const R* __restrict__ ab = saved->abar.data() + (l * S + s) * N;
                const R* __restrict__ ph = saved->phi.data() + (l * S + s) * N;
                R* __restrict__ xs = saved->xs.data() + ((l * S + s) * N) * Din;
                for (int64_t n = 0; n < N; ++n) {
                    const R an = ab[n];
                    const R pn = ph[n];
                    const R* __restrict__ bn = bv.data() + n * Din;
                    R* __restrict__ xn = x.data() + n * Din;
                    R* __restrict__ xsn = xs + n * Din;
                    for (int64_t d = 0; d < Din; ++d) {
                        const R xv2 = an * xn[d] + pn * bn[d] * urow[d];
                        xn[d] = xv2;
                        xsn[d] = xv2;
                    }
                }
            }
        }
    } else {
        // pad to a power of two of identity maps, Blelloch up/down sweep
        int64_t P = 1;
        while (P < S) P <<= 1;
        std::vector<R> ea(static_cast<size_t>(P) * N), eb(static_cast<size_t>(P) * N * Din);
        std::vector<R> ta(ea.size()), tb(eb.size());
        for (int64_t l = 0; l < L; ++l) {
            for (int64_t s = 0; s < S; ++s) {
                const R* ab = saved->abar.data() + (l * S + s) * N;
                const R* ph = saved->phi.data() + (l * S + s) * N;
                const R* urow = uv.data() + l * lstep + s * sstep;
                for (int64_t n = 0; n < N; ++n) {
                    ea[s * N + n] = ab[n];
                    const R* bn = bv.data() + n * Din;
                    R* ebn = eb.data() + (s * N + n) * Din;
                    for (int64_t d = 0; d < Din; ++d) ebn[d] = ph[n] * bn[d] * urow[d];
                }
            }
            for (int64_t s = S; s < P; ++s) {
                for (int64_t n = 0; n < N; ++n) {
                    ea[s * N + n] = R(1);
                    std::fill(eb.begin() + (s * N + n) * Din, eb.begin() + (s * N + n + 1) * Din,
                              R(0));
                }
            }
            // keep the original elements for the inclusive fix-up
            ta = ea;
            tb = eb;
            // up-sweep
            for (int64_t stride = 1; stride < P; stride <<= 1) {
                for (int64_t i = 2 * stride - 1; i < P; i += 2 * stride) {
                    detail::compose(ea.data() + (i - stride) * N,
                                    eb.data() + (i - stride) * N * Din, ea.data() + i * N,
                                    eb.data() + i * N * Din, ea.data() + i * N,
                                    eb.data() + i * N * Din, N, Din);
                }
            }
            // down-sweep to exclusive prefixes
            for (int64_t n = 0; n < N; ++n) ea[(P - 1) * N + n] = R(1);
            std::fill(eb.begin() + (P - 1) * N * Din, eb.begin() + P * N * Din, R(0));
            for (int64_t stride = P / 2; stride >= 1; stride >>= 1) {
                for (int64_t i = 2 * stride - 1; i < P; i += 2 * stride) {
                    std::vector<R> sa(ea.begin() + (i - stride) * N,
                                      ea.begin() + (i - stride + 1) * N);
                    std::vector<R> sb(eb.begin() + (i - stride) * N * Din,
                                      eb.begin() + (i - stride + 1) * N * Din);
                    // left child gets parent's prefix
                    std::copy(ea.begin() + i * N, ea.begin() + (i + 1) * N,
                              ea.begin() + (i - stride) * N);
                    std::copy(eb.begin() + i * N * Din, eb.begin() + (i + 1) * N * Din,
                              eb.begin() + (i - stride) * N * Din);
                    // right child gets prefix o left-subtree total
                    detail::compose(ea.data() + i * N, eb.data() + i * N * Din, sa.data(),
                                    sb.data(), ea.data() + i * N, eb.data() + i * N * Din, N,
                                    Din);
                }
            }
            // inclusive = element o exclusive-prefix; the state is the b part
            std::vector<R> ra(N), rb(static_cast<size_t>(N) * Din);
            for (int64_t s = 0; s < S; ++s) {
                R* xs = saved->xs.data() + ((l * S + s) * N) * Din;
                detail::compose(ea.data() + s * N, eb.data() + s * N * Din, ta.data() + s * N,
                                tb.data() + s * N * Din, ra.data(), rb.data(), N, Din);
                std::copy(rb.begin(), rb.end(), xs);
            }
        }
    }

    // y = C x + Dskip u
    Tensor<R> out = Tensor<R>::uninit(uv.shape());
    for (int64_t l = 0; l < L; ++l)
        for (int64_t s = 0; s < S; ++s) {
            const R* __restrict__ urow = uv.data() + l * lstep + s * sstep;
            const R* __restrict__ xs = saved->xs.data() + ((l * S + s) * N) * Din;
            R* __restrict__ orow = out.data() + l * lstep + s * sstep;
            const R* __restrict__ sk = skv.data();
            for (int64_t d = 0; d < Din; ++d) orow[d] = sk[d] * urow[d];
            for (int64_t n = 0; n < N; ++n) {
                const R* __restrict__ ctn = saved->ct.data() + n * Din;
                const R* __restrict__ xsn = xs + n * Din;
                for (int64_t d = 0; d < Din; ++d) orow[d] += ctn[d] * xsn[d];
            }
        }

    const bool rg = t.any_requires({u.id, delta.id, a_log.id, B.id, Cmat.id, Dskip.id});
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;

    const int32_t uid = u.id, did = delta.id, aid = a_log.id, bid = B.id, cid = Cmat.id,
                  kid = Dskip.id, oid = o.id;
    t.set_backward(o, [uid, did, aid, bid, cid, kid, oid, saved, S, L, N, Din, sstep, lstep,
                       dstep_s, dstep_l](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        const Tensor<R>& uv2 = tp.node(uid).value;
        const Tensor<R>& dv2 = tp.node(did).value;
        const Tensor<R>& bv2 = tp.node(bid).value;
        const Tensor<R>& skv2 = tp.node(kid).value;

        const bool nu = tp.node(uid).requires_grad;
        const bool nd = tp.node(did).requires_grad;
        const bool na = tp.node(aid).requires_grad;
        const bool nb = tp.node(bid).requires_grad;
        const bool nc = tp.node(cid).requires_grad;
        const bool nk = tp.node(kid).requires_grad;

        Tensor<R>* gu = nu ? &tp.grad_buffer(uid) : nullptr;
        Tensor<R>* gd = nd ? &tp.grad_buffer(did) : nullptr;
        Tensor<R>* gb = nb ? &tp.grad_buffer(bid) : nullptr;
        Tensor<R>* gc = nc ? &tp.grad_buffer(cid) : nullptr;
        Tensor<R>* gk = nk ? &tp.grad_buffer(kid) : nullptr;

        std::vector<R> ga(N, R(0));
        std::vector<R> gct(nc ? static_cast<size_t>(N) * Din : 0, R(0));
        std::vector<R> lam(static_cast<size_t>(N) * Din);
        const detail::RawVec<R>& a = saved->a;
        const detail::RawVec<R>& ct = saved->ct;

        for (int64_t l = 0; l < L; ++l) {
            std::fill(lam.begin(), lam.end(), R(0));
            for (int64_t s = S - 1; s >= 0; --s) {
                const R* __restrict__ grow = g.data() + l * lstep + s * sstep;
                const R* __restrict__ urow = uv2.data() + l * lstep + s * sstep;
                const R* __restrict__ ab = saved->abar.data() + (l * S + s) * N;
                const R* __restrict__ ph = saved->phi.data() + (l * S + s) * N;
                const R* __restrict__ xs = saved->xs.data() + ((l * S + s) * N) * Din;
                const R* __restrict__ xprev =
                    (s > 0) ? saved->xs.data() + ((l * S + s - 1) * N) * Din : nullptr;
                const R* __restrict__ abn =
                    (s < S - 1) ? saved->abar.data() + (l * S + s + 1) * N : nullptr;
                const R del = dv2[s * dstep_s + l * dstep_l];

                R gdel = R(0);
                R* __restrict__ gur = nu ? gu->data() + l * lstep + s * sstep : nullptr;
                for (int64_t n = 0; n < N; ++n) {
                    R* __restrict__ ln = lam.data() + n * Din;
                    const R* __restrict__ ctn = ct.data() + n * Din;
                    const R* __restrict__ bn = bv2.data() + n * Din;
                    const R* __restrict__ xsn = xs + n * Din;
                    // state adjoint: decay from step s+1, inject through C
                    if (abn) {
                        const R an = abn[n];
                        for (int64_t d = 0; d < Din; ++d)
                            ln[d] = an * ln[d] + ctn[d] * grow[d];
                    } else {
                        for (int64_t d = 0; d < Din; ++d) ln[d] = ctn[d] * grow[d];
                    }

                    R dot_prev = R(0), dot_bu = R(0);
                    if (xprev) {
                        const R* __restrict__ xp = xprev + n * Din;
#pragma omp simd reduction(+ : dot_prev, dot_bu)
                        for (int64_t d = 0; d < Din; ++d) {
                            dot_prev += ln[d] * xp[d];
                            dot_bu += ln[d] * bn[d] * urow[d];
                        }
                    } else {
#pragma omp simd reduction(+ : dot_bu)
                        for (int64_t d = 0; d < Din; ++d) dot_bu += ln[d] * bn[d] * urow[d];
                    }

                    if (nd || na) {
                        if (nd) gdel += a[n] * ab[n] * dot_prev + ab[n] * dot_bu;
                        if (na)
                            ga[n] += del * ab[n] * dot_prev +
                                     zoh::dphi_da(a[n], del, ab[n], ph[n]) * dot_bu;
                    }
                    const R pn = ph[n];
                    if (nb) {
                        R* __restrict__ gbn = gb->data() + n * Din;
                        for (int64_t d = 0; d < Din; ++d) gbn[d] += ln[d] * pn * urow[d];
                    }
                    if (nu) {
                        for (int64_t d = 0; d < Din; ++d) gur[d] += ln[d] * pn * bn[d];
                    }
                    if (nc) {
                        R* __restrict__ gctn = gct.data() + n * Din;
                        for (int64_t d = 0; d < Din; ++d) gctn[d] += grow[d] * xsn[d];
                    }
                }
                if (nu) {
                    const R* __restrict__ sk = skv2.data();
                    for (int64_t d = 0; d < Din; ++d) gur[d] += sk[d] * grow[d];
                }
                if (nk) {
                    R* __restrict__ gkp = gk->data();
                    for (int64_t d = 0; d < Din; ++d) gkp[d] += grow[d] * urow[d];
                }
                if (nd) (*gd)[s * dstep_s + l * dstep_l] += gdel;
            }
        }
        if (na) {
            Tensor<R>& galog = tp.grad_buffer(aid);
            for (int64_t n = 0; n < N; ++n) galog[n] += ga[n] * a[n];
        }
        if (nc) {
            for (int64_t n = 0; n < N; ++n)
                for (int64_t d = 0; d < Din; ++d) gc->at2(d, n) += gct[n * Din + d];
        }
    });
    return o;
}

}  // namespace medmamba
