#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "medmamba/fastmath.hpp"
#include "medmamba/linalg.hpp"
#include "medmamba/tape.hpp"

namespace medmamba {

namespace detail {

// Trailing-axis broadcast: b aligns with the trailing dims of a, each
// extent equal or 1. Anything else is a shape error, not a broadcast.
inline bool broadcast_ok(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    for (size_t i = 0; i < b.size(); ++i) {
        int64_t be = b[b.size() - 1 - i];
        int64_t ae = a[a.size() - 1 - i];
        if (be != ae && be != 1) return false;
    }
    return true;
}

enum class BKind { Same, Scalar, LastDim, RowScalar, General };

inline BKind classify(const Shape& a, const Shape& b, int64_t a_numel, int64_t b_numel) {
    if (a == b) return BKind::Same;
    if (b_numel == 1) return BKind::Scalar;
    if (b.size() == 1 && !a.empty() && b[0] == a.back()) return BKind::LastDim;
    if (!b.empty() && b.back() == 1 && !a.empty() && b_numel == a_numel / a.back())
        return BKind::RowScalar;
    return BKind::General;
}

inline int64_t map_index(int64_t idx, const Shape& a, const Shape& b) {
    int64_t bidx = 0, bstride = 1;
    for (size_t i = 0; i < b.size(); ++i) {
        size_t ai = a.size() - 1 - i;
        size_t bi = b.size() - 1 - i;
        int64_t coord = idx % a[ai];
        idx /= a[ai];
        if (b[bi] != 1) bidx += coord * bstride;
        bstride *= b[bi];
    }
    return bidx;
}

template <typename R>
int64_t bcast_index(BKind kind, int64_t i, int64_t lastdim, const Shape& a, const Shape& b) {
    switch (kind) {
        case BKind::Same: return i;
        case BKind::Scalar: return 0;
        case BKind::LastDim: return i % lastdim;
        case BKind::RowScalar: return i / lastdim;
        case BKind::General: return map_index(i, a, b);
    }
    return 0;
}

}  // namespace detail

enum class EwOp { Add, Sub, Mul, Div, Pow };

template <typename R>
Var<R> elementwise(EwOp op, Var<R> a, Var<R> b) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    const Tensor<R>& bv = b.value();
    if (!detail::broadcast_ok(av.shape(), bv.shape()))
        throw std::invalid_argument("elementwise: shape mismatch " + shape_str(av.shape()) +
                                    " vs " + shape_str(bv.shape()));
    const auto kind = detail::classify(av.shape(), bv.shape(), av.numel(), bv.numel());
    const int64_t n = av.numel();
    const int64_t ld = av.shape().empty() ? 1 : av.shape().back();

    Tensor<R> out = Tensor<R>::uninit(av.shape());
    {
        const R* ap = av.data();
        const R* bp = bv.data();
        R* o = out.data();
        auto run = [&](auto f) {
            if (kind == detail::BKind::Same) {
                for (int64_t i = 0; i < n; ++i) o[i] = f(ap[i], bp[i]);
            } else if (kind == detail::BKind::Scalar) {
                const R s = bp[0];
                for (int64_t i = 0; i < n; ++i) o[i] = f(ap[i], s);
            } else if (kind == detail::BKind::LastDim) {
                for (int64_t i = 0; i < n; ++i) o[i] = f(ap[i], bp[i % ld]);
            } else if (kind == detail::BKind::RowScalar) {
                for (int64_t i = 0; i < n; ++i) o[i] = f(ap[i], bp[i / ld]);
            } else {
                for (int64_t i = 0; i < n; ++i)
                    o[i] = f(ap[i], bp[detail::map_index(i, av.shape(), bv.shape())]);
            }
        };
        switch (op) {
            case EwOp::Add: run([](R x, R y) { return x + y; }); break;
            case EwOp::Sub: run([](R x, R y) { return x - y; }); break;
            case EwOp::Mul: run([](R x, R y) { return x * y; }); break;
            case EwOp::Div:
                if constexpr (std::is_same_v<R, double>) {
                    for (int64_t i = 0; i < bv.numel(); ++i)
                        if (bv[i] == 0)
                            throw std::domain_error("elementwise div: zero divisor");
                }
                run([](R x, R y) { return x / y; });
                break;
            case EwOp::Pow: run([](R x, R y) { return std::pow(x, y); }); break;
        }
    }

    const bool rg = t.any_requires({a.id, b.id});
    Var<R> outv = t.push(std::move(out), rg);
    if (!rg) return outv;

    const int32_t aid = a.id, bid = b.id, oid = outv.id;
    t.set_backward(outv, [op, kind, aid, bid, oid, n, ld](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        const Tensor<R>& av2 = tp.node(aid).value;
        const Tensor<R>& bv2 = tp.node(bid).value;
        const bool need_a = tp.node(aid).requires_grad;
        const bool need_b = tp.node(bid).requires_grad;
        const R* __restrict__ gp = g.data();
        const R* __restrict__ ap = av2.data();
        const R* __restrict__ bp = bv2.data();

        // dispatch the broadcast pattern once; the inner loops stay tight
        auto for_each = [&](auto fn) {
            switch (kind) {
                case detail::BKind::Same:
                    for (int64_t i = 0; i < n; ++i) fn(i, i);
                    break;
                case detail::BKind::Scalar:
                    for (int64_t i = 0; i < n; ++i) fn(i, int64_t(0));
                    break;
                case detail::BKind::LastDim:
                    for (int64_t i = 0; i < n; ++i) fn(i, i % ld);
                    break;
                case detail::BKind::RowScalar:
                    for (int64_t i = 0; i < n; ++i) fn(i, i / ld);
                    break;
                case detail::BKind::General:
                    for (int64_t i = 0; i < n; ++i)
                        fn(i, detail::map_index(i, av2.shape(), bv2.shape()));
                    break;
            }
        };

        if (need_a) {
            R* __restrict__ gap = tp.grad_buffer(aid).data();
            switch (op) {
                case EwOp::Add:
                case EwOp::Sub:
                    for (int64_t i = 0; i < n; ++i) gap[i] += gp[i];
                    break;
                case EwOp::Mul:
                    for_each([&](int64_t i, int64_t j) { gap[i] += gp[i] * bp[j]; });
                    break;
                case EwOp::Div:
                    for_each([&](int64_t i, int64_t j) { gap[i] += gp[i] / bp[j]; });
                    break;
                case EwOp::Pow:
                    for_each([&](int64_t i, int64_t j) {
                        gap[i] += gp[i] * bp[j] * std::pow(ap[i], bp[j] - R(1));
                    });
                    break;
            }
        }
        if (need_b) {
            R* __restrict__ gbp = tp.grad_buffer(bid).data();
            switch (op) {
                case EwOp::Add:
                    for_each([&](int64_t i, int64_t j) { gbp[j] += gp[i]; });
                    break;
                case EwOp::Sub:
                    for_each([&](int64_t i, int64_t j) { gbp[j] -= gp[i]; });
                    break;
                case EwOp::Mul:
                    for_each([&](int64_t i, int64_t j) { gbp[j] += gp[i] * ap[i]; });
                    break;
                case EwOp::Div:
                    for_each([&](int64_t i, int64_t j) {
                        gbp[j] -= gp[i] * ap[i] / (bp[j] * bp[j]);
                    });
                    break;
                case EwOp::Pow:
                    for_each([&](int64_t i, int64_t j) {
                        gbp[j] += gp[i] * std::pow(ap[i], bp[j]) * std::log(ap[i]);
                    });
                    break;
            }
        }
    });
    return outv;
}

template <typename R>
Var<R> add(Var<R> a, Var<R> b) { return elementwise(EwOp::Add, a, b); }
template <typename R>
Var<R> sub(Var<R> a, Var<R> b) { return elementwise(EwOp::Sub, a, b); }
template <typename R>
Var<R> mul(Var<R> a, Var<R> b) { return elementwise(EwOp::Mul, a, b); }
template <typename R>
Var<R> div(Var<R> a, Var<R> b) { return elementwise(EwOp::Div, a, b); }

template <typename R>
Var<R> add_scalar(Var<R> a, R s) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    Tensor<R> out = Tensor<R>::uninit(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] + s;
    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (rg) {
        const int32_t aid = a.id, oid = o.id;
        t.set_backward(o, [aid, oid](Tape<R>& tp) { tp.accum(aid, tp.node(oid).grad); });
    }
    return o;
}

template <typename R>
Var<R> mul_scalar(Var<R> a, R s) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    Tensor<R> out = Tensor<R>::uninit(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * s;
    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (rg) {
        const int32_t aid = a.id, oid = o.id;
        t.set_backward(o, [aid, oid, s](Tape<R>& tp) {
            const Tensor<R>& g = tp.node(oid).grad;
            Tensor<R>& ga = tp.grad_buffer(aid);
            for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
        });
    }
    return o;
}

template <typename R>
Var<R> pow_scalar(Var<R> a, R e) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    Tensor<R> out = Tensor<R>::uninit(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) out[i] = std::pow(av[i], e);
    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (rg) {
        const int32_t aid = a.id, oid = o.id;
        t.set_backward(o, [aid, oid, e](Tape<R>& tp) {
            const Tensor<R>& g = tp.node(oid).grad;
            const Tensor<R>& x = tp.node(aid).value;
            Tensor<R>& ga = tp.grad_buffer(aid);
            for (int64_t i = 0; i < g.numel(); ++i)
                ga[i] += g[i] * e * std::pow(x[i], e - R(1));
        });
    }
    return o;
}

enum class Act { Sigmoid, Silu, Softplus, Tanh, Exp, Log, Neg };

template <typename R>
inline R sigmoid_scalar(R x) {
    if (x >= 0) return R(1) / (R(1) + exp_rt(-x));
    const R e = exp_rt(x);
    return e / (R(1) + e);
}

template <typename R>
inline R softplus_scalar(R x) {
    if (x > R(30)) return x;  // overflow-safe asymptote
    return std::log1p(std::exp(x));
}

template <typename R>
Var<R> activation(Act act, Var<R> a) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    Tensor<R> out = Tensor<R>::uninit(av.shape());
    const int64_t n = av.numel();
    {
        const R* __restrict__ xp = av.data();
        R* __restrict__ yp = out.data();
        switch (act) {
            case Act::Sigmoid:
                for (int64_t i = 0; i < n; ++i) yp[i] = sigmoid_scalar(xp[i]);
                break;
            case Act::Silu:
                for (int64_t i = 0; i < n; ++i) yp[i] = xp[i] * sigmoid_scalar(xp[i]);
                break;
            case Act::Softplus:
                for (int64_t i = 0; i < n; ++i) yp[i] = softplus_scalar(xp[i]);
                break;
            case Act::Tanh:
                for (int64_t i = 0; i < n; ++i) yp[i] = std::tanh(xp[i]);
                break;
            case Act::Exp:
                for (int64_t i = 0; i < n; ++i) yp[i] = std::exp(xp[i]);
                break;
            case Act::Log:
                for (int64_t i = 0; i < n; ++i) yp[i] = std::log(xp[i]);
                break;
            case Act::Neg:
                for (int64_t i = 0; i < n; ++i) yp[i] = -xp[i];
                break;
        }
    }
    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t aid = a.id, oid = o.id;
    t.set_backward(o, [act, aid, oid, n](Tape<R>& tp) {
        const R* __restrict__ gp = tp.node(oid).grad.data();
        const R* __restrict__ xp = tp.node(aid).value.data();
        const R* __restrict__ yp = tp.node(oid).value.data();
        R* __restrict__ gap = tp.grad_buffer(aid).data();
        switch (act) {
            case Act::Sigmoid:
                for (int64_t i = 0; i < n; ++i) gap[i] += gp[i] * yp[i] * (R(1) - yp[i]);
                break;
            case Act::Silu:
                for (int64_t i = 0; i < n; ++i) {
                    const R s = sigmoid_scalar(xp[i]);
                    gap[i] += gp[i] * (s + xp[i] * s * (R(1) - s));
                }
                break;
            case Act::Softplus:
                for (int64_t i = 0; i < n; ++i) gap[i] += gp[i] * sigmoid_scalar(xp[i]);
                break;
            case Act::Tanh:
                for (int64_t i = 0; i < n; ++i) gap[i] += gp[i] * (R(1) - yp[i] * yp[i]);
                break;
            case Act::Exp:
                for (int64_t i = 0; i < n; ++i) gap[i] += gp[i] * yp[i];
                break;
            case Act::Log:
                for (int64_t i = 0; i < n; ++i) gap[i] += gp[i] / xp[i];
                break;
            case Act::Neg:
                for (int64_t i = 0; i < n; ++i) gap[i] -= gp[i];
                break;
        }
    });
    return o;
}

template <typename R>
Var<R> sigmoid(Var<R> a) { return activation(Act::Sigmoid, a); }
template <typename R>
Var<R> silu(Var<R> a) { return activation(Act::Silu, a); }
template <typename R>
Var<R> softplus(Var<R> a) { return activation(Act::Softplus, a); }
template <typename R>
Var<R> tanh_v(Var<R> a) { return activation(Act::Tanh, a); }
template <typename R>
Var<R> exp_v(Var<R> a) { return activation(Act::Exp, a); }
template <typename R>
Var<R> neg(Var<R> a) { return activation(Act::Neg, a); }

// Softmax over the last axis; rows are normalized independently.
template <typename R>
Var<R> softmax_lastdim(Var<R> a) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    if (av.rank() < 1) throw std::invalid_argument("softmax: rank >= 1 required");
    const int64_t d = av.shape().back();
    const int64_t rows = av.numel() / d;
    Tensor<R> out = Tensor<R>::uninit(av.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const R* x = av.data() + r * d;
        R* y = out.data() + r * d;
        R m = x[0];
        for (int64_t j = 1; j < d; ++j) m = std::max(m, x[j]);
        R s = 0;
        for (int64_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - m);
            s += y[j];
        }
        for (int64_t j = 0; j < d; ++j) y[j] /= s;
    }
    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t aid = a.id, oid = o.id;
    t.set_backward(o, [aid, oid, d, rows](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        const Tensor<R>& y = tp.node(oid).value;
        Tensor<R>& ga = tp.grad_buffer(aid);
        for (int64_t r = 0; r < rows; ++r) {
            const R* gr = g.data() + r * d;
            const R* yr = y.data() + r * d;
            R* gar = ga.data() + r * d;
            R dot = 0;
            for (int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
            for (int64_t j = 0; j < d; ++j) gar[j] += yr[j] * (gr[j] - dot);
        }
    });
    return o;
}

// Matrix product over the flattened-2D views: a is (numel/ca, ca), b is
// (numel/cb, cb). With ta/tb the logical operand is the transpose of that
// view. Output keeps a's leading dims when ta is unset.
template <typename R>
Var<R> matmul(Var<R> a, Var<R> b, bool ta = false, bool tb = false) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    const Tensor<R>& bv = b.value();
    if (av.rank() < 1 || bv.rank() < 1) throw std::invalid_argument("matmul: rank >= 1 required");
    const int64_t ca = av.shape().empty() ? 1 : av.shape().back();
    const int64_t ra = av.numel() / ca;
    const int64_t cb = bv.shape().back();
    const int64_t rb = bv.numel() / cb;
    const int64_t m = ta ? ca : ra;
    const int64_t k = ta ? ra : ca;
    const int64_t k2 = tb ? cb : rb;
    const int64_t n = tb ? rb : cb;
    if (k != k2)
        throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(av.shape()) +
                                    " x " + shape_str(bv.shape()));

    Shape oshape;
    if (!ta && av.rank() >= 2) {
        oshape.assign(av.shape().begin(), av.shape().end() - 1);
        oshape.push_back(n);
    } else {
        oshape = (m == 1 && av.rank() == 1) ? Shape{n} : Shape{m, n};
    }
    Tensor<R> out = Tensor<R>::uninit(oshape);
    gemm<R>(ta, tb, m, n, k, R(1), av.data(), bv.data(), R(0), out.data());

    const bool rg = t.any_requires({a.id, b.id});
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t aid = a.id, bid = b.id, oid = o.id;
    t.set_backward(o, [aid, bid, oid, ta, tb, m, n, k](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        const Tensor<R>& av2 = tp.node(aid).value;
        const Tensor<R>& bv2 = tp.node(bid).value;
        if (tp.node(aid).requires_grad) {
            Tensor<R>& ga = tp.grad_buffer(aid);
            // dL/dA for C = op(A) op(B)
            if (!ta && !tb)
                gemm<R>(false, true, m, k, n, R(1), g.data(), bv2.data(), R(1), ga.data());
            else if (!ta && tb)
                gemm<R>(false, false, m, k, n, R(1), g.data(), bv2.data(), R(1), ga.data());
            else if (ta && !tb)
                gemm<R>(false, true, k, m, n, R(1), bv2.data(), g.data(), R(1), ga.data());
            else
                gemm<R>(true, true, k, m, n, R(1), bv2.data(), g.data(), R(1), ga.data());
        }
        if (tp.node(bid).requires_grad) {
            Tensor<R>& gb = tp.grad_buffer(bid);
            if (!ta && !tb)
                gemm<R>(true, false, k, n, m, R(1), av2.data(), g.data(), R(1), gb.data());
            else if (!ta && tb)
                gemm<R>(true, false, n, k, m, R(1), g.data(), av2.data(), R(1), gb.data());
            else if (ta && !tb)
                gemm<R>(false, false, k, n, m, R(1), av2.data(), g.data(), R(1), gb.data());
            else
                gemm<R>(true, true, n, k, m, R(1), g.data(), av2.data(), R(1), gb.data());
        }
    });
    return o;
}

// Sum/mean over a sorted set of axes; reduced axes are dropped.
template <typename R>
Var<R> reduce_sum(Var<R> a, std::vector<int> axes, bool mean) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    const Shape s = av.shape();  // copied: push() may reallocate the node pool
    for (int ax : axes)
        if (ax < 0 || ax >= static_cast<int>(s.size()))
            throw std::invalid_argument("reduce: invalid axis");
    std::sort(axes.begin(), axes.end());

    Shape oshape;
    std::vector<bool> reduced(s.size(), false);
    for (int ax : axes) reduced[ax] = true;
    int64_t count = 1;
    for (size_t i = 0; i < s.size(); ++i) {
        if (reduced[i])
            count *= s[i];
        else
            oshape.push_back(s[i]);
    }
    const R scale = mean ? R(1) / R(std::max<int64_t>(count, 1)) : R(1);

    // Strides mapping each input coordinate to the output linear index.
    std::vector<int64_t> ostride(s.size(), 0);
    {
        int64_t acc = 1;
        for (int64_t i = static_cast<int64_t>(s.size()) - 1; i >= 0; --i) {
            if (!reduced[i]) {
                ostride[i] = acc;
                acc *= s[i];
            }
        }
    }

    Tensor<R> out(oshape);
    {
        const int64_t n = av.numel();
        for (int64_t idx = 0; idx < n; ++idx) {
            int64_t rem = idx, oidx = 0;
            for (int64_t i = static_cast<int64_t>(s.size()) - 1; i >= 0; --i) {
                const int64_t c = rem % s[i];
                rem /= s[i];
                oidx += c * ostride[i];
            }
            out[oidx] += av[idx];
        }
        if (mean)
            for (int64_t i = 0; i < out.numel(); ++i) out[i] *= scale;
    }

    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t aid = a.id, oid = o.id;
    t.set_backward(o, [aid, oid, ostride, s, scale](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        Tensor<R>& ga = tp.grad_buffer(aid);
        const int64_t n = ga.numel();
        for (int64_t idx = 0; idx < n; ++idx) {
            int64_t rem = idx, oidx = 0;
            for (int64_t i = static_cast<int64_t>(s.size()) - 1; i >= 0; --i) {
                const int64_t c = rem % s[i];
                rem /= s[i];
                oidx += c * ostride[i];
            }
            ga[idx] += g[oidx] * scale;
        }
    });
    return o;
}

template <typename R>
Var<R> mean_axes(Var<R> a, std::vector<int> axes) { return reduce_sum(a, std::move(axes), true); }
template <typename R>
Var<R> sum_axes(Var<R> a, std::vector<int> axes) { return reduce_sum(a, std::move(axes), false); }

template <typename R>
Var<R> sum_all(Var<R> a) {
    std::vector<int> axes(a.value().rank());
    for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
    return reduce_sum(a, axes, false);
}

template <typename R>
Var<R> mean_all(Var<R> a) {
    std::vector<int> axes(a.value().rank());
    for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
    return reduce_sum(a, axes, true);
}

// Elementwise l1 norm of the whole tensor; subgradient sign(x), 0 at 0.
template <typename R>
Var<R> abs_sum(Var<R> a) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    R s = 0;
    for (int64_t i = 0; i < av.numel(); ++i) s += std::abs(av[i]);
    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(Tensor<R>::scalar(s), rg);
    if (!rg) return o;
    const int32_t aid = a.id, oid = o.id;
    t.set_backward(o, [aid, oid](Tape<R>& tp) {
        const R g = tp.node(oid).grad[0];
        const Tensor<R>& x = tp.node(aid).value;
        Tensor<R>& ga = tp.grad_buffer(aid);
        for (int64_t i = 0; i < x.numel(); ++i)
            ga[i] += g * (x[i] > 0 ? R(1) : (x[i] < 0 ? R(-1) : R(0)));
    });
    return o;
}

template <typename R>
Var<R> trace(Var<R> a) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    if (av.rank() != 2 || av.dim(0) != av.dim(1))
        throw std::invalid_argument("trace: square matrix required");
    const int64_t c = av.dim(0);
    R s = 0;
    for (int64_t i = 0; i < c; ++i) s += av.at2(i, i);
    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(Tensor<R>::scalar(s), rg);
    if (!rg) return o;
    const int32_t aid = a.id, oid = o.id;
    t.set_backward(o, [aid, oid, c](Tape<R>& tp) {
        const R g = tp.node(oid).grad[0];
        Tensor<R>& ga = tp.grad_buffer(aid);
        for (int64_t i = 0; i < c; ++i) ga.at2(i, i) += g;
    });
    return o;
}

// Free view: same buffer, new shape.
template <typename R>
Var<R> reshape(Var<R> a, Shape shape) {
    Tape<R>& t = *a.tape;
    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(a.value().reshaped(std::move(shape)), rg);
    if (rg) {
        const int32_t aid = a.id, oid = o.id;
        t.set_backward(o, [aid, oid](Tape<R>& tp) {
            const Tensor<R>& g = tp.node(oid).grad;
            tp.accum(aid, g);  // numel identical, layout shared
        });
    }
    return o;
}

// Reverses one of the first two axes of a rank >= 2 tensor.
template <typename R>
Var<R> reverse_axis(Var<R> a, int axis) {
    Tape<R>& t = *a.tape;
    const Tensor<R>& av = a.value();
    if (av.rank() < 2 || axis < 0 || axis > 1)
        throw std::invalid_argument("reverse_axis: rank >= 2 and axis in {0,1}");
    const int64_t a0 = av.dim(0), a1 = av.dim(1);
    const int64_t inner = av.numel() / (a0 * a1);

    auto rev = [a0, a1, inner, axis](const Tensor<R>& src, Tensor<R>& dst) {
        for (int64_t i = 0; i < a0; ++i) {
            const int64_t si = (axis == 0) ? a0 - 1 - i : i;
            for (int64_t j = 0; j < a1; ++j) {
                const int64_t sj = (axis == 1) ? a1 - 1 - j : j;
                const R* s = src.data() + (si * a1 + sj) * inner;
                R* d = dst.data() + (i * a1 + j) * inner;
                for (int64_t q = 0; q < inner; ++q) d[q] = s[q];
            }
        }
    };

    Tensor<R> out = Tensor<R>::uninit(av.shape());
    rev(av, out);
    const bool rg = t.node(a.id).requires_grad;
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t aid = a.id, oid = o.id;
    t.set_backward(o, [aid, oid, rev](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        Tensor<R> gr = Tensor<R>::uninit(g.shape());
        rev(g, gr);
        tp.accum(aid, gr);
    });
    return o;
}

// Concatenates along the last axis; all leading dims must match.
template <typename R>
Var<R> concat_lastdim(std::vector<Var<R>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: empty");
    Tape<R>& t = *parts[0].tape;
    const Shape& s0 = parts[0].value().shape();
    int64_t total = 0;
    std::vector<int64_t> widths;
    for (auto& p : parts) {
        const Shape& s = p.value().shape();
        if (s.size() != s0.size() ||
            !std::equal(s.begin(), s.end() - 1, s0.begin()))
            throw std::invalid_argument("concat: leading dims mismatch");
        widths.push_back(s.back());
        total += s.back();
    }
    Shape oshape(s0);
    oshape.back() = total;
    const int64_t rows = parts[0].value().numel() / s0.back();

    Tensor<R> out = Tensor<R>::uninit(oshape);
    {
        int64_t off = 0;
        for (size_t p = 0; p < parts.size(); ++p) {
            const Tensor<R>& v = parts[p].value();
            const int64_t w = widths[p];
            for (int64_t r = 0; r < rows; ++r) {
                const R* src = v.data() + r * w;
                R* dst = out.data() + r * total + off;
                for (int64_t q = 0; q < w; ++q) dst[q] = src[q];
            }
            off += w;
        }
    }

    bool rg = false;
    std::vector<int32_t> ids;
    for (auto& p : parts) {
        ids.push_back(p.id);
        rg = rg || t.node(p.id).requires_grad;
    }
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t oid = o.id;
    t.set_backward(o, [ids, widths, rows, total, oid](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        int64_t off = 0;
        for (size_t p = 0; p < ids.size(); ++p) {
            const int64_t w = widths[p];
            if (tp.node(ids[p]).requires_grad) {
                Tensor<R>& gp = tp.grad_buffer(ids[p]);
                for (int64_t r = 0; r < rows; ++r) {
                    const R* src = g.data() + r * total + off;
                    R* dst = gp.data() + r * w;
                    for (int64_t q = 0; q < w; ++q) dst[q] += src[q];
                }
            }
            off += w;
        }
    });
    return o;
}

// out = x * s[idx] where s is a tape tensor; used to weight view branches
// by entries of the fusion softmax.
template <typename R>
Var<R> scale_by_element(Var<R> x, Var<R> s, int64_t idx) {
    Tape<R>& t = *x.tape;
    const Tensor<R>& xv = x.value();
    const Tensor<R>& sv = s.value();
    if (idx < 0 || idx >= sv.numel()) throw std::invalid_argument("scale_by_element: bad index");
    const R w = sv[idx];
    Tensor<R> out = Tensor<R>::uninit(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] * w;
    const bool rg = t.any_requires({x.id, s.id});
    Var<R> o = t.push(std::move(out), rg);
    if (!rg) return o;
    const int32_t xid = x.id, sid = s.id, oid = o.id;
    t.set_backward(o, [xid, sid, oid, idx, w](Tape<R>& tp) {
        const Tensor<R>& g = tp.node(oid).grad;
        if (tp.node(xid).requires_grad) {
            Tensor<R>& gx = tp.grad_buffer(xid);
            for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * w;
        }
        if (tp.node(sid).requires_grad) {
            const Tensor<R>& xv2 = tp.node(xid).value;
            R dot = 0;
            for (int64_t i = 0; i < g.numel(); ++i) dot += g[i] * xv2[i];
            tp.grad_buffer(sid)[idx] += dot;
        }
    });
    return o;
}

}  // namespace medmamba
