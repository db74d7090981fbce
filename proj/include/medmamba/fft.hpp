#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "medmamba/tensor.hpp"

namespace medmamba {
namespace fft {

inline bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

inline int64_t next_pow2(int64_t n) {
    int64_t m = 1;
    while (m < n) m <<= 1;
    return m;
}

// Per-size twiddle factors (cos, sin of 2*pi*j/len per stage), shared via a
// thread-local cache so repeated transforms of one length stay cheap.
struct Twiddles {
    std::vector<double> c, s;  // concatenated stages: len = 2, 4, ..., n
    std::vector<int64_t> stage_off;
};

inline const Twiddles& twiddles_for(int64_t n) {
    thread_local std::unordered_map<int64_t, std::unique_ptr<Twiddles>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return *it->second;
    auto tw = std::make_unique<Twiddles>();
    for (int64_t len = 2; len <= n; len <<= 1) {
        tw->stage_off.push_back(static_cast<int64_t>(tw->c.size()));
        const double ang = 2.0 * M_PI / static_cast<double>(len);
        for (int64_t j = 0; j < len / 2; ++j) {
            tw->c.push_back(std::cos(ang * j));
            tw->s.push_back(std::sin(ang * j));
        }
    }
    const Twiddles& ref = *tw;
    cache.emplace(n, std::move(tw));
    return ref;
}

// Radix-2 FFT applied to rows of an (n x L) pair of real arrays, in place.
// sign = -1 forward, +1 inverse (unnormalized).
template <typename R>
void fft_rows_pow2(R* re, R* im, int64_t n, int64_t L, int sign) {
    if (n == 1) return;
    // bit-reversal permutation of rows
    for (int64_t i = 1, j = 0; i < n; ++i) {
        int64_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            R* ri = re + i * L;
            R* rj = re + j * L;
            R* ii = im + i * L;
            R* ij = im + j * L;
            for (int64_t l = 0; l < L; ++l) {
                std::swap(ri[l], rj[l]);
                std::swap(ii[l], ij[l]);
            }
        }
    }
    const Twiddles& tw = twiddles_for(n);
    int stage = 0;
    for (int64_t len = 2; len <= n; len <<= 1, ++stage) {
        const int64_t half = len / 2;
        const int64_t off = tw.stage_off[stage];
        for (int64_t start = 0; start < n; start += len) {
            for (int64_t j = 0; j < half; ++j) {
                const R wr = static_cast<R>(tw.c[off + j]);
                const R wi = static_cast<R>(sign * tw.s[off + j]);
                R* ur = re + (start + j) * L;
                R* ui = im + (start + j) * L;
                R* vr = re + (start + j + half) * L;
                R* vi = im + (start + j + half) * L;
                for (int64_t l = 0; l < L; ++l) {
                    const R tr = wr * vr[l] - wi * vi[l];
                    const R ti = wr * vi[l] + wi * vr[l];
                    vr[l] = ur[l] - tr;
                    vi[l] = ui[l] - ti;
                    ur[l] += tr;
                    ui[l] += ti;
                }
            }
        }
    }
}

// Chirp data for Bluestein's algorithm at size n: the chirp itself and the
// padded FFT of its conjugate mirror.
struct Chirp {
    int64_t m = 0;
    std::vector<double> cr, ci;    // chirp e^{-i pi k^2 / n}, length n
    std::vector<double> bhr, bhi;  // FFT of mirrored conj chirp, length m
};

inline const Chirp& chirp_for(int64_t n) {
    thread_local std::unordered_map<int64_t, std::unique_ptr<Chirp>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return *it->second;
    auto ch = std::make_unique<Chirp>();
    ch->m = next_pow2(2 * n - 1);
    ch->cr.resize(n);
    ch->ci.resize(n);
    for (int64_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle well conditioned for large k
        const int64_t k2 = static_cast<int64_t>((static_cast<unsigned long long>(k) * k) %
                                                (2ull * static_cast<unsigned long long>(n)));
        const double ang = M_PI * static_cast<double>(k2) / static_cast<double>(n);
        ch->cr[k] = std::cos(ang);
        ch->ci[k] = -std::sin(ang);
    }
    ch->bhr.assign(ch->m, 0.0);
    ch->bhi.assign(ch->m, 0.0);
    for (int64_t k = 0; k < n; ++k) {
        ch->bhr[k] = ch->cr[k];
        ch->bhi[k] = -ch->ci[k];
        if (k > 0) {
            ch->bhr[ch->m - k] = ch->cr[k];
            ch->bhi[ch->m - k] = -ch->ci[k];
        }
    }
    fft_rows_pow2<double>(ch->bhr.data(), ch->bhi.data(), ch->m, 1, -1);
    const Chirp& ref = *ch;
    cache.emplace(n, std::move(ch));
    return ref;
}

// General-length FFT of rows via Bluestein's chirp-z reduction to a
// power-of-two convolution.
template <typename R>
void fft_rows_bluestein(R* re, R* im, int64_t n, int64_t L, int sign) {
    const Chirp& ch = chirp_for(n);
    const int64_t m = ch.m;
    std::vector<R> ar(m * L, R(0)), ai(m * L, R(0));
    for (int64_t k = 0; k < n; ++k) {
        // forward chirp; inverse runs use the conjugate
        const R cr = static_cast<R>(ch.cr[k]);
        const R ci = static_cast<R>(sign < 0 ? ch.ci[k] : -ch.ci[k]);
        const R* xr = re + k * L;
        const R* xi = im + k * L;
        R* pr = ar.data() + k * L;
        R* pi = ai.data() + k * L;
        for (int64_t l = 0; l < L; ++l) {
            pr[l] = xr[l] * cr - xi[l] * ci;
            pi[l] = xr[l] * ci + xi[l] * cr;
        }
    }
    fft_rows_pow2<R>(ar.data(), ai.data(), m, L, -1);
    for (int64_t k = 0; k < m; ++k) {
        const R br = static_cast<R>(ch.bhr[k]);
        const R bi = static_cast<R>(sign < 0 ? ch.bhi[k] : -ch.bhi[k]);
        R* pr = ar.data() + k * L;
        R* pi = ai.data() + k * L;
        for (int64_t l = 0; l < L; ++l) {
            const R tr = pr[l] * br - pi[l] * bi;
            pi[l] = pr[l] * bi + pi[l] * br;
            pr[l] = tr;
        }
    }
    fft_rows_pow2<R>(ar.data(), ai.data(), m, L, +1);
    const R invm = R(1) / static_cast<R>(m);
    for (int64_t k = 0; k < n; ++k) {
        const R cr = static_cast<R>(ch.cr[k]);
        const R ci = static_cast<R>(sign < 0 ? ch.ci[k] : -ch.ci[k]);
        const R* pr = ar.data() + k * L;
        const R* pi = ai.data() + k * L;
        R* xr = re + k * L;
        R* xi = im + k * L;
        for (int64_t l = 0; l < L; ++l) {
            const R vr = pr[l] * invm;
            const R vi = pi[l] * invm;
            xr[l] = vr * cr - vi * ci;
            xi[l] = vr * ci + vi * cr;
        }
    }
}

template <typename R>
void fft_rows(R* re, R* im, int64_t n, int64_t L, int sign) {
    if (n < 1) throw std::invalid_argument("fft: length must be >= 1");
    if (is_pow2(n))
        fft_rows_pow2(re, im, n, L, sign);
    else
        fft_rows_bluestein(re, im, n, L, sign);
}

inline int64_t rfft_bins(int64_t T) { return T / 2 + 1; }

// Real FFT along axis 0 of an (T x L) buffer; returns F = T/2+1 bins.
template <typename R>
void rfft_lanes(const R* x, int64_t T, int64_t L, R* out_re, R* out_im) {
    const int64_t F = rfft_bins(T);
    std::vector<R> re(x, x + T * L), im(T * L, R(0));
    fft_rows<R>(re.data(), im.data(), T, L, -1);
    std::copy(re.begin(), re.begin() + F * L, out_re);
    std::copy(im.begin(), im.begin() + F * L, out_im);
}

// Inverse real FFT: Hermitian completion of F bins, inverse transform,
// real part scaled by 1/T. Output is real by construction.
template <typename R>
void irfft_lanes(const R* zre, const R* zim, int64_t T, int64_t L, R* out) {
    const int64_t F = rfft_bins(T);
    std::vector<R> re(T * L), im(T * L);
    for (int64_t k = 0; k < F; ++k)
        for (int64_t l = 0; l < L; ++l) {
            re[k * L + l] = zre[k * L + l];
            im[k * L + l] = zim[k * L + l];
        }
    for (int64_t k = F; k < T; ++k) {
        const int64_t src = T - k;
        for (int64_t l = 0; l < L; ++l) {
            re[k * L + l] = zre[src * L + l];
            im[k * L + l] = -zim[src * L + l];
        }
    }
    fft_rows<R>(re.data(), im.data(), T, L, +1);
    const R inv = R(1) / static_cast<R>(T);
    for (int64_t i = 0; i < T * L; ++i) out[i] = re[i] * inv;
}

}  // namespace fft

// Value-level complex pair; shapes of the two planes always match.
template <typename R>
struct ComplexPair {
    Tensor<R> real;
    Tensor<R> imag;

    ComplexPair() = default;
    ComplexPair(Tensor<R> re, Tensor<R> im) : real(std::move(re)), imag(std::move(im)) {
        if (!real.same_shape(imag))
            throw std::invalid_argument("ComplexPair: real/imag shape mismatch");
    }

    // Stacked layout (2, ...): plane 0 real, plane 1 imaginary.
    Tensor<R> stacked() const {
        Shape s{2};
        for (int64_t d : real.shape()) s.push_back(d);
        Tensor<R> out(s);
        const int64_t n = real.numel();
        for (int64_t i = 0; i < n; ++i) {
            out[i] = real[i];
            out[n + i] = imag[i];
        }
        return out;
    }

    static ComplexPair from_stacked(const Tensor<R>& t) {
        if (t.rank() < 1 || t.dim(0) != 2)
            throw std::invalid_argument("ComplexPair: stacked tensor must lead with 2");
        Shape s(t.shape().begin() + 1, t.shape().end());
        const int64_t n = shape_numel(s);
        Tensor<R> re(s), im(s);
        for (int64_t i = 0; i < n; ++i) {
            re[i] = t[i];
            im[i] = t[n + i];
        }
        return ComplexPair(std::move(re), std::move(im));
    }
};

// Value-level transforms along axis 0 (the time axis).
template <typename R>
ComplexPair<R> rfft_value(const Tensor<R>& x) {
    if (x.rank() < 1) throw std::invalid_argument("rfft: rank >= 1 required");
    const int64_t T = x.dim(0);
    const int64_t L = x.numel() / std::max<int64_t>(T, 1);
    const int64_t F = fft::rfft_bins(T);
    Shape os(x.shape());
    os[0] = F;
    Tensor<R> re(os), im(os);
    fft::rfft_lanes<R>(x.data(), T, L, re.data(), im.data());
    return ComplexPair<R>(std::move(re), std::move(im));
}

template <typename R>
Tensor<R> irfft_value(const ComplexPair<R>& z, int64_t T) {
    const int64_t F = z.real.dim(0);
    if (F != fft::rfft_bins(T))
        throw std::invalid_argument("irfft: bin count mismatch: got " + std::to_string(F) +
                                    " for T = " + std::to_string(T));
    const int64_t L = z.real.numel() / F;
    Shape os(z.real.shape());
    os[0] = T;
    Tensor<R> out(os);
    fft::irfft_lanes<R>(z.real.data(), z.imag.data(), T, L, out.data());
    return out;
}

}  // namespace medmamba
