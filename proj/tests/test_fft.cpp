#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "medmamba/fft.hpp"
#include "medmamba/gradcheck.hpp"
#include "medmamba/ops_fft.hpp"
#include "medmamba/rng.hpp"

using namespace medmamba;

namespace {

// Quadratic-time DFT oracle, independent of the radix-2/Bluestein path.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
    const size_t T = x.size();
    std::vector<std::complex<double>> out(T);
    for (size_t k = 0; k < T; ++k) {
        std::complex<double> s(0, 0);
        for (size_t t = 0; t < T; ++t) {
            const double ang = -2.0 * M_PI * double(k) * double(t) / double(T);
            s += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = s;
    }
    return out;
}

Tensor<double> random_signal(int64_t T, int64_t L, Rng& rng) {
    Tensor<double> x(Shape{T, L});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-2, 2);
    return x;
}

}  // namespace

TEST_CASE("rfft of constant signal is DC only") {
    const int64_t T = 8;
    const double c = 1.75;
    Tensor<double> x = Tensor<double>::full(Shape{T, 1}, c);
    auto z = rfft_value(x);
    CHECK(z.real.dim(0) == 5);
    CHECK(z.real[0] == doctest::Approx(8 * c).epsilon(1e-14));
    CHECK(std::abs(z.imag[0]) < 1e-12);
    for (int64_t k = 1; k < 5; ++k) {
        CHECK(std::abs(z.real[k]) < 1e-12);
        CHECK(std::abs(z.imag[k]) < 1e-12);
    }
}

TEST_CASE("cosine concentrates in bin 1") {
    const int64_t T = 8;
    Tensor<double> x(Shape{T, 1});
    std::vector<double> raw(T);
    for (int64_t t = 0; t < T; ++t) {
        x[t] = std::cos(2.0 * M_PI * double(t) / double(T));
        raw[t] = x[t];
    }
    auto z = rfft_value(x);
    auto oracle = naive_dft(raw);
    for (int64_t k = 0; k < 5; ++k) {
        CHECK(z.real[k] == doctest::Approx(oracle[k].real()).epsilon(1e-10));
        CHECK(std::abs(z.imag[k] - oracle[k].imag()) < 1e-10);
    }
    CHECK(z.real[1] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(std::abs(z.imag[1]) < 1e-12);
    CHECK(std::abs(z.real[2]) < 1e-12);
}

TEST_CASE("rfft matches naive DFT for pow2 and general lengths") {
    Rng rng(31);
    for (int64_t T : {1, 2, 3, 5, 7, 8, 12, 16, 23, 128}) {
        std::vector<double> raw(T);
        Tensor<double> x(Shape{T, 1});
        for (int64_t t = 0; t < T; ++t) {
            raw[t] = rng.uniform(-1, 1);
            x[t] = raw[t];
        }
        auto z = rfft_value(x);
        auto oracle = naive_dft(raw);
        const int64_t F = T / 2 + 1;
        for (int64_t k = 0; k < F; ++k) {
            CHECK(std::abs(z.real[k] - oracle[k].real()) < 1e-10);
            CHECK(std::abs(z.imag[k] - oracle[k].imag()) < 1e-10);
        }
    }
}

TEST_CASE("irfft inverts rfft to 1e-10 in f64") {
    Rng rng(37);
    for (int64_t T : {1, 2, 7, 8, 128}) {
        Tensor<double> x = random_signal(T, 3, rng);
        auto z = rfft_value(x);
        Tensor<double> back = irfft_value(z, T);
        CHECK(max_abs_diff(back, x) < 1e-10);
    }
}

TEST_CASE("irfft inverts rfft to 1e-6 in f32") {
    Rng rng(41);
    for (int64_t T : {2, 7, 8, 128}) {
        Tensor<float> x(Shape{T, 2});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = float(rng.uniform(-1, 1));
        auto z = rfft_value(x);
        Tensor<float> back = irfft_value(z, T);
        CHECK(max_abs_diff(back, x) < 1e-6f);
    }
}

TEST_CASE("irfft rejects wrong bin count") {
    Rng rng(43);
    Tensor<double> x = random_signal(8, 1, rng);
    auto z = rfft_value(x);  // 5 bins
    CHECK_THROWS_AS(irfft_value(z, 16), std::invalid_argument);
}

TEST_CASE("complex_mul identity, rotation, and scalar oracle") {
    Rng rng(47);
    const int64_t F = 4, C = 3, D = 2;
    Tensor<double> z(Shape{2, F, C, D});
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.uniform(-1, 1);

    // w = 1 + 0i everywhere leaves z unchanged
    Tensor<double> w1(Shape{2, F, 1, D});
    for (int64_t i = 0; i < F * D; ++i) w1[i] = 1.0;
    {
        Tape<double> t;
        auto out = complex_mul(t.leaf(z.clone(), false), t.leaf(w1.clone(), false));
        CHECK(max_abs_diff(out.value(), z) < 1e-15);
    }

    // w = i rotates 1 + 0i to 0 + 1i
    {
        Tensor<double> zunit(Shape{2, 1, 1, 1});
        zunit[0] = 1.0;
        Tensor<double> wi(Shape{2, 1, 1, 1});
        wi[1] = 1.0;
        Tape<double> t;
        auto out = complex_mul(t.leaf(std::move(zunit), false), t.leaf(std::move(wi), false));
        CHECK(out.value()[0] == doctest::Approx(0.0));
        CHECK(out.value()[1] == doctest::Approx(1.0));
    }

    // random instance against scalar complex arithmetic
    Tensor<double> w(Shape{2, F, 1, D});
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1, 1);
    Tape<double> t;
    auto out = complex_mul(t.leaf(z.clone(), false), t.leaf(w.clone(), false));
    const int64_t n = F * C * D;
    for (int64_t f = 0; f < F; ++f)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t d = 0; d < D; ++d) {
                const int64_t i = (f * C + c) * D + d;
                const int64_t j = f * D + d;
                std::complex<double> a(z[i], z[n + i]);
                std::complex<double> b(w[j], w[F * D + j]);
                auto p = a * b;
                CHECK(out.value()[i] == doctest::Approx(p.real()).epsilon(1e-12));
                CHECK(out.value()[n + i] == doctest::Approx(p.imag()).epsilon(1e-12));
            }

    // shape mismatch beyond the channel broadcast
    Tensor<double> wbad(Shape{2, F, 2, D});
    Tape<double> t2;
    CHECK_THROWS_AS(
        complex_mul(t2.leaf(z.clone(), false), t2.leaf(std::move(wbad), false)),
        std::invalid_argument);
}

TEST_CASE("fft ops pass grad checks") {
    Rng rng(53);
    for (int64_t T : {4, 7, 8}) {
        Tensor<double> x(Shape{T, 2, 3});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);
        Tensor<double> w(Shape{2, T / 2 + 1, 1, 3});
        for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-1, 1);
        // + sum(w^2) keeps the probe well conditioned on filter coordinates
        // whose irfft path is structurally dead (imag of bin 0 / Nyquist)
        double err = grad_check({x, w}, [T](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto z = rfft(v[0]);
            auto filt = complex_mul(z, v[1]);
            auto back = irfft(filt, T);
            return add(sum_all(mul(back, back)), sum_all(mul(v[1], v[1])));
        });
        CHECK(err < 1e-5);
    }
}

TEST_CASE("irfft adjoint per coordinate, dead bins excluded") {
    // The imaginary parts of bin 0 (and the Nyquist bin for even T) cannot
    // affect the real output, so their true gradient is exactly zero and a
    // finite-difference probe only measures rounding noise there.
    Rng rng(59);
    for (int64_t T : {6, 7}) {
        const int64_t F = T / 2 + 1, L = 2;
        Tensor<double> z(Shape{2, F, 1, L});
        for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.uniform(-1, 1);

        auto eval = [&](const Tensor<double>& zz) {
            Tape<double> t;
            auto back = irfft(t.leaf(zz.clone(), false), T);
            double s = 0;
            for (int64_t i = 0; i < back.value().numel(); ++i)
                s += back.value()[i] * back.value()[i];
            return s;
        };

        Tape<double> t;
        auto zv = t.leaf(z.clone(), true);
        auto back = irfft(zv, T);
        t.backward(sum_all(mul(back, back)));

        const double h = 1e-6;
        for (int64_t i = 0; i < z.numel(); ++i) {
            const bool im_plane = i >= F * L;
            const int64_t bin = (i % (F * L)) / L;
            const bool dead = im_plane && (bin == 0 || (T % 2 == 0 && bin == T / 2));
            if (dead) {
                CHECK(std::abs(zv.grad()[i]) < 1e-14);
                continue;
            }
            Tensor<double> zp = z.clone();
            zp[i] += h;
            Tensor<double> zm = z.clone();
            zm[i] -= h;
            const double fd = (eval(zp) - eval(zm)) / (2 * h);
            CHECK(std::abs(zv.grad()[i] - fd) / (std::abs(fd) + 1e-8) < 1e-5);
        }
    }
}
