#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "medmamba/gradcheck.hpp"
#include "medmamba/rng.hpp"
#include "medmamba/ssm.hpp"

using namespace medmamba;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Step-by-step recurrence oracle written directly from the update rule,
// using zoh_discretize per token.
Tensor<double> scan_oracle(const Tensor<double>& u, const Tensor<double>& delta,
                           const Tensor<double>& a, const Tensor<double>& B,
                           const Tensor<double>& C, const Tensor<double>& Dskip) {
    const int64_t T = u.dim(0), L = u.dim(1), Din = u.dim(2), N = a.dim(0);
    Tensor<double> y(u.shape());
    for (int64_t l = 0; l < L; ++l) {
        Tensor<double> x(Shape{N, Din});
        for (int64_t t = 0; t < T; ++t) {
            auto [abar, bbar] = zoh_discretize(a, delta.at2(t, l), B);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t d = 0; d < Din; ++d)
                    x.at2(n, d) = abar[n] * x.at2(n, d) + bbar.at2(n, d) * u.at3(t, l, d);
            for (int64_t d = 0; d < Din; ++d) {
                double s = Dskip[d] * u.at3(t, l, d);
                for (int64_t n = 0; n < N; ++n) s += C.at2(d, n) * x.at2(n, d);
                y.at3(t, l, d) = s;
            }
        }
    }
    return y;
}

struct ScanInputs {
    Tensor<double> u, delta, a_log, B, C, Dskip;
};

ScanInputs random_scan_inputs(int64_t T, int64_t L, int64_t N, int64_t Din, Rng& rng) {
    ScanInputs si;
    si.u = random_tensor({T, L, Din}, rng);
    si.delta = random_tensor({T, L}, rng, 0.05, 2.0);
    si.a_log = random_tensor({N}, rng, -1.0, 1.5);
    si.B = random_tensor({N, Din}, rng);
    si.C = random_tensor({Din, N}, rng);
    si.Dskip = random_tensor({Din}, rng);
    return si;
}

Tensor<double> run_scan(const ScanInputs& si, bool parallel) {
    Tape<double> t;
    auto y = selective_scan(t.leaf(si.u.clone(), false), t.leaf(si.delta.clone(), false),
                            t.leaf(si.a_log.clone(), false), t.leaf(si.B.clone(), false),
                            t.leaf(si.C.clone(), false), t.leaf(si.Dskip.clone(), false), 0,
                            parallel);
    return y.value().clone();
}

}  // namespace

TEST_CASE("zoh closed form fixtures") {
    // a = -1, delta = ln 2 -> Abar = 0.5, Bbar = 0.5 B
    {
        Tensor<double> a = Tensor<double>::from({1}, {-1.0});
        Tensor<double> B = Tensor<double>::from({1, 2}, {2.0, -3.0});
        auto [abar, bbar] = zoh_discretize(a, std::log(2.0), B);
        CHECK(std::abs(abar[0] - 0.5) < 1e-12);
        CHECK(std::abs(bbar.at2(0, 0) - 1.0) < 1e-12);
        CHECK(std::abs(bbar.at2(0, 1) + 1.5) < 1e-12);
    }
    // delta -> 0: Abar -> 1, Bbar -> delta B
    {
        Tensor<double> a = Tensor<double>::from({1}, {-1.5});
        Tensor<double> B = Tensor<double>::from({1, 1}, {1.0});
        auto [abar, bbar] = zoh_discretize(a, 1e-10, B);
        CHECK(std::abs(abar[0] - 1.0) < 1e-9);
        CHECK(bbar.at2(0, 0) == doctest::Approx(1e-10).epsilon(1e-6));
    }
    // a = -2, delta = 0.3, B = 1
    {
        Tensor<double> a = Tensor<double>::from({1}, {-2.0});
        Tensor<double> B = Tensor<double>::from({1, 1}, {1.0});
        auto [abar, bbar] = zoh_discretize(a, 0.3, B);
        CHECK(abar[0] == doctest::Approx(std::exp(-0.6)).epsilon(1e-12));
        CHECK(bbar.at2(0, 0) == doctest::Approx((std::exp(-0.6) - 1.0) / -2.0).epsilon(1e-12));
        CHECK(abar[0] == doctest::Approx(0.5488).epsilon(1e-4));
        CHECK(bbar.at2(0, 0) == doctest::Approx(0.2256).epsilon(1e-3));
    }
    // delta <= 0 rejected
    {
        Tensor<double> a = Tensor<double>::from({1}, {-1.0});
        Tensor<double> B = Tensor<double>::from({1, 1}, {1.0});
        CHECK_THROWS_AS(zoh_discretize(a, 0.0, B), std::invalid_argument);
        CHECK_THROWS_AS(zoh_discretize(a, -0.1, B), std::invalid_argument);
    }
}

TEST_CASE("zoh branches agree at the switch point") {
    // |delta * a| = 1e-6 exactly: exact formula vs series branch
    for (double a : {-1.0, -3.7, -0.25}) {
        const double delta = 1e-6 / std::abs(a);
        const double x = delta * a;
        const double ab = std::exp(x);
        const double exact = (ab - 1.0) / a;
        const double series = delta * (1.0 + x / 2.0 + x * x / 6.0);
        CHECK(std::abs(exact - series) / std::abs(exact) < 1e-9);
        // the implementation picks one branch on each side of the switch;
        // at the boundary both reproduce the exact formula to 1e-9 relative
        Tensor<double> av = Tensor<double>::from({1}, {a});
        Tensor<double> B = Tensor<double>::from({1, 1}, {1.0});
        for (double scale : {0.999999, 1.000001}) {
            const double d2 = delta * scale;
            auto got = zoh_discretize(av, d2, B);
            const double want = (std::exp(d2 * a) - 1.0) / a;
            CHECK(std::abs(got.second.at2(0, 0) - want) / std::abs(want) < 1e-9);
        }
    }
}

TEST_CASE("selective_params fixtures") {
    Rng rng(101);
    ParamStore<double> ps;
    auto ids = make_ssm_direction(ps, "dir", 3, 6, 4, 2, rng);

    // zero input, b_delta = 0 -> delta = softplus(0) = ln 2 everywhere
    ps.value(ids.b_delta)[0] = 0.0;
    {
        Tape<double> t;
        auto bound = bind(t, ps, false);
        auto h = t.leaf(Tensor<double>(Shape{5, 2, 3}), false);
        auto si = selective_params(bound, ids, h, 0);
        for (int64_t i = 0; i < si.delta.value().numel(); ++i)
            CHECK(si.delta.value()[i] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        // gates strictly in (0, 1)
        for (int64_t i = 0; i < si.gate.value().numel(); ++i) {
            CHECK(si.gate.value()[i] > 0.0);
            CHECK(si.gate.value()[i] < 1.0);
        }
    }
    // w_delta = 0, b_delta = 5 -> delta = softplus(5) everywhere
    for (int64_t i = 0; i < ps.value(ids.w_delta).numel(); ++i) ps.value(ids.w_delta)[i] = 0.0;
    ps.value(ids.b_delta)[0] = 5.0;
    {
        Tape<double> t;
        auto bound = bind(t, ps, false);
        Tensor<double> h = random_tensor({4, 2, 3}, rng);
        auto si = selective_params(bound, ids, t.leaf(std::move(h), false), 0);
        const double expect = std::log1p(std::exp(5.0));
        CHECK(expect == doctest::Approx(5.00672).epsilon(1e-5));
        for (int64_t i = 0; i < si.delta.value().numel(); ++i)
            CHECK(si.delta.value()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("scan memoryless limit") {
    // huge delta with a = -1 underflows Abar to 0 and phi to 1
    const int64_t T = 4, Din = 2;
    Tape<double> t;
    Rng rng(103);
    Tensor<double> u = random_tensor({T, 1, Din}, rng);
    auto y = selective_scan(
        t.leaf(u.clone(), false), t.leaf(Tensor<double>::full(Shape{T, 1}, 1e6), false),
        t.leaf(Tensor<double>::from({1}, {0.0}), false),  // a = -1
        t.leaf(Tensor<double>::full(Shape{1, Din}, 0.7), false),
        t.leaf(Tensor<double>::full(Shape{Din, 1}, 1.3), false),
        t.leaf(Tensor<double>::full(Shape{Din}, 0.2), false), 0, false);
    for (int64_t tt = 0; tt < T; ++tt)
        for (int64_t d = 0; d < Din; ++d) {
            const double expect = 1.3 * 0.7 * u.at3(tt, 0, d) + 0.2 * u.at3(tt, 0, d);
            CHECK(y.value().at3(tt, 0, d) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("scan prefix-sum limit") {
    // a_log = -40 makes Abar round to exactly 1 and phi to exactly delta
    Tape<double> t;
    auto y = selective_scan(t.leaf(Tensor<double>::full(Shape{3, 1, 1}, 1.0), false),
                            t.leaf(Tensor<double>::full(Shape{3, 1}, 1.0), false),
                            t.leaf(Tensor<double>::from({1}, {-40.0}), false),
                            t.leaf(Tensor<double>::from({1, 1}, {1.0}), false),
                            t.leaf(Tensor<double>::from({1, 1}, {1.0}), false),
                            t.leaf(Tensor<double>::from({1}, {0.0}), false), 0, false);
    CHECK(y.value()[0] == 1.0);
    CHECK(y.value()[1] == 2.0);
    CHECK(y.value()[2] == 3.0);
}

TEST_CASE("scan matches explicit recurrence oracle") {
    Rng rng(107);
    for (int rep = 0; rep < 5; ++rep) {
        ScanInputs si = random_scan_inputs(6, 1, 2, 1, rng);
        Tensor<double> a(Shape{2});
        for (int64_t n = 0; n < 2; ++n) a[n] = -std::exp(si.a_log[n]);
        Tensor<double> got = run_scan(si, false);
        Tensor<double> want = scan_oracle(si.u, si.delta, a, si.B, si.C, si.Dskip);
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("parallel scan equals sequential scan") {
    Rng rng(109);
    // single element is bitwise identical
    {
        ScanInputs si = random_scan_inputs(1, 2, 3, 2, rng);
        CHECK(max_abs_diff(run_scan(si, false), run_scan(si, true)) == 0.0);
    }
    // prefix sums of [1,2,3,4]
    {
        Tape<double> t;
        Tensor<double> u(Shape{4, 1, 1});
        for (int64_t i = 0; i < 4; ++i) u[i] = double(i + 1);
        auto y = selective_scan(t.leaf(std::move(u), false),
                                t.leaf(Tensor<double>::full(Shape{4, 1}, 1.0), false),
                                t.leaf(Tensor<double>::from({1}, {-40.0}), false),
                                t.leaf(Tensor<double>::from({1, 1}, {1.0}), false),
                                t.leaf(Tensor<double>::from({1, 1}, {1.0}), false),
                                t.leaf(Tensor<double>::from({1}, {0.0}), false), 0, true);
        CHECK(y.value()[0] == 1.0);
        CHECK(y.value()[1] == 3.0);
        CHECK(y.value()[2] == 6.0);
        CHECK(y.value()[3] == 10.0);
    }
    // random instances across the required length grid
    int checked = 0;
    for (int64_t T : {1, 2, 3, 17, 128}) {
        for (int rep = 0; rep < 10; ++rep) {
            ScanInputs si = random_scan_inputs(T, 2, 3, 2, rng);
            CHECK(max_abs_diff(run_scan(si, false), run_scan(si, true)) < 1e-12);
            ++checked;
        }
    }
    CHECK(checked == 50);
}

TEST_CASE("forward scan is causal, bitwise") {
    Rng rng(113);
    ScanInputs si = random_scan_inputs(10, 1, 3, 2, rng);
    Tensor<double> base = run_scan(si, false);
    ScanInputs perturbed = si;
    perturbed.u = si.u.clone();
    const int64_t tcut = 6;
    perturbed.u.at3(tcut, 0, 1) += 0.5;
    Tensor<double> changed = run_scan(perturbed, false);
    for (int64_t t = 0; t < tcut; ++t)
        for (int64_t d = 0; d < 2; ++d)
            CHECK(changed.at3(t, 0, d) == base.at3(t, 0, d));
    // and the perturbed step itself responds
    CHECK(changed.at3(tcut, 0, 1) != base.at3(tcut, 0, 1));
}

TEST_CASE("scan is stable over long horizons") {
    Rng rng(127);
    const int64_t T = 1000, N = 4, Din = 2;
    ScanInputs si;
    si.u = random_tensor({T, 1, Din}, rng);
    si.delta = random_tensor({T, 1}, rng, 0.01, 10.0);
    si.a_log = random_tensor({N}, rng, -1.0, 1.0);
    si.B = random_tensor({N, Din}, rng);
    si.C = random_tensor({Din, N}, rng);
    si.Dskip = random_tensor({Din}, rng);
    Tensor<double> y = run_scan(si, false);
    CHECK(all_finite(y));
    // |x_t| <= max_t |Bbar_t u_t| * T with x_0 = 0; check via the output
    // being bounded by a crude constant
    double bound = 0;
    Tensor<double> a(Shape{N});
    for (int64_t n = 0; n < N; ++n) a[n] = -std::exp(si.a_log[n]);
    for (int64_t t = 0; t < T; ++t) {
        auto [abar, bbar] = zoh_discretize(a, si.delta.at2(t, 0), si.B);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t d = 0; d < Din; ++d)
                bound = std::max(bound, std::abs(bbar.at2(n, d) * si.u.at3(t, 0, d)));
    }
    double cbound = 0, dbound = 0;
    for (int64_t i = 0; i < si.C.numel(); ++i) cbound = std::max(cbound, std::abs(si.C[i]));
    for (int64_t i = 0; i < si.Dskip.numel(); ++i) dbound = std::max(dbound, std::abs(si.Dskip[i]));
    double umax = 0;
    for (int64_t i = 0; i < si.u.numel(); ++i) umax = std::max(umax, std::abs(si.u[i]));
    const double ymax_bound = cbound * N * (bound * T) + dbound * umax;
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y[i]) <= ymax_bound);
}

TEST_CASE("scan grad check") {
    Rng rng(131);
    ScanInputs si = random_scan_inputs(5, 2, 3, 2, rng);
    std::vector<Tensor<double>> init = {si.u, si.delta.clone(), si.a_log, si.B, si.C, si.Dskip};
    // delta enters through softplus so the probe stays positive
    double err = grad_check(init, [](Tape<double>& t, const std::vector<Var<double>>& v) {
        auto delta = softplus(v[1]);
        auto y = selective_scan(v[0], delta, v[2], v[3], v[4], v[5], 0, false);
        return sum_all(mul(y, y));
    });
    CHECK(err < 1e-5);
    // channel-axis variant
    ScanInputs s2 = random_scan_inputs(4, 3, 2, 2, rng);
    std::swap(s2.u, s2.u);  // u is (4,3,2); seq along axis 1 has length 3
    std::vector<Tensor<double>> init2 = {s2.u, s2.delta, s2.a_log, s2.B, s2.C, s2.Dskip};
    err = grad_check(init2, [](Tape<double>& t, const std::vector<Var<double>>& v) {
        auto delta = softplus(v[1]);
        auto y = selective_scan(v[0], delta, v[2], v[3], v[4], v[5], 1, false);
        return sum_all(mul(y, y));
    });
    CHECK(err < 1e-5);
}

TEST_CASE("bidirectional ssm shape and zero contracts") {
    Rng rng(137);
    ParamStore<double> ps;
    auto ids = make_bissm(ps, "blk", 3, 2, 2, 2, rng);
    for (int64_t T : {1, 2, 7}) {
        Tape<double> t;
        auto bound = bind(t, ps, false);
        auto h = t.leaf(random_tensor({T, 2, 3}, rng), false);
        auto z = bidirectional_ssm(bound, ids, h, 0);
        CHECK(z.value().shape() == Shape{T, 2, 3});
        CHECK(all_finite(z.value()));
    }
    // zero input and zero output bias give exactly zero output
    {
        Tape<double> t;
        auto bound = bind(t, ps, false);
        auto h = t.leaf(Tensor<double>(Shape{5, 2, 3}), false);
        auto z = bidirectional_ssm(bound, ids, h, 0);
        CHECK(max_abs(z.value()) == 0.0);
    }
}

TEST_CASE("palindromic input with tied directions") {
    Rng rng(139);
    ParamStore<double> ps;
    auto ids = make_bissm(ps, "blk", 2, 3, 2, 2, rng);
    // tie backward parameters to forward ones
    auto tie = [&](const SsmDirectionIds& f, const SsmDirectionIds& b) {
        for (auto [src, dst] :
             {std::pair{f.a_log, b.a_log}, {f.B, b.B}, {f.C, b.C}, {f.D_skip, b.D_skip},
              {f.conv_k, b.conv_k}, {f.W_u, b.W_u}, {f.w_delta, b.w_delta},
              {f.b_delta, b.b_delta}, {f.W_g, b.W_g}}) {
            ps.value(dst) = ps.value(src).clone();
        }
    };
    tie(ids.fwd, ids.bwd);

    const int64_t T = 6;
    Tensor<double> h(Shape{T, 1, 2});
    for (int64_t t = 0; t < T / 2; ++t)
        for (int64_t d = 0; d < 2; ++d) {
            const double v = rng.uniform(-1, 1);
            h.at3(t, 0, d) = v;
            h.at3(T - 1 - t, 0, d) = v;
        }
    Tape<double> tape;
    auto bound = bind(tape, ps, false);
    auto hv = tape.leaf(h.clone(), false);
    auto ofwd = ssm_direction(bound, ids.fwd, hv, 0);
    auto obwd = reverse_axis(ssm_direction(bound, ids.bwd, reverse_axis(hv, 0), 0), 0);
    // on a palindrome with tied weights, o_fwd equals time-reversed o_bwd
    for (int64_t t = 0; t < T; ++t)
        for (int64_t d = 0; d < 2; ++d)
            CHECK(ofwd.value().at3(t, 0, d) ==
                  doctest::Approx(obwd.value().at3(T - 1 - t, 0, d)).epsilon(1e-12));
}

TEST_CASE("bidirectional ssm full-layer grad check") {
    Rng rng(149);
    const int64_t T = 8, D = 4, N = 4;
    ParamStore<double> ps;
    auto ids = make_bissm(ps, "blk", D, N, 2, 3, rng);
    Tensor<double> h = random_tensor({T, 1, D}, rng);

    std::vector<Tensor<double>> init;
    init.push_back(h);
    for (size_t i = 0; i < ps.size(); ++i) init.push_back(ps.value(static_cast<int>(i)).clone());

    double err = grad_check(init, [&ids, &ps](Tape<double>& t, const std::vector<Var<double>>& v) {
        Bound<double> bound;
        bound.tape = &t;
        for (size_t i = 1; i < v.size(); ++i) bound.vars.push_back(v[i]);
        auto z = bidirectional_ssm(bound, ids, v[0], 0);
        return sum_all(mul(z, z));
    });
    CHECK(err < 1e-4);
}
