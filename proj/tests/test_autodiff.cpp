#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "medmamba/gradcheck.hpp"
#include "medmamba/ops.hpp"
#include "medmamba/rng.hpp"
#include "medmamba/tape.hpp"

using namespace medmamba;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Independent oracle: materialize the broadcast operand to the full shape,
// then apply the scalar operation entrywise.
Tensor<double> broadcast_oracle(EwOp op, const Tensor<double>& a, const Tensor<double>& b) {
    Tensor<double> bm(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) {
        int64_t idx = i, bidx = 0, bstride = 1;
        const Shape& as = a.shape();
        const Shape& bs = b.shape();
        for (size_t k = 0; k < bs.size(); ++k) {
            size_t ai = as.size() - 1 - k;
            size_t bi = bs.size() - 1 - k;
            int64_t coord = idx % as[ai];
            idx /= as[ai];
            if (bs[bi] != 1) bidx += coord * bstride;
            bstride *= bs[bi];
        }
        bm[i] = b[bidx];
    }
    Tensor<double> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) {
        switch (op) {
            case EwOp::Add: out[i] = a[i] + bm[i]; break;
            case EwOp::Sub: out[i] = a[i] - bm[i]; break;
            case EwOp::Mul: out[i] = a[i] * bm[i]; break;
            case EwOp::Div: out[i] = a[i] / bm[i]; break;
            case EwOp::Pow: out[i] = std::pow(a[i], bm[i]); break;
        }
    }
    return out;
}

// Naive triple loop, written independently of the gemm path.
Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<double> c(Shape{m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double s = 0;
            for (int64_t q = 0; q < k; ++q) s += a.at2(i, q) * b.at2(q, j);
            c.at2(i, j) = s;
        }
    return c;
}

}  // namespace

TEST_CASE("elementwise basics") {
    Tape<double> t;
    auto a = t.leaf(Tensor<double>::from({3}, {1, 2, 3}), false);
    auto b = t.leaf(Tensor<double>::from({3}, {4, 5, 6}), false);
    auto m = mul(a, b);
    CHECK(m.value()[0] == 4.0);
    CHECK(m.value()[1] == 10.0);
    CHECK(m.value()[2] == 18.0);

    auto z = t.leaf(Tensor<double>::from({2, 2}, {1.5, -2, 0, 7}), false);
    auto zero = t.constant(Tensor<double>::scalar(0.0));
    auto same = add(z, zero);
    CHECK(max_abs_diff(same.value(), z.value()) == 0.0);

    auto five = t.leaf(Tensor<double>::from({1}, {5}), false);
    auto s = sub(five, five);
    CHECK(s.value()[0] == 0.0);
}

TEST_CASE("elementwise shape errors") {
    Tape<double> t;
    auto a = t.leaf(Tensor<double>(Shape{2, 3}), false);
    auto b = t.leaf(Tensor<double>(Shape{2}), false);
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    auto num = t.leaf(Tensor<double>::from({2}, {1, 1}), false);
    auto den = t.leaf(Tensor<double>::from({2}, {1, 0}), false);
    CHECK_THROWS_AS(div(num, den), std::domain_error);
}

TEST_CASE("float div propagates inf") {
    Tape<float> t;
    auto num = t.leaf(Tensor<float>::from({2}, {1.f, 1.f}), false);
    auto den = t.leaf(Tensor<float>::from({2}, {1.f, 0.f}), false);
    auto q = div(num, den);
    CHECK(q.value()[0] == 1.f);
    CHECK(std::isinf(q.value()[1]));
}

TEST_CASE("broadcast matches materialize-then-operate oracle") {
    Rng rng(7);
    struct Case {
        Shape a, b;
    };
    std::vector<Case> cases = {
        {{4, 3}, {3}}, {{4, 3}, {4, 1}}, {{2, 3, 5}, {5}}, {{2, 3, 5}, {3, 1}},
        {{2, 3, 5}, {1, 5}}, {{6}, {1}}, {{2, 2, 2}, {2, 1, 2}},
    };
    for (const auto& cs : cases) {
        Tensor<double> a = random_tensor(cs.a, rng, 0.5, 2.0);
        Tensor<double> b = random_tensor(cs.b, rng, 0.5, 2.0);
        for (EwOp op : {EwOp::Add, EwOp::Sub, EwOp::Mul, EwOp::Div}) {
            Tape<double> t;
            auto va = t.leaf(a.clone(), false);
            auto vb = t.leaf(b.clone(), false);
            auto out = elementwise(op, va, vb);
            CHECK(max_abs_diff(out.value(), broadcast_oracle(op, a, b)) < 1e-15);
        }
    }
}

TEST_CASE("matmul identity and fixtures") {
    Tape<double> t;
    auto I = t.leaf(Tensor<double>::from({2, 2}, {1, 0, 0, 1}), false);
    auto M = t.leaf(Tensor<double>::from({2, 2}, {3, -1, 2, 0.5}), false);
    auto p = matmul(I, M);
    CHECK(max_abs_diff(p.value(), M.value()) == 0.0);

    auto r = t.leaf(Tensor<double>::from({1, 2}, {1, 2}), false);
    auto c = t.leaf(Tensor<double>::from({2, 1}, {3, 4}), false);
    auto s = matmul(r, c);
    CHECK(s.value()[0] == 11.0);

    auto bad = t.leaf(Tensor<double>(Shape{3, 2}), false);
    auto bad2 = t.leaf(Tensor<double>(Shape{3, 2}), false);
    CHECK_THROWS_AS(matmul(bad, bad2), std::invalid_argument);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor<double> a = random_tensor({3, 3}, rng);
        Tensor<double> b = random_tensor({3, 3}, rng);
        Tape<double> t;
        auto out = matmul(t.leaf(a.clone(), false), t.leaf(b.clone(), false));
        CHECK(max_abs_diff(out.value(), matmul_oracle(a, b)) < 1e-12);
    }
}

TEST_CASE("matmul transpose flags match oracle") {
    Rng rng(13);
    Tensor<double> a = random_tensor({4, 3}, rng);
    Tensor<double> b = random_tensor({4, 5}, rng);
    Tape<double> t;
    // a^T b : (3x4)(4x5)
    auto out = matmul(t.leaf(a.clone(), false), t.leaf(b.clone(), false), true, false);
    Tensor<double> at(Shape{3, 4});
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 3; ++j) at.at2(j, i) = a.at2(i, j);
    CHECK(max_abs_diff(out.value(), matmul_oracle(at, b)) < 1e-12);

    // a b^T with b (5x3)
    Tensor<double> b2 = random_tensor({5, 3}, rng);
    auto out2 = matmul(t.leaf(a.clone(), false), t.leaf(b2.clone(), false), false, true);
    Tensor<double> b2t(Shape{3, 5});
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 3; ++j) b2t.at2(j, i) = b2.at2(i, j);
    CHECK(max_abs_diff(out2.value(), matmul_oracle(a, b2t)) < 1e-12);
}

TEST_CASE("activation fixtures") {
    Tape<double> t;
    auto x = t.leaf(Tensor<double>::from({1}, {0.0}), false);
    CHECK(sigmoid(x).value()[0] == doctest::Approx(0.5).epsilon(1e-15));

    auto big = t.leaf(Tensor<double>::from({1}, {100.0}), false);
    CHECK(std::abs(softplus(big).value()[0] - 100.0) < 1e-12);

    auto row = t.leaf(Tensor<double>::from({3}, {2.5, 2.5, 2.5}), false);
    auto sm = softmax_lastdim(row);
    for (int i = 0; i < 3; ++i) CHECK(sm.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax rows nonnegative and sum to one") {
    Rng rng(17);
    Tensor<double> x = random_tensor({6, 5}, rng, -30, 30);
    Tape<double> t;
    auto y = softmax_lastdim(t.leaf(x.clone(), false));
    for (int64_t r = 0; r < 6; ++r) {
        double s = 0;
        for (int64_t j = 0; j < 5; ++j) {
            CHECK(y.value().at2(r, j) >= 0.0);
            s += y.value().at2(r, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("reduction fixtures") {
    Tape<double> t;
    auto v = t.leaf(Tensor<double>::from({3}, {2, 4, 6}), false);
    CHECK(mean_all(v).value()[0] == doctest::Approx(4.0));

    auto m = t.leaf(Tensor<double>::from({2, 2}, {0, -0.5, 0.2, 0}), false);
    CHECK(abs_sum(m).value()[0] == doctest::Approx(0.7));

    Tensor<double> eye(Shape{5, 5});
    for (int i = 0; i < 5; ++i) eye.at2(i, i) = 1;
    CHECK(trace(t.leaf(std::move(eye), false)).value()[0] == doctest::Approx(5.0));

    auto x = t.leaf(Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6}), false);
    auto col_mean = mean_axes(x, {0});
    CHECK(col_mean.value().numel() == 3);
    CHECK(col_mean.value()[0] == doctest::Approx(2.5));
    CHECK_THROWS_AS(mean_axes(x, {5}), std::invalid_argument);
}

TEST_CASE("quadratic gradient is analytic") {
    std::vector<Tensor<double>> init = {Tensor<double>::from({2}, {1, 2})};
    double err = grad_check(init, [](Tape<double>& t, const std::vector<Var<double>>& v) {
        return sum_all(mul(v[0], v[0]));
    });
    CHECK(err < 1e-7);

    // analytic gradient [2, 4]
    Tape<double> t;
    auto x = t.leaf(Tensor<double>::from({2}, {1, 2}), true);
    auto loss = sum_all(mul(x, x));
    t.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("primitive grad checks at random points") {
    Rng rng(23);
    auto check10 = [&](auto build, Shape sa, Shape sb, double lo, double hi) {
        for (int rep = 0; rep < 10; ++rep) {
            std::vector<Tensor<double>> init;
            init.push_back(random_tensor(sa, rng, lo, hi));
            if (!sb.empty() || sb.size()) init.push_back(random_tensor(sb, rng, lo, hi));
            double err = grad_check(init, build);
            CHECK(err < 1e-5);
        }
    };

    SUBCASE("add") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            return sum_all(mul(add(v[0], v[1]), add(v[0], v[1])));
        }, {3, 4}, {4}, -1, 1);
    }
    SUBCASE("sub mul") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            return sum_all(mul(sub(v[0], v[1]), mul(v[0], v[1])));
        }, {2, 3}, {3}, -1, 1);
    }
    SUBCASE("div") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            return sum_all(div(v[0], v[1]));
        }, {3, 3}, {3, 1}, 0.5, 2.0);
    }
    SUBCASE("pow") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            return sum_all(elementwise(EwOp::Pow, v[0], v[1]));
        }, {2, 2}, {2}, 0.5, 2.0);
    }
    SUBCASE("matmul") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            return sum_all(mul(matmul(v[0], v[1]), matmul(v[0], v[1])));
        }, {3, 4}, {4, 2}, -1, 1);
    }
    SUBCASE("matmul transposed") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            return sum_all(matmul(v[0], v[1], true, true));
        }, {3, 4}, {2, 3}, -1, 1);
    }
    SUBCASE("activations") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto y = silu(add(sigmoid(v[0]), tanh_v(v[1])));
            return sum_all(mul(y, softplus(v[0])));
        }, {3, 3}, {3, 3}, -2, 2);
    }
    SUBCASE("softmax") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto y = softmax_lastdim(v[0]);
            return sum_all(mul(y, v[1]));
        }, {4, 3}, {4, 3}, -2, 2);
    }
    SUBCASE("reductions") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto a = mean_axes(v[0], {0});
            auto b = sum_axes(mul(v[0], v[0]), {1});
            return add(sum_all(a), add(abs_sum(v[1]), sum_all(b)));
        }, {3, 4}, {2, 2}, 0.3, 2.0);
    }
    SUBCASE("reshape reverse concat") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto r = reshape(v[0], {4, 3});
            auto rev = reverse_axis(v[1], 0);
            auto cat = concat_lastdim<double>({r, rev});
            return sum_all(mul(cat, cat));
        }, {3, 4}, {4, 3}, -1, 1);
    }
    SUBCASE("scale_by_element") {
        check10([](Tape<double>& t, const std::vector<Var<double>>& v) {
            auto w = softmax_lastdim(v[1]);
            auto y = scale_by_element(v[0], w, 1);
            return sum_all(mul(y, y));
        }, {3, 3}, {3}, -1, 1);
    }
}

TEST_CASE("scalar helpers grad") {
    std::vector<Tensor<double>> init = {Tensor<double>::from({3}, {0.4, -0.2, 1.1})};
    double err = grad_check(init, [](Tape<double>& t, const std::vector<Var<double>>& v) {
        auto y = add_scalar(mul_scalar(v[0], 2.5), -0.75);
        return sum_all(mul(y, pow_scalar(v[0], 2.0)));
    });
    CHECK(err < 1e-6);
}
