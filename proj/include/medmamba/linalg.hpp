#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "medmamba/tensor.hpp"

namespace medmamba {

// C (m x n) = alpha * op(A) * op(B) + beta * C, all row-major.
// op(A) is (m x k): A itself is (k x m) when ta is set.
template <typename R>
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, R alpha, const R* A, const R* B,
          R beta, R* C) {
    using Mat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    Eigen::Map<Mat> c(C, m, n);
    auto run = [&](const auto& a, const auto& b) {
        if (beta == R(0)) {
            if (alpha == R(1))
                c.noalias() = a * b;
            else
                c.noalias() = alpha * (a * b);
        } else {
            c.noalias() = beta * c + alpha * (a * b);
        }
    };
    if (!ta && !tb)
        run(CMap(A, m, k), CMap(B, k, n));
    else if (ta && !tb)
        run(CMap(A, k, m).transpose(), CMap(B, k, n));
    else if (!ta && tb)
        run(CMap(A, m, k), CMap(B, n, k).transpose());
    else
        run(CMap(A, k, m).transpose(), CMap(B, n, k).transpose());
}

template <typename R>
R max_abs(const Tensor<R>& t) {
    R m = 0;
    for (int64_t i = 0; i < t.numel(); ++i) m = std::max(m, std::abs(t[i]));
    return m;
}

// Intermediates kept so the tape op can run the product-rule adjoint.
template <typename R>
struct MatExpWorkspace {
    int squarings = 0;
    std::vector<Tensor<R>> taylor;   // T_0 = I, T_1, ..., T_K of the scaled matrix
    std::vector<Tensor<R>> squares;  // Y_0 = sum(T_k), Y_1 = Y_0^2, ..., Y_{s-1}
    Tensor<R> result;
};

// exp(M) by scaling-and-squaring with a truncated Taylor series.
// Scale by 2^-s until the infinity norm is <= 0.5, sum terms until the
// term norm drops below 1e-16, then square s times.
template <typename R>
MatExpWorkspace<R> matrix_exp_forward(const Tensor<R>& M, int64_t cap = 256) {
    if (M.rank() != 2 || M.dim(0) != M.dim(1))
        throw std::invalid_argument("matrix_exp: square matrix required, got " +
                                    shape_str(M.shape()));
    const int64_t C = M.dim(0);
    if (C > cap) throw std::invalid_argument("matrix_exp: dimension exceeds cap");
    if (!all_finite(M)) throw std::invalid_argument("matrix_exp: non-finite entries");

    R norm = 0;
    for (int64_t i = 0; i < C; ++i) {
        R row = 0;
        for (int64_t j = 0; j < C; ++j) row += std::abs(M.at2(i, j));
        norm = std::max(norm, row);
    }
    int s = 0;
    while (norm > R(0.5)) {
        norm /= 2;
        ++s;
    }

    MatExpWorkspace<R> ws;
    ws.squarings = s;
    const R scale = std::ldexp(R(1), -s);

    Tensor<R> Ms(Shape{C, C});
    for (int64_t i = 0; i < C * C; ++i) Ms[i] = M[i] * scale;

    Tensor<R> term(Shape{C, C});
    for (int64_t i = 0; i < C; ++i) term.at2(i, i) = 1;
    Tensor<R> acc = term.clone();
    ws.taylor.push_back(term.clone());

    const int max_terms = 64;
    for (int k = 1; k <= max_terms; ++k) {
        Tensor<R> next(Shape{C, C});
        gemm<R>(false, false, C, C, C, R(1) / R(k), term.data(), Ms.data(), R(0), next.data());
        term = std::move(next);
        for (int64_t i = 0; i < C * C; ++i) acc[i] += term[i];
        ws.taylor.push_back(term.clone());
        if (max_abs(term) < R(1e-16)) break;
    }

    ws.squares.push_back(acc.clone());
    for (int i = 0; i < s; ++i) {
        const Tensor<R>& y = ws.squares.back();
        Tensor<R> sq(Shape{C, C});
        gemm<R>(false, false, C, C, C, R(1), y.data(), y.data(), R(0), sq.data());
        if (i + 1 < s) ws.squares.push_back(sq.clone());
        acc = std::move(sq);
    }
    ws.result = (s == 0) ? ws.squares[0].clone() : std::move(acc);
    return ws;
}

template <typename R>
Tensor<R> matrix_exp_value(const Tensor<R>& M, int64_t cap = 256) {
    return matrix_exp_forward(M, cap).result;
}

// Adjoint of the forward above: walks the squaring chain, then the Taylor
// recurrence T_k = T_{k-1} * Ms / k in reverse.
template <typename R>
Tensor<R> matrix_exp_backward(const MatExpWorkspace<R>& ws, const Tensor<R>& M,
                              const Tensor<R>& gout) {
    const int64_t C = M.dim(0);
    const int s = ws.squarings;
    const R scale = std::ldexp(R(1), -s);

    Tensor<R> g = gout.clone();
    for (int i = s - 1; i >= 0; --i) {
        const Tensor<R>& y = ws.squares[i];
        Tensor<R> gy(Shape{C, C});
        gemm<R>(true, false, C, C, C, R(1), y.data(), g.data(), R(0), gy.data());
        gemm<R>(false, true, C, C, C, R(1), g.data(), y.data(), R(1), gy.data());
        g = std::move(gy);
    }

    // g is now dL/d(sum of Taylor terms); every T_k receives it directly.
    const int K = static_cast<int>(ws.taylor.size()) - 1;
    Tensor<R> Ms(Shape{C, C});
    for (int64_t i = 0; i < C * C; ++i) Ms[i] = M[i] * scale;

    Tensor<R> gM(Shape{C, C});
    Tensor<R> adj = g.clone();  // dL/dT_K
    for (int k = K; k >= 1; --k) {
        gemm<R>(true, false, C, C, C, R(1) / R(k), ws.taylor[k - 1].data(), adj.data(), R(1),
                gM.data());
        Tensor<R> prev(Shape{C, C});
        gemm<R>(false, true, C, C, C, R(1) / R(k), adj.data(), Ms.data(), R(0), prev.data());
        for (int64_t i = 0; i < C * C; ++i) prev[i] += g[i];
        adj = std::move(prev);
    }
    for (int64_t i = 0; i < C * C; ++i) gM[i] *= scale;
    return gM;
}

}  // namespace medmamba
