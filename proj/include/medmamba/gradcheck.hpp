#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "medmamba/ops.hpp"
#include "medmamba/tape.hpp"

namespace medmamba {

// Central-difference check of reverse-mode gradients, f64 only.
// `build` constructs a scalar loss from leaves bound to `inits` and is
// re-invoked on perturbed copies, so it must be a pure function of them.
// Returns max over coordinates of |g_ad - g_fd| / (|g_fd| + 1e-8).
template <typename F>
double grad_check(const std::vector<Tensor<double>>& inits, F build, double h = 1e-5) {
    auto eval = [&](const std::vector<Tensor<double>>& vals) {
        Tape<double> tape;
        std::vector<Var<double>> leaves;
        leaves.reserve(vals.size());
        for (const auto& v : vals) leaves.push_back(tape.leaf(v.clone(), false));
        Var<double> loss = build(tape, leaves);
        const double f = loss.value()[0];
        if (!std::isfinite(f)) throw std::runtime_error("grad_check: non-finite objective");
        return f;
    };

    // Reverse-mode gradients.
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    leaves.reserve(inits.size());
    for (const auto& v : inits) leaves.push_back(tape.leaf(v.clone(), true));
    Var<double> loss = build(tape, leaves);
    if (!std::isfinite(loss.value()[0]))
        throw std::runtime_error("grad_check: non-finite objective");
    tape.backward(loss);

    std::vector<Tensor<double>> grads;
    for (auto& l : leaves) {
        grads.push_back(l.grad().defined() ? l.grad().clone()
                                           : Tensor<double>(l.value().shape()));
    }

    double worst = 0.0;
    std::vector<Tensor<double>> work;
    for (const auto& v : inits) work.push_back(v.clone());
    for (size_t p = 0; p < work.size(); ++p) {
        for (int64_t i = 0; i < work[p].numel(); ++i) {
            const double x0 = work[p][i];
            work[p][i] = x0 + h;
            const double fp = eval(work);
            work[p][i] = x0 - h;
            const double fm = eval(work);
            work[p][i] = x0;
            const double fd = (fp - fm) / (2.0 * h);
            const double err = std::abs(grads[p][i] - fd) / (std::abs(fd) + 1e-8);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace medmamba
