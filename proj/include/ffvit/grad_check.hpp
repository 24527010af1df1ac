#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "ffvit/ops.hpp"
#include "ffvit/tape.hpp"
#include "ffvit/tensor.hpp"

namespace ffvit {

// Central-difference check of d f / d x against the recorded adjoints.
// f must be a deterministic scalar-valued function of x; evaluations used
// for the differences run outside any tape. Meant for 64-bit tensors.
//
// Returns max over elements of |analytic - central| / max(1, |analytic|).
template <typename F>
double grad_check(F &&f, Tensor<double> &x, double h = 1e-5) {
    x.set_requires_grad(true);
    x.zero_grad();

    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        Tensor<double> y = f(x);
        tape.backward(y);
    }
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());

    auto eval = [&]() { return std::forward<F>(f)(x).item(); };

    double worst = 0.0;
    auto values = x.data();
    for (size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        const double up = eval();
        values[i] = saved - h;
        const double down = eval();
        values[i] = saved;

        const double central = (up - down) / (2.0 * h);
        const double err = std::fabs(analytic[i] - central) / std::max(1.0, std::fabs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace ffvit
