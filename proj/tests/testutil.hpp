#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nanocontrol/adamw.hpp"
#include "nanocontrol/tensor.hpp"

namespace testutil {

using nanocontrol::NamedParam;
using nanocontrol::Tape;
using nanocontrol::Tensor;

// Worst relative error with an absolute floor, for comparing a gradient
// against its finite-difference estimate. The floor makes the relative
// criterion well defined near zero: central differences of an O(1) loss at
// h=1e-5 carry ~1e-11 of absolute roundoff noise, so gradients below 1e-5
// are held to an absolute tolerance of rel_tol * 1e-5 instead.
inline double rel_err(double a, double b) {
    double denom = std::max({std::fabs(a), std::fabs(b), 1e-5});
    return std::fabs(a - b) / denom;
}

// Runs loss_fn once under a tape, records autodiff grads for `params`,
// then sweeps every scalar with central differences (no tape) and returns
// the worst relative error. loss_fn must return the loss tensor.
inline double fd_worst_rel_err(std::vector<Tensor<double>> params,
                               const std::function<Tensor<double>()>& loss_fn,
                               double h = 1e-5) {
    for (auto& p : params) {
        p.impl()->ensure_grad();
        p.zero_grad();
    }
    {
        Tape<double> tape;
        auto loss = loss_fn();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> ad;
    for (auto& p : params)
        ad.emplace_back(p.grad_data(), p.grad_data() + p.numel());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        for (int64_t j = 0; j < p.numel(); ++j) {
            const double orig = p.data()[j];
            p.data()[j] = orig + h;
            double lp = loss_fn().item();
            p.data()[j] = orig - h;
            double lm = loss_fn().item();
            p.data()[j] = orig;
            double fd = (lp - lm) / (2.0 * h);
            worst = std::max(worst, rel_err(ad[pi][j], fd));
        }
    }
    return worst;
}

}  // namespace testutil
