#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "mminforec/tape.hpp"
#include "mminforec/tensor.hpp"

namespace mminforec {

// Central-difference gradient oracle.
//
// `build` records the full forward graph on the given tape and returns the
// scalar loss. It must be deterministic: any dropout inside must use frozen
// mask seeds. Perturbations are applied directly to `parameter`, so the
// builder has to read the live tensor (capture by reference).
//
// Returns max over entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename Builder>
double grad_check(Builder&& build, Tensor& parameter, double step = 1e-3) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

    auto eval = [&]() {
        Tape tape(/*grad_enabled=*/false);
        ValueRef loss = build(tape);
        return tape.scalar(loss);
    };

    // Deterministic-graph precondition: identical rebuilds must agree bitwise.
    double l0 = eval();
    double l1 = eval();
    if (std::memcmp(&l0, &l1, sizeof(double)) != 0)
        throw std::logic_error("grad_check: graph is not deterministic (unfrozen dropout masks?)");

    parameter.zero_grad();
    {
        Tape tape(/*grad_enabled=*/true);
        ValueRef loss = build(tape);
        tape.backward(loss);
    }
    std::vector<double> analytic = parameter.grad;

    double max_rel = 0.0;
    for (size_t i = 0; i < parameter.data.size(); ++i) {
        double saved = parameter.data[i];
        parameter.data[i] = saved + step;
        double lp = eval();
        parameter.data[i] = saved - step;
        double lm = eval();
        parameter.data[i] = saved;
        double numeric = (lp - lm) / (2.0 * step);
        double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

}  // namespace mminforec
