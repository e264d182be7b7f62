#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mminforec/params.hpp"

namespace mminforec {

// Adam with bias correction; L2 applied as decoupled decay (kept out of the
// moments) so the grid's l2_weight values act independently of gradient
// scale. The padding embedding rows are re-zeroed after every step.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;
    std::vector<std::vector<double>> m;  // parallel to ModelParams::named()
    std::vector<std::vector<double>> v;

    static AdamState init(ModelParams& params) {
        AdamState st;
        for (auto& [name, t] : params.named()) {
            st.m.emplace_back(t->data.size(), 0.0);
            st.v.emplace_back(t->data.size(), 0.0);
        }
        return st;
    }
};

inline void adam_step(ModelParams& params, AdamState& st, double lr, double l2_weight) {
    auto named = params.named();
    if (named.size() != st.m.size()) throw std::logic_error("adam_step: state does not match parameters");

    for (size_t k = 0; k < named.size(); ++k) {
        auto& [name, t] = named[k];
        if (t->grad.size() != t->data.size())
            throw std::logic_error("adam_step: missing gradient for " + name);
        for (double g : t->grad)
            if (!std::isfinite(g))
                throw std::runtime_error("adam_step: non-finite gradient in parameter " + name);
    }

    ++st.step_count;
    double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
    double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
    for (size_t k = 0; k < named.size(); ++k) {
        Tensor& t = *named[k].second;
        std::vector<double>& m = st.m[k];
        std::vector<double>& v = st.v[k];
        for (size_t i = 0; i < t.data.size(); ++i) {
            double g = t.grad[i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            t.data[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
            if (l2_weight > 0.0) t.data[i] -= lr * l2_weight * t.data[i];
        }
    }
    params.zero_padding_rows();
}

}  // namespace mminforec
