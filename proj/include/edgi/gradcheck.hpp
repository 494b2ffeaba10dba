#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "edgi/tensor.hpp"

namespace edgi {

// Central-difference gradient verification. `f` rebuilds the scalar loss from
// the current parameter values on every call. 64-bit S is the intended mode.

namespace detail {

// Entries checked per parameter: all when max_entries < 0, otherwise a
// deterministic evenly-spaced subset.
inline std::vector<Dim> check_indices(Dim total, Dim max_entries) {
    std::vector<Dim> idx;
    if (max_entries < 0 || total <= max_entries) {
        for (Dim i = 0; i < total; ++i) idx.push_back(i);
    } else {
        for (Dim k = 0; k < max_entries; ++k) idx.push_back(k * total / max_entries);
    }
    return idx;
}

}  // namespace detail

// Max relative error of supplied analytic gradients against central differences.
template <class S>
double fd_error_against(const std::function<Tensor<S>()>& f, std::vector<Tensor<S>> params,
                        const std::vector<std::vector<S>>& analytic, double step,
                        Dim max_entries_per_param = -1) {
    constexpr double eps_guard = 1e-12;
    double worst = 0.0;
    for (size_t p = 0; p < params.size(); ++p) {
        auto& values = params[p].value();
        for (Dim i : detail::check_indices(params[p].numel(), max_entries_per_param)) {
            size_t u = static_cast<size_t>(i);
            S saved = values[u];
            values[u] = saved + static_cast<S>(step);
            double f_plus = static_cast<double>(f().item());
            values[u] = saved - static_cast<S>(step);
            double f_minus = static_cast<double>(f().item());
            values[u] = saved;
            double numeric = (f_plus - f_minus) / (2.0 * step);
            double an = static_cast<double>(analytic[p][u]);
            double err = std::abs(an - numeric) / (std::abs(an) + std::abs(numeric) + eps_guard);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// Runs backward once for the analytic gradients, then compares.
template <class S>
double finite_difference_check(const std::function<Tensor<S>()>& f, std::vector<Tensor<S>> params,
                               double step, Dim max_entries_per_param = -1) {
    // Pre-zero so parameters unreachable from this loss cannot report gradients
    // left over from an earlier backward pass.
    for (auto& p : params) p.node()->grad.assign(static_cast<size_t>(p.numel()), S(0));
    Tensor<S> loss = f();
    backward(loss);
    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());
    return fd_error_against<S>(f, params, analytic, step, max_entries_per_param);
}

}  // namespace edgi
