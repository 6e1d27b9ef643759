#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "plrn/param_store.hpp"
#include "plrn/tensor.hpp"

namespace plrn {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    int64_t checked = 0;

    bool passes(double tol) const { return max_rel_err < tol; }
};

/// Relative error with an absolute floor, so near-zero gradient pairs are
/// compared absolutely instead of blowing up.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-4) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
    return std::fabs(analytic - numeric) / denom;
}

/// Central finite differences against already-populated analytic gradients.
/// `forward` must be a pure function of the listed tensors' data (run it with
/// tape recording off). Perturbs every element of every tensor.
template <typename ForwardFn>
GradCheckReport check_gradients(const std::vector<std::pair<std::string, TensorPtr>>& tensors,
                                ForwardFn&& forward, double h = 1e-5) {
    GradCheckReport rep;
    for (const auto& [name, t] : tensors) {
        if (!t->requires_grad || t->grad.size() != t->data.size())
            throw ContractError("check_gradients: '" + name + "' has no analytic gradient");
        for (size_t i = 0; i < t->data.size(); ++i) {
            const double saved = t->data[i];
            t->data[i] = saved + h;
            const double fp = forward();
            t->data[i] = saved - h;
            const double fm = forward();
            t->data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = grad_rel_err(t->grad[i], numeric);
            ++rep.checked;
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_param = name;
                rep.worst_index = i;
                rep.worst_analytic = t->grad[i];
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

template <typename ForwardFn>
GradCheckReport check_gradients(ParameterStore& store, ForwardFn&& forward, double h = 1e-5) {
    std::vector<std::pair<std::string, TensorPtr>> tensors;
    for (const auto& [name, t] : store.params()) tensors.emplace_back(name, t);
    return check_gradients(tensors, std::forward<ForwardFn>(forward), h);
}

}  // namespace plrn
