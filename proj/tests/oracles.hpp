#pragma once

// Test-only oracles. The differentiation machinery here is independent of
// the implementation it checks: gradients and Hessian-vector products are
// obtained purely from central finite differences of scalar evaluations.

#include <cmath>
#include <vector>

#include "metareg/layout.hpp"
#include "metareg/matrix.hpp"
#include "metareg/net.hpp"

namespace oracle {

// MSE recomputed from scratch (mean over all scalar residuals).
inline double mse(const metareg::Matrix& pred, const metareg::Matrix& targets) {
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double r = pred.data[i] - targets.data[i];
        acc += r * r;
    }
    return acc / static_cast<double>(pred.data.size());
}

// central differences of a scalar function of the parameters
template <class LossFn>
std::vector<double> fd_gradient(LossFn&& loss, const metareg::ParameterVector& params,
                                double h = 1e-5) {
    std::vector<double> grad(params.values.size());
    metareg::ParameterVector probe = params;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        probe.values[i] = params.values[i] + h;
        const double up = loss(probe);
        probe.values[i] = params.values[i] - h;
        const double down = loss(probe);
        probe.values[i] = params.values[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

// central differences of a scalar function along selected coordinates only
template <class LossFn>
std::vector<double> fd_gradient_coords(LossFn&& loss, const metareg::ParameterVector& params,
                                       const std::vector<std::size_t>& coords,
                                       double h = 1e-5) {
    std::vector<double> grad(coords.size());
    metareg::ParameterVector probe = params;
    for (std::size_t c = 0; c < coords.size(); ++c) {
        const std::size_t i = coords[c];
        probe.values[i] = params.values[i] + h;
        const double up = loss(probe);
        probe.values[i] = params.values[i] - h;
        const double down = loss(probe);
        probe.values[i] = params.values[i];
        grad[c] = (up - down) / (2.0 * h);
    }
    return grad;
}

// (grad(theta + eps v) - grad(theta - eps v)) / (2 eps)
template <class GradFn>
std::vector<double> fd_hessian_vector(GradFn&& grad_fn, const metareg::ParameterVector& params,
                                      const metareg::ParameterVector& v, double eps = 1e-5) {
    metareg::ParameterVector shifted = params;
    for (std::size_t i = 0; i < shifted.values.size(); ++i)
        shifted.values[i] = params.values[i] + eps * v.values[i];
    const std::vector<double> up = grad_fn(shifted);
    for (std::size_t i = 0; i < shifted.values.size(); ++i)
        shifted.values[i] = params.values[i] - eps * v.values[i];
    const std::vector<double> down = grad_fn(shifted);
    std::vector<double> out(params.values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (up[i] - down[i]) / (2.0 * eps);
    return out;
}

inline double rel_error(double approx, double exact, double floor = 1e-6) {
    const double denom = std::max({std::abs(approx), std::abs(exact), floor});
    return std::abs(approx - exact) / denom;
}

inline double norm_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-10) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        ref += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

}  // namespace oracle
