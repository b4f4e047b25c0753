#pragma once

#include <cstdint>

#include "metareg/layout.hpp"
#include "metareg/matrix.hpp"
#include "metareg/net.hpp"

namespace metareg {

struct ValueGrad {
    double loss = 0.0;
    ParameterVector grad;
};

// MSE loss of forward(spec, params, inputs) against targets, together with
// its exact gradient. Pure function, safe to call from multiple threads.
ValueGrad value_and_grad(const NetworkSpec& spec, const ParameterVector& params,
                         const Matrix& inputs, const Matrix& targets);

// Exact H*v for the Hessian of the MSE loss at `params`, computed
// forward-over-reverse with dual numbers.
ParameterVector hessian_vector_product(const NetworkSpec& spec, const ParameterVector& params,
                                       const Matrix& inputs, const Matrix& targets,
                                       const ParameterVector& v);

// Process-wide count of hessian_vector_product invocations. Lets tests pin
// down which code paths touch second-order machinery.
std::uint64_t hvp_invocation_count();

// MSE with the project's convention: mean over all scalar residuals.
double mse_loss(const Matrix& predictions, const Matrix& targets);

}  // namespace metareg
