#include "metareg/autodiff.hpp"

#include <atomic>

#include "metareg/detail/dual.hpp"
#include "metareg/detail/mlp_kernels.hpp"
#include "metareg/error.hpp"

namespace metareg {

namespace {

std::atomic<std::uint64_t> g_hvp_calls{0};

void check_batch(const NetworkSpec& spec, const ParameterVector& params, const Matrix& inputs,
                 const Matrix& targets, const char* context) {
    require_layout(params, layout_of(spec), context);
    if (inputs.rows == 0) throw Error(std::string(context) + ": empty batch");
    if (inputs.rows != targets.rows)
        throw Error(std::string(context) + ": inputs and targets disagree on row count");
    if (inputs.cols != spec.input_dim)
        throw Error(std::string(context) + ": input column count does not match network");
    if (targets.cols != spec.output_dim)
        throw Error(std::string(context) + ": target column count does not match network");
}

}  // namespace

ValueGrad value_and_grad(const NetworkSpec& spec, const ParameterVector& params,
                         const Matrix& inputs, const Matrix& targets) {
    check_batch(spec, params, inputs, targets, "value_and_grad");
    ValueGrad result;
    result.grad = zeros_like(params.layout);
    result.loss = detail::mse_forward_backward<double>(
        spec, params.layout, std::span<const double>(params.values), inputs, targets,
        std::span<double>(result.grad.values));
    return result;
}

ParameterVector hessian_vector_product(const NetworkSpec& spec, const ParameterVector& params,
                                       const Matrix& inputs, const Matrix& targets,
                                       const ParameterVector& v) {
    check_batch(spec, params, inputs, targets, "hessian_vector_product");
    require_same_layout(params, v, "hessian_vector_product");
    g_hvp_calls.fetch_add(1, std::memory_order_relaxed);

    std::vector<detail::Dual> dual_params(params.values.size());
    for (std::size_t i = 0; i < dual_params.size(); ++i)
        dual_params[i] = {params.values[i], v.values[i]};
    std::vector<detail::Dual> dual_grad(params.values.size());
    detail::mse_forward_backward<detail::Dual>(
        spec, params.layout, std::span<const detail::Dual>(dual_params), inputs, targets,
        std::span<detail::Dual>(dual_grad));

    ParameterVector hv = zeros_like(params.layout);
    for (std::size_t i = 0; i < hv.values.size(); ++i) hv.values[i] = dual_grad[i].t;
    return hv;
}

std::uint64_t hvp_invocation_count() { return g_hvp_calls.load(std::memory_order_relaxed); }

double mse_loss(const Matrix& predictions, const Matrix& targets) {
    if (predictions.rows != targets.rows || predictions.cols != targets.cols)
        throw Error("mse_loss: shape mismatch");
    if (predictions.rows == 0) throw Error("mse_loss: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < predictions.data.size(); ++i) {
        const double r = predictions.data[i] - targets.data[i];
        acc += r * r;
    }
    return acc / static_cast<double>(predictions.data.size());
}

}  // namespace metareg
