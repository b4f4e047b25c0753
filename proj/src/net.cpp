#include "metareg/net.hpp"

#include <cmath>
#include <numbers>

#include "metareg/detail/mlp_kernels.hpp"
#include "metareg/error.hpp"
#include "metareg/rng.hpp"

namespace metareg {

void validate(const NetworkSpec& spec) {
    if (spec.input_dim == 0) throw Error("NetworkSpec: input_dim must be positive");
    if (spec.output_dim == 0) throw Error("NetworkSpec: output_dim must be positive");
    for (std::size_t h : spec.hidden_dims)
        if (h == 0) throw Error("NetworkSpec: hidden layer width must be positive");
}

Layout layout_of(const NetworkSpec& spec) {
    validate(spec);
    Layout layout;
    std::size_t in = spec.input_dim;
    for (std::size_t h : spec.hidden_dims) {
        layout.push_back({in, h, spec.biases});
        in = h;
    }
    layout.push_back({in, spec.output_dim, spec.biases});
    return layout;
}

ParameterVector init_network(const NetworkSpec& spec, std::uint64_t seed) {
    const Layout layout = layout_of(spec);
    ParameterVector params = zeros_like(layout);
    Rng rng(seed);
    std::size_t off = 0;
    for (const LayerShape& shape : layout) {
        const double limit =
            std::sqrt(6.0 / static_cast<double>(shape.input_dim + shape.output_dim));
        const std::size_t n_weights = shape.input_dim * shape.output_dim;
        for (std::size_t i = 0; i < n_weights; ++i)
            params.values[off + i] = rng.uniform(-limit, limit);
        off += shape.size();  // biases stay zero
    }
    return params;
}

Matrix forward(const NetworkSpec& spec, const ParameterVector& params, const Matrix& inputs) {
    const Layout layout = layout_of(spec);
    require_layout(params, layout, "forward");
    if (inputs.cols != spec.input_dim)
        throw Error("forward: input has " + std::to_string(inputs.cols) +
                    " columns, network expects " + std::to_string(spec.input_dim));

    const auto offsets = detail::layer_offsets(layout);
    Matrix out(inputs.rows, spec.output_dim);
    std::vector<std::vector<double>> acts;
    for (std::size_t s = 0; s < inputs.rows; ++s) {
        detail::forward_sample<double>(spec, layout, offsets,
                                       std::span<const double>(params.values), inputs.row(s),
                                       acts);
        for (std::size_t o = 0; o < spec.output_dim; ++o) out(s, o) = acts.back()[o];
    }
    return out;
}

ParameterVector sgd_step(const ParameterVector& params, const ParameterVector& grad, double lr) {
    require_same_layout(params, grad, "sgd_step");
    if (lr < 0.0) throw Error("sgd_step: negative learning rate");
    ParameterVector out = params;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= lr * grad.values[i];
    return out;
}

AdamState make_adam_state(const Layout& layout, double learning_rate, double beta1, double beta2,
                          double epsilon) {
    AdamState state;
    state.first_moment = zeros_like(layout);
    state.second_moment = zeros_like(layout);
    state.learning_rate = learning_rate;
    state.beta1 = beta1;
    state.beta2 = beta2;
    state.epsilon = epsilon;
    return state;
}

std::pair<ParameterVector, AdamState> adam_step(const AdamState& state,
                                                const ParameterVector& params,
                                                const ParameterVector& grad) {
    require_same_layout(params, grad, "adam_step");
    require_same_layout(params, state.first_moment, "adam_step (state)");

    AdamState next = state;
    next.step_count = state.step_count + 1;
    const double t = static_cast<double>(next.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);

    ParameterVector out = params;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double g = grad.values[i];
        const double m = state.beta1 * state.first_moment.values[i] + (1.0 - state.beta1) * g;
        const double v = state.beta2 * state.second_moment.values[i] + (1.0 - state.beta2) * g * g;
        next.first_moment.values[i] = m;
        next.second_moment.values[i] = v;
        out.values[i] -= state.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + state.epsilon);
    }
    return {std::move(out), std::move(next)};
}

double cosine_annealing_lr(std::uint64_t step, std::uint64_t total_steps, double lr_max,
                           double lr_min) {
    if (total_steps == 0) throw Error("cosine_annealing_lr: total_steps must be positive");
    if (step > total_steps) throw Error("cosine_annealing_lr: step exceeds total_steps");
    const double phase = std::numbers::pi * static_cast<double>(step) /
                         static_cast<double>(total_steps);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

}  // namespace metareg
