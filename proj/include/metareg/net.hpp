#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "metareg/layout.hpp"
#include "metareg/matrix.hpp"

namespace metareg {

enum class Activation { tanh, relu };

// Feedforward network shape. Hidden layers use `activation`; the output
// layer is always linear. `hidden_dims` may be empty, which degenerates to a
// single linear map (handy for closed-form toys in tests).
struct NetworkSpec {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden_dims;
    std::size_t output_dim = 1;
    Activation activation = Activation::tanh;
    bool biases = true;

    bool operator==(const NetworkSpec&) const = default;
};

void validate(const NetworkSpec& spec);
Layout layout_of(const NetworkSpec& spec);

// Glorot-uniform weights (+/- sqrt(6 / (fan_in + fan_out))), biases zero.
ParameterVector init_network(const NetworkSpec& spec, std::uint64_t seed);

Matrix forward(const NetworkSpec& spec, const ParameterVector& params, const Matrix& inputs);

ParameterVector sgd_step(const ParameterVector& params, const ParameterVector& grad, double lr);

struct AdamState {
    ParameterVector first_moment;
    ParameterVector second_moment;
    std::uint64_t step_count = 0;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

AdamState make_adam_state(const Layout& layout, double learning_rate,
                          double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

std::pair<ParameterVector, AdamState> adam_step(const AdamState& state,
                                                const ParameterVector& params,
                                                const ParameterVector& grad);

double cosine_annealing_lr(std::uint64_t step, std::uint64_t total_steps,
                           double lr_max, double lr_min);

}  // namespace metareg
