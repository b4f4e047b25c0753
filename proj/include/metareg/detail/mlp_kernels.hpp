#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "metareg/detail/dual.hpp"
#include "metareg/layout.hpp"
#include "metareg/matrix.hpp"
#include "metareg/net.hpp"

// Scalar-generic MLP kernels. Instantiated with double for plain
// forward/backprop and with Dual for exact Hessian-vector products
// (forward-over-reverse). Evaluation order is fixed, so results are
// bit-reproducible.
namespace metareg::detail {

inline std::vector<std::size_t> layer_offsets(const Layout& layout) {
    std::vector<std::size_t> off(layout.size());
    std::size_t acc = 0;
    for (std::size_t l = 0; l < layout.size(); ++l) {
        off[l] = acc;
        acc += layout[l].size();
    }
    return off;
}

template <class T>
T apply_activation(Activation act, const T& z) {
    if (act == Activation::tanh) {
        using std::tanh;  // Dual overload found via ADL
        return tanh(z);
    }
    return value_of(z) > 0.0 ? z : T(0.0);
}

// derivative of the activation expressed through its post-activation value
template <class T>
T activation_derivative(Activation act, const T& a) {
    if (act == Activation::tanh) return T(1.0) - a * a;
    return value_of(a) > 0.0 ? T(1.0) : T(0.0);
}

// Row-wise forward pass for one sample. `acts[l]` receives the activations
// after layer l-1 (acts[0] is the input row); all L+1 levels are kept so the
// backward sweep can reuse them.
template <class T>
void forward_sample(const NetworkSpec& spec, const Layout& layout,
                    std::span<const std::size_t> offsets, std::span<const T> params,
                    std::span<const double> input, std::vector<std::vector<T>>& acts) {
    const std::size_t n_layers = layout.size();
    acts.resize(n_layers + 1);
    acts[0].assign(input.begin(), input.end());
    for (std::size_t l = 0; l < n_layers; ++l) {
        const LayerShape& shape = layout[l];
        const std::size_t off = offsets[l];
        const bool last = (l + 1 == n_layers);
        const std::vector<T>& in = acts[l];
        std::vector<T>& out = acts[l + 1];
        out.assign(shape.output_dim, T(0.0));
        for (std::size_t o = 0; o < shape.output_dim; ++o) {
            T z = shape.has_bias ? params[off + shape.input_dim * shape.output_dim + o] : T(0.0);
            const T* w = params.data() + off + o * shape.input_dim;
            for (std::size_t i = 0; i < shape.input_dim; ++i) z += w[i] * in[i];
            out[o] = last ? z : apply_activation(spec.activation, z);
        }
    }
}

// Fused forward + reverse sweep for the MSE loss (mean over all scalar
// residuals, no 1/2 factor). Fills `grad` with d(loss)/d(params) and returns
// the loss.
template <class T>
T mse_forward_backward(const NetworkSpec& spec, const Layout& layout,
                       std::span<const T> params, const Matrix& inputs,
                       const Matrix& targets, std::span<T> grad) {
    const std::size_t n = inputs.rows;
    const std::size_t m = targets.cols;
    const auto offsets = layer_offsets(layout);
    const double inv_count = 1.0 / static_cast<double>(n * m);

    for (auto& g : grad) g = T(0.0);
    T loss(0.0);

    std::vector<std::vector<T>> acts;
    std::vector<T> delta, delta_prev;
    for (std::size_t s = 0; s < n; ++s) {
        forward_sample(spec, layout, offsets, params, inputs.row(s), acts);

        const std::vector<T>& pred = acts.back();
        delta.assign(m, T(0.0));
        for (std::size_t o = 0; o < m; ++o) {
            const T r = pred[o] - T(targets(s, o));
            loss += r * r;
            delta[o] = T(2.0 * inv_count) * r;
        }

        for (std::size_t l = layout.size(); l-- > 0;) {
            const LayerShape& shape = layout[l];
            const std::size_t off = offsets[l];
            const std::vector<T>& in = acts[l];
            for (std::size_t o = 0; o < shape.output_dim; ++o) {
                T* gw = grad.data() + off + o * shape.input_dim;
                const T d = delta[o];
                for (std::size_t i = 0; i < shape.input_dim; ++i) gw[i] += d * in[i];
                if (shape.has_bias) grad[off + shape.input_dim * shape.output_dim + o] += d;
            }
            if (l == 0) break;
            delta_prev.assign(shape.input_dim, T(0.0));
            for (std::size_t o = 0; o < shape.output_dim; ++o) {
                const T* w = params.data() + off + o * shape.input_dim;
                const T d = delta[o];
                for (std::size_t i = 0; i < shape.input_dim; ++i) delta_prev[i] += w[i] * d;
            }
            for (std::size_t i = 0; i < shape.input_dim; ++i)
                delta_prev[i] = delta_prev[i] * activation_derivative(spec.activation, in[i]);
            delta.swap(delta_prev);
        }
    }
    return loss * T(inv_count);
}

}  // namespace metareg::detail
