#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "metareg/autodiff.hpp"
#include "metareg/error.hpp"
#include "metareg/net.hpp"
#include "metareg/rng.hpp"
#include "oracles.hpp"

using namespace metareg;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -2.0,
                     double hi = 2.0) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

ParameterVector random_direction(const Layout& layout, Rng& rng) {
    ParameterVector v = zeros_like(layout);
    for (double& x : v.values) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("zero network against zero targets: zero loss, zero gradient") {
    const NetworkSpec spec{2, {4}, 1, Activation::tanh, true};
    const ParameterVector params = zeros_like(layout_of(spec));
    Rng rng(11);
    const Matrix inputs = random_matrix(3, 2, rng);
    const Matrix targets(3, 1, 0.0);
    const auto [loss, grad] = value_and_grad(spec, params, inputs, targets);
    CHECK(loss == 0.0);
    for (double g : grad.values) CHECK(g == 0.0);
}

TEST_CASE("single linear unit: hand-differentiated gradient") {
    // (w x + b - y)^2 at w=1, b=0, x=1, y=0: loss 1, dL/dw = dL/db = 2
    const NetworkSpec spec{1, {}, 1, Activation::tanh, true};
    ParameterVector params = zeros_like(layout_of(spec));
    params.values = {1.0, 0.0};
    Matrix x(1, 1, 1.0), y(1, 1, 0.0);
    const auto [loss, grad] = value_and_grad(spec, params, x, y);
    CHECK(loss == 1.0);
    CHECK(grad.values[0] == 2.0);
    CHECK(grad.values[1] == 2.0);
}

TEST_CASE("multi-output loss is the mean over all scalar residuals") {
    const NetworkSpec spec{1, {}, 2, Activation::tanh, true};
    ParameterVector params = zeros_like(layout_of(spec));
    params.values = {1.0, 3.0, 0.5, -0.5};  // w1, w2, b1, b2
    Matrix x(1, 1, 2.0);
    Matrix y(1, 2);
    y(0, 0) = 1.0;
    y(0, 1) = 2.0;
    // residuals: (2 + 0.5 - 1) = 1.5 and (6 - 0.5 - 2) = 3.5
    const auto [loss, grad] = value_and_grad(spec, params, x, y);
    CHECK(loss == doctest::Approx((1.5 * 1.5 + 3.5 * 3.5) / 2.0).epsilon(1e-15));
    CHECK(grad.values[0] == doctest::Approx(2.0 * 1.5 * 2.0 / 2.0).epsilon(1e-15));
}

TEST_CASE("gradient matches central finite differences per coordinate") {
    Rng rng(2024);
    const std::vector<NetworkSpec> specs = {
        {4, {8}, 1, Activation::tanh, true},
        {3, {8, 8}, 1, Activation::tanh, true},
        {2, {6, 6, 6}, 1, Activation::tanh, true},
    };
    for (const NetworkSpec& spec : specs) {
        const ParameterVector params = init_network(spec, rng.next_u64());
        const Matrix inputs = random_matrix(5, spec.input_dim, rng);
        const Matrix targets = random_matrix(5, spec.output_dim, rng);

        const auto [loss, grad] = value_and_grad(spec, params, inputs, targets);
        const auto fd = oracle::fd_gradient(
            [&](const ParameterVector& p) {
                return oracle::mse(forward(spec, p, inputs), targets);
            },
            params, 1e-5);
        for (std::size_t i = 0; i < fd.size(); ++i)
            CHECK(oracle::rel_error(fd[i], grad.values[i]) <= 1e-6);
        CHECK(loss == doctest::Approx(oracle::mse(forward(spec, params, inputs), targets)));
    }
}

TEST_CASE("differentiation is deterministic") {
    const NetworkSpec spec{4, {8, 8}, 1, Activation::tanh, true};
    Rng rng(5);
    const ParameterVector params = init_network(spec, 77);
    const Matrix inputs = random_matrix(6, 4, rng);
    const Matrix targets = random_matrix(6, 1, rng);
    const auto a = value_and_grad(spec, params, inputs, targets);
    const auto b = value_and_grad(spec, params, inputs, targets);
    CHECK(a.loss == b.loss);
    CHECK(a.grad == b.grad);
}

TEST_CASE("value_and_grad rejects bad shapes") {
    const NetworkSpec spec{2, {4}, 1, Activation::tanh, true};
    const ParameterVector params = init_network(spec, 1);
    const NetworkSpec other{2, {5}, 1, Activation::tanh, true};
    Matrix x(2, 2, 0.0), y(2, 1, 0.0);
    CHECK_THROWS_AS(value_and_grad(other, params, x, y), Error);
    Matrix empty_x(0, 2, 0.0), empty_y(0, 1, 0.0);
    CHECK_THROWS_AS(value_and_grad(spec, params, empty_x, empty_y), Error);
    Matrix bad_y(3, 1, 0.0);
    CHECK_THROWS_AS(value_and_grad(spec, params, x, bad_y), Error);
}

TEST_CASE("hvp: identity Hessian toy") {
    // no-bias 1->1 unit with samples (1,0) and (0,0): loss = w^2/2, H = 1
    const NetworkSpec spec{1, {}, 1, Activation::tanh, false};
    ParameterVector params = zeros_like(layout_of(spec));
    params.values = {0.7};
    Matrix x(2, 1);
    x(0, 0) = 1.0;
    x(1, 0) = 0.0;
    Matrix y(2, 1, 0.0);
    ParameterVector v = params;
    v.values = {3.5};
    const ParameterVector hv = hessian_vector_product(spec, params, x, y, v);
    CHECK(hv.values[0] == 3.5);
}

TEST_CASE("hvp: off-diagonal Hessian toy") {
    // 1 -> [1] -> 1 tanh net without biases at theta = 0, sample (1, -1/2):
    // loss = (w2 tanh(w1) + 1/2)^2 has Hessian [[0, 1], [1, 0]] at the origin
    const NetworkSpec spec{1, {1}, 1, Activation::tanh, false};
    const ParameterVector params = zeros_like(layout_of(spec));
    Matrix x(1, 1, 1.0), y(1, 1, -0.5);
    ParameterVector v = zeros_like(params.layout);
    v.values = {1.0, 0.0};
    const ParameterVector hv = hessian_vector_product(spec, params, x, y, v);
    CHECK(hv.values[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(hv.values[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("hvp matches finite differences of the gradient") {
    Rng rng(31337);
    const NetworkSpec spec{3, {10, 10}, 1, Activation::tanh, true};
    const ParameterVector params = init_network(spec, 9);
    const Matrix inputs = random_matrix(6, 3, rng);
    const Matrix targets = random_matrix(6, 1, rng);
    const ParameterVector v = random_direction(params.layout, rng);

    const ParameterVector hv = hessian_vector_product(spec, params, inputs, targets, v);
    const auto fd = oracle::fd_hessian_vector(
        [&](const ParameterVector& p) {
            return value_and_grad(spec, p, inputs, targets).grad.values;
        },
        params, v, 1e-5);
    CHECK(oracle::norm_rel_error(fd, hv.values) <= 1e-5);
}

TEST_CASE("hvp is linear in v") {
    Rng rng(123);
    const NetworkSpec spec{2, {8}, 1, Activation::tanh, true};
    const ParameterVector params = init_network(spec, 3);
    const Matrix inputs = random_matrix(5, 2, rng);
    const Matrix targets = random_matrix(5, 1, rng);
    const ParameterVector v1 = random_direction(params.layout, rng);
    const ParameterVector v2 = random_direction(params.layout, rng);
    const double a = 1.7, b = -0.3;

    ParameterVector combo = zeros_like(params.layout);
    for (std::size_t i = 0; i < combo.values.size(); ++i)
        combo.values[i] = a * v1.values[i] + b * v2.values[i];

    const ParameterVector lhs = hessian_vector_product(spec, params, inputs, targets, combo);
    const ParameterVector h1 = hessian_vector_product(spec, params, inputs, targets, v1);
    const ParameterVector h2 = hessian_vector_product(spec, params, inputs, targets, v2);
    for (std::size_t i = 0; i < lhs.values.size(); ++i)
        CHECK(std::abs(lhs.values[i] - (a * h1.values[i] + b * h2.values[i])) <= 1e-10);
}

TEST_CASE("hvp rejects layout mismatches and counts invocations") {
    const NetworkSpec spec{2, {4}, 1, Activation::tanh, true};
    const ParameterVector params = init_network(spec, 1);
    const ParameterVector bad_v = zeros_like(layout_of(NetworkSpec{2, {5}, 1}));
    Matrix x(2, 2, 0.5), y(2, 1, 0.0);
    CHECK_THROWS_AS(hessian_vector_product(spec, params, x, y, bad_v), Error);

    const std::uint64_t before = hvp_invocation_count();
    const ParameterVector v = zeros_like(params.layout);
    (void)hessian_vector_product(spec, params, x, y, v);
    CHECK(hvp_invocation_count() == before + 1);
}
