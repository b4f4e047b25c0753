#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "metareg/error.hpp"
#include "metareg/net.hpp"
#include "metareg/rng.hpp"

using namespace metareg;

namespace {

NetworkSpec linear_unit(bool biases = true) {
    return NetworkSpec{1, {}, 1, Activation::tanh, biases};
}

Matrix single_input(double x) {
    Matrix m(1, 1);
    m(0, 0) = x;
    return m;
}

}  // namespace

TEST_CASE("layout matches the flattening rule") {
    const NetworkSpec spec{4, {64, 64, 64}, 1, Activation::tanh, true};
    const Layout layout = layout_of(spec);
    REQUIRE(layout.size() == 4);
    CHECK(layout[0] == LayerShape{4, 64, true});
    CHECK(layout[3] == LayerShape{64, 1, true});
    CHECK(layout_size(layout) == 4 * 64 + 64 + 64 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
}

TEST_CASE("init_network is deterministic in the seed") {
    const NetworkSpec spec{3, {16, 16}, 2, Activation::tanh, true};
    const ParameterVector a = init_network(spec, 42);
    const ParameterVector b = init_network(spec, 42);
    CHECK(a == b);
    const ParameterVector c = init_network(spec, 43);
    CHECK(a.values != c.values);
}

TEST_CASE("init_network respects the Glorot bound and zeroes biases") {
    const NetworkSpec spec{2, {3}, 1, Activation::tanh, true};
    const ParameterVector params = init_network(spec, 7);
    const double limit = std::sqrt(6.0 / 5.0);  // layer 2 -> 3
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(params.values[i] >= -limit);
        CHECK(params.values[i] <= limit);
    }
    for (std::size_t i = 6; i < 9; ++i) CHECK(params.values[i] == 0.0);  // layer-1 biases
    // output layer: 3 weights then 1 bias
    CHECK(params.values.back() == 0.0);
}

TEST_CASE("forward: zero parameters give zero output") {
    const NetworkSpec spec{2, {4}, 1, Activation::tanh, true};
    const ParameterVector params = zeros_like(layout_of(spec));
    Matrix inputs(3, 2, 1.5);
    const Matrix out = forward(spec, params, inputs);
    for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("forward: single linear unit") {
    ParameterVector params = zeros_like(layout_of(linear_unit()));
    params.values = {2.0, 1.0};  // w, b
    const Matrix out = forward(linear_unit(), params, single_input(3.0));
    CHECK(out(0, 0) == 7.0);
}

TEST_CASE("forward: tanh chain is zero at the origin") {
    const NetworkSpec spec{1, {1}, 1, Activation::tanh, true};
    ParameterVector params = zeros_like(layout_of(spec));
    params.values = {1.0, 0.0, 1.0, 0.0};  // w1, b1, w2, b2
    const Matrix out = forward(spec, params, single_input(0.0));
    CHECK(out(0, 0) == 0.0);
}

TEST_CASE("forward rejects dimension mismatches") {
    const NetworkSpec spec{2, {4}, 1, Activation::tanh, true};
    const ParameterVector params = init_network(spec, 1);
    Matrix bad(3, 3, 0.0);
    CHECK_THROWS_AS(forward(spec, params, bad), Error);
    const NetworkSpec other{3, {4}, 1, Activation::tanh, true};
    Matrix ok(3, 3, 0.0);
    CHECK_THROWS_AS(forward(other, params, ok), Error);
}

TEST_CASE("forward is exactly homogeneous in the output layer") {
    const NetworkSpec spec{2, {8}, 2, Activation::tanh, true};
    ParameterVector params = init_network(spec, 99);
    Rng rng(5);
    Matrix inputs(4, 2);
    for (double& v : inputs.data) v = rng.uniform(-2.0, 2.0);
    const Matrix base = forward(spec, params, inputs);

    const Layout layout = params.layout;
    const std::size_t last = layout_size(layout) - layout.back().size();
    for (std::size_t i = last; i < params.values.size(); ++i) params.values[i] *= 2.0;
    const Matrix doubled = forward(spec, params, inputs);
    for (std::size_t i = 0; i < base.data.size(); ++i)
        CHECK(doubled.data[i] == 2.0 * base.data[i]);
}

TEST_CASE("sgd_step arithmetic and immutability") {
    ParameterVector params = zeros_like(layout_of(linear_unit()));
    params.values = {1.0, 1.0};
    ParameterVector grad = zeros_like(layout_of(linear_unit()));
    grad.values = {1.0, 2.0};

    const ParameterVector same = sgd_step(params, grad, 0.0);
    CHECK(same == params);

    const ParameterVector stepped = sgd_step(params, grad, 0.1);
    CHECK(stepped.values[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(stepped.values[1] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(params.values[0] == 1.0);  // inputs untouched
    CHECK(grad.values[1] == 2.0);
}

TEST_CASE("sgd_step matches the closed-form recursion on a quadratic") {
    // loss (theta - a)^2, grad 2(theta - a); theta_k = a + (1-2 lr)^k (theta0 - a)
    const double a = 1.0, lr = 0.1, theta0 = 0.0;
    ParameterVector theta = zeros_like(Layout{{1, 1, false}});
    theta.values = {theta0};
    for (int k = 1; k <= 20; ++k) {
        ParameterVector grad = theta;
        grad.values[0] = 2.0 * (theta.values[0] - a);
        theta = sgd_step(theta, grad, lr);
        const double expected = a + std::pow(1.0 - 2.0 * lr, k) * (theta0 - a);
        CHECK(theta.values[0] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("sgd_step rejects layout mismatches") {
    const ParameterVector params = zeros_like(Layout{{1, 1, true}});
    const ParameterVector grad = zeros_like(Layout{{1, 2, true}});
    CHECK_THROWS_AS(sgd_step(params, grad, 0.1), Error);
}

TEST_CASE("adam_step: zero gradient leaves everything unchanged") {
    const Layout layout = layout_of(linear_unit());
    ParameterVector params = zeros_like(layout);
    params.values = {0.5, -0.25};
    const ParameterVector grad = zeros_like(layout);
    const AdamState state = make_adam_state(layout, 0.01);
    const auto [next, next_state] = adam_step(state, params, grad);
    CHECK(next == params);
    CHECK(next_state.step_count == 1);
    for (double v : next_state.first_moment.values) CHECK(v == 0.0);
    for (double v : next_state.second_moment.values) CHECK(v == 0.0);
}

TEST_CASE("adam_step: first update approaches -lr * sign(g)") {
    const Layout layout = layout_of(linear_unit());
    ParameterVector params = zeros_like(layout);
    ParameterVector grad = zeros_like(layout);
    grad.values = {3.0, -0.7};
    const double lr = 0.01;
    const AdamState state = make_adam_state(layout, lr);
    const auto [next, unused] = adam_step(state, params, grad);
    CHECK(next.values[0] == doctest::Approx(-lr).epsilon(1e-6));
    CHECK(next.values[1] == doctest::Approx(lr).epsilon(1e-6));
}

TEST_CASE("adam_step is deterministic") {
    const Layout layout = layout_of(linear_unit());
    ParameterVector params = zeros_like(layout);
    params.values = {1.0, 2.0};
    ParameterVector grad = zeros_like(layout);
    grad.values = {0.3, -0.1};
    AdamState state = make_adam_state(layout, 0.01);
    state.step_count = 3;
    state.first_moment.values = {0.1, 0.2};
    state.second_moment.values = {0.01, 0.02};

    const auto [a, sa] = adam_step(state, params, grad);
    const auto [b, sb] = adam_step(state, params, grad);
    CHECK(a == b);
    CHECK(sa.first_moment == sb.first_moment);
    CHECK(sa.second_moment == sb.second_moment);
    CHECK(sa.step_count == 4);
}

TEST_CASE("cosine_annealing_lr endpoints and midpoint") {
    CHECK(cosine_annealing_lr(0, 100, 0.1, 0.001) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(cosine_annealing_lr(100, 100, 0.1, 0.001) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(cosine_annealing_lr(50, 100, 0.1, 0.001) ==
          doctest::Approx((0.1 + 0.001) / 2.0).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_annealing_lr(0, 0, 0.1, 0.001), Error);
    CHECK_THROWS_AS(cosine_annealing_lr(11, 10, 0.1, 0.001), Error);
}

TEST_CASE("repeated sgd on a convex toy decreases the loss monotonically") {
    const double a = 2.5;
    ParameterVector theta = zeros_like(Layout{{1, 1, false}});
    theta.values = {-1.0};
    double prev_loss = (theta.values[0] - a) * (theta.values[0] - a);
    for (int k = 0; k < 50; ++k) {
        ParameterVector grad = theta;
        grad.values[0] = 2.0 * (theta.values[0] - a);
        theta = sgd_step(theta, grad, 0.2);  // stability bound for this loss is 0.5
        const double loss = (theta.values[0] - a) * (theta.values[0] - a);
        CHECK(loss <= prev_loss);
        prev_loss = loss;
    }
    CHECK(prev_loss < 1e-10);
}
