#pragma once

#include <cmath>

namespace metareg::detail {

// First-order dual number: value plus directional tangent. Running the
// gradient computation on Dual with parameter tangents seeded by a vector v
// yields exact Hessian-vector products in the tangents.
struct Dual {
    double v = 0.0;
    double t = 0.0;

    Dual() = default;
    Dual(double value) : v(value) {}  // NOLINT: implicit lift of constants
    Dual(double value, double tangent) : v(value), t(tangent) {}

    Dual& operator+=(const Dual& o) {
        v += o.v;
        t += o.t;
        return *this;
    }
    Dual& operator-=(const Dual& o) {
        v -= o.v;
        t -= o.t;
        return *this;
    }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.t}; }
inline Dual operator*(const Dual& a, const Dual& b) {
    return {a.v * b.v, a.v * b.t + a.t * b.v};
}
inline Dual operator/(const Dual& a, double s) { return {a.v / s, a.t / s}; }

inline Dual tanh(const Dual& a) {
    const double th = std::tanh(a.v);
    return {th, (1.0 - th * th) * a.t};
}

// scalar value extraction shared by the templated kernels
inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

}  // namespace metareg::detail
