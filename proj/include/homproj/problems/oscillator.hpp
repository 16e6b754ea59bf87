#pragma once

#include <homproj/core.hpp>

#include <cmath>

namespace homproj::problems {

// Four-dimensional non-separable-potential oscillator, state (q1, q2, p1, p2).
namespace oscillator_detail {

inline double potential(double q1, double q2)
{
    const double q1s = q1 * q1, q2s = q2 * q2;
    return 3.0 * (0.5 * q1s * q1s + q2s * q2s) + 6.0 * (q1s + 2.0 * q2s) + 2.0 * q1 * q2 * (q1s + 2.0 * q2s) +
           3.0 * std::sin(5.0 * q1) * std::cos(3.0 * q2);
}

inline void potential_gradient(double q1, double q2, double& d1, double& d2)
{
    d1 = 6.0 * q1 * q1 * q1 + 12.0 * q1 + 6.0 * q1 * q1 * q2 + 4.0 * q2 * q2 * q2 +
         15.0 * std::cos(5.0 * q1) * std::cos(3.0 * q2);
    d2 = 12.0 * q2 * q2 * q2 + 24.0 * q2 + 2.0 * q1 * q1 * q1 + 12.0 * q1 * q2 * q2 -
         9.0 * std::sin(5.0 * q1) * std::sin(3.0 * q2);
}

} // namespace oscillator_detail

inline OdeSystem nonlinear_oscillator()
{
    OdeSystem sys;
    sys.name = "nonlinear_oscillator";
    sys.dimension = 4;
    sys.rhs = [](ConstState x, MutState out) {
        double d1, d2;
        oscillator_detail::potential_gradient(x[0], x[1], d1, d2);
        out[0] = x[2];
        out[1] = x[3];
        out[2] = -d1;
        out[3] = -d2;
    };
    sys.invariants = {Invariant{"H",
                                [](ConstState x) {
                                    return 0.5 * (x[2] * x[2] + x[3] * x[3]) +
                                           oscillator_detail::potential(x[0], x[1]);
                                },
                                [](ConstState x, MutState g) {
                                    oscillator_detail::potential_gradient(x[0], x[1], g[0], g[1]);
                                    g[2] = x[2];
                                    g[3] = x[3];
                                }}};
    sys.split = SeparableSplit{[](ConstState p, MutState v) {
                                   v[0] = p[0];
                                   v[1] = p[1];
                               },
                               [](ConstState q, MutState f) {
                                   oscillator_detail::potential_gradient(q[0], q[1], f[0], f[1]);
                               }};
    return sys;
}

} // namespace homproj::problems
