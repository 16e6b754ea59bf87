#pragma once

#include <homproj/core.hpp>
#include <homproj/linalg.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace homproj::problems {

enum class Potential { Torsion, Gravity };

inline const char* to_string(Potential v) noexcept { return v == Potential::Torsion ? "torsion" : "gravity"; }

// State (q1, q2, p1, p2) with unit masses and lengths.
namespace dp {

struct Geometry {
    double c, s, delta;
};

inline Geometry geometry(double q1, double q2) noexcept
{
    const double d = q1 - q2;
    const double c = std::cos(d);
    return {c, std::sin(d), 2.0 - c * c};
}

inline double kinetic(ConstState x) noexcept
{
    const auto g = geometry(x[0], x[1]);
    const double p1 = x[2], p2 = x[3];
    return (p1 * p1 + 2.0 * p2 * p2 - 2.0 * g.c * p1 * p2) / (2.0 * g.delta);
}

inline double potential(Potential v, double q1, double q2) noexcept
{
    if (v == Potential::Torsion) return 0.5 * (q1 * q1 + q2 * q2);
    return -2.0 * std::cos(q1) - std::cos(q2);
}

inline void potential_gradient(Potential v, double q1, double q2, double& d1, double& d2) noexcept
{
    if (v == Potential::Torsion) {
        d1 = q1;
        d2 = q2;
    } else {
        d1 = 2.0 * std::sin(q1);
        d2 = std::sin(q2);
    }
}

inline double hamiltonian(Potential v, ConstState x) noexcept { return kinetic(x) + potential(v, x[0], x[1]); }

/// Writes dH/dq into (gq1, gq2) and dH/dp into (gp1, gp2); returns the
/// kinetic energy.
inline double hamiltonian_gradient(Potential v, ConstState x, double& gq1, double& gq2, double& gp1,
                                   double& gp2) noexcept
{
    const auto g = geometry(x[0], x[1]);
    const double p1 = x[2], p2 = x[3];
    const double n = p1 * p1 + 2.0 * p2 * p2 - 2.0 * g.c * p1 * p2;
    const double dT = g.s * (p1 * p2 * g.delta - n * g.c) / (g.delta * g.delta);
    double v1 = 0.0, v2 = 0.0;
    potential_gradient(v, x[0], x[1], v1, v2);
    gq1 = dT + v1;
    gq2 = -dT + v2;
    gp1 = (p1 - g.c * p2) / g.delta;
    gp2 = (2.0 * p2 - g.c * p1) / g.delta;
    return n / (2.0 * g.delta);
}

} // namespace dp

inline void double_pendulum_rhs(Potential v, ConstState x, MutState out) noexcept
{
    double gq1, gq2, gp1, gp2;
    dp::hamiltonian_gradient(v, x, gq1, gq2, gp1, gp2);
    out[0] = gp1;
    out[1] = gp2;
    out[2] = -gq1;
    out[3] = -gq2;
}

inline Invariant double_pendulum_energy(Potential v)
{
    Invariant h{"H", [v](ConstState x) { return dp::hamiltonian(v, x); },
                [v](ConstState x, MutState g) { dp::hamiltonian_gradient(v, x, g[0], g[1], g[2], g[3]); }};
    h.value_and_gradient = [v](ConstState x, MutState g) {
        return dp::hamiltonian_gradient(v, x, g[0], g[1], g[2], g[3]) + dp::potential(v, x[0], x[1]);
    };
    return h;
}

inline OdeSystem double_pendulum(Potential v)
{
    OdeSystem sys;
    sys.name = std::string("double_pendulum_") + to_string(v);
    sys.dimension = 4;
    sys.rhs = [v](ConstState x, MutState out) { double_pendulum_rhs(v, x, out); };
    sys.invariants = {double_pendulum_energy(v)};
    return sys;
}

/// Factor L(q) with p^T M^{-1}(q) p / 2 = |L p|^2.
inline linalg::Cholesky2x2 dp_momentum_factor(double q1, double q2)
{
    const auto g = dp::geometry(q1, q2);
    return linalg::cholesky_2x2(0.5 / g.delta, -0.5 * g.c / g.delta, 1.0 / g.delta);
}

/// Monitor thresholds for the conjugating map.
inline constexpr double kDerivativeFloor = 1e-6;
inline constexpr double kTrigMargin = 1e-9;

namespace dp {

/// Inverse of y = -a cos(q) on the branch nearest `hint`. Arguments within
/// kTrigMargin outside [-1, 1] are clamped.
inline double inverse_cosine_branch(double y, double a, double hint)
{
    double arg = -y / a;
    if (std::abs(arg) > 1.0 + kTrigMargin) throw Error(ErrorKind::OutOfRange, "inverse cosine argument outside [-1, 1]");
    arg = std::clamp(arg, -1.0, 1.0);
    const double theta = std::acos(arg);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double up = theta + two_pi * std::round((hint - theta) / two_pi);
    const double down = -theta + two_pi * std::round((hint + theta) / two_pi);
    return std::abs(up - hint) <= std::abs(down - hint) ? up : down;
}

} // namespace dp

/// phi(x) = (h1(q1), h2(q2), L(q) p); torsion h = identity, gravity
/// h1 = -2 cos, h2 = -cos, so that H = G o phi with G homogeneous.
inline void dp_diffeomorphism(Potential v, ConstState x, MutState y)
{
    const auto l = dp_momentum_factor(x[0], x[1]);
    if (v == Potential::Torsion) {
        y[0] = x[0];
        y[1] = x[1];
    } else {
        y[0] = -2.0 * std::cos(x[0]);
        y[1] = -std::cos(x[1]);
    }
    y[2] = l.l11 * x[2];
    y[3] = l.l21 * x[2] + l.l22 * x[3];
}

inline void dp_diffeomorphism_inverse(Potential v, ConstState y, ConstState hint, MutState x)
{
    double q1, q2;
    if (v == Potential::Torsion) {
        q1 = y[0];
        q2 = y[1];
    } else {
        q1 = dp::inverse_cosine_branch(y[0], 2.0, hint[0]);
        q2 = dp::inverse_cosine_branch(y[1], 1.0, hint[1]);
    }
    const auto l = dp_momentum_factor(q1, q2);
    const double p1 = y[2] / l.l11;
    x[0] = q1;
    x[1] = q2;
    x[2] = p1;
    x[3] = (y[3] - l.l21 * p1) / l.l22;
}

/// Hint-free inverse (principal branch).
inline StateVector dp_diffeomorphism_inverse(Potential v, ConstState y)
{
    StateVector x(4), hint(4, 0.0);
    dp_diffeomorphism_inverse(v, y, hint, x);
    return x;
}

inline StateVector dp_diffeomorphism(Potential v, ConstState x)
{
    StateVector y(4);
    dp_diffeomorphism(v, x, y);
    return y;
}

/// G(y): torsion 1/2 (y1^2 + y2^2) + y3^2 + y4^2, gravity y1 + y2 + y3^2 + y4^2.
inline double dp_conjugate_energy(Potential v, ConstState y) noexcept
{
    const double kin = y[2] * y[2] + y[3] * y[3];
    if (v == Potential::Torsion) return 0.5 * (y[0] * y[0] + y[1] * y[1]) + kin;
    return y[0] + y[1] + kin;
}

inline std::shared_ptr<const Diffeomorphism> dp_conjugating_map(Potential v)
{
    auto map = std::make_shared<Diffeomorphism>();
    map->forward = [v](ConstState x, MutState y) { dp_diffeomorphism(v, x, y); };
    map->inverse = [v](ConstState y, ConstState hint, MutState x) { dp_diffeomorphism_inverse(v, y, hint, x); };
    // The pivot l11 is identically 1/2 here, so only h1', h2' can degenerate.
    if (v == Potential::Gravity) {
        map->well_conditioned = [](ConstState x) {
            return std::abs(2.0 * std::sin(x[0])) >= kDerivativeFloor && std::abs(std::sin(x[1])) >= kDerivativeFloor;
        };
        map->inverse_well_conditioned = [](ConstState y) {
            return std::abs(y[0] / 2.0) < 1.0 - kTrigMargin && std::abs(y[1]) < 1.0 - kTrigMargin;
        };
    }
    return map;
}

/// psi_t = phi^{-1} o e^{tA} o phi; H has degree 1.
inline SymmetryAction dp_conjugate_action(Potential v)
{
    const StateVector w = v == Potential::Torsion ? StateVector{0.5, 0.5, 0.5, 0.5} : StateVector{1.0, 1.0, 0.5, 0.5};
    return {std::string("conjugate_") + to_string(v),
            ConjugateAction{dp_conjugating_map(v), DiagonalWeights{w},
                            [v](ConstState y) { return dp_conjugate_energy(v, y); }},
            {1.0}};
}

} // namespace homproj::problems
