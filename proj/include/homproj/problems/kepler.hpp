#pragma once

#include <homproj/core.hpp>

#include <cmath>
#include <numbers>

namespace homproj::problems {

// State (q1, q2, p1, p2), unit gravitational parameter.
namespace kepler_detail {

inline double radius(ConstState x)
{
    const double r = std::hypot(x[0], x[1]);
    if (r == 0.0) throw Error(ErrorKind::SingularOrigin, "Kepler problem evaluated at q = 0");
    return r;
}

} // namespace kepler_detail

inline void kepler_rhs(ConstState x, MutState out)
{
    const double r = kepler_detail::radius(x);
    const double r3 = r * r * r;
    out[0] = x[2];
    out[1] = x[3];
    out[2] = -x[0] / r3;
    out[3] = -x[1] / r3;
}

inline StateVector kepler_rhs(ConstState x)
{
    StateVector out(4);
    kepler_rhs(x, out);
    return out;
}

/// H (energy), L (angular momentum), A (first Laplace-Runge-Lenz component).
inline std::vector<Invariant> kepler_invariants()
{
    Invariant energy{"H",
                     [](ConstState x) {
                         return 0.5 * (x[2] * x[2] + x[3] * x[3]) - 1.0 / kepler_detail::radius(x);
                     },
                     [](ConstState x, MutState g) {
                         const double r = kepler_detail::radius(x);
                         const double r3 = r * r * r;
                         g[0] = x[0] / r3;
                         g[1] = x[1] / r3;
                         g[2] = x[2];
                         g[3] = x[3];
                     }};
    Invariant angular{"L", [](ConstState x) { return x[0] * x[3] - x[1] * x[2]; },
                      [](ConstState x, MutState g) {
                          g[0] = x[3];
                          g[1] = -x[2];
                          g[2] = -x[1];
                          g[3] = x[0];
                      }};
    Invariant lrl{"A",
                  [](ConstState x) {
                      const double r = kepler_detail::radius(x);
                      return x[3] * (x[3] * x[0] - x[2] * x[1]) - x[0] / r;
                  },
                  [](ConstState x, MutState g) {
                      const double q1 = x[0], q2 = x[1], p1 = x[2], p2 = x[3];
                      const double r = kepler_detail::radius(x);
                      const double r3 = r * r * r;
                      g[0] = p2 * p2 - q2 * q2 / r3;
                      g[1] = -p1 * p2 + q1 * q2 / r3;
                      g[2] = -p2 * q2;
                      g[3] = 2.0 * p2 * q1 - p1 * q2;
                  }};
    return {energy, angular, lrl};
}

inline OdeSystem kepler()
{
    OdeSystem sys;
    sys.name = "kepler";
    sys.dimension = 4;
    sys.rhs = [](ConstState x, MutState out) { kepler_rhs(x, out); };
    sys.invariants = kepler_invariants();
    sys.split = SeparableSplit{[](ConstState p, MutState v) {
                                   v[0] = p[0];
                                   v[1] = p[1];
                               },
                               [](ConstState q, MutState f) {
                                   const double r = kepler_detail::radius(q);
                                   const double r3 = r * r * r;
                                   f[0] = q[0] / r3;
                                   f[1] = q[1] / r3;
                               }};
    return sys;
}

/// Pericenter start; the orbit has period 2 pi and H = -1/2.
inline StateVector kepler_initial(double e)
{
    if (!(e >= 0.0 && e < 1.0)) throw Error(ErrorKind::Config, "eccentricity must lie in [0, 1)");
    return {1.0 - e, 0.0, 0.0, std::sqrt((1.0 + e) / (1.0 - e))};
}

inline constexpr double kKeplerPeriod = 2.0 * std::numbers::pi;

/// Closed-form solution from kepler_initial(e) at time t.
inline StateVector kepler_exact(double e, double t)
{
    const double mean = std::remainder(t, kKeplerPeriod);
    double ecc = e < 0.8 ? mean : std::numbers::pi * (mean >= 0.0 ? 1.0 : -1.0);
    for (int it = 0; it < 100; ++it) {
        const double step = (ecc - e * std::sin(ecc) - mean) / (1.0 - e * std::cos(ecc));
        ecc -= step;
        if (std::abs(step) <= 1e-16 * (1.0 + std::abs(ecc))) break;
    }
    const double ce = std::cos(ecc), se = std::sin(ecc);
    const double b = std::sqrt(1.0 - e * e);
    const double rate = 1.0 / (1.0 - e * ce);
    return {ce - e, b * se, -se * rate, b * ce * rate};
}

/// psi^H_t(q, p) = (e^{-2t} q, e^t p): H degree 2, L degree -1, A degree 0.
inline SymmetryAction kepler_energy_action()
{
    return {"psi_H", DiagonalWeights{{-2.0, -2.0, 1.0, 1.0}}, {2.0, -1.0, 0.0}};
}

/// psi^L_t(q, p) = (e^{at} q, e^{bt} p): L degree a + b. Only L is homogeneous
/// unless a = -2b.
inline SymmetryAction kepler_angular_action(double a = 1.0, double b = 0.0)
{
    std::optional<double> h_deg, a_deg;
    if (a == -2.0 * b) {
        h_deg = 2.0 * b;
        a_deg = 0.0;
    }
    return {"psi_L", DiagonalWeights{{a, a, b, b}}, {h_deg, a + b, a_deg}};
}

} // namespace homproj::problems
