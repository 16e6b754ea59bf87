#pragma once

#include <homproj/homproj.hpp>

#include <cmath>
#include <random>
#include <vector>

namespace testing_support {

using homproj::StateVector;

inline StateVector uniform_state(std::mt19937_64& rng, std::size_t n, double lo, double hi)
{
    std::uniform_real_distribution<double> d(lo, hi);
    StateVector x(n);
    for (double& v : x) v = d(rng);
    return x;
}

inline StateVector unit_direction(std::mt19937_64& rng, std::size_t n)
{
    std::normal_distribution<double> d;
    StateVector x(n);
    for (double& v : x) v = d(rng);
    const double s = homproj::norm2(x);
    for (double& v : x) v /= s;
    return x;
}

/// Kepler state with |q| in [r_lo, r_hi] and moderate momenta.
inline StateVector kepler_state(std::mt19937_64& rng, double r_lo = 0.5, double r_hi = 2.0)
{
    std::uniform_real_distribution<double> r(r_lo, r_hi), ang(0.0, 2.0 * 3.141592653589793), p(-1.0, 1.0);
    const double rad = r(rng), a = ang(rng);
    return {rad * std::cos(a), rad * std::sin(a), p(rng), p(rng)};
}

inline double max_abs_diff(const StateVector& a, const StateVector& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Least-squares slope of log(err) against log(h).
inline double loglog_slope(const std::vector<double>& h, const std::vector<double>& err)
{
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        mx += std::log(h[i]);
        my += std::log(err[i]);
    }
    mx /= h.size();
    my /= h.size();
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        sxx += (std::log(h[i]) - mx) * (std::log(h[i]) - mx);
        sxy += (std::log(h[i]) - mx) * (std::log(err[i]) - my);
    }
    return sxy / sxx;
}

/// x' = A x style helpers used by several suites.
inline homproj::OdeSystem harmonic_oscillator()
{
    homproj::OdeSystem sys;
    sys.name = "harmonic";
    sys.dimension = 2;
    sys.rhs = [](homproj::ConstState x, homproj::MutState f) {
        f[0] = x[1];
        f[1] = -x[0];
    };
    sys.invariants = {{"H", [](homproj::ConstState x) { return 0.5 * (x[0] * x[0] + x[1] * x[1]); },
                       [](homproj::ConstState x, homproj::MutState g) {
                           g[0] = x[0];
                           g[1] = x[1];
                       }}};
    sys.split = homproj::SeparableSplit{[](homproj::ConstState p, homproj::MutState v) { v[0] = p[0]; },
                                        [](homproj::ConstState q, homproj::MutState f) { f[0] = q[0]; }};
    return sys;
}

inline homproj::OdeSystem linear_scalar(double lambda)
{
    homproj::OdeSystem sys;
    sys.name = "linear";
    sys.dimension = 1;
    sys.rhs = [lambda](homproj::ConstState x, homproj::MutState f) { f[0] = lambda * x[0]; };
    return sys;
}

} // namespace testing_support
