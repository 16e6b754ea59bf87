#pragma once

#include <homproj/core.hpp>
#include <homproj/linalg.hpp>

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

namespace homproj::problems {

namespace fd_detail {

// One-sided coefficients of the centered stencils, offsets 1..m.
inline std::vector<double> first_derivative_weights(int order)
{
    switch (order) {
    case 2: return {1.0 / 2.0};
    case 4: return {2.0 / 3.0, -1.0 / 12.0};
    case 6: return {3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0};
    case 8: return {4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0};
    default: throw Error(ErrorKind::BadGrid, "unsupported first-derivative order");
    }
}

// Center weight first, then offsets 1..m.
inline std::vector<double> second_derivative_weights(int order)
{
    switch (order) {
    case 2: return {-2.0, 1.0};
    case 4: return {-5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0};
    case 6: return {-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0};
    case 8: return {-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0};
    default: throw Error(ErrorKind::BadGrid, "unsupported second-derivative order");
    }
}

inline void check_grid(std::size_t n, double length, int half_width)
{
    if (!(length > 0.0)) throw Error(ErrorKind::BadGrid, "domain length must be positive");
    if (n % 2 != 0 || n < static_cast<std::size_t>(2 * half_width + 1))
        throw Error(ErrorKind::BadGrid, "grid size must be even and wider than the stencil");
}

} // namespace fd_detail

/// Periodic centered first-derivative operator (skew circulant).
inline linalg::CirculantOperator first_derivative(std::size_t n, double length, int order)
{
    const auto w = fd_detail::first_derivative_weights(order);
    fd_detail::check_grid(n, length, static_cast<int>(w.size()));
    const double dx = length / static_cast<double>(n);
    std::vector<std::pair<int, double>> stencil;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const int off = static_cast<int>(k) + 1;
        stencil.emplace_back(off, w[k] / dx);
        stencil.emplace_back(-off, -w[k] / dx);
    }
    return {n, std::move(stencil)};
}

/// Periodic centered second-derivative operator (symmetric circulant).
inline linalg::CirculantOperator second_derivative(std::size_t n, double length, int order)
{
    const auto w = fd_detail::second_derivative_weights(order);
    fd_detail::check_grid(n, length, static_cast<int>(w.size()) - 1);
    const double dx = length / static_cast<double>(n);
    const double s = 1.0 / (dx * dx);
    std::vector<std::pair<int, double>> stencil{{0, w[0] * s}};
    for (std::size_t k = 1; k < w.size(); ++k) {
        stencil.emplace_back(static_cast<int>(k), w[k] * s);
        stencil.emplace_back(-static_cast<int>(k), w[k] * s);
    }
    return {n, std::move(stencil)};
}

struct SemidiscretePde {
    OdeSystem system;
    std::size_t points = 0;
    double length = 0.0;
    double dx = 0.0;
    linalg::CirculantOperator first;
    /// Second-derivative operator (CH only).
    std::optional<linalg::CirculantOperator> second;

    StateVector grid() const
    {
        StateVector x(points);
        for (std::size_t i = 0; i < points; ++i) x[i] = static_cast<double>(i) * dx;
        return x;
    }
};

/// KdV u_t + 6 u u_x + u_xxx = 0 as u' = -D (3 u.u + D^2 u) with invariants
/// H1 = dx sum u, H2 = dx sum u^2 (approximate), H3 = dx sum (u^3 - (Du)^2 / 2).
inline SemidiscretePde kdv_build(std::size_t n = 64, double length = 40.0, int order = 8)
{
    SemidiscretePde pde;
    pde.points = n;
    pde.length = length;
    pde.first = first_derivative(n, length, order);
    pde.dx = length / static_cast<double>(n);
    const double dx = pde.dx;
    const auto d = std::make_shared<const linalg::CirculantOperator>(pde.first);

    OdeSystem& sys = pde.system;
    sys.name = "kdv";
    sys.dimension = n;
    sys.rhs = [d, n](ConstState u, MutState out) {
        StateVector du(n), w(n);
        d->apply(u, du);
        d->apply(du, w);
        for (std::size_t i = 0; i < n; ++i) w[i] += 3.0 * u[i] * u[i];
        d->apply(w, out);
        for (double& v : out) v = -v;
    };
    Invariant mass{"H1",
                   [dx](ConstState u) {
                       double s = 0.0;
                       for (double v : u) s += v;
                       return dx * s;
                   },
                   [dx](ConstState, MutState g) { std::fill(g.begin(), g.end(), dx); }};
    Invariant momentum{"H2",
                       [dx](ConstState u) {
                           double s = 0.0;
                           for (double v : u) s += v * v;
                           return dx * s;
                       },
                       [dx](ConstState u, MutState g) {
                           for (std::size_t i = 0; i < u.size(); ++i) g[i] = 2.0 * dx * u[i];
                       },
                       true};
    Invariant energy{"H3",
                     [d, dx, n](ConstState u) {
                         StateVector du(n);
                         d->apply(u, du);
                         double s = 0.0;
                         for (std::size_t i = 0; i < n; ++i) s += u[i] * u[i] * u[i] - 0.5 * du[i] * du[i];
                         return dx * s;
                     },
                     [d, dx, n](ConstState u, MutState g) {
                         StateVector du(n);
                         d->apply(u, du);
                         d->apply(du, g);
                         for (std::size_t i = 0; i < n; ++i) g[i] = dx * (3.0 * u[i] * u[i] + g[i]);
                     }};
    sys.invariants = {mass, momentum, energy};
    return pde;
}

/// Camassa-Holm as u' = -1/2 (I - Dxx)^{-1} Dx grad H2 / dx with
/// H1 = dx sum (u^2 + (Dx u)^2) (approximate for this discretization) and
/// H2 = dx sum (u^3 + u (Dx u)^2).
inline SemidiscretePde ch_build(std::size_t n = 128, double length = 80.0, int order = 4)
{
    SemidiscretePde pde;
    pde.points = n;
    pde.length = length;
    pde.first = first_derivative(n, length, order);
    pde.second = second_derivative(n, length, order);
    pde.dx = length / static_cast<double>(n);
    const double dx = pde.dx;
    const auto d = std::make_shared<const linalg::CirculantOperator>(pde.first);

    linalg::DenseMatrix helmholtz = linalg::DenseMatrix::identity(n);
    const linalg::DenseMatrix dxx = pde.second->dense();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) helmholtz(i, j) -= dxx(i, j);
    const auto lu = std::make_shared<const linalg::LuFactorization>(std::move(helmholtz));

    OdeSystem& sys = pde.system;
    sys.name = "camassa_holm";
    sys.dimension = n;
    sys.rhs = [d, lu, n](ConstState u, MutState out) {
        StateVector du(n), w(n), t(n);
        d->apply(u, du);
        for (std::size_t i = 0; i < n; ++i) t[i] = u[i] * du[i];
        d->apply(t, w);
        for (std::size_t i = 0; i < n; ++i) w[i] = 3.0 * u[i] * u[i] + du[i] * du[i] - 2.0 * w[i];
        d->apply(w, t);
        for (double& v : t) v *= -0.5;
        lu->solve(t, out);
    };
    Invariant energy{"H1",
                     [d, dx, n](ConstState u) {
                         StateVector du(n);
                         d->apply(u, du);
                         double s = 0.0;
                         for (std::size_t i = 0; i < n; ++i) s += u[i] * u[i] + du[i] * du[i];
                         return dx * s;
                     },
                     [d, dx, n](ConstState u, MutState g) {
                         StateVector du(n);
                         d->apply(u, du);
                         d->apply(du, g);
                         for (std::size_t i = 0; i < n; ++i) g[i] = 2.0 * dx * (u[i] - g[i]);
                     },
                     true};
    Invariant cubic{"H2",
                    [d, dx, n](ConstState u) {
                        StateVector du(n);
                        d->apply(u, du);
                        double s = 0.0;
                        for (std::size_t i = 0; i < n; ++i) s += u[i] * u[i] * u[i] + u[i] * du[i] * du[i];
                        return dx * s;
                    },
                    [d, dx, n](ConstState u, MutState g) {
                        StateVector du(n), t(n);
                        d->apply(u, du);
                        for (std::size_t i = 0; i < n; ++i) t[i] = u[i] * du[i];
                        d->apply(t, g);
                        for (std::size_t i = 0; i < n; ++i)
                            g[i] = dx * (3.0 * u[i] * u[i] + du[i] * du[i] - 2.0 * g[i]);
                    }};
    sys.invariants = {energy, cubic};
    return pde;
}

/// u -> e^t u: H1 degree 1, H2 degree 2; H3 mixes degrees 2 and 3.
inline SymmetryAction kdv_scaling_action() { return {"scale", IsotropicScaling{}, {1.0, 2.0, std::nullopt}}; }

/// u -> e^t u: H1 degree 2, H2 degree 3.
inline SymmetryAction ch_scaling_action() { return {"scale", IsotropicScaling{}, {2.0, 3.0}}; }

/// (c/2) sech^2(sqrt(c)/2 (x - x0)) on the grid.
inline StateVector soliton_ic(double c, double x0, const SemidiscretePde& pde)
{
    if (!(c > 0.0)) throw Error(ErrorKind::Config, "soliton speed must be positive");
    StateVector u = pde.grid();
    for (double& x : u) {
        const double sech = 1.0 / std::cosh(0.5 * std::sqrt(c) * (x - x0));
        x = 0.5 * c * sech * sech;
    }
    return u;
}

/// c exp(-|x - x0|) on the grid.
inline StateVector peakon_ic(double c, double x0, const SemidiscretePde& pde)
{
    if (!(c > 0.0)) throw Error(ErrorKind::Config, "peakon speed must be positive");
    StateVector u = pde.grid();
    for (double& x : u) x = c * std::exp(-std::abs(x - x0));
    return u;
}

} // namespace homproj::problems
