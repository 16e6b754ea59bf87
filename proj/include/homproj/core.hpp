#pragma once

#include <homproj/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace homproj {

using StateVector = std::vector<double>;
using ConstState = std::span<const double>;
using MutState = std::span<double>;

/// Vector field / gradient signature: writes the result into `out`
/// (same length as the input). Must be pure.
using VectorMap = std::function<void(ConstState, MutState)>;
using ScalarMap = std::function<double(ConstState)>;

/// |H| at or below this fraction of (1 + |H_ref|) counts as zero.
inline constexpr double kDegenerateFloor = 1e-13;

inline bool is_degenerate(double value, double reference) noexcept
{
    return std::abs(value) <= kDegenerateFloor * (1.0 + std::abs(reference));
}

inline bool all_finite(ConstState x) noexcept
{
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

inline double norm2(ConstState x) noexcept
{
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

inline double dot(ConstState a, ConstState b) noexcept
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

struct Invariant {
    std::string label;
    ScalarMap value;
    VectorMap gradient;
    /// Only approximately conserved by the system (e.g. KdV momentum):
    /// first-integral checks report it instead of asserting it.
    bool approximate = false;
    /// Optional fused form: returns H(x) and writes grad H(x) into g.
    std::function<double(ConstState x, MutState g)> value_and_gradient = {};

    double operator()(ConstState x) const { return value(x); }

    StateVector grad(ConstState x) const
    {
        StateVector g(x.size());
        gradient(x, g);
        return g;
    }
};

/// Separable split H(q,p) = T(p) + V(q) with x = (q, p) of equal halves.
/// Supplies the exact drift (dT/dp) and kick (dV/dq) sub-flows.
struct SeparableSplit {
    VectorMap kinetic_gradient;
    VectorMap potential_gradient;
};

struct OdeSystem {
    std::string name;
    std::size_t dimension = 0;
    VectorMap rhs;
    std::vector<Invariant> invariants;
    std::optional<SeparableSplit> split;

    StateVector operator()(ConstState x) const
    {
        StateVector out(x.size());
        rhs(x, out);
        return out;
    }

    std::size_t invariant_index(std::string_view label) const
    {
        for (std::size_t i = 0; i < invariants.size(); ++i)
            if (invariants[i].label == label) return i;
        throw Error(ErrorKind::Config, "unknown invariant '" + std::string(label) + "' for system " + name);
    }

    StateVector invariant_values(ConstState x) const
    {
        StateVector v;
        v.reserve(invariants.size());
        for (const auto& inv : invariants) v.push_back(inv.value(x));
        return v;
    }
};

// ---------------------------------------------------------------------------
// Symmetry actions

/// psi_t(x) = e^t x
struct IsotropicScaling {};

/// psi_t(x)_i = e^{w_i t} x_i
struct DiagonalWeights {
    StateVector weights;
};

/// Arbitrary closed-form flow together with its generator g.
struct ClosedFormFlow {
    std::function<void(double, ConstState, MutState)> flow;
    VectorMap generator;
};

/// Diffeomorphism with explicit inverse. `inverse` receives a nearby point in
/// the original coordinates so multi-valued inverses (arccos) can pick the
/// branch continuous with it.
struct Diffeomorphism {
    VectorMap forward;
    std::function<void(ConstState y, ConstState hint, MutState x)> inverse;
    /// false when the map is too close to singular at x (see the conditioning
    /// monitor of the problem that builds it). Empty means always fine.
    std::function<bool(ConstState)> well_conditioned;
    /// Same for the inverse at y (e.g. inverse-trig arguments near +-1).
    std::function<bool(ConstState)> inverse_well_conditioned;
};

/// psi_t = phi^{-1} o e^{tA} o phi with A diagonal.
struct ConjugateAction {
    std::shared_ptr<const Diffeomorphism> map;
    DiagonalWeights inner;
    /// Optional G with H = G o phi for the projected invariant. When set,
    /// the projection reads H off phi(x) instead of evaluating it again.
    ScalarMap conjugate_value;
};

inline void apply_weights(const StateVector& w, double t, ConstState x, MutState out)
{
    double last_w = 0.0, factor = 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (w[i] != last_w) {
            last_w = w[i];
            factor = std::exp(w[i] * t);
        }
        out[i] = factor * x[i];
    }
}

struct SymmetryAction {
    std::string label;
    std::variant<IsotropicScaling, DiagonalWeights, ClosedFormFlow, ConjugateAction> kind;
    /// Degree of each system invariant under this action, aligned with
    /// OdeSystem::invariants. nullopt: not homogeneous under this action.
    std::vector<std::optional<double>> degrees;

    void apply(double t, ConstState x, MutState out) const
    {
        std::visit(
            [&](const auto& k) {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, IsotropicScaling>) {
                    const double f = std::exp(t);
                    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f * x[i];
                } else if constexpr (std::is_same_v<K, DiagonalWeights>) {
                    apply_weights(k.weights, t, x, out);
                } else if constexpr (std::is_same_v<K, ClosedFormFlow>) {
                    k.flow(t, x, out);
                } else {
                    StateVector y(x.size());
                    k.map->forward(x, y);
                    StateVector z(x.size());
                    apply_weights(k.inner.weights, t, y, z);
                    k.map->inverse(z, x, out);
                }
            },
            kind);
    }

    StateVector apply(double t, ConstState x) const
    {
        StateVector out(x.size());
        apply(t, x, out);
        return out;
    }

    std::optional<double> degree(std::size_t invariant) const
    {
        return invariant < degrees.size() ? degrees[invariant] : std::nullopt;
    }
};

// ---------------------------------------------------------------------------
// Solver output

struct CostCounters {
    std::uint64_t rhs_evals = 0;
    std::uint64_t gradient_evals = 0;
    std::uint64_t projection_evals = 0;
    std::uint64_t accepted_steps = 0;
    std::uint64_t rejected_steps = 0;
    std::uint64_t projections_skipped = 0;
    /// Newton projections that hit the iteration cap (best iterate kept).
    std::uint64_t projections_unconverged = 0;
    /// Conjugate projections that fell back to the pseudo projection.
    std::uint64_t projection_fallbacks = 0;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<StateVector> states;
    /// invariant_traces[i][j] = H_i(states[j]) - H_i(states[0])
    std::vector<std::vector<double>> invariant_traces;
    /// max_j |H_i(x_j) - H_i(x_0)| over every accepted step, including the
    /// ones not stored because of the output stride.
    std::vector<double> max_abs_drift;
    /// Size of every accepted step.
    std::vector<double> step_sizes;
    CostCounters cost;
    bool failed = false;
    std::string failure;

    const StateVector& final_state() const { return states.back(); }
    double final_time() const { return times.back(); }
};

// ---------------------------------------------------------------------------
// Consistency checks

/// |H(psi_t(x)) - e^{kt} H(x)| / |H(x)|
inline double evaluate_degree_law(const SymmetryAction& action, const Invariant& inv, double k, ConstState x,
                                  double t)
{
    const double h0 = inv.value(x);
    if (is_degenerate(h0, 0.0))
        throw Error(ErrorKind::DegenerateInvariant, inv.label + " vanishes at the test point");
    const StateVector moved = action.apply(t, x);
    return std::abs(inv.value(moved) - std::exp(k * t) * h0) / std::abs(h0);
}

struct FirstIntegralReport {
    double max_defect = 0.0;
    bool approximate = false;
};

/// max over samples of |grad H . f| / (1 + |grad H||f|)
inline FirstIntegralReport check_first_integral(const OdeSystem& sys, std::size_t inv_index,
                                                std::span<const StateVector> samples)
{
    const Invariant& inv = sys.invariants.at(inv_index);
    FirstIntegralReport report{0.0, inv.approximate};
    StateVector f(sys.dimension), g(sys.dimension);
    for (const auto& x : samples) {
        sys.rhs(x, f);
        inv.gradient(x, g);
        const double defect = std::abs(dot(g, f)) / (1.0 + norm2(g) * norm2(f));
        report.max_defect = std::max(report.max_defect, defect);
    }
    return report;
}

/// Largest mixed error |FD - grad.d| / (1e-6 + 1e-6|grad.d|) of central
/// differences along unit directions; <= 1 means the gradient passes.
inline double gradient_check_ratio(const Invariant& inv, ConstState x, ConstState direction, double step = 1e-6)
{
    StateVector xp(x.begin(), x.end()), xm(x.begin(), x.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] += step * direction[i];
        xm[i] -= step * direction[i];
    }
    const double fd = (inv.value(xp) - inv.value(xm)) / (2.0 * step);
    const double exact = dot(inv.grad(x), direction);
    return std::abs(fd - exact) / (1e-6 + 1e-6 * std::abs(exact));
}

} // namespace homproj
