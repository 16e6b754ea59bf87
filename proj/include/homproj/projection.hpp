#pragma once

#include <homproj/core.hpp>
#include <homproj/integrators.hpp>
#include <homproj/linalg.hpp>
#include <homproj/tableaus.hpp>

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace homproj {

/// ln(H_old / H_new). The caller divides by the degree.
inline double log_ratio(double h_old, double h_new)
{
    if (!std::isfinite(h_old) || !std::isfinite(h_new))
        throw Error(ErrorKind::NonFinite, "non-finite invariant value");
    if (is_degenerate(h_old, h_new) || is_degenerate(h_new, h_old))
        throw Error(ErrorKind::DegenerateInvariant, "invariant value below the relative floor");
    if ((h_old > 0.0) != (h_new > 0.0))
        throw Error(ErrorKind::SignMismatch, "invariant changed sign across the step");
    return std::log(h_old / h_new);
}

struct ProjectionResult {
    StateVector state;
    /// Flow parameter applied.
    double s = 0.0;
};

// ---------------------------------------------------------------------------
// Linear (closed-form) projection

inline double homogeneous_project(const SymmetryAction& action, double k, double target, ConstState x,
                                  const Invariant& inv, MutState out)
{
    if (k == 0.0) throw Error(ErrorKind::Config, "projection needs a nonzero degree");
    const double s = log_ratio(target, inv.value(x)) / k;
    action.apply(s, x, out);
    return s;
}

inline ProjectionResult homogeneous_project(const SymmetryAction& action, double k, double target, ConstState x,
                                            const Invariant& inv)
{
    ProjectionResult r{StateVector(x.size()), 0.0};
    r.s = homogeneous_project(action, k, target, x, inv, r.state);
    return r;
}

/// Target alpha(x, h) instead of H(x).
using DissipationSchedule = std::function<double(ConstState x, double h)>;

inline ProjectionResult dissipative_project(const SymmetryAction& action, double k,
                                            const DissipationSchedule& schedule, ConstState x0, double h,
                                            ConstState x_candidate, const Invariant& inv)
{
    return homogeneous_project(action, k, schedule(x0, h), x_candidate, inv);
}

// ---------------------------------------------------------------------------
// Simultaneous projection over commuting diagonal actions

struct DegreeSystem {
    std::vector<SymmetryAction> actions;
    /// k(i, j): degree of invariant i under action j.
    linalg::DenseMatrix degrees;
    /// Reject K when its condition estimate exceeds this.
    double condition_limit = 1e8;

    /// Builds K from the actions' declared degrees for the given invariants.
    static DegreeSystem from_actions(std::vector<SymmetryAction> actions, const std::vector<std::size_t>& invariants)
    {
        DegreeSystem ds;
        const std::size_t m = invariants.size();
        if (actions.size() != m) throw Error(ErrorKind::Config, "degree system needs one action per invariant");
        ds.degrees = linalg::DenseMatrix(m, m);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t i = 0; i < m; ++i) {
                const auto k = actions[j].degree(invariants[i]);
                if (!k) throw Error(ErrorKind::Config, "action " + actions[j].label + " has no degree for an invariant");
                ds.degrees(i, j) = *k;
            }
        ds.actions = std::move(actions);
        return ds;
    }
};

namespace detail {

inline StateVector diagonal_generator(const SymmetryAction& action, std::size_t n)
{
    if (std::holds_alternative<IsotropicScaling>(action.kind)) return StateVector(n, 1.0);
    if (const auto* d = std::get_if<DiagonalWeights>(&action.kind)) return d->weights;
    throw Error(ErrorKind::Config, "simultaneous projection needs diagonal actions (" + action.label + ")");
}

} // namespace detail

/// s = K^{-1} b with b_i = ln(target_i / H_i(x)); applies prod_j e^{s_j A_j}.
inline ProjectionResult simultaneous_project(const DegreeSystem& ds, ConstState x,
                                             std::span<const Invariant> invariants, std::span<const double> targets)
{
    const std::size_t m = invariants.size();
    if (ds.degrees.rows() != m || ds.actions.size() != m)
        throw Error(ErrorKind::Config, "degree system size does not match the invariant list");
    if (!(linalg::condition_estimate(ds.degrees) <= ds.condition_limit))
        throw Error(ErrorKind::SingularDegreeMatrix, "degree matrix is singular or ill-conditioned");
    StateVector b(m);
    for (std::size_t i = 0; i < m; ++i) b[i] = log_ratio(targets[i], invariants[i].value(x));
    const StateVector s = linalg::lu_solve(ds.degrees, b);
    StateVector w(x.size(), 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        const StateVector a = detail::diagonal_generator(ds.actions[j], x.size());
        for (std::size_t d = 0; d < w.size(); ++d) w[d] += s[j] * a[d];
    }
    ProjectionResult r{StateVector(x.size()), 0.0};
    apply_weights(w, 1.0, x, r.state);
    r.s = m ? s[0] : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Pseudo projection: integrate the generator g over unit time

struct PseudoGeneratorSpec {
    std::vector<Invariant> invariants;
    /// Direction matrix V(x) (n x m). Empty selects V = G.
    std::function<linalg::DenseMatrix(ConstState)> directions;
    /// Explicit RK order of the inner integrator (1..4).
    int inner_order = 2;
    /// Number of outer iterations; k_i is recomputed before each.
    int iterations = 1;
    /// Condition estimate of G^T V above which mu I is added.
    double condition_limit = 1e12;
    double regularization = 1e-12;
    /// Per-step log-ratios k_i (set by pseudo_project before each inner solve).
    std::vector<double> log_ratios;
};

/// g(x) = V (G^T V)^{-1} diag(k_i H_i(x)) 1. `values`, when given, holds
/// H_i(x) already evaluated by the caller; `gradient` likewise holds grad H_1
/// for a single invariant.
inline void build_pseudo_generator(const PseudoGeneratorSpec& spec, ConstState x, MutState g,
                                   CostCounters* cost = nullptr, const double* values = nullptr,
                                   const StateVector* gradient = nullptr)
{
    const std::size_t n = x.size();
    const std::size_t m = spec.invariants.size();
    if (spec.log_ratios.size() != m) throw Error(ErrorKind::Config, "log-ratio count does not match invariants");
    std::fill(g.begin(), g.end(), 0.0);
    bool any = false;
    for (double k : spec.log_ratios) any = any || k != 0.0;
    if (!any) return;

    if (m == 1 && !spec.directions) {
        // g = k H grad H / |grad H|^2
        const Invariant& inv = spec.invariants[0];
        double hv;
        if (values && gradient) {
            std::copy(gradient->begin(), gradient->end(), g.begin());
            hv = values[0];
        } else if (values) {
            inv.gradient(x, g);
            hv = values[0];
        } else if (inv.value_and_gradient) {
            hv = inv.value_and_gradient(x, g);
        } else {
            inv.gradient(x, g);
            hv = inv.value(x);
        }
        if (cost) ++cost->gradient_evals;
        double gg = 0.0;
        for (double v : g) gg += v * v;
        if (!(gg > 0.0) || !std::isfinite(gg)) throw Error(ErrorKind::SingularGram, "gradient Gram matrix is singular");
        const double c = spec.log_ratios[0] * hv / gg;
        for (double& v : g) v *= c;
        return;
    }

    linalg::DenseMatrix grads(n, m);
    StateVector rhs(m), col(n);
    for (std::size_t i = 0; i < m; ++i) {
        spec.invariants[i].gradient(x, col);
        for (std::size_t d = 0; d < n; ++d) grads(d, i) = col[d];
        rhs[i] = spec.log_ratios[i] * (values ? values[i] : spec.invariants[i].value(x));
    }
    if (cost) cost->gradient_evals += m;
    const linalg::DenseMatrix dirs = spec.directions ? spec.directions(x) : grads;

    linalg::DenseMatrix gram(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t d = 0; d < n; ++d) acc += grads(d, i) * dirs(d, j);
            gram(i, j) = acc;
        }
    if (!(linalg::condition_estimate(gram) <= spec.condition_limit)) {
        double trace = 0.0;
        for (std::size_t i = 0; i < m; ++i) trace += gram(i, i);
        const double mu = spec.regularization * std::abs(trace);
        for (std::size_t i = 0; i < m; ++i) gram(i, i) += mu;
    }
    StateVector coeff;
    try {
        coeff = linalg::lu_solve(gram, rhs);
    } catch (const Error&) {
        throw Error(ErrorKind::SingularGram, "gradient Gram matrix is singular");
    }
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t d = 0; d < n; ++d) g[d] += dirs(d, j) * coeff[j];
}

inline StateVector build_pseudo_generator(const PseudoGeneratorSpec& spec, ConstState x)
{
    StateVector g(x.size());
    build_pseudo_generator(spec, x, g);
    return g;
}

/// r iterations of an order-q step of z' = g(z) over unit time, with
/// k_i = ln(target_i / H_i(z)) refreshed before each iteration. Invariants
/// with a sign mismatch get k_i = 0 and are counted as skipped. Holds the
/// inner integrator and buffers so repeated projections do not allocate.
class PseudoProjector {
public:
    PseudoProjector(PseudoGeneratorSpec spec, std::size_t n)
        : spec_(std::move(spec)), tab_(tableaus::explicit_of_order(spec_.inner_order)),
          k_(tab_.stages(), StateVector(n)), z_(n), next_(n), tmp_(n), grad_(n),
          fused_(spec_.invariants.size() == 1 && !spec_.directions && spec_.invariants[0].value_and_gradient)
    {
    }

    const PseudoGeneratorSpec& spec() const noexcept { return spec_; }

    void project(std::span<const double> targets, ConstState x, MutState out, CostCounters& cost)
    {
        const std::size_t m = spec_.invariants.size();
        std::copy(x.begin(), x.end(), z_.begin());
        spec_.log_ratios.assign(m, 0.0);
        values_.resize(m);
        for (int it = 0; it < spec_.iterations; ++it) {
            bool any = false;
            for (std::size_t i = 0; i < m; ++i) {
                try {
                    values_[i] = fused_ ? spec_.invariants[i].value_and_gradient(z_, grad_) : spec_.invariants[i].value(z_);
                    spec_.log_ratios[i] = log_ratio(targets[i], values_[i]);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::SignMismatch && e.kind() != ErrorKind::DegenerateInvariant) throw;
                    spec_.log_ratios[i] = 0.0;
                    if (it == 0) ++cost.projections_skipped;
                }
                any = any || spec_.log_ratios[i] != 0.0;
            }
            if (!any) break;
            inner_step(cost);
            std::swap(z_, next_);
        }
        std::copy(z_.begin(), z_.end(), out.begin());
    }

private:
    /// One explicit RK step of z' = g(z) with unit step size.
    void inner_step(CostCounters& cost)
    {
        const std::size_t s = tab_.stages();
        const std::size_t n = z_.size();
        // The first stage sits at z_ itself, where H_i is already known.
        build_pseudo_generator(spec_, z_, k_[0], &cost, values_.data(), fused_ ? &grad_ : nullptr);
        for (std::size_t i = 1; i < s; ++i) {
            for (std::size_t d = 0; d < n; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < i; ++j) acc += tab_.a[i][j] * k_[j][d];
                tmp_[d] = z_[d] + acc;
            }
            build_pseudo_generator(spec_, tmp_, k_[i], &cost);
        }
        for (std::size_t d = 0; d < n; ++d) {
            double acc = 0.0;
            for (std::size_t j = 0; j < s; ++j) acc += tab_.b[j] * k_[j][d];
            next_[d] = z_[d] + acc;
        }
        if (!all_finite(next_)) throw Error(ErrorKind::NonFinite, "pseudo projection produced a non-finite state");
    }

    PseudoGeneratorSpec spec_;
    ButcherTableau tab_;
    std::vector<StateVector> k_;
    StateVector z_, next_, tmp_, values_, grad_;
    /// Single invariant with a fused evaluator: its gradient at z_ comes
    /// with the value.
    bool fused_;
};

inline StateVector pseudo_project(PseudoGeneratorSpec spec, std::span<const double> targets, ConstState x_candidate,
                                  CostCounters& cost)
{
    PseudoProjector projector(std::move(spec), x_candidate.size());
    StateVector z(x_candidate.size());
    projector.project(targets, x_candidate, z, cost);
    return z;
}

inline StateVector pseudo_project(const PseudoGeneratorSpec& spec, std::span<const double> targets,
                                  ConstState x_candidate)
{
    CostCounters cost;
    return pseudo_project(spec, targets, x_candidate, cost);
}

// ---------------------------------------------------------------------------
// Orthogonal projection by Newton iteration (baseline)

struct NewtonResult {
    StateVector state;
    int iterations = 0;
    bool converged = false;
    double residual = 0.0;
};

/// x = x_candidate + G(x_candidate) lambda, Newton on H_i(x) - target_i.
/// On failure the best iterate is returned with converged = false.
inline NewtonResult newton_project(std::span<const Invariant> invariants, ConstState x_candidate,
                                   std::span<const double> targets, double tol = 1e-13, int max_iters = 20,
                                   CostCounters* cost = nullptr)
{
    const std::size_t n = x_candidate.size();
    const std::size_t m = invariants.size();
    linalg::DenseMatrix g0(n, m), gx(n, m);
    StateVector col(n);
    auto fill_grads = [&](ConstState x, linalg::DenseMatrix& g) {
        for (std::size_t i = 0; i < m; ++i) {
            invariants[i].gradient(x, col);
            for (std::size_t d = 0; d < n; ++d) g(d, i) = col[d];
        }
        if (cost) cost->gradient_evals += m;
    };
    fill_grads(x_candidate, g0);

    NewtonResult best{StateVector(x_candidate.begin(), x_candidate.end()), 0, false,
                      std::numeric_limits<double>::infinity()};
    StateVector lambda(m, 0.0), x(x_candidate.begin(), x_candidate.end()), r(m);
    for (int it = 0;; ++it) {
        double rmax = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            r[i] = invariants[i].value(x) - targets[i];
            rmax = std::max(rmax, std::abs(r[i]));
        }
        if (!std::isfinite(rmax)) break;
        if (rmax < best.residual) {
            best.state = x;
            best.residual = rmax;
            best.iterations = it;
        }
        if (rmax <= tol) {
            best.converged = true;
            break;
        }
        if (it >= max_iters) break;
        fill_grads(x, gx);
        linalg::DenseMatrix jac(m, m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < n; ++d) acc += gx(d, i) * g0(d, j);
                jac(i, j) = acc;
            }
        StateVector delta;
        try {
            delta = linalg::lu_solve(jac, r);
        } catch (const Error&) {
            break;
        }
        for (std::size_t j = 0; j < m; ++j) lambda[j] -= delta[j];
        for (std::size_t d = 0; d < n; ++d) {
            double acc = x_candidate[d];
            for (std::size_t j = 0; j < m; ++j) acc += g0(d, j) * lambda[j];
            x[d] = acc;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Conjugate projection psi_s = phi^{-1} o e^{sA} o phi

/// In-place form: y and z are scratch of the state size. `conjugate_value`
/// (G with H = G o phi) may be empty, in which case H(x) is evaluated.
inline double conjugate_project(const Diffeomorphism& map, const DiagonalWeights& inner, const ScalarMap& conjugate_value,
                                double k, double target, ConstState x, const Invariant& inv, MutState out,
                                MutState y, MutState z)
{
    if (k == 0.0) throw Error(ErrorKind::Config, "projection needs a nonzero degree");
    if (map.well_conditioned && !map.well_conditioned(x))
        throw Error(ErrorKind::IllConditionedMap, "conjugating map is near singular at the candidate");
    map.forward(x, y);
    const double s = log_ratio(target, conjugate_value ? conjugate_value(y) : inv.value(x)) / k;
    apply_weights(inner.weights, s, y, z);
    if (map.inverse_well_conditioned && !map.inverse_well_conditioned(z))
        throw Error(ErrorKind::IllConditionedMap, "inverse map is near singular at the scaled point");
    map.inverse(z, x, out);
    return s;
}

inline ProjectionResult conjugate_project(const Diffeomorphism& map, const DiagonalWeights& inner, double k,
                                          double target, ConstState x, const Invariant& inv)
{
    const std::size_t n = x.size();
    StateVector y(n), z(n);
    ProjectionResult r{StateVector(n), 0.0};
    r.s = conjugate_project(map, inner, {}, k, target, x, inv, r.state, y, z);
    return r;
}

// ---------------------------------------------------------------------------
// Post-step hooks

enum class TargetPolicy {
    /// Invariant values at the initial state.
    Anchor,
    /// Invariant values at the start of the step.
    Previous,
};

namespace detail {

inline double hook_target(const StepContext& ctx, std::size_t index, TargetPolicy policy)
{
    return policy == TargetPolicy::Anchor ? ctx.anchor[index] : ctx.system.invariants[index].value(ctx.previous);
}

inline bool is_skippable(const Error& e) noexcept
{
    return e.kind() == ErrorKind::SignMismatch || e.kind() == ErrorKind::DegenerateInvariant;
}

} // namespace detail

/// Closed-form projection of one invariant with its declared degree.
inline PostStepHook homogeneous_hook(SymmetryAction action, std::size_t invariant,
                                     TargetPolicy policy = TargetPolicy::Anchor)
{
    const auto k = action.degree(invariant);
    if (!k || *k == 0.0) throw Error(ErrorKind::Config, action.label + " has no nonzero degree for the invariant");
    auto scratch = std::make_shared<StateVector>();
    return [action = std::move(action), invariant, policy, k = *k, scratch](StepContext& ctx) {
        const Invariant& inv = ctx.system.invariants[invariant];
        scratch->resize(ctx.state.size());
        try {
            homogeneous_project(action, k, detail::hook_target(ctx, invariant, policy), ctx.state, inv, *scratch);
        } catch (const Error& e) {
            if (!detail::is_skippable(e)) throw;
            ++ctx.cost.projections_skipped;
            return;
        }
        std::copy(scratch->begin(), scratch->end(), ctx.state.begin());
        ++ctx.cost.projection_evals;
    };
}

inline PostStepHook dissipative_hook(SymmetryAction action, std::size_t invariant, DissipationSchedule schedule)
{
    const auto k = action.degree(invariant);
    if (!k || *k == 0.0) throw Error(ErrorKind::Config, action.label + " has no nonzero degree for the invariant");
    return [action = std::move(action), invariant, k = *k, schedule = std::move(schedule)](StepContext& ctx) {
        const Invariant& inv = ctx.system.invariants[invariant];
        try {
            const auto r = dissipative_project(action, k, schedule, ctx.previous, ctx.h, ctx.state, inv);
            std::copy(r.state.begin(), r.state.end(), ctx.state.begin());
            ++ctx.cost.projection_evals;
        } catch (const Error& e) {
            if (!detail::is_skippable(e)) throw;
            ++ctx.cost.projections_skipped;
        }
    };
}

inline PostStepHook simultaneous_hook(DegreeSystem ds, std::vector<std::size_t> invariants,
                                      TargetPolicy policy = TargetPolicy::Anchor)
{
    return [ds = std::move(ds), invariants = std::move(invariants), policy](StepContext& ctx) {
        std::vector<Invariant> invs;
        StateVector targets;
        for (std::size_t i : invariants) {
            invs.push_back(ctx.system.invariants[i]);
            targets.push_back(detail::hook_target(ctx, i, policy));
        }
        try {
            const auto r = simultaneous_project(ds, ctx.state, invs, targets);
            std::copy(r.state.begin(), r.state.end(), ctx.state.begin());
            ++ctx.cost.projection_evals;
        } catch (const Error& e) {
            if (!detail::is_skippable(e)) throw;
            ++ctx.cost.projections_skipped;
        }
    };
}

/// `base.invariants` is filled from the system on first use when empty.
inline PostStepHook pseudo_hook(std::vector<std::size_t> invariants, PseudoGeneratorSpec base = {},
                                TargetPolicy policy = TargetPolicy::Anchor)
{
    struct State {
        PseudoGeneratorSpec base;
        std::unique_ptr<PseudoProjector> projector;
        StateVector targets, out;
    };
    auto st = std::make_shared<State>();
    st->base = std::move(base);
    return [st, invariants = std::move(invariants), policy](StepContext& ctx) {
        if (!st->projector) {
            if (st->base.invariants.empty())
                for (std::size_t i : invariants) st->base.invariants.push_back(ctx.system.invariants[i]);
            st->projector = std::make_unique<PseudoProjector>(std::move(st->base), ctx.state.size());
            st->targets.resize(invariants.size());
            st->out.resize(ctx.state.size());
        }
        for (std::size_t j = 0; j < invariants.size(); ++j)
            st->targets[j] = detail::hook_target(ctx, invariants[j], policy);
        st->projector->project(st->targets, ctx.state, st->out, ctx.cost);
        std::copy(st->out.begin(), st->out.end(), ctx.state.begin());
        ++ctx.cost.projection_evals;
    };
}

inline PostStepHook newton_hook(std::vector<std::size_t> invariants, double tol = 1e-13, int max_iters = 20,
                                TargetPolicy policy = TargetPolicy::Anchor)
{
    return [invariants = std::move(invariants), tol, max_iters, policy](StepContext& ctx) {
        std::vector<Invariant> invs;
        StateVector targets;
        for (std::size_t i : invariants) {
            invs.push_back(ctx.system.invariants[i]);
            targets.push_back(detail::hook_target(ctx, i, policy));
        }
        const NewtonResult r = newton_project(invs, ctx.state, targets, tol, max_iters, &ctx.cost);
        if (!r.converged) ++ctx.cost.projections_unconverged;
        std::copy(r.state.begin(), r.state.end(), ctx.state.begin());
        ++ctx.cost.projection_evals;
    };
}

/// Conjugate projection; falls back to the pseudo projection of the same
/// invariant when the map is ill-conditioned at the candidate.
inline PostStepHook conjugate_hook(SymmetryAction action, std::size_t invariant,
                                   TargetPolicy policy = TargetPolicy::Anchor, PseudoGeneratorSpec fallback = {})
{
    const auto* conj = std::get_if<ConjugateAction>(&action.kind);
    if (!conj) throw Error(ErrorKind::Config, action.label + " is not a conjugate action");
    const auto k = action.degree(invariant);
    if (!k || *k == 0.0) throw Error(ErrorKind::Config, action.label + " has no nonzero degree for the invariant");
    auto pseudo = pseudo_hook({invariant}, std::move(fallback), policy);
    auto scratch = std::make_shared<std::array<StateVector, 3>>();
    return [conj = *conj, invariant, policy, k = *k, pseudo, scratch](StepContext& ctx) {
        const Invariant& inv = ctx.system.invariants[invariant];
        auto& [out, y, z] = *scratch;
        out.resize(ctx.state.size());
        y.resize(ctx.state.size());
        z.resize(ctx.state.size());
        try {
            conjugate_project(*conj.map, conj.inner, conj.conjugate_value, k, detail::hook_target(ctx, invariant, policy),
                              ctx.state, inv, out, y, z);
            std::copy(out.begin(), out.end(), ctx.state.begin());
            ++ctx.cost.projection_evals;
        } catch (const Error& e) {
            if (detail::is_skippable(e)) {
                ++ctx.cost.projections_skipped;
                return;
            }
            if (e.kind() != ErrorKind::IllConditionedMap && e.kind() != ErrorKind::OutOfRange) throw;
            ++ctx.cost.projection_fallbacks;
            pseudo(ctx);
        }
    };
}

/// Step n applies schemes[n mod m].
inline PostStepHook alternating_project(std::vector<PostStepHook> schemes, std::size_t step_index)
{
    if (schemes.empty()) throw Error(ErrorKind::Config, "alternating projection needs at least one scheme");
    return schemes[step_index % schemes.size()];
}

inline PostStepHook alternating_hook(std::vector<PostStepHook> schemes)
{
    if (schemes.empty()) throw Error(ErrorKind::Config, "alternating projection needs at least one scheme");
    return [schemes = std::move(schemes)](StepContext& ctx) { schemes[ctx.step_index % schemes.size()](ctx); };
}

} // namespace homproj
