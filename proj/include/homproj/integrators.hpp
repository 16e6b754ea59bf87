#pragma once

#include <homproj/core.hpp>
#include <homproj/linalg.hpp>
#include <homproj/tableaus.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace homproj {

/// One step of a fixed-step method: out = Phi_h(x).
using OneStep = std::function<void(ConstState x, double h, MutState out, CostCounters& cost)>;

namespace detail {

inline void require_finite(ConstState x, const char* where)
{
    if (!all_finite(x)) throw Error(ErrorKind::NonFinite, std::string("non-finite value in ") + where);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Explicit Runge-Kutta

class ExplicitRk {
public:
    ExplicitRk(ButcherTableau tableau, std::size_t n)
        : tab_(std::move(tableau)), k_(tab_.stages() + 1, StateVector(n)), tmp_(n)
    {
        if (!tab_.is_explicit()) throw Error(ErrorKind::Config, tab_.name + " is not an explicit tableau");
    }

    const ButcherTableau& tableau() const noexcept { return tab_; }

    /// Stage derivatives of the last step; slot s holds f(x_new) when
    /// `evaluate_end` was requested.
    const std::vector<StateVector>& stages() const noexcept { return k_; }

    /// If `first_stage` is given it is used as k_0 = f(x) without evaluating.
    void step(const OdeSystem& sys, ConstState x, double h, MutState out, CostCounters& cost,
              const StateVector* first_stage = nullptr, bool evaluate_end = false)
    {
        const std::size_t s = tab_.stages();
        const std::size_t n = x.size();
        for (std::size_t i = 0; i < s; ++i) {
            if (i == 0 && first_stage != nullptr) {
                std::copy(first_stage->begin(), first_stage->end(), k_[0].begin());
                continue;
            }
            for (std::size_t d = 0; d < n; ++d) {
                double acc = 0.0;
                for (std::size_t j = 0; j < i; ++j) acc += tab_.a[i][j] * k_[j][d];
                tmp_[d] = x[d] + h * acc;
            }
            sys.rhs(tmp_, k_[i]);
            ++cost.rhs_evals;
        }
        for (std::size_t d = 0; d < n; ++d) {
            double acc = 0.0;
            for (std::size_t j = 0; j < s; ++j) acc += tab_.b[j] * k_[j][d];
            out[d] = x[d] + h * acc;
        }
        detail::require_finite(out, tab_.name.c_str());
        if (evaluate_end) {
            sys.rhs(out, k_[s]);
            ++cost.rhs_evals;
        }
    }

private:
    ButcherTableau tab_;
    std::vector<StateVector> k_;
    StateVector tmp_;
};

/// One explicit RK step (exactly s rhs evaluations).
inline StateVector rk_fixed_step(const ButcherTableau& tableau, const OdeSystem& sys, ConstState x, double h,
                                 CostCounters& cost)
{
    ExplicitRk rk(tableau, x.size());
    StateVector out(x.size());
    rk.step(sys, x, h, out, cost);
    return out;
}

inline StateVector rk_fixed_step(const ButcherTableau& tableau, const OdeSystem& sys, ConstState x, double h)
{
    CostCounters cost;
    return rk_fixed_step(tableau, sys, x, h, cost);
}

// ---------------------------------------------------------------------------
// Embedded pairs with error control

struct StepController {
    double atol = 1e-6;
    double rtol = 1e-3;
    double safety = 0.9;
    double min_factor = 0.2;
    double max_factor = 10.0;
    double h_min = 0.0;
    double h_max = std::numeric_limits<double>::infinity();
    /// Current proposed step; <= 0 selects an initial step automatically.
    double h = 0.0;
    int error_exponent_order = 4;
    /// A rejection happened since the last acceptance: growth is capped at 1.
    bool rejected_since_accept = false;
    /// Accepted step sizes, most recent last.
    std::vector<double> history;

    static StepController for_tableau(const ButcherTableau& t, double rtol, double atol)
    {
        StepController c;
        c.rtol = rtol;
        c.atol = atol;
        c.min_factor = t.min_factor;
        c.max_factor = t.max_factor;
        c.error_exponent_order = t.error_exponent_order;
        return c;
    }

    double clamp_step(double h_abs) const noexcept { return std::clamp(h_abs, h_min, h_max); }

    /// Updates the proposed step after an attempt of size h_abs and returns
    /// whether it is accepted.
    bool update(double h_abs, double error_norm)
    {
        const double exponent = -1.0 / (error_exponent_order + 1);
        if (error_norm < 1.0) {
            double factor = error_norm == 0.0 ? max_factor
                                              : std::min(max_factor, safety * std::pow(error_norm, exponent));
            if (rejected_since_accept) factor = std::min(1.0, factor);
            h = clamp_step(h_abs * factor);
            rejected_since_accept = false;
            history.push_back(h_abs);
            return true;
        }
        h = clamp_step(h_abs * std::max(min_factor, safety * std::pow(error_norm, exponent)));
        rejected_since_accept = true;
        return false;
    }
};

struct EmbeddedStepResult {
    StateVector candidate;
    double error_norm = 0.0;
    bool accepted = false;
    double h_next = 0.0;
};

class EmbeddedRk {
public:
    EmbeddedRk(ButcherTableau tableau, std::size_t n)
        : rk_(tableau, n), tab_(std::move(tableau)), err_(n), err_low_(n), f0_(n)
    {
        if (!tab_.embedded()) throw Error(ErrorKind::Config, tab_.name + " has no embedded weights");
    }

    const ButcherTableau& tableau() const noexcept { return tab_; }

    /// Attempts one step; error norm per the scaled-RMS rule (blended 5/3
    /// estimate for the 8(5,3) pair). `f0` is f(x) if known.
    double attempt(const OdeSystem& sys, ConstState x, double h, MutState out, const StateVector* f0,
                   const StepController& ctl, CostCounters& cost)
    {
        const bool needs_end = tab_.error_weights.size() > tab_.stages();
        rk_.step(sys, x, h, out, cost, f0, needs_end || tab_.fsal);
        const auto& k = rk_.stages();
        const std::size_t n = x.size();
        const std::size_t ne = tab_.error_weights.size();
        const bool blended = !tab_.error_weights_low.empty();
        double sum5 = 0.0, sum3 = 0.0;
        for (std::size_t d = 0; d < n; ++d) {
            const double scale = ctl.atol + ctl.rtol * std::max(std::abs(x[d]), std::abs(out[d]));
            double e = 0.0;
            for (std::size_t j = 0; j < ne; ++j) e += tab_.error_weights[j] * k[j][d];
            e /= scale;
            sum5 += e * e;
            if (blended) {
                double e3 = 0.0;
                for (std::size_t j = 0; j < tab_.error_weights_low.size(); ++j)
                    e3 += tab_.error_weights_low[j] * k[j][d];
                e3 /= scale;
                sum3 += e3 * e3;
            }
        }
        const double habs = std::abs(h);
        if (!blended) return habs * std::sqrt(sum5 / static_cast<double>(n));
        if (sum5 == 0.0 && sum3 == 0.0) return 0.0;
        return habs * sum5 / std::sqrt((sum5 + 0.01 * sum3) * static_cast<double>(n));
    }

    /// f(x_new) of the last attempt (valid when the tableau is FSAL).
    const StateVector& end_derivative() const { return rk_.stages()[tab_.stages()]; }

private:
    ExplicitRk rk_;
    ButcherTableau tab_;
    StateVector err_, err_low_, f0_;
};

inline EmbeddedStepResult rk_embedded_step(const ButcherTableau& tableau, const OdeSystem& sys, ConstState x,
                                           double h, StepController& controller, CostCounters& cost)
{
    EmbeddedRk rk(tableau, x.size());
    EmbeddedStepResult r;
    r.candidate.resize(x.size());
    r.error_norm = rk.attempt(sys, x, h, r.candidate, nullptr, controller, cost);
    r.accepted = controller.update(std::abs(h), r.error_norm);
    r.h_next = controller.h;
    if (r.accepted)
        ++cost.accepted_steps;
    else
        ++cost.rejected_steps;
    return r;
}

/// Standard starting-step heuristic (Hairer, Norsett & Wanner II.4).
inline double select_initial_step(const OdeSystem& sys, ConstState x0, ConstState f0, double interval, int order,
                                  double rtol, double atol, CostCounters& cost)
{
    const std::size_t n = x0.size();
    auto rms = [n](auto&& fn) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = fn(i);
            s += v * v;
        }
        return std::sqrt(s / static_cast<double>(n));
    };
    StateVector scale(n);
    for (std::size_t i = 0; i < n; ++i) scale[i] = atol + std::abs(x0[i]) * rtol;
    const double d0 = rms([&](std::size_t i) { return x0[i] / scale[i]; });
    const double d1 = rms([&](std::size_t i) { return f0[i] / scale[i]; });
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, interval);
    StateVector x1(n), f1(n);
    for (std::size_t i = 0; i < n; ++i) x1[i] = x0[i] + h0 * f0[i];
    sys.rhs(x1, f1);
    ++cost.rhs_evals;
    const double d2 = rms([&](std::size_t i) { return (f1[i] - f0[i]) / scale[i]; }) / h0;
    const double h1 = (d1 <= 1e-15 && d2 <= 1e-15) ? std::max(1e-6, h0 * 1e-3)
                                                    : std::pow(0.01 / std::max(d1, d2), 1.0 / (order + 1));
    return std::min({100.0 * h0, h1, interval});
}

// ---------------------------------------------------------------------------
// Gauss collocation

class GaussCollocation {
public:
    GaussCollocation(int stages, std::size_t n, double newton_tol = 1e-13, int max_iters = 50)
        : s_(static_cast<std::size_t>(stages)), n_(n), tol_(newton_tol), max_iters_(max_iters)
    {
        if (stages == 2) {
            const double r = std::sqrt(3.0) / 6.0;
            a_ = {{0.25, 0.25 - r}, {0.25 + r, 0.25}};
            b_ = {0.5, 0.5};
        } else if (stages == 3) {
            const double r = std::sqrt(15.0);
            a_ = {{5.0 / 36.0, 2.0 / 9.0 - r / 15.0, 5.0 / 36.0 - r / 30.0},
                  {5.0 / 36.0 + r / 24.0, 2.0 / 9.0, 5.0 / 36.0 - r / 24.0},
                  {5.0 / 36.0 + r / 30.0, 2.0 / 9.0 + r / 15.0, 5.0 / 36.0}};
            b_ = {5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0};
        } else {
            throw Error(ErrorKind::Config, "Gauss collocation supports 2 or 3 stages");
        }
        z_.assign(s_ * n_, 0.0);
        f_.assign(s_ * n_, 0.0);
    }

    int order() const noexcept { return static_cast<int>(2 * s_); }
    int last_iterations() const noexcept { return last_iters_; }

    void step(const OdeSystem& sys, ConstState x, double h, MutState out, CostCounters& cost)
    {
        const std::size_t sn = s_ * n_;
        std::fill(z_.begin(), z_.end(), 0.0);
        last_iters_ = 0;
        if (h == 0.0) {
            std::copy(x.begin(), x.end(), out.begin());
            return;
        }

        // Simplified Newton: Jacobian by forward differences at x, frozen.
        StateVector fx(n_), xp(x.begin(), x.end()), fp(n_);
        sys.rhs(x, fx);
        ++cost.rhs_evals;
        linalg::DenseMatrix jac(n_, n_);
        for (std::size_t j = 0; j < n_; ++j) {
            const double delta = std::sqrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, std::abs(x[j]));
            xp[j] = x[j] + delta;
            sys.rhs(xp, fp);
            ++cost.rhs_evals;
            xp[j] = x[j];
            for (std::size_t i = 0; i < n_; ++i) jac(i, j) = (fp[i] - fx[i]) / delta;
        }
        linalg::DenseMatrix newton(sn, sn);
        for (std::size_t bi = 0; bi < s_; ++bi)
            for (std::size_t bj = 0; bj < s_; ++bj)
                for (std::size_t i = 0; i < n_; ++i)
                    for (std::size_t j = 0; j < n_; ++j)
                        newton(bi * n_ + i, bj * n_ + j) = (bi == bj && i == j ? 1.0 : 0.0) - h * a_[bi][bj] * jac(i, j);
        const linalg::LuFactorization lu(newton);

        double xscale = 1.0;
        for (double v : x) xscale = std::max(xscale, std::abs(v));

        StateVector stage(n_), residual(sn), delta(sn);
        for (int iter = 0;; ++iter) {
            for (std::size_t i = 0; i < s_; ++i) {
                for (std::size_t d = 0; d < n_; ++d) stage[d] = x[d] + z_[i * n_ + d];
                sys.rhs(stage, std::span<double>(f_.data() + i * n_, n_));
                ++cost.rhs_evals;
            }
            double rmax = 0.0;
            for (std::size_t i = 0; i < s_; ++i)
                for (std::size_t d = 0; d < n_; ++d) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < s_; ++j) acc += a_[i][j] * f_[j * n_ + d];
                    const double r = z_[i * n_ + d] - h * acc;
                    residual[i * n_ + d] = -r;
                    rmax = std::max(rmax, std::abs(r));
                }
            if (!std::isfinite(rmax)) throw Error(ErrorKind::NonFinite, "Gauss collocation stage residual");
            if (rmax <= tol_ * xscale) {
                last_iters_ = iter;
                break;
            }
            if (iter >= max_iters_)
                throw Error(ErrorKind::NoConvergence, "Gauss collocation Newton iteration did not converge");
            lu.solve(residual, delta);
            for (std::size_t k = 0; k < sn; ++k) z_[k] += delta[k];
        }
        for (std::size_t d = 0; d < n_; ++d) {
            double acc = 0.0;
            for (std::size_t j = 0; j < s_; ++j) acc += b_[j] * f_[j * n_ + d];
            out[d] = x[d] + h * acc;
        }
    }

private:
    std::size_t s_, n_;
    double tol_;
    int max_iters_;
    int last_iters_ = 0;
    std::vector<std::vector<double>> a_;
    std::vector<double> b_;
    StateVector z_, f_;
};

inline StateVector gauss_collocation_step(int stages, const OdeSystem& sys, ConstState x, double h,
                                          double newton_tol, int max_iters, CostCounters& cost)
{
    GaussCollocation g(stages, x.size(), newton_tol, max_iters);
    StateVector out(x.size());
    g.step(sys, x, h, out, cost);
    return out;
}

inline StateVector gauss_collocation_step(int stages, const OdeSystem& sys, ConstState x, double h,
                                          double newton_tol = 1e-13, int max_iters = 50)
{
    CostCounters cost;
    return gauss_collocation_step(stages, sys, x, h, newton_tol, max_iters, cost);
}

// ---------------------------------------------------------------------------
// Splitting / composition

/// Suzuki's fractal composition: each level replaces a symmetric method of
/// order 2k by (p, p, 1-4p, p, p) with p = 1/(4 - 4^{1/(2k+1)}).
inline std::vector<double> suzuki_composition(int order)
{
    if (order < 2 || order % 2 != 0) throw Error(ErrorKind::Config, "composition order must be even and >= 2");
    std::vector<double> gamma{1.0};
    for (int k = 1; 2 * k < order; ++k) {
        const double p = 1.0 / (4.0 - std::pow(4.0, 1.0 / (2 * k + 1)));
        const double mid = 1.0 - 4.0 * p;
        std::vector<double> next;
        next.reserve(gamma.size() * 5);
        for (double w : {p, p, mid, p, p})
            for (double g : gamma) next.push_back(w * g);
        gamma = std::move(next);
    }
    return gamma;
}

/// Composition of Stormer-Verlet (kick-drift-kick) substeps with step
/// gamma_k h. Adjacent half kicks are merged.
inline void splitting_step(std::span<const double> composition, const OdeSystem& sys, ConstState x, double h,
                           MutState out, CostCounters& cost)
{
    if (!sys.split) throw Error(ErrorKind::MissingPartition, sys.name + " has no separable kinetic/potential split");
    const std::size_t half = x.size() / 2;
    std::copy(x.begin(), x.end(), out.begin());
    MutState q = out.subspan(0, half);
    MutState p = out.subspan(half, half);
    StateVector force(half), velocity(half);
    auto kick = [&](double tau) {
        sys.split->potential_gradient(q, force);
        ++cost.rhs_evals;
        for (std::size_t i = 0; i < half; ++i) p[i] -= tau * force[i];
    };
    auto drift = [&](double tau) {
        sys.split->kinetic_gradient(p, velocity);
        for (std::size_t i = 0; i < half; ++i) q[i] += tau * velocity[i];
    };
    double pending = 0.5 * composition.front() * h;
    for (std::size_t k = 0; k < composition.size(); ++k) {
        kick(pending);
        drift(composition[k] * h);
        pending = 0.5 * composition[k] * h + (k + 1 < composition.size() ? 0.5 * composition[k + 1] * h : 0.0);
    }
    kick(pending);
    detail::require_finite(out, "splitting step");
}

inline StateVector splitting_step(std::span<const double> composition, const OdeSystem& sys, ConstState x, double h)
{
    CostCounters cost;
    StateVector out(x.size());
    splitting_step(composition, sys, x, h, out, cost);
    return out;
}

// ---------------------------------------------------------------------------
// Step functions usable by the drivers

inline OneStep explicit_rk_stepper(const ButcherTableau& tableau, const OdeSystem& sys)
{
    auto rk = std::make_shared<ExplicitRk>(tableau, sys.dimension);
    return [rk, &sys](ConstState x, double h, MutState out, CostCounters& cost) { rk->step(sys, x, h, out, cost); };
}

inline OneStep gauss_stepper(int stages, const OdeSystem& sys, double newton_tol = 1e-13, int max_iters = 50)
{
    auto g = std::make_shared<GaussCollocation>(stages, sys.dimension, newton_tol, max_iters);
    return [g, &sys](ConstState x, double h, MutState out, CostCounters& cost) { g->step(sys, x, h, out, cost); };
}

inline OneStep splitting_stepper(std::vector<double> composition, const OdeSystem& sys)
{
    if (!sys.split) throw Error(ErrorKind::MissingPartition, sys.name + " has no separable kinetic/potential split");
    return [gamma = std::move(composition), &sys](ConstState x, double h, MutState out, CostCounters& cost) {
        splitting_step(gamma, sys, x, h, out, cost);
    };
}

// ---------------------------------------------------------------------------
// Solve driver

struct TimeSpan {
    double t0 = 0.0;
    double t1 = 0.0;
};

struct FixedStepMethod {
    std::string name;
    OneStep step;
    double h = 0.0;
};

struct AdaptiveMethod {
    ButcherTableau tableau;
    StepController controller;
};

using Method = std::variant<FixedStepMethod, AdaptiveMethod>;

/// Handed to the post-step hook after every ACCEPTED step. The hook may
/// overwrite `state`; the result becomes the start of the next step.
struct StepContext {
    const OdeSystem& system;
    ConstState previous;
    MutState state;
    double t = 0.0;
    double h = 0.0;
    /// Number of accepted steps before this one.
    std::size_t step_index = 0;
    /// Invariant values at the initial state.
    ConstState anchor;
    CostCounters& cost;
};

using PostStepHook = std::function<void(StepContext&)>;

struct SolveOptions {
    /// Store every n-th accepted state (the final one is always stored).
    std::size_t output_stride = 1;
    std::uint64_t max_steps = 100'000'000;
};

namespace detail {

class TrajectoryRecorder {
public:
    TrajectoryRecorder(const OdeSystem& sys, ConstState x0, double t0, std::size_t stride, Trajectory& out)
        : sys_(sys), stride_(std::max<std::size_t>(stride, 1)), out_(out), anchor_(sys.invariant_values(x0))
    {
        out_.invariant_traces.assign(sys.invariants.size(), {});
        out_.max_abs_drift.assign(sys.invariants.size(), 0.0);
        store(t0, x0, std::vector<double>(sys.invariants.size(), 0.0));
    }

    const StateVector& anchor() const noexcept { return anchor_; }

    void accepted(double t, ConstState x, double h, std::uint64_t count, bool final)
    {
        out_.step_sizes.push_back(h);
        std::vector<double> drift(sys_.invariants.size());
        for (std::size_t i = 0; i < drift.size(); ++i) {
            drift[i] = sys_.invariants[i].value(x) - anchor_[i];
            out_.max_abs_drift[i] = std::max(out_.max_abs_drift[i], std::abs(drift[i]));
        }
        if (final || count % stride_ == 0) store(t, x, drift);
    }

    /// Ensure the last accepted state is stored (used on failure paths).
    void flush(double t, ConstState x)
    {
        if (!out_.times.empty() && out_.times.back() == t) return;
        std::vector<double> drift(sys_.invariants.size());
        for (std::size_t i = 0; i < drift.size(); ++i) drift[i] = sys_.invariants[i].value(x) - anchor_[i];
        store(t, x, drift);
    }

private:
    void store(double t, ConstState x, const std::vector<double>& drift)
    {
        out_.times.push_back(t);
        out_.states.emplace_back(x.begin(), x.end());
        for (std::size_t i = 0; i < drift.size(); ++i) out_.invariant_traces[i].push_back(drift[i]);
    }

    const OdeSystem& sys_;
    std::size_t stride_;
    Trajectory& out_;
    StateVector anchor_;
};

inline bool same_bits(ConstState a, ConstState b) noexcept
{
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

} // namespace detail

/// Drives a fixed-step or adaptive method over t_span, applying `hook` to
/// every accepted step only. Failures are recorded on the trajectory
/// (failed/failure) together with the partial solution.
inline Trajectory solve(const OdeSystem& sys, ConstState x0, TimeSpan span, Method method,
                        const PostStepHook& hook = {}, SolveOptions options = {})
{
    if (!(span.t1 > span.t0)) throw Error(ErrorKind::Config, "t_span must satisfy t1 > t0");
    Trajectory traj;
    detail::TrajectoryRecorder rec(sys, x0, span.t0, options.output_stride, traj);
    const std::size_t n = x0.size();
    StateVector x(x0.begin(), x0.end()), next(n), raw(n);
    double t = span.t0;

    auto run_hook = [&](double t_new, double h, std::size_t index) {
        if (!hook) return;
        StepContext ctx{sys, x, next, t_new, h, index, rec.anchor(), traj.cost};
        hook(ctx);
        detail::require_finite(next, "post-step hook output");
    };

    try {
        if (auto* fixed = std::get_if<FixedStepMethod>(&method)) {
            if (!(fixed->h > 0.0)) throw Error(ErrorKind::Config, "fixed step size must be positive");
            const double steps_real = (span.t1 - span.t0) / fixed->h;
            const auto steps = static_cast<std::uint64_t>(std::ceil(steps_real - 1e-9));
            for (std::uint64_t k = 0; k < steps; ++k) {
                if (k >= options.max_steps) throw Error(ErrorKind::StepUnderflow, "step budget exhausted");
                const double t_new = (k + 1 == steps) ? span.t1 : span.t0 + static_cast<double>(k + 1) * fixed->h;
                const double h = t_new - t;
                fixed->step(x, h, next, traj.cost);
                ++traj.cost.accepted_steps;
                run_hook(t_new, h, static_cast<std::size_t>(k));
                std::swap(x, next);
                t = t_new;
                rec.accepted(t, x, h, k + 1, k + 1 == steps);
            }
        } else {
            auto& adaptive = std::get<AdaptiveMethod>(method);
            StepController& ctl = adaptive.controller;
            EmbeddedRk rk(adaptive.tableau, n);
            const bool fsal = adaptive.tableau.fsal;
            StateVector f(n);
            sys.rhs(x, f);
            ++traj.cost.rhs_evals;
            if (ctl.h <= 0.0)
                ctl.h = ctl.clamp_step(select_initial_step(sys, x, f, span.t1 - span.t0, adaptive.tableau.order,
                                                           ctl.rtol, ctl.atol, traj.cost));
            std::uint64_t accepted = 0;
            while (t < span.t1) {
                if (accepted + traj.cost.rejected_steps >= options.max_steps)
                    throw Error(ErrorKind::StepUnderflow, "step budget exhausted");
                const double h_floor =
                    std::max(ctl.h_min, 10.0 * std::abs(std::nextafter(t, span.t1) - t));
                double h_abs = ctl.h;
                if (h_abs < h_floor) throw Error(ErrorKind::StepUnderflow, "step size fell below h_min");
                double t_new = t + h_abs;
                if (t_new >= span.t1) t_new = span.t1;
                const double h = t_new - t;
                const double norm = rk.attempt(sys, x, h, next, &f, ctl, traj.cost);
                if (!ctl.update(std::abs(h), norm)) {
                    ++traj.cost.rejected_steps;
                    continue;
                }
                ++traj.cost.accepted_steps;
                if (hook) {
                    std::copy(next.begin(), next.end(), raw.begin());
                    run_hook(t_new, h, static_cast<std::size_t>(accepted));
                }
                ++accepted;
                std::swap(x, next);
                t = t_new;
                if (fsal && (!hook || detail::same_bits(raw, x))) {
                    f = rk.end_derivative();
                } else {
                    sys.rhs(x, f);
                    ++traj.cost.rhs_evals;
                }
                rec.accepted(t, x, h, accepted, t >= span.t1);
            }
        }
    } catch (const Error& e) {
        traj.failed = true;
        traj.failure = e.what();
        rec.flush(t, x);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Reversible step-density adaptivity

/// rho_{n+1/2} = rho_n + eps/2 G(x_n); x_{n+1} = Phi_{eps/rho_{n+1/2}}(x_n);
/// rho_{n+1} = rho_{n+1/2} + eps/2 G(x_{n+1}). Negating eps retraces the
/// trajectory when Phi is symmetric.
struct ReparamState {
    double rho = 1.0;
    double eps = 0.0;
    ScalarMap control;

    /// Advances x by one pseudo-step and returns the physical step taken.
    double advance(const OneStep& base, ConstState x, MutState out, CostCounters& cost)
    {
        const double rho_half = rho + 0.5 * eps * control(x);
        if (!(rho_half > 0.0)) throw Error(ErrorKind::DensityUnderflow, "step density became non-positive");
        const double h = eps / rho_half;
        base(x, h, out, cost);
        rho = rho_half + 0.5 * eps * control(out);
        if (!(rho > 0.0)) throw Error(ErrorKind::DensityUnderflow, "step density became non-positive");
        return h;
    }
};

/// Control function G = d(ln sigma)/dt along f, from a centered difference
/// of 1/sigma in the direction of f; keeps rho proportional to sigma.
inline ScalarMap density_control(const OdeSystem& sys, ScalarMap sigma)
{
    return [&sys, sigma = std::move(sigma)](ConstState x) {
        const std::size_t n = x.size();
        StateVector f(n);
        sys.rhs(x, f);
        const double fnorm = norm2(f);
        if (fnorm == 0.0) return 0.0;
        const double delta = 1e-5 * (1.0 + norm2(x)) / fnorm;
        StateVector xp(n), xm(n);
        for (std::size_t i = 0; i < n; ++i) {
            xp[i] = x[i] + delta * f[i];
            xm[i] = x[i] - delta * f[i];
        }
        const double d_inv = (1.0 / sigma(xp) - 1.0 / sigma(xm)) / (2.0 * delta);
        return -sigma(x) * d_inv;
    };
}

/// sigma(x) = |f(x)|^{1/2}
inline ScalarMap speed_density(const OdeSystem& sys)
{
    return [&sys](ConstState x) {
        StateVector f(x.size());
        sys.rhs(x, f);
        return std::sqrt(norm2(f));
    };
}

struct ReversibleOptions {
    /// Initial density; <= 0 means 1.
    double rho0 = 0.0;
    std::size_t output_stride = 1;
    std::uint64_t max_steps = 100'000'000;
};

/// Fixed pseudo-step eps in tau; stops at the first step reaching t_end
/// (the last step is not shortened, which would break reversibility).
/// A negative eps integrates backwards towards a negative t_end.
inline Trajectory reversible_adaptive_solve(const OdeSystem& sys, ConstState x0, double eps, ScalarMap control,
                                            double t_end, const OneStep& base, ReversibleOptions options = {},
                                            const PostStepHook& hook = {})
{
    Trajectory traj;
    detail::TrajectoryRecorder rec(sys, x0, 0.0, options.output_stride, traj);
    ReparamState state{options.rho0 > 0.0 ? options.rho0 : 1.0, eps, std::move(control)};
    StateVector x(x0.begin(), x0.end()), next(x0.size());
    double t = 0.0;
    std::uint64_t count = 0;
    try {
        auto before_end = [&] { return eps > 0.0 ? t < t_end : t > t_end; };
        if (eps == 0.0) throw Error(ErrorKind::Config, "pseudo-step eps must be nonzero");
        while (before_end()) {
            if (count >= options.max_steps) throw Error(ErrorKind::StepUnderflow, "step budget exhausted");
            const double h = state.advance(base, x, next, traj.cost);
            ++traj.cost.accepted_steps;
            if (hook) {
                StepContext ctx{sys, x, next, t + h, h, static_cast<std::size_t>(count), rec.anchor(), traj.cost};
                hook(ctx);
            }
            std::swap(x, next);
            t += h;
            ++count;
            rec.accepted(t, x, h, count, !before_end());
        }
    } catch (const Error& e) {
        traj.failed = true;
        traj.failure = e.what();
        rec.flush(t, x);
    }
    return traj;
}

} // namespace homproj
