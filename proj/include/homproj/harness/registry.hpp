#pragma once

#include <homproj/homproj.hpp>

#include <json.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace homproj::harness {

using Json = nlohmann::json;

/// Config error with the offending JSON path.
inline Error config_error(const std::string& path, const std::string& what)
{
    return Error(ErrorKind::Config, path + ": " + what);
}

template <class T>
T get_or(const Json& j, const char* key, T fallback)
{
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

template <class T>
T require(const Json& j, const std::string& path, const char* key)
{
    if (!j.is_object() || !j.contains(key)) throw config_error(path + "." + key, "missing required field");
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw config_error(path + "." + key, e.what());
    }
}

/// Exact solution at time t (when one is known).
using ExactSolution = std::function<StateVector(double t)>;

struct Problem {
    std::string id;
    /// Owned so that captured references stay valid across copies.
    std::shared_ptr<OdeSystem> system;
    StateVector initial;
    std::map<std::string, SymmetryAction> actions;
    std::optional<ExactSolution> exact;
    /// Density used by the reversible adaptive baseline.
    ScalarMap density;
};

inline const std::vector<std::string>& problem_ids()
{
    static const std::vector<std::string> ids{"kepler", "double_pendulum", "nonlinear_oscillator", "kdv",
                                              "camassa_holm"};
    return ids;
}

inline StateVector state_from(const Json& j, const std::string& path, std::size_t n)
{
    auto v = j.get<StateVector>();
    if (v.size() != n) throw config_error(path, "expected " + std::to_string(n) + " entries");
    return v;
}

/// Wave moving to the right at speed c on a periodic domain, sampled at the
/// grid points of `pde`.
inline ExactSolution travelling_wave(const problems::SemidiscretePde& pde, double c, double x0,
                                     std::function<double(double)> profile)
{
    const StateVector grid = pde.grid();
    const double length = pde.length;
    return [grid, length, c, x0, profile = std::move(profile)](double t) {
        StateVector u(grid.size());
        const double centre = x0 + c * t;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            double d = std::remainder(grid[i] - centre, length);
            u[i] = profile(d);
        }
        return u;
    };
}

inline Problem build_problem(const Json& cfg, const std::string& path = "problem")
{
    Problem p;
    p.id = require<std::string>(cfg, path, "id");
    if (p.id == "kepler") {
        const double e = get_or(cfg, "e", 0.6);
        p.system = std::make_shared<OdeSystem>(problems::kepler());
        p.initial = problems::kepler_initial(e);
        p.actions.emplace("psi_H", problems::kepler_energy_action());
        const Json l = cfg.value("psi_L", Json::object());
        p.actions.emplace("psi_L", problems::kepler_angular_action(get_or(l, "a", 1.0), get_or(l, "b", 0.0)));
        p.exact = [e](double t) { return problems::kepler_exact(e, t); };
    } else if (p.id == "double_pendulum") {
        const std::string pot = get_or<std::string>(cfg, "potential", "torsion");
        problems::Potential v;
        if (pot == "torsion")
            v = problems::Potential::Torsion;
        else if (pot == "gravity")
            v = problems::Potential::Gravity;
        else
            throw config_error(path + ".potential", "unknown potential '" + pot + "'");
        p.system = std::make_shared<OdeSystem>(problems::double_pendulum(v));
        p.initial = cfg.contains("x0") ? state_from(cfg.at("x0"), path + ".x0", 4)
                                       : StateVector{0.5, -0.3, 0.4, 0.2};
        p.actions.emplace("conjugate", problems::dp_conjugate_action(v));
    } else if (p.id == "nonlinear_oscillator") {
        p.system = std::make_shared<OdeSystem>(problems::nonlinear_oscillator());
        p.initial = cfg.contains("x0") ? state_from(cfg.at("x0"), path + ".x0", 4)
                                       : StateVector{0.42, -0.49, -0.96, -1.76};
    } else if (p.id == "kdv") {
        const auto n = get_or<std::size_t>(cfg, "N", 64);
        const double length = get_or(cfg, "L", 40.0);
        const double c = get_or(cfg, "c", 2.0);
        const double x0 = get_or(cfg, "x0", 20.0);
        auto pde = problems::kdv_build(n, length);
        p.initial = problems::soliton_ic(c, x0, pde);
        p.exact = travelling_wave(pde, c, x0, [c](double d) {
            const double s = 1.0 / std::cosh(0.5 * std::sqrt(c) * d);
            return 0.5 * c * s * s;
        });
        p.actions.emplace("scale", problems::kdv_scaling_action());
        p.system = std::make_shared<OdeSystem>(std::move(pde.system));
    } else if (p.id == "camassa_holm") {
        const auto n = get_or<std::size_t>(cfg, "N", 128);
        const double length = get_or(cfg, "L", 80.0);
        const double c = get_or(cfg, "c", 2.0);
        const double x0 = get_or(cfg, "x0", 40.0);
        auto pde = problems::ch_build(n, length);
        p.initial = problems::peakon_ic(c, x0, pde);
        p.exact = travelling_wave(pde, c, x0, [c](double d) { return c * std::exp(-std::abs(d)); });
        p.actions.emplace("scale", problems::ch_scaling_action());
        p.system = std::make_shared<OdeSystem>(std::move(pde.system));
    } else {
        throw config_error(path + ".id", "unknown problem '" + p.id + "'");
    }
    p.density = speed_density(*p.system);
    return p;
}

// ---------------------------------------------------------------------------
// Methods

inline const std::vector<std::string>& base_method_ids()
{
    static const std::vector<std::string> ids{"euler", "midpoint", "heun",   "kutta3",  "rk4",
                                              "rk45",  "dop853",   "gauss4", "gauss6",  "verlet",
                                              "suzuki4", "suzuki6", "suzuki8", "adaptive_suzuki8"};
    return ids;
}

inline const std::vector<std::string>& projection_kinds()
{
    static const std::vector<std::string> ids{"none",   "linear",      "conjugate",  "pseudo",
                                              "newton", "simultaneous", "alternating"};
    return ids;
}

inline bool is_adaptive(const std::string& base) { return base == "rk45" || base == "dop853"; }

inline std::optional<ButcherTableau> explicit_tableau(const std::string& base)
{
    if (base == "euler") return tableaus::forward_euler();
    if (base == "midpoint") return tableaus::explicit_midpoint();
    if (base == "heun") return tableaus::heun();
    if (base == "kutta3") return tableaus::kutta3();
    if (base == "rk4") return tableaus::rk4();
    if (base == "rk45") return tableaus::dopri5();
    if (base == "dop853") return tableaus::dop853();
    return std::nullopt;
}

inline std::optional<int> suzuki_order(const std::string& base)
{
    if (base == "verlet") return 2;
    if (base == "suzuki4") return 4;
    if (base == "suzuki6") return 6;
    if (base == "suzuki8" || base == "adaptive_suzuki8") return 8;
    return std::nullopt;
}

/// One-step map for a fixed-step base method.
inline OneStep fixed_stepper(const std::string& base, const OdeSystem& sys, const std::string& path)
{
    if (auto t = explicit_tableau(base); t && !t->embedded()) return explicit_rk_stepper(*t, sys);
    if (base == "gauss4") return gauss_stepper(2, sys);
    if (base == "gauss6") return gauss_stepper(3, sys);
    if (auto order = suzuki_order(base)) return splitting_stepper(suzuki_composition(*order), sys);
    throw config_error(path, "'" + base + "' is not a fixed-step method");
}

inline TargetPolicy target_policy(const Json& spec, const std::string& path)
{
    const std::string t = get_or<std::string>(spec, "target", "anchor");
    if (t == "anchor") return TargetPolicy::Anchor;
    if (t == "previous") return TargetPolicy::Previous;
    throw config_error(path + ".target", "expected 'anchor' or 'previous'");
}

inline std::vector<std::size_t> invariant_indices(const OdeSystem& sys, const Json& spec, const std::string& path)
{
    std::vector<std::size_t> out;
    if (!spec.contains("invariants")) {
        for (std::size_t i = 0; i < sys.invariants.size(); ++i) out.push_back(i);
        return out;
    }
    for (const auto& label : spec.at("invariants")) {
        try {
            out.push_back(sys.invariant_index(label.get<std::string>()));
        } catch (const Error& e) {
            throw config_error(path + ".invariants", e.what());
        }
    }
    return out;
}

inline const SymmetryAction& find_action(const Problem& p, const std::string& name, const std::string& path)
{
    const auto it = p.actions.find(name);
    if (it == p.actions.end()) throw config_error(path, "problem '" + p.id + "' has no action '" + name + "'");
    return it->second;
}

inline PseudoGeneratorSpec pseudo_spec(const Json& spec)
{
    PseudoGeneratorSpec s;
    s.inner_order = get_or(spec, "q", 2);
    s.iterations = get_or(spec, "r", 1);
    return s;
}

/// Builds the post-step hook described by a projection spec.
inline PostStepHook build_projection(const Problem& p, const Json& spec, const std::string& path)
{
    if (spec.is_null()) return {};
    const std::string kind = spec.is_string() ? spec.get<std::string>() : require<std::string>(spec, path, "kind");
    if (kind == "none") return {};
    const Json body = spec.is_object() ? spec : Json::object();
    const OdeSystem& sys = *p.system;
    const TargetPolicy policy = target_policy(body, path);
    auto single_invariant = [&]() {
        const std::string label = require<std::string>(body, path, "invariant");
        try {
            return sys.invariant_index(label);
        } catch (const Error& e) {
            throw config_error(path + ".invariant", e.what());
        }
    };

    if (kind == "linear")
        return homogeneous_hook(find_action(p, require<std::string>(body, path, "action"), path + ".action"),
                                single_invariant(), policy);
    if (kind == "conjugate") {
        const Json fb = body.value("fallback", Json::object());
        return conjugate_hook(find_action(p, get_or<std::string>(body, "action", "conjugate"), path + ".action"),
                              single_invariant(), policy, pseudo_spec(fb));
    }
    if (kind == "pseudo") return pseudo_hook(invariant_indices(sys, body, path), pseudo_spec(body), policy);
    if (kind == "newton")
        return newton_hook(invariant_indices(sys, body, path), get_or(body, "tol", 1e-13),
                           get_or(body, "max_iters", 20), policy);
    if (kind == "simultaneous") {
        const auto idx = invariant_indices(sys, body, path);
        std::vector<SymmetryAction> actions;
        for (const auto& name : require<std::vector<std::string>>(body, path, "actions"))
            actions.push_back(find_action(p, name, path + ".actions"));
        return simultaneous_hook(DegreeSystem::from_actions(std::move(actions), idx), idx, policy);
    }
    if (kind == "alternating") {
        std::vector<PostStepHook> schemes;
        const Json list = require<Json>(body, path, "schemes");
        for (std::size_t i = 0; i < list.size(); ++i)
            schemes.push_back(build_projection(p, list[i], path + ".schemes[" + std::to_string(i) + "]"));
        return alternating_hook(std::move(schemes));
    }
    throw config_error(path + ".kind", "unknown projection '" + kind + "'");
}

/// Step settings: exactly one of h (fixed), rtol/atol (adaptive) or eps
/// (reversible adaptive).
struct StepSetting {
    std::optional<double> h;
    std::optional<double> rtol;
    std::optional<double> atol;
    std::optional<double> eps;
};

inline StepSetting parse_step(const Json& j, const std::string& path)
{
    StepSetting s;
    if (j.contains("h")) s.h = j.at("h").get<double>();
    if (j.contains("rtol") || j.contains("tol")) {
        s.rtol = j.contains("rtol") ? j.at("rtol").get<double>() : j.at("tol").get<double>();
        s.atol = j.contains("atol") ? j.at("atol").get<double>() : *s.rtol;
    }
    if (j.contains("eps")) s.eps = j.at("eps").get<double>();
    if (!s.h && !s.rtol && !s.eps) throw config_error(path, "one of h, rtol/tol or eps is required");
    return s;
}

struct RunOptions {
    std::size_t output_stride = 1;
    std::uint64_t max_steps = 50'000'000;
};

/// Integrates `p` from x0 over [t0, t1] with the method described by
/// `method` (base + projection) and `step`.
inline Trajectory integrate(const Problem& p, ConstState x0, TimeSpan span, const Json& method,
                            const StepSetting& step, const RunOptions& opt, const std::string& path = "method")
{
    const OdeSystem& sys = *p.system;
    const std::string base = require<std::string>(method, path, "base");
    const PostStepHook hook = build_projection(p, method.value("projection", Json()), path + ".projection");
    SolveOptions so{opt.output_stride, opt.max_steps};

    if (base == "adaptive_suzuki8") {
        if (!step.eps) throw config_error(path, "adaptive_suzuki8 needs eps");
        ReversibleOptions ro;
        ro.rho0 = p.density(x0);
        ro.output_stride = opt.output_stride;
        ro.max_steps = opt.max_steps;
        Trajectory t = reversible_adaptive_solve(sys, x0, *step.eps, density_control(sys, p.density),
                                                 span.t1 - span.t0, fixed_stepper("suzuki8", sys, path), ro, hook);
        for (double& v : t.times) v += span.t0;
        return t;
    }
    if (is_adaptive(base)) {
        if (!step.rtol) throw config_error(path, base + " needs rtol/atol");
        const ButcherTableau tab = *explicit_tableau(base);
        return solve(sys, x0, span, AdaptiveMethod{tab, StepController::for_tableau(tab, *step.rtol, *step.atol)},
                     hook, so);
    }
    if (!step.h) throw config_error(path, base + " needs a step size h");
    return solve(sys, x0, span, FixedStepMethod{base, fixed_stepper(base, sys, path), *step.h}, hook, so);
}

/// Reference states at the given times: the exact solution when known and
/// x0 is the problem's own initial state, otherwise DOP853 at rtol = atol = 1e-13 restarted between output times.
inline std::vector<StateVector> reference_states(const Problem& p, ConstState x0, double t0,
                                                 const std::vector<double>& times, double tol = 1e-13)
{
    std::vector<StateVector> out;
    out.reserve(times.size());
    if (p.exact && std::equal(x0.begin(), x0.end(), p.initial.begin(), p.initial.end())) {
        for (double t : times) out.push_back((*p.exact)(t));
        return out;
    }
    StateVector x(x0.begin(), x0.end());
    double t = t0;
    const ButcherTableau tab = tableaus::dop853();
    double h_guess = 0.0;
    for (double target : times) {
        if (target > t) {
            StepController ctl = StepController::for_tableau(tab, tol, tol);
            ctl.h = h_guess;
            Trajectory seg = solve(*p.system, x, {t, target}, AdaptiveMethod{tab, ctl}, {}, {1u << 30});
            if (seg.failed) throw Error(ErrorKind::NoConvergence, "reference solve failed: " + seg.failure);
            x = seg.final_state();
            if (!seg.step_sizes.empty()) h_guess = seg.step_sizes.back();
            t = target;
        }
        out.push_back(x);
    }
    return out;
}

} // namespace homproj::harness
