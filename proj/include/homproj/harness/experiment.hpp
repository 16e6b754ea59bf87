#pragma once

#include <homproj/harness/registry.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace homproj::harness {

inline constexpr int kSchemaVersion = 1;

inline std::string format_real(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct ExperimentConfig {
    std::string name = "run";
    Json problem;
    Json method;
    StepSetting step;
    TimeSpan span;
    std::size_t output_stride = 1;
    std::uint64_t seed = 0;
    /// Number of perturbed initial conditions (0: run the nominal one only).
    std::size_t ensemble = 0;
    double perturbation = 0.1;
    /// Components that receive the perturbation (empty: all).
    std::vector<std::size_t> perturbed;
    bool reference = true;
    Json raw;

    static ExperimentConfig from_json(const Json& j)
    {
        ExperimentConfig c;
        c.raw = j;
        c.name = get_or<std::string>(j, "name", "run");
        c.problem = require<Json>(j, "config", "problem");
        c.method = require<Json>(j, "config", "method");
        c.step = parse_step(require<Json>(j, "config", "step"), "config.step");
        const auto span = require<std::vector<double>>(j, "config", "t_span");
        if (span.size() != 2 || !(span[1] > span[0])) throw config_error("config.t_span", "expected [t0, t1] with t1 > t0");
        c.span = {span[0], span[1]};
        c.output_stride = get_or<std::size_t>(j, "output_stride", 1);
        c.seed = get_or<std::uint64_t>(j, "seed", 0);
        if (j.contains("ensemble")) {
            const Json& e = j.at("ensemble");
            c.ensemble = require<std::size_t>(e, "config.ensemble", "count");
            c.perturbation = get_or(e, "amplitude", 0.1);
            c.perturbed = get_or(e, "components", std::vector<std::size_t>{});
        }
        c.reference = get_or(j, "reference", true);
        return c;
    }
};

inline ExperimentConfig load_config(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) throw config_error(file.string(), "cannot open config file");
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw config_error(file.string(), e.what());
    }
    return ExperimentConfig::from_json(j);
}

/// Initial conditions: nominal, or `count` draws x0 + U(-a, a) on the
/// selected components.
inline std::vector<StateVector> initial_conditions(const Problem& p, const ExperimentConfig& cfg)
{
    if (cfg.ensemble == 0) return {p.initial};
    std::vector<std::size_t> idx = cfg.perturbed;
    if (idx.empty())
        for (std::size_t i = 0; i < p.initial.size(); ++i) idx.push_back(i);
    for (std::size_t i : idx)
        if (i >= p.initial.size()) throw config_error("config.ensemble.components", "index out of range");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> dist(-cfg.perturbation, cfg.perturbation);
    std::vector<StateVector> out;
    for (std::size_t k = 0; k < cfg.ensemble; ++k) {
        StateVector x = p.initial;
        for (std::size_t i : idx) x[i] += dist(rng);
        out.push_back(std::move(x));
    }
    return out;
}

struct ErrorSummary {
    double mae = std::numeric_limits<double>::quiet_NaN();
    double final_error = std::numeric_limits<double>::quiet_NaN();
};

/// Mean absolute error over output times and components, plus the max-norm
/// error of the final state.
inline ErrorSummary compare_to_reference(const Trajectory& t, const std::vector<StateVector>& ref)
{
    ErrorSummary s;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < t.states.size(); ++j)
        for (std::size_t d = 0; d < t.states[j].size(); ++d) {
            sum += std::abs(t.states[j][d] - ref[j][d]);
            ++count;
        }
    s.mae = count ? sum / static_cast<double>(count) : 0.0;
    double fin = 0.0;
    for (std::size_t d = 0; d < t.final_state().size(); ++d)
        fin = std::max(fin, std::abs(t.final_state()[d] - ref.back()[d]));
    s.final_error = fin;
    return s;
}

inline Json cost_json(const CostCounters& c)
{
    return {{"rhs_evals", c.rhs_evals},
            {"gradient_evals", c.gradient_evals},
            {"projection_evals", c.projection_evals},
            {"accepted_steps", c.accepted_steps},
            {"rejected_steps", c.rejected_steps},
            {"projections_skipped", c.projections_skipped},
            {"projections_unconverged", c.projections_unconverged},
            {"projection_fallbacks", c.projection_fallbacks}};
}

inline void write_trajectory_csv(std::ostream& out, const OdeSystem& sys, const Trajectory& t)
{
    out << "t";
    for (std::size_t d = 0; d < sys.dimension; ++d) out << ",x" << d;
    for (const auto& inv : sys.invariants) out << ",d" << inv.label;
    out << "\n";
    for (std::size_t j = 0; j < t.times.size(); ++j) {
        out << format_real(t.times[j]);
        for (double v : t.states[j]) out << "," << format_real(v);
        for (const auto& trace : t.invariant_traces) out << "," << format_real(trace[j]);
        out << "\n";
    }
}

/// Runs one experiment; writes <name>.trajectory.csv (or one per ensemble
/// member) and <name>.record.json into `out_dir` when it is non-empty.
inline Json run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {})
{
    const Problem p = build_problem(cfg.problem);
    const OdeSystem& sys = *p.system;
    const auto ics = initial_conditions(p, cfg);
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    Json members = Json::array();
    std::vector<double> errs, drifts;
    for (std::size_t k = 0; k < ics.size(); ++k) {
        const auto start = std::chrono::steady_clock::now();
        Trajectory t = integrate(p, ics[k], cfg.span, cfg.method, cfg.step, {cfg.output_stride});
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        Json m;
        m["status"] = t.failed ? "failed" : "ok";
        m["failure"] = t.failure;
        m["initial_state"] = ics[k];
        m["final_time"] = t.final_time();
        m["final_state"] = t.final_state();
        Json invs = Json::array();
        const StateVector h0 = sys.invariant_values(ics[k]);
        for (std::size_t i = 0; i < sys.invariants.size(); ++i) {
            const double fin = t.invariant_traces[i].back();
            invs.push_back({{"label", sys.invariants[i].label},
                            {"initial", h0[i]},
                            {"max_abs_drift", t.max_abs_drift[i]},
                            {"final_drift", fin},
                            {"max_rel_drift", t.max_abs_drift[i] / std::max(std::abs(h0[i]), 1e-300)}});
        }
        m["invariants"] = invs;
        m["cost"] = cost_json(t.cost);
        m["wall_time_s"] = wall;
        if (cfg.reference) {
            const auto ref = reference_states(p, ics[k], cfg.span.t0, t.times);
            const ErrorSummary e = compare_to_reference(t, ref);
            m["mae"] = e.mae;
            m["final_error"] = e.final_error;
            errs.push_back(e.final_error);
        }
        drifts.push_back(t.max_abs_drift.empty() ? 0.0 : t.max_abs_drift[0]);
        members.push_back(m);

        if (!out_dir.empty()) {
            const std::string suffix = ics.size() > 1 ? "." + std::to_string(k) : "";
            std::ofstream csv(out_dir / (cfg.name + suffix + ".trajectory.csv"));
            write_trajectory_csv(csv, sys, t);
        }
    }

    auto stats = [](const std::vector<double>& v) {
        if (v.empty()) return Json();
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
        return Json{{"mean", mean}, {"std", std::sqrt(var)}, {"count", v.size()}};
    };

    Json record;
    record["schema_version"] = kSchemaVersion;
    record["name"] = cfg.name;
    record["config"] = cfg.raw;
    record["runs"] = members;
    record["summary"] = {{"final_error", stats(errs)}, {"max_abs_drift_first_invariant", stats(drifts)}};
    if (!out_dir.empty()) {
        std::ofstream js(out_dir / (cfg.name + ".record.json"));
        js << record.dump(2) << "\n";
    }
    return record;
}

// ---------------------------------------------------------------------------
// Cost-error sweeps

struct SweepEntry {
    std::string label;
    Json method;
    /// "h", "rtol" or "eps"
    std::string parameter;
    double value = 0.0;
};

struct SweepRow {
    SweepEntry entry;
    std::string status;
    double mae = 0.0;
    double final_error = 0.0;
    std::vector<double> max_drift;
    CostCounters cost;
    double wall_time = 0.0;
};

inline std::vector<SweepEntry> expand_sweep(const Json& j)
{
    std::vector<SweepEntry> out;
    const Json methods = j.value("methods", Json::array());
    for (std::size_t m = 0; m < methods.size(); ++m) {
        const std::string path = "config.methods[" + std::to_string(m) + "]";
        const Json& spec = methods[m];
        const Json grid = require<Json>(spec, path, "grid");
        std::string param;
        for (const char* key : {"h", "rtol", "eps"})
            if (grid.contains(key)) param = key;
        if (param.empty()) throw config_error(path + ".grid", "expected one of h, rtol, eps");
        const auto values = grid.at(param).get<std::vector<double>>();
        if (values.size() < 2) throw config_error(path + ".grid", "need at least two grid points");
        for (double v : values)
            out.push_back({get_or<std::string>(spec, "label", require<Json>(spec, path, "method").value("base", "")),
                           spec.at("method"), param, v});
    }
    return out;
}

/// Runs every (method, setting) pair on a worker pool; rows come back in
/// config order regardless of completion order.
inline std::vector<SweepRow> cost_error_sweep(const Json& j, unsigned jobs = 1)
{
    const auto entries = expand_sweep(j);
    const Json problem_cfg = require<Json>(j, "config", "problem");
    const auto span_v = require<std::vector<double>>(j, "config", "t_span");
    if (span_v.size() != 2 || !(span_v[1] > span_v[0])) throw config_error("config.t_span", "expected [t0, t1]");
    const TimeSpan span{span_v[0], span_v[1]};
    const auto stride = get_or<std::size_t>(j, "output_stride", 1);
    build_problem(problem_cfg); // validate once up front

    std::vector<SweepRow> rows(entries.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        const Problem p = build_problem(problem_cfg);
        for (std::size_t i = next++; i < entries.size(); i = next++) {
            SweepRow row;
            row.entry = entries[i];
            try {
                StepSetting step;
                if (row.entry.parameter == "h") step.h = row.entry.value;
                if (row.entry.parameter == "rtol") step.rtol = step.atol = row.entry.value;
                if (row.entry.parameter == "eps") step.eps = row.entry.value;
                const auto start = std::chrono::steady_clock::now();
                const Trajectory t = integrate(p, p.initial, span, row.entry.method, step, {stride});
                row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                const ErrorSummary e = compare_to_reference(t, reference_states(p, p.initial, span.t0, t.times));
                row.status = t.failed ? "failed" : "ok";
                row.mae = e.mae;
                row.final_error = e.final_error;
                row.max_drift = t.max_abs_drift;
                row.cost = t.cost;
            } catch (const Error& e) {
                row.status = std::string("error:") + std::string(to_string(e.kind()));
            }
            rows[i] = std::move(row);
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(entries.size())));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows,
                            const std::vector<std::string>& invariant_labels, bool with_wall_time = true)
{
    out << "method,parameter,value,status,mae,final_error";
    for (const auto& l : invariant_labels) out << ",max_drift_" << l;
    out << ",rhs_evals,accepted_steps,rejected_steps,projection_evals";
    if (with_wall_time) out << ",wall_time_s";
    out << "\n";
    for (const auto& r : rows) {
        out << r.entry.label << "," << r.entry.parameter << "," << format_real(r.entry.value) << "," << r.status << ","
            << format_real(r.mae) << "," << format_real(r.final_error);
        for (std::size_t i = 0; i < invariant_labels.size(); ++i)
            out << "," << format_real(i < r.max_drift.size() ? r.max_drift[i] : std::nan(""));
        out << "," << r.cost.rhs_evals << "," << r.cost.accepted_steps << "," << r.cost.rejected_steps << ","
            << r.cost.projection_evals;
        if (with_wall_time) out << "," << format_real(r.wall_time);
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// One-step convergence study of the pseudo projection

struct ConvergencePoint {
    double h = 0.0;
    double error = 0.0;
};

struct ConvergenceRow {
    int p = 0, q = 0, r = 0;
    std::vector<ConvergencePoint> points;
    double slope = std::numeric_limits<double>::quiet_NaN();
    std::size_t used = 0;
    std::string status = "ok";

    /// (p+1)(q+1)^r; r = 0 is the unprojected local error p+1.
    double expected() const { return (p + 1) * std::pow(q + 1, r); }
};

/// Least-squares slope of log(error) vs log(h) over points with error in
/// [lo, hi]; InsufficientWindow with fewer than three.
inline std::pair<double, std::size_t> fit_slope(const std::vector<ConvergencePoint>& pts, double lo = 1e-13,
                                                double hi = 1e-2)
{
    std::vector<std::pair<double, double>> xy;
    for (const auto& pt : pts)
        if (pt.error >= lo && pt.error <= hi) xy.emplace_back(std::log(pt.h), std::log(pt.error));
    if (xy.size() < 3) throw Error(ErrorKind::InsufficientWindow, "fewer than three points in the error window");
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : xy) {
        mx += x;
        my += y;
    }
    mx /= static_cast<double>(xy.size());
    my /= static_cast<double>(xy.size());
    double sxx = 0.0, sxy = 0.0;
    for (const auto& [x, y] : xy) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    return {sxy / sxx, xy.size()};
}

inline std::vector<double> log_grid(double lo, double hi, std::size_t count)
{
    std::vector<double> h(count);
    for (std::size_t i = 0; i < count; ++i)
        h[i] = lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(count - 1));
    return h;
}

/// Energy error after one base step of order p followed by r pseudo
/// iterations with an order-q inner method, for every h.
inline ConvergenceRow one_step_energy_errors(const Problem& prob, ConstState x0, int p, int q, int r,
                                             const std::vector<double>& hs)
{
    ConvergenceRow row{p, q, r, {}};
    const OdeSystem& sys = *prob.system;
    const double target = sys.invariants[0].value(x0);
    const ButcherTableau base = tableaus::explicit_of_order(p);
    PseudoGeneratorSpec spec;
    spec.invariants = {sys.invariants[0]};
    spec.inner_order = q;
    spec.iterations = r;
    for (double h : hs) {
        StateVector x = rk_fixed_step(base, sys, x0, h);
        if (r > 0) x = pseudo_project(spec, std::span<const double>(&target, 1), x);
        row.points.push_back({h, std::abs(sys.invariants[0].value(x) - target)});
    }
    try {
        std::tie(row.slope, row.used) = fit_slope(row.points);
    } catch (const Error& e) {
        row.status = std::string(to_string(e.kind()));
    }
    return row;
}

inline std::vector<ConvergenceRow> convergence_study(const Json& j)
{
    const Problem prob = build_problem(require<Json>(j, "config", "problem"));
    const Json grid = require<Json>(j, "config", "h");
    const auto hs = log_grid(require<double>(grid, "config.h", "min"), require<double>(grid, "config.h", "max"),
                             get_or<std::size_t>(grid, "count", 40));
    if (hs.back() / hs.front() < 10.0) throw config_error("config.h", "grid must span at least one decade");
    std::vector<ConvergenceRow> rows;
    for (const auto& c : require<Json>(j, "config", "configs")) {
        const auto pqr = c.get<std::vector<int>>();
        if (pqr.size() != 3) throw config_error("config.configs", "expected [p, q, r] triples");
        rows.push_back(one_step_energy_errors(prob, prob.initial, pqr[0], pqr[1], pqr[2], hs));
    }
    return rows;
}

inline void write_convergence_csv(std::ostream& slopes, std::ostream& points, const std::vector<ConvergenceRow>& rows)
{
    slopes << "p,q,r,expected,slope,points_used,status\n";
    points << "p,q,r,h,error\n";
    for (const auto& row : rows) {
        slopes << row.p << "," << row.q << "," << row.r << "," << format_real(row.expected()) << ","
               << format_real(row.slope) << "," << row.used << "," << row.status << "\n";
        for (const auto& pt : row.points)
            points << row.p << "," << row.q << "," << row.r << "," << format_real(pt.h) << ","
                   << format_real(pt.error) << "\n";
    }
}

} // namespace homproj::harness
