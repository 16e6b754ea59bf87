#include "support.hpp"

#include <homproj/harness/experiment.hpp>

#include <gtest/gtest.h>

#include <numbers>

using namespace homproj;
using namespace homproj::problems;
using namespace testing_support;

namespace {

constexpr double kPi = std::numbers::pi;

template <class F>
ErrorKind error_kind_of(F&& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::Config;
}

Invariant squared_norm(std::size_t begin, std::size_t count, std::string label)
{
    return {std::move(label),
            [=](ConstState x) {
                double s = 0.0;
                for (std::size_t i = begin; i < begin + count; ++i) s += x[i] * x[i];
                return s;
            },
            [=](ConstState x, MutState g) {
                std::fill(g.begin(), g.end(), 0.0);
                for (std::size_t i = begin; i < begin + count; ++i) g[i] = 2.0 * x[i];
            }};
}

/// Runs `hook` once on a hand-built context and returns the resulting state.
StateVector apply_hook(const PostStepHook& hook, const OdeSystem& sys, const StateVector& previous,
                       const StateVector& candidate, CostCounters& cost, std::size_t step_index = 0)
{
    StateVector state = candidate;
    const StateVector anchor = sys.invariant_values(previous);
    StepContext ctx{sys, previous, state, 0.1, 0.1, step_index, anchor, cost};
    hook(ctx);
    return state;
}

OdeSystem two_block_system()
{
    OdeSystem sys;
    sys.name = "blocks";
    sys.dimension = 4;
    sys.rhs = [](ConstState x, MutState f) {
        f[0] = x[1];
        f[1] = -x[0];
        f[2] = x[3];
        f[3] = -x[2];
    };
    sys.invariants = {squared_norm(0, 2, "H1"), squared_norm(2, 2, "H2")};
    return sys;
}

SymmetryAction block_action(std::size_t block)
{
    StateVector w(4, 0.0);
    w[2 * block] = w[2 * block + 1] = 1.0;
    std::vector<std::optional<double>> deg{0.0, 0.0};
    deg[block] = 2.0;
    return {"block" + std::to_string(block), DiagonalWeights{w}, deg};
}

Trajectory dense_reference(const OdeSystem& sys, const StateVector& x0, double t1)
{
    const auto tab = tableaus::dop853();
    return solve(sys, x0, {0.0, t1}, AdaptiveMethod{tab, StepController::for_tableau(tab, 1e-13, 1e-13)}, {},
                 {1u << 30});
}

} // namespace

TEST(LogRatio, Examples)
{
    EXPECT_NEAR(log_ratio(0.5, 0.505), -0.00995033085316809, 1e-15);
    EXPECT_EQ(log_ratio(0.7, 0.7), 0.0);
    EXPECT_EQ(error_kind_of([] { log_ratio(1.0, -0.3); }), ErrorKind::SignMismatch);
    EXPECT_EQ(error_kind_of([] { log_ratio(1.0, 0.0); }), ErrorKind::DegenerateInvariant);
    EXPECT_EQ(error_kind_of([] { log_ratio(1.0, std::nan("")); }), ErrorKind::NonFinite);
}

TEST(HomogeneousProject, MotivatingHarmonicExample)
{
    const OdeSystem sys = harmonic_oscillator();
    const StateVector candidate = rk_fixed_step(tableaus::forward_euler(), sys, StateVector{1.0, 0.0}, 0.1);
    EXPECT_DOUBLE_EQ(sys.invariants[0].value(candidate), 0.505);
    const SymmetryAction iso{"iso", IsotropicScaling{}, {2.0}};
    const auto r = homogeneous_project(iso, 2.0, 0.5, candidate, sys.invariants[0]);
    const double root = std::sqrt(0.5 / 0.505);
    EXPECT_NEAR(r.state[0], root, 1e-15);
    EXPECT_NEAR(r.state[1], -0.1 * root, 1e-16);
    EXPECT_NEAR(r.state[0], 0.99503719020998915, 1e-15);
    EXPECT_NEAR(sys.invariants[0].value(r.state), 0.5, 4 * std::numeric_limits<double>::epsilon() * 0.5);
}

TEST(HomogeneousProject, CandidateOnManifoldIsUnchanged)
{
    const auto invs = kepler_invariants();
    const StateVector x = kepler_initial(0.6);
    const auto r = homogeneous_project(kepler_energy_action(), 2.0, invs[0].value(x), x, invs[0]);
    EXPECT_EQ(r.s, 0.0);
    EXPECT_EQ(r.state, x);
}

TEST(HomogeneousProject, ZeroDegreeRejected)
{
    const auto invs = kepler_invariants();
    EXPECT_EQ(error_kind_of([&] { homogeneous_project(kepler_energy_action(), 0.0, -0.5, kepler_initial(0.5), invs[0]); }),
              ErrorKind::Config);
}

TEST(SideEffectProperty, KeplerEnergyActionScalesAngularMomentum)
{
    const auto invs = kepler_invariants();
    const auto act = kepler_energy_action();
    std::mt19937_64 rng(17);
    int checked = 0;
    while (checked < 200) {
        const StateVector x = kepler_state(rng);
        const double h = invs[0].value(x), l = invs[1].value(x), a = invs[2].value(x);
        if (!(h < -0.05) || std::abs(l) < 1e-3 || std::abs(a) < 1e-3) continue;
        const double target = h * (1.0 + 0.05 * std::uniform_real_distribution<double>(-1, 1)(rng));
        const auto r = homogeneous_project(act, 2.0, target, x, invs[0]);
        EXPECT_LE(rel(invs[0].value(r.state), target), 1e-13);
        EXPECT_LE(rel(invs[1].value(r.state), std::exp(-r.s) * l), 1e-12);
        EXPECT_LE(rel(invs[2].value(r.state), a), 1e-12);
        ++checked;
    }
}

TEST(SimultaneousProject, DiagonalDegreeMatrixDecouples)
{
    const OdeSystem sys = two_block_system();
    const auto ds = DegreeSystem::from_actions({block_action(0), block_action(1)}, {0, 1});
    const StateVector x{1.1, 0.2, -0.3, 0.9};
    const double t1 = 1.0, t2 = 0.64;
    const double targets[] = {t1, t2};
    const auto r = simultaneous_project(ds, x, sys.invariants, targets);
    EXPECT_NEAR(r.s, std::log(t1 / sys.invariants[0].value(x)) / 2.0, 1e-15);
    EXPECT_LE(rel(sys.invariants[0].value(r.state), t1), 1e-12);
    EXPECT_LE(rel(sys.invariants[1].value(r.state), t2), 1e-12);
    const auto single = homogeneous_project(block_action(0), 2.0, t1, x, sys.invariants[0]);
    EXPECT_NEAR(r.state[0], single.state[0], 1e-15);
    EXPECT_NEAR(r.state[1], single.state[1], 1e-15);
}

TEST(SimultaneousProject, ZeroRightHandSideIsIdentity)
{
    const OdeSystem sys = two_block_system();
    const auto ds = DegreeSystem::from_actions({block_action(0), block_action(1)}, {0, 1});
    const StateVector x{1.1, 0.2, -0.3, 0.9};
    const StateVector targets = sys.invariant_values(x);
    EXPECT_EQ(simultaneous_project(ds, x, sys.invariants, targets).state, x);
}

TEST(SimultaneousProject, PerturbedBlocksRestored)
{
    const OdeSystem sys = two_block_system();
    const SymmetryAction iso{"iso", IsotropicScaling{}, {2.0, 2.0}};
    // Coupled K = [[2, 2], [0, 2]]: isotropic scaling plus scaling of block 1.
    const auto ds = DegreeSystem::from_actions({iso, block_action(1)}, {0, 1});
    std::mt19937_64 rng(23);
    for (int k = 0; k < 50; ++k) {
        const StateVector x = uniform_state(rng, 4, 0.2, 1.0);
        StateVector y = x;
        for (double& v : y) v *= 1.0 + 0.01 * uniform_state(rng, 1, -1, 1)[0];
        const StateVector targets = sys.invariant_values(x);
        const auto r = simultaneous_project(ds, y, sys.invariants, targets);
        EXPECT_LE(rel(sys.invariants[0].value(r.state), targets[0]), 1e-12);
        EXPECT_LE(rel(sys.invariants[1].value(r.state), targets[1]), 1e-12);
    }
}

TEST(SimultaneousProject, SingularDegreeMatrixRejected)
{
    const OdeSystem sys = two_block_system();
    const SymmetryAction iso{"iso", IsotropicScaling{}, {2.0, 2.0}};
    const auto ds = DegreeSystem::from_actions({iso, iso}, {0, 1});
    const double targets[] = {1.0, 1.0};
    EXPECT_EQ(error_kind_of([&] { simultaneous_project(ds, StateVector{1, 1, 1, 1}, sys.invariants, targets); }),
              ErrorKind::SingularDegreeMatrix);
}

TEST(SimultaneousProject, NonDiagonalActionRejected)
{
    const OdeSystem sys = double_pendulum(Potential::Torsion);
    DegreeSystem ds = DegreeSystem::from_actions({dp_conjugate_action(Potential::Torsion)}, {0});
    const double target = 1.0;
    EXPECT_EQ(error_kind_of([&] {
                  simultaneous_project(ds, StateVector{0.1, 0.2, 0.3, 0.4}, sys.invariants, std::span(&target, 1));
              }),
              ErrorKind::Config);
}

TEST(AlternatingProject, SingleSchemeMatchesPlainProjection)
{
    const OdeSystem sys = kepler();
    const auto run = [&](const PostStepHook& hook) {
        return solve(sys, kepler_initial(0.6), {0.0, 5.0}, FixedStepMethod{"rk4", explicit_rk_stepper(tableaus::rk4(), sys), 0.01},
                     hook);
    };
    const Trajectory a = run(homogeneous_hook(kepler_energy_action(), 0));
    const Trajectory b = run(alternating_hook({homogeneous_hook(kepler_energy_action(), 0)}));
    EXPECT_EQ(a.states, b.states);
}

TEST(AlternatingProject, EachSchemeFiresOncePerCycle)
{
    std::array<int, 3> fired{};
    std::vector<PostStepHook> schemes;
    for (int i = 0; i < 3; ++i) schemes.push_back([&fired, i](StepContext&) { ++fired[i]; });
    const OdeSystem sys = harmonic_oscillator();
    for (std::size_t n = 0; n < 9; ++n) {
        CostCounters c;
        apply_hook(alternating_project(schemes, n), sys, StateVector{1, 0}, StateVector{1, 0}, c, n);
    }
    EXPECT_EQ(fired, (std::array<int, 3>{3, 3, 3}));
    EXPECT_EQ(error_kind_of([] { alternating_project({}, 0); }), ErrorKind::Config);
}

TEST(AlternatingProject, KdvCycleCorrectsEachInvariantInTurn)
{
    const auto pde = kdv_build();
    const OdeSystem& sys = pde.system;
    const StateVector u0 = soliton_ic(2.0, 20.0, pde);
    const StateVector h0 = sys.invariant_values(u0);
    PseudoGeneratorSpec spec;
    const auto act = kdv_scaling_action();
    const PostStepHook cycle = alternating_hook({homogeneous_hook(act, 0), homogeneous_hook(act, 1), pseudo_hook({2}, spec)});
    std::vector<std::array<double, 3>> after;
    std::vector<double> raw_h3;
    const PostStepHook recorder = [&](StepContext& ctx) {
        raw_h3.push_back(std::abs(sys.invariants[2].value(ctx.state) - h0[2]));
        cycle(ctx);
        std::array<double, 3> d{};
        for (std::size_t i = 0; i < 3; ++i) d[i] = std::abs(sys.invariants[i].value(ctx.state) - h0[i]) / std::abs(h0[i]);
        after.push_back(d);
    };
    const Trajectory t = solve(sys, u0, {0.0, 0.3}, FixedStepMethod{"rk4", explicit_rk_stepper(tableaus::rk4(), sys), 0.01},
                               recorder);
    ASSERT_FALSE(t.failed);
    ASSERT_EQ(after.size(), 30u);
    for (std::size_t n = 0; n < after.size(); ++n) {
        switch (n % 3) {
        case 0: EXPECT_LE(after[n][0], 1e-13) << n; break;
        case 1: EXPECT_LE(after[n][1], 1e-13) << n; break;
        default: EXPECT_LT(after[n][2] * std::abs(h0[2]), std::max(raw_h3[n], 1e-15)) << n;
        }
    }
}

TEST(AlternatingProject, KeplerThreeInvariantDriftBounded)
{
    const OdeSystem sys = kepler();
    const StateVector x0 = kepler_initial(0.6);
    const StateVector h0 = sys.invariant_values(x0);
    PseudoGeneratorSpec spec;
    // The L-first cycle amplifies the defects near pericentre; H first is stable.
    const PostStepHook cycle = alternating_hook({homogeneous_hook(kepler_energy_action(), 0),
                                                 homogeneous_hook(kepler_angular_action(), 1), pseudo_hook({2}, spec)});
    std::array<double, 3> first_period{};
    const PostStepHook recorder = [&](StepContext& ctx) {
        cycle(ctx);
        if (ctx.t <= kKeplerPeriod)
            for (std::size_t i = 0; i < 3; ++i)
                first_period[i] = std::max(first_period[i], std::abs(sys.invariants[i].value(ctx.state) - h0[i]));
    };
    const OneStep rk4 = explicit_rk_stepper(tableaus::rk4(), sys);
    const TimeSpan span{0.0, 10 * kKeplerPeriod};
    const Trajectory t = solve(sys, x0, span, FixedStepMethod{"rk4", rk4, 0.01}, recorder);
    const Trajectory raw = solve(sys, x0, span, FixedStepMethod{"rk4", rk4, 0.01});
    ASSERT_FALSE(t.failed);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_GT(first_period[i], 0.0);
        EXPECT_LE(t.max_abs_drift[i], 1.5 * first_period[i]) << sys.invariants[i].label;
    }
    EXPECT_LT(t.max_abs_drift[0], raw.max_abs_drift[0]);
    EXPECT_LT(t.max_abs_drift[2], raw.max_abs_drift[2]);
}

TEST(DissipativeProject, ConstantScheduleMatchesHomogeneous)
{
    const auto invs = kepler_invariants();
    const StateVector x0 = kepler_initial(0.5);
    const StateVector cand = rk_fixed_step(tableaus::rk4(), kepler(), x0, 0.1);
    const DissipationSchedule same = [&](ConstState x, double) { return invs[0].value(x); };
    const auto d = dissipative_project(kepler_energy_action(), 2.0, same, x0, 0.1, cand, invs[0]);
    const auto h = homogeneous_project(kepler_energy_action(), 2.0, invs[0].value(x0), cand, invs[0]);
    EXPECT_EQ(d.state, h.state);
}

TEST(DissipativeProject, ExponentialDecayScheduleIsExact)
{
    OdeSystem decay;
    decay.dimension = 1;
    decay.rhs = [](ConstState x, MutState f) { f[0] = -0.5 * x[0]; };
    const Invariant sq = squared_norm(0, 1, "H");
    const SymmetryAction iso{"iso", IsotropicScaling{}, {2.0}};
    const double h = 0.1;
    const StateVector x0{1.0};
    const StateVector cand = rk_fixed_step(tableaus::forward_euler(), decay, x0, h);
    const DissipationSchedule sched = [&](ConstState x, double step) { return std::exp(-step) * sq.value(x); };
    const auto r = dissipative_project(iso, 2.0, sched, x0, h, cand, sq);
    EXPECT_LE(rel(sq.value(r.state), std::exp(-h)), 1e-12);
}

TEST(DissipativeProject, ZeroScheduleIsDegenerate)
{
    const Invariant sq = squared_norm(0, 1, "H");
    const SymmetryAction iso{"iso", IsotropicScaling{}, {2.0}};
    const DissipationSchedule zero = [](ConstState, double) { return 0.0; };
    EXPECT_EQ(error_kind_of([&] { dissipative_project(iso, 2.0, zero, StateVector{1.0}, 0.1, StateVector{0.9}, sq); }),
              ErrorKind::DegenerateInvariant);
}

TEST(PseudoGenerator, OneDimensionalQuadratic)
{
    PseudoGeneratorSpec spec;
    spec.invariants = {squared_norm(0, 1, "H")};
    spec.log_ratios = {0.3};
    const StateVector g = build_pseudo_generator(spec, StateVector{1.7});
    EXPECT_NEAR(g[0], 0.3 * 1.7 / 2.0, 1e-15);
}

TEST(PseudoGenerator, ZeroRatiosGiveZeroField)
{
    PseudoGeneratorSpec spec;
    spec.invariants = kepler_invariants();
    spec.log_ratios = {0.0, 0.0, 0.0};
    EXPECT_EQ(build_pseudo_generator(spec, kepler_initial(0.3)), StateVector(4, 0.0));
}

TEST(PseudoGenerator, OrthogonalGradientsDecouple)
{
    PseudoGeneratorSpec spec;
    spec.invariants = {squared_norm(0, 1, "H1"), squared_norm(1, 1, "H2")};
    spec.log_ratios = {0.2, -0.4};
    const StateVector x{0.8, -1.3};
    const StateVector g = build_pseudo_generator(spec, x);
    // sum_i k_i H_i / |grad H_i|^2 grad H_i
    EXPECT_NEAR(g[0], 0.2 * 0.64 / (4 * 0.64) * 1.6, 1e-15);
    EXPECT_NEAR(g[1], -0.4 * 1.69 / (4 * 1.69) * -2.6, 1e-15);
}

TEST(PseudoGenerator, AllGradientsVanishingIsSingular)
{
    PseudoGeneratorSpec spec;
    spec.invariants = {squared_norm(0, 1, "H1"), squared_norm(1, 1, "H2")};
    spec.log_ratios = {0.2, -0.4};
    EXPECT_EQ(error_kind_of([&] { build_pseudo_generator(spec, StateVector{0.0, 0.0}); }), ErrorKind::SingularGram);
}

TEST(GeneratorLawProperty, KeplerGeneratorSatisfiesDefiningSystem)
{
    PseudoGeneratorSpec spec;
    spec.invariants = kepler_invariants();
    std::mt19937_64 rng(41);
    for (int k = 0; k < 200; ++k) {
        const StateVector x = kepler_state(rng);
        spec.log_ratios = uniform_state(rng, 3, -0.1, 0.1);
        const StateVector g = build_pseudo_generator(spec, x);
        for (std::size_t i = 0; i < 3; ++i) {
            const double lhs = dot(g, spec.invariants[i].grad(x));
            const double rhs = spec.log_ratios[i] * spec.invariants[i].value(x);
            EXPECT_LE(std::abs(lhs - rhs), 1e-10 * std::max(std::abs(rhs), 1e-3)) << spec.invariants[i].label;
        }
    }
}

TEST(PseudoProject, ExactCandidateUnchanged)
{
    PseudoGeneratorSpec spec;
    spec.invariants = kepler_invariants();
    const StateVector x = kepler_initial(0.7);
    const StateVector targets = kepler().invariant_values(x);
    EXPECT_EQ(pseudo_project(spec, targets, x), x);
}

TEST(PseudoProject, KeplerThreeInvariantsNearlyRestored)
{
    PseudoGeneratorSpec spec;
    spec.invariants = kepler_invariants();
    spec.iterations = 2;
    const OdeSystem sys = kepler();
    const StateVector x0 = kepler_initial(0.5);
    const StateVector targets = sys.invariant_values(x0);
    const StateVector cand = rk_fixed_step(tableaus::rk4(), sys, x0, 0.05);
    const StateVector z = pseudo_project(spec, targets, cand);
    for (std::size_t i = 0; i < 3; ++i) {
        const double before = std::abs(sys.invariants[i].value(cand) - targets[i]);
        const double after = std::abs(sys.invariants[i].value(z) - targets[i]);
        EXPECT_LT(after, 1e-3 * before + 1e-15) << sys.invariants[i].label;
    }
}

TEST(PseudoProject, ReusedProjectorMatchesFreshOne)
{
    const OdeSystem sys = double_pendulum(Potential::Torsion);
    PseudoGeneratorSpec spec;
    spec.invariants = sys.invariants;
    spec.iterations = 2;
    PseudoProjector projector(spec, 4);
    const StateVector target{sys.invariants[0].value(StateVector{0.1, -0.2, 1.0, -1.0})};
    std::mt19937_64 rng(8);
    CostCounters cost;
    for (int k = 0; k < 20; ++k) {
        const StateVector x = uniform_state(rng, 4, -1.0, 1.0);
        StateVector z(4);
        projector.project(target, x, z, cost);
        EXPECT_EQ(z, pseudo_project(spec, target, x));
    }
}

TEST(PseudoRateProperty, OneStepEnergyErrorSlopes)
{
    const harness::Problem prob = harness::build_problem(harness::Json{{"id", "nonlinear_oscillator"}});
    const auto hs = harness::log_grid(1e-3, 1.0, 120);
    for (int p : {1, 2, 4})
        for (int q : {1, 2})
            for (int r : {1, 2}) {
                const auto row = harness::one_step_energy_errors(prob, prob.initial, p, q, r, hs);
                ASSERT_EQ(row.status, "ok") << p << q << r;
                EXPECT_NEAR(row.slope, row.expected(), 0.5) << "(p,q,r)=(" << p << "," << q << "," << r << ") over "
                                                           << row.used << " points";
            }
}

TEST(NewtonProject, OnManifoldStopsAfterResidualCheck)
{
    const auto invs = kepler_invariants();
    const StateVector x = kepler_initial(0.4);
    StateVector targets;
    for (const auto& inv : invs) targets.push_back(inv.value(x));
    const auto r = newton_project(invs, x, targets);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 0);
    EXPECT_EQ(r.state, x);
}

TEST(NewtonProject, RadialProjectionOntoCircle)
{
    const std::vector<Invariant> invs{squared_norm(0, 2, "r2")};
    const double target = 1.0;
    const auto r = newton_project(invs, StateVector{1.1, 0.0}, std::span(&target, 1));
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.state[0], 1.0, 1e-13);
    EXPECT_EQ(r.state[1], 0.0);
}

TEST(NewtonProject, KeplerThreeInvariantsAfterEmbeddedStep)
{
    const OdeSystem sys = kepler();
    for (double e : {0.3, 0.6, 0.9}) {
        const StateVector x0 = kepler_initial(e);
        const StateVector targets = sys.invariant_values(x0);
        const StateVector cand = rk_fixed_step(tableaus::dopri5(), sys, x0, 1e-2);
        const auto r = newton_project(sys.invariants, cand, targets, 1e-13, 20);
        EXPECT_TRUE(r.converged) << e;
        EXPECT_LE(r.iterations, 5) << e;
        EXPECT_LE(r.residual, 1e-13) << e;
    }
}

TEST(NewtonProject, IterationCapKeepsBestIterate)
{
    const std::vector<Invariant> invs{squared_norm(0, 2, "r2")};
    const double target = 1.0;
    const auto r = newton_project(invs, StateVector{3.0, 0.0}, std::span(&target, 1), 1e-13, 1);
    EXPECT_FALSE(r.converged);
    EXPECT_LT(std::abs(invs[0].value(r.state) - 1.0), 8.0);
}

TEST(ConjugateProject, IdentityMapReducesToHomogeneous)
{
    Diffeomorphism id;
    id.forward = [](ConstState x, MutState y) { std::copy(x.begin(), x.end(), y.begin()); };
    id.inverse = [](ConstState y, ConstState, MutState x) { std::copy(y.begin(), y.end(), x.begin()); };
    const auto invs = kepler_invariants();
    const StateVector cand = rk_fixed_step(tableaus::rk4(), kepler(), kepler_initial(0.5), 0.1);
    const auto c = conjugate_project(id, DiagonalWeights{{-2, -2, 1, 1}}, 2.0, -0.5, cand, invs[0]);
    const auto h = homogeneous_project(kepler_energy_action(), 2.0, -0.5, cand, invs[0]);
    EXPECT_EQ(c.state, h.state);
}

TEST(ConjugateProject, PendulumEnergyRestored)
{
    std::mt19937_64 rng(5);
    for (auto v : {Potential::Torsion, Potential::Gravity}) {
        const OdeSystem sys = double_pendulum(v);
        const auto act = dp_conjugate_action(v);
        const auto& conj = std::get<ConjugateAction>(act.kind);
        for (int k = 0; k < 50; ++k) {
            StateVector x0 = uniform_state(rng, 4, -1.0, 1.0);
            if (v == Potential::Gravity) {
                x0[0] = uniform_state(rng, 1, 0.5, 1.2)[0];
                x0[1] = uniform_state(rng, 1, -1.2, -0.5)[0];
            }
            const double target = sys.invariants[0].value(x0);
            const StateVector cand = rk_fixed_step(tableaus::rk4(), sys, x0, 0.05);
            const auto r = conjugate_project(*conj.map, conj.inner, 1.0, target, cand, sys.invariants[0]);
            EXPECT_LE(rel(sys.invariants[0].value(r.state), target), 1e-11) << to_string(v);
            EXPECT_LE(max_abs_diff(r.state, cand), 1e-3) << to_string(v);
        }
    }
}

TEST(ConjugateProject, IllConditionedGravityMapFallsBack)
{
    const OdeSystem sys = double_pendulum(Potential::Gravity);
    const PostStepHook hook = conjugate_hook(dp_conjugate_action(Potential::Gravity), 0);
    // q1 = 0 puts the candidate where h1' vanishes.
    const StateVector prev{1e-3, 0.4, 0.5, -0.2};
    const StateVector cand{0.0, 0.41, 0.5, -0.21};
    CostCounters c;
    const StateVector out = apply_hook(hook, sys, prev, cand, c);
    EXPECT_EQ(c.projection_fallbacks, 1u);
    EXPECT_EQ(c.projection_evals, 1u);
    const double target = sys.invariants[0].value(prev);
    EXPECT_LT(std::abs(sys.invariants[0].value(out) - target), std::abs(sys.invariants[0].value(cand) - target));
}

TEST(SkipSemanticsProperty, SignMismatchLeavesCandidateAndCounts)
{
    OdeSystem sys;
    sys.name = "linear-invariant";
    sys.dimension = 2;
    sys.rhs = [](ConstState, MutState f) { std::fill(f.begin(), f.end(), 0.0); };
    sys.invariants = {Invariant{"x0", [](ConstState x) { return x[0]; },
                                [](ConstState, MutState g) {
                                    g[0] = 1.0;
                                    g[1] = 0.0;
                                }},
                      Invariant{"x1", [](ConstState x) { return x[1]; }, [](ConstState, MutState g) {
                                    g[0] = 0.0;
                                    g[1] = 1.0;
                                }}};
    const SymmetryAction iso{"iso", IsotropicScaling{}, {1.0, 1.0}};
    const SymmetryAction first{"first", DiagonalWeights{{1.0, 0.0}}, {1.0, 0.0}};
    const SymmetryAction second{"second", DiagonalWeights{{0.0, 1.0}}, {0.0, 1.0}};
    PseudoGeneratorSpec spec;
    const std::vector<std::pair<std::string, PostStepHook>> hooks{
        {"homogeneous", homogeneous_hook(iso, 0)},
        {"dissipative", dissipative_hook(iso, 0, [](ConstState x, double) { return x[0]; })},
        {"simultaneous", simultaneous_hook(DegreeSystem::from_actions({first, second}, {0, 1}), {0, 1})},
        {"pseudo", pseudo_hook({0}, spec)},
    };
    std::mt19937_64 rng(8);
    for (const auto& [name, hook] : hooks)
        for (int k = 0; k < 20; ++k) {
            const StateVector prev = uniform_state(rng, 2, 0.5, 1.0);
            StateVector cand = uniform_state(rng, 2, 0.5, 1.0);
            cand[0] = -cand[0];
            CostCounters c;
            const StateVector out = apply_hook(hook, sys, prev, cand, c);
            EXPECT_EQ(out, cand) << name;
            EXPECT_EQ(c.projections_skipped, 1u) << name;
        }
}

TEST(ExactnessProperty, ClosedFormProjectionsHoldEveryStep)
{
    struct Case {
        std::string name;
        OdeSystem sys;
        StateVector x0;
        PostStepHook hook;
        std::size_t invariant;
        double h;
        double t1;
    };
    const auto kdv = kdv_build();
    std::vector<Case> cases;
    cases.push_back({"kepler_psi_H", kepler(), kepler_initial(0.9), homogeneous_hook(kepler_energy_action(), 0), 0, 0.005, 20.0});
    cases.push_back({"torsion", double_pendulum(Potential::Torsion), {0.5, -0.3, 0.4, 0.2},
                     conjugate_hook(dp_conjugate_action(Potential::Torsion), 0), 0, 0.05, 50.0});
    cases.push_back({"gravity", double_pendulum(Potential::Gravity), {0.8, -0.5, 0.3, 0.1},
                     conjugate_hook(dp_conjugate_action(Potential::Gravity), 0), 0, 0.05, 50.0});
    cases.push_back({"kdv_mass", kdv.system, soliton_ic(2.0, 20.0, kdv), homogeneous_hook(kdv_scaling_action(), 0), 0, 0.01, 1.0});
    for (auto& c : cases) {
        const double h0 = c.sys.invariants[c.invariant].value(c.x0);
        double worst = 0.0;
        const PostStepHook wrapped = [&](StepContext& ctx) {
            c.hook(ctx);
            worst = std::max(worst, rel(ctx.system.invariants[c.invariant].value(ctx.state), h0));
        };
        const Trajectory t = solve(c.sys, c.x0, {0.0, c.t1},
                                   FixedStepMethod{"rk4", explicit_rk_stepper(tableaus::rk4(), c.sys), c.h}, wrapped);
        ASSERT_FALSE(t.failed) << c.name << ": " << t.failure;
        EXPECT_LE(worst, 1e-11) << c.name;
        EXPECT_EQ(t.cost.projections_skipped, 0u) << c.name;
    }
}

TEST(OrderRetentionProperty, ProjectedSlopeMatchesBaseOnTorsionPendulum)
{
    const OdeSystem sys = double_pendulum(Potential::Torsion);
    const StateVector x0{0.5, -0.3, 0.4, 0.2};
    const double t1 = 10.0;
    const StateVector ref = dense_reference(sys, x0, t1).final_state();
    struct Case {
        ButcherTableau tab;
        std::vector<double> hs;
    };
    for (const auto& c : {Case{tableaus::rk4(), {0.1, 0.05, 0.025, 0.0125}},
                          Case{tableaus::forward_euler(), {0.004, 0.002, 0.001, 0.0005}}}) {
        std::vector<double> raw, proj;
        for (double h : c.hs) {
            const FixedStepMethod m{c.tab.name, explicit_rk_stepper(c.tab, sys), h};
            raw.push_back(max_abs_diff(solve(sys, x0, {0.0, t1}, m, {}, {1u << 30}).final_state(), ref));
            proj.push_back(max_abs_diff(
                solve(sys, x0, {0.0, t1}, m, conjugate_hook(dp_conjugate_action(Potential::Torsion), 0), {1u << 30})
                    .final_state(),
                ref));
        }
        EXPECT_NEAR(loglog_slope(c.hs, raw), c.tab.order, 0.2) << c.tab.name;
        EXPECT_NEAR(loglog_slope(c.hs, proj), c.tab.order, 0.2) << c.tab.name;
    }
}
