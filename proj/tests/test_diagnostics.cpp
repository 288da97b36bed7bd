#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gnflow/diagnostics.hpp"
#include "support.hpp"

using namespace gnflow;
using gnflow::testing::random_field;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

IntegratorConfig tight_config()
{
    IntegratorConfig c;
    c.rel_tol = 1e-11;
    c.abs_tol = 1e-14;
    return c;
}

PeriodicProblem smooth_problem(int n_max, double q, double kappa, double eps)
{
    TorusDomain dom{2, kTwoPi, n_max};
    ForcingSignal f(dom, 1.0,
                    {{{1, 0, 0}, 0, {0.5, 0.0}, {ProfileKind::sine, 1, 0.0}},
                     {{1, 1, 0}, 0, {0.0, 0.3}, {ProfileKind::cosine, 1, 0.4}}});
    return {dom, {q, kappa}, {eps}, f, 1.5, tight_config()};
}

// mean over a period of |cos|^r
double mean_abs_cos(double r)
{
    return std::tgamma(0.5 * (r + 1.0)) / (std::sqrt(std::numbers::pi) * std::tgamma(0.5 * r + 1.0));
}

} // namespace

TEST_CASE("embedding constants: q = 2 estimate reaches the lowest-mode Rayleigh quotient")
{
    for (double L : {kTwoPi, 1.0}) {
        TorusDomain dom{2, L, 3};
        auto c = estimate_embedding_constants(dom, 2.0, 200);
        const double closed = std::numbers::sqrt2 * L / kTwoPi;
        CHECK(c.embedding >= closed - 1e-6);
        CHECK(c.embedding <= closed * (1.0 + 1e-9));  // lowest mode is the sup at q = 2
        CHECK(c.C_P == doctest::Approx(L / kTwoPi));
        CHECK(c.C_S == doctest::Approx(std::pow(c.embedding, -2.0)));
        CHECK(c.sample_budget == 200);
    }
}

TEST_CASE("embedding constants: monotone in budget, reproducible, budget guard")
{
    TorusDomain dom{2, kTwoPi, 4};
    double prev = 0.0;
    for (std::size_t b : {100u, 200u, 400u, 800u}) {
        const double e = estimate_embedding_constants(dom, 1.5, b, 7).embedding;
        CHECK(e >= prev);
        prev = e;
    }
    CHECK(estimate_embedding_constants(dom, 1.5, 300, 7).embedding ==
          estimate_embedding_constants(dom, 1.5, 300, 7).embedding);
    CHECK_THROWS_AS(estimate_embedding_constants(dom, 1.5, 99), InvalidInput);
}

TEST_CASE("embedding_ratio of a single wave")
{
    TorusDomain dom{2, kTwoPi, 2};
    SpectralField v(dom);
    v[*v.modes().find({1, 2, 0}, 0)] = Complex{0.3, -0.1};
    CHECK(embedding_ratio(v, 2.0) == doctest::Approx(std::numbers::sqrt2 / std::sqrt(5.0)).epsilon(1e-12));
}

TEST_CASE("energy inequality: zero forcing, q = 2.5 orbit, corrupted negative control")
{
    auto p = smooth_problem(3, 2.5, 0.0, 0.01);
    auto consts = estimate_embedding_constants(p.domain, 2.5, 200);

    SUBCASE("zero forcing dissipates")
    {
        PeriodicProblem z = p;
        z.forcing = ForcingSignal::zero(p.domain, 1.0);
        std::mt19937_64 rng(3);
        auto sys = z.make_system();
        auto run = poincare_run(sys, random_field(p.domain, rng, 0.4), z.integrator);
        auto rep = verify_energy_inequality(run.record, consts);
        CHECK(rep.holds);
        CHECK(rep.steps_checked + 1 == run.record.steps.size());
        CHECK(rep.samples_checked == 512);
        const auto& s0 = run.record.samples.front();
        for (const auto& s : run.record.samples)
            CHECK(s.energy.kinetic + consts.C1 * s.cumulative.dissipation_q <= s0.energy.kinetic);
    }
    SUBCASE("converged orbit holds with positive slack; injected energy is caught")
    {
        auto orbit = find_periodic_orbit(p, {});
        REQUIRE(orbit.converged);
        auto rep = verify_energy_inequality(orbit.trajectory, consts);
        CHECK(rep.holds);
        CHECK(rep.worst_sample_slack > 0.0);

        auto bad = orbit.trajectory;
        bad.samples[300].energy.kinetic += 1e4;
        bad.steps[bad.steps.size() / 2].energy.kinetic += 1e4;
        auto r2 = verify_energy_inequality(bad, consts);
        CHECK_FALSE(r2.holds);
        CHECK(r2.sample_violations == 1);
        CHECK(r2.step_violations >= 1);
    }
}

TEST_CASE("interpolation bound: zero trajectory and a single steady mode")
{
    TrajectoryRecord zero;
    zero.samples.resize(3);
    for (int i = 0; i < 3; ++i) zero.samples[i].t = i;
    auto z = interpolation_bound_check(zero, 1.5);
    CHECK(z.holds);
    CHECK(z.lhs == 0.0);
    CHECK(z.rhs == 0.0);

    for (double q : {1.5, 2.0, 2.5}) {
        TorusDomain dom{2, kTwoPi, 2};
        SpectralField v(dom);
        const auto m = *v.modes().find({1, 0, 0}, 0);
        const double a = 0.4;
        v[m] = a;
        GalerkinSystem sys(dom, {q, 0.0}, {0.0}, ForcingSignal::zero(dom, 1.0), 40.0);  // fine grid: |cos|^r is not smooth
        const auto audit = sys.audit_terms(v);
        const double vol = dom.volume();
        // |v| = 2a|cos x|, |grad v| = 2a|sin x| for k = (1, 0)
        const double r = 5.0 * q / 3.0;
        CHECK(audit.velocity_power == doctest::Approx(std::pow(2 * a, r) * vol * mean_abs_cos(r)).epsilon(1e-4));
        CHECK(audit.gradient_q == doctest::Approx(std::pow(2 * a, q) * vol * mean_abs_cos(q)).epsilon(1e-4));

        TrajectoryRecord steady;
        steady.q = q;
        for (int i = 0; i < 2; ++i) steady.samples.push_back({double(i), v.norm(), {}, audit, {}});
        auto rep = interpolation_bound_check(steady, q);
        CHECK(rep.holds);
        CHECK(rep.lhs == doctest::Approx(audit.velocity_power));
        CHECK(rep.rhs == doctest::Approx(std::pow(v.norm(), 2 * q / 3) * audit.gradient_q));
    }
}

TEST_CASE("scalar surrogate reproduces the closed-form extinction time")
{
    for (double q : {1.3, 1.5, 1.8}) {
        auto r = scalar_extinction(2.0, 0.7, q);
        CHECK(r.exact == doctest::Approx(std::pow(2.0, 2 - q) / (0.7 * (2 - q))));
        CHECK(r.relative_error <= 1e-6);
    }
    CHECK_THROWS_AS(scalar_extinction(1.0, 1.0, 2.0), InvalidInput);
}

TEST_CASE("extinction: hypothesis gates, minimal period, v(t_bar) = 0")
{
    TorusDomain dom{2, kTwoPi, 2};
    auto consts = EmbeddingConstants::derive(std::numbers::sqrt2, dom, 1.5);
    auto make = [&](double q, double T) {
        ForcingSignal f(dom, T, {}, 0.5 * T);
        return PeriodicProblem{dom, {q, 1e-3}, {1e-3}, f, 1.5, tight_config()};
    };
    CHECK_THROWS_AS(extinction_bound(make(2.5, 1.0), consts), InvalidInput);
    CHECK_THROWS_AS(extinction_bound(make(2.0, 1.0), consts), InvalidInput);

    double minimal = 0.0;
    try {
        extinction_bound(make(1.5, 1.0), consts);
        FAIL("expected a compatibility error");
    } catch (const CompatibilityError& e) {
        minimal = e.minimal_period();
    }
    // with t_bar = T/2: T/2 + B <= T  <=>  T >= 2B, B = minimal - 1/2
    const double T = 2.0 * (minimal - 0.5) * 1.01;
    REQUIRE_NOTHROW(extinction_bound(make(1.5, T), consts));

    auto rep = extinction_experiment(make(1.5, T), consts);
    CHECK(rep.orbit_converged);
    CHECK(rep.norm_at_shutoff == 0.0);
    CHECK(rep.measured == rep.shutoff);
    CHECK(rep.within_bound);
}

TEST_CASE("orbit distance is a metric on stored orbits; single-cell sweep is deterministic")
{
    auto tmpl = smooth_problem(3, 2.5, 0.0, 0.01);
    tmpl.integrator.samples = 64;
    SweepOptions opt;
    opt.embedding_budget = 120;

    auto one = cascade_sweep({{3}, {0.01}, {0.0}}, tmpl, opt);
    REQUIRE(one.cells.size() == 1);
    CHECK(one.cells[0].converged);
    CHECK(one.distances.empty());
    CHECK(one.cells[0].trajectory.states.size() == 65);

    auto again = cascade_sweep({{3}, {0.01}, {0.0}}, tmpl, opt);
    CHECK(orbit_summary_json(one.cells[0]).dump() == orbit_summary_json(again.cells[0]).dump());
    CHECK(orbit_distance(one.cells[0].trajectory, again.cells[0].trajectory) == 0.0);

    opt.workers = 2;
    auto grid = cascade_sweep({{3}, {0.1, 0.01, 0.03}, {0.0}}, tmpl, opt);
    REQUIRE(grid.cells.size() == 3);
    CHECK(grid.axes.epsilon == std::vector<double>{0.01, 0.03, 0.1});
    CHECK(grid.distances.size() == 2);
    const auto& a = grid.cells[0].trajectory;
    const auto& b = grid.cells[1].trajectory;
    const auto& c = grid.cells[2].trajectory;
    CHECK(orbit_distance(a, b) == doctest::Approx(orbit_distance(b, a)).epsilon(1e-14));
    CHECK(orbit_distance(a, c) <= orbit_distance(a, b) + orbit_distance(b, c) + 1e-14);
    CHECK(orbit_summary_json(grid.cells[0]).dump() == orbit_summary_json(one.cells[0]).dump());
}

TEST_CASE("sweep records per-cell failures instead of throwing, and honours the cache")
{
    auto tmpl = smooth_problem(2, 1.5, 0.0, 0.01);  // kappa = 0, q < 2 without override
    tmpl.integrator.samples = 16;
    SweepOptions opt;
    opt.embedding_budget = 100;
    int stored = 0;
    opt.store = [&](const OrbitCell&) { ++stored; };
    auto r = cascade_sweep({{2}, {0.01}, {0.0}}, tmpl, opt);
    REQUIRE(r.cells.size() == 1);
    CHECK_FALSE(r.cells[0].converged);
    CHECK_FALSE(r.cells[0].error.empty());
    CHECK(stored == 1);

    opt.load = [](const CellKey& k) {
        OrbitCell c;
        c.n_max = k.n_max;
        c.error = "cached";
        return std::optional<OrbitCell>(c);
    };
    auto cached = cascade_sweep({{2}, {0.01}, {0.0}}, tmpl, opt);
    CHECK(cached.cells[0].error == "cached");
    CHECK(stored == 1);
}

TEST_CASE("epsilon report: eps = 0 rows have zero weighted terms; kappa check at q = 2 is flat")
{
    auto tmpl = smooth_problem(3, 2.5, 0.0, 0.0);
    tmpl.integrator.samples = 32;
    SweepOptions opt;
    opt.embedding_budget = 100;
    auto r = cascade_sweep({{3}, {0.0}, {0.0}}, tmpl, opt);
    TorusDomain dom{2, kTwoPi, 2};
    SpectralField phi(dom);
    phi[*phi.modes().find({1, 1, 0}, 0)] = 1.0;
    auto e = epsilon_scaling_check(r.cells, 2.5, phi);
    REQUIRE(e.rows.size() == 1);
    CHECK(e.rows[0].included);
    CHECK(e.rows[0].lap_weighted == 0.0);
    CHECK(e.rows[0].p_weighted == 0.0);
    CHECK(e.rows[0].lap_pairing == 0.0);
    CHECK(e.rows[0].dq_norm > 0.0);

    auto t2 = smooth_problem(3, 2.0, 0.0, 0.01);
    t2.integrator.samples = 32;
    auto k = cascade_sweep({{3}, {0.01}, {1e-2, 1e-4, 1e-6}}, t2, opt);
    auto kr = kappa_convergence_check(k.cells, {2.0, 0.0}, {0.01});
    REQUIRE(kr.rows.size() == 3);
    for (const auto& row : kr.rows) {
        CHECK(row.stress_dual <= row.stress_dual_bound * (1 + 1e-9));
        CHECK(row.distance_to_next <= 1e-14);
    }
}

TEST_CASE("trajectory CSV round-trips exactly")
{
    auto p = smooth_problem(2, 2.5, 0.0, 0.01);
    p.integrator.samples = 8;
    auto sys = p.make_system();
    std::mt19937_64 rng(9);
    auto run = poincare_run(sys, random_field(p.domain, rng, 0.2), p.integrator);
    std::stringstream ss;
    write_trajectory_csv(run.record, ss);
    auto back = read_trajectory_csv(ss);
    REQUIRE(back.steps.size() == run.record.steps.size());
    for (std::size_t i = 0; i < back.steps.size(); ++i) {
        CHECK(back.steps[i].t == run.record.steps[i].t);
        CHECK(back.steps[i].energy.kinetic == run.record.steps[i].energy.kinetic);
        CHECK(back.steps[i].energy.dissipation_p == run.record.steps[i].energy.dissipation_p);
    }
    std::stringstream bad("t,kinetic\n1,2\n");
    CHECK_THROWS_AS(read_trajectory_csv(bad), InvalidInput);
    CHECK(format_double(0.1) == "0.1");
}
