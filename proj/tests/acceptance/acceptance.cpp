// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Canonical configurations live in configs/.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "gnflow/cli_runner.hpp"
#include "oracles/dense_galerkin.hpp"
#include "oracles/linear_orbit.hpp"
#include "support.hpp"

using namespace gnflow;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = GNFLOW_CONFIG_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int failures = 0;

void run(int id, const char* name, double limit_seconds, const std::function<Outcome()>& body)
{
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= limit_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failures;
    std::printf("%s criterion %2d: %s | %s | %.1f s (limit %.0f s)%s\n", pass ? "PASS" : "FAIL", id, name,
                o.detail.c_str(), secs, limit_seconds, in_time ? "" : " TIMEOUT");
    std::fflush(stdout);
}

EmbeddingConstants constants_for(const cli::ExperimentConfig& c)
{
    return estimate_embedding_constants(c.domain, c.stress.q, c.embedding_budget, c.seed);
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Runs shared between criteria.
struct Shared {
    std::vector<TrajectoryRecord> energy_runs;  // criteria 3-5
    std::vector<EmbeddingConstants> energy_consts;
    std::vector<std::string> energy_labels;
} shared;

Outcome rhs_oracle()
{
    std::mt19937_64 rng(101);
    const TorusDomain dom{2, 2 * std::numbers::pi, 1};
    std::vector<ForcingTerm> terms{{{1, 0, 0}, 0, {0.8, 0.0}, {ProfileKind::sine, 1, 0.0}},
                                   {{1, 1, 0}, 0, {0.0, 0.5}, {ProfileKind::cosine, 2, 0.3}}};
    const ForcingSignal forcing(dom, 1.0, terms);
    double worst = 0.0;
    int states = 0;
    for (double q : {1.5, 2.0, 2.5}) {
        const StressParams sp{q, 0.05};
        const RegularizationParams reg{0.02};
        GalerkinSystem sys(dom, sp, reg, forcing);
        oracle::DenseGalerkin dense(dom, sp, reg, 16, sys.grid().points);
        for (int r = 0; r < 50; ++r, ++states) {
            const double t = std::uniform_real_distribution<double>(0, 1)(rng);
            const auto v = testing::random_field(dom, rng, std::pow(10.0, std::uniform_real_distribution<double>(-2, 1)(rng)));
            const auto got = dense.coordinates(sys.full_rhs(t, v));
            const auto a = dense.coordinates(v);
            const auto conv = dense.convection(a);
            const auto visc = dense.viscous(a);
            const auto b = dense.coordinates(forcing.evaluate(t));
            double err = 0.0, scale = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double want = conv[k] + visc[k] + b[k];
                err = std::max(err, std::abs(got[k] - want));
                scale = std::max(scale, std::abs(want));
            }
            worst = std::max(worst, err / scale);
        }
    }
    return {worst <= 1e-11, fmt("%d states, worst relative error %.2e (<= 1e-11)", states, worst)};
}

Outcome skew_symmetry()
{
    std::mt19937_64 rng(202);
    double worst = 0.0;
    int fields = 0;
    for (int n : {4, 8})
        for (int d : {2, 3}) {
            const TorusDomain dom{d, 2 * std::numbers::pi, n};
            GalerkinSystem sys(dom, {2.0, 0.0}, {0.0}, ForcingSignal::zero(dom, 1.0));
            for (int r = 0; r < 100; ++r, ++fields) {
                const auto v = testing::random_field(dom, rng, 1.0, std::uniform_real_distribution<double>(0, 2)(rng));
                const auto c = sys.convection_rhs(v);
                worst = std::max(worst, std::abs(c.inner(v)) / (v.norm() * c.norm()));
            }
        }
    return {worst <= 1e-11, fmt("%d fields (n_max 4, 8; d = 2, 3), worst |<B(v),v>|/(|v||B(v)|) %.2e", fields, worst)};
}

Outcome linear_orbit()
{
    const auto cfg = cli::load_config(kConfigs / "linear_q2.json");
    auto problem = cfg.problem();
    problem.integrator.store_states = true;
    const auto consts = constants_for(cfg);
    SolverConfig solver = cfg.solver;
    solver.radius = ball_radius(problem.forcing.max_l2(), cfg.stress, consts, RadiusVariant::K);
    const auto r = find_periodic_orbit(problem, solver);
    if (!r.converged) return {false, "not converged"};
    GalerkinSystem sys = problem.make_system();
    const auto run = poincare_run(sys, r.initial_state, problem.integrator);
    const auto& term = cfg.forcing_terms.at(0);
    const auto m = *r.initial_state.modes().find(term.k, 0);
    const double nu = 0.5 * r.initial_state.modes().wavenumber_squared(m);
    const double omega = 2 * std::numbers::pi / cfg.period;
    double worst = 0.0;
    for (std::size_t i = 0; i < run.record.states.size(); ++i) {
        SpectralField exact(cfg.domain);
        exact[m] = oracle::periodic_solution(term.amplitude, nu, omega, run.record.samples[i].t);
        worst = std::max(worst, (run.record.states[i] - exact).norm());
    }
    shared.energy_runs.push_back(r.trajectory);
    shared.energy_consts.push_back(consts);
    shared.energy_labels.push_back("criterion 3");
    return {worst <= 1e-7, fmt("max L2 error over %zu sample states %.2e (<= 1e-7)", run.record.states.size(), worst)};
}

struct FixedPoint {
    cli::ExperimentConfig cfg;
    PeriodicProblem problem;
    EmbeddingConstants consts;
    double K;
    OrbitResult orbit;
};
std::optional<FixedPoint> fixed_point;

Outcome fixed_point_quality()
{
    auto cfg = cli::load_config(kConfigs / "fixed_point_q25.json");
    auto problem = cfg.problem();
    const auto consts = constants_for(cfg);
    const double K = ball_radius(problem.forcing.max_l2(), cfg.stress, consts, RadiusVariant::K);
    SolverConfig solver = cfg.solver;
    solver.radius = K;
    auto orbit = find_periodic_orbit(problem, solver);
    FixedPoint fp{std::move(cfg), std::move(problem), consts, K, std::move(orbit)};
    const double tol = 1e-8 * std::max(1.0, fp.K);
    if (!fp.orbit.converged) return {false, fmt("not converged, residual %.3e", fp.orbit.residual)};

    auto tight = fp.problem;
    tight.integrator.rel_tol /= 10;
    tight.integrator.abs_tol /= 10;
    const double recheck = (poincare_map(fp.orbit.initial_state, tight) - fp.orbit.initial_state).norm();
    const bool ok = fp.orbit.residual <= tol && recheck <= 10 * fp.orbit.residual;
    shared.energy_runs.push_back(fp.orbit.trajectory);
    shared.energy_consts.push_back(fp.consts);
    shared.energy_labels.push_back("criterion 4");
    const std::string detail =
        fmt("K = %.4f, residual %.3e <= %.3e (%s), 10x tighter tolerance residual %.3e (growth %.2f <= 10)", fp.K,
            fp.orbit.residual, tol, to_string(fp.orbit.method).c_str(), recheck, recheck / fp.orbit.residual);
    fixed_point.emplace(std::move(fp));
    return {ok, detail};
}

Outcome ball_invariance()
{
    if (!fixed_point) return {false, "criterion 4 did not produce its setup"};
    const auto& fp = *fixed_point;
    std::mt19937_64 rng(fp.cfg.seed + 500);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GalerkinSystem sys = fp.problem.make_system();
    double worst = 0.0;
    int violations = 0;
    const int starts = 100;
    for (int s = 0; s < starts; ++s) {
        auto v = testing::random_field(fp.cfg.domain, rng, 1.0, 0.5 + 2.0 * u(rng));
        // a tenth of the starts sit on the sphere ||v|| = K, the rest inside
        const double r = s % 10 == 0 ? 1.0 : std::cbrt(u(rng));
        v *= r * fp.K / v.norm();
        const auto run = poincare_run(sys, v, fp.problem.integrator);
        const auto check = ball_invariance_check(run.record, fp.K, 1e-8);
        if (!check.holds) ++violations;
        worst = std::max(worst, check.max_norm / fp.K);
        shared.energy_runs.push_back(run.record);
        shared.energy_consts.push_back(fp.consts);
        shared.energy_labels.push_back("criterion 5 start " + std::to_string(s));
    }
    return {violations == 0, fmt("%d starts in B_K, K = %.4f, max sup_t ||v||/K = %.10f, violations %d", starts, fp.K,
                                 worst, violations)};
}

Outcome energy_inequality()
{
    if (shared.energy_runs.size() < 102) return {false, "criteria 3-5 did not produce all runs"};
    std::size_t steps = 0, samples = 0, violations = 0;
    double worst = INFINITY;
    std::string worst_label;
    for (std::size_t i = 0; i < shared.energy_runs.size(); ++i) {
        const auto rep = verify_energy_inequality(shared.energy_runs[i], shared.energy_consts[i], 0.0);
        steps += rep.steps_checked;
        samples += rep.samples_checked;
        violations += rep.step_violations + rep.sample_violations;
        const double w = std::min(rep.worst_step_slack, rep.worst_sample_slack);
        if (w < worst) {
            worst = w;
            worst_label = shared.energy_labels[i];
        }
        if (shared.energy_runs[i].samples.size() != 513) ++violations;
    }
    return {violations == 0,
            fmt("%zu runs, %zu steps, %zu sample points, violations %zu, min slack %.3e (%s)",
                shared.energy_runs.size(), steps, samples, violations, worst, worst_label.c_str())};
}

Outcome extinction()
{
    const auto cfg = cli::load_config(kConfigs / "extinction_q15.json");
    const auto problem = cfg.problem();
    const auto consts = constants_for(cfg);
    const auto rep = extinction_experiment(problem, consts, cfg.extinction_threshold, cfg.solver);
    double worst_scalar = 0.0;
    for (double y0 : {1.0, rep.norm_at_shutoff, rep.K_bar})
        worst_scalar = std::max(worst_scalar, scalar_extinction(y0, consts.alpha, cfg.stress.q).relative_error);
    const bool ok = rep.orbit_converged && rep.within_bound && rep.fit_r2 >= 0.99 && worst_scalar <= 1e-6;
    return {ok, fmt("t_bar %.2f <= t_meas %.4f <= bound %.2f; fit R^2 %.5f (>= 0.99); scalar surrogate rel. error %.1e",
                    rep.shutoff, rep.measured, rep.bound, rep.fit_r2, worst_scalar)};
}

CascadeReport sweep_of(const cli::ExperimentConfig& cfg)
{
    SweepOptions so;
    so.solver = cfg.solver;
    so.embedding_budget = cfg.embedding_budget;
    so.seed = cfg.seed;
    return cascade_sweep(*cfg.sweep, cfg.problem(), so);
}

Outcome epsilon_scaling()
{
    const auto cfg = cli::load_config(kConfigs / "epsilon_cascade_q15.json");
    const auto rep = sweep_of(cfg);
    for (const auto& c : rep.cells)
        if (!c.converged) return {false, fmt("cell eps = %g did not converge", c.epsilon)};
    SpectralField phi(cfg.domain);
    phi[*phi.modes().find({1, 1, 0}, 0)] = 1.0;
    phi[*phi.modes().find({0, 1, 0}, 0)] = Complex{0.3, 0.2};
    const auto r = epsilon_scaling_check(rep.cells, cfg.stress.q, phi, 0.25);
    std::string pairs;
    for (const auto& row : r.rows) pairs += fmt(" %.3e/%.3e", row.lap_pairing, row.p_pairing);
    return {r.bounded && r.pairings_decrease && r.holder_holds,
            fmt("max growth %.4f (<= 1.25), pairings (lap/p) by decreasing eps:%s, Hoelder %s", r.max_growth,
                pairs.c_str(), r.holder_holds ? "holds" : "violated")};
}

Outcome kappa_cascade()
{
    const auto cfg = cli::load_config(kConfigs / "kappa_cascade_q15.json");
    const auto rep = sweep_of(cfg);
    for (const auto& c : rep.cells)
        if (!c.converged) return {false, fmt("cell kappa = %g did not converge", c.kappa)};
    const auto r = kappa_convergence_check(rep.cells, cfg.stress, {cfg.sweep->epsilon.at(0)}, cfg.grid_factor);
    std::string dist;
    for (std::size_t i = 0; i + 1 < r.rows.size(); ++i)
        dist += fmt(" d(%g,%g) = %.3e", r.rows[i].kappa, r.rows[i + 1].kappa, r.rows[i].distance_to_next);
    return {r.distances_decrease, fmt("L2L2 distances:%s; stress bound %s", dist.c_str(),
                                      r.stress_bounded ? "holds" : "violated")};
}

Outcome stress_law()
{
    std::mt19937_64 rng(303);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> mag(-3.0, 3.0);
    auto random_symmetric = [&](double scale) {
        Tensor t{};
        for (int i = 0; i < 3; ++i)
            for (int j = i; j < 3; ++j) t[i * 3 + j] = t[j * 3 + i] = scale * g(rng);
        return t;
    };
    std::size_t pairs = 0, violations = 0;
    double worst_h = 0.0;
    for (double q : {1.3, 1.5, 2.0, 2.5})
        for (double kappa : {0.0, 1e-3, 1.0})
            for (int n = 0; n < 10000; ++n, ++pairs) {
                const double s = std::pow(10.0, mag(rng));
                if (monotonicity_gap(random_symmetric(s), random_symmetric(s), {q, kappa}) < 0.0) ++violations;
            }
    for (double q : {1.3, 1.5, 2.0, 2.5})
        for (int n = 0; n < 1000; ++n) {
            const Tensor d = random_symmetric(1.0);
            const double lambda = std::pow(10.0, mag(rng));
            Tensor ld = d;
            for (auto& x : ld) x *= lambda;
            const Tensor lhs = evaluate_stress(ld, {q, 0.0});
            const Tensor s = evaluate_stress(d, {q, 0.0});
            const double f = std::pow(lambda, q - 1.0);
            double num = 0.0, den = 0.0;
            for (int i = 0; i < 9; ++i) {
                num = std::max(num, std::abs(lhs[i] - f * s[i]));
                den = std::max(den, std::abs(f * s[i]));
            }
            worst_h = std::max(worst_h, num / den);
        }
    return {violations == 0 && worst_h <= 1e-12,
            fmt("%zu pairs, negative gaps %zu; homogeneity worst relative error %.2e (<= 1e-12)", pairs, violations,
                worst_h)};
}

Outcome determinism()
{
    const fs::path root = fs::temp_directory_path() / "gnflow_acceptance_determinism";
    fs::remove_all(root);
    cli::RunOptions o;
    o.config = kConfigs / "fixed_point_q25.json";
    std::ostringstream log;
    o.out = root / "a";
    const int rc_a = cli::cmd_solve_periodic(o, log);
    o.out = root / "b";
    const int rc_b = cli::cmd_solve_periodic(o, log);
    const std::string a = slurp(root / "a/orbit.json"), b = slurp(root / "b/orbit.json");
    const bool same = !a.empty() && a == b;
    const bool csv_same = slurp(root / "a/trajectory.csv") == slurp(root / "b/trajectory.csv");
    const std::string digest = cli::sha256_hex(a);
    fs::remove_all(root);
    return {rc_a == 0 && rc_b == 0 && same && csv_same,
            fmt("two runs, exit %d/%d, orbit.json %s (sha256 %.16s...), trajectory.csv %s", rc_a, rc_b,
                same ? "bit-identical" : "DIFFERS", digest.c_str(), csv_same ? "bit-identical" : "DIFFERS")};
}

} // namespace

int main()
{
    run(1, "RHS agrees with the dense tensor oracle", 10, rhs_oracle);
    run(2, "convection skew-symmetry", 30, skew_symmetry);
    run(3, "linear closed-form orbit", 10, linear_orbit);
    run(4, "fixed-point quality at q = 2.5, n_max = 8", 300, fixed_point_quality);
    run(5, "ball invariance from 100 random starts", 600, ball_invariance);
    run(6, "energy inequality on every accepted step and sample", 60, energy_inequality);
    run(7, "extinction bound and post-shutoff fit", 300, extinction);
    run(8, "eps-scaling uniformity", 900, epsilon_scaling);
    run(9, "kappa-cascade distances", 900, kappa_cascade);
    run(10, "stress-law monotonicity and homogeneity", 5, stress_law);
    run(11, "determinism of the orbit JSON", 600, determinism);
    std::printf("%d of 11 criteria passed\n", 11 - failures);
    return failures == 0 ? 0 : 1;
}
