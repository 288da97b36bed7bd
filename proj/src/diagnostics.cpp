#include "gnflow/diagnostics.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

namespace gnflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double trapezoid(const std::vector<double>& t, const std::vector<double>& f)
{
    double s = 0.0;
    for (std::size_t i = 1; i < t.size(); ++i) s += 0.5 * (t[i] - t[i - 1]) * (f[i] + f[i - 1]);
    return s;
}

template <class F>
double sample_integral(const TrajectoryRecord& r, F&& value)
{
    std::vector<double> t, f;
    t.reserve(r.samples.size());
    f.reserve(r.samples.size());
    for (const auto& s : r.samples) {
        t.push_back(s.t);
        f.push_back(value(s));
    }
    return trapezoid(t, f);
}

double span_of(const TrajectoryRecord& r)
{
    return r.samples.empty() ? 0.0 : r.samples.back().t - r.samples.front().t;
}

// int |X|^r over the grid for the gradient (or strain) of a steady field.
double grid_power(const std::vector<std::vector<double>>& entries, double cell, double r)
{
    if (entries.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t p = 0; p < entries[0].size(); ++p) {
        double n2 = 0.0;
        for (const auto& e : entries) n2 += e[p] * e[p];
        s += std::pow(n2, 0.5 * r);
    }
    return s * cell;
}

SpectralField random_coefficients(const std::shared_ptr<const ModeTable>& table, std::mt19937_64& rng,
                                  double decay)
{
    std::normal_distribution<double> normal;
    SpectralField f(table);
    const double unit2 = std::pow(table->domain().wavenumber_unit(), 2);
    for (std::size_t m = 0; m < f.size(); ++m) {
        const double w = std::pow(1.0 + table->wavenumber_squared(m) / unit2, -0.5 * decay);
        const double re = normal(rng);
        const double im = normal(rng);
        f[m] = w * Complex{re, im};
    }
    return f;
}

double ratio_with(SpectralTransforms& tr, const SpectralField& v, double q,
                  std::vector<std::vector<double>>& scratch)
{
    tr.strain(v, scratch);
    const double dq = grid_power(scratch, tr.grid().cell_volume(), q);
    if (!(dq > 0.0)) return 0.0;
    return v.norm() / std::pow(dq, 1.0 / q);
}

} // namespace

// ---------------------------------------------------------------------------

double embedding_ratio(const SpectralField& v, double q, double grid_factor)
{
    SpectralTransforms tr(v.table(), grid_points_for(v.domain(), grid_factor));
    std::vector<std::vector<double>> scratch;
    return ratio_with(tr, v, q, scratch);
}

EmbeddingConstants estimate_embedding_constants(const TorusDomain& domain, double q, std::size_t budget,
                                                std::uint64_t seed)
{
    if (budget < 100) throw InvalidInput("embedding sample budget must be >= 100");
    StressParams{q, 0.0}.validate();
    domain.validate();
    auto table = ModeTable::get(domain);
    SpectralTransforms tr(table, grid_points_for(domain, 1.5));
    std::vector<std::vector<double>> scratch;

    double best_ratio = 0.0;
    SpectralField best(table);
    auto consider = [&](const SpectralField& v) {
        const double r = ratio_with(tr, v, q, scratch);
        if (r > best_ratio) {
            best_ratio = r;
            best = v;
        }
    };

    // Lowest single waves first.
    std::size_t used = 0;
    double kmin = kInf;
    for (std::size_t m = 0; m < table->size(); ++m) kmin = std::min(kmin, table->wavenumber_squared(m));
    for (std::size_t m = 0; m < table->size() && used < budget; ++m) {
        if (table->wavenumber_squared(m) > kmin * (1.0 + 1e-12)) continue;
        SpectralField v(table);
        v[m] = 1.0;
        consider(v);
        ++used;
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (std::size_t i = 0; used < budget; ++i, ++used) {
        if (i % 2 == 0) {
            consider(random_coefficients(table, rng, 0.5 + 3.0 * uni(rng)));
        } else {
            const double sigma = best.norm() * std::pow(10.0, -3.0 * uni(rng));
            SpectralField d = random_coefficients(table, rng, 2.0);
            const double dn = d.norm();
            if (dn > 0.0) consider(best + (sigma / dn) * d);
        }
    }
    return EmbeddingConstants::derive(best_ratio, domain, q, budget);
}

// ---------------------------------------------------------------------------

double kappa_source(double q, double kappa) { return kappa > 0.0 ? std::pow(kappa, 0.5 * q) : 0.0; }

EnergyReport verify_energy_inequality(const TrajectoryRecord& r, const EmbeddingConstants& consts, double tolerance)
{
    EnergyReport rep;
    rep.C1 = consts.C1;
    rep.C2 = consts.C2;
    rep.kappa_term = kappa_source(r.q, r.kappa);
    for (std::size_t i = 1; i < r.steps.size(); ++i) {
        const auto c = check_energy_step(r.steps[i - 1], r.steps[i], r.q, consts.C1, consts.C2, rep.kappa_term,
                                         tolerance);
        ++rep.steps_checked;
        if (!c.ok) ++rep.step_violations;
        if (c.slack < rep.worst_step_slack) {
            rep.worst_step_slack = c.slack;
            rep.worst_step_time = r.steps[i].t;
        }
    }
    if (!r.samples.empty()) {
        const auto& s0 = r.samples.front();
        for (std::size_t i = 1; i < r.samples.size(); ++i) {
            const auto& s = r.samples[i];
            const auto& c = s.cumulative;
            const double source = consts.C2 * (c.forcing_dual + rep.kappa_term * (s.t - s0.t));
            const double used = s.energy.kinetic - s0.energy.kinetic + consts.C1 * c.dissipation_q +
                                c.dissipation_lap + c.dissipation_p;
            const double slack = source - used;
            ++rep.samples_checked;
            if (slack < -tolerance) ++rep.sample_violations;
            if (slack < rep.worst_sample_slack) {
                rep.worst_sample_slack = slack;
                rep.worst_sample_time = s.t;
            }
        }
    }
    rep.holds = rep.step_violations == 0 && rep.sample_violations == 0;
    return rep;
}

InterpolationReport interpolation_bound_check(const TrajectoryRecord& r, double q, double tolerance)
{
    InterpolationReport rep;
    double sup = r.max_norm;
    for (const auto& s : r.samples) sup = std::max(sup, s.norm);
    rep.lhs = sample_integral(r, [](const TrajectorySample& s) { return s.audit.velocity_power; });
    rep.rhs = std::pow(sup, 2.0 * q / 3.0) *
              sample_integral(r, [](const TrajectorySample& s) { return s.audit.gradient_q; });
    rep.holds = rep.lhs <= rep.rhs * (1.0 + tolerance) + std::numeric_limits<double>::min();
    return rep;
}

// ---------------------------------------------------------------------------

EpsilonReport epsilon_scaling_check(const std::vector<OrbitCell>& cells, double q, const SpectralField& phi,
                                    double growth_tolerance)
{
    EpsilonReport rep;
    std::vector<const OrbitCell*> order;
    for (const auto& c : cells) order.push_back(&c);
    std::stable_sort(order.begin(), order.end(),
                     [](const OrbitCell* a, const OrbitCell* b) { return a->epsilon > b->epsilon; });

    const double r_lap = 5.0 * q / (5.0 * q - 6.0);
    const double r_p = kRegularizerExponent;
    for (const OrbitCell* c : order) {
        EpsilonRow row;
        row.epsilon = c->epsilon;
        row.included = c->converged && c->error.empty() && !c->trajectory.samples.empty();
        if (!row.included) {
            rep.rows.push_back(row);
            continue;
        }
        const auto& tr = c->trajectory;
        const double T = span_of(tr);
        const auto& cum = tr.samples.back().cumulative;
        const double eps = c->epsilon;
        row.dq_norm = std::pow(cum.dissipation_q, 1.0 / q);
        row.lap_weighted = std::sqrt(cum.dissipation_lap);
        row.p_weighted = std::pow(cum.dissipation_p, 1.0 / r_p);

        const TorusDomain& dom = tr.states.empty() ? phi.domain() : tr.states.front().domain();
        const SpectralField ph = phi.restricted_to(dom);
        const auto g = gradient(ph);
        const auto d = sym_gradient(ph);
        const double grad_phi = std::pow(T * grid_power(g.entries, g.grid.cell_volume(), r_lap), 1.0 / r_lap);
        const double dphi = std::pow(T * grid_power(d.entries, d.grid.cell_volume(), r_p), 1.0 / r_p);
        const double grad_v =
            std::pow(sample_integral(tr, [](const TrajectorySample& s) { return s.audit.gradient_5q6; }),
                     6.0 / (5.0 * q));
        row.lap_pairing = eps * grad_v * grad_phi;
        row.p_pairing = eps > 0.0 ? eps * std::pow(cum.dissipation_p / eps, 1.0 / r_p * (6.0 / 5.0)) * dphi : 0.0;

        if (!tr.states.empty()) {
            const double vol2 = 2.0 * dom.volume();
            std::vector<double> t, f;
            for (std::size_t i = 0; i < tr.states.size(); ++i) {
                const auto& v = tr.states[i];
                double s = 0.0;
                for (std::size_t m = 0; m < v.size(); ++m)
                    s += v.modes().wavenumber_squared(m) * (v[m] * std::conj(ph[m])).real();
                t.push_back(tr.samples[i].t);
                f.push_back(vol2 * s);
            }
            row.lap_direct = std::abs(eps * trapezoid(t, f));
            if (row.lap_direct > row.lap_pairing * (1.0 + 1e-9) + 1e-300) rep.holder_holds = false;
        }
        rep.rows.push_back(row);
    }

    const EpsilonRow* prev = nullptr;
    for (const auto& row : rep.rows) {
        if (!row.included) continue;
        if (prev) {
            auto growth = [&](double a, double b) {
                if (a > 0.0) rep.max_growth = std::max(rep.max_growth, b / a);
            };
            growth(prev->dq_norm, row.dq_norm);
            growth(prev->lap_weighted, row.lap_weighted);
            growth(prev->p_weighted, row.p_weighted);
            if (!(row.lap_pairing < prev->lap_pairing) || !(row.p_pairing < prev->p_pairing))
                rep.pairings_decrease = false;
        }
        prev = &row;
    }
    rep.bounded = rep.max_growth <= 1.0 + growth_tolerance;
    return rep;
}

double orbit_distance(const TrajectoryRecord& a, const TrajectoryRecord& b)
{
    if (a.states.empty() || a.states.size() != b.states.size() || a.samples.size() != a.states.size())
        throw InvalidInput("orbit distance needs matching stored states");
    const TorusDomain& da = a.states.front().domain();
    const TorusDomain& db = b.states.front().domain();
    if (da.dimension != db.dimension || da.side_length != db.side_length)
        throw InvalidInput("orbit distance needs the same torus");
    TorusDomain common = da;
    common.mode_cutoff = std::min(da.mode_cutoff, db.mode_cutoff);
    std::vector<double> t, f;
    for (std::size_t i = 0; i < a.states.size(); ++i) {
        const auto diff = a.states[i].restricted_to(common) - b.states[i].restricted_to(common);
        t.push_back(a.samples[i].t);
        f.push_back(diff.norm_squared());
    }
    return std::sqrt(trapezoid(t, f));
}

namespace {

// (int_0^T int |S_a(Dv_a) - S_b(Dv_b)|^q')^(1/q') on the finer of the two grids.
double stress_distance(const OrbitCell& a, const OrbitCell& b, double q, double grid_factor)
{
    const auto& sa = a.trajectory.states;
    const auto& sb = b.trajectory.states;
    if (sa.empty() || sa.size() != sb.size()) return 0.0;
    TorusDomain dom = sa.front().domain();
    dom.mode_cutoff = std::max(dom.mode_cutoff, sb.front().domain().mode_cutoff);
    const StressParams pa{q, a.kappa}, pb{q, b.kappa};
    const double dual = pa.dual_exponent();
    std::vector<double> t, f;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        const auto da = sym_gradient(sa[i].restricted_to(dom), grid_factor);
        const auto db = sym_gradient(sb[i].restricted_to(dom), grid_factor);
        const std::size_t n = da.grid.size();
        double s = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            double na = 0.0, nb = 0.0;
            for (std::size_t e = 0; e < da.entries.size(); ++e) {
                na += da.entries[e][p] * da.entries[e][p];
                nb += db.entries[e][p] * db.entries[e][p];
            }
            const double fa = stress_factor(na, pa), fb = stress_factor(nb, pb);
            double d2 = 0.0;
            for (std::size_t e = 0; e < da.entries.size(); ++e) {
                const double x = fa * da.entries[e][p] - fb * db.entries[e][p];
                d2 += x * x;
            }
            s += std::pow(d2, 0.5 * dual);
        }
        t.push_back(a.trajectory.samples[i].t);
        f.push_back(s * da.grid.cell_volume());
    }
    return std::pow(trapezoid(t, f), 1.0 / dual);
}

} // namespace

KappaReport kappa_convergence_check(const std::vector<OrbitCell>& cells, const StressParams& base,
                                    const RegularizationParams& reg, double grid_factor)
{
    (void)reg;
    KappaReport rep;
    std::vector<const OrbitCell*> order;
    for (const auto& c : cells)
        if (c.converged && c.error.empty()) order.push_back(&c);
    std::stable_sort(order.begin(), order.end(),
                     [](const OrbitCell* a, const OrbitCell* b) { return a->kappa > b->kappa; });
    const double q = base.q;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto& tr = order[i]->trajectory;
        KappaRow row;
        row.kappa = order[i]->kappa;
        // Same quadrature weights on both sides keep the pointwise bound intact.
        row.stress_dual = sample_integral(tr, [](const TrajectorySample& s) { return s.audit.stress_dual; });
        const double volume = tr.states.empty() ? 0.0 : tr.states.front().domain().volume();
        row.stress_dual_bound =
            kappa_source(q, row.kappa) * volume * span_of(tr) +
            sample_integral(tr, [](const TrajectorySample& s) { return s.energy.dissipation_q; });
        if (row.stress_dual > row.stress_dual_bound * (1.0 + 1e-9)) rep.stress_bounded = false;
        if (i + 1 < order.size()) {
            row.distance_to_next = orbit_distance(tr, order[i + 1]->trajectory);
            row.stress_distance_to_next = stress_distance(*order[i], *order[i + 1], q, grid_factor);
        }
        rep.rows.push_back(row);
    }
    for (std::size_t i = 1; i + 1 < rep.rows.size(); ++i)
        if (!(rep.rows[i].distance_to_next < rep.rows[i - 1].distance_to_next)) rep.distances_decrease = false;
    return rep;
}

// ---------------------------------------------------------------------------

double extinction_bound(const PeriodicProblem& problem, const EmbeddingConstants& consts)
{
    const double q = problem.stress.q;
    if (!(q > kMinPowerLawIndex && q < 2.0))
        throw InvalidInput("extinction needs 6/5 < q < 2 (no finite-time extinction for q >= 2)");
    const auto shutoff = problem.forcing.shutoff();
    if (!shutoff) throw InvalidInput("extinction needs a forcing with a shutoff time");
    const double K_bar = ball_radius(problem.forcing.max_l2(), problem.stress, consts, RadiusVariant::K_bar);
    const double bound = *shutoff + std::pow(K_bar, 2.0 - q) / (consts.alpha * (2.0 - q));
    if (bound > problem.period()) {
        std::ostringstream msg;
        msg << "compatibility violated: t_bar + K_bar^(2-q)/(alpha(2-q)) = " << format_double(bound)
            << " exceeds T = " << format_double(problem.period()) << "; minimal admissible T is "
            << format_double(bound);
        throw CompatibilityError(msg.str(), bound);
    }
    return bound;
}

ExtinctionReport extinction_experiment(const PeriodicProblem& problem_in, const EmbeddingConstants& consts,
                                       double threshold_rel, const SolverConfig& solver_in)
{
    ExtinctionReport rep;
    rep.bound = extinction_bound(problem_in, consts);
    const double q = problem_in.stress.q;
    rep.shutoff = *problem_in.forcing.shutoff();
    rep.K_bar = ball_radius(problem_in.forcing.max_l2(), problem_in.stress, consts, RadiusVariant::K_bar);
    rep.alpha = consts.alpha;
    rep.threshold = threshold_rel * rep.K_bar;
    rep.predicted_slope = -(2.0 - q) * consts.alpha;

    PeriodicProblem problem = problem_in;
    problem.integrator.energy_monitor = true;
    if (problem.integrator.clamp_threshold <= 0.0) problem.integrator.clamp_threshold = 1e-3 * rep.threshold;
    SolverConfig solver = solver_in;
    if (solver.radius <= 0.0)
        solver.radius = ball_radius(problem.forcing.max_l2(), problem.stress, consts, RadiusVariant::K);
    if (!solver.initial_guess) solver.initial_guess = SpectralField(problem.domain);
    const OrbitResult orbit = find_periodic_orbit(problem, solver);
    rep.orbit_residual = orbit.residual;
    rep.orbit_converged = orbit.converged;
    rep.clamp_time = orbit.trajectory.clamp_time;

    const auto& steps = orbit.trajectory.steps;
    const double T = problem.period();
    const double snap = 1e-12 * T;
    std::size_t first = steps.size();
    for (std::size_t i = 0; i < steps.size(); ++i)
        if (steps[i].t >= rep.shutoff - snap) {
            first = i;
            break;
        }
    if (first == steps.size()) throw IntegrationFailure("trajectory does not reach the shutoff time", rep.shutoff);
    auto norm_of = [&](std::size_t i) { return std::sqrt(std::max(steps[i].energy.kinetic, 0.0)); };
    const double e = 2.0 - q;
    rep.norm_at_shutoff = norm_of(first);
    rep.state_bound = rep.shutoff + std::pow(rep.norm_at_shutoff, e) / (consts.alpha * e);

    rep.measured = kInf;
    if (rep.norm_at_shutoff <= rep.threshold) {
        rep.measured = rep.shutoff;
    } else {
        for (std::size_t i = first + 1; i < steps.size(); ++i) {
            if (norm_of(i) > rep.threshold) continue;
            const double y0 = std::pow(norm_of(i - 1), e), y1 = std::pow(norm_of(i), e);
            const double yt = std::pow(rep.threshold, e);
            const double w = y0 > y1 ? (y0 - yt) / (y0 - y1) : 1.0;
            rep.measured = steps[i - 1].t + w * (steps[i].t - steps[i - 1].t);
            break;
        }
    }
    rep.extinct = std::isfinite(rep.measured);
    rep.within_bound = rep.extinct && rep.measured >= rep.shutoff && rep.measured <= rep.bound;

    auto fit = [&](double lo, double hi) {
        std::vector<double> t, y;
        for (std::size_t i = first; i < steps.size(); ++i) {
            if (steps[i].t < lo || steps[i].t > hi) continue;
            const double n = norm_of(i);
            if (!(n > 0.0)) continue;
            t.push_back(steps[i].t);
            y.push_back(std::pow(n, e));
        }
        rep.fit_window_start = lo;
        rep.fit_window_end = hi;
        rep.fit_points = t.size();
        if (t.size() < 2) return;
        const double nt = static_cast<double>(t.size());
        const double mt = std::accumulate(t.begin(), t.end(), 0.0) / nt;
        const double my = std::accumulate(y.begin(), y.end(), 0.0) / nt;
        double stt = 0.0, sty = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            stt += (t[i] - mt) * (t[i] - mt);
            sty += (t[i] - mt) * (y[i] - my);
            syy += (y[i] - my) * (y[i] - my);
        }
        if (stt <= 0.0) return;
        rep.fit_slope = sty / stt;
        rep.fit_r2 = syy > 0.0 ? sty * sty / (stt * syy) : 1.0;
    };
    const double hi = std::min(rep.measured, rep.bound);
    fit(rep.shutoff + 0.05 * (rep.bound - rep.shutoff), hi);
    if (rep.fit_points < 5 && rep.extinct) {
        rep.fit_window_fallback = true;
        fit(rep.shutoff, rep.measured);
    }
    return rep;
}

ScalarExtinction scalar_extinction(double y0, double alpha, double q, double floor_rel, double rel_tol)
{
    if (!(q > 1.0 && q < 2.0) || !(alpha > 0.0) || !(y0 > 0.0) || !(floor_rel > 0.0))
        throw InvalidInput("scalar extinction needs 1 < q < 2, alpha > 0, y0 > 0, floor > 0");
    ScalarExtinction out;
    const double e = 2.0 - q;
    out.exact = std::pow(y0, e) / (alpha * e);
    const double floor = floor_rel * y0;

    IntegratorConfig cfg;
    cfg.rel_tol = rel_tol;
    cfg.abs_tol = 1e-16 * y0;
    cfg.max_dt = out.exact / 20.0;
    cfg.min_dt = 1e-15 * out.exact;
    cfg.samples = 1;
    cfg.energy_monitor = false;
    cfg.scheme = Scheme::explicit_adaptive;

    double t_prev = 0.0, u_prev = 0.0, t_last = 0.0, u_last = std::pow(y0, e);
    bool found = false;
    CoreHooks hooks;
    hooks.rhs = [&](double, std::span<const Complex> y, std::span<Complex> dst) {
        dst[0] = -alpha * std::pow(std::abs(y[0].real()), q - 1.0);
    };
    hooks.norm = [](std::span<const Complex> y) { return std::abs(y[0]); };
    hooks.on_accept = [&](double t, std::span<Complex> y) {
        if (found || t == 0.0) return;
        const double cur = y[0].real();
        if (cur >= floor) {
            t_prev = t_last;
            u_prev = u_last;
            t_last = t;
            u_last = std::pow(cur, e);
            return;
        }
        out.measured = t_last + u_last * (t_last - t_prev) / (u_prev - u_last);
        found = true;
    };
    hooks.on_sample = [](int, double, std::span<const Complex>) {};
    std::vector<Complex> y{Complex{y0, 0.0}};
    integrate_core(y, {}, 0.0, 2.0 * out.exact, cfg, hooks);
    if (!found) throw IntegrationFailure("scalar surrogate did not reach the floor", 2.0 * out.exact);
    out.relative_error = std::abs(out.measured - out.exact) / out.exact;
    return out;
}

// ---------------------------------------------------------------------------

OrbitCell solve_cell(const CellKey& key, const PeriodicProblem& tmpl, const SweepOptions& options)
{
    OrbitCell cell;
    cell.n_max = key.n_max;
    cell.epsilon = key.epsilon;
    cell.kappa = key.kappa;
    try {
        TorusDomain dom = tmpl.domain;
        dom.mode_cutoff = key.n_max;
        PeriodicProblem p{dom, {tmpl.stress.q, key.kappa}, {key.epsilon}, tmpl.forcing.on_domain(dom),
                          tmpl.grid_factor, tmpl.integrator};
        p.integrator.audit = true;
        p.integrator.store_states = true;
        p.integrator.energy_monitor = true;
        const auto consts = estimate_embedding_constants(dom, p.stress.q, options.embedding_budget, options.seed);
        SolverConfig solver = options.solver;
        solver.initial_guess.reset();
        cell.ball_radius = ball_radius(p.forcing.max_l2(), p.stress, consts, RadiusVariant::K);
        solver.radius = cell.ball_radius;
        auto r = find_periodic_orbit(p, solver);
        cell.converged = r.converged;
        cell.residual = r.residual;
        cell.method = to_string(r.method);
        cell.trajectory = std::move(r.trajectory);
    } catch (const std::exception& e) {
        cell.converged = false;
        cell.error = e.what();
    }
    return cell;
}

CascadeReport cascade_sweep(const SweepAxes& axes_in, const PeriodicProblem& tmpl, const SweepOptions& options)
{
    CascadeReport rep;
    rep.axes = axes_in;
    auto& ax = rep.axes;
    if (ax.n_max.empty() || ax.epsilon.empty() || ax.kappa.empty()) throw InvalidInput("sweep axes must be nonempty");
    auto uniq = [](auto& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    uniq(ax.n_max);
    uniq(ax.epsilon);
    uniq(ax.kappa);

    std::vector<CellKey> keys;
    for (int n : ax.n_max)
        for (double e : ax.epsilon)
            for (double k : ax.kappa) keys.push_back({n, e, k});
    rep.cells.resize(keys.size());

    std::atomic<std::size_t> next{0};
    std::mutex store_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < keys.size(); i = next++) {
            if (options.load) {
                std::optional<OrbitCell> cached;
                {
                    std::lock_guard lock(store_mutex);
                    cached = options.load(keys[i]);
                }
                if (cached) {
                    rep.cells[i] = std::move(*cached);
                    continue;
                }
            }
            rep.cells[i] = solve_cell(keys[i], tmpl, options);
            if (options.store) {
                std::lock_guard lock(store_mutex);
                options.store(rep.cells[i]);
            }
        }
    };
    const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(keys.size())));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    const std::size_t ne = ax.epsilon.size(), nk = ax.kappa.size();
    auto idx = [&](std::size_t a, std::size_t b, std::size_t c) { return (a * ne + b) * nk + c; };
    auto add = [&](const char* axis, std::size_t i, std::size_t j) {
        const auto& a = rep.cells[i];
        const auto& b = rep.cells[j];
        if (!a.converged || !b.converged || !a.error.empty() || !b.error.empty()) return;
        rep.distances.push_back({axis, keys[i], keys[j], orbit_distance(a.trajectory, b.trajectory)});
    };
    for (std::size_t a = 0; a < ax.n_max.size(); ++a)
        for (std::size_t b = 0; b < ne; ++b)
            for (std::size_t c = 0; c < nk; ++c) {
                if (a + 1 < ax.n_max.size()) add("n_max", idx(a, b, c), idx(a + 1, b, c));
                if (b + 1 < ne) add("epsilon", idx(a, b, c), idx(a, b + 1, c));
                if (c + 1 < nk) add("kappa", idx(a, b, c), idx(a, b, c + 1));
            }
    return rep;
}

// ---------------------------------------------------------------------------

std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

namespace {

nlohmann::json number(double x)
{
    if (std::isfinite(x)) return x;
    return format_double(x);
}

} // namespace

nlohmann::json to_json(const EmbeddingConstants& c)
{
    return {{"q", c.q},   {"embedding", c.embedding}, {"C_S", c.C_S}, {"C_P", c.C_P},
            {"C_K", c.C_K}, {"C3", c.C3},            {"C1", c.C1},   {"C2", c.C2},
            {"alpha", c.alpha}, {"sample_budget", c.sample_budget}};
}

nlohmann::json to_json(const EnergyReport& r)
{
    return {{"holds", r.holds},
            {"steps_checked", r.steps_checked},
            {"step_violations", r.step_violations},
            {"worst_step_slack", number(r.worst_step_slack)},
            {"worst_step_time", r.worst_step_time},
            {"samples_checked", r.samples_checked},
            {"sample_violations", r.sample_violations},
            {"worst_sample_slack", number(r.worst_sample_slack)},
            {"worst_sample_time", r.worst_sample_time},
            {"C1", r.C1},
            {"C2", r.C2},
            {"kappa_term", r.kappa_term}};
}

nlohmann::json to_json(const InterpolationReport& r)
{
    return {{"holds", r.holds}, {"lhs_int_v_5q3", r.lhs}, {"rhs_sup_v_2q3_int_grad_q", r.rhs}};
}

nlohmann::json to_json(const EpsilonReport& r)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"epsilon", x.epsilon},
                        {"included", x.included},
                        {"Dv_Lq", x.dq_norm},
                        {"eps_half_grad_v_L2", x.lap_weighted},
                        {"eps_5_11_Dv_L11_5", x.p_weighted},
                        {"lap_pairing", x.lap_pairing},
                        {"p_pairing", x.p_pairing},
                        {"lap_direct", x.lap_direct}});
    return {{"rows", rows},
            {"max_growth", r.max_growth},
            {"bounded", r.bounded},
            {"pairings_decrease", r.pairings_decrease},
            {"holder_holds", r.holder_holds}};
}

nlohmann::json to_json(const KappaReport& r)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"kappa", x.kappa},
                        {"stress_dual", x.stress_dual},
                        {"stress_dual_bound", x.stress_dual_bound},
                        {"distance_to_next", x.distance_to_next},
                        {"stress_distance_to_next", x.stress_distance_to_next}});
    return {{"rows", rows}, {"distances_decrease", r.distances_decrease}, {"stress_bounded", r.stress_bounded}};
}

nlohmann::json to_json(const ExtinctionReport& r)
{
    nlohmann::json j = {{"t_bar", r.shutoff},
                        {"t_meas", number(r.measured)},
                        {"t_bar_v", r.bound},
                        {"state_bound", r.state_bound},
                        {"threshold", r.threshold},
                        {"K_bar", r.K_bar},
                        {"alpha", r.alpha},
                        {"norm_at_shutoff", r.norm_at_shutoff},
                        {"extinct", r.extinct},
                        {"within_bound", r.within_bound},
                        {"fit_slope", r.fit_slope},
                        {"fit_r2", r.fit_r2},
                        {"predicted_slope", r.predicted_slope},
                        {"fit_window", {r.fit_window_start, r.fit_window_end}},
                        {"fit_points", r.fit_points},
                        {"fit_window_fallback", r.fit_window_fallback},
                        {"orbit_residual", r.orbit_residual},
                        {"orbit_converged", r.orbit_converged}};
    j["clamp_time"] = r.clamp_time ? nlohmann::json(*r.clamp_time) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json orbit_summary_json(const OrbitCell& c)
{
    nlohmann::json j = {{"n_max", c.n_max},       {"epsilon", c.epsilon},   {"kappa", c.kappa},
                        {"converged", c.converged}, {"residual", c.residual}, {"ball_radius", number(c.ball_radius)},
                        {"method", c.method},     {"error", c.error}};
    const auto& tr = c.trajectory;
    if (!tr.samples.empty()) {
        double sup = tr.max_norm;
        for (const auto& s : tr.samples) sup = std::max(sup, s.norm);
        const auto& cum = tr.samples.back().cumulative;
        j["sup_norm"] = sup;
        j["int_dissipation_q"] = cum.dissipation_q;
        j["int_dissipation_lap"] = cum.dissipation_lap;
        j["int_dissipation_p"] = cum.dissipation_p;
        j["int_power_in"] = cum.power_in;
        j["Dv_Lq"] = std::pow(cum.dissipation_q, 1.0 / tr.q);
        j["eps_half_grad_v_L2"] = std::sqrt(cum.dissipation_lap);
        j["eps_5_11_Dv_L11_5"] = std::pow(cum.dissipation_p, 1.0 / kRegularizerExponent);
    }
    return j;
}

nlohmann::json to_json(const CascadeReport& r)
{
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.cells) cells.push_back(orbit_summary_json(c));
    nlohmann::json d = nlohmann::json::array();
    for (const auto& x : r.distances)
        d.push_back({{"axis", x.axis},
                     {"from", {x.from.n_max, x.from.epsilon, x.from.kappa}},
                     {"to", {x.to.n_max, x.to.epsilon, x.to.kappa}},
                     {"distance_L2L2", x.distance}});
    return {{"axes", {{"n_max", r.axes.n_max}, {"epsilon", r.axes.epsilon}, {"kappa", r.axes.kappa}}},
            {"cells", cells},
            {"distances", d}};
}

void write_trajectory_csv(const TrajectoryRecord& r, std::ostream& out)
{
    out << "t,kinetic,dissipation_q,dissipation_lap,dissipation_p,power_in\n";
    auto row = [&](double t, const EnergyTerms& e) {
        out << format_double(t) << ',' << format_double(e.kinetic) << ',' << format_double(e.dissipation_q) << ','
            << format_double(e.dissipation_lap) << ',' << format_double(e.dissipation_p) << ','
            << format_double(e.power_in) << '\n';
    };
    if (!r.steps.empty())
        for (const auto& s : r.steps) row(s.t, s.energy);
    else
        for (const auto& s : r.samples) row(s.t, s.energy);
}

void write_audit_csv(const TrajectoryRecord& r, std::ostream& out)
{
    out << "t,velocity_power_5q3,gradient_q,gradient_5q6,stress_dual,norm_l2\n";
    for (const auto& s : r.samples)
        out << format_double(s.t) << ',' << format_double(s.audit.velocity_power) << ','
            << format_double(s.audit.gradient_q) << ',' << format_double(s.audit.gradient_5q6) << ','
            << format_double(s.audit.stress_dual) << ',' << format_double(s.norm) << '\n';
}

namespace {

std::vector<double> parse_row(const std::string& line, std::size_t expected, std::size_t line_no)
{
    std::vector<double> v;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        const std::size_t end = std::min(line.find(',', pos), line.size());
        double x = 0.0;
        const char* b = line.data() + pos;
        const char* e = line.data() + end;
        auto res = std::from_chars(b, e, x);
        if (res.ec != std::errc{} || res.ptr != e) {
            const std::string tok(b, e);
            if (tok == "inf") x = kInf;
            else if (tok == "-inf") x = -kInf;
            else if (tok == "nan") x = std::numeric_limits<double>::quiet_NaN();
            else throw InvalidInput("CSV line " + std::to_string(line_no) + ": bad number '" + tok + "'");
        }
        v.push_back(x);
        pos = end + 1;
    }
    if (v.size() != expected)
        throw InvalidInput("CSV line " + std::to_string(line_no) + ": expected " +
                           std::to_string(expected) + " columns");
    return v;
}

} // namespace

TrajectoryRecord read_trajectory_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != "t,kinetic,dissipation_q,dissipation_lap,dissipation_p,power_in")
        throw InvalidInput("trajectory CSV: unexpected header");
    TrajectoryRecord r;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto v = parse_row(line, 6, line_no);
        StepEntry s;
        s.t = v[0];
        s.energy.kinetic = v[1];
        s.energy.dissipation_q = v[2];
        s.energy.dissipation_lap = v[3];
        s.energy.dissipation_p = v[4];
        s.energy.power_in = v[5];
        r.steps.push_back(s);
    }
    return r;
}

std::vector<TrajectorySample> read_audit_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != "t,velocity_power_5q3,gradient_q,gradient_5q6,stress_dual,norm_l2")
        throw InvalidInput("audit CSV: unexpected header");
    std::vector<TrajectorySample> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto v = parse_row(line, 6, line_no);
        TrajectorySample s;
        s.t = v[0];
        s.audit.velocity_power = v[1];
        s.audit.gradient_q = v[2];
        s.audit.gradient_5q6 = v[3];
        s.audit.stress_dual = v[4];
        s.norm = v[5];
        out.push_back(s);
    }
    return out;
}

} // namespace gnflow
