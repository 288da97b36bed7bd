#include "gnflow/periodic_finder.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "gnflow/error.hpp"

namespace gnflow {

EmbeddingConstants EmbeddingConstants::derive(double embedding, const TorusDomain& domain, double q,
                                              std::size_t budget)
{
    if (!(embedding > 0.0) || !std::isfinite(embedding)) throw InvalidInput("embedding ratio must be positive");
    EmbeddingConstants c;
    c.q = q;
    c.embedding = embedding;
    c.sample_budget = budget;
    c.C_S = std::pow(embedding, -q);
    c.C_P = domain.side_length / (2.0 * std::numbers::pi);
    c.C_K = std::numbers::sqrt2;
    c.C3 = std::pow(domain.wavenumber_unit(), 2);
    c.C1 = 0.5;
    // Young: 2 ||b|| c_emb ||Dv||_q <= (2 c_emb)^q' ||b||^q' / q' + ||Dv||_q^q / q.
    const double dual = q / (q - 1.0);
    c.C2 = std::pow(2.0 * embedding, dual) / dual;
    // For q < 2, S:D >= 2^((q-2)/2)(|D|^q - kappa^(q/2)); the kappa remainder is
    // 2^(q/2) |Omega| kappa^(q/2) and is covered by the same C2.
    if (q < 2.0) c.C2 = std::max(c.C2, std::pow(2.0, 0.5 * q) * domain.volume());
    c.alpha = c.C1 * c.C_S;
    return c;
}

GalerkinSystem PeriodicProblem::make_system() const
{
    return GalerkinSystem(domain, stress, reg, forcing, grid_factor);
}

IntegrationResult poincare_run(GalerkinSystem& system, const SpectralField& v0, const IntegratorConfig& config)
{
    return integrate(system, {0.0, v0}, system.forcing().period(), config);
}

SpectralField poincare_map(const SpectralField& v0, const PeriodicProblem& problem)
{
    GalerkinSystem sys = problem.make_system();
    IntegratorConfig cfg = problem.integrator;
    cfg.energy_monitor = false;
    return poincare_run(sys, v0, cfg).state.field;
}

double ball_radius(double forcing_max_l2, const StressParams& stress, const EmbeddingConstants& consts,
                   RadiusVariant variant)
{
    const double q = stress.q;
    const double dual = q / (q - 1.0);
    double source = std::pow(forcing_max_l2, dual);
    if (variant == RadiusVariant::K_bar)
        source += 1.0;
    else if (stress.kappa > 0.0)
        source += std::pow(stress.kappa, 0.5 * q);
    return std::pow(consts.C2 * source / (consts.C1 * consts.C_S), 1.0 / q);
}

BallCheck ball_invariance_check(const TrajectoryRecord& trajectory, double radius, double tol)
{
    BallCheck c;
    c.max_norm = trajectory.max_norm;
    for (const auto& s : trajectory.samples) c.max_norm = std::max(c.max_norm, s.norm);
    c.holds = c.max_norm <= radius * (1.0 + tol);
    c.excursion = radius > 0.0 ? c.max_norm / radius - 1.0 : (c.max_norm > 0.0 ? INFINITY : 0.0);
    return c;
}

double trilinear_bound(const TorusDomain& domain)
{
    const double kmax = domain.wavenumber_unit() * domain.mode_cutoff * std::sqrt(double(domain.dimension));
    return std::pow(2.0, 1.5) * kmax / std::sqrt(domain.volume());
}

ContractionReport contraction_ratio(const SpectralField& v0, const SpectralField& z0, const PeriodicProblem& problem,
                                    const EmbeddingConstants& consts)
{
    const double gap = (v0 - z0).norm();
    if (gap == 0.0) throw InvalidInput("contraction ratio needs two distinct initial states");
    GalerkinSystem sys = problem.make_system();
    IntegratorConfig cfg = problem.integrator;
    cfg.energy_monitor = false;
    auto a = poincare_run(sys, v0, cfg);
    auto b = poincare_run(sys, z0, cfg);
    ContractionReport r;
    r.ratio = (a.state.field - b.state.field).norm() / gap;
    r.max_coefficient_norm = std::max(a.record.max_norm, b.record.max_norm);
    const double n = 2.0 * static_cast<double>(v0.size());
    r.C4 = n * n * trilinear_bound(problem.domain) * r.max_coefficient_norm;
    r.bound = std::exp((r.C4 - problem.reg.epsilon * consts.C3) * problem.period());
    return r;
}

std::string to_string(SolverMethod m)
{
    switch (m) {
    case SolverMethod::picard:
        return "picard";
    case SolverMethod::anderson:
        return "anderson";
    case SolverMethod::newton_krylov:
        return "newton_krylov";
    }
    return "unknown";
}

namespace {

using Vec = Eigen::VectorXd;

class Ladder {
public:
    Ladder(const PeriodicProblem& problem, const SolverConfig& config, double tol, double radius)
        : config_(config), system_(problem.make_system()), tol_(tol), radius_(radius)
    {
        quiet_ = problem.integrator;
        quiet_.energy_monitor = false;
        quiet_.audit = false;
        quiet_.store_states = false;
    }

    struct Best {
        Vec x;
        Vec g;  // F(x)
        double residual = std::numeric_limits<double>::infinity();
        SolverMethod method = SolverMethod::picard;
    };

    Vec map(const Vec& x)
    {
        ++evaluations_;
        auto v = SpectralField::from_isometric(system_.table(), x);
        return poincare_run(system_, v, quiet_).state.field.to_isometric();
    }

    Vec project(Vec x) const
    {
        if (radius_ > 0.0 && std::isfinite(radius_)) {
            const double n = x.norm();
            if (n > radius_) x *= radius_ / n;
        }
        return x;
    }

    // Evaluates x, tracks the best iterate; returns (F(x), residual).
    std::pair<Vec, double> visit(const Vec& x, SolverMethod method)
    {
        Vec g = map(x);
        const double r = (g - x).norm();
        history_.push_back(r);
        if (r < best_.residual) best_ = {x, g, r, method};
        return {g, r};
    }

    bool done() const { return best_.residual <= tol_; }

    void run(const Vec& start)
    {
        Vec x = project(start);
        auto [g, r] = visit(x, SolverMethod::picard);
        if (done()) return;
        picard(x, g, r, config_.picard_iterations);
        if (done()) return;
        anderson();
        if (done()) return;
        newton();
    }

    const Best& best() const { return best_; }
    int evaluations() const { return evaluations_; }
    int iterations() const { return iterations_; }
    const std::vector<double>& history() const { return history_; }

private:
    void picard(Vec x, Vec g, double r, int budget)
    {
        double beta = 1.0;
        for (int it = 0; it < budget && !done(); ++it) {
            ++iterations_;
            Vec xn = project(x + beta * (g - x));
            auto [gn, rn] = visit(xn, SolverMethod::picard);
            if (rn > r) {
                beta *= 0.5;
                continue;
            }
            x = std::move(xn);
            g = std::move(gn);
            r = rn;
        }
    }

    void anderson()
    {
        const int m = std::max(1, config_.anderson_window);
        Vec x = best_.x;
        Vec g = best_.g;
        double r = best_.residual;
        Vec f = g - x;
        std::deque<Vec> dF, dG;
        double stalled_best = r;
        int stall = 0;
        for (int it = 0; it < config_.anderson_iterations && !done(); ++it) {
            ++iterations_;
            Vec xn;
            if (dF.empty()) {
                xn = g;
            } else {
                Eigen::MatrixXd F(f.size(), static_cast<Eigen::Index>(dF.size()));
                Eigen::MatrixXd G(f.size(), static_cast<Eigen::Index>(dG.size()));
                for (std::size_t j = 0; j < dF.size(); ++j) {
                    F.col(static_cast<Eigen::Index>(j)) = dF[j];
                    G.col(static_cast<Eigen::Index>(j)) = dG[j];
                }
                const Vec gamma = F.colPivHouseholderQr().solve(f);
                xn = g - G * gamma;
            }
            xn = project(xn);
            auto [gn, rn] = visit(xn, SolverMethod::anderson);
            Vec fn = gn - xn;
            dF.push_back(fn - f);
            dG.push_back(gn - g);
            if (static_cast<int>(dF.size()) > m) {
                dF.pop_front();
                dG.pop_front();
            }
            g = std::move(gn);
            f = std::move(fn);
            if (!std::isfinite(rn)) break;
            if (rn < 0.9 * stalled_best) {
                stalled_best = rn;
                stall = 0;
            } else if (++stall >= 8) {
                break;
            }
        }
    }

    // Matrix-free Newton on G(x) = F(x) - x with restarted GMRES.
    void newton()
    {
        constexpr double sqrt_eps = 1.4901161193847656e-08;
        Vec x = best_.x;
        double r = best_.residual;
        Vec G0 = best_.g - x;
        for (int it = 0; it < config_.newton_iterations && !done(); ++it) {
            ++iterations_;
            auto jv = [&](const Vec& d) -> Vec {
                const double dn = d.norm();
                if (dn == 0.0) return Vec::Zero(d.size());
                const double h = sqrt_eps * (1.0 + x.norm()) / dn;
                Vec xh = x + h * d;
                return ((map(xh) - xh) - G0) / h;
            };
            auto step = gmres(jv, -G0, config_.gmres_restart, 1e-6);
            if (!step) break;
            bool accepted = false;
            double lambda = 1.0;
            for (int ls = 0; ls < 6; ++ls, lambda *= 0.5) {
                Vec xn = project(x + lambda * *step);
                auto [gn, rn] = visit(xn, SolverMethod::newton_krylov);
                if (rn < r) {
                    x = std::move(xn);
                    G0 = gn - x;
                    r = rn;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                // Linear-solve breakdown: fall back to damped Picard from the best point.
                picard(best_.x, best_.g, best_.residual, config_.picard_iterations);
                return;
            }
        }
    }

    template <class Op>
    std::optional<Vec> gmres(Op&& apply, const Vec& b, int restart, double rel_tol)
    {
        const double beta = b.norm();
        if (beta == 0.0) return Vec::Zero(b.size());
        const int m = std::max(1, std::min<int>(restart, static_cast<int>(b.size())));
        std::vector<Vec> V{b / beta};
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + 1, m);
        Vec y;
        int k = 0;
        for (; k < m; ++k) {
            Vec w = apply(V[k]);
            if (!w.allFinite()) return std::nullopt;
            for (int j = 0; j <= k; ++j) {
                H(j, k) = w.dot(V[j]);
                w -= H(j, k) * V[j];
            }
            H(k + 1, k) = w.norm();
            Vec e1 = Vec::Zero(k + 2);
            e1[0] = beta;
            y = H.topLeftCorner(k + 2, k + 1).colPivHouseholderQr().solve(e1);
            const double res = (e1 - H.topLeftCorner(k + 2, k + 1) * y).norm();
            if (res <= rel_tol * beta || H(k + 1, k) <= 1e-14 * beta) {
                ++k;
                break;
            }
            V.push_back(w / H(k + 1, k));
        }
        Vec s = Vec::Zero(b.size());
        for (int j = 0; j < static_cast<int>(y.size()); ++j) s += y[j] * V[j];
        if (!s.allFinite()) return std::nullopt;
        return s;
    }

    const SolverConfig& config_;
    GalerkinSystem system_;
    IntegratorConfig quiet_;
    double tol_;
    double radius_;
    Best best_;
    int evaluations_ = 0;
    int iterations_ = 1;
    std::vector<double> history_;
};

Vec random_ball_point(std::mt19937_64& rng, Eigen::Index n, double radius)
{
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vec x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = g(rng);
    const double r = radius * std::pow(u(rng), 1.0 / static_cast<double>(n));
    return x * (r / x.norm());
}

} // namespace

OrbitResult find_periodic_orbit(const PeriodicProblem& problem, const SolverConfig& config)
{
    const auto table = ModeTable::get(problem.domain);
    const bool finite_radius = config.radius > 0.0 && std::isfinite(config.radius);
    const double tol = config.tolerance > 0.0 ? config.tolerance
                                              : 1e-8 * std::max(1.0, finite_radius ? config.radius : 1.0);

    SpectralField guess = config.initial_guess ? config.initial_guess->restricted_to(problem.domain)
                                               : SpectralField(table);
    if (finite_radius && guess.norm() > config.radius * (1.0 + 1e-12))
        throw InvalidInput("initial guess lies outside the ball");

    std::mt19937_64 rng(config.seed);
    Vec start = guess.to_isometric();
    std::optional<Ladder::Best> best;
    SpectralField best_guess = guess;
    int evaluations = 0;
    int iterations = 0;
    std::vector<double> history;
    for (int attempt = 0; attempt <= config.restarts; ++attempt) {
        if (attempt > 0) {
            if (!finite_radius) break;
            start = random_ball_point(rng, start.size(), config.radius);
        }
        Ladder ladder(problem, config, tol, finite_radius ? config.radius : 0.0);
        try {
            ladder.run(start);
        } catch (const IntegrationFailure&) {
            // A failed map evaluation ends this attempt; the best point so far survives.
        }
        evaluations += ladder.evaluations();
        iterations += ladder.iterations();
        history.insert(history.end(), ladder.history().begin(), ladder.history().end());
        if (ladder.best().x.size() > 0 && (!best || ladder.best().residual < best->residual)) {
            best = ladder.best();
            best_guess = SpectralField::from_isometric(table, start);
        }
        if (best && best->residual <= tol) break;
    }
    if (!best) throw IntegrationFailure("no Poincare map evaluation succeeded", 0.0);

    OrbitResult out{SpectralField::from_isometric(table, best->x), best_guess, 0.0, 0, 0, {}, false, 0.0, 0.0, {}, {}};
    out.residual = best->residual;
    out.method = best->method;
    out.converged = best->residual <= tol;
    out.iterations = iterations;
    out.ball_radius_used = finite_radius ? config.radius : std::numeric_limits<double>::infinity();
    out.tolerance = tol;
    out.residual_history = std::move(history);

    // Final monitored pass over the orbit. The step sequence does not depend on
    // monitoring, so this reproduces the map value that gave the residual.
    GalerkinSystem sys = problem.make_system();
    auto run = poincare_run(sys, out.initial_state, problem.integrator);
    out.map_evaluations = evaluations + 1;
    out.trajectory = std::move(run.record);
    return out;
}

} // namespace gnflow
