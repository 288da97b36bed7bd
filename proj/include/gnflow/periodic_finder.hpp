#pragma once

// Poincare map F(v0) = v(T) of the Galerkin flow and its fixed points inside
// the invariant ball B_K.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gnflow/time_integrator.hpp"

namespace gnflow {

/// Constants of the energy and extinction estimates on the implemented basis.
/// embedding is the sampled sup of ||v||_2 / ||Dv||_q; every other entry
/// derives from it in closed form (see derive).
struct EmbeddingConstants {
    double q = 2.0;
    double embedding = 1.0;  // c_emb
    double C_S = 1.0;        // c_emb^-q, so C_S ||v||^q <= ||Dv||_q^q
    double C_P = 1.0;        // L / (2 pi)
    double C_K = 1.0;        // sqrt 2: ||grad v|| = sqrt2 ||Dv|| on solenoidal periodic fields
    double C3 = 1.0;         // (2 pi / L)^2
    double C1 = 0.5;
    double C2 = 1.0;
    double alpha = 1.0;
    std::size_t sample_budget = 0;

    /// Closed-form completion from a sampled embedding ratio.
    static EmbeddingConstants derive(double embedding, const TorusDomain& domain, double q,
                                     std::size_t budget = 0);
};

struct PeriodicProblem {
    TorusDomain domain;
    StressParams stress;
    RegularizationParams reg;
    ForcingSignal forcing;
    double grid_factor = 1.5;
    IntegratorConfig integrator;

    double period() const { return forcing.period(); }
    GalerkinSystem make_system() const;
};

SpectralField poincare_map(const SpectralField& v0, const PeriodicProblem& problem);
IntegrationResult poincare_run(GalerkinSystem& system, const SpectralField& v0, const IntegratorConfig& config);

enum class RadiusVariant { K, K_bar };

/// K = ((C2 max||b||^q' + C2 kappa^(q/2)) / (C1 C_S))^(1/q); K_bar replaces
/// kappa^(q/2) by 1.
double ball_radius(double forcing_max_l2, const StressParams& stress, const EmbeddingConstants& consts,
                   RadiusVariant variant);

struct BallCheck {
    bool holds = true;
    double max_norm = 0.0;
    double excursion = 0.0;  // max_norm / radius - 1
};
BallCheck ball_invariance_check(const TrajectoryRecord& trajectory, double radius, double tol = 1e-8);

struct ContractionReport {
    double ratio = 0.0;
    double bound = 0.0;  // exp((C4 - eps C3) T)
    double C4 = 0.0;
    double max_coefficient_norm = 0.0;
};
/// Analytic upper bound on max |f_ijk| for an orthonormal real basis:
/// 2^(3/2) |K|_max |Omega|^(-1/2).
double trilinear_bound(const TorusDomain& domain);
ContractionReport contraction_ratio(const SpectralField& v0, const SpectralField& z0, const PeriodicProblem& problem,
                                    const EmbeddingConstants& consts);

enum class SolverMethod { picard, anderson, newton_krylov };
std::string to_string(SolverMethod m);

struct SolverConfig {
    double tolerance = 0.0;  // <= 0: 1e-8 max(1, radius)
    double radius = 0.0;     // ball radius; <= 0 or inf disables projection
    int picard_iterations = 5;
    int anderson_iterations = 40;
    int anderson_window = 5;
    int newton_iterations = 20;
    int gmres_restart = 40;
    int restarts = 2;        // random ball starts after the default guess
    std::uint64_t seed = 1;
    std::optional<SpectralField> initial_guess;
};

struct OrbitResult {
    SpectralField initial_state;
    SpectralField initial_guess;
    double residual = 0.0;
    int iterations = 0;
    int map_evaluations = 0;
    SolverMethod method = SolverMethod::picard;
    bool converged = false;
    double ball_radius_used = 0.0;
    double tolerance = 0.0;
    std::vector<double> residual_history;
    TrajectoryRecord trajectory;
};

OrbitResult find_periodic_orbit(const PeriodicProblem& problem, const SolverConfig& config);

} // namespace gnflow
