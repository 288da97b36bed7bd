#pragma once

// Adaptive integration of the Galerkin system over [t0, t1].
//
// imex_stiff: Lawson (integrating-factor) Dormand-Prince 5(4). The diagonal
// linear decay of GalerkinSystem is propagated exactly; the remainder goes
// through the embedded explicit pair. explicit_adaptive runs the same pair on
// the full right-hand side. Steps are clipped so that the accepted step set
// contains every sample instant t0 + i (t1 - t0)/samples, which gives exact
// (not interpolated) sample states.

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "gnflow/galerkin_system.hpp"

namespace gnflow {

enum class Scheme { explicit_adaptive, imex_stiff };

struct IntegratorConfig {
    double rel_tol = 1e-9;
    double abs_tol = 1e-12;
    double max_dt = 0.1;
    double min_dt = 1e-12;
    Scheme scheme = Scheme::imex_stiff;
    bool energy_monitor = true;
    int samples = 512;
    bool store_states = false;
    bool audit = false;
    /// Refuse q < 2, kappa = 0 unless set.
    bool allow_degenerate = false;
    /// For q < 2: the state is set to exactly 0 once ||v|| drops below this
    /// absolute level. 0 disables the clamp.
    double clamp_threshold = 0.0;
    std::size_t max_steps = 5'000'000;

    void validate() const;
};

/// Running integrals over [t0, t]. forcing_dual is int ||b||^q'.
struct CumulativeTerms {
    double dissipation_q = 0.0;
    double dissipation_lap = 0.0;
    double dissipation_p = 0.0;
    double power_in = 0.0;
    double stress_power = 0.0;
    double forcing_dual = 0.0;
};

struct StepEntry {
    double t = 0.0;
    EnergyTerms energy;
};

struct TrajectorySample {
    double t = 0.0;
    double norm = 0.0;
    EnergyTerms energy;
    AuditTerms audit;  // zero unless config.audit
    CumulativeTerms cumulative;
};

struct TrajectoryRecord {
    double q = 2.0;  // power-law index the record was produced with
    double kappa = 0.0;
    std::vector<TrajectorySample> samples;   // samples + 1 entries, t0 and t1 included
    std::vector<StepEntry> steps;            // every accepted step (t0 included) when monitored
    std::vector<SpectralField> states;       // per sample, when config.store_states
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_evaluations = 0;
    double max_norm = 0.0;                   // sup over accepted steps of ||v||
    std::optional<double> clamp_time;
};

struct IntegrationResult {
    GalerkinState state;
    TrajectoryRecord record;
};

/// Throws InvalidInput (bad config, t1 <= t0, degenerate rheology without
/// override) or IntegrationFailure (dt < min_dt, non-finite state).
IntegrationResult integrate(GalerkinSystem& system, const GalerkinState& state0, double t1,
                            const IntegratorConfig& config);

/// Signed slack of the differential energy inequality between two accepted
/// steps: C2 int(||b||^q' + kappa^(q/2)) - (||v2||^2 - ||v1||^2 + int(C1 diss_q + lap + p)),
/// integrals by the trapezoid rule. kappa_term is kappa^(q/2) (0 when unused).
struct EnergyStepCheck {
    bool ok = true;
    double slack = 0.0;
};
EnergyStepCheck check_energy_step(const StepEntry& a, const StepEntry& b, double q, double c1, double c2,
                                  double kappa_term, double tolerance = 0.0);

// ---------------------------------------------------------------------------
// Generic embedded-pair core, shared with scalar model problems.

struct CoreHooks {
    /// out = N(t, y), the part not covered by the diagonal decay.
    std::function<void(double t, std::span<const Complex> y, std::span<Complex> out)> rhs;
    /// Norm used by the error controller; must be a true norm.
    std::function<double(std::span<const Complex> y)> norm;
    /// Called after each accepted step (and once at t0); may modify y.
    std::function<void(double t, std::span<Complex> y)> on_accept;
    /// Called at each sample instant with its index.
    std::function<void(int index, double t, std::span<const Complex> y)> on_sample;
};

struct CoreStats {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t rhs_evaluations = 0;
};

/// Advances y from t0 to t1. decay may be empty (no integrating factor).
CoreStats integrate_core(std::vector<Complex>& y, const std::vector<double>& decay, double t0, double t1,
                         const IntegratorConfig& config, const CoreHooks& hooks);

} // namespace gnflow
