#pragma once

// Numerical audits of the a priori estimates: embedding constants, energy
// inequality, interpolation bound, eps- and kappa-cascades, extinction.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gnflow/error.hpp"
#include "gnflow/periodic_finder.hpp"

namespace gnflow {

/// C_S and alpha from the sup of ||v||_2 / ||Dv||_q over a deterministic sample
/// stream (lowest single waves first, then alternating random fields and
/// perturbations of the best so far). The estimate is a max over a prefix of a
/// fixed stream, hence monotone in budget for a fixed seed.
EmbeddingConstants estimate_embedding_constants(const TorusDomain& domain, double q, std::size_t budget,
                                                std::uint64_t seed = 1);

/// ||v||_2 / ||Dv||_q with the norm evaluated on the padded grid.
double embedding_ratio(const SpectralField& v, double q, double grid_factor = 1.5);

// ---------------------------------------------------------------------------

struct EnergyReport {
    bool holds = true;
    std::size_t steps_checked = 0;
    std::size_t step_violations = 0;
    double worst_step_slack = INFINITY;
    double worst_step_time = 0.0;
    std::size_t samples_checked = 0;
    std::size_t sample_violations = 0;
    double worst_sample_slack = INFINITY;
    double worst_sample_time = 0.0;
    double C1 = 0.0;
    double C2 = 0.0;
    double kappa_term = 0.0;
};

/// kappa^(q/2) when kappa > 0, else 0: the source term that accompanies C2.
double kappa_source(double q, double kappa);

/// Differential form on every accepted step and integral form at every sample:
/// ||v(t)||^2 - ||v(0)||^2 + int(C1 diss_q + lap + p) <= C2 int(||b||^q' + kappa^(q/2)).
/// A violation is slack < -tolerance.
EnergyReport verify_energy_inequality(const TrajectoryRecord& trajectory, const EmbeddingConstants& consts,
                                      double tolerance = 0.0);

struct InterpolationReport {
    bool holds = true;
    double lhs = 0.0;  // int int |v|^(5q/3)
    double rhs = 0.0;  // sup ||v||^(2q/3) int int |grad v|^q
};
/// Needs a trajectory recorded with config.audit.
InterpolationReport interpolation_bound_check(const TrajectoryRecord& trajectory, double q, double tolerance = 1e-12);

// ---------------------------------------------------------------------------
// Cascades

/// One converged (or not) orbit with its monitored trajectory and stored states.
struct OrbitCell {
    int n_max = 0;
    double epsilon = 0.0;
    double kappa = 0.0;
    bool converged = false;
    double residual = 0.0;
    double ball_radius = 0.0;
    std::string method;
    std::string error;  // non-empty if the cell failed
    TrajectoryRecord trajectory;
};

struct EpsilonRow {
    double epsilon = 0.0;
    bool included = true;
    double dq_norm = 0.0;      // ||Dv||_{L^q(Q)}
    double lap_weighted = 0.0; // eps^(1/2) ||grad v||_{L^2(Q)}
    double p_weighted = 0.0;   // eps^(5/11) ||Dv||_{L^(11/5)(Q)}
    double lap_pairing = 0.0;  // eps ||grad v||_{L^(5q/6)} ||grad phi||_{L^(5q/(5q-6))}
    double p_pairing = 0.0;    // eps ||Dv||_{L^(11/5)}^(6/5) ||Dphi||_{L^(11/5)}
    double lap_direct = 0.0;   // |eps int int grad v : grad phi|
};

struct EpsilonReport {
    std::vector<EpsilonRow> rows;  // sorted by decreasing eps
    double max_growth = 0.0;       // max over quantities and consecutive levels of Q_{k+1}/Q_k
    bool bounded = true;           // max_growth <= 1 + growth_tolerance
    bool pairings_decrease = true;
    bool holder_holds = true;      // lap_direct <= lap_pairing on every row
};

/// Needs trajectories recorded with audit and stored states. phi is the fixed
/// steady test field of the Hoelder pairing.
EpsilonReport epsilon_scaling_check(const std::vector<OrbitCell>& cells, double q, const SpectralField& phi,
                                    double growth_tolerance = 0.25);

struct KappaRow {
    double kappa = 0.0;
    double stress_dual = 0.0;        // int int |S_kappa(Dv)|^q'
    double stress_dual_bound = 0.0;  // kappa^(q/2) |Q| + int int |Dv|^q
    double distance_to_next = 0.0;   // L2L2 orbit distance to the next (smaller) kappa
    double stress_distance_to_next = 0.0;
};

struct KappaReport {
    std::vector<KappaRow> rows;  // sorted by decreasing kappa
    bool distances_decrease = true;
    bool stress_bounded = true;
};

KappaReport kappa_convergence_check(const std::vector<OrbitCell>& cells, const StressParams& base,
                                    const RegularizationParams& reg, double grid_factor = 1.5);

/// sqrt(int_0^T ||a(t) - b(t)||^2 dt) from stored samples, on the common coarse modes.
double orbit_distance(const TrajectoryRecord& a, const TrajectoryRecord& b);

// ---------------------------------------------------------------------------
// Extinction

class CompatibilityError : public InvalidInput {
public:
    CompatibilityError(const std::string& what, double minimal_period)
        : InvalidInput(what), minimal_period_(minimal_period) {}
    double minimal_period() const noexcept { return minimal_period_; }

private:
    double minimal_period_;
};

struct ExtinctionReport {
    double shutoff = 0.0;          // t_bar
    double measured = 0.0;         // t_meas
    double bound = 0.0;            // t_bar + K_bar^(2-q) / (alpha (2-q))
    double state_bound = 0.0;      // t_bar + ||v(t_bar)||^(2-q) / (alpha (2-q))
    double threshold = 0.0;
    double K_bar = 0.0;
    double alpha = 0.0;
    double norm_at_shutoff = 0.0;
    bool extinct = false;          // threshold reached within the period
    bool within_bound = false;     // t_bar <= t_meas <= bound
    double fit_slope = 0.0;        // d/dt ||v||^(2-q)
    double fit_r2 = 0.0;
    double predicted_slope = 0.0;  // -(2-q) alpha
    double fit_window_start = 0.0;
    double fit_window_end = 0.0;
    std::size_t fit_points = 0;
    bool fit_window_fallback = false;
    std::optional<double> clamp_time;
    double orbit_residual = 0.0;
    bool orbit_converged = false;
};

/// Throws InvalidInput if q is outside (6/5, 2) or the forcing has no
/// shutoff, CompatibilityError if t_bar + K_bar^(2-q)/(alpha(2-q)) > T.
double extinction_bound(const PeriodicProblem& problem, const EmbeddingConstants& consts);

ExtinctionReport extinction_experiment(const PeriodicProblem& problem, const EmbeddingConstants& consts,
                                       double threshold_rel = 1e-10, const SolverConfig& solver = {});

struct ScalarExtinction {
    double measured = 0.0;
    double exact = 0.0;
    double relative_error = 0.0;
};
/// y' = -alpha y^(q-1), y(0) = y0 integrated with the same embedded pair.
/// u = y^(2-q) is exactly linear in t, but near the root y is too flat for its
/// zero to be well conditioned; the root is therefore the zero of the line
/// through u at the last two accepted steps with y >= floor_rel y0.
/// Exact root y0^(2-q) / (alpha (2-q)).
ScalarExtinction scalar_extinction(double y0, double alpha, double q, double floor_rel = 1e-6,
                                   double rel_tol = 1e-12);

// ---------------------------------------------------------------------------
// Sweep

struct SweepAxes {
    std::vector<int> n_max;
    std::vector<double> epsilon;
    std::vector<double> kappa;
};

struct CellKey {
    int n_max;
    double epsilon;
    double kappa;
};

struct SweepOptions {
    SolverConfig solver;
    std::size_t embedding_budget = 400;
    std::uint64_t seed = 1;
    int workers = 1;
    /// Optional cache: return a finished cell to skip recomputation.
    std::function<std::optional<OrbitCell>(const CellKey&)> load;
    /// Called once per freshly computed cell (from worker threads, serialized).
    std::function<void(const OrbitCell&)> store;
};

struct CascadeReport {
    SweepAxes axes;  // sorted
    std::vector<OrbitCell> cells;  // n_max-major, then eps, then kappa
    struct Distance {
        std::string axis;
        CellKey from;
        CellKey to;
        double distance;
    };
    std::vector<Distance> distances;  // between successive levels along each axis
};

/// Runs every cell of the grid; per-cell failures are recorded, never thrown.
/// The template supplies q, L, d, forcing, grid factor and integrator config;
/// trajectories are recorded with audit terms and stored states.
CascadeReport cascade_sweep(const SweepAxes& axes, const PeriodicProblem& problem_template,
                            const SweepOptions& options);

OrbitCell solve_cell(const CellKey& key, const PeriodicProblem& problem_template, const SweepOptions& options);

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const EmbeddingConstants& c);
nlohmann::json to_json(const EnergyReport& r);
nlohmann::json to_json(const InterpolationReport& r);
nlohmann::json to_json(const EpsilonReport& r);
nlohmann::json to_json(const KappaReport& r);
nlohmann::json to_json(const ExtinctionReport& r);
nlohmann::json to_json(const CascadeReport& r);
nlohmann::json orbit_summary_json(const OrbitCell& cell);

/// Header: t,kinetic,dissipation_q,dissipation_lap,dissipation_p,power_in.
void write_trajectory_csv(const TrajectoryRecord& record, std::ostream& out);
/// Header: t,velocity_power_5q3,gradient_q,gradient_5q6,stress_dual,norm_l2.
void write_audit_csv(const TrajectoryRecord& record, std::ostream& out);
/// Inverse of write_trajectory_csv: fills steps only.
TrajectoryRecord read_trajectory_csv(std::istream& in);
/// Inverse of write_audit_csv: samples with t, norm and audit terms.
std::vector<TrajectorySample> read_audit_csv(std::istream& in);

/// 17 significant digits, shortest round-trip where possible.
std::string format_double(double x);

} // namespace gnflow
