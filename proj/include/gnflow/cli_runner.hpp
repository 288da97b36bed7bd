#pragma once

// Experiment configuration (JSON schema v1) and the four subcommands. Every
// command returns its process exit status:
//   0 success, 1 a check failed, 2 invalid input or corrupted run, 3 no convergence.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"

#include "gnflow/diagnostics.hpp"

namespace gnflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitNotConverged = 3;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "gnflow 1.0.0";

/// Raised by parse_config; the message names the offending key and its line.
class ConfigError : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

struct ExperimentConfig {
    TorusDomain domain;
    StressParams stress;
    RegularizationParams reg;
    double period = 0.0;
    std::vector<ForcingTerm> forcing_terms;
    std::optional<double> shutoff;
    double grid_factor = 1.5;
    IntegratorConfig integrator;
    SolverConfig solver;
    std::size_t embedding_budget = 400;
    double extinction_threshold = 1e-10;
    std::optional<SweepAxes> sweep;
    std::uint64_t seed = 1;
    std::optional<std::string> output;
    nlohmann::json source;  // the parsed document, kept for digests and copies

    ForcingSignal forcing() const;
    PeriodicProblem problem() const;
};

/// Strict schema v1: unknown keys are rejected, q, kappa, epsilon and the
/// period have no defaults, and every module invariant is checked here.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

struct RunOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;  // overrides config "output"; default "run"
    int workers = 1;
    std::optional<std::uint64_t> seed;
    bool override_degenerate = false;
};

int cmd_solve_periodic(const RunOptions& opts, std::ostream& log);
int cmd_extinction(const RunOptions& opts, std::ostream& log);
int cmd_sweep(const RunOptions& opts, std::ostream& log);
/// Audits a finished run directory (the --out of an earlier command).
int cmd_verify(const std::filesystem::path& run_dir, std::ostream& log);

/// Full cell (summary, samples, stored states) for sweep resume.
nlohmann::json cell_to_json(const OrbitCell& cell);
OrbitCell cell_from_json(const nlohmann::json& j);

/// Rebuilds cumulative integrals and samples from a trajectory read back from
/// CSV: ||b(t)|| comes from the forcing, every step becomes a sample.
void rebuild_from_steps(TrajectoryRecord& record, const ForcingSignal& forcing, const StressParams& stress);

} // namespace gnflow::cli
