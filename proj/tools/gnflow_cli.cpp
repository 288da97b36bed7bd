#include <iostream>

#include "CLI11.hpp"

#include "gnflow/cli_runner.hpp"

int main(int argc, char** argv)
{
    using namespace gnflow::cli;
    CLI::App app{"Time-periodic generalized Newtonian flow on the torus"};
    app.require_subcommand(1);

    RunOptions opts;
    std::uint64_t seed = 0;
    std::filesystem::path run_dir;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config, "experiment config (JSON schema v1)")->required();
        sub->add_option("--out", opts.out, "output directory (overrides the config)");
        sub->add_option("--workers", opts.workers, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "random seed (overrides the config)");
        sub->add_flag("--override-degenerate", opts.override_degenerate,
                      "allow kappa = 0 with q < 2 (non-Lipschitz stress)");
    };
    auto* solve = app.add_subcommand("solve-periodic", "find the periodic orbit");
    auto* extinction = app.add_subcommand("extinction", "extinction experiment after the forcing shutoff");
    auto* sweep = app.add_subcommand("sweep", "(n_max, eps, kappa) cascade");
    add_common(solve);
    add_common(extinction);
    add_common(sweep);
    auto* verify = app.add_subcommand("verify", "audit a finished run directory");
    verify->add_option("--out,run_dir", run_dir, "run directory")->required();
    verify->add_option("--config", opts.config, "ignored; the run directory holds its config copy");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitInvalid;
    }
    for (auto* sub : {solve, extinction, sweep})
        if (sub->parsed() && sub->count("--seed")) opts.seed = seed;

    if (solve->parsed()) return cmd_solve_periodic(opts, std::cerr);
    if (extinction->parsed()) return cmd_extinction(opts, std::cerr);
    if (sweep->parsed()) return cmd_sweep(opts, std::cerr);
    return cmd_verify(run_dir, std::cerr);
}
