#include "gnflow/time_integrator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "gnflow/error.hpp"

namespace gnflow {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr int kStages = 7;
constexpr std::array<double, kStages> kC{0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[kStages][kStages] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
// b - bhat
constexpr std::array<double, kStages> kE{35.0 / 384 - 5179.0 / 57600,
                                         0.0,
                                         500.0 / 1113 - 7571.0 / 16695,
                                         125.0 / 192 - 393.0 / 640,
                                         -2187.0 / 6784 + 92097.0 / 339200,
                                         11.0 / 84 - 187.0 / 2100,
                                         -1.0 / 40};

bool all_finite(std::span<const Complex> y)
{
    return std::all_of(y.begin(), y.end(),
                       [](const Complex& c) { return std::isfinite(c.real()) && std::isfinite(c.imag()); });
}

} // namespace

void IntegratorConfig::validate() const
{
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0) || !std::isfinite(rel_tol) || !std::isfinite(abs_tol))
        throw InvalidInput("integrator tolerances must be positive");
    if (!(min_dt > 0.0) || !(max_dt > 0.0) || min_dt > max_dt)
        throw InvalidInput("integrator step bounds must satisfy 0 < min_dt <= max_dt");
    if (samples < 1) throw InvalidInput("integrator needs at least one sample interval");
    if (!(clamp_threshold >= 0.0)) throw InvalidInput("clamp threshold must be >= 0");
}

CoreStats integrate_core(std::vector<Complex>& y, const std::vector<double>& decay, double t0, double t1,
                         const IntegratorConfig& config, const CoreHooks& hooks)
{
    const std::size_t n = y.size();
    const bool lawson = !decay.empty();
    CoreStats stats;

    std::array<std::vector<Complex>, kStages> k;
    for (auto& v : k) v.assign(n, Complex{});
    std::vector<Complex> stage(n), y_new(n), err(n);

    // exp(-decay * s) for every mode
    auto propagate = [&](std::size_t m, double s) { return lawson ? std::exp(-decay[m] * s) : 1.0; };

    auto sample_time = [&](int i) {
        return i == config.samples ? t1 : t0 + (t1 - t0) * static_cast<double>(i) / config.samples;
    };

    double t = t0;
    if (hooks.on_accept) hooks.on_accept(t, y);
    if (!all_finite(y)) throw IntegrationFailure("non-finite initial state", t);
    if (hooks.on_sample) hooks.on_sample(0, t, y);
    int next_sample = 1;

    hooks.rhs(t, y, k[0]);
    ++stats.rhs_evaluations;

    const double span = t1 - t0;
    const double snap = 1e-12 * span;
    double h = std::min(config.max_dt, span / config.samples);
    {
        // Initial guess from the local derivative scale.
        const double ny = hooks.norm(y);
        const double nf = hooks.norm(k[0]);
        if (ny > 0.0 && nf > 0.0) h = std::min(h, 0.01 * ny / nf);
        h = std::max(h, config.min_dt);
    }

    std::size_t steps = 0;
    while (t < t1) {
        if (++steps > config.max_steps) throw IntegrationFailure("step budget exhausted", t);
        if (h < config.min_dt) throw IntegrationFailure("step size underflow (dt < min_dt)", t);

        const double target = sample_time(next_sample);
        double step = h;
        bool lands = false;
        if (t + step >= target - snap) {
            step = target - t;
            lands = true;
        }

        for (int i = 1; i < kStages; ++i) {
            for (std::size_t m = 0; m < n; ++m) {
                Complex acc{};
                for (int j = 0; j < i; ++j)
                    if (kA[i][j] != 0.0) acc += kA[i][j] * propagate(m, (kC[i] - kC[j]) * step) * k[j][m];
                stage[m] = propagate(m, kC[i] * step) * y[m] + step * acc;
            }
            if (i == kStages - 1) y_new = stage;
            // A step that lands on a target sees the force as a left limit there,
            // so a jump placed on a sample instant never lies inside a step.
            const double ts = lands && kC[i] == 1.0 ? std::nextafter(target, t) : t + kC[i] * step;
            hooks.rhs(ts, stage, k[i]);
            ++stats.rhs_evaluations;
        }
        for (std::size_t m = 0; m < n; ++m) {
            Complex acc{};
            for (int j = 0; j < kStages; ++j)
                if (kE[j] != 0.0) acc += kE[j] * propagate(m, (1.0 - kC[j]) * step) * k[j][m];
            err[m] = step * acc;
        }

        double ratio;
        if (!all_finite(y_new) || !all_finite(k[kStages - 1])) {
            ratio = std::numeric_limits<double>::infinity();
        } else {
            const double scale = config.abs_tol + config.rel_tol * std::max(hooks.norm(y), hooks.norm(y_new));
            ratio = hooks.norm(err) / scale;
        }

        if (!(ratio <= 1.0)) {
            ++stats.rejected;
            const double shrink = std::isfinite(ratio) ? std::max(0.2, 0.9 * std::pow(ratio, -0.2)) : 0.2;
            h = step * shrink;
            if (h < config.min_dt) {
                if (!std::isfinite(ratio)) throw IntegrationFailure("non-finite state", t);
                throw IntegrationFailure("step size underflow (dt < min_dt)", t);
            }
            continue;
        }

        ++stats.accepted;
        t = lands ? target : t + step;
        y.swap(y_new);
        const double grow = ratio == 0.0 ? 5.0 : std::min(5.0, std::max(0.2, 0.9 * std::pow(ratio, -0.2)));
        // A step clipped onto a sample does not shrink the proposal.
        h = std::min(config.max_dt, (lands ? std::max(step, h) : step) * grow);

        bool modified = false;
        if (hooks.on_accept) {
            y_new = y;
            hooks.on_accept(t, y);
            modified = !std::equal(y.begin(), y.end(), y_new.begin());
        }
        if (modified || lands) {
            hooks.rhs(t, y, k[0]);
            ++stats.rhs_evaluations;
        } else {
            k[0].swap(k[kStages - 1]);
        }
        if (lands) {
            if (hooks.on_sample) hooks.on_sample(next_sample, t, y);
            ++next_sample;
        }
    }
    return stats;
}

IntegrationResult integrate(GalerkinSystem& system, const GalerkinState& state0, double t1,
                            const IntegratorConfig& config)
{
    config.validate();
    const double t0 = state0.t;
    if (!(t1 > t0) || !std::isfinite(t1)) throw InvalidInput("integration interval must satisfy t1 > t0");
    if (!(state0.field.domain() == system.domain()))
        throw InvalidInput("initial state lives on a different basis than the system");
    if (system.degenerate_rheology() && !config.allow_degenerate)
        throw InvalidInput("q < 2 with kappa = 0 is not Lipschitz at Dv = 0; set the degenerate override");

    const auto table = system.table();
    const double q = system.stress().q;
    const double dual = q / (q - 1.0);
    const double volume_factor = 2.0 * system.domain().volume();

    IntegrationResult result{state0, {}};
    auto& rec = result.record;
    rec.q = q;
    rec.kappa = system.stress().kappa;
    rec.samples.resize(static_cast<std::size_t>(config.samples) + 1);
    std::vector<std::size_t> sample_step(rec.samples.size(), 0);

    SpectralField work(table);
    SpectralField out(table);
    const auto& decay = system.linear_decay();
    const bool lawson = config.scheme == Scheme::imex_stiff;

    CoreHooks hooks;
    hooks.norm = [volume_factor](std::span<const Complex> y) {
        double s = 0.0;
        for (const auto& c : y) s += std::norm(c);
        return std::sqrt(volume_factor * s);
    };
    hooks.rhs = [&](double t, std::span<const Complex> y, std::span<Complex> dst) {
        std::copy(y.begin(), y.end(), work.coefficients().begin());
        system.nonlinear_rhs(t, work, out);
        if (lawson) {
            std::copy(out.coefficients().begin(), out.coefficients().end(), dst.begin());
        } else {
            for (std::size_t m = 0; m < y.size(); ++m) dst[m] = out[m] - decay[m] * y[m];
        }
    };
    hooks.on_accept = [&](double t, std::span<Complex> y) {
        double nrm = hooks.norm(y);
        if (q < 2.0 && config.clamp_threshold > 0.0 && nrm > 0.0 && nrm < config.clamp_threshold) {
            std::fill(y.begin(), y.end(), Complex{});
            nrm = 0.0;
            if (!rec.clamp_time) rec.clamp_time = t;
        }
        rec.max_norm = std::max(rec.max_norm, nrm);
        if (config.energy_monitor) {
            std::copy(y.begin(), y.end(), work.coefficients().begin());
            rec.steps.push_back({t, system.energy_terms(t, work)});
        }
    };
    hooks.on_sample = [&](int index, double t, std::span<const Complex> y) {
        auto& s = rec.samples[static_cast<std::size_t>(index)];
        s.t = t;
        s.norm = hooks.norm(y);
        std::copy(y.begin(), y.end(), work.coefficients().begin());
        if (config.energy_monitor) {
            s.energy = rec.steps.back().energy;
            sample_step[static_cast<std::size_t>(index)] = rec.steps.size() - 1;
        } else {
            s.energy = system.energy_terms(t, work);
        }
        if (config.audit) s.audit = system.audit_terms(work);
        if (config.store_states) rec.states.push_back(work);
    };

    std::vector<Complex> y(state0.field.coefficients().begin(), state0.field.coefficients().end());
    static const std::vector<double> no_decay;
    const CoreStats stats = integrate_core(y, lawson ? decay : no_decay, t0, t1, config, hooks);
    rec.accepted = stats.accepted;
    rec.rejected = stats.rejected;
    rec.rhs_evaluations = stats.rhs_evaluations;

    // Trapezoid integrals over accepted steps (or samples when unmonitored).
    auto accumulate = [dual](CumulativeTerms c, const EnergyTerms& a, const EnergyTerms& b, double dt) {
        const double w = 0.5 * dt;
        c.dissipation_q += w * (a.dissipation_q + b.dissipation_q);
        c.dissipation_lap += w * (a.dissipation_lap + b.dissipation_lap);
        c.dissipation_p += w * (a.dissipation_p + b.dissipation_p);
        c.power_in += w * (a.power_in + b.power_in);
        c.stress_power += w * (a.stress_power + b.stress_power);
        c.forcing_dual += w * (std::pow(a.forcing_norm, dual) + std::pow(b.forcing_norm, dual));
        return c;
    };
    if (config.energy_monitor) {
        std::vector<CumulativeTerms> running(rec.steps.size());
        for (std::size_t i = 1; i < rec.steps.size(); ++i)
            running[i] = accumulate(running[i - 1], rec.steps[i - 1].energy, rec.steps[i].energy,
                                    rec.steps[i].t - rec.steps[i - 1].t);
        for (std::size_t i = 0; i < rec.samples.size(); ++i) rec.samples[i].cumulative = running[sample_step[i]];
    } else {
        for (std::size_t i = 1; i < rec.samples.size(); ++i)
            rec.samples[i].cumulative = accumulate(rec.samples[i - 1].cumulative, rec.samples[i - 1].energy,
                                                   rec.samples[i].energy, rec.samples[i].t - rec.samples[i - 1].t);
    }

    result.state.t = t1;
    result.state.field = SpectralField(table, std::move(y));
    return result;
}

EnergyStepCheck check_energy_step(const StepEntry& a, const StepEntry& b, double q, double c1, double c2,
                                  double kappa_term, double tolerance)
{
    const double dual = q / (q - 1.0);
    const double w = 0.5 * (b.t - a.t);
    const auto& ea = a.energy;
    const auto& eb = b.energy;
    const double inflow =
        c2 * w * (std::pow(ea.forcing_norm, dual) + std::pow(eb.forcing_norm, dual) + 2.0 * kappa_term);
    const double outflow = eb.kinetic - ea.kinetic +
                           w * (c1 * (ea.dissipation_q + eb.dissipation_q) + ea.dissipation_lap +
                                eb.dissipation_lap + ea.dissipation_p + eb.dissipation_p);
    EnergyStepCheck r;
    r.slack = inflow - outflow;
    r.ok = r.slack >= -tolerance;
    return r;
}

} // namespace gnflow
