#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gnflow/error.hpp"
#include "gnflow/time_integrator.hpp"
#include "support.hpp"

using namespace gnflow;
using gnflow::testing::random_field;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

ForcingSignal smooth_forcing(const TorusDomain& dom, double T)
{
    return ForcingSignal(dom, T,
                         {{{1, 0, 0}, 0, {0.6, 0.0}, {ProfileKind::sine, 1, 0.0}},
                          {{0, 1, 0}, 0, {0.0, 0.4}, {ProfileKind::cosine, 1, 0.5}}});
}

SpectralField rk4_reference(GalerkinSystem& sys, SpectralField y, double t0, double t1, int steps)
{
    const double h = (t1 - t0) / steps;
    for (int i = 0; i < steps; ++i) {
        const double t = t0 + i * h;
        auto k1 = sys.full_rhs(t, y);
        auto k2 = sys.full_rhs(t + h / 2, y + (h / 2) * k1);
        auto k3 = sys.full_rhs(t + h / 2, y + (h / 2) * k2);
        auto k4 = sys.full_rhs(t + h, y + h * k3);
        y += (h / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

} // namespace

TEST_CASE("zero state without forcing stays exactly zero")
{
    TorusDomain dom{2, kTwoPi, 4};
    GalerkinSystem sys(dom, {1.5, 0.1}, {0.01}, ForcingSignal::zero(dom, 1.0));
    auto r = integrate(sys, {0.0, SpectralField(dom)}, 1.0, {});
    CHECK(r.state.field.is_zero());
    CHECK(r.state.t == 1.0);
    CHECK(r.record.samples.size() == 513);
}

TEST_CASE("q = 2 single mode reproduces Stokes decay")
{
    for (Scheme s : {Scheme::imex_stiff, Scheme::explicit_adaptive}) {
        TorusDomain dom{2, kTwoPi, 4};
        GalerkinSystem sys(dom, {2.0, 0.0}, {0.0}, ForcingSignal::zero(dom, 1.0));
        SpectralField v(dom);
        const auto m = *v.modes().find({1, 1, 0}, 0);
        v[m] = Complex{0.7, 0.2};
        IntegratorConfig cfg;
        cfg.scheme = s;
        cfg.rel_tol = 1e-11;
        cfg.abs_tol = 1e-14;
        auto r = integrate(sys, {0.0, v}, 1.5, cfg);
        const double nu = 0.5 * v.modes().wavenumber_squared(m);
        CHECK(std::abs(r.state.field[m] - v[m] * std::exp(-nu * 1.5)) < 1e-8);
    }
}

TEST_CASE("adaptive run agrees with a fine fixed-step reference and improves with tolerance")
{
    TorusDomain dom{2, kTwoPi, 4};
    GalerkinSystem sys(dom, {2.5, 0.0}, {0.01}, smooth_forcing(dom, 1.0));
    std::mt19937_64 rng(1);
    auto v0 = random_field(dom, rng, 0.2, 2.0);
    const double t1 = 0.5;
    auto ref = rk4_reference(sys, v0, 0.0, t1, 8000);
    double prev = INFINITY;
    for (double tol : {1e-6, 1e-8, 1e-10}) {
        IntegratorConfig cfg;
        cfg.rel_tol = tol;
        cfg.abs_tol = tol * 1e-3;
        cfg.energy_monitor = false;
        cfg.samples = 1;  // let the controller choose every step
        auto r = integrate(sys, {0.0, v0}, t1, cfg);
        const double dev = (r.state.field - ref).norm();
        CHECK(dev <= 10.0 * tol * std::max(1.0, ref.norm()));
        CHECK(dev < prev);
        prev = dev;
    }
}

TEST_CASE("without forcing the L2 norm never increases along samples")
{
    std::mt19937_64 rng(2);
    for (double q : {1.5, 2.0, 2.5}) {
        TorusDomain dom{2, kTwoPi, 4};
        GalerkinSystem sys(dom, {q, 0.01}, {0.01}, ForcingSignal::zero(dom, 1.0));
        auto r = integrate(sys, {0.0, random_field(dom, rng, 0.3)}, 1.0, {});
        for (std::size_t i = 1; i < r.record.samples.size(); ++i)
            CHECK(r.record.samples[i].norm <= r.record.samples[i - 1].norm * (1 + 1e-10));
        for (std::size_t i = 1; i < r.record.steps.size(); ++i) {
            auto c = check_energy_step(r.record.steps[i - 1], r.record.steps[i], q, 0.5, 1.0, 0.0);
            CHECK(c.ok);
        }
    }
}

TEST_CASE("sample times are exact and cumulative integrals nondecreasing")
{
    TorusDomain dom{2, kTwoPi, 3};
    GalerkinSystem sys(dom, {2.0, 0.0}, {0.01}, smooth_forcing(dom, 2.0));
    std::mt19937_64 rng(3);
    auto r = integrate(sys, {0.0, random_field(dom, rng, 0.1)}, 2.0, {});
    const auto& s = r.record.samples;
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i].t == (i == 512 ? 2.0 : 2.0 * i / 512.0));
    for (std::size_t i = 1; i < s.size(); ++i) {
        CHECK(s[i].t > s[i - 1].t);
        CHECK(s[i].cumulative.dissipation_q >= s[i - 1].cumulative.dissipation_q);
        CHECK(s[i].cumulative.dissipation_lap >= s[i - 1].cumulative.dissipation_lap);
        CHECK(s[i].cumulative.forcing_dual >= s[i - 1].cumulative.forcing_dual);
    }
    CHECK(r.record.accepted >= 512);
}

TEST_CASE("check_energy_step on q = 2 single-mode decay has nonnegative slack")
{
    TorusDomain dom{2, kTwoPi, 2};
    GalerkinSystem sys(dom, {2.0, 0.0}, {0.0}, ForcingSignal::zero(dom, 1.0));
    SpectralField v(dom);
    v[0] = 1.0;
    auto r = integrate(sys, {0.0, v}, 1.0, {});
    for (std::size_t i = 1; i < r.record.steps.size(); ++i) {
        auto c = check_energy_step(r.record.steps[i - 1], r.record.steps[i], 2.0, 0.5, 1.0, 0.0);
        CHECK(c.slack >= 0.0);
    }
}

TEST_CASE("guards: degenerate rheology, bad interval, step underflow")
{
    TorusDomain dom{2, kTwoPi, 2};
    GalerkinSystem deg(dom, {1.5, 0.0}, {0.0}, ForcingSignal::zero(dom, 1.0));
    SpectralField v(dom);
    v[0] = 0.5;
    CHECK_THROWS_AS(integrate(deg, {0.0, v}, 1.0, {}), InvalidInput);
    IntegratorConfig over;
    over.allow_degenerate = true;
    over.clamp_threshold = 1e-13;
    CHECK_NOTHROW(integrate(deg, {0.0, v}, 0.1, over));

    GalerkinSystem sys(dom, {2.0, 0.0}, {0.0}, ForcingSignal::zero(dom, 1.0));
    CHECK_THROWS_AS(integrate(sys, {1.0, v}, 1.0, {}), InvalidInput);

    IntegratorConfig tight;
    tight.rel_tol = 1e-14;
    tight.abs_tol = 1e-300;
    tight.min_dt = 1e-2;
    tight.max_dt = 1e-2;
    GalerkinSystem stiff(dom, {2.5, 0.0}, {0.0}, ForcingSignal::zero(dom, 1.0));
    CHECK_THROWS_AS(integrate(stiff, {0.0, v * 100.0}, 1.0, tight), IntegrationFailure);
}

TEST_CASE("extinction clamp zeroes the state and logs the time")
{
    TorusDomain dom{2, kTwoPi, 2};
    GalerkinSystem sys(dom, {1.5, 1e-8}, {0.0}, ForcingSignal::zero(dom, 1.0));
    SpectralField v(dom);
    v[0] = 1e-3;
    IntegratorConfig cfg;
    cfg.clamp_threshold = 1e-6;
    auto r = integrate(sys, {0.0, v}, 4.0, cfg);
    REQUIRE(r.record.clamp_time.has_value());
    CHECK(r.state.field.is_zero());
}

TEST_CASE("a forcing jump at the period end does not stall the step controller")
{
    TorusDomain dom{2, 2.0 * std::numbers::pi, 3};
    const double T = 4.0;
    ForcingSignal f(dom, T, {{{1, 0, 0}, 0, {0.5, 0.0}, {ProfileKind::constant, 1, 0.0}}}, 0.5 * T);
    GalerkinSystem sys(dom, {1.5, 1e-6}, {1e-3}, f);
    IntegratorConfig cfg;
    cfg.rel_tol = 1e-10;
    cfg.abs_tol = 1e-13;
    cfg.max_steps = 20000;
    for (int samples : {1, 3, 512}) {
        cfg.samples = samples;
        auto r = integrate(sys, {0.0, SpectralField(dom)}, T, cfg);
        CHECK(r.record.accepted < 5000);
        CHECK(r.state.field.norm() < r.record.max_norm);
    }
    CHECK(f.evaluate(0.5 * T).is_zero());
    CHECK(f.max_l2() > 0.0);
}
