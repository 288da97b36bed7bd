#include "gnflow/forcing.hpp"

#include <cmath>
#include <numbers>

#include "gnflow/error.hpp"

namespace gnflow {

ForcingSignal::ForcingSignal(const TorusDomain& domain, double period, std::vector<ForcingTerm> terms,
                             std::optional<double> shutoff)
    : domain_(domain), table_(ModeTable::get(domain)), period_(period), terms_(std::move(terms)),
      shutoff_(shutoff)
{
    if (!std::isfinite(period) || !(period > 0.0)) throw InvalidInput("forcing period must be positive");
    if (shutoff_ && !(*shutoff_ > 0.0 && *shutoff_ < period))
        throw InvalidInput("forcing shutoff must lie in (0, T)");
    const int d = domain.dimension;
    for (const auto& t : terms_) {
        for (int a = d; a < 3; ++a)
            if (t.k[a] != 0) throw InvalidInput("forcing wavevector has too many components");
        if (!in_half_space(t.k, d))
            throw InvalidInput("forcing wavevector must lie in the half-space (first nonzero entry > 0)");
        if (t.polarization < 0 || t.polarization > d - 2)
            throw InvalidInput("forcing polarization out of range");
        if (!std::isfinite(t.amplitude.real()) || !std::isfinite(t.amplitude.imag()))
            throw InvalidInput("forcing amplitude must be finite");
        if (!std::isfinite(t.profile.phase)) throw InvalidInput("forcing phase must be finite");
        if ((t.profile.kind == ProfileKind::sine || t.profile.kind == ProfileKind::cosine) &&
            t.profile.harmonic < 1)
            throw InvalidInput("forcing harmonic must be >= 1");
        if (t.profile.kind == ProfileKind::bump && !shutoff_)
            throw InvalidInput("bump forcing profile requires a shutoff instant");
        if (auto m = table_->find(t.k, t.polarization); m && t.amplitude != Complex{})
            active_.push_back({*m, t.amplitude, t.profile});
    }
    max_l2_ = compute_max_l2();
}

ForcingSignal ForcingSignal::zero(const TorusDomain& domain, double period)
{
    return ForcingSignal(domain, period, {});
}

double ForcingSignal::profile_value(const TimeProfile& p, double tau) const
{
    const double w = 2.0 * std::numbers::pi / period_;
    switch (p.kind) {
    case ProfileKind::constant:
        return 1.0;
    case ProfileKind::sine:
        return std::sin(w * p.harmonic * tau + p.phase);
    case ProfileKind::cosine:
        return std::cos(w * p.harmonic * tau + p.phase);
    case ProfileKind::bump: {
        const double s = std::sin(std::numbers::pi * tau / *shutoff_);
        return s * s;
    }
    }
    return 0.0;
}

void ForcingSignal::evaluate_into(double t, SpectralField& out) const
{
    std::fill(out.coefficients().begin(), out.coefficients().end(), Complex{});
    double tau = std::fmod(t + offset_, period_);
    if (tau < 0.0) tau += period_;
    if (shutoff_ && tau >= *shutoff_) return;
    for (const auto& a : active_) out[a.mode] += a.amplitude * profile_value(a.profile, tau);
}

SpectralField ForcingSignal::evaluate(double t) const
{
    SpectralField out(table_);
    evaluate_into(t, out);
    return out;
}

double ForcingSignal::l2_norm(double t) const { return evaluate(t).norm(); }

double ForcingSignal::compute_max_l2() const
{
    if (active_.empty()) return 0.0;
    constexpr int samples = 4096;
    const double h = period_ / samples;
    double best_t = 0.0;
    double best = -1.0;
    for (int i = 0; i <= samples; ++i) {
        const double t = i * h;
        const double v = l2_norm(t);
        if (v > best) {
            best = v;
            best_t = t;
        }
    }
    if (shutoff_) {
        best = std::max(best, l2_norm(std::nextafter(*shutoff_, 0.0)));  // left limit
    }
    // Golden-section refinement around the best sample.
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = best_t - h;
    double b = best_t + h;
    double c = b - g * (b - a);
    double d = a + g * (b - a);
    double fc = l2_norm(c);
    double fd = l2_norm(d);
    for (int it = 0; it < 80; ++it) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = l2_norm(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = l2_norm(d);
        }
    }
    return std::max({best, fc, fd});
}

ForcingSignal ForcingSignal::shifted(double s) const
{
    ForcingSignal out = *this;
    out.offset_ = offset_ + s;
    return out;
}

ForcingSignal ForcingSignal::on_domain(const TorusDomain& domain) const
{
    ForcingSignal out(domain, period_, terms_, shutoff_);
    out.offset_ = offset_;
    return out;
}

} // namespace gnflow
