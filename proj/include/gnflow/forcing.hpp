#pragma once

#include <optional>
#include <vector>

#include "gnflow/spectral_basis.hpp"

namespace gnflow {

enum class ProfileKind {
    constant,
    sine,    // sin(2 pi m t / T + phase)
    cosine,  // cos(2 pi m t / T + phase)
    bump,    // sin^2(pi t / t_shutoff) on [0, t_shutoff]; needs a shutoff
};

struct TimeProfile {
    ProfileKind kind = ProfileKind::constant;
    int harmonic = 1;
    double phase = 0.0;
};

/// One forced mode: b_m(t) = amplitude * profile(t) on the basis mode (k, pol).
struct ForcingTerm {
    Wavevector k{};
    int polarization = 0;
    Complex amplitude{};
    TimeProfile profile{};
};

/// T-periodic body force given directly by its projections b_k = (b, w^k).
/// Terms beyond the cutoff of the domain are dropped by the projection. With a
/// shutoff t_s the force vanishes on [t_s, T) of every period.
class ForcingSignal {
public:
    ForcingSignal(const TorusDomain& domain, double period, std::vector<ForcingTerm> terms,
                  std::optional<double> shutoff = std::nullopt);

    static ForcingSignal zero(const TorusDomain& domain, double period);

    const TorusDomain& domain() const { return domain_; }
    double period() const { return period_; }
    std::optional<double> shutoff() const { return shutoff_; }
    const std::vector<ForcingTerm>& terms() const { return terms_; }
    double time_offset() const { return offset_; }

    SpectralField evaluate(double t) const;
    void evaluate_into(double t, SpectralField& out) const;
    double l2_norm(double t) const;
    /// sup over one period of ||b(t)||_{L^2}, cached at construction.
    double max_l2() const { return max_l2_; }
    bool identically_zero() const { return active_.empty(); }

    /// The force t -> b(t + s).
    ForcingSignal shifted(double s) const;
    /// Same terms projected onto another cutoff of the same torus.
    ForcingSignal on_domain(const TorusDomain& domain) const;

private:
    struct Active {
        std::size_t mode;
        Complex amplitude;
        TimeProfile profile;
    };

    double profile_value(const TimeProfile& p, double tau) const;
    double compute_max_l2() const;

    TorusDomain domain_;
    std::shared_ptr<const ModeTable> table_;
    double period_;
    std::vector<ForcingTerm> terms_;
    std::optional<double> shutoff_;
    double offset_ = 0.0;
    std::vector<Active> active_;
    double max_l2_ = 0.0;
};

} // namespace gnflow
