#pragma once

// Right-hand side of the Galerkin coefficient system
//
//   c_k' = (v (x) v, grad w^k) - (S(Dv), Dw^k) - eps (grad v, grad w^k)
//          - eps (|Dv|^(1/5) Dv, Dw^k) + (b, w^k)
//
// evaluated pseudo-spectrally: products and stresses are formed on the padded
// grid and the divergence of the resulting tensor is projected back onto the
// basis. With the default 3/2 padding the convection term is alias-free; the
// non-polynomial stresses are integrated with the grid trapezoid rule.

#include <vector>

#include "gnflow/constitutive.hpp"
#include "gnflow/forcing.hpp"
#include "gnflow/spectral_basis.hpp"

namespace gnflow {

struct GalerkinState {
    double t = 0.0;
    SpectralField field;
};

/// Per-instant functionals of the energy estimate.
struct EnergyTerms {
    double kinetic = 0.0;          // ||v||^2
    double dissipation_q = 0.0;    // int |Dv|^q
    double dissipation_lap = 0.0;  // eps ||grad v||^2
    double dissipation_p = 0.0;    // eps int |Dv|^(11/5)
    double power_in = 0.0;         // (b, v)
    double stress_power = 0.0;     // int S(Dv):Dv
    double forcing_norm = 0.0;     // ||b||
};

/// Spatial integrals used by the interpolation and Hoelder audits.
struct AuditTerms {
    double velocity_power = 0.0;   // int |v|^(5q/3)
    double gradient_q = 0.0;       // int |grad v|^q
    double gradient_5q6 = 0.0;     // int |grad v|^(5q/6)
    double stress_dual = 0.0;      // int |S(Dv)|^q'
};

class GalerkinSystem {
public:
    GalerkinSystem(const TorusDomain& domain, StressParams stress, RegularizationParams reg,
                   ForcingSignal forcing, double grid_factor = 1.5);

    const TorusDomain& domain() const { return table_->domain(); }
    const std::shared_ptr<const ModeTable>& table() const { return table_; }
    const StressParams& stress() const { return stress_; }
    const RegularizationParams& regularization() const { return reg_; }
    const ForcingSignal& forcing() const { return forcing_; }
    double grid_factor() const { return grid_factor_; }
    const PhysicalGrid& grid() const { return transforms_.grid(); }

    /// q < 2 with kappa = 0: continuous but not Lipschitz at Dv = 0.
    bool degenerate_rheology() const { return stress_.degenerate(); }

    SpectralField convection_rhs(const SpectralField& v);
    SpectralField viscous_rhs(const SpectralField& v);
    SpectralField forcing_rhs(double t) const;
    /// convection + viscous + forcing, summed termwise.
    SpectralField full_rhs(double t, const SpectralField& v);

    EnergyTerms energy_terms(double t, const SpectralField& v);
    AuditTerms audit_terms(const SpectralField& v);

    /// Split used by the stiff integrator: the RHS equals
    /// -linear_decay()[m] * c_m + nonlinear_rhs(t, v)[m]. The decay holds the
    /// eps-Laplacian symbol, plus the Stokes symbol |K|^2/2 when q = 2.
    const std::vector<double>& linear_decay() const { return linear_decay_; }
    void nonlinear_rhs(double t, const SpectralField& v, SpectralField& out);

private:
    void form_strain(const SpectralField& v);
    void stress_tensor(bool include_power_law);

    std::shared_ptr<const ModeTable> table_;
    StressParams stress_;
    RegularizationParams reg_;
    ForcingSignal forcing_;
    double grid_factor_;
    SpectralTransforms transforms_;
    std::vector<double> linear_decay_;

    // Scratch
    std::vector<std::vector<double>> velocity_;
    std::vector<std::vector<double>> strain_;
    std::vector<std::vector<double>> tensor_;
    std::vector<double> strain_norm_sq_;
    SpectralField forcing_scratch_;
};

} // namespace gnflow
