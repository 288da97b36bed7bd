#include "gnflow/galerkin_system.hpp"

#include <cmath>

#include "gnflow/error.hpp"

namespace gnflow {

namespace {

ForcingSignal forcing_on(const TorusDomain& domain, ForcingSignal f)
{
    if (f.domain() == domain) return f;
    return f.on_domain(domain);
}

} // namespace

GalerkinSystem::GalerkinSystem(const TorusDomain& domain, StressParams stress, RegularizationParams reg,
                               ForcingSignal forcing, double grid_factor)
    : table_(ModeTable::get(domain)),
      stress_(stress),
      reg_(reg),
      forcing_(forcing_on(domain, std::move(forcing))),
      grid_factor_(grid_factor),
      transforms_(table_, grid_points_for(domain, grid_factor)),
      forcing_scratch_(table_)
{
    stress_.validate();
    reg_.validate();
    linear_decay_.resize(table_->size());
    for (std::size_t m = 0; m < table_->size(); ++m) {
        const double k2 = table_->wavenumber_squared(m);
        linear_decay_[m] = reg_.epsilon * k2 + (stress_.q == 2.0 ? 0.5 * k2 : 0.0);
    }
    const std::size_t n = transforms_.grid().size();
    const auto d2 = static_cast<std::size_t>(domain.dimension * domain.dimension);
    tensor_.assign(d2, std::vector<double>(n));
    strain_norm_sq_.assign(n, 0.0);
}

void GalerkinSystem::form_strain(const SpectralField& v)
{
    transforms_.strain(v, strain_);
    const std::size_t n = strain_norm_sq_.size();
    std::fill(strain_norm_sq_.begin(), strain_norm_sq_.end(), 0.0);
    for (const auto& e : strain_)
        for (std::size_t p = 0; p < n; ++p) strain_norm_sq_[p] += e[p] * e[p];
}

// tensor_ = (power-law factor + p factor) * D, upper triangle only.
void GalerkinSystem::stress_tensor(bool include_power_law)
{
    const int d = domain().dimension;
    const std::size_t n = strain_norm_sq_.size();
    for (std::size_t p = 0; p < n; ++p) {
        const double s = strain_norm_sq_[p];
        double f = p_stress_factor(s, reg_.epsilon);
        if (include_power_law) f += stress_factor(s, stress_);
        if (!std::isfinite(f)) throw IntegrationFailure("non-finite stress evaluation", 0.0);
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) tensor_[i * d + j][p] = f * strain_[i * d + j][p];
    }
}

SpectralField GalerkinSystem::convection_rhs(const SpectralField& v)
{
    const int d = domain().dimension;
    transforms_.velocity(v, velocity_);
    const std::size_t n = transforms_.grid().size();
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j)
            for (std::size_t p = 0; p < n; ++p) tensor_[i * d + j][p] = -velocity_[i][p] * velocity_[j][p];
    SpectralField out(table_);
    transforms_.project_divergence(tensor_, out.coefficients());
    return out;
}

SpectralField GalerkinSystem::viscous_rhs(const SpectralField& v)
{
    form_strain(v);
    stress_tensor(true);
    SpectralField out(table_);
    transforms_.project_divergence(tensor_, out.coefficients());
    for (std::size_t m = 0; m < out.size(); ++m)
        out[m] -= reg_.epsilon * table_->wavenumber_squared(m) * v[m];
    return out;
}

SpectralField GalerkinSystem::forcing_rhs(double t) const { return forcing_.evaluate(t); }

SpectralField GalerkinSystem::full_rhs(double t, const SpectralField& v)
{
    SpectralField out = convection_rhs(v);
    out += viscous_rhs(v);
    out += forcing_rhs(t);
    return out;
}

void GalerkinSystem::nonlinear_rhs(double t, const SpectralField& v, SpectralField& out)
{
    const int d = domain().dimension;
    const bool linear_stress = stress_.q == 2.0;
    transforms_.velocity(v, velocity_);
    form_strain(v);
    stress_tensor(!linear_stress);
    const std::size_t n = transforms_.grid().size();
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j)
            for (std::size_t p = 0; p < n; ++p) tensor_[i * d + j][p] -= velocity_[i][p] * velocity_[j][p];
    transforms_.project_divergence(tensor_, out.coefficients());
    forcing_.evaluate_into(t, forcing_scratch_);
    for (std::size_t m = 0; m < out.size(); ++m) out[m] += forcing_scratch_[m];
}

EnergyTerms GalerkinSystem::energy_terms(double t, const SpectralField& v)
{
    EnergyTerms e;
    e.kinetic = v.norm_squared();
    double lap = 0.0;
    for (std::size_t m = 0; m < v.size(); ++m) lap += table_->wavenumber_squared(m) * std::norm(v[m]);
    e.dissipation_lap = reg_.epsilon * 2.0 * domain().volume() * lap;

    form_strain(v);
    double dq = 0.0, dp = 0.0, sp = 0.0;
    const double half_q = 0.5 * stress_.q;
    for (double s : strain_norm_sq_) {
        dq += std::pow(s, half_q);
        sp += stress_factor(s, stress_) * s;
        if (reg_.epsilon > 0.0) dp += std::pow(s, 0.5 * kRegularizerExponent);
    }
    const double dv = transforms_.grid().cell_volume();
    e.dissipation_q = dq * dv;
    e.stress_power = sp * dv;
    e.dissipation_p = reg_.epsilon * dp * dv;

    forcing_.evaluate_into(t, forcing_scratch_);
    e.power_in = forcing_scratch_.inner(v);
    e.forcing_norm = forcing_scratch_.norm();
    return e;
}

AuditTerms GalerkinSystem::audit_terms(const SpectralField& v)
{
    const double q = stress_.q;
    transforms_.velocity(v, velocity_);
    std::vector<std::vector<double>> grad;
    transforms_.gradient(v, grad);
    form_strain(v);
    const double dual = stress_.dual_exponent();
    const std::size_t n = transforms_.grid().size();
    AuditTerms a;
    for (std::size_t p = 0; p < n; ++p) {
        const double s = strain_norm_sq_[p];
        a.stress_dual += std::pow(stress_factor(s, stress_) * std::sqrt(s), dual);
        double u2 = 0.0, g2 = 0.0;
        for (const auto& c : velocity_) u2 += c[p] * c[p];
        for (const auto& c : grad) g2 += c[p] * c[p];
        a.velocity_power += std::pow(u2, 5.0 * q / 6.0);
        a.gradient_q += std::pow(g2, 0.5 * q);
        a.gradient_5q6 += std::pow(g2, 5.0 * q / 12.0);
    }
    const double dv = transforms_.grid().cell_volume();
    a.velocity_power *= dv;
    a.gradient_q *= dv;
    a.gradient_5q6 *= dv;
    a.stress_dual *= dv;
    return a;
}

} // namespace gnflow
