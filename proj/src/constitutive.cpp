#include "gnflow/constitutive.hpp"

#include <cmath>

#include "gnflow/error.hpp"

namespace gnflow {

namespace {

void require_finite(const Tensor& d)
{
    for (double x : d)
        if (!std::isfinite(x)) throw InvalidInput("tensor has non-finite entries");
}

} // namespace

void StressParams::validate() const
{
    if (!std::isfinite(q) || !(q > kMinPowerLawIndex))
        throw InvalidInput("power-law index q must exceed 6/5");
    if (!std::isfinite(kappa) || kappa < 0.0) throw InvalidInput("kappa must be finite and >= 0");
}

void RegularizationParams::validate() const
{
    if (!std::isfinite(epsilon) || epsilon < 0.0) throw InvalidInput("epsilon must be finite and >= 0");
}

double frobenius_squared(const Tensor& a)
{
    double s = 0.0;
    for (double x : a) s += x * x;
    return s;
}

double contract(const Tensor& a, const Tensor& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double stress_factor(double norm_sq, const StressParams& params)
{
    if (params.q == 2.0) return 1.0;
    const double base = params.kappa + norm_sq;
    if (base == 0.0) return 0.0;
    return std::pow(base, 0.5 * (params.q - 2.0));
}

double p_stress_factor(double norm_sq, double epsilon)
{
    if (epsilon == 0.0 || norm_sq == 0.0) return 0.0;
    return epsilon * std::pow(norm_sq, 0.1);
}

Tensor evaluate_stress(const Tensor& d, const StressParams& params)
{
    require_finite(d);
    const double f = stress_factor(frobenius_squared(d), params);
    Tensor s{};
    for (std::size_t i = 0; i < d.size(); ++i) s[i] = f * d[i];
    return s;
}

Tensor evaluate_p_stress(const Tensor& d, const RegularizationParams& reg)
{
    require_finite(d);
    const double f = p_stress_factor(frobenius_squared(d), reg.epsilon);
    Tensor s{};
    for (std::size_t i = 0; i < d.size(); ++i) s[i] = f * d[i];
    return s;
}

double dissipation_density(const Tensor& d, const StressParams& params, const RegularizationParams& reg)
{
    require_finite(d);
    const double n2 = frobenius_squared(d);
    return stress_factor(n2, params) * n2 + p_stress_factor(n2, reg.epsilon) * n2;
}

double monotonicity_gap(const Tensor& d1, const Tensor& d2, const StressParams& params)
{
    const Tensor s1 = evaluate_stress(d1, params);
    const Tensor s2 = evaluate_stress(d2, params);
    double gap = 0.0;
    for (std::size_t i = 0; i < d1.size(); ++i) gap += (s1[i] - s2[i]) * (d1[i] - d2[i]);
    return gap;
}

} // namespace gnflow
