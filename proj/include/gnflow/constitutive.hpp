#pragma once

// Power-law extra stress S = (kappa + |D|^2)^((q-2)/2) D with 2 mu0 = 1, and
// the eps-weighted p-Laplacian regularizer with p = 11/5. |.| is the Frobenius
// norm. Tensors are 3x3 row-major; 2D data uses the upper-left block.

#include <array>

namespace gnflow {

using Tensor = std::array<double, 9>;

/// Exponent of the p-Laplacian regularizer. Not configurable.
inline constexpr double kRegularizerExponent = 11.0 / 5.0;
/// Lower bound on the power-law index for weak solutions.
inline constexpr double kMinPowerLawIndex = 6.0 / 5.0;

struct StressParams {
    double q = 2.0;
    double kappa = 0.0;
    /// Fixed so that 2 mu0 = 1; every constant downstream assumes it.
    static constexpr double mu0 = 0.5;

    /// Throws InvalidInput unless q > 6/5, kappa >= 0, both finite.
    void validate() const;
    double dual_exponent() const { return q / (q - 1.0); }
    /// q < 2 with kappa = 0: the stress is not Lipschitz at D = 0.
    bool degenerate() const { return q < 2.0 && kappa == 0.0; }
};

struct RegularizationParams {
    double epsilon = 0.0;
    static constexpr double p = kRegularizerExponent;

    void validate() const;
};

double frobenius_squared(const Tensor& a);
double contract(const Tensor& a, const Tensor& b);

/// Scalar multiplier (kappa + s)^((q-2)/2) for s = |D|^2, with the continuous
/// extension 0 at s = 0 when kappa = 0 and q < 2 (S(0) = 0).
double stress_factor(double norm_sq, const StressParams& params);
/// Scalar multiplier eps |D|^(1/5).
double p_stress_factor(double norm_sq, double epsilon);

/// S(D). Throws InvalidInput on non-finite entries.
Tensor evaluate_stress(const Tensor& d, const StressParams& params);
/// eps |D|^(1/5) D. Throws InvalidInput on non-finite entries.
Tensor evaluate_p_stress(const Tensor& d, const RegularizationParams& reg);
/// S(D):D + eps |D|^(11/5).
double dissipation_density(const Tensor& d, const StressParams& params, const RegularizationParams& reg);
/// (S(D1) - S(D2)) : (D1 - D2).
double monotonicity_gap(const Tensor& d1, const Tensor& d2, const StressParams& params);

} // namespace gnflow
