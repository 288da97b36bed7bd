#pragma once

#include <cmath>
#include <random>

#include "gnflow/spectral_basis.hpp"

namespace gnflow::testing {

// Random field with amplitudes decaying like |k|^-decay.
inline SpectralField random_field(const TorusDomain& dom, std::mt19937_64& rng, double scale = 1.0,
                                  double decay = 1.0)
{
    std::normal_distribution<double> g(0.0, 1.0);
    SpectralField f(dom);
    for (std::size_t m = 0; m < f.size(); ++m) {
        const double k = std::sqrt(f.modes().wavenumber_squared(m)) / dom.wavenumber_unit();
        f[m] = scale * std::pow(k, -decay) * Complex{g(rng), g(rng)};
    }
    return f;
}

inline double max_abs_diff(const SpectralField& a, const SpectralField& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs(const SpectralField& a)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}

} // namespace gnflow::testing
