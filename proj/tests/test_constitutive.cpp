#include <cmath>
#include <random>

#include "doctest.h"
#include "gnflow/constitutive.hpp"
#include "gnflow/error.hpp"

using namespace gnflow;

namespace {

Tensor random_symmetric(std::mt19937_64& rng, double scale)
{
    std::normal_distribution<double> g(0.0, scale);
    Tensor t{};
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) t[i * 3 + j] = t[j * 3 + i] = g(rng);
    return t;
}

Tensor scaled(const Tensor& a, double s)
{
    Tensor r = a;
    for (auto& x : r) x *= s;
    return r;
}

// Diagonal tensor with Frobenius norm r.
Tensor with_norm(double r) { return {r, 0, 0, 0, 0, 0, 0, 0, 0}; }

} // namespace

TEST_CASE("evaluate_stress: zero, Newtonian, and a scalar value")
{
    CHECK(evaluate_stress(Tensor{}, {1.5, 0.0}) == Tensor{});
    CHECK(evaluate_stress(Tensor{}, {2.5, 0.3}) == Tensor{});
    std::mt19937_64 rng(1);
    const Tensor d = random_symmetric(rng, 2.0);
    CHECK(evaluate_stress(d, {2.0, 0.7}) == d);
    // |D| = 4, q = 3/2: factor 4^(-1/2)
    const Tensor s = evaluate_stress(with_norm(4.0), {1.5, 0.0});
    CHECK(s[0] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("evaluate_p_stress examples")
{
    const Tensor d = with_norm(32.0);
    CHECK(evaluate_p_stress(d, {0.0}) == Tensor{});
    CHECK(evaluate_p_stress(with_norm(1.0), {1.0})[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(evaluate_p_stress(d, {0.5})[0] == doctest::Approx(32.0).epsilon(1e-14));
}

TEST_CASE("non-finite tensors are rejected")
{
    Tensor d{};
    d[4] = std::nan("");
    CHECK_THROWS_AS(evaluate_stress(d, {1.5, 0.1}), InvalidInput);
    CHECK_THROWS_AS(evaluate_p_stress(d, {0.1}), InvalidInput);
    CHECK_THROWS_AS(dissipation_density(d, {2.0, 0.0}, {0.0}), InvalidInput);
}

TEST_CASE("parameter validation")
{
    CHECK_THROWS_AS(StressParams({1.2, 0.0}).validate(), InvalidInput);
    CHECK_THROWS_AS(StressParams({1.0, 0.0}).validate(), InvalidInput);
    CHECK_THROWS_AS(StressParams({1.5, -1e-3}).validate(), InvalidInput);
    CHECK_NOTHROW(StressParams({1.21, 0.0}).validate());
    CHECK_THROWS_AS(RegularizationParams({-1.0}).validate(), InvalidInput);
    CHECK(StressParams({1.5, 0.0}).degenerate());
    CHECK_FALSE(StressParams({2.0, 0.0}).degenerate());
    CHECK_FALSE(StressParams({1.5, 1e-6}).degenerate());
}

TEST_CASE("dissipation_density examples")
{
    CHECK(dissipation_density(Tensor{}, {1.5, 1.0}, {0.3}) == 0.0);
    std::mt19937_64 rng(2);
    const Tensor d = random_symmetric(rng, 1.0);
    CHECK(dissipation_density(d, {2.0, 0.0}, {0.0}) == doctest::Approx(frobenius_squared(d)).epsilon(1e-15));
    const Tensor d3 = with_norm(std::sqrt(3.0));
    CHECK(dissipation_density(d3, {1.5, 1.0}, {0.0}) ==
          doctest::Approx(3.0 * std::pow(4.0, -0.25)).epsilon(1e-14));
}

TEST_CASE("monotonicity_gap examples and property")
{
    std::mt19937_64 rng(3);
    const Tensor a = random_symmetric(rng, 1.0);
    const Tensor b = random_symmetric(rng, 1.0);
    CHECK(monotonicity_gap(a, a, {1.5, 0.0}) == 0.0);
    Tensor diff{};
    for (int i = 0; i < 9; ++i) diff[i] = a[i] - b[i];
    CHECK(monotonicity_gap(a, b, {2.0, 0.0}) == doctest::Approx(frobenius_squared(diff)).epsilon(1e-14));

    for (double q : {1.3, 1.8, 2.5})
        for (double kappa : {0.0, 0.1}) {
            int violations = 0;
            for (int n = 0; n < 10000; ++n) {
                const double s = std::pow(10.0, std::uniform_real_distribution<double>(-3, 3)(rng));
                const Tensor x = random_symmetric(rng, s);
                const Tensor y = random_symmetric(rng, s);
                if (monotonicity_gap(x, y, {q, kappa}) < 0.0) ++violations;
            }
            CHECK(violations == 0);
        }
}

TEST_CASE("homogeneity at kappa = 0")
{
    std::mt19937_64 rng(4);
    for (double q : {1.3, 1.5, 2.5}) {
        const Tensor d = random_symmetric(rng, 1.0);
        for (double lambda : {0.01, 0.5, 3.0, 100.0}) {
            const Tensor lhs = evaluate_stress(scaled(d, lambda), {q, 0.0});
            const Tensor rhs = scaled(evaluate_stress(d, {q, 0.0}), std::pow(lambda, q - 1.0));
            for (int i = 0; i < 9; ++i) CHECK(std::abs(lhs[i] - rhs[i]) <= 1e-12 * std::abs(rhs[i]) + 1e-300);
        }
    }
}

TEST_CASE("stress converges as kappa decreases")
{
    std::mt19937_64 rng(5);
    const Tensor d = random_symmetric(rng, 1.0);
    double prev = INFINITY;
    for (int e = 1; e <= 8; ++e) {
        const Tensor a = evaluate_stress(d, {1.5, std::pow(10.0, -e)});
        const Tensor b = evaluate_stress(d, {1.5, 0.0});
        Tensor diff{};
        for (int i = 0; i < 9; ++i) diff[i] = a[i] - b[i];
        const double gap = std::sqrt(frobenius_squared(diff));
        CHECK(gap < prev);
        prev = gap;
    }
}
