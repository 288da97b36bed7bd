#pragma once

// Divergence-free trigonometric Galerkin basis on the periodic d-torus.
//
// A real velocity field with zero mean is stored by one complex amplitude per
// retained mode (k, polarization) with k in the Hermitian half-space
// (first nonzero component positive):
//
//     v(x) = sum_m  c_m e_m exp(i K_m.x) + conj,     K_m = 2 pi k_m / L,
//
// where e_m is a real unit vector orthogonal to k_m. The amplitude of -k is
// conj(c_m) with the same polarization vector, so every field is real and
// exactly solenoidal. Modes are ordered lexicographically in k, then by
// polarization; that order is frozen.

#include <array>
#include <complex>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace gnflow {

using Complex = std::complex<double>;
using Wavevector = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

struct TorusDomain {
    int dimension = 2;
    double side_length = 1.0;
    int mode_cutoff = 1;

    /// Throws InvalidInput unless d in {2,3}, L > 0 and n_max >= 1.
    void validate() const;
    double volume() const;
    /// Physical wavenumber of k = 1, i.e. 2 pi / L.
    double wavenumber_unit() const;

    bool operator==(const TorusDomain&) const = default;
};

struct DivFreeMode {
    Wavevector k{};
    int polarization = 0;

    bool operator==(const DivFreeMode&) const = default;
};

bool in_half_space(const Wavevector& k, int dimension);

/// Unit vector orthogonal to k. In 2D the single polarization is (-k2, k1)/|k|;
/// in 3D the pair is a fixed right-handed frame built from the coordinate axis
/// least aligned with k.
Vec3 polarization_vector(const Wavevector& k, int dimension, int polarization);

/// Retained modes in canonical order. Throws InvalidInput for an invalid domain
/// (n_max = 0 included).
std::vector<DivFreeMode> enumerate_modes(const TorusDomain& domain);

class ModeTable {
public:
    explicit ModeTable(const TorusDomain& domain);

    /// Shared, process-wide cached table for a domain.
    static std::shared_ptr<const ModeTable> get(const TorusDomain& domain);

    const TorusDomain& domain() const { return domain_; }
    std::size_t size() const { return modes_.size(); }
    const DivFreeMode& mode(std::size_t i) const { return modes_[i]; }
    const Vec3& polarization(std::size_t i) const { return polarizations_[i]; }
    /// Physical wavevector 2 pi k / L.
    const Vec3& wavevector(std::size_t i) const { return wavevectors_[i]; }
    double wavenumber_squared(std::size_t i) const { return wavenumber_sq_[i]; }
    std::optional<std::size_t> find(const Wavevector& k, int polarization) const;

private:
    TorusDomain domain_;
    std::vector<DivFreeMode> modes_;
    std::vector<Vec3> polarizations_;
    std::vector<Vec3> wavevectors_;
    std::vector<double> wavenumber_sq_;
};

class SpectralField {
public:
    explicit SpectralField(const TorusDomain& domain);
    explicit SpectralField(std::shared_ptr<const ModeTable> table);
    SpectralField(std::shared_ptr<const ModeTable> table, std::vector<Complex> coefficients);

    const TorusDomain& domain() const { return table_->domain(); }
    const ModeTable& modes() const { return *table_; }
    const std::shared_ptr<const ModeTable>& table() const { return table_; }
    std::size_t size() const { return coefficients_.size(); }

    Complex& operator[](std::size_t i) { return coefficients_[i]; }
    const Complex& operator[](std::size_t i) const { return coefficients_[i]; }
    std::span<Complex> coefficients() { return coefficients_; }
    std::span<const Complex> coefficients() const { return coefficients_; }

    /// ||v||^2 in L^2(torus): L^d times the Parseval sum over +-k.
    double norm_squared() const;
    double norm() const;
    /// (u, v) in L^2(torus).
    double inner(const SpectralField& other) const;
    bool is_finite() const;
    bool is_zero() const;

    /// Real coordinates x with |x| = ||v||_{L^2}: x[2m], x[2m+1] are the scaled
    /// real and imaginary parts of mode m.
    Eigen::VectorXd to_isometric() const;
    static SpectralField from_isometric(std::shared_ptr<const ModeTable> table,
                                        const Eigen::VectorXd& x);

    /// Same field on another cutoff of the same torus: modes absent from the
    /// target are dropped, new modes are zero.
    SpectralField restricted_to(const TorusDomain& target) const;

    SpectralField& operator+=(const SpectralField& other);
    SpectralField& operator-=(const SpectralField& other);
    SpectralField& operator*=(double s);

    friend SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }
    friend SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
    friend SpectralField operator*(SpectralField a, double s) { return a *= s; }
    friend SpectralField operator*(double s, SpectralField a) { return a *= s; }

private:
    void require_compatible(const SpectralField& other) const;

    std::shared_ptr<const ModeTable> table_;
    std::vector<Complex> coefficients_;
};

/// {d, L, n_max, modes: [[k..., pol, re, im], ...]} in canonical order.
nlohmann::json to_json(const SpectralField& field);
/// Inverse of to_json; throws InvalidInput on schema or ordering violations.
SpectralField spectral_field_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Physical grids and transforms

struct PhysicalGrid {
    int dimension = 2;
    int points = 0;
    double side_length = 1.0;

    std::size_t size() const;
    double spacing() const { return side_length / points; }
    double cell_volume() const;
    /// Coordinates of flat index p (row-major, first axis slowest).
    Vec3 coordinate(std::size_t p) const;
};

/// Smallest 2,3,5-smooth count >= floor(2 n_max grid_factor) + 1. With
/// grid_factor = 1.5 quadratic products of retained modes are alias-free.
int grid_points_for(const TorusDomain& domain, double grid_factor);

struct VectorGrid {
    PhysicalGrid grid;
    std::vector<std::vector<double>> components;  // [i][p]
};

struct TensorGrid {
    PhysicalGrid grid;
    std::vector<std::vector<double>> entries;  // [i * d + j][p]

    double at(int i, int j, std::size_t p) const
    {
        return entries[static_cast<std::size_t>(i * grid.dimension + j)][p];
    }
};

/// FFTW real <-> half-complex transform with owned, aligned buffers. The
/// spectrum holds normalized Fourier coefficients, f(x) = sum_k f_k exp(iK.x).
/// An instance is not shareable across threads; copies get their own plans.
class FourierTransform {
public:
    FourierTransform(int dimension, int points);
    FourierTransform(const FourierTransform& other);
    FourierTransform& operator=(const FourierTransform&) = delete;
    ~FourierTransform();

    int dimension() const { return dimension_; }
    int points() const { return points_; }
    std::size_t real_size() const { return real_size_; }
    std::size_t spectral_size() const { return spectral_size_; }
    /// Storage index of k; requires k[d-1] >= 0 and |k_i| < points/2.
    std::size_t index(const Wavevector& k) const;

    void forward(std::span<const double> values, std::span<Complex> spectrum);
    void inverse(std::span<const Complex> spectrum, std::span<double> values);

private:
    struct Plans;

    int dimension_;
    int points_;
    std::size_t real_size_;
    std::size_t spectral_size_;
    std::unique_ptr<Plans> plans_;
};

/// Pseudo-spectral workspace binding a mode table to a physical grid.
class SpectralTransforms {
public:
    SpectralTransforms(std::shared_ptr<const ModeTable> table, int points);

    const PhysicalGrid& grid() const { return grid_; }
    const ModeTable& modes() const { return *table_; }
    const std::shared_ptr<const ModeTable>& table() const { return table_; }

    /// out[i][p] = v_i at grid point p.
    void velocity(const SpectralField& field, std::vector<std::vector<double>>& out);
    /// out[i*d+j][p] = d_j v_i at grid point p.
    void gradient(const SpectralField& field, std::vector<std::vector<double>>& out);
    /// out[i*d+j][p] = (Dv)_ij at grid point p (both triangles filled).
    void strain(const SpectralField& field, std::vector<std::vector<double>>& out);
    /// Leray-projected, truncated coefficients of a vector grid field.
    void project(const std::vector<std::vector<double>>& vector_field, std::span<Complex> out);
    /// Coefficients of P(div T) for a symmetric tensor grid T (entries[i*d+j]).
    void project_divergence(const std::vector<std::vector<double>>& tensor, std::span<Complex> out);

private:
    struct Slot {
        std::size_t index;
        bool conjugate;
    };

    // Writes amplitude a (for +k) of mode m into spectrum_, accumulating.
    void deposit(std::size_t mode, Complex a);
    // Fourier coefficient of spectrum_ at +k of mode m.
    Complex gather(std::size_t mode) const;

    std::shared_ptr<const ModeTable> table_;
    PhysicalGrid grid_;
    FourierTransform fft_;
    std::vector<std::vector<Slot>> slots_;  // per mode: storage positions (1 or 2)
    std::vector<Complex> spectrum_;
    std::vector<std::vector<Complex>> spectra_;  // per tensor entry, for projections
};

/// Grid samples of the velocity; throws InvalidInput if grid_factor < 1.
VectorGrid synthesize(const SpectralField& field, double grid_factor = 1.5);
/// Same with an explicit point count; throws if points < 2 n_max + 1.
VectorGrid synthesize_on(const SpectralField& field, int points);
/// Leray projection + truncation to n_max (the projector P^n). Throws
/// InvalidInput on non-finite samples or inconsistent sizes.
SpectralField analyze(const VectorGrid& grid, const TorusDomain& domain);
/// Dv = (grad v + grad v^T)/2 sampled on the grid.
TensorGrid sym_gradient(const SpectralField& field, double grid_factor = 1.5);
/// Full velocity gradient, entries[i*d+j] = d_j v_i.
TensorGrid gradient(const SpectralField& field, double grid_factor = 1.5);

} // namespace gnflow
