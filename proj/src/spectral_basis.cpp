#include "gnflow/spectral_basis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <tuple>

#include <fftw3.h>

#include "gnflow/error.hpp"

namespace gnflow {

namespace {

// FFTW planning is not thread-safe; execution on distinct plans is.
std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Vec3 cross(const Vec3& a, const Vec3& b)
{
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalized(Vec3 v)
{
    const double n = norm3(v);
    for (auto& x : v) x /= n;
    return v;
}

bool is_smooth_235(int n)
{
    for (int f : {2, 3, 5})
        while (n % f == 0) n /= f;
    return n == 1;
}

int wrap(int k, int n) { return ((k % n) + n) % n; }

} // namespace

// ---------------------------------------------------------------------------
// TorusDomain

void TorusDomain::validate() const
{
    if (dimension != 2 && dimension != 3)
        throw InvalidInput("torus dimension must be 2 or 3");
    if (!(side_length > 0.0) || !std::isfinite(side_length))
        throw InvalidInput("torus side length must be positive and finite");
    if (mode_cutoff < 1)
        throw InvalidInput("mode cutoff n_max must be >= 1");
}

double TorusDomain::volume() const { return std::pow(side_length, dimension); }

double TorusDomain::wavenumber_unit() const { return 2.0 * std::numbers::pi / side_length; }

// ---------------------------------------------------------------------------
// Modes

bool in_half_space(const Wavevector& k, int dimension)
{
    for (int i = 0; i < dimension; ++i) {
        if (k[i] > 0) return true;
        if (k[i] < 0) return false;
    }
    return false;
}

Vec3 polarization_vector(const Wavevector& k, int dimension, int polarization)
{
    if (dimension == 2) {
        if (polarization != 0) throw InvalidInput("2D modes carry polarization 0 only");
        const double n = std::hypot(double(k[0]), double(k[1]));
        if (n == 0.0) throw InvalidInput("polarization of the zero wavevector");
        return {-k[1] / n, k[0] / n, 0.0};
    }
    if (polarization != 0 && polarization != 1)
        throw InvalidInput("3D modes carry polarization 0 or 1");
    const Vec3 kv{double(k[0]), double(k[1]), double(k[2])};
    if (norm3(kv) == 0.0) throw InvalidInput("polarization of the zero wavevector");
    int axis = 0;
    for (int i = 1; i < 3; ++i)
        if (std::abs(k[i]) < std::abs(k[axis])) axis = i;
    Vec3 a{0.0, 0.0, 0.0};
    a[axis] = 1.0;
    const Vec3 e1 = normalized(cross(kv, a));
    if (polarization == 0) return e1;
    return normalized(cross(normalized(kv), e1));
}

std::vector<DivFreeMode> enumerate_modes(const TorusDomain& domain)
{
    domain.validate();
    const int d = domain.dimension;
    const int n = domain.mode_cutoff;
    const int pols = d - 1;
    std::vector<DivFreeMode> modes;
    Wavevector k{0, 0, 0};
    // Lexicographic sweep of the box [-n, n]^d.
    const int k2_lo = d == 3 ? -n : 0;
    const int k2_hi = d == 3 ? n : 0;
    for (k[0] = -n; k[0] <= n; ++k[0])
        for (k[1] = -n; k[1] <= n; ++k[1])
            for (k[2] = k2_lo; k[2] <= k2_hi; ++k[2]) {
                if (!in_half_space(k, d)) continue;
                for (int p = 0; p < pols; ++p) modes.push_back({k, p});
            }
    return modes;
}

ModeTable::ModeTable(const TorusDomain& domain)
    : domain_(domain), modes_(enumerate_modes(domain))
{
    const double unit = domain.wavenumber_unit();
    polarizations_.reserve(modes_.size());
    wavevectors_.reserve(modes_.size());
    wavenumber_sq_.reserve(modes_.size());
    for (const auto& m : modes_) {
        polarizations_.push_back(polarization_vector(m.k, domain.dimension, m.polarization));
        const Vec3 kv{unit * m.k[0], unit * m.k[1], unit * m.k[2]};
        wavevectors_.push_back(kv);
        wavenumber_sq_.push_back(kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2]);
    }
}

std::shared_ptr<const ModeTable> ModeTable::get(const TorusDomain& domain)
{
    domain.validate();
    static std::mutex mutex;
    static std::map<std::tuple<int, double, int>, std::shared_ptr<const ModeTable>> cache;
    std::lock_guard lock(mutex);
    auto key = std::make_tuple(domain.dimension, domain.side_length, domain.mode_cutoff);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto table = std::make_shared<const ModeTable>(domain);
    cache.emplace(key, table);
    return table;
}

std::optional<std::size_t> ModeTable::find(const Wavevector& k, int polarization) const
{
    const DivFreeMode probe{k, polarization};
    auto less = [](const DivFreeMode& a, const DivFreeMode& b) {
        return std::tie(a.k, a.polarization) < std::tie(b.k, b.polarization);
    };
    auto it = std::lower_bound(modes_.begin(), modes_.end(), probe, less);
    if (it == modes_.end() || !(*it == probe)) return std::nullopt;
    return static_cast<std::size_t>(it - modes_.begin());
}

// ---------------------------------------------------------------------------
// SpectralField

SpectralField::SpectralField(const TorusDomain& domain) : SpectralField(ModeTable::get(domain)) {}

SpectralField::SpectralField(std::shared_ptr<const ModeTable> table)
    : table_(std::move(table)), coefficients_(table_->size(), Complex{0.0, 0.0})
{
}

SpectralField::SpectralField(std::shared_ptr<const ModeTable> table, std::vector<Complex> coefficients)
    : table_(std::move(table)), coefficients_(std::move(coefficients))
{
    if (coefficients_.size() != table_->size())
        throw InvalidInput("coefficient count does not match the mode table");
}

double SpectralField::norm_squared() const
{
    double s = 0.0;
    for (const auto& c : coefficients_) s += std::norm(c);
    return 2.0 * domain().volume() * s;
}

double SpectralField::norm() const { return std::sqrt(norm_squared()); }

double SpectralField::inner(const SpectralField& other) const
{
    require_compatible(other);
    double s = 0.0;
    for (std::size_t i = 0; i < coefficients_.size(); ++i)
        s += coefficients_[i].real() * other.coefficients_[i].real() +
             coefficients_[i].imag() * other.coefficients_[i].imag();
    return 2.0 * domain().volume() * s;
}

bool SpectralField::is_finite() const
{
    return std::all_of(coefficients_.begin(), coefficients_.end(), [](const Complex& c) {
        return std::isfinite(c.real()) && std::isfinite(c.imag());
    });
}

bool SpectralField::is_zero() const
{
    return std::all_of(coefficients_.begin(), coefficients_.end(),
                       [](const Complex& c) { return c == Complex{0.0, 0.0}; });
}

Eigen::VectorXd SpectralField::to_isometric() const
{
    const double s = std::sqrt(2.0 * domain().volume());
    Eigen::VectorXd x(2 * coefficients_.size());
    for (std::size_t i = 0; i < coefficients_.size(); ++i) {
        x[2 * i] = s * coefficients_[i].real();
        x[2 * i + 1] = s * coefficients_[i].imag();
    }
    return x;
}

SpectralField SpectralField::from_isometric(std::shared_ptr<const ModeTable> table,
                                            const Eigen::VectorXd& x)
{
    if (static_cast<std::size_t>(x.size()) != 2 * table->size())
        throw InvalidInput("isometric vector has the wrong length");
    const double s = 1.0 / std::sqrt(2.0 * table->domain().volume());
    std::vector<Complex> c(table->size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = {s * x[2 * i], s * x[2 * i + 1]};
    return SpectralField(std::move(table), std::move(c));
}

SpectralField SpectralField::restricted_to(const TorusDomain& target) const
{
    if (target.dimension != domain().dimension || target.side_length != domain().side_length)
        throw InvalidInput("restriction requires the same torus");
    SpectralField out(target);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& m = out.modes().mode(i);
        if (auto j = table_->find(m.k, m.polarization)) out[i] = coefficients_[*j];
    }
    return out;
}

void SpectralField::require_compatible(const SpectralField& other) const
{
    if (table_ != other.table_ && !(table_->domain() == other.table_->domain()))
        throw InvalidInput("spectral fields live on different bases");
}

SpectralField& SpectralField::operator+=(const SpectralField& other)
{
    require_compatible(other);
    for (std::size_t i = 0; i < coefficients_.size(); ++i) coefficients_[i] += other.coefficients_[i];
    return *this;
}

SpectralField& SpectralField::operator-=(const SpectralField& other)
{
    require_compatible(other);
    for (std::size_t i = 0; i < coefficients_.size(); ++i) coefficients_[i] -= other.coefficients_[i];
    return *this;
}

SpectralField& SpectralField::operator*=(double s)
{
    for (auto& c : coefficients_) c *= s;
    return *this;
}

nlohmann::json to_json(const SpectralField& field)
{
    const auto& dom = field.domain();
    nlohmann::json modes = nlohmann::json::array();
    for (std::size_t i = 0; i < field.size(); ++i) {
        const auto& m = field.modes().mode(i);
        nlohmann::json row = nlohmann::json::array();
        for (int a = 0; a < dom.dimension; ++a) row.push_back(m.k[a]);
        row.push_back(m.polarization);
        row.push_back(field[i].real());
        row.push_back(field[i].imag());
        modes.push_back(std::move(row));
    }
    return {{"d", dom.dimension}, {"L", dom.side_length}, {"n_max", dom.mode_cutoff}, {"modes", modes}};
}

SpectralField spectral_field_from_json(const nlohmann::json& j)
{
    try {
        TorusDomain dom{j.at("d").get<int>(), j.at("L").get<double>(), j.at("n_max").get<int>()};
        dom.validate();
        SpectralField field(dom);
        const auto& rows = j.at("modes");
        if (!rows.is_array() || rows.size() != field.size())
            throw InvalidInput("spectral field JSON: expected " + std::to_string(field.size()) + " modes");
        const auto width = static_cast<std::size_t>(dom.dimension + 3);
        for (std::size_t i = 0; i < field.size(); ++i) {
            const auto& row = rows[i];
            if (!row.is_array() || row.size() != width)
                throw InvalidInput("spectral field JSON: malformed mode row " + std::to_string(i));
            DivFreeMode m{};
            for (int a = 0; a < dom.dimension; ++a) m.k[a] = row[a].get<int>();
            m.polarization = row[dom.dimension].get<int>();
            if (!(m == field.modes().mode(i)))
                throw InvalidInput("spectral field JSON: mode row " + std::to_string(i) +
                                   " is out of canonical order");
            field[i] = {row[dom.dimension + 1].get<double>(), row[dom.dimension + 2].get<double>()};
        }
        return field;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("spectral field JSON: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Grids

std::size_t PhysicalGrid::size() const
{
    std::size_t n = 1;
    for (int i = 0; i < dimension; ++i) n *= static_cast<std::size_t>(points);
    return n;
}

double PhysicalGrid::cell_volume() const { return std::pow(spacing(), dimension); }

Vec3 PhysicalGrid::coordinate(std::size_t p) const
{
    Vec3 x{0.0, 0.0, 0.0};
    const auto n = static_cast<std::size_t>(points);
    for (int a = dimension - 1; a >= 0; --a) {
        x[a] = spacing() * static_cast<double>(p % n);
        p /= n;
    }
    return x;
}

int grid_points_for(const TorusDomain& domain, double grid_factor)
{
    domain.validate();
    if (!(grid_factor >= 1.0) || !std::isfinite(grid_factor))
        throw InvalidInput("grid factor must be finite and >= 1");
    int n = static_cast<int>(std::floor(2.0 * domain.mode_cutoff * grid_factor)) + 1;
    while (!is_smooth_235(n)) ++n;
    return n;
}

// ---------------------------------------------------------------------------
// FourierTransform

struct FourierTransform::Plans {
    double* real = nullptr;
    fftw_complex* spectral = nullptr;
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

FourierTransform::FourierTransform(int dimension, int points)
    : dimension_(dimension), points_(points), plans_(std::make_unique<Plans>())
{
    if (dimension != 2 && dimension != 3) throw InvalidInput("transform dimension must be 2 or 3");
    if (points < 2) throw InvalidInput("transform needs at least 2 points per axis");
    real_size_ = 1;
    for (int i = 0; i < dimension; ++i) real_size_ *= static_cast<std::size_t>(points);
    spectral_size_ = real_size_ / static_cast<std::size_t>(points) * static_cast<std::size_t>(points / 2 + 1);

    std::array<int, 3> n{points, points, points};
    std::lock_guard lock(fftw_planner_mutex());
    plans_->real = fftw_alloc_real(real_size_);
    plans_->spectral = fftw_alloc_complex(spectral_size_);
    plans_->forward = fftw_plan_dft_r2c(dimension, n.data(), plans_->real, plans_->spectral, FFTW_ESTIMATE);
    plans_->inverse = fftw_plan_dft_c2r(dimension, n.data(), plans_->spectral, plans_->real, FFTW_ESTIMATE);
}

FourierTransform::FourierTransform(const FourierTransform& other)
    : FourierTransform(other.dimension_, other.points_)
{
}

FourierTransform::~FourierTransform()
{
    if (!plans_) return;
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plans_->forward);
    fftw_destroy_plan(plans_->inverse);
    fftw_free(plans_->real);
    fftw_free(plans_->spectral);
}

std::size_t FourierTransform::index(const Wavevector& k) const
{
    const int last = dimension_ - 1;
    std::size_t idx = 0;
    for (int a = 0; a < last; ++a)
        idx = idx * static_cast<std::size_t>(points_) + static_cast<std::size_t>(wrap(k[a], points_));
    return idx * static_cast<std::size_t>(points_ / 2 + 1) + static_cast<std::size_t>(k[last]);
}

void FourierTransform::forward(std::span<const double> values, std::span<Complex> spectrum)
{
    std::copy(values.begin(), values.end(), plans_->real);
    fftw_execute(plans_->forward);
    const double scale = 1.0 / static_cast<double>(real_size_);
    for (std::size_t i = 0; i < spectral_size_; ++i)
        spectrum[i] = Complex{plans_->spectral[i][0] * scale, plans_->spectral[i][1] * scale};
}

void FourierTransform::inverse(std::span<const Complex> spectrum, std::span<double> values)
{
    for (std::size_t i = 0; i < spectral_size_; ++i) {
        plans_->spectral[i][0] = spectrum[i].real();
        plans_->spectral[i][1] = spectrum[i].imag();
    }
    fftw_execute(plans_->inverse);
    std::copy(plans_->real, plans_->real + real_size_, values.begin());
}

// ---------------------------------------------------------------------------
// SpectralTransforms

SpectralTransforms::SpectralTransforms(std::shared_ptr<const ModeTable> table, int points)
    : table_(std::move(table)),
      grid_{table_->domain().dimension, points, table_->domain().side_length},
      fft_(table_->domain().dimension, points)
{
    const auto& dom = table_->domain();
    if (points < 2 * dom.mode_cutoff + 1)
        throw InvalidInput("grid of " + std::to_string(points) + " points cannot resolve n_max = " +
                           std::to_string(dom.mode_cutoff));
    const int d = dom.dimension;
    slots_.resize(table_->size());
    for (std::size_t m = 0; m < table_->size(); ++m) {
        const Wavevector k = table_->mode(m).k;
        Wavevector neg{-k[0], -k[1], -k[2]};
        if (k[d - 1] > 0) {
            slots_[m].push_back({fft_.index(k), false});
        } else if (k[d - 1] < 0) {
            slots_[m].push_back({fft_.index(neg), true});
        } else {
            slots_[m].push_back({fft_.index(k), false});
            slots_[m].push_back({fft_.index(neg), true});
        }
    }
    spectrum_.assign(fft_.spectral_size(), Complex{});
    spectra_.assign(static_cast<std::size_t>(d * d), std::vector<Complex>(fft_.spectral_size()));
}

void SpectralTransforms::deposit(std::size_t mode, Complex a)
{
    for (const auto& s : slots_[mode]) spectrum_[s.index] += s.conjugate ? std::conj(a) : a;
}

Complex SpectralTransforms::gather(std::size_t mode) const
{
    const auto& s = slots_[mode].front();
    return s.conjugate ? std::conj(spectrum_[s.index]) : spectrum_[s.index];
}

void SpectralTransforms::velocity(const SpectralField& field, std::vector<std::vector<double>>& out)
{
    const int d = grid_.dimension;
    out.resize(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        std::fill(spectrum_.begin(), spectrum_.end(), Complex{});
        for (std::size_t m = 0; m < field.size(); ++m)
            deposit(m, field[m] * table_->polarization(m)[i]);
        out[i].resize(grid_.size());
        fft_.inverse(spectrum_, out[i]);
    }
}

void SpectralTransforms::gradient(const SpectralField& field, std::vector<std::vector<double>>& out)
{
    const int d = grid_.dimension;
    out.resize(static_cast<std::size_t>(d * d));
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            std::fill(spectrum_.begin(), spectrum_.end(), Complex{});
            for (std::size_t m = 0; m < field.size(); ++m) {
                const double kj = table_->wavevector(m)[j];
                deposit(m, Complex{0.0, kj} * (field[m] * table_->polarization(m)[i]));
            }
            auto& dst = out[static_cast<std::size_t>(i * d + j)];
            dst.resize(grid_.size());
            fft_.inverse(spectrum_, dst);
        }
}

void SpectralTransforms::strain(const SpectralField& field, std::vector<std::vector<double>>& out)
{
    const int d = grid_.dimension;
    out.resize(static_cast<std::size_t>(d * d));
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            std::fill(spectrum_.begin(), spectrum_.end(), Complex{});
            for (std::size_t m = 0; m < field.size(); ++m) {
                const auto& e = table_->polarization(m);
                const auto& kv = table_->wavevector(m);
                const double sym = 0.5 * (kv[j] * e[i] + kv[i] * e[j]);
                deposit(m, Complex{0.0, sym} * field[m]);
            }
            auto& dst = out[static_cast<std::size_t>(i * d + j)];
            dst.resize(grid_.size());
            fft_.inverse(spectrum_, dst);
            if (i != j) out[static_cast<std::size_t>(j * d + i)] = dst;
        }
}

void SpectralTransforms::project(const std::vector<std::vector<double>>& vector_field, std::span<Complex> out)
{
    const int d = grid_.dimension;
    for (int i = 0; i < d; ++i) fft_.forward(vector_field[i], spectra_[i]);
    for (std::size_t m = 0; m < table_->size(); ++m) {
        const auto& s = slots_[m].front();
        Complex acc{};
        for (int i = 0; i < d; ++i) {
            const Complex vi = s.conjugate ? std::conj(spectra_[i][s.index]) : spectra_[i][s.index];
            acc += table_->polarization(m)[i] * vi;
        }
        out[m] = acc;
    }
}

void SpectralTransforms::project_divergence(const std::vector<std::vector<double>>& tensor,
                                            std::span<Complex> out)
{
    const int d = grid_.dimension;
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) fft_.forward(tensor[i * d + j], spectra_[i * d + j]);
    for (std::size_t m = 0; m < table_->size(); ++m) {
        const auto& s = slots_[m].front();
        const auto& e = table_->polarization(m);
        const auto& kv = table_->wavevector(m);
        Complex acc{};
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                const auto& spec = spectra_[std::min(i, j) * d + std::max(i, j)];
                const Complex t = s.conjugate ? std::conj(spec[s.index]) : spec[s.index];
                acc += e[i] * Complex{0.0, kv[j]} * t;
            }
        out[m] = acc;
    }
}

// ---------------------------------------------------------------------------
// Free transforms

VectorGrid synthesize_on(const SpectralField& field, int points)
{
    SpectralTransforms tr(field.table(), points);
    VectorGrid g{tr.grid(), {}};
    tr.velocity(field, g.components);
    return g;
}

VectorGrid synthesize(const SpectralField& field, double grid_factor)
{
    return synthesize_on(field, grid_points_for(field.domain(), grid_factor));
}

SpectralField analyze(const VectorGrid& grid, const TorusDomain& domain)
{
    domain.validate();
    const auto& g = grid.grid;
    if (g.dimension != domain.dimension || g.side_length != domain.side_length)
        throw InvalidInput("grid does not match the domain");
    if (grid.components.size() != static_cast<std::size_t>(domain.dimension))
        throw InvalidInput("grid has the wrong number of velocity components");
    for (const auto& c : grid.components) {
        if (c.size() != g.size()) throw InvalidInput("grid component has the wrong size");
        for (double v : c)
            if (!std::isfinite(v)) throw InvalidInput("non-finite grid value");
    }
    SpectralTransforms tr(ModeTable::get(domain), g.points);
    SpectralField out(tr.table());
    tr.project(grid.components, out.coefficients());
    return out;
}

TensorGrid gradient(const SpectralField& field, double grid_factor)
{
    SpectralTransforms tr(field.table(), grid_points_for(field.domain(), grid_factor));
    TensorGrid g{tr.grid(), {}};
    tr.gradient(field, g.entries);
    return g;
}

TensorGrid sym_gradient(const SpectralField& field, double grid_factor)
{
    SpectralTransforms tr(field.table(), grid_points_for(field.domain(), grid_factor));
    TensorGrid g{tr.grid(), {}};
    tr.strain(field, g.entries);
    return g;
}

} // namespace gnflow
