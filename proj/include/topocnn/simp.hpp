#pragma once

// 2D density-based compliance minimisation: modified SIMP interpolation,
// Q4 plane-stress elements, sensitivity filter and optimality-criteria update.
//
// Mesh conventions follow the classic 88-line MATLAB code: elements are
// unit squares indexed column-major (e = ely + elx * ny, ely = 0 at the top),
// nodes are numbered column-major as well (n = (ny + 1) * i + j) with two
// DOFs per node (2n = x, 2n + 1 = y). A negative y load points down.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Sparse>

namespace topocnn::simp {

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Preset { MidLoad, CantileverCenterLoad, CantileverEndLoad, Custom };

inline const char* preset_name(Preset p) {
    switch (p) {
        case Preset::MidLoad: return "mid-load";
        case Preset::CantileverCenterLoad: return "cantilever-center";
        case Preset::CantileverEndLoad: return "cantilever-end";
        case Preset::Custom: return "custom";
    }
    return "?";
}

inline Preset parse_preset(const std::string& name) {
    if (name == "mid-load") return Preset::MidLoad;
    if (name == "cantilever-center") return Preset::CantileverCenterLoad;
    if (name == "cantilever-end") return Preset::CantileverEndLoad;
    if (name == "custom") return Preset::Custom;
    throw std::invalid_argument("unknown problem '" + name + "' (expected mid-load, cantilever-center, cantilever-end)");
}

struct Load {
    std::size_t dof = 0;
    double value = 0.0;
};

struct ProblemSpec {
    std::size_t nx = 0;
    std::size_t ny = 0;
    Preset preset = Preset::Custom;
    std::vector<std::size_t> fixed_dofs;
    std::vector<Load> loads;
    double volfrac = 0.5;
    double penal = 3.0;
    double rmin = 2.4;
    std::size_t maxit = 300;
    double move = 0.2;
    double eta = 0.5;
    double change_tol = 0.01;
    double E0 = 1e-9;
    double E1 = 1.0;
    double nu = 0.3;

    [[nodiscard]] std::size_t nel() const noexcept { return nx * ny; }
    [[nodiscard]] std::size_t ndof() const noexcept { return 2 * (nx + 1) * (ny + 1); }

    void validate() const {
        if (nx < 1 || ny < 1) throw std::invalid_argument("problem: mesh must have at least one element");
        if (fixed_dofs.empty()) throw std::invalid_argument("problem: no fixed DOFs");
        if (loads.empty()) throw std::invalid_argument("problem: no loads");
        for (auto d : fixed_dofs)
            if (d >= ndof()) throw std::invalid_argument("problem: fixed DOF out of range");
        for (const auto& l : loads)
            if (l.dof >= ndof()) throw std::invalid_argument("problem: load DOF out of range");
        if (!(volfrac > 0.0 && volfrac <= 1.0)) throw std::invalid_argument("problem: volume fraction must be in (0, 1]");
        if (!(penal >= 1.0)) throw std::invalid_argument("problem: penal must be >= 1");
        if (!(rmin >= 1.0)) throw std::invalid_argument("problem: rmin must be >= 1");
        if (!(E1 > E0 && E0 > 0.0)) throw std::invalid_argument("problem: need E1 > E0 > 0");
        if (!(nu >= 0.0 && nu < 0.5)) throw std::invalid_argument("problem: Poisson ratio must be in [0, 0.5)");
        if (!(move > 0.0)) throw std::invalid_argument("problem: move limit must be positive");
    }
};

constexpr std::size_t node_id(std::size_t ny, std::size_t i, std::size_t j) noexcept { return (ny + 1) * i + j; }

/// One of the three constant-load benchmark setups with unit loads.
inline ProblemSpec preset(Preset p, std::size_t nx, std::size_t ny, double volfrac) {
    ProblemSpec s;
    s.nx = nx;
    s.ny = ny;
    s.preset = p;
    s.volfrac = volfrac;
    switch (p) {
        case Preset::MidLoad: {
            // Simply supported bottom corners: left pinned, right vertical roller.
            const std::size_t bl = node_id(ny, 0, ny);
            const std::size_t br = node_id(ny, nx, ny);
            s.fixed_dofs = {2 * bl, 2 * bl + 1, 2 * br + 1};
            s.loads = {{2 * node_id(ny, nx / 2, 0) + 1, -1.0}};
            break;
        }
        case Preset::CantileverCenterLoad:
        case Preset::CantileverEndLoad: {
            for (std::size_t d = 0; d < 2 * (ny + 1); ++d) s.fixed_dofs.push_back(d);
            const std::size_t j = p == Preset::CantileverEndLoad ? ny : ny / 2;
            s.loads = {{2 * node_id(ny, nx, j) + 1, -1.0}};
            break;
        }
        case Preset::Custom:
            throw std::invalid_argument("preset: 'custom' has no predefined supports or loads");
    }
    return s;
}

/// Per-element design variables on an nx x ny grid, column-major.
struct DensityField {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::vector<double> rho;

    static DensityField uniform(std::size_t nx, std::size_t ny, double value) {
        return {nx, ny, std::vector<double>(nx * ny, value)};
    }
    [[nodiscard]] double& operator()(std::size_t elx, std::size_t ely) { return rho[ely + elx * ny]; }
    [[nodiscard]] double operator()(std::size_t elx, std::size_t ely) const { return rho[ely + elx * ny]; }
    [[nodiscard]] double mean() const {
        return rho.empty() ? 0.0 : std::accumulate(rho.begin(), rho.end(), 0.0) / static_cast<double>(rho.size());
    }
    friend bool operator==(const DensityField&, const DensityField&) = default;
};

using ElementMatrix = std::array<double, 64>;

/// Stiffness of a unit-square bilinear plane-stress element, unit thickness
/// and Young's modulus, DOFs ordered counter-clockwise from the lower-left node.
inline ElementMatrix element_stiffness(double nu) {
    if (!(nu >= 0.0 && nu < 0.5)) throw std::invalid_argument("element_stiffness: nu must be in [0, 0.5)");
    constexpr double A11[4][4] = {{12, 3, -6, -3}, {3, 12, 3, 0}, {-6, 3, 12, -3}, {-3, 0, -3, 12}};
    constexpr double A12[4][4] = {{-6, -3, 0, 3}, {-3, -6, -3, -6}, {0, -3, -6, 3}, {3, -6, 3, -6}};
    constexpr double B11[4][4] = {{-4, 3, -2, 9}, {3, -4, -9, 4}, {-2, -9, -4, -3}, {9, 4, -3, -4}};
    constexpr double B12[4][4] = {{2, -3, 4, -9}, {-3, 2, 9, -2}, {4, 9, 2, 3}, {-9, -2, 3, 2}};
    const double scale = 1.0 / (1.0 - nu * nu) / 24.0;
    ElementMatrix ke{};
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) {
            const std::size_t i = r % 4, j = c % 4;
            double a = 0, b = 0;
            if (r < 4 && c < 4) { a = A11[i][j]; b = B11[i][j]; }
            else if (r < 4)     { a = A12[i][j]; b = B12[i][j]; }
            else if (c < 4)     { a = A12[j][i]; b = B12[j][i]; }
            else                { a = A11[i][j]; b = B11[i][j]; }
            ke[r * 8 + c] = scale * (a + nu * b);
        }
    return ke;
}

/// Global DOFs of element (elx, ely) in element-matrix order.
inline std::array<std::size_t, 8> element_dofs(std::size_t ny, std::size_t elx, std::size_t ely) {
    const std::size_t bl = node_id(ny, elx, ely + 1);
    const std::size_t br = node_id(ny, elx + 1, ely + 1);
    const std::size_t tr = br - 1;
    const std::size_t tl = bl - 1;
    return {2 * bl, 2 * bl + 1, 2 * br, 2 * br + 1, 2 * tr, 2 * tr + 1, 2 * tl, 2 * tl + 1};
}

/// E0 + rho^p (E1 - E0).
inline double interpolate_modulus(double rho, const ProblemSpec& s) {
    return s.E0 + std::pow(rho, s.penal) * (s.E1 - s.E0);
}

struct FeState {
    Eigen::SparseMatrix<double> K_free;  // stiffness restricted to free DOFs (lower triangle)
    Eigen::VectorXd u;                   // full displacement vector, zero on fixed DOFs
    Eigen::VectorXd F;                   // full load vector
    ElementMatrix KE{};
    double E0 = 0, E1 = 0, nu = 0;
    double residual = 0;                 // ||K u - F|| / ||F|| on free DOFs
};

/// Reusable finite-element system for one problem: the sparsity pattern and
/// symbolic factorisation are computed once, numeric values per solve.
class FeSolver {
public:
    explicit FeSolver(const ProblemSpec& spec) : spec_(spec), ke_(element_stiffness(spec.nu)) {
        spec_.validate();
        const std::size_t ndof = spec_.ndof();
        free_index_.assign(ndof, -1);
        std::vector<bool> fixed(ndof, false);
        for (auto d : spec_.fixed_dofs) fixed[d] = true;
        for (std::size_t d = 0; d < ndof; ++d) {
            if (!fixed[d]) {
                free_index_[d] = static_cast<long>(free_dofs_.size());
                free_dofs_.push_back(d);
            }
        }
        if (free_dofs_.empty()) throw SolverError("all DOFs are fixed");

        edofs_.reserve(spec_.nel());
        for (std::size_t elx = 0; elx < spec_.nx; ++elx)
            for (std::size_t ely = 0; ely < spec_.ny; ++ely) edofs_.push_back(element_dofs(spec_.ny, elx, ely));

        // Pattern of the lower triangle of the free-DOF matrix.
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(edofs_.size() * 36);
        for (const auto& ed : edofs_)
            for (std::size_t a = 0; a < 8; ++a)
                for (std::size_t b = 0; b < 8; ++b) {
                    const long r = free_index_[ed[a]], c = free_index_[ed[b]];
                    if (r >= 0 && c >= 0 && r >= c) trip.emplace_back(r, c, 1.0);
                }
        const auto nfree = static_cast<Eigen::Index>(free_dofs_.size());
        K_.resize(nfree, nfree);
        K_.setFromTriplets(trip.begin(), trip.end());
        K_.makeCompressed();

        slots_.assign(edofs_.size() * 64, -1);
        for (std::size_t e = 0; e < edofs_.size(); ++e)
            for (std::size_t a = 0; a < 8; ++a)
                for (std::size_t b = 0; b < 8; ++b) {
                    const long r = free_index_[edofs_[e][a]], c = free_index_[edofs_[e][b]];
                    if (r >= 0 && c >= 0 && r >= c) slots_[e * 64 + a * 8 + b] = &K_.coeffRef(r, c) - K_.valuePtr();
                }
        ldlt_.analyzePattern(K_);

        F_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ndof));
        for (const auto& l : spec_.loads) F_[static_cast<Eigen::Index>(l.dof)] += l.value;
    }

    [[nodiscard]] const ProblemSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] const ElementMatrix& element_matrix() const noexcept { return ke_; }
    [[nodiscard]] const std::vector<std::array<std::size_t, 8>>& edofs() const noexcept { return edofs_; }

    /// Assembles K(rho) on the free DOFs and solves K u = F.
    FeState solve(const DensityField& rho) {
        check_field(rho);
        double* values = K_.valuePtr();
        std::fill(values, values + K_.nonZeros(), 0.0);
        for (std::size_t e = 0; e < edofs_.size(); ++e) {
            const double E = interpolate_modulus(rho.rho[e], spec_);
            const long* slot = slots_.data() + e * 64;
            for (std::size_t k = 0; k < 64; ++k)
                if (slot[k] >= 0) values[slot[k]] += E * ke_[k];
        }

        ldlt_.factorize(K_);
        if (ldlt_.info() != Eigen::Success) throw SolverError("stiffness factorisation failed (singular system?)");
        const Eigen::VectorXd& D = ldlt_.vectorD();
        for (Eigen::Index i = 0; i < D.size(); ++i) {
            // A pivot that vanishes relative to its own diagonal means a
            // rigid-body mode is left unconstrained.
            const Eigen::Index orig = ldlt_.permutationPinv().indices()[i];
            const double diag = K_.coeff(orig, orig);
            if (!(D[i] > 1e-12 * diag)) {
                throw SolverError("singular stiffness matrix: insufficient constraints (free DOF " +
                                  std::to_string(free_dofs_[static_cast<std::size_t>(orig)]) + ")");
            }
        }

        const auto nfree = static_cast<Eigen::Index>(free_dofs_.size());
        Eigen::VectorXd f(nfree);
        for (Eigen::Index i = 0; i < nfree; ++i) f[i] = F_[static_cast<Eigen::Index>(free_dofs_[static_cast<std::size_t>(i)])];

        // Refinement keeps the solution and residual in extended precision;
        // near-void regions carry displacements ~1/E0, which puts the double
        // precision residual floor near 1e-7.
        using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
        const Eigen::VectorXd d0 = ldlt_.solve(f);
        VecL u_ext = d0.cast<long double>();
        const long double fnorm = f.cast<long double>().norm();
        double rel = 0.0;
        for (int refine = 0; refine < 6; ++refine) {
            VecL r = f.cast<long double>();
            for (Eigen::Index col = 0; col < K_.outerSize(); ++col) {
                for (Eigen::SparseMatrix<double>::InnerIterator it(K_, col); it; ++it) {
                    const long double k = it.value();
                    r[it.row()] -= k * u_ext[col];
                    if (it.row() != col) r[col] -= k * u_ext[it.row()];
                }
            }
            rel = static_cast<double>(fnorm > 0 ? r.norm() / fnorm : r.norm());
            if (rel < 1e-12) break;
            u_ext += ldlt_.solve(r.cast<double>()).cast<long double>();
        }
        if (!(rel < 1e-9)) {
            std::ostringstream os;
            os << "linear solve residual " << std::scientific << std::setprecision(2) << rel << " exceeds 1e-9";
            throw SolverError(os.str());
        }
        const Eigen::VectorXd uf = u_ext.cast<double>();

        FeState st;
        st.K_free = K_;
        st.u = Eigen::VectorXd::Zero(F_.size());
        for (Eigen::Index i = 0; i < nfree; ++i) st.u[static_cast<Eigen::Index>(free_dofs_[static_cast<std::size_t>(i)])] = uf[i];
        st.F = F_;
        st.KE = ke_;
        st.E0 = spec_.E0;
        st.E1 = spec_.E1;
        st.nu = spec_.nu;
        st.residual = rel;
        return st;
    }

    /// u_e^T KE u_e for every element.
    [[nodiscard]] std::vector<double> element_energies(const Eigen::VectorXd& u) const {
        std::vector<double> ce(edofs_.size());
        for (std::size_t e = 0; e < edofs_.size(); ++e) {
            std::array<double, 8> ue{};
            for (std::size_t a = 0; a < 8; ++a) ue[a] = u[static_cast<Eigen::Index>(edofs_[e][a])];
            double s = 0.0;
            for (std::size_t a = 0; a < 8; ++a) {
                double row = 0.0;
                for (std::size_t b = 0; b < 8; ++b) row += ke_[a * 8 + b] * ue[b];
                s += ue[a] * row;
            }
            ce[e] = s;
        }
        return ce;
    }

private:
    void check_field(const DensityField& rho) const {
        if (rho.nx != spec_.nx || rho.ny != spec_.ny || rho.rho.size() != spec_.nel()) {
            throw std::invalid_argument("density field does not match the mesh");
        }
        for (double v : rho.rho)
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("density outside [0, 1]");
    }

    ProblemSpec spec_;
    ElementMatrix ke_;
    std::vector<long> free_index_;
    std::vector<std::size_t> free_dofs_;
    std::vector<std::array<std::size_t, 8>> edofs_;
    Eigen::SparseMatrix<double> K_;
    std::vector<long> slots_;
    Eigen::VectorXd F_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt_;
};

inline FeState assemble_and_solve(const DensityField& rho, const ProblemSpec& spec) {
    FeSolver solver(spec);
    return solver.solve(rho);
}

struct ComplianceResult {
    double compliance = 0.0;
    std::vector<double> sensitivity;  // dC/drho_e
};

/// C = sum_e E_e u_e^T KE u_e and dC_e = -p rho_e^(p-1) (E1 - E0) u_e^T KE u_e.
inline ComplianceResult compliance_and_sensitivity(const FeSolver& solver, const FeState& state,
                                                   const DensityField& rho) {
    const ProblemSpec& s = solver.spec();
    const std::vector<double> ce = solver.element_energies(state.u);
    ComplianceResult r;
    r.sensitivity.resize(ce.size());
    for (std::size_t e = 0; e < ce.size(); ++e) {
        r.compliance += interpolate_modulus(rho.rho[e], s) * ce[e];
        r.sensitivity[e] = -s.penal * std::pow(rho.rho[e], s.penal - 1.0) * (s.E1 - s.E0) * ce[e];
    }
    return r;
}

inline ComplianceResult compliance_and_sensitivity(const FeState& state, const DensityField& rho,
                                                   const ProblemSpec& spec) {
    FeSolver solver(spec);
    return compliance_and_sensitivity(solver, state, rho);
}

/// Single FE solve and compliance of an arbitrary (possibly grayscale) field.
inline double evaluate_compliance(const DensityField& rho, const ProblemSpec& spec) {
    FeSolver solver(spec);
    const FeState st = solver.solve(rho);
    return compliance_and_sensitivity(solver, st, rho).compliance;
}

// ---------------------------------------------------------------------------
// Sensitivity filter
// ---------------------------------------------------------------------------

/// Distance-weighted sensitivity filter with weights max(0, rmin - dist).
class SensitivityFilter {
public:
    struct Entry {
        std::size_t j;
        double w;
    };

    SensitivityFilter(std::size_t nx, std::size_t ny, double rmin) : nx_(nx), ny_(ny) {
        const auto reach = static_cast<long>(std::ceil(rmin)) - 1;
        rows_.resize(nx * ny);
        sums_.assign(nx * ny, 0.0);
        for (long i1 = 0; i1 < static_cast<long>(nx); ++i1)
            for (long j1 = 0; j1 < static_cast<long>(ny); ++j1) {
                const std::size_t e1 = static_cast<std::size_t>(i1) * ny + static_cast<std::size_t>(j1);
                for (long i2 = std::max(i1 - reach, 0L); i2 <= std::min(i1 + reach, static_cast<long>(nx) - 1); ++i2)
                    for (long j2 = std::max(j1 - reach, 0L); j2 <= std::min(j1 + reach, static_cast<long>(ny) - 1);
                         ++j2) {
                        const double d = std::hypot(static_cast<double>(i1 - i2), static_cast<double>(j1 - j2));
                        const double w = std::max(0.0, rmin - d);
                        if (w > 0.0) {
                            rows_[e1].push_back({static_cast<std::size_t>(i2) * ny + static_cast<std::size_t>(j2), w});
                            sums_[e1] += w;
                        }
                    }
            }
    }

    [[nodiscard]] const std::vector<Entry>& row(std::size_t e) const { return rows_.at(e); }

    /// dC~_e = sum_j w_ej rho_j dC_j / (max(gamma, rho_e) sum_j w_ej), gamma = 1e-3.
    [[nodiscard]] std::vector<double> apply(std::span<const double> dc, std::span<const double> rho) const {
        if (dc.size() != rows_.size() || rho.size() != rows_.size()) {
            throw std::invalid_argument("filter: field size does not match the mesh");
        }
        std::vector<double> out(dc.size());
        for (std::size_t e = 0; e < rows_.size(); ++e) {
            double acc = 0.0;
            for (const auto& [j, w] : rows_[e]) acc += w * rho[j] * dc[j];
            out[e] = acc / (std::max(1e-3, rho[e]) * sums_[e]);
        }
        return out;
    }

private:
    std::size_t nx_, ny_;
    std::vector<std::vector<Entry>> rows_;
    std::vector<double> sums_;
};

inline std::vector<double> filter_sensitivities(std::span<const double> dc, const DensityField& rho, double rmin) {
    return SensitivityFilter(rho.nx, rho.ny, rmin).apply(dc, rho.rho);
}

// ---------------------------------------------------------------------------
// Optimality criteria
// ---------------------------------------------------------------------------

struct OcResult {
    DensityField rho;
    double lambda = 0.0;
    std::size_t bisections = 0;
};

/// Move-limited OC update rho * (-dC / lambda)^eta with lambda bisected
/// (geometric midpoint over [1e-9, 1e9]) until the mean density matches
/// the target within `vol_tol`.
inline OcResult oc_update(const DensityField& rho, std::span<const double> dc, double volfrac, double move,
                          double eta = 0.5, double vol_tol = 1e-7) {
    if (dc.size() != rho.rho.size()) throw std::invalid_argument("oc_update: sensitivity size mismatch");
    OcResult r{rho, 0.0, 0};
    const std::size_t n = rho.rho.size();
    auto candidate = [&](double lambda) {
        double sum = 0.0;
        for (std::size_t e = 0; e < n; ++e) {
            const double x = rho.rho[e];
            const double scaled = x * std::pow(std::max(0.0, -dc[e]) / lambda, eta);
            const double v = std::clamp(scaled, std::max(0.0, x - move), std::min(1.0, x + move));
            r.rho.rho[e] = v;
            sum += v;
        }
        return sum / static_cast<double>(n);
    };

    if (volfrac >= 1.0) {
        for (std::size_t e = 0; e < n; ++e) r.rho.rho[e] = std::min(1.0, rho.rho[e] + move);
        return r;
    }

    double l1 = 1e-9, l2 = 1e9;
    for (std::size_t it = 1; it <= 100; ++it) {
        const double mid = std::sqrt(l1 * l2);
        const double vol = candidate(mid);
        r.lambda = mid;
        r.bisections = it;
        if (std::abs(vol - volfrac) < vol_tol) return r;
        (vol > volfrac ? l1 : l2) = mid;
        if ((l2 - l1) / (l1 + l2) < 1e-15) {
            if (std::abs(vol - volfrac) < 1e-4) return r;
            break;
        }
    }
    throw SolverError("optimality-criteria bisection did not reach the volume target");
}

// ---------------------------------------------------------------------------
// Optimisation loop
// ---------------------------------------------------------------------------

struct IterationRecord {
    std::size_t iteration = 0;
    double compliance = 0.0;  // of the design entering the iteration
    double volume = 0.0;      // mean density after the update
    double change = 0.0;      // max |rho_new - rho|
};

struct OptimizeResult {
    DensityField rho;
    double compliance = 0.0;  // of the returned field
    std::size_t iterations = 0;
    bool converged = false;
};

/// Iterates solve -> sensitivities -> filter -> OC from a uniform field at
/// the target volume until the largest density change drops below
/// change_tol or maxit iterations have run.
inline OptimizeResult optimize(const ProblemSpec& spec,
                               const std::function<void(const IterationRecord&)>& observer = {}) {
    spec.validate();
    FeSolver solver(spec);
    const SensitivityFilter filter(spec.nx, spec.ny, spec.rmin);
    OptimizeResult res;
    res.rho = DensityField::uniform(spec.nx, spec.ny, spec.volfrac);

    for (std::size_t it = 1; it <= spec.maxit; ++it) {
        try {
            const FeState st = solver.solve(res.rho);
            const ComplianceResult cr = compliance_and_sensitivity(solver, st, res.rho);
            const std::vector<double> dcf = filter.apply(cr.sensitivity, res.rho.rho);
            OcResult oc = oc_update(res.rho, dcf, spec.volfrac, spec.move, spec.eta);
            double change = 0.0;
            for (std::size_t e = 0; e < oc.rho.rho.size(); ++e)
                change = std::max(change, std::abs(oc.rho.rho[e] - res.rho.rho[e]));
            res.rho = std::move(oc.rho);
            res.iterations = it;
            if (observer) observer({it, cr.compliance, res.rho.mean(), change});
            if (change < spec.change_tol) {
                res.converged = true;
                break;
            }
        } catch (const SolverError& e) {
            throw SolverError("iteration " + std::to_string(it) + ": " + e.what());
        }
    }
    const FeState st = solver.solve(res.rho);
    res.compliance = compliance_and_sensitivity(solver, st, res.rho).compliance;
    return res;
}

}  // namespace topocnn::simp
