#pragma once

// Independent finite-element references: Gauss-quadrature element stiffness
// and a dense assemble-and-solve with its own DOF map.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "topocnn/simp.hpp"

namespace topocnn::testing {

// 2x2 Gauss quadrature of B^T D B over the unit square, nodes counter-clockwise
// from the lower-left with y pointing up.
inline Eigen::Matrix<double, 8, 8> gauss_ke(double nu) {
    Eigen::Matrix3d D;
    D << 1, nu, 0, nu, 1, 0, 0, 0, (1 - nu) / 2;
    D /= (1 - nu * nu);
    const double xs[4] = {0, 1, 1, 0}, ys[4] = {0, 0, 1, 1};
    const double g = 0.5 / std::sqrt(3.0);
    Eigen::Matrix<double, 8, 8> K = Eigen::Matrix<double, 8, 8>::Zero();
    for (double px : {0.5 - g, 0.5 + g})
        for (double py : {0.5 - g, 0.5 + g}) {
            Eigen::Matrix<double, 3, 8> B = Eigen::Matrix<double, 3, 8>::Zero();
            for (int a = 0; a < 4; ++a) {
                // N_a = (1 - |x - x_a|)(1 - |y - y_a|) on the unit square.
                const double sx = xs[a] == 0 ? -1 : 1, sy = ys[a] == 0 ? -1 : 1;
                const double fx = xs[a] == 0 ? 1 - px : px, fy = ys[a] == 0 ? 1 - py : py;
                const double dNdx = sx * fy, dNdy = fx * sy;
                B(0, 2 * a) = dNdx;
                B(1, 2 * a + 1) = dNdy;
                B(2, 2 * a) = dNdy;
                B(2, 2 * a + 1) = dNdx;
            }
            K += 0.25 * B.transpose() * D * B;
        }
    return K;
}

// Dense reference: assemble with an independent DOF map, solve on free DOFs.
inline Eigen::VectorXd dense_solve(const simp::ProblemSpec& s, const simp::DensityField& rho) {
    const auto KE = gauss_ke(s.nu);
    const std::size_t ndof = 2 * (s.nx + 1) * (s.ny + 1);
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ndof), static_cast<Eigen::Index>(ndof));
    for (std::size_t ex = 0; ex < s.nx; ++ex)
        for (std::size_t ey = 0; ey < s.ny; ++ey) {
            // Node (column i, row j from the top) has index i (ny+1) + j.
            const std::size_t nodes[4] = {ex * (s.ny + 1) + ey + 1, (ex + 1) * (s.ny + 1) + ey + 1,
                                          (ex + 1) * (s.ny + 1) + ey, ex * (s.ny + 1) + ey};
            const double E = s.E0 + std::pow(rho(ex, ey), s.penal) * (s.E1 - s.E0);
            for (int a = 0; a < 8; ++a)
                for (int b = 0; b < 8; ++b) {
                    const auto ga = static_cast<Eigen::Index>(2 * nodes[a / 2] + a % 2);
                    const auto gb = static_cast<Eigen::Index>(2 * nodes[b / 2] + b % 2);
                    K(ga, gb) += E * KE(a, b);
                }
        }
    std::vector<bool> fixed(ndof, false);
    for (auto d : s.fixed_dofs) fixed[d] = true;
    std::vector<Eigen::Index> freed;
    for (std::size_t d = 0; d < ndof; ++d)
        if (!fixed[d]) freed.push_back(static_cast<Eigen::Index>(d));
    const auto nf = static_cast<Eigen::Index>(freed.size());
    Eigen::MatrixXd Kf(nf, nf);
    Eigen::VectorXd f = Eigen::VectorXd::Zero(nf);
    Eigen::VectorXd F = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ndof));
    for (const auto& l : s.loads) F[static_cast<Eigen::Index>(l.dof)] += l.value;
    for (Eigen::Index i = 0; i < nf; ++i) {
        f[i] = F[freed[static_cast<std::size_t>(i)]];
        for (Eigen::Index j = 0; j < nf; ++j) Kf(i, j) = K(freed[static_cast<std::size_t>(i)], freed[static_cast<std::size_t>(j)]);
    }
    const Eigen::VectorXd uf = Kf.fullPivLu().solve(f);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ndof));
    for (Eigen::Index i = 0; i < nf; ++i) u[freed[static_cast<std::size_t>(i)]] = uf[i];
    return u;
}

}  // namespace topocnn::testing
