#pragma once

// Numerical TE cutoff of a circular waveguide: lowest nonzero eigenvalue of
// the Neumann Laplacian on the disc (H_z satisfies dH_z/dn = 0 on the wall).
// Cut-cell finite volumes on a square grid: cell areas and face apertures are
// the exact vacuum fractions, so the wall needs no staircase.

#include <cmath>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "mmcav/constants.hpp"
#include "mmcav/errors.hpp"
#include "mmcav/lanczos.hpp"
#include "mmcav/modesolver.hpp"

namespace mmcav {

struct Cutoff2dOptions {
    double area_floor = 0.05;  // cell fractions are clamped from below in the mass matrix
    double tol = 1e-10;
};

inline double cutoff_2d(double diameter, int resolution, const Cutoff2dOptions& opt = {}) {
    if (!(diameter > 0.0)) throw DomainError("cutoff_2d: diameter must be positive");
    if (resolution < 16) throw DomainError("cutoff_2d: resolution must be >= 16 cells per diameter");
    const double r = 0.5 * diameter, h = diameter / resolution;
    const Region disc = [r](const Vec3& p) { return p.x() * p.x() + p.y() * p.y() < r * r; };
    const int n = resolution / 2 + 2;  // cells per half-axis; disc centered on a node
    const int side = 2 * n;
    auto id = [side](int i, int j) { return j * side + i; };
    auto corner = [&](int i, int j) { return Vec3((i - n) * h, (j - n) * h, 0.0); };

    std::vector<int> index(std::size_t(side * side), -1);
    std::vector<double> area;
    for (int j = 0; j < side; ++j)
        for (int i = 0; i < side; ++i) {
            const double a = detail::square_fraction(corner(i, j), Vec3::UnitX(), Vec3::UnitY(), h, disc);
            if (a <= 0.0) continue;
            index[std::size_t(id(i, j))] = static_cast<int>(area.size());
            area.push_back(a);
        }
    const int m = static_cast<int>(area.size());

    using Triplet = Eigen::Triplet<double>;
    std::vector<Triplet> t;
    Eigen::VectorXd inv_sqrt_mass(m), diag = Eigen::VectorXd::Zero(m);
    for (int c = 0; c < m; ++c) inv_sqrt_mass[c] = 1.0 / std::sqrt(std::max(area[c], opt.area_floor));
    auto couple = [&](int a, int b, double aperture) {
        if (a < 0 || b < 0 || aperture <= 0.0) return;
        const double w = aperture * inv_sqrt_mass[a] * inv_sqrt_mass[b];
        t.emplace_back(a, b, -w);
        t.emplace_back(b, a, -w);
        diag[a] += aperture * inv_sqrt_mass[a] * inv_sqrt_mass[a];
        diag[b] += aperture * inv_sqrt_mass[b] * inv_sqrt_mass[b];
    };
    for (int j = 0; j < side; ++j)
        for (int i = 0; i < side; ++i) {
            const int a = index[std::size_t(id(i, j))];
            if (a < 0) continue;
            if (i + 1 < side) {
                const Vec3 p = corner(i + 1, j);
                couple(a, index[std::size_t(id(i + 1, j))], detail::segment_fraction(p, p + h * Vec3::UnitY(), disc));
            }
            if (j + 1 < side) {
                const Vec3 p = corner(i, j + 1);
                couple(a, index[std::size_t(id(i, j + 1))], detail::segment_fraction(p, p + h * Vec3::UnitX(), disc));
            }
        }
    for (int c = 0; c < m; ++c) t.emplace_back(c, c, diag[c]);
    SparseMatrix k(m, m);
    k.setFromTriplets(t.begin(), t.end());

    double bound = 0.0;
    for (Eigen::Index row = 0; row < k.outerSize(); ++row) {
        double s = 0.0;
        for (SparseMatrix::InnerIterator it(k, row); it; ++it) s += std::abs(it.value());
        bound = std::max(bound, s);
    }
    // The constant mode (M^{1/2} 1) is moved above the spectrum.
    Eigen::VectorXd v(m);
    for (int c = 0; c < m; ++c) v[c] = 1.0 / inv_sqrt_mass[c];
    v.normalize();
    auto apply = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) {
        y.noalias() = k * x;
        y.noalias() += bound * v.dot(x) * v;
    };
    linalg::LanczosOptions lo;
    lo.nev = 2;  // TE11 is doubly degenerate
    lo.tol = opt.tol;
    const auto pairs = linalg::smallest_eigenpairs(apply, m, 2.0 * bound, lo);
    const double mu = pairs.values[0] / (h * h);
    return constants::c * std::sqrt(mu) / (2.0 * constants::pi);
}

}  // namespace mmcav
