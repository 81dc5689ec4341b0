#pragma once

// Wall-displacement tuning: first-order Slater shifts and the piezo model.
//
// A deformation translates the metal wall inside an axis-aligned patch box
// along one grid axis. `normal` points from the vacuum into the wall; a
// positive displacement moves the wall into the vacuum (removes volume).

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "mmcav/errors.hpp"
#include "mmcav/modesolver.hpp"

namespace mmcav {

struct Deformation {
    Box3 patch;          // wall faces whose vacuum-side cell center lies inside
    int axis = 2;        // 0, 1, 2
    int normal = 1;      // +1 or -1: direction from vacuum into the wall along `axis`
    double delta = 0.0;  // m, positive = wall moves into the vacuum

    Vec3 normal_vector() const {
        Vec3 n = Vec3::Zero();
        n[axis] = normal > 0 ? 1.0 : -1.0;
        return n;
    }
};

inline void validate(const Deformation& d) {
    if (d.axis < 0 || d.axis > 2) throw DomainError("deformation axis must be 0, 1 or 2");
    if (d.normal != 1 && d.normal != -1) throw DomainError("deformation normal must be +1 or -1");
    if (!std::isfinite(d.delta)) throw DomainError("deformation displacement must be finite");
}

/// Region after rigidly moving the wall inside the patch by `delta`.
inline Region deformed_region(Region base, const Deformation& d) {
    validate(d);
    const Vec3 shift = d.delta * d.normal_vector();
    const Box3 patch = d.patch;
    if (d.delta >= 0.0)
        return [base, shift, patch](const Vec3& p) { return base(p) && (!patch.contains(p) || base(p + shift)); };
    return [base, shift, patch](const Vec3& p) { return base(p) || (patch.contains(p) && base(p + shift)); };
}

/// Tube-union region of a geometry after a wall deformation.
inline Region deformed_region(const CavityGeometry& g, const Deformation& d) {
    return deformed_region(interior_region(std::make_shared<const CavityGeometry>(g)), d);
}

namespace detail {

// Cell-center E and curl(E)/k vectors of one mode, units of edge_field().
struct CellVectors {
    std::vector<std::int64_t> cell;
    Eigen::Matrix3Xd e, b;
};

inline CellVectors cell_vectors(const EigenMode& mode) {
    const auto& dom = *mode.domain;
    const auto& g = dom.grid();
    const Eigen::VectorXd ef = mode.edge_field();
    const double kh = std::sqrt(mode.k2) * dom.h();
    auto u = [&](int d, int i, int j, int k) {
        const int e = dom.edge_dof(d, i, j, k);
        return e < 0 ? 0.0 : ef[e] * dom.edge_length()[e];
    };
    auto flux = [&](int n, int i, int j, int k) {
        const int f = dom.face_index(n, i, j, k);
        if (f < 0) return 0.0;
        const int a = (n + 1) % 3, c = (n + 2) % 3;
        int p[3] = {i, j, k}, pa[3] = {i, j, k}, pb[3] = {i, j, k};
        pa[a] += 1;
        pb[c] += 1;
        const double circ = u(c, pa[0], pa[1], pa[2]) - u(c, p[0], p[1], p[2]) - u(a, pb[0], pb[1], pb[2]) +
                            u(a, p[0], p[1], p[2]);
        return circ / dom.face_area()[f] / kh;
    };
    CellVectors out;
    std::vector<Eigen::Vector3d> es, bs;
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                if (!dom.vacuum(i, j, k)) continue;
                Eigen::Vector3d e = Eigen::Vector3d::Zero(), b = Eigen::Vector3d::Zero();
                for (int d = 0; d < 3; ++d) {
                    const int a = (d + 1) % 3, c = (d + 2) % 3;
                    for (int da = 0; da <= 1; ++da)
                        for (int dc = 0; dc <= 1; ++dc) {
                            int q[3] = {i, j, k};
                            q[a] += da;
                            q[c] += dc;
                            const int id = dom.edge_dof(d, q[0], q[1], q[2]);
                            if (id >= 0) e[d] += 0.25 * ef[id];
                        }
                    int q[3] = {i, j, k};
                    b[d] = 0.5 * flux(d, q[0], q[1], q[2]);
                    q[d] += 1;
                    b[d] += 0.5 * flux(d, q[0], q[1], q[2]);
                }
                out.cell.push_back(g.cell_id(i, j, k));
                es.push_back(e);
                bs.push_back(b);
            }
    out.e.resize(3, Eigen::Index(es.size()));
    out.b.resize(3, Eigen::Index(bs.size()));
    for (std::size_t i = 0; i < es.size(); ++i) {
        out.e.col(Eigen::Index(i)) = es[i];
        out.b.col(Eigen::Index(i)) = bs[i];
    }
    return out;
}

// Sample indices of vacuum cells that face the selected wall.
inline std::vector<Eigen::Index> wall_cells(const DiscretizedDomain& dom, const std::vector<std::int64_t>& cells,
                                            const Deformation& d) {
    const auto& g = dom.grid();
    std::vector<Eigen::Index> out;
    for (std::size_t s = 0; s < cells.size(); ++s) {
        const auto c = cells[s];
        int q[3] = {int(c % g.nx), int((c / g.nx) % g.ny), int(c / (std::int64_t(g.nx) * g.ny))};
        if (!d.patch.contains(g.cell_center(q[0], q[1], q[2]))) continue;
        q[d.axis] += d.normal;
        if (!dom.vacuum(q[0], q[1], q[2])) out.push_back(Eigen::Index(s));
    }
    return out;
}

}  // namespace detail

struct SlaterResult {
    Eigen::VectorXd delta_f_hz;  // ascending; one entry per input mode
    Eigen::MatrixXd mixing;      // columns: eigenvectors of the perturbation matrix
    int wall_faces = 0;
    double swept_volume_m3 = 0.0;
    bool first_order_valid = true;  // |delta| <= h
};

/// First-order shifts of a (possibly degenerate) set of modes on one domain:
/// Delta f / f = delta * sum_wall (mu |H|^2 - eps |E|^2) dA / sum (eps |E|^2 + mu |H|^2) dV,
/// diagonalized within the set so that degenerate modes split correctly.
inline SlaterResult slater_shifts(const std::vector<EigenMode>& modes, const Deformation& d) {
    validate(d);
    if (modes.empty()) throw DegenerateInputError("slater: no modes");
    const auto& dom = *modes.front().domain;
    for (const auto& m : modes)
        if (m.domain.get() != &dom) throw DomainError("slater: modes must share one domain");
    std::vector<detail::CellVectors> cv;
    for (const auto& m : modes) cv.push_back(detail::cell_vectors(m));
    const auto wall = detail::wall_cells(dom, cv.front().cell, d);
    if (wall.empty()) throw EmptySelectionError("slater: deformation patch selects no wall faces");

    const double h = dom.h();
    const Eigen::Index n = Eigen::Index(modes.size());
    Eigen::VectorXd norm(n);
    for (Eigen::Index i = 0; i < n; ++i)
        norm[i] = std::sqrt((cv[i].e.squaredNorm() + cv[i].b.squaredNorm()) * h * h * h);
    Eigen::MatrixXd p(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            double acc = 0.0;
            for (auto s : wall) acc += cv[i].b.col(s).dot(cv[j].b.col(s)) - cv[i].e.col(s).dot(cv[j].e.col(s));
            const double f = std::sqrt(modes[i].frequency_hz * modes[j].frequency_hz);
            p(i, j) = f * d.delta * h * h * acc / (norm[i] * norm[j]);
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (p + p.transpose()));
    SlaterResult r;
    r.delta_f_hz = es.eigenvalues();
    r.mixing = es.eigenvectors();
    r.wall_faces = static_cast<int>(wall.size());
    r.swept_volume_m3 = double(wall.size()) * h * h * std::abs(d.delta);
    r.first_order_valid = std::abs(d.delta) <= h;
    return r;
}

/// First-order frequency shift of a single (non-degenerate) mode, Hz.
inline double slater_shift(const EigenMode& mode, const Deformation& d) {
    return slater_shifts({mode}, d).delta_f_hz[0];
}

/// Linear piezo tuning, clamped at the stack's maximum voltage.
inline std::vector<double> piezo_tuning_curve(double sensitivity_hz_per_v, double v_max,
                                              const std::vector<double>& volts) {
    if (!(sensitivity_hz_per_v >= 0.0)) throw DomainError("piezo: sensitivity must be non-negative");
    if (!(v_max >= 0.0)) throw DomainError("piezo: v_max must be non-negative");
    std::vector<double> out;
    out.reserve(volts.size());
    for (double v : volts) {
        if (!(v >= 0.0)) throw DomainError("piezo: voltage must be non-negative");
        out.push_back(sensitivity_hz_per_v * std::min(v, v_max));
    }
    return out;
}

}  // namespace mmcav
