#pragma once

// Electromagnetic eigenmodes of tube-union cavities on a uniform Yee grid.
//
// Unknowns are edge voltages u_e (line integral of E over the vacuum part of
// a grid edge). With C the topological edge-to-face incidence (curl) and G
// the node-to-edge incidence (gradient), the finite-integration eigenproblem
// is
//
//     C^T M_nu C u = k^2 M_eps u,   M_nu = diag(1 / a_f),  M_eps = diag(1 / l_e)
//
// where l_e is the vacuum length fraction of edge e and a_f the vacuum
// fraction of primary face f (Dey-Mittra: dual cells stay uncut, so the
// electric energy of an edge is l_e E_e^2). The conformal model measures the
// fractions against the exact geometry; the staircase model sets them to 0
// or 1 from cell-center sampling. C G = 0 holds exactly in both, so gradients
// sit in the null space; they are lifted by a penalty s M G G^T M and
// rejected by their divergence content.
//
// The solver works in the symmetric form y = M_eps^{1/2} u on a unit grid;
// eigenvalues are (k h)^2 and |y|^2 is the discrete electric energy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <json.hpp>

#include "mmcav/constants.hpp"
#include "mmcav/errors.hpp"
#include "mmcav/geometry.hpp"
#include "mmcav/lanczos.hpp"

namespace mmcav {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Region = std::function<bool(const Vec3&)>;

struct GridSpec {
    Vec3 origin = Vec3::Zero();  // position of node (0,0,0)
    double h = 0.0;
    int nx = 0, ny = 0, nz = 0;  // cells per axis

    std::int64_t cells() const { return std::int64_t(nx) * ny * nz; }
    std::int64_t nodes() const { return std::int64_t(nx + 1) * (ny + 1) * (nz + 1); }
    std::int64_t cell_id(int i, int j, int k) const { return (std::int64_t(k) * ny + j) * nx + i; }
    std::int64_t node_id(int i, int j, int k) const { return (std::int64_t(k) * (ny + 1) + j) * (nx + 1) + i; }
    int cells_along(int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    Vec3 node(int i, int j, int k) const { return origin + h * Vec3(i, j, k); }
    Vec3 cell_center(int i, int j, int k) const { return origin + h * Vec3(i + 0.5, j + 0.5, k + 0.5); }
};

enum class MaterialModel { staircase, conformal };

struct DiscretizeOptions {
    MaterialModel model = MaterialModel::conformal;
    double memory_budget_bytes = 3.0e9;
    double length_floor = 1e-6;  // edges with a smaller vacuum fraction are metal
    double area_floor = 0.01;    // face fractions are clamped from below
};

struct Edge {
    std::uint8_t dir;
    int i, j, k;  // start node
};

struct Face {
    std::uint8_t dir;  // normal axis
    int i, j, k;       // corner node with the lowest coordinates
};

namespace detail {

/// Vacuum fraction of the segment [p0, p1]: 8 sub-pieces, bisection on sign changes.
inline double segment_fraction(const Vec3& p0, const Vec3& p1, const Region& inside) {
    constexpr int pieces = 8;
    bool s[pieces + 1];
    for (int i = 0; i <= pieces; ++i) s[i] = inside(p0 + (double(i) / pieces) * (p1 - p0));
    double total = 0.0;
    for (int i = 0; i < pieces; ++i) {
        const double t0 = double(i) / pieces, t1 = double(i + 1) / pieces;
        if (s[i] == s[i + 1]) {
            if (s[i]) total += t1 - t0;
            continue;
        }
        double a = t0, b = t1;
        for (int it = 0; it < 40; ++it) {
            const double m = 0.5 * (a + b);
            if (inside(p0 + m * (p1 - p0)) == s[i])
                a = m;
            else
                b = m;
        }
        const double t = 0.5 * (a + b);
        total += s[i] ? (t - t0) : (t1 - t);
    }
    return total;
}

// 8-point Gauss-Legendre on [0, 1].
inline constexpr std::array<double, 8> gl_x = {0.019855071751231856, 0.10166676129318664, 0.2372337950418355,
                                               0.4082826787521751,   0.5917173212478249,  0.7627662049581645,
                                               0.8983332387068134,   0.9801449282487681};
inline constexpr std::array<double, 8> gl_w = {0.05061426814518813, 0.11119051722668724, 0.15685332293894363,
                                               0.18134189168918100, 0.18134189168918100, 0.15685332293894363,
                                               0.11119051722668724, 0.05061426814518813};

/// Vacuum fraction of the square with corner `p`, sides h*ea and h*eb.
inline double square_fraction(const Vec3& p, const Vec3& ea, const Vec3& eb, double h, const Region& inside) {
    double total = 0.0;
    for (std::size_t q = 0; q < gl_x.size(); ++q) {
        const Vec3 start = p + gl_x[q] * h * ea;
        total += gl_w[q] * segment_fraction(start, start + h * eb, inside);
    }
    return total;
}

inline constexpr double bytes_per_node = 14.0;
inline constexpr double bytes_per_vacuum_cell = 3.0 * (44.0 * 8.0 + 24.0 * 12.0);

inline double estimate_bytes(const Box3& box, double h, double vacuum_volume) {
    const Vec3 n = box.extent() / h;
    const double nodes = (n.x() + 3) * (n.y() + 3) * (n.z() + 3);
    return nodes * bytes_per_node + vacuum_volume / (h * h * h) * bytes_per_vacuum_cell;
}

}  // namespace detail

/// A vacuum region rasterized on a Yee grid with PEC walls and its metric.
class DiscretizedDomain {
public:
    DiscretizedDomain(GridSpec grid, const Region& region, const DiscretizeOptions& opt = {},
                      std::shared_ptr<const CavityGeometry> geometry = nullptr)
        : grid_(std::move(grid)), model_(opt.model), geometry_(std::move(geometry)) {
        if (!(grid_.h > 0.0)) throw DomainError("grid spacing must be positive");
        if (grid_.nx < 3 || grid_.ny < 3 || grid_.nz < 3) throw DegenerateInputError("grid too small");
        // The outermost cell layer is metal regardless of the region.
        const Vec3 lo = grid_.origin + grid_.h * Vec3::Ones();
        const Vec3 hi = grid_.origin + grid_.h * Vec3(grid_.nx - 1, grid_.ny - 1, grid_.nz - 1);
        region_ = [region, lo, hi](const Vec3& p) {
            return (p.array() > lo.array()).all() && (p.array() < hi.array()).all() && region(p);
        };
        rasterize(opt);
    }

    const GridSpec& grid() const { return grid_; }
    double h() const { return grid_.h; }
    MaterialModel model() const { return model_; }
    const std::shared_ptr<const CavityGeometry>& geometry() const { return geometry_; }
    const Region& region() const { return region_; }

    bool vacuum(int i, int j, int k) const {
        if (i < 0 || j < 0 || k < 0 || i >= grid_.nx || j >= grid_.ny || k >= grid_.nz) return false;
        return cells_[grid_.cell_id(i, j, k)] != 0;
    }
    std::int64_t vacuum_cells() const { return std::count(cells_.begin(), cells_.end(), std::uint8_t{1}); }
    /// Vacuum volume of the rasterized region: cut-cell integration for the
    /// conformal model, whole vacuum cells for staircase.
    double vacuum_volume() const { return vacuum_volume_; }

    int dofs() const { return static_cast<int>(edges_.size()); }
    int active_nodes() const { return n_nodes_; }
    const std::vector<Edge>& edges() const { return edges_; }
    const std::vector<double>& edge_length() const { return edge_len_; }     // l_e
    const std::vector<Face>& faces() const { return faces_; }
    const std::vector<double>& face_area() const { return face_area_; }     // a_f (clamped)

    /// Degree of freedom of edge (dir, node), or -1 when the edge is metal.
    int edge_dof(int dir, int i, int j, int k) const {
        if (i < 0 || j < 0 || k < 0 || i > grid_.nx || j > grid_.ny || k > grid_.nz) return -1;
        return edge_index_[std::size_t(dir) * grid_.nodes() + grid_.node_id(i, j, k)];
    }
    int face_index(int dir, int i, int j, int k) const {
        if (i < 0 || j < 0 || k < 0 || i > grid_.nx || j > grid_.ny || k > grid_.nz) return -1;
        return face_index_[std::size_t(dir) * grid_.nodes() + grid_.node_id(i, j, k)];
    }
    int node_dof(int i, int j, int k) const {
        if (i < 0 || j < 0 || k < 0 || i > grid_.nx || j > grid_.ny || k > grid_.nz) return -1;
        return node_index_[grid_.node_id(i, j, k)];
    }

    /// Face-connected components of the vacuum cells.
    int vacuum_components() const {
        std::vector<std::uint8_t> seen(cells_.size(), 0);
        std::vector<std::int64_t> stack;
        int comps = 0;
        for (std::int64_t id = 0; id < grid_.cells(); ++id) {
            if (!cells_[id] || seen[id]) continue;
            ++comps;
            stack.assign(1, id);
            seen[id] = 1;
            while (!stack.empty()) {
                const auto c = stack.back();
                stack.pop_back();
                const int ci = int(c % grid_.nx), cj = int((c / grid_.nx) % grid_.ny),
                          ck = int(c / (std::int64_t(grid_.nx) * grid_.ny));
                constexpr int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                for (const auto& d : nb) {
                    if (!vacuum(ci + d[0], cj + d[1], ck + d[2])) continue;
                    const auto n = grid_.cell_id(ci + d[0], cj + d[1], ck + d[2]);
                    if (!seen[n]) {
                        seen[n] = 1;
                        stack.push_back(n);
                    }
                }
            }
        }
        return comps;
    }

private:
    void rasterize(const DiscretizeOptions& opt) {
        const auto& g = grid_;
        const double h = g.h;
        const auto nn = g.nodes();
        cells_.assign(std::size_t(g.cells()), 0);
        for (int k = 0; k < g.nz; ++k)
            for (int j = 0; j < g.ny; ++j)
                for (int i = 0; i < g.nx; ++i) cells_[g.cell_id(i, j, k)] = region_(g.cell_center(i, j, k)) ? 1 : 0;

        std::vector<std::uint8_t> node_in(std::size_t(nn), 0);
        for (int k = 0; k <= g.nz; ++k)
            for (int j = 0; j <= g.ny; ++j)
                for (int i = 0; i <= g.nx; ++i) node_in[g.node_id(i, j, k)] = region_(g.node(i, j, k)) ? 1 : 0;

        const bool conformal = model_ == MaterialModel::conformal;
        const Vec3 unit[3] = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};

        const double h3 = h * h * h;
        vacuum_volume_ = 0.0;
        for (int k = 0; k < g.nz; ++k)
            for (int j = 0; j < g.ny; ++j)
                for (int i = 0; i < g.nx; ++i) {
                    const bool center = cells_[g.cell_id(i, j, k)] != 0;
                    if (!conformal) {
                        if (center) vacuum_volume_ += h3;
                        continue;
                    }
                    int corners = 0;
                    for (int c = 0; c < 8; ++c) corners += node_in[g.node_id(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))];
                    if ((corners == 8 && center) || (corners == 0 && !center)) {
                        if (center) vacuum_volume_ += h3;
                        continue;
                    }
                    // Gauss-Legendre over the yz face of x-directed chords.
                    const Vec3 p0 = g.node(i, j, k);
                    double frac = 0.0;
                    for (std::size_t a = 0; a < detail::gl_x.size(); ++a)
                        for (std::size_t b = 0; b < detail::gl_x.size(); ++b) {
                            const Vec3 start = p0 + h * (detail::gl_x[a] * unit[1] + detail::gl_x[b] * unit[2]);
                            frac += detail::gl_w[a] * detail::gl_w[b] *
                                    detail::segment_fraction(start, start + h * unit[0], region_);
                        }
                    vacuum_volume_ += frac * h3;
                }

        edge_index_.assign(std::size_t(3 * nn), -1);
        edges_.clear();
        edge_len_.clear();
        for (int dir = 0; dir < 3; ++dir) {
            const int a = (dir + 1) % 3, b = (dir + 2) % 3;
            for (int k = 0; k <= g.nz; ++k)
                for (int j = 0; j <= g.ny; ++j)
                    for (int i = 0; i <= g.nx; ++i) {
                        int p[3] = {i, j, k};
                        if (p[dir] >= g.cells_along(dir)) continue;
                        double len = 0.0;
                        if (!conformal) {
                            bool all = true;
                            for (int da = -1; da <= 0 && all; ++da)
                                for (int db = -1; db <= 0 && all; ++db) {
                                    int q[3] = {i, j, k};
                                    q[a] += da;
                                    q[b] += db;
                                    all = vacuum(q[0], q[1], q[2]);
                                }
                            len = all ? 1.0 : 0.0;
                        } else {
                            int q[3] = {i, j, k};
                            q[dir] += 1;
                            const bool in0 = node_in[g.node_id(i, j, k)], in1 = node_in[g.node_id(q[0], q[1], q[2])];
                            const Vec3 p0 = g.node(i, j, k), p1 = p0 + h * unit[dir];
                            const bool mid = region_(0.5 * (p0 + p1));
                            if (in0 && in1 && mid)
                                len = 1.0;
                            else if (!in0 && !in1 && !mid)
                                len = 0.0;
                            else
                                len = detail::segment_fraction(p0, p1, region_);
                            if (len < opt.length_floor) len = 0.0;
                        }
                        if (len <= 0.0) continue;
                        edge_index_[std::size_t(dir) * nn + g.node_id(i, j, k)] = static_cast<int>(edges_.size());
                        edges_.push_back(Edge{std::uint8_t(dir), i, j, k});
                        edge_len_.push_back(len);
                    }
        }

        face_index_.assign(std::size_t(3 * nn), -1);
        faces_.clear();
        face_area_.clear();
        for (int n = 0; n < 3; ++n) {
            const int a = (n + 1) % 3, b = (n + 2) % 3;
            for (int k = 0; k <= g.nz; ++k)
                for (int j = 0; j <= g.ny; ++j)
                    for (int i = 0; i <= g.nx; ++i) {
                        int p[3] = {i, j, k}, pa[3] = {i, j, k}, pb[3] = {i, j, k};
                        pa[a] += 1;
                        pb[b] += 1;
                        const int e[4] = {edge_dof(b, pa[0], pa[1], pa[2]), edge_dof(b, p[0], p[1], p[2]),
                                          edge_dof(a, pb[0], pb[1], pb[2]), edge_dof(a, p[0], p[1], p[2])};
                        if (e[0] < 0 && e[1] < 0 && e[2] < 0 && e[3] < 0) continue;
                        double area = 1.0;
                        if (conformal) {
                            bool full = true;
                            for (int q = 0; q < 4 && full; ++q) full = e[q] >= 0 && edge_len_[e[q]] == 1.0;
                            const Vec3 corner = g.node(i, j, k);
                            if (!full || !region_(corner + 0.5 * h * (unit[a] + unit[b])))
                                area = detail::square_fraction(corner, unit[a], unit[b], h, region_);
                            area = std::max(area, opt.area_floor);
                        }
                        face_index_[std::size_t(n) * nn + g.node_id(i, j, k)] = static_cast<int>(faces_.size());
                        faces_.push_back(Face{std::uint8_t(n), i, j, k});
                        face_area_.push_back(area);
                    }
        }

        node_index_.assign(std::size_t(nn), -1);
        n_nodes_ = 0;
        for (int k = 1; k < g.nz; ++k)
            for (int j = 1; j < g.ny; ++j)
                for (int i = 1; i < g.nx; ++i) {
                    bool all = true;
                    for (int d = 0; d < 3 && all; ++d) {
                        int q[3] = {i, j, k};
                        all = edge_dof(d, q[0], q[1], q[2]) >= 0;
                        q[d] -= 1;
                        all = all && edge_dof(d, q[0], q[1], q[2]) >= 0;
                    }
                    if (all) node_index_[g.node_id(i, j, k)] = n_nodes_++;
                }
    }

    GridSpec grid_;
    MaterialModel model_;
    std::shared_ptr<const CavityGeometry> geometry_;
    Region region_;
    std::vector<std::uint8_t> cells_;
    std::vector<int> edge_index_, face_index_, node_index_;
    std::vector<Edge> edges_;
    std::vector<double> edge_len_;
    std::vector<Face> faces_;
    std::vector<double> face_area_;
    int n_nodes_ = 0;
    double vacuum_volume_ = 0.0;
};

/// Rasterize an arbitrary region inside `box`. The grid is anchored so that
/// `anchor` sits on a node, and padded by one metal cell on every side.
inline DiscretizedDomain discretize_region(const Box3& box, const Region& inside, double h, const Vec3& anchor,
                                           const DiscretizeOptions& opt = {},
                                           std::shared_ptr<const CavityGeometry> geometry = nullptr) {
    if (!(h > 0.0)) throw DomainError("grid spacing must be positive");
    GridSpec g;
    g.h = h;
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = static_cast<int>(std::floor((box.lo[a] - anchor[a]) / h + 1e-9)) - 1;
        hi[a] = static_cast<int>(std::ceil((box.hi[a] - anchor[a]) / h - 1e-9)) + 1;
    }
    g.origin = anchor + h * Vec3(lo[0], lo[1], lo[2]);
    g.nx = hi[0] - lo[0];
    g.ny = hi[1] - lo[1];
    g.nz = hi[2] - lo[2];
    return DiscretizedDomain(std::move(g), inside, opt, std::move(geometry));
}

/// Open interior of the tube union: points on a tube surface count as metal,
/// so a wall passing exactly through a grid node or edge leaves no tangential
/// field on it.
inline Region interior_region(std::shared_ptr<const CavityGeometry> g) {
    const double tol = 1e-12 * g->min_diameter();
    return [g, tol](const Vec3& p) {
        for (const auto& t : g->tubes())
            if (t.depth(p) > tol) return true;
        return false;
    };
}

/// Rasterize a tube geometry at `resolution` cells per (smallest) diameter.
/// `override_region` replaces the tube interior, e.g. for a deformed wall.
inline DiscretizedDomain discretize(const CavityGeometry& geometry, int resolution, const DiscretizeOptions& opt = {},
                                    const Region& override_region = {}) {
    if (resolution < 8) throw DomainError("discretize: resolution must be >= 8 cells per diameter");
    const double h = geometry.min_diameter() / resolution;
    double vac = 0.0;
    for (const auto& t : geometry.tubes()) vac += t.volume();
    const double need = detail::estimate_bytes(geometry.bounding_box(), h, vac);
    if (need > opt.memory_budget_bytes) {
        const int suggest = static_cast<int>(std::floor(resolution * std::cbrt(opt.memory_budget_bytes / need)));
        throw CapacityError("discretize: grid needs ~" + std::to_string(static_cast<long long>(need / 1e6)) +
                                " MB, over the memory budget; try resolution " + std::to_string(suggest),
                            suggest);
    }
    auto shared = std::make_shared<const CavityGeometry>(geometry);
    const Region region = override_region ? override_region : interior_region(shared);
    Box3 box = geometry.bounding_box();
    return discretize_region(box, region, h, geometry.tubes().front().center(), opt, shared);
}

/// Rectangular a x b x l cavity, a along x, b along y, l along z, walls on grid planes.
inline DiscretizedDomain discretize_box(double a, double b, double l, double h, const DiscretizeOptions& opt = {}) {
    if (!(a > 0 && b > 0 && l > 0)) throw DomainError("box dimensions must be positive");
    Box3 box{Vec3::Zero(), Vec3(a, b, l)};
    return discretize_region(
        box, [box](const Vec3& p) { return (p.array() > box.lo.array()).all() && (p.array() < box.hi.array()).all(); },
        h, Vec3::Zero(), opt);
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

struct YeeOperators {
    SparseMatrix curl;       // faces x dofs, topological
    SparseMatrix gradient;   // dofs x active nodes, topological
    SparseMatrix system;     // symmetric form, unit grid
    Eigen::VectorXd sqrt_m;  // M_eps^{1/2} per dof
    double penalty = 2.0;
    double lambda_max = 0.0;  // Gershgorin bound of `system`
};

inline YeeOperators build_operators(const DiscretizedDomain& dom, double penalty = 2.0) {
    YeeOperators ops;
    ops.penalty = penalty;
    using Triplet = Eigen::Triplet<double>;
    std::vector<Triplet> ct, gt;
    const auto& faces = dom.faces();
    ct.reserve(faces.size() * 4);
    for (std::size_t r = 0; r < faces.size(); ++r) {
        const auto& f = faces[r];
        const int a = (f.dir + 1) % 3, b = (f.dir + 2) % 3;
        int p[3] = {f.i, f.j, f.k}, pa[3] = {f.i, f.j, f.k}, pb[3] = {f.i, f.j, f.k};
        pa[a] += 1;
        pb[b] += 1;
        // curl_n = d(u_b)/da - d(u_a)/db around the face.
        const int e1 = dom.edge_dof(b, pa[0], pa[1], pa[2]), e2 = dom.edge_dof(b, p[0], p[1], p[2]);
        const int e3 = dom.edge_dof(a, pb[0], pb[1], pb[2]), e4 = dom.edge_dof(a, p[0], p[1], p[2]);
        const int row = static_cast<int>(r);
        if (e1 >= 0) ct.emplace_back(row, e1, 1.0);
        if (e2 >= 0) ct.emplace_back(row, e2, -1.0);
        if (e3 >= 0) ct.emplace_back(row, e3, -1.0);
        if (e4 >= 0) ct.emplace_back(row, e4, 1.0);
    }
    const auto& edges = dom.edges();
    gt.reserve(edges.size() * 2);
    for (int e = 0; e < dom.dofs(); ++e) {
        const auto& ed = edges[e];
        int q[3] = {ed.i, ed.j, ed.k};
        const int n0 = dom.node_dof(q[0], q[1], q[2]);
        q[ed.dir] += 1;
        const int n1 = dom.node_dof(q[0], q[1], q[2]);
        if (n0 >= 0) gt.emplace_back(e, n0, -1.0);
        if (n1 >= 0) gt.emplace_back(e, n1, 1.0);
    }
    ops.curl.resize(static_cast<Eigen::Index>(faces.size()), dom.dofs());
    ops.curl.setFromTriplets(ct.begin(), ct.end());
    ops.gradient.resize(dom.dofs(), dom.active_nodes());
    ops.gradient.setFromTriplets(gt.begin(), gt.end());

    const int n = dom.dofs();
    ops.sqrt_m.resize(n);
    Eigen::VectorXd inv_sqrt_m(n);
    for (int e = 0; e < n; ++e) {
        const double m = 1.0 / dom.edge_length()[e];
        ops.sqrt_m[e] = std::sqrt(m);
        inv_sqrt_m[e] = 1.0 / ops.sqrt_m[e];
    }
    Eigen::VectorXd nu(faces.size());
    for (std::size_t r = 0; r < faces.size(); ++r) nu[Eigen::Index(r)] = 1.0 / dom.face_area()[r];

    const SparseMatrix cd = ops.curl * inv_sqrt_m.asDiagonal();
    const SparseMatrix gm = SparseMatrix(ops.sqrt_m.asDiagonal() * ops.gradient);
    const SparseMatrix cdt = cd.transpose();
    const SparseMatrix gmt = gm.transpose();
    SparseMatrix stiff = cdt * nu.asDiagonal() * cd;
    SparseMatrix pen = gm * gmt;
    ops.system = stiff + penalty * pen;
    ops.system.makeCompressed();
    double bound = 0.0;
    for (Eigen::Index r = 0; r < ops.system.outerSize(); ++r) {
        double s = 0.0;
        for (SparseMatrix::InnerIterator it(ops.system, r); it; ++it) s += std::abs(it.value());
        bound = std::max(bound, s);
    }
    ops.lambda_max = bound;
    return ops;
}

// ---------------------------------------------------------------------------
// Modes
// ---------------------------------------------------------------------------

struct EigenMode {
    double frequency_hz = 0.0;
    double k2 = 0.0;                    // (2 pi f / c)^2 in 1/m^2
    Eigen::VectorXd field;              // y = M^{1/2} u on active edges, unit norm (unit total energy)
    std::shared_ptr<const DiscretizedDomain> domain;
    double residual = 0.0;              // ||A y - (kh)^2 y|| / (kh)^2
    double divergence_fraction = 0.0;   // share of the Rayleigh quotient carried by div E
    double mode_volume_m3 = 0.0;
    double mode_volume_ratio = 0.0;     // V / lambda^3
    static constexpr const char* normalization = "unit discrete electric energy (sum of y^2 = 1)";

    double wavelength() const { return constants::c / frequency_hz; }
    /// Mean field along each active edge (unit-grid voltage over vacuum length).
    Eigen::VectorXd edge_field() const {
        Eigen::VectorXd e(field.size());
        const auto& dom = *domain;
        for (Eigen::Index i = 0; i < field.size(); ++i)
            e[i] = field[i] / std::sqrt(dom.edge_length()[i]);
        return e;
    }
};

/// Cell-center samples of |E|^2 and |curl E|^2 / (k h)^2, both in the units of
/// `EigenMode::edge_field()` squared, for cells whose center is vacuum.
struct CellSamples {
    std::vector<std::int64_t> cell;
    std::vector<double> e2;
    std::vector<double> h2;  // magnetic counterpart, mu |H|^2 / eps in the same units
};

inline CellSamples cell_samples(const EigenMode& mode) {
    const auto& dom = *mode.domain;
    const auto& g = dom.grid();
    const Eigen::VectorXd ef = mode.edge_field();
    Eigen::VectorXd u(ef.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = ef[i] * dom.edge_length()[i];
    // Face flux per unit area, divided by (k h) to compare with E.
    const double kh = std::sqrt(mode.k2) * dom.h();
    Eigen::VectorXd b(dom.faces().size());
    {
        const auto& faces = dom.faces();
        for (std::size_t r = 0; r < faces.size(); ++r) {
            const auto& f = faces[r];
            const int a = (f.dir + 1) % 3, c = (f.dir + 2) % 3;
            int p[3] = {f.i, f.j, f.k}, pa[3] = {f.i, f.j, f.k}, pb[3] = {f.i, f.j, f.k};
            pa[a] += 1;
            pb[c] += 1;
            auto val = [&](int d, const int* q) {
                const int e = dom.edge_dof(d, q[0], q[1], q[2]);
                return e < 0 ? 0.0 : u[e];
            };
            const double circ = val(c, pa) - val(c, p) - val(a, pb) + val(a, p);
            b[Eigen::Index(r)] = circ / dom.face_area()[r] / kh;
        }
    }
    CellSamples s;
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                if (!dom.vacuum(i, j, k)) continue;
                double e2 = 0.0, h2 = 0.0;
                for (int d = 0; d < 3; ++d) {
                    const int a = (d + 1) % 3, c = (d + 2) % 3;
                    double acc = 0.0;
                    for (int da = 0; da <= 1; ++da)
                        for (int dc = 0; dc <= 1; ++dc) {
                            int q[3] = {i, j, k};
                            q[a] += da;
                            q[c] += dc;
                            const int e = dom.edge_dof(d, q[0], q[1], q[2]);
                            if (e >= 0) acc += ef[e] * ef[e];
                        }
                    e2 += 0.25 * acc;
                    int q[3] = {i, j, k};
                    const int f0 = dom.face_index(d, q[0], q[1], q[2]);
                    q[d] += 1;
                    const int f1 = dom.face_index(d, q[0], q[1], q[2]);
                    const double b0 = f0 < 0 ? 0.0 : b[f0], b1 = f1 < 0 ? 0.0 : b[f1];
                    h2 += 0.5 * (b0 * b0 + b1 * b1);
                }
                s.cell.push_back(g.cell_id(i, j, k));
                s.e2.push_back(e2);
                s.h2.push_back(h2);
            }
    return s;
}

struct ModeVolume {
    double volume_m3 = 0.0;
    double ratio = 0.0;  // V / lambda^3, lambda = c / f
};

/// V = sum w_i |E_i|^2 / max |E_i|^2 over weighted samples.
inline double mode_volume(const std::vector<double>& e2, const std::vector<double>& weights) {
    if (e2.size() != weights.size()) throw DomainError("mode_volume: sample and weight counts differ");
    double total = 0.0, peak = 0.0;
    for (std::size_t i = 0; i < e2.size(); ++i) {
        total += weights[i] * e2[i];
        peak = std::max(peak, e2[i]);
    }
    if (!(peak > 0.0)) throw DegenerateInputError("mode_volume: field has no energy");
    return total / peak;
}

/// Where the peak |E|^2 is taken. Re-entrant metal edges (tube intersections)
/// carry an integrable field singularity, so a literal maximum over all
/// samples grows without bound under refinement. Samples closer than
/// `wall_exclusion` diameters to the metal are skipped for the peak (not for
/// the integral). Zero gives the literal grid maximum.
struct ModeVolumeOptions {
    double wall_exclusion = 0.2;
};

inline ModeVolume mode_volume(const EigenMode& mode, const ModeVolumeOptions& opt = {}) {
    if (!mode.domain || mode.field.size() == 0 || !(mode.field.squaredNorm() > 0.0))
        throw DegenerateInputError("mode_volume: field has no energy");
    if (opt.wall_exclusion < 0.0) throw DomainError("mode_volume: wall exclusion must be >= 0");
    const auto s = cell_samples(mode);
    const auto& dom = *mode.domain;
    const auto& g = dom.grid();
    const double h = dom.h();
    double peak = 0.0, peak_all = 0.0;
    const auto& geo = dom.geometry();
    const double min_depth = geo ? opt.wall_exclusion * geo->min_diameter() : 0.0;
    for (std::size_t i = 0; i < s.e2.size(); ++i) {
        peak_all = std::max(peak_all, s.e2[i]);
        if (geo && min_depth > 0.0) {
            const auto c = s.cell[i];
            const int ci = int(c % g.nx), cj = int((c / g.nx) % g.ny), ck = int(c / (std::int64_t(g.nx) * g.ny));
            if (geo->depth(g.cell_center(ci, cj, ck)) < min_depth) continue;
        }
        peak = std::max(peak, s.e2[i]);
    }
    if (!(peak_all > 0.0)) throw DegenerateInputError("mode_volume: field has no energy");
    if (!(peak > 0.0)) peak = peak_all;
    ModeVolume mv;
    // Integral of |E|^2 is the discrete electric energy, sum of y^2.
    mv.volume_m3 = mode.field.squaredNorm() * h * h * h / peak;
    const double lambda = mode.wavelength();
    mv.ratio = mv.volume_m3 / (lambda * lambda * lambda);
    return mv;
}

struct SolveOptions {
    double tol = 1e-8;
    double penalty = 2.0;
    double divergence_threshold = 1e-6;
    int filter_degree = 40;
    int extra_modes = 3;  // computed beyond n_modes to absorb gradient modes
    int max_modes = 64;
    std::uint64_t seed = 0x5eed;
};

/// The `n_modes` divergence-free eigenmodes nearest `target_hz`, sorted by frequency.
inline std::vector<EigenMode> solve_modes(std::shared_ptr<const DiscretizedDomain> domain, double target_hz,
                                          int n_modes, const SolveOptions& opt = {}) {
    if (!(target_hz > 0.0)) throw DomainError("solve_modes: target frequency must be positive");
    if (n_modes < 1) throw DomainError("solve_modes: n_modes must be >= 1");
    if (!domain || domain->dofs() == 0) throw DegenerateInputError("solve_modes: domain has no vacuum edges");
    const auto ops = build_operators(*domain, opt.penalty);
    const double h = domain->h();
    const double target_k = 2.0 * constants::pi * target_hz / constants::c;
    auto apply = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) { y.noalias() = ops.system * x; };
    const SparseMatrix div = SparseMatrix(ops.gradient.transpose()) * ops.sqrt_m.asDiagonal();

    int nev = n_modes + opt.extra_modes;
    for (;;) {
        linalg::LanczosOptions lo;
        lo.nev = nev;
        lo.tol = opt.tol;
        lo.filter_degree = opt.filter_degree;
        lo.seed = opt.seed;
        const auto pairs = linalg::smallest_eigenpairs(apply, domain->dofs(), ops.lambda_max, lo);

        std::vector<EigenMode> physical;
        for (Eigen::Index i = 0; i < pairs.values.size(); ++i) {
            const double lam = pairs.values[i];
            const Eigen::VectorXd v = pairs.vectors.col(i);
            const double dfrac = opt.penalty * (div * v).squaredNorm() / std::max(lam, 1e-300);
            if (dfrac > opt.divergence_threshold) continue;
            if (lam < 1e-10 * ops.lambda_max) continue;  // harmonic fields of disconnected metal
            EigenMode m;
            m.k2 = lam / (h * h);
            m.frequency_hz = constants::c * std::sqrt(m.k2) / (2.0 * constants::pi);
            m.field = v;
            m.domain = domain;
            m.residual = pairs.residuals[i];
            m.divergence_fraction = dfrac;
            physical.push_back(std::move(m));
        }
        const double k_top = std::sqrt(pairs.values[pairs.values.size() - 1]) / h;
        std::sort(physical.begin(), physical.end(), [&](const EigenMode& a, const EigenMode& b) {
            return std::abs(std::sqrt(a.k2) - target_k) < std::abs(std::sqrt(b.k2) - target_k);
        });
        const bool enough = static_cast<int>(physical.size()) >= n_modes;
        const bool settled = enough && std::abs(std::sqrt(physical[n_modes - 1].k2) - target_k) <= k_top - target_k;
        if (settled || nev >= opt.max_modes || nev >= domain->dofs()) {
            if (physical.empty())
                throw ConvergenceError("solve_modes: no divergence-free modes found",
                                       std::vector<double>(pairs.residuals.data(),
                                                           pairs.residuals.data() + pairs.residuals.size()));
            physical.resize(std::min<std::size_t>(physical.size(), std::size_t(n_modes)));
            std::sort(physical.begin(), physical.end(),
                      [](const EigenMode& a, const EigenMode& b) { return a.k2 < b.k2; });
            for (auto& m : physical) {
                const auto mv = mode_volume(m);
                m.mode_volume_m3 = mv.volume_m3;
                m.mode_volume_ratio = mv.ratio;
            }
            return physical;
        }
        nev = std::min(opt.max_modes, 2 * nev);
    }
}

/// Lowest divergence-free mode.
inline EigenMode solve_lowest(std::shared_ptr<const DiscretizedDomain> domain, const SolveOptions& opt = {}) {
    // A target of ~0 Hz makes "nearest" equal to "lowest".
    return solve_modes(std::move(domain), 1.0, 1, opt).front();
}

/// Two-grid Richardson extrapolation of a quantity converging as resolution^-order.
inline double richardson(double coarse, int res_coarse, double fine, int res_fine, double order) {
    const double r = std::pow(double(res_fine) / double(res_coarse), order);
    return fine + (fine - coarse) / (r - 1.0);
}

/// Observed convergence order from three resolutions in geometric progression.
inline double observed_order(double f1, double f2, double f3, double ratio) {
    return std::log(std::abs((f1 - f2) / (f2 - f3))) / std::log(ratio);
}

}  // namespace mmcav
