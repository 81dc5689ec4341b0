#pragma once

// Symmetric eigensolver for the low end of a large sparse SPD spectrum.
//
// Krylov-Schur (thick-restart Lanczos) applied to a Chebyshev polynomial of the
// operator. The polynomial damps [cut, lambda_max] into [-1, 1] and grows
// monotonically below `cut`, so the wanted low eigenvalues become the dominant
// ones of the filtered operator. Only operator applications are needed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "mmcav/errors.hpp"

namespace mmcav::linalg {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LanczosOptions {
    int nev = 4;               // eigenpairs wanted (lowest)
    int ncv = 0;               // basis size; 0 picks max(2 nev + 10, 24)
    int filter_degree = 40;    // Chebyshev degree; 1 disables filtering
    int estimate_steps = 60;   // plain Lanczos steps used to place the filter cut
    double cut_margin = 0.05;  // cut = (1 + margin) * estimated nev-th eigenvalue
    double tol = 1e-8;         // ||A x - lambda x|| <= tol * |lambda|
    int max_restarts = 400;
    std::uint64_t seed = 0x5eed;
    int verify_passes = 4;     // deflated re-searches for missed (degenerate) eigenvalues
};

struct EigenPairs {
    VectorXd values;    // ascending
    MatrixXd vectors;   // columns, unit norm
    VectorXd residuals; // relative residual per pair
    int restarts = 0;
    long applications = 0;  // operator applications
    double cut = 0.0;
};

namespace detail {

inline VectorXd start_vector(Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v[i] = u(rng);
    return v.normalized();
}

// Two passes of classical Gram-Schmidt against the first k columns of V.
inline VectorXd orthogonalize(const MatrixXd& V, Index k, VectorXd& w) {
    VectorXd h = V.leftCols(k).transpose() * w;
    w.noalias() -= V.leftCols(k) * h;
    VectorXd h2 = V.leftCols(k).transpose() * w;
    w.noalias() -= V.leftCols(k) * h2;
    return h + h2;
}

}  // namespace detail

/// Ritz values of a short fully reorthogonalized Lanczos run. Each k-th value
/// bounds the k-th smallest eigenvalue from above.
template <class Op>
VectorXd lanczos_ritz_values(const Op& apply, Index n, int steps, std::uint64_t seed, long* applications = nullptr) {
    steps = static_cast<int>(std::min<Index>(steps, n));
    MatrixXd V(n, steps + 1);
    MatrixXd T = MatrixXd::Zero(steps, steps);
    V.col(0) = detail::start_vector(n, seed);
    VectorXd w(n);
    int m = steps;
    for (int j = 0; j < steps; ++j) {
        apply(V.col(j), w);
        if (applications) ++*applications;
        VectorXd h = detail::orthogonalize(V, j + 1, w);
        T(j, j) = h[j];
        if (j > 0) T(j - 1, j) = T(j, j - 1);
        const double beta = w.norm();
        if (j + 1 < steps) {
            if (beta < 1e-12 * std::abs(T(j, j))) {
                m = j + 1;
                break;
            }
            T(j + 1, j) = beta;
            V.col(j + 1) = w / beta;
        }
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(T.topLeftCorner(m, m), Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

template <class Op>
EigenPairs smallest_eigenpairs(const Op& apply, Index n, double lambda_max, LanczosOptions opt = {});

namespace detail {

// A single Krylov sequence can converge before every copy of a degenerate
// eigenvalue has emerged. Search the orthogonal complement of the found
// vectors (found directions shifted above the spectrum) and merge anything
// that lands below the largest accepted value.
template <class Op>
void verify_complement(const Op& apply, Index n, double lambda_max, const LanczosOptions& opt, EigenPairs& out) {
    const Index nev = out.values.size();
    for (int pass = 0; pass < opt.verify_passes; ++pass) {
        const Index found = out.vectors.cols();
        if (found + 1 >= n) return;
        LanczosOptions sub = opt;
        sub.nev = static_cast<int>(std::min<Index>(2, n - found - 1));
        sub.ncv = 0;
        sub.verify_passes = 0;
        sub.seed = opt.seed + 0x632be59bd9b4e019ULL * static_cast<std::uint64_t>(pass + 1);
        const MatrixXd X = out.vectors;
        // Type-erased so the nested solve does not instantiate a new operator type.
        const std::function<void(const VectorXd&, VectorXd&)> deflated = [&](const VectorXd& x, VectorXd& y) {
            apply(x, y);
            y.noalias() += lambda_max * (X * (X.transpose() * x));
        };
        const EigenPairs extra = smallest_eigenpairs(deflated, n, 2.0 * lambda_max, sub);
        out.applications += extra.applications;
        const double top = out.values[nev - 1];
        std::vector<Index> add;
        for (Index i = 0; i < extra.values.size(); ++i)
            if (extra.values[i] < top * (1.0 - 1e-9)) add.push_back(i);
        if (add.empty()) return;
        const Index m = nev + Index(add.size());
        VectorXd vals(m), res(m);
        MatrixXd vecs(n, m);
        vals.head(nev) = out.values;
        res.head(nev) = out.residuals;
        vecs.leftCols(nev) = out.vectors;
        for (std::size_t a = 0; a < add.size(); ++a) {
            VectorXd v = extra.vectors.col(add[a]);
            v -= X * (X.transpose() * v);
            v.normalize();
            VectorXd av(n);
            apply(v, av);
            const double lam = v.dot(av);
            vals[nev + Index(a)] = lam;
            res[nev + Index(a)] = (av - lam * v).norm() / std::max(std::abs(lam), 1e-300);
            vecs.col(nev + Index(a)) = v;
        }
        std::vector<Index> idx(m);
        for (Index i = 0; i < m; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](Index a, Index b) { return vals[a] < vals[b]; });
        for (Index i = 0; i < nev; ++i) {
            out.values[i] = vals[idx[i]];
            out.residuals[i] = res[idx[i]];
            out.vectors.col(i) = vecs.col(idx[i]);
        }
    }
}

}  // namespace detail

/// Lowest `opt.nev` eigenpairs of the symmetric positive semidefinite operator
/// `apply` (y = A x). `lambda_max` must bound the spectrum from above.
template <class Op>
EigenPairs smallest_eigenpairs(const Op& apply, Index n, double lambda_max, LanczosOptions opt) {
    if (opt.nev < 1) throw DomainError("eigensolver: nev must be >= 1");
    if (n < 1) throw DegenerateInputError("eigensolver: empty operator");
    const int nev = static_cast<int>(std::min<Index>(opt.nev, n));
    const int ncv = static_cast<int>(std::min<Index>(opt.ncv > 0 ? opt.ncv : std::max(2 * nev + 10, 24), n));

    EigenPairs out;
    VectorXd w(n), tmp(n);

    // Filter placement.
    const int est_steps = std::max(opt.estimate_steps, nev + 10);
    const VectorXd ritz = lanczos_ritz_values(apply, n, est_steps, opt.seed ^ 0x9e3779b97f4a7c15ULL, &out.applications);
    const double est = ritz[std::min<Index>(nev - 1, ritz.size() - 1)];
    double cut = (1.0 + opt.cut_margin) * est;
    const int degree = (opt.filter_degree > 1 && cut < 0.9 * lambda_max) ? opt.filter_degree : 1;
    if (degree == 1) cut = 0.0;
    out.cut = cut;

    // y = p(A) x with p large and positive below `cut`.
    const double center = 0.5 * (lambda_max + cut), halfwidth = 0.5 * (lambda_max - cut);
    auto filtered = [&](const VectorXd& x, VectorXd& y) {
        if (degree == 1) {
            apply(x, y);
            y = -y;  // largest of -A is smallest of A
            ++out.applications;
            return;
        }
        VectorXd prev = x, cur(n), next(n);
        apply(x, cur);
        ++out.applications;
        cur = (cur - center * x) / halfwidth;
        for (int k = 1; k < degree; ++k) {
            apply(cur, next);
            ++out.applications;
            next = 2.0 * (next - center * cur) / halfwidth - prev;
            prev.swap(cur);
            cur.swap(next);
        }
        y = (degree % 2 == 0) ? cur : VectorXd(-cur);
    };

    MatrixXd V(n, ncv + 1);
    MatrixXd H = MatrixXd::Zero(ncv + 1, ncv);
    V.col(0) = detail::start_vector(n, opt.seed);
    int k = 0;
    std::vector<double> last_res;

    for (int restart = 0; restart <= opt.max_restarts; ++restart) {
        for (int j = k; j < ncv; ++j) {
            filtered(V.col(j), w);
            VectorXd h = detail::orthogonalize(V, j + 1, w);
            H.block(0, j, j + 1, 1) = h;
            double beta = w.norm();
            const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
            if (beta < 1e-13 * scale) {
                // Invariant subspace: continue with a fresh orthogonal direction.
                w = detail::start_vector(n, opt.seed + 7919u * static_cast<unsigned>(j + 1 + restart * ncv));
                detail::orthogonalize(V, j + 1, w);
                beta = 0.0;
                V.col(j + 1) = w.normalized();
            } else {
                V.col(j + 1) = w / beta;
            }
            H(j + 1, j) = beta;
        }

        MatrixXd S = H.topRows(ncv);
        S = 0.5 * (S + S.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
        // Descending order of the filtered spectrum.
        std::vector<int> order(ncv);
        for (int i = 0; i < ncv; ++i) order[i] = ncv - 1 - i;

        // Check the wanted pairs against the unfiltered operator.
        MatrixXd X(n, nev);
        VectorXd lam(nev), res(nev);
        bool all_ok = true;
        for (int i = 0; i < nev; ++i) {
            X.col(i) = V.leftCols(ncv) * es.eigenvectors().col(order[i]);
            X.col(i).normalize();
            apply(X.col(i), tmp);
            ++out.applications;
            lam[i] = X.col(i).dot(tmp);
            res[i] = (tmp - lam[i] * X.col(i)).norm() / std::max(std::abs(lam[i]), 1e-300);
            if (!(res[i] <= opt.tol)) all_ok = false;
        }
        last_res.assign(res.data(), res.data() + nev);
        out.restarts = restart;
        if (all_ok) {
            std::vector<int> idx(nev);
            for (int i = 0; i < nev; ++i) idx[i] = i;
            std::sort(idx.begin(), idx.end(), [&](int a, int b) { return lam[a] < lam[b]; });
            out.values.resize(nev);
            out.vectors.resize(n, nev);
            out.residuals.resize(nev);
            for (int i = 0; i < nev; ++i) {
                out.values[i] = lam[idx[i]];
                out.vectors.col(i) = X.col(idx[i]);
                out.residuals[i] = res[idx[i]];
            }
            detail::verify_complement(apply, n, lambda_max, opt, out);
            return out;
        }

        // Thick restart: keep the leading Ritz vectors plus the residual direction.
        const int keep = std::min(ncv - 2, std::max(nev + 2, (ncv + nev) / 2));
        MatrixXd Y(ncv, keep);
        for (int i = 0; i < keep; ++i) Y.col(i) = es.eigenvectors().col(order[i]);
        const double beta = H(ncv, ncv - 1);
        MatrixXd Vk = V.leftCols(ncv) * Y;
        V.col(keep) = V.col(ncv);
        V.leftCols(keep) = Vk;
        H.setZero();
        for (int i = 0; i < keep; ++i) {
            H(i, i) = es.eigenvalues()[order[i]];
            H(keep, i) = beta * Y(ncv - 1, i);
        }
        k = keep;
    }
    throw ConvergenceError("eigensolver did not converge within the restart cap", last_res);
}

}  // namespace mmcav::linalg
