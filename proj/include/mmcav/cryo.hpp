#pragma once

// Temperature dependence of a superconducting cavity: thermal occupation,
// low-temperature BCS surface resistance with a residual floor, and the
// two-fluid kinetic-inductance frequency shift.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

#include <json.hpp>

#include "mmcav/constants.hpp"
#include "mmcav/errors.hpp"
#include "mmcav/io.hpp"

namespace mmcav {

/// Mean thermal photon number 1/(e^{hf/kT} - 1); 0 in the T -> 0 limit.
inline double thermal_occupation(double f, double t) {
    if (!(f > 0.0)) throw DomainError("thermal_occupation: frequency must be positive");
    if (!(t >= 0.0)) throw DomainError("thermal_occupation: temperature must be non-negative");
    if (t == 0.0) return 0.0;
    const double x = constants::h * f / (constants::k_B * t);
    if (x > 700.0) return 0.0;
    return 1.0 / std::expm1(x);
}

/// delta f / f = -(gamma/2) dlambda/lambda0 equals -(pi mu0 f / G) dlambda for a
/// cavity of geometry factor G, so gamma = 2 pi mu0 f lambda0 / G.
inline double kinetic_fraction(double f, double geometry_factor_ohm, double lambda_l0_m) {
    if (!(f > 0.0) || !(geometry_factor_ohm > 0.0) || !(lambda_l0_m > 0.0))
        throw DomainError("kinetic_fraction: inputs must be positive");
    return 2.0 * constants::pi * constants::mu0 * f * lambda_l0_m / geometry_factor_ohm;
}

struct MBParams {
    double tc = 9.2;                  // K
    double alpha = 1.764;             // Delta(0) / (k_B Tc)
    double geometry_factor = 270.0;   // Ohm
    double a_prefactor = 0.0;         // Ohm K / Hz^2, R_BCS = A f^2 / T exp(-alpha Tc / T)
    double q_res = 3e7;               // residual floor; +inf gives the pure BCS curve
    double lambda_l0 = 39e-9;         // m
    double gamma = 1.1e-4;            // kinetic fraction, see kinetic_fraction()

    void validate() const {
        if (!(tc > 0.0)) throw DomainError("MBParams: Tc must be positive");
        if (!(alpha > 0.0)) throw DomainError("MBParams: gap ratio must be positive");
        if (!(geometry_factor > 0.0)) throw DomainError("MBParams: geometry factor must be positive");
        if (!(a_prefactor >= 0.0)) throw DomainError("MBParams: A must be non-negative");
        if (!(q_res > 0.0)) throw DomainError("MBParams: Q_res must be positive");
        if (!(lambda_l0 > 0.0)) throw DomainError("MBParams: penetration depth must be positive");
        if (!(gamma >= 0.0)) throw DomainError("MBParams: kinetic fraction must be non-negative");
    }
};

enum class PhotonRegime { low, high };

struct ThermalPoint {
    double t = 0.0;  // K
    double qi = 0.0;
    double df_over_f = 0.0;
    PhotonRegime regime = PhotonRegime::low;
};

inline double surface_resistance_bcs(const MBParams& p, double f, double t) {
    return p.a_prefactor * f * f / t * std::exp(-p.alpha * p.tc / t);
}

/// 1/Qi = R_BCS / G + 1/Q_res, valid for 0 < T < Tc/2.
inline double qi_of_temperature(const MBParams& p, double f, double t) {
    p.validate();
    if (!(f > 0.0)) throw DomainError("qi_of_temperature: frequency must be positive");
    if (!(t > 0.0) || !(t < 0.5 * p.tc))
        throw DomainError("qi_of_temperature: T must lie in (0, Tc/2) where the low-T BCS form holds");
    return 1.0 / (surface_resistance_bcs(p, f, t) / p.geometry_factor + 1.0 / p.q_res);
}

/// Two-fluid penetration depth lambda_L0 / sqrt(1 - (T/Tc)^4).
inline double penetration_depth(const MBParams& p, double t) {
    p.validate();
    if (!(t >= 0.0) || !(t < p.tc)) throw DomainError("penetration_depth: T must lie in [0, Tc)");
    const double r = t / p.tc;
    return p.lambda_l0 / std::sqrt(1.0 - r * r * r * r);
}

inline double freq_shift_of_temperature(const MBParams& p, double f, double t) {
    if (!(f > 0.0)) throw DomainError("freq_shift_of_temperature: frequency must be positive");
    if (!(t > 0.0) || !(t < p.tc)) throw DomainError("freq_shift_of_temperature: T must lie in (0, Tc)");
    return -0.5 * p.gamma * (penetration_depth(p, t) - p.lambda_l0) / p.lambda_l0;
}

/// Temperature where BCS loss equals the residual loss, or NaN if none below Tc/2.
inline double crossover_temperature(const MBParams& p, double f) {
    p.validate();
    if (p.a_prefactor == 0.0 || std::isinf(p.q_res)) return std::numeric_limits<double>::quiet_NaN();
    // BCS loss rises monotonically for T < alpha Tc, which covers (0, Tc/2).
    auto excess = [&](double t) { return surface_resistance_bcs(p, f, t) / p.geometry_factor - 1.0 / p.q_res; };
    double lo = 1e-3 * p.tc, hi = 0.5 * p.tc;
    if (excess(hi) < 0.0 || excess(lo) > 0.0) return std::numeric_limits<double>::quiet_NaN();
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (excess(mid) > 0.0 ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Prefactor A that places the floor/BCS crossover at `t_star`.
inline double prefactor_for_crossover(const MBParams& p, double f, double t_star) {
    if (!(t_star > 0.0) || !(t_star < 0.5 * p.tc)) throw DomainError("prefactor_for_crossover: T* must lie in (0, Tc/2)");
    if (!(f > 0.0)) throw DomainError("prefactor_for_crossover: frequency must be positive");
    return p.geometry_factor / p.q_res * t_star / (f * f) * std::exp(p.alpha * p.tc / t_star);
}

/// Synthetic series with multiplicative Gaussian noise on Qi and additive
/// noise of the same relative size on delta f / f.
inline std::vector<ThermalPoint> generate_thermal_series(const MBParams& p, double f, const std::vector<double>& temps,
                                                         double rel_noise, std::uint64_t seed) {
    if (!(rel_noise >= 0.0)) throw DomainError("generate_thermal_series: noise must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<ThermalPoint> out;
    for (double t : temps) {
        ThermalPoint pt;
        pt.t = t;
        pt.qi = qi_of_temperature(p, f, t) * std::max(0.05, 1.0 + rel_noise * gauss(rng));
        const double df = freq_shift_of_temperature(p, f, t);
        pt.df_over_f = df * (1.0 + rel_noise * gauss(rng));
        out.push_back(pt);
    }
    return out;
}

struct ThermalFit {
    MBParams params;
    double t_star = 0.0;        // K, NaN if the crossover is outside (0, Tc/2)
    double rms_log_residual = 0.0;
    int floor_points = 0;       // points where residual loss dominates
    int bcs_points = 0;         // points where BCS loss dominates
    bool gamma_fitted = false;
};

namespace detail {

// log(1/Qi) = log(e^{u - b/T} / T + e^{w}); x = (u, b, w), u = ln(A f^2 / G), w = ln(1/Q_res).
struct ThermalFunctor {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    const std::vector<ThermalPoint>* pts;

    int inputs() const { return 3; }
    int values() const { return static_cast<int>(pts->size()); }

    int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& fv) const {
        for (std::size_t i = 0; i < pts->size(); ++i) {
            const double t = (*pts)[i].t;
            const double bcs = std::exp(x[0] - x[1] / t) / t, res = std::exp(x[2]);
            fv[Eigen::Index(i)] = std::log(bcs + res) + std::log((*pts)[i].qi);
        }
        return 0;
    }

    int df(const Eigen::VectorXd& x, Eigen::MatrixXd& j) const {
        for (std::size_t i = 0; i < pts->size(); ++i) {
            const double t = (*pts)[i].t;
            const double bcs = std::exp(x[0] - x[1] / t) / t, res = std::exp(x[2]);
            const double s = bcs + res;
            j(Eigen::Index(i), 0) = bcs / s;
            j(Eigen::Index(i), 1) = -bcs / (s * t);
            j(Eigen::Index(i), 2) = res / s;
        }
        return 0;
    }
};

}  // namespace detail

/// Least squares on log(1/Qi) for (A, alpha Tc, Q_res); Tc and G are taken
/// from `prior`. If delta f / f data vary, gamma is fitted linearly with a
/// free offset (the shift reference is arbitrary in measurements).
inline ThermalFit fit_thermal_series(const std::vector<ThermalPoint>& points, double f, const MBParams& prior = {}) {
    prior.validate();
    if (!(f > 0.0)) throw DomainError("fit_thermal_series: frequency must be positive");
    if (points.size() < 6) throw DomainError("fit_thermal_series: at least 6 points required");
    for (const auto& p : points) {
        if (!(p.t > 0.0) || !(p.t < 0.5 * prior.tc))
            throw DomainError("fit_thermal_series: temperatures must lie in (0, Tc/2)");
        if (!(p.qi > 0.0) || !std::isfinite(p.qi)) throw DomainError("fit_thermal_series: Qi must be positive");
    }
    std::vector<ThermalPoint> pts(points);
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.t < b.t; });

    // Floor from the coldest third, exponential from points well above it.
    const std::size_t third = std::max<std::size_t>(2, pts.size() / 3);
    double inv_floor = 0.0;
    for (std::size_t i = 0; i < third; ++i) inv_floor += 1.0 / pts[i].qi;
    inv_floor /= double(third);
    std::vector<double> xs, ys;
    for (const auto& p : pts) {
        const double excess = 1.0 / p.qi - inv_floor;
        if (excess > inv_floor) {
            xs.push_back(1.0 / p.t);
            ys.push_back(std::log(excess * p.t));
        }
    }
    const std::vector<std::string> bcs_free = {"a_prefactor", "alpha_tc_k"};
    if (xs.size() < 2)
        throw UnderConstrainedError("fit_thermal_series: no points in the exponential (BCS) regime", bcs_free);
    double b0 = prior.alpha * prior.tc, u0 = 0.0;
    {
        Eigen::MatrixXd a(Eigen::Index(xs.size()), 2);
        Eigen::VectorXd y(Eigen::Index(xs.size()));
        for (std::size_t i = 0; i < xs.size(); ++i) {
            a(Eigen::Index(i), 0) = 1.0;
            a(Eigen::Index(i), 1) = -xs[i];
            y[Eigen::Index(i)] = ys[i];
        }
        const Eigen::Vector2d s = a.colPivHouseholderQr().solve(y);
        if (std::isfinite(s[1]) && s[1] > 0.0) b0 = s[1];
        u0 = s[0];
        if (!std::isfinite(u0)) u0 = ys.front() + b0 * xs.front();
    }

    detail::ThermalFunctor fn{&pts};
    Eigen::VectorXd x(3);
    x << u0, b0, std::log(inv_floor);
    Eigen::LevenbergMarquardt<detail::ThermalFunctor> lm(fn);
    lm.parameters.maxfev = 2000;
    lm.parameters.ftol = 1e-14;
    lm.parameters.xtol = 1e-14;
    lm.minimize(x);
    if (!x.allFinite() || !(x[1] > 0.0)) throw UnderConstrainedError("fit_thermal_series: fit did not converge", bcs_free);

    ThermalFit r;
    r.params = prior;
    r.params.a_prefactor = std::exp(x[0]) * prior.geometry_factor / (f * f);
    r.params.alpha = x[1] / prior.tc;
    r.params.q_res = std::exp(-x[2]);
    Eigen::VectorXd fv(fn.values());
    fn(x, fv);
    r.rms_log_residual = std::sqrt(fv.squaredNorm() / double(fv.size()));
    for (const auto& p : pts) {
        const double bcs = std::exp(x[0] - x[1] / p.t) / p.t;
        (bcs > std::exp(x[2]) ? r.bcs_points : r.floor_points) += 1;
    }
    if (r.floor_points < 2) throw UnderConstrainedError("fit_thermal_series: no points on the residual floor", {"q_res"});
    if (r.bcs_points < 2)
        throw UnderConstrainedError("fit_thermal_series: no points in the exponential (BCS) regime", bcs_free);
    r.t_star = crossover_temperature(r.params, f);

    // gamma from delta f / f = c - (gamma/2) (lambda/lambda0 - 1).
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, ymin = 0.0, ymax = 0.0;
    bool first = true;
    for (const auto& p : pts) {
        const double g = -0.5 * (penetration_depth(prior, p.t) / prior.lambda_l0 - 1.0);
        sx += g, sy += p.df_over_f, sxx += g * g, sxy += g * p.df_over_f;
        ymin = first ? p.df_over_f : std::min(ymin, p.df_over_f);
        ymax = first ? p.df_over_f : std::max(ymax, p.df_over_f);
        first = false;
    }
    const double n = double(pts.size()), den = n * sxx - sx * sx;
    if (ymax > ymin && den > 0.0) {
        r.params.gamma = std::max(0.0, (n * sxy - sx * sy) / den);
        r.gamma_fitted = true;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// CSV `temperature_k,qi,df_over_f`.
inline std::vector<ThermalPoint> read_thermal_series(const std::filesystem::path& csv) {
    const auto t = io::read_csv(csv);
    const auto temps = t.numbers("temperature_k"), qi = t.numbers("qi"), df = t.numbers("df_over_f");
    std::vector<ThermalPoint> out;
    for (std::size_t i = 0; i < temps.size(); ++i) out.push_back({temps[i], qi[i], df[i], PhotonRegime::low});
    return out;
}

inline std::string thermal_series_csv(const std::vector<ThermalPoint>& pts) {
    io::CsvWriter w({"temperature_k", "qi", "df_over_f"});
    for (const auto& p : pts) w.row({p.t, p.qi, p.df_over_f});
    return w.str();
}

inline nlohmann::json thermal_fit_json(const ThermalFit& r) {
    nlohmann::json j = {{"a_prefactor", r.params.a_prefactor},
                        {"alpha_tc_k", r.params.alpha * r.params.tc},
                        {"q_res", r.params.q_res},
                        {"t_star_k", std::isnan(r.t_star) ? nlohmann::json(nullptr) : nlohmann::json(r.t_star)}};
    j["gap_ratio"] = r.params.alpha;
    j["geometry_factor_ohm"] = r.params.geometry_factor;
    j["rms_log_residual"] = r.rms_log_residual;
    if (r.gamma_fitted) j["kinetic_fraction"] = r.params.gamma;
    j["model"] = "1/Qi = A f^2/(G T) exp(-alpha Tc/T) + 1/Q_res; delta f/f two-fluid lambda_L";
    return j;
}

}  // namespace mmcav
