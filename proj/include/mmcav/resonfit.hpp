#pragma once

// One-port reflection of a resonator seen through a cable:
//
//   s11(f) = a e^{i phi} e^{-2 pi i f tau} [1 - (2 Qtot/Qc) / (1 + 2 i Qtot (f/f0 - 1))]
//
// Fitting starts from a deterministic estimate (phase slope and circle
// misfit -> tau, algebraic circle fit -> a, phi and 2 Qtot/Qc,
// phase-vs-frequency -> f0, Qtot) and finishes with complex least squares
// over all six parameters.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

#include "mmcav/constants.hpp"
#include "mmcav/errors.hpp"
#include "mmcav/io.hpp"

namespace mmcav {

using cplx = std::complex<double>;

struct ReflectionTrace {
    std::vector<double> freq_hz;  // strictly increasing
    std::vector<cplx> s11;        // linear units
    std::optional<double> power_in_w;
    std::optional<double> temperature_k;

    std::size_t size() const { return freq_hz.size(); }

    void validate() const {
        if (freq_hz.size() != s11.size()) throw DomainError("trace: frequency and s11 lengths differ");
        if (freq_hz.size() < 16) throw DomainError("trace: at least 16 points required");
        for (std::size_t i = 0; i < freq_hz.size(); ++i) {
            if (!std::isfinite(freq_hz[i]) || !(freq_hz[i] > 0.0)) throw DomainError("trace: frequencies must be positive");
            if (i > 0 && !(freq_hz[i] > freq_hz[i - 1])) throw DomainError("trace: frequencies must increase strictly");
            if (!std::isfinite(s11[i].real()) || !std::isfinite(s11[i].imag()))
                throw DomainError("trace: s11 must be finite");
        }
    }
};

struct Environment {
    double a = 1.0;    // off-resonant amplitude
    double phi = 0.0;  // rad
    double tau = 0.0;  // electrical delay, s
};

struct FitDiagnostics {
    Eigen::MatrixXd covariance;  // (f0, Qi, Qc, a, phase at the trace center, tau)
    Eigen::VectorXd std_errors;
    double condition = 0.0;      // of the scaled normal matrix
    bool ill_conditioned = false;
    int evaluations = 0;
    double noise_rms = 0.0;      // residual-based estimate of per-point |noise|
};

struct ResonanceFit {
    double f0 = 0.0;
    double qi = 0.0;
    double qc = 0.0;
    double qtot = 0.0;
    Environment env;
    double residual = 0.0;  // rms |s11 - model|
    FitDiagnostics diagnostics;

    /// Resonance with Qtot set from the harmonic sum.
    static ResonanceFit make(double f0, double qi, double qc, Environment env = {}) {
        if (!(f0 > 0.0) || !(qi > 0.0) || !(qc > 0.0)) throw DomainError("resonance: f0, Qi, Qc must be positive");
        ResonanceFit r;
        r.f0 = f0;
        r.qi = qi;
        r.qc = qc;
        r.qtot = 1.0 / (1.0 / qi + 1.0 / qc);
        r.env = env;
        return r;
    }
};

inline cplx model_s11(const ResonanceFit& p, double f) {
    if (!(f > 0.0)) throw DomainError("model_s11: frequency must be positive");
    const double x = (f - p.f0) / p.f0;
    const cplx env = p.env.a * std::polar(1.0, p.env.phi - 2.0 * constants::pi * f * p.env.tau);
    return env * (1.0 - (2.0 * p.qtot / p.qc) / cplx(1.0, 2.0 * p.qtot * x));
}

/// Samples on a uniform grid of `span` centered on f0, plus circular complex
/// Gaussian noise with E|n|^2 = noise_sigma^2.
inline ReflectionTrace synth_trace(const ResonanceFit& p, double span, int points, double noise_sigma,
                                   std::uint64_t seed) {
    if (points < 16) throw DomainError("synth_trace: at least 16 points required");
    if (!(span > 0.0)) throw DomainError("synth_trace: span must be positive");
    if (!(noise_sigma >= 0.0)) throw DomainError("synth_trace: noise sigma must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, noise_sigma / std::sqrt(2.0));
    ReflectionTrace t;
    t.freq_hz.resize(std::size_t(points));
    t.s11.resize(std::size_t(points));
    for (int i = 0; i < points; ++i) {
        const double f = p.f0 - 0.5 * span + span * i / (points - 1);
        t.freq_hz[std::size_t(i)] = f;
        cplx s = model_s11(p, f);
        if (noise_sigma > 0.0) {
            const double re = gauss(rng);
            s += cplx(re, gauss(rng));
        }
        t.s11[std::size_t(i)] = s;
    }
    return t;
}

struct Linewidth {
    double kappa_hz;  // f0 / Q
    double lifetime_s;  // Q / (2 pi f0)
};

inline Linewidth linewidth_and_lifetime(double f0, double q) {
    if (!(f0 > 0.0) || !(q > 0.0)) throw DomainError("linewidth: f0 and Q must be positive");
    return {f0 / q, q / (2.0 * constants::pi * f0)};
}

struct PhotonNumberEstimate {
    double n = 0.0;
    double power_in_w = 0.0;
    double f0 = 0.0, qi = 0.0, qc = 0.0;
    static constexpr const char* convention =
        "n = 4 kappa_c P / (hbar omega0 kappa_tot^2), kappa = omega0 / Q (input-referred one-port)";
};

inline PhotonNumberEstimate photon_number(const ResonanceFit& fit, double power_in_w) {
    if (!(power_in_w >= 0.0)) throw DomainError("photon_number: power must be non-negative");
    if (!(fit.f0 > 0.0) || !(fit.qi > 0.0) || !(fit.qc > 0.0)) throw DomainError("photon_number: invalid resonance");
    const double w0 = 2.0 * constants::pi * fit.f0;
    const double qtot = 1.0 / (1.0 / fit.qi + 1.0 / fit.qc);
    const double kc = w0 / fit.qc, kt = w0 / qtot;
    return {4.0 * kc * power_in_w / (constants::hbar * w0 * kt * kt), power_in_w, fit.f0, fit.qi, fit.qc};
}

/// Input power giving mean occupation `n` (inverse of photon_number).
inline double power_for_photons(const ResonanceFit& fit, double n) {
    if (!(n >= 0.0)) throw DomainError("power_for_photons: n must be non-negative");
    return n / photon_number(fit, 1.0).n;
}

/// Occupation from a circulating (stored-energy) power: n = P / (hbar omega0 kappa_tot).
struct StoredPhotonEstimate {
    double n = 0.0;
    double power_w = 0.0;
    static constexpr const char* convention = "n = P_stored / (hbar omega0 kappa_tot), kappa_tot = omega0 / Qtot";
};

inline StoredPhotonEstimate photon_number_stored(const ResonanceFit& fit, double power_w) {
    if (!(power_w >= 0.0)) throw DomainError("photon_number_stored: power must be non-negative");
    if (!(fit.f0 > 0.0) || !(fit.qi > 0.0) || !(fit.qc > 0.0)) throw DomainError("photon_number_stored: invalid resonance");
    const double w0 = 2.0 * constants::pi * fit.f0;
    const double qtot = 1.0 / (1.0 / fit.qi + 1.0 / fit.qc);
    return {power_w / (constants::hbar * w0 * (w0 / qtot)), power_w};
}

inline double dbm_to_watts(double dbm) { return 1e-3 * std::pow(10.0, dbm / 10.0); }
inline double watts_to_dbm(double w) {
    if (!(w > 0.0)) throw DomainError("watts_to_dbm: power must be positive");
    return 10.0 * std::log10(w / 1e-3);
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct FitOptions {
    int max_evaluations = 4000;
    double condition_warning = 1e12;
    double min_feature_snr = 5.0;  // resonance depth over noise needed to fit
};

namespace detail {

struct Circle {
    cplx center;
    double radius;
};

// Algebraic (Kasa) circle fit: minimizes sum (|z - c|^2 - r^2)^2.
inline Circle fit_circle(const std::vector<cplx>& z) {
    const std::size_t n = z.size();
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd b(n);
    cplx mean = std::accumulate(z.begin(), z.end(), cplx(0.0)) / double(n);
    for (std::size_t i = 0; i < n; ++i) {
        const cplx w = z[i] - mean;
        a(Eigen::Index(i), 0) = w.real();
        a(Eigen::Index(i), 1) = w.imag();
        a(Eigen::Index(i), 2) = 1.0;
        b[Eigen::Index(i)] = std::norm(w);
    }
    const Eigen::Vector3d s = a.colPivHouseholderQr().solve(b);
    const cplx c(0.5 * s[0], 0.5 * s[1]);
    const double r2 = s[2] + std::norm(c);
    if (!(r2 > 0.0) || !std::isfinite(r2)) throw NoResonanceError("fit_reflection: circle fit is degenerate");
    return {c + mean, std::sqrt(r2)};
}

inline double wrap_angle(double x) { return std::remainder(x, 2.0 * constants::pi); }

// Slope of unwrapped phase vs frequency over samples [lo, hi).
inline double phase_slope(const ReflectionTrace& t, std::size_t lo, std::size_t hi) {
    std::vector<double> ph;
    double prev = 0.0, offset = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        const double p = std::arg(t.s11[i]);
        if (i > lo) offset -= 2.0 * constants::pi * std::round((p + offset - prev) / (2.0 * constants::pi));
        prev = p + offset;
        ph.push_back(prev);
    }
    double fm = 0.0, pm = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        fm += t.freq_hz[i];
        pm += ph[i - lo];
    }
    fm /= double(hi - lo);
    pm /= double(hi - lo);
    double num = 0.0, den = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        num += (t.freq_hz[i] - fm) * (ph[i - lo] - pm);
        den += (t.freq_hz[i] - fm) * (t.freq_hz[i] - fm);
    }
    return num / den;
}

// Complex residuals over scaled parameters:
// (f0 - f0i)/lw, ln Qi, ln Qc, a, phase at fc, delay phase across the span.
// Referencing the phase to the trace center keeps phi and tau decorrelated.
struct ComplexFunctor {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    const ReflectionTrace* trace;
    double f0i, lw, span, fc;
    mutable int evaluations = 0;

    int inputs() const { return 6; }
    int values() const { return static_cast<int>(2 * trace->size()); }

    ResonanceFit unpack(const Eigen::VectorXd& x) const {
        ResonanceFit r;
        r.f0 = f0i + x[0] * lw;
        r.qi = std::exp(x[1]);
        r.qc = std::exp(x[2]);
        r.qtot = 1.0 / (1.0 / r.qi + 1.0 / r.qc);
        const double tau = x[5] / (2.0 * constants::pi * span);
        r.env = {x[3], x[4] + 2.0 * constants::pi * fc * tau, tau};
        return r;
    }

    template <class F>
    void each(const Eigen::VectorXd& x, F&& f) const {
        const double f0 = f0i + x[0] * lw, qi = std::exp(x[1]), qc = std::exp(x[2]);
        const double qt = 1.0 / (1.0 / qi + 1.0 / qc), dd = 2.0 * qt / qc;
        for (std::size_t i = 0; i < trace->size(); ++i) {
            const double fr = trace->freq_hz[i];
            const double v = (fr - fc) / span;
            const cplx e = std::polar(1.0, x[4] - x[5] * v);
            const double u = 2.0 * qt * (fr - f0) / f0;
            const cplx l = 1.0 / cplx(1.0, u);
            f(i, e, l, u, v, fr, f0, qi, qc, qt, dd);
        }
    }

    int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& fvec) const {
        ++evaluations;
        each(x, [&](std::size_t i, cplx e, cplx l, double, double, double, double, double, double, double, double dd) {
            const cplx d = x[3] * e * (1.0 - dd * l) - trace->s11[i];
            fvec[Eigen::Index(2 * i)] = d.real();
            fvec[Eigen::Index(2 * i + 1)] = d.imag();
        });
        return 0;
    }

    int df(const Eigen::VectorXd& x, Eigen::MatrixXd& jac) const {
        const cplx I(0.0, 1.0);
        each(x, [&](std::size_t i, cplx e, cplx l, double u, double v, double fr, double f0, double qi, double qc,
                    double qt, double dd) {
            const cplx ae = x[3] * e;
            const cplx s = ae * (1.0 - dd * l);
            // ds = ae (-L dD + i D L^2 du)
            auto ds = [&](double d_dd, double d_u) { return ae * (-l * d_dd + I * dd * l * l * d_u); };
            const cplx col[6] = {
                ds(0.0, -2.0 * qt * fr / (f0 * f0) * lw),
                ds(dd * qt / qi, u * qt / qi),
                ds(dd * (qt / qc - 1.0), u * qt / qc),
                e * (1.0 - dd * l),
                I * s,
                -I * v * s,
            };
            for (int k = 0; k < 6; ++k) {
                jac(Eigen::Index(2 * i), k) = col[k].real();
                jac(Eigen::Index(2 * i + 1), k) = col[k].imag();
            }
        });
        return 0;
    }
};

// Circle-fit residual after removing a delay phase of `turn`
// radians across the span (referenced to the center).
inline double circle_misfit(const ReflectionTrace& t, double turn, std::vector<cplx>& z) {
    const double fc = 0.5 * (t.freq_hz.front() + t.freq_hz.back());
    const double span = t.freq_hz.back() - t.freq_hz.front();
    for (std::size_t i = 0; i < t.size(); ++i) z[i] = t.s11[i] * std::polar(1.0, turn * (t.freq_hz[i] - fc) / span);
    const Circle c = fit_circle(z);
    double acc = 0.0;
    for (const auto& v : z) {
        const double d = std::abs(v - c.center) - c.radius;
        acc += d * d;
    }
    return acc;
}

}  // namespace detail

/// Deterministic starting point from the trace alone.
inline ResonanceFit initial_estimate(const ReflectionTrace& trace, const FitOptions& opt = {}) {
    trace.validate();
    const std::size_t n = trace.size();

    // Noise from second differences, which cancel the smooth response.
    double noise2 = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) noise2 += std::norm(trace.s11[i + 1] - 2.0 * trace.s11[i] + trace.s11[i - 1]);
    const double noise = std::sqrt(noise2 / double(n - 2) / 6.0);

    // Delay: phase slope of the outer tenths, refined by making the samples
    // lie on a circle.
    const std::size_t edge = std::max<std::size_t>(4, n / 10);
    const double fc = 0.5 * (trace.freq_hz.front() + trace.freq_hz.back());
    const double span = trace.freq_hz.back() - trace.freq_hz.front();
    const double slope = 0.5 * (detail::phase_slope(trace, 0, edge) + detail::phase_slope(trace, n - edge, n));
    std::vector<cplx> z(n);
    double turn = -slope * span;
    // The misfit valley around the true delay narrows with the feature
    // depth, so a shallow (strongly undercoupled) resonance gets a narrow,
    // finely sampled window around the slope estimate.
    double width = 3.0;
    {
        for (std::size_t i = 0; i < n; ++i) z[i] = trace.s11[i] * std::polar(1.0, turn * (trace.freq_hz[i] - fc) / span);
        cplx off0(0.0);
        for (std::size_t i = 0; i < edge; ++i) off0 += z[i] + z[n - 1 - i];
        off0 /= double(2 * edge);
        double depth0 = 0.0;
        for (const auto& v : z) depth0 = std::max(depth0, std::abs(v - off0));
        if (std::abs(off0) > 0.0) width = std::clamp(10.0 * depth0 / std::abs(off0), 1e-9, 3.0);
    }
    {
        auto misfit = [&](double t) {
            try {
                return detail::circle_misfit(trace, t, z);
            } catch (const NoResonanceError&) {
                return std::numeric_limits<double>::infinity();
            }
        };
        const int steps = 60;
        double best = turn, best_val = misfit(turn);
        for (int k = 0; k <= steps; ++k) {
            const double t = turn - width + 2.0 * width * k / steps;
            const double v = misfit(t);
            if (v < best_val) best_val = v, best = t;
        }
        double lo = best - 2.0 * width / steps, hi = best + 2.0 * width / steps;
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo), f1 = misfit(x1), f2 = misfit(x2);
        for (int it = 0; it < 60; ++it) {
            if (f1 < f2) hi = x2, x2 = x1, f2 = f1, x1 = hi - g * (hi - lo), f1 = misfit(x1);
            else lo = x1, x1 = x2, f1 = f2, x2 = lo + g * (hi - lo), f2 = misfit(x2);
        }
        turn = 0.5 * (lo + hi);
    }
    const double tau = turn / (2.0 * constants::pi * span);
    for (std::size_t i = 0; i < n; ++i) z[i] = trace.s11[i] * std::polar(1.0, turn * (trace.freq_hz[i] - fc) / span);

    // Feature depth relative to the off-resonant level.
    cplx off(0.0);
    for (std::size_t i = 0; i < edge; ++i) off += z[i] + z[n - 1 - i];
    off /= double(2 * edge);
    double depth = 0.0;
    for (const auto& v : z) depth = std::max(depth, std::abs(v - off));
    if (!(depth > opt.min_feature_snr * noise) || !(depth > 1e-9 * std::abs(off)))
        throw NoResonanceError("fit_reflection: no resonant feature above the noise floor");

    const auto circle = detail::fit_circle(z);
    if (circle.radius > 1e3 * std::max(std::abs(off), depth))
        throw NoResonanceError("fit_reflection: samples do not lie on a resonance circle");

    // Off-resonant point: where the circle meets the direction of the edges.
    cplx dir = off - circle.center;
    if (std::abs(dir) == 0.0) dir = 1.0;
    const cplx p_off = circle.center + circle.radius * dir / std::abs(dir);
    ResonanceFit r;
    // Phase of p_off is referenced to fc; report it at f = 0.
    r.env = {std::abs(p_off), detail::wrap_angle(std::arg(p_off) + 2.0 * constants::pi * fc * tau), tau};
    const double diameter = 2.0 * circle.radius / r.env.a;  // = 2 Qtot / Qc

    // Angle around the center, referenced to the off-resonant point:
    // theta(f) = -2 atan(2 Qtot (f/f0 - 1)) + pi.
    std::vector<double> theta(n);
    const cplx ref = (p_off - circle.center);
    for (std::size_t i = 0; i < n; ++i) theta[i] = std::arg((z[i] - circle.center) / ref);
    // Resonance: the sample farthest from the off-resonant point.
    std::size_t ires = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (std::abs(z[i] - p_off) > std::abs(z[ires] - p_off)) ires = i;
    double f0 = trace.freq_hz[ires];
    // Half-width where the angle crosses +-pi/2 (|2 Qtot x| = 1).
    std::size_t lo = ires, hi = ires;
    while (lo > 0 && std::abs(theta[lo]) > 0.5 * constants::pi) --lo;
    while (hi + 1 < n && std::abs(theta[hi]) > 0.5 * constants::pi) ++hi;
    double fwhm = trace.freq_hz[hi] - trace.freq_hz[lo];
    if (!(fwhm > 0.0)) fwhm = 2.0 * (trace.freq_hz[1] - trace.freq_hz[0]);
    double qtot = f0 / fwhm;

    // Gauss-Newton on the angle for (f0, Qtot), points within a few widths.
    for (int it = 0; it < 30; ++it) {
        Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
        Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            const double x = (trace.freq_hz[i] - f0) / f0;
            const double u = 2.0 * qtot * x;
            if (std::abs(u) > 8.0) continue;
            const double model = std::remainder(constants::pi - 2.0 * std::atan(u), 2.0 * constants::pi);
            const double res = detail::wrap_angle(theta[i] - model);
            const double g = -2.0 / (1.0 + u * u);
            // d u / d f0 = -2 qtot f / f0^2 ; d u / d ln qtot = u
            const Eigen::Vector2d j(g * (-2.0 * qtot * trace.freq_hz[i] / (f0 * f0)) * (f0 / qtot), g * u);
            jtj += j * j.transpose();
            jtr += j * res;
        }
        if (jtj.determinant() <= 0.0) break;
        const Eigen::Vector2d d = jtj.ldlt().solve(jtr);
        f0 += d[0] * f0 / qtot;
        qtot *= std::exp(std::clamp(d[1], -1.0, 1.0));
        if (std::abs(d[0]) < 1e-10 && std::abs(d[1]) < 1e-10) break;
    }
    if (!(f0 > trace.freq_hz.front() && f0 < trace.freq_hz.back()))
        throw NoResonanceError("fit_reflection: resonance outside the trace span");

    const double qc = 2.0 * qtot / std::max(diameter, 1e-12);
    double inv_qi = 1.0 / qtot - 1.0 / qc;
    if (!(inv_qi > 0.0)) inv_qi = 1e-3 / qtot;  // noise pushed the circle past critical
    r.f0 = f0;
    r.qc = qc;
    r.qi = 1.0 / inv_qi;
    r.qtot = 1.0 / (1.0 / r.qi + 1.0 / r.qc);
    return r;
}

inline ResonanceFit fit_reflection(const ReflectionTrace& trace, const std::optional<ResonanceFit>& guess = {},
                                   const FitOptions& opt = {}) {
    const ResonanceFit init = guess ? *guess : initial_estimate(trace, opt);
    if (guess) trace.validate();
    const double span = trace.freq_hz.back() - trace.freq_hz.front();
    detail::ComplexFunctor fn;
    fn.trace = &trace;
    fn.f0i = init.f0;
    fn.lw = init.f0 / init.qtot;
    fn.span = span;
    fn.fc = 0.5 * (trace.freq_hz.front() + trace.freq_hz.back());
    Eigen::VectorXd x(6);
    x << 0.0, std::log(init.qi), std::log(init.qc), init.env.a,
        detail::wrap_angle(init.env.phi - 2.0 * constants::pi * fn.fc * init.env.tau),
        2.0 * constants::pi * span * init.env.tau;

    Eigen::LevenbergMarquardt<detail::ComplexFunctor> lm(fn);
    lm.parameters.maxfev = opt.max_evaluations;
    lm.parameters.ftol = 1e-14;
    lm.parameters.xtol = 1e-14;
    lm.minimize(x);

    ResonanceFit r = fn.unpack(x);
    r.env.phi = detail::wrap_angle(r.env.phi);
    if (r.env.a < 0.0) {
        r.env.a = -r.env.a;
        r.env.phi = detail::wrap_angle(r.env.phi + constants::pi);
    }
    if (!(r.f0 > trace.freq_hz.front() && r.f0 < trace.freq_hz.back()))
        throw NoResonanceError("fit_reflection: fitted resonance outside the trace span");

    const Eigen::Index m = fn.values();
    Eigen::VectorXd fvec(m);
    fn(x, fvec);
    r.residual = std::sqrt(fvec.squaredNorm() / double(trace.size()));

    Eigen::MatrixXd jac(m, 6);
    fn.df(x, jac);
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    if (!jtj.allFinite()) throw NoResonanceError("fit_reflection: non-finite Jacobian at the optimum");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jtj);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
    auto& d = r.diagnostics;
    d.condition = ev[5] / std::max(ev[0], 1e-300);
    d.ill_conditioned = !(d.condition < opt.condition_warning);
    d.evaluations = fn.evaluations;
    const double dof = std::max<double>(1.0, double(m) - 6.0);
    const double sigma2 = fvec.squaredNorm() / dof;
    d.noise_rms = std::sqrt(2.0 * sigma2);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(6);
    for (int k = 0; k < 6; ++k)
        if (ev[k] > 1e-15 * ev[5]) inv[k] = 1.0 / ev[k];
    const Eigen::MatrixXd cov_scaled = sigma2 * es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    // Jacobian of physical parameters w.r.t. scaled ones is diagonal.
    Eigen::VectorXd scale(6);
    scale << fn.lw, r.qi, r.qc, 1.0, 1.0, 1.0 / (2.0 * constants::pi * span);
    d.covariance = scale.asDiagonal() * cov_scaled * scale.asDiagonal();
    d.std_errors = d.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    return r;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// CSV `freq_hz,re_s11,im_s11`; an optional sidecar JSON {power_dbm, temperature_k}.
inline ReflectionTrace read_trace(const std::filesystem::path& csv, const std::filesystem::path& sidecar = {}) {
    const auto t = io::read_csv(csv);
    ReflectionTrace tr;
    tr.freq_hz = t.numbers("freq_hz");
    const auto re = t.numbers("re_s11"), im = t.numbers("im_s11");
    for (std::size_t i = 0; i < re.size(); ++i) tr.s11.emplace_back(re[i], im[i]);
    if (!sidecar.empty()) {
        const auto meta = io::read_json(sidecar);
        if (meta.contains("power_dbm")) {
            if (!meta["power_dbm"].is_number()) throw UsageError("must be a number", "power_dbm");
            tr.power_in_w = dbm_to_watts(meta["power_dbm"].get<double>());
        }
        if (meta.contains("temperature_k")) {
            if (!meta["temperature_k"].is_number()) throw UsageError("must be a number", "temperature_k");
            tr.temperature_k = meta["temperature_k"].get<double>();
        }
    }
    tr.validate();
    return tr;
}

inline std::string trace_csv(const ReflectionTrace& t) {
    io::CsvWriter w({"freq_hz", "re_s11", "im_s11"});
    for (std::size_t i = 0; i < t.size(); ++i) w.row({t.freq_hz[i], t.s11[i].real(), t.s11[i].imag()});
    return w.str();
}

inline nlohmann::json fit_json(const ResonanceFit& r) {
    return {{"f0_hz", r.f0}, {"qi", r.qi}, {"qc", r.qc}, {"qtot", r.qtot}, {"a", r.env.a},
            {"phi_rad", r.env.phi}, {"tau_s", r.env.tau}, {"residual", r.residual}};
}

}  // namespace mmcav
