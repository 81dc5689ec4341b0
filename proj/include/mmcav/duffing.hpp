#pragma once

// Phenomenological nonlinear response of the driven cavity: a Kerr (Duffing)
// cubic for the intracavity photon number, and an empirical interpolation
// between two metastable linear states. Rates are cyclic (Hz) throughout.

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "mmcav/constants.hpp"
#include "mmcav/errors.hpp"
#include "mmcav/io.hpp"
#include "mmcav/resonfit.hpp"

namespace mmcav {

struct DuffingParams {
    double f_lin = 98.218508e9;  // Hz
    double kappa_tot = 98.218508e9 / 3e7;  // Hz
    double kappa_c = 0.5 * 98.218508e9 / 3e7;  // Hz
    double beta = 1.6e-3;        // Hz per photon, positive = up-shift; ~24 kHz near -80 dBm
    double drive_power = 0.0;    // W at the port

    void validate() const {
        if (!(f_lin > 0.0)) throw DomainError("duffing: f_lin must be positive");
        if (!(kappa_tot > 0.0)) throw DomainError("duffing: kappa_tot must be positive");
        if (!(kappa_c >= 0.0) || kappa_c > kappa_tot) throw DomainError("duffing: need 0 <= kappa_c <= kappa_tot");
        if (!std::isfinite(beta)) throw DomainError("duffing: beta must be finite");
        if (!(drive_power >= 0.0)) throw DomainError("duffing: drive power must be non-negative");
    }

    /// Drive term of the cubic, Hz^2: kappa_c P / (2 pi hbar omega). At beta = 0
    /// this reproduces photon_number() on resonance.
    double drive() const { return kappa_c * drive_power / (constants::h * 2.0 * constants::pi * f_lin); }
};

struct Root {
    double n;
    bool stable;
};

struct Branches {
    double f_probe = 0.0;
    std::vector<Root> roots;  // ascending in n; 1 or 3 entries
};

namespace detail {

// Real roots of y^3 + a y^2 + b y + c = 0, ascending.
inline std::vector<double> real_cubic_roots(double a, double b, double c) {
    const double q = (a * a - 3.0 * b) / 9.0;
    const double r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * c) / 54.0;
    std::vector<double> out;
    if (r * r < q * q * q) {
        const double th = std::acos(std::clamp(r / std::sqrt(q * q * q), -1.0, 1.0));
        const double s = -2.0 * std::sqrt(q);
        for (int k = 0; k < 3; ++k) out.push_back(s * std::cos((th + 2.0 * constants::pi * (k - 1)) / 3.0) - a / 3.0);
    } else {
        const double big = -std::copysign(std::cbrt(std::abs(r) + std::sqrt(r * r - q * q * q)), r);
        const double small = big == 0.0 ? 0.0 : q / big;
        out.push_back(big + small - a / 3.0);
    }
    // Newton polish against cancellation.
    for (auto& y : out)
        for (int it = 0; it < 3; ++it) {
            const double f = ((y + a) * y + b) * y + c, df = (3.0 * y + 2.0 * a) * y + b;
            if (df == 0.0) break;
            y -= f / df;
        }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// Photon-number branches of n [(delta - beta n)^2 + (kappa/2)^2] = S at one probe frequency.
inline Branches steady_state_response(const DuffingParams& p, double f_probe) {
    p.validate();
    if (!(f_probe > 0.0)) throw DomainError("duffing: probe frequency must be positive");
    const double d = f_probe - p.f_lin, k2 = 0.25 * p.kappa_tot * p.kappa_tot, s = p.drive();
    Branches b;
    b.f_probe = f_probe;
    if (p.beta == 0.0 || s == 0.0) {
        b.roots.push_back({s / (d * d + k2), true});
        return b;
    }
    // In y = beta n: y^3 - 2 d y^2 + (d^2 + k2) y - beta S = 0.
    auto ys = detail::real_cubic_roots(-2.0 * d, d * d + k2, -p.beta * s);
    std::vector<double> ns;
    for (double y : ys) ns.push_back(y / p.beta);
    std::sort(ns.begin(), ns.end());
    for (std::size_t i = 0; i < ns.size(); ++i) b.roots.push_back({ns[i], !(ns.size() == 3 && i == 1)});
    return b;
}

/// Complex reflection at photon number n (nonlinear detuning delta - beta n).
inline std::complex<double> duffing_s11(const DuffingParams& p, double f_probe, double n) {
    const double d = f_probe - p.f_lin - p.beta * n;
    return 1.0 - 2.0 * p.kappa_c / std::complex<double>(p.kappa_tot, 2.0 * d);
}

struct Bifurcation {
    double power_w;
    double n_crit;
    double detuning_hz;  // delta at the critical point
};

/// Onset of bistability: n_c = kappa/(sqrt3 |beta|), delta_c = (sqrt3/2) kappa sign(beta),
/// drive S_c = kappa^3 / (3 sqrt3 |beta|).
inline Bifurcation bifurcation_power(const DuffingParams& p) {
    p.validate();
    if (p.beta == 0.0) throw NoBifurcationError("duffing: beta = 0 has no bistability");
    if (!(p.kappa_c > 0.0)) throw NoBifurcationError("duffing: kappa_c = 0 cannot drive the cavity");
    const double k = p.kappa_tot, ab = std::abs(p.beta), r3 = std::sqrt(3.0);
    const double s_c = k * k * k / (3.0 * r3 * ab);
    const double per_watt = p.kappa_c / (constants::h * 2.0 * constants::pi * p.f_lin);
    return {s_c / per_watt, k / (r3 * ab), 0.5 * r3 * k * (p.beta > 0.0 ? 1.0 : -1.0)};
}

enum class SweepDirection { up, down };

/// Quasi-static frequency sweep: each point follows the stable root closest
/// to the previous one, so bistable regions show hysteresis.
inline std::vector<double> sweep_response(const DuffingParams& p, const std::vector<double>& freqs,
                                          SweepDirection dir) {
    std::vector<double> out(freqs.size());
    double prev = 0.0;
    bool have = false;
    for (std::size_t s = 0; s < freqs.size(); ++s) {
        const std::size_t i = dir == SweepDirection::up ? s : freqs.size() - 1 - s;
        const auto b = steady_state_response(p, freqs[i]);
        double best = 0.0, gap = 0.0;
        bool found = false;
        for (const auto& r : b.roots) {
            if (!r.stable) continue;
            const double g = have ? std::abs(r.n - prev) : -r.n;  // first point: any root (only one off-resonance)
            if (!found || g < gap) best = r.n, gap = g, found = true;
        }
        out[i] = prev = best;
        have = true;
    }
    return out;
}

/// Area between the up- and down-sweep photon-number curves, photons * Hz.
inline double hysteresis_area(const DuffingParams& p, const std::vector<double>& freqs) {
    const auto up = sweep_response(p, freqs, SweepDirection::up);
    const auto down = sweep_response(p, freqs, SweepDirection::down);
    double area = 0.0;
    for (std::size_t i = 1; i < freqs.size(); ++i)
        area += 0.5 * (std::abs(up[i] - down[i]) + std::abs(up[i - 1] - down[i - 1])) * (freqs[i] - freqs[i - 1]);
    return area;
}

struct SpectrumPoint {
    double f_hz;
    double response_mag;  // |s11|
    std::string branch;   // single, lower, middle, upper
};

/// All branches over a frequency grid, for CSV `freq_hz,response_mag,branch_label`.
inline std::vector<SpectrumPoint> duffing_spectrum(const DuffingParams& p, const std::vector<double>& freqs) {
    std::vector<SpectrumPoint> out;
    for (double f : freqs) {
        const auto b = steady_state_response(p, f);
        static const char* names[3] = {"lower", "middle", "upper"};
        for (std::size_t i = 0; i < b.roots.size(); ++i)
            out.push_back({f, std::abs(duffing_s11(p, f, b.roots[i].n)), b.roots.size() == 1 ? "single" : names[i]});
    }
    return out;
}

inline std::string spectrum_csv(const std::vector<SpectrumPoint>& pts) {
    io::CsvWriter w({"freq_hz", "response_mag", "branch_label"});
    for (const auto& s : pts) w.row_strings({io::num(s.f_hz), io::num(s.response_mag), s.branch});
    return w.str();
}

// ---------------------------------------------------------------------------
// Two metastable states
// ---------------------------------------------------------------------------

struct MetastableStates {
    double f1 = 98.218508e9;
    double q1 = 3e7;
    double f2 = 98.218508e9 + 24e3;
    double q2 = 1.3e7;
    double p_sat_w = 1e-11;  // -80 dBm

    void validate() const {
        if (!(f1 > 0.0) || !(f2 > 0.0) || !(q1 > 0.0) || !(q2 > 0.0))
            throw DomainError("metastable states: frequencies and Q must be positive");
        if (!(p_sat_w > 0.0)) throw DomainError("metastable states: P_sat must be positive");
    }
};

struct TwoStateSpectrum {
    std::vector<double> f_hz;
    std::vector<double> response;  // normalized photon number, peak 1
    double peak_hz = 0.0;
    double q = 0.0;
    double fraction = 0.0;         // progress from state 1 (0) to state 2 (1)
};

/// Empirical interpolation: the peak moves linearly in P from f1 to f2 and
/// 1/Q interpolates likewise, saturating at P_sat. In between, a Kerr tilt
/// of weight 4x(1-x) carries part of the shift, so both endpoints are exact
/// Lorentzians.
inline TwoStateSpectrum two_state_lineshape(const MetastableStates& m, double power_w, const std::vector<double>& f) {
    m.validate();
    if (!(power_w >= 0.0)) throw DomainError("two_state_lineshape: power must be non-negative");
    const double x = std::min(1.0, power_w / m.p_sat_w);
    TwoStateSpectrum s;
    s.fraction = x;
    s.peak_hz = m.f1 + x * (m.f2 - m.f1);
    s.q = 1.0 / ((1.0 - x) / m.q1 + x / m.q2);
    const double kappa = s.peak_hz / s.q, k2 = 0.25 * kappa * kappa;
    const double tilt = 4.0 * x * (1.0 - x) * x * (m.f2 - m.f1);  // Kerr shift at the peak
    const double base = s.peak_hz - tilt;
    s.f_hz = f;
    for (double fr : f) {
        const double d = fr - base;
        double r;
        if (tilt == 0.0) {
            r = k2 / (d * d + k2);
        } else {
            // u [(d - B u)^2 + k2] = k2 with u = n / n_peak; take the largest root.
            const auto ys = detail::real_cubic_roots(-2.0 * d, d * d + k2, -tilt * k2);
            r = ys.back() / tilt;
        }
        s.response.push_back(r);
    }
    return s;
}

}  // namespace mmcav
