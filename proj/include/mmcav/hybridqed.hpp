#pragma once

// Hybrid Rydberg cavity-QED figures of merit and the weak-probe transmission
// of the optical cavity. All rates, couplings and detunings are cyclic (Hz);
// g means g/2pi.

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmcav/constants.hpp"
#include "mmcav/errors.hpp"
#include "mmcav/io.hpp"

namespace mmcav {

inline constexpr const char* field_convention = "E = sqrt(h f / (2 eps0 V)), zero-point field of one photon";
inline constexpr const char* rate_convention = "cyclic frequencies: g, kappa, Gamma in Hz (g means g/2pi)";

/// Zero-point electric field of one photon in mode volume V.
inline double per_photon_field(double f, double v) {
    if (!(f > 0.0) || !(v > 0.0)) throw DomainError("per_photon_field: f and V must be positive");
    return std::sqrt(constants::h * f / (2.0 * constants::eps0 * v));
}

/// g/2pi = d E / (2 pi hbar) = d E / h, Hz.
inline double coupling_g(double d, double e) {
    if (!(d >= 0.0) || !(e >= 0.0)) throw DomainError("coupling_g: d and E must be non-negative");
    return d * e / constants::h;
}

/// Dipole that gives coupling g at field E.
inline double dipole_for_coupling(double g, double e) {
    if (!(g >= 0.0) || !(e > 0.0)) throw DomainError("dipole_for_coupling: need g >= 0 and E > 0");
    return constants::h * g / e;
}

/// Single-atom optical cooperativity (24 F / pi) / (k w0)^2.
inline double coop_optical(double finesse, double w0, double lambda) {
    if (!(finesse > 0.0) || !(w0 > 0.0) || !(lambda > 0.0)) throw DomainError("coop_optical: inputs must be positive");
    const double kw = 2.0 * constants::pi / lambda * w0;
    return 24.0 * finesse / constants::pi / (kw * kw);
}

/// C = 4 g^2 / (Gamma kappa), all in the same units.
inline double coop_mm(double g, double gamma, double kappa) {
    if (!(gamma > 0.0) || !(kappa > 0.0)) throw DomainError("coop_mm: Gamma and kappa must be positive");
    return 4.0 * g * g / (gamma * kappa);
}

/// Linewidth that yields cooperativity C for given g and kappa.
inline double gamma_for_cooperativity(double g, double c, double kappa) {
    if (!(c > 0.0) || !(kappa > 0.0)) throw DomainError("gamma_for_cooperativity: C and kappa must be positive");
    return 4.0 * g * g / (c * kappa);
}

inline double collective_enhancement(double g_single, double n_atoms) {
    if (!(n_atoms >= 0.0)) throw DomainError("collective_enhancement: N must be non-negative");
    return g_single * std::sqrt(n_atoms);
}

/// Q and finesse coincide for sub-wavelength cavities.
inline double finesse_q_equivalence(double f0, double q) {
    if (!(f0 > 0.0) || !(q > 0.0)) throw DomainError("finesse_q_equivalence: f0 and Q must be positive");
    return q;
}

/// Gaussian standing-wave mode volume pi w0^2 L / 4.
inline double fabry_perot_mode_volume(double w0, double length) {
    if (!(w0 > 0.0) || !(length > 0.0)) throw DomainError("fabry_perot_mode_volume: inputs must be positive");
    return constants::pi * w0 * w0 * length / 4.0;
}

/// Linewidth c / (2 L F) of a two-mirror cavity, Hz.
inline double fabry_perot_linewidth(double length, double finesse) {
    if (!(length > 0.0) || !(finesse > 0.0)) throw DomainError("fabry_perot_linewidth: inputs must be positive");
    return constants::c / (2.0 * length * finesse);
}

struct OpticalCavity {
    double finesse = 10000.0;
    double w0 = 80e-6;        // m
    double lambda = 780e-9;   // m
    double length = 23e-3;    // m; sized so that g_opt is about 600 kHz
    double d = 3.584e-29;     // C m, Rb D2 reduced dipole 4.227 e a0
};

struct MmCavity {
    double f0 = 98.2e9;
    double q = 3e7;
    double v_over_lambda3 = 0.14;
    double d = 0.0;  // C m; 0 selects the dipole that gives g = 460 kHz

    double volume() const {
        const double l = constants::c / f0;
        return v_over_lambda3 * l * l * l;
    }
};

struct Atoms {
    double n_atoms = 1000.0;
    double gamma_5p = 6.0666e6;  // Hz, Rb D2 natural linewidth
    double gamma_ryd = 0.0;      // Hz; 0 selects the value implied by C_mm = 22000
    double gamma_35p = -1.0;     // Hz; negative means equal to gamma_ryd
    double omega_b = 10e6;       // Hz, control Rabi frequency
    double n_mm = 0.0;           // mean mm-wave photon number
};

struct HybridParams {
    OpticalCavity optical;
    MmCavity mm;
    Atoms atoms;
    double kappa_opt = 0.0;  // Hz; 0 selects c / (2 L F)

    static constexpr double paper_g_mm = 460e3;
    static constexpr double paper_c_mm = 22000.0;

    double e_opt() const {
        const double f = constants::c / optical.lambda;
        return per_photon_field(f, fabry_perot_mode_volume(optical.w0, optical.length));
    }
    double e_mm() const { return per_photon_field(mm.f0, mm.volume()); }
    double d_mm() const { return mm.d > 0.0 ? mm.d : dipole_for_coupling(paper_g_mm, e_mm()); }
    double g_opt() const { return coupling_g(optical.d, e_opt()); }
    double g_mm() const { return coupling_g(d_mm(), e_mm()); }
    double kappa_mm() const { return mm.f0 / mm.q; }
    double kappa_optical() const {
        return kappa_opt > 0.0 ? kappa_opt : fabry_perot_linewidth(optical.length, optical.finesse);
    }
    double gamma_ryd() const {
        return atoms.gamma_ryd > 0.0 ? atoms.gamma_ryd
                                     : gamma_for_cooperativity(paper_g_mm, paper_c_mm, 98.2e9 / 3e7);
    }
    double gamma_35p() const { return atoms.gamma_35p >= 0.0 ? atoms.gamma_35p : gamma_ryd(); }

    void validate() const {
        if (!(optical.finesse > 0.0) || !(mm.q > 0.0)) throw DomainError("hybrid: finesse and Q must be positive");
        if (!(optical.w0 > 0.0) || !(optical.lambda > 0.0) || !(optical.length > 0.0))
            throw DomainError("hybrid: optical geometry must be positive");
        if (!(mm.f0 > 0.0) || !(mm.v_over_lambda3 > 0.0)) throw DomainError("hybrid: mm cavity f0 and V must be positive");
        if (!(optical.d >= 0.0) || !(mm.d >= 0.0)) throw DomainError("hybrid: dipoles must be non-negative");
        if (!(atoms.n_atoms >= 0.0) || !(atoms.gamma_5p >= 0.0) || !(atoms.gamma_ryd >= 0.0) ||
            !(atoms.omega_b >= 0.0) || !(atoms.n_mm >= 0.0) || !(kappa_opt >= 0.0))
            throw DomainError("hybrid: rates and counts must be non-negative");
    }
};

enum class Regime { bare, rabi, eit, mm_split };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::bare: return "bare";
        case Regime::rabi: return "rabi";
        case Regime::eit: return "eit";
        case Regime::mm_split: return "mm_split";
    }
    return "?";
}

struct TransmissionSpectrum {
    std::vector<double> detuning_hz;
    std::vector<double> transmission;
    Regime regime = Regime::bare;
};

inline Regime regime_of(const HybridParams& p) {
    if (p.atoms.n_atoms == 0.0 || p.optical.d == 0.0) return Regime::bare;
    if (p.atoms.omega_b == 0.0) return Regime::rabi;
    if (p.atoms.n_mm == 0.0) return Regime::eit;
    return Regime::mm_split;
}

/// Weak-probe transmission with the nested susceptibility
/// Sigma = g^2 N / (i d + G5P/2 + (Ob^2/4) / (i d + GRyd/2 + gmm^2 n / (i d + G35P/2))),
/// normalized to the bare-cavity peak.
inline TransmissionSpectrum eit_transmission(const HybridParams& p, const std::vector<double>& detunings) {
    p.validate();
    if (detunings.empty()) throw DomainError("eit_transmission: detuning array is empty");
    for (std::size_t i = 1; i < detunings.size(); ++i)
        if (!(detunings[i] > detunings[i - 1])) throw DomainError("eit_transmission: detunings must increase strictly");
    using cplx = std::complex<double>;
    const double k2 = 0.5 * p.kappa_optical();
    const double gn2 = std::pow(collective_enhancement(p.g_opt(), p.atoms.n_atoms), 2);
    const double ob2 = 0.25 * p.atoms.omega_b * p.atoms.omega_b;
    const double gm2 = std::pow(p.g_mm(), 2) * p.atoms.n_mm;
    const double g5 = 0.5 * p.atoms.gamma_5p, gr = 0.5 * p.gamma_ryd(), g35 = 0.5 * p.gamma_35p();
    TransmissionSpectrum s;
    s.regime = regime_of(p);
    s.detuning_hz = detunings;
    for (double d : detunings) {
        const cplx id(0.0, d);
        cplx inner = id + gr;
        if (gm2 > 0.0) inner += gm2 / (id + g35);
        cplx mid = id + g5;
        if (ob2 > 0.0) mid += ob2 / inner;
        const cplx sigma = gn2 > 0.0 ? gn2 / mid : cplx(0.0);
        s.transmission.push_back(std::min(1.0, std::norm(k2 / (id + k2 + sigma))));
    }
    return s;
}

namespace detail {

// Local maxima with parabolic refinement: (position, height).
inline std::vector<std::pair<double, double>> local_maxima(const TransmissionSpectrum& s) {
    std::vector<std::pair<double, double>> out;
    const auto& x = s.detuning_hz;
    const auto& y = s.transmission;
    for (std::size_t i = 1; i + 1 < y.size(); ++i) {
        if (!(y[i] > y[i - 1] && y[i] >= y[i + 1])) continue;
        const double den = y[i - 1] - 2.0 * y[i] + y[i + 1];
        double pos = x[i], h = y[i];
        if (den < 0.0) {
            const double t = 0.5 * (y[i - 1] - y[i + 1]) / den;  // in units of the local step
            const double step = t >= 0.0 ? x[i + 1] - x[i] : x[i] - x[i - 1];
            pos = x[i] + t * step;
            h = y[i] - 0.25 * (y[i - 1] - y[i + 1]) * t;
        }
        out.emplace_back(pos, h);
    }
    return out;
}

}  // namespace detail

/// Distance between the two dominant maxima. For mm-split spectra the
/// relevant pair is the one straddling zero detuning (the split EIT peak);
/// otherwise the two highest maxima. 0 for a single-peak spectrum.
inline double extract_splitting(const TransmissionSpectrum& s) {
    auto peaks = detail::local_maxima(s);
    const bool needs_pair = s.regime == Regime::rabi || s.regime == Regime::mm_split;
    if (peaks.size() < 2) {
        if (needs_pair) throw ShapeError("extract_splitting: expected two maxima", static_cast<int>(peaks.size()));
        return 0.0;
    }
    if (s.regime == Regime::mm_split) {
        double left = -INFINITY, right = INFINITY;
        for (const auto& pk : peaks) {
            if (pk.first < 0.0) left = std::max(left, pk.first);
            if (pk.first > 0.0) right = std::min(right, pk.first);
        }
        if (!std::isfinite(left) || !std::isfinite(right))
            throw ShapeError("extract_splitting: no maxima on both sides of zero detuning", static_cast<int>(peaks.size()));
        return right - left;
    }
    std::sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return std::abs(peaks[0].first - peaks[1].first);
}

/// Uniform detuning grid of `points` samples over [-half, half].
inline std::vector<double> detuning_grid(double half_width, int points) {
    if (!(half_width > 0.0) || points < 3) throw DomainError("detuning_grid: need half width > 0 and >= 3 points");
    std::vector<double> out(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) out[std::size_t(i)] = -half_width + 2.0 * half_width * i / (points - 1);
    return out;
}

inline std::string transmission_csv(const TransmissionSpectrum& s) {
    io::CsvWriter w({"detuning_hz", "transmission"});
    for (std::size_t i = 0; i < s.transmission.size(); ++i) w.row({s.detuning_hz[i], s.transmission[i]});
    return w.str();
}

/// Figures of merit with their conventions.
inline nlohmann::json hybrid_summary(const HybridParams& p) {
    p.validate();
    return {{"e_opt_v_per_m", p.e_opt()},
            {"e_mm_v_per_m", p.e_mm()},
            {"g_opt_hz", p.g_opt()},
            {"g_mm_hz", p.g_mm()},
            {"g_opt_collective_hz", collective_enhancement(p.g_opt(), p.atoms.n_atoms)},
            {"kappa_opt_hz", p.kappa_optical()},
            {"kappa_mm_hz", p.kappa_mm()},
            {"gamma_ryd_hz", p.gamma_ryd()},
            {"c_opt", coop_optical(p.optical.finesse, p.optical.w0, p.optical.lambda)},
            {"c_mm", coop_mm(p.g_mm(), p.gamma_ryd(), p.kappa_mm())},
            {"field_convention", field_convention},
            {"rate_convention", rate_convention}};
}

struct TableRow {
    std::string system;
    std::string v_over_lambda3;
    std::string f_ghz;
    std::string finesse;
};

/// Three significant digits with a compact exponent (3e7, not 3e+07).
inline std::string sci(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    std::string s = buf;
    const auto e = s.find('e');
    if (e == std::string::npos) return s;
    std::string exp = s.substr(e + 1);
    const bool neg = exp[0] == '-';
    if (exp[0] == '+' || exp[0] == '-') exp.erase(0, 1);
    exp.erase(0, std::min(exp.find_first_not_of('0'), exp.size() - 1));
    return s.substr(0, e) + "e" + (neg ? "-" : "") + exp;
}

/// Resonator comparison table; our row comes from the given cavity.
inline std::vector<TableRow> table1(const MmCavity& ours = {}) {
    return {
        {"2D superconducting resonators", "1e-06", "1.53", "1e6 - 3e7"},
        {"3D superconducting resonators for qubits", "0.1", "11", "7e8"},
        {"Our mm-wave cavity", sci(ours.v_over_lambda3), sci(ours.f0 / 1e9), sci(finesse_q_equivalence(ours.f0, ours.q))},
        {"Accelerator Cavity", "1", "1-10", "1e11"},
        {"MM-wave Fabry-Perot Cavity", "260", "51", "4.6e9"},
        {"Optical Fabry-Perot microcavity", "6000", "4.6e5", "1e5"},
        {"Microsphere cavity", "9000", "3e5", "1e6"},
    };
}

inline std::string table1_csv(const std::vector<TableRow>& rows) {
    io::CsvWriter w({"System", "V/lambda^3", "f GHz", "Finesse"});
    for (const auto& r : rows) w.row_strings({r.system, r.v_over_lambda3, r.f_ghz, r.finesse});
    return w.str();
}

}  // namespace mmcav
