#pragma once

// Command-line front end: commands modes, fit, mb, duffing, qed, sweep,
// table1 and render. Each run reads one JSON config, writes its artifacts to
// a staging directory and renames it into place together with a manifest.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmcav/cryo.hpp"
#include "mmcav/duffing.hpp"
#include "mmcav/errors.hpp"
#include "mmcav/geometry.hpp"
#include "mmcav/hybridqed.hpp"
#include "mmcav/io.hpp"
#include "mmcav/mode_io.hpp"
#include "mmcav/modesolver.hpp"
#include "mmcav/resonfit.hpp"
#include "mmcav/run.hpp"
#include "mmcav/slater.hpp"
#include "mmcav/svg.hpp"

namespace mmcav::app {

namespace fs = std::filesystem;
using json = nlohmann::json;
using run::Cfg;

inline constexpr std::array<const char*, 8> commands = {"modes", "fit", "mb", "duffing", "qed", "sweep", "table1", "render"};

enum ExitCode : int { ok = 0, internal = 1, usage = 2, physics = 3, partial = 4 };

struct Invocation {
    std::string command;
    std::string config_path;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<int> resolution;
    std::string preset;   // modes
    std::string trace;    // fit
    std::string sidecar;  // fit
};

struct RunResult {
    int exit_code = ok;
    fs::path out;
    json manifest;
};

struct Context {
    const Cfg& cfg;
    fs::path base_dir;  // relative paths in the config resolve against this
    std::uint64_t seed;
    int threads;
    run::StagedOutput& out;
    run::ManifestInfo& info;

    fs::path path(const std::string& p) const {
        const fs::path q(p);
        return q.is_absolute() ? q : base_dir / q;
    }
    void emit(const std::string& name, const std::string& text) const { out.write(name, text); }
    void emit_json(const std::string& name, const json& j) const { out.write(name, j.dump(2) + "\n"); }
    void note(const std::string& s) const { info.conventions.push_back(s); }
};

// ---------------------------------------------------------------------------
// Shared parameter parsers
// ---------------------------------------------------------------------------

/// Values given as [..], {start, stop, step} or {start, stop, points[, log]}.
inline std::vector<double> value_list(const json& v, const std::string& field) {
    if (v.is_array()) {
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) throw UsageError("must be a number", field + "[" + std::to_string(i) + "]");
            out.push_back(v[i].get<double>());
        }
        if (out.empty()) throw UsageError("must not be empty", field);
        return out;
    }
    if (v.is_number()) return {v.get<double>()};
    Cfg c(v, field);
    const double start = c.num_req("start"), stop = c.num_req("stop");
    std::vector<double> out;
    if (c.has("step")) {
        const double step = c.num_req("step");
        if (!(step > 0.0)) throw UsageError("must be positive", c.at("step"));
        if (stop < start) throw UsageError("must be >= start", c.at("stop"));
        const auto n = static_cast<long long>(std::floor((stop - start) / step + 1e-9)) + 1;
        if (n > 10000000) throw UsageError("range has too many points", field);
        for (long long i = 0; i < n; ++i) out.push_back(start + double(i) * step);
    } else {
        const long long n = c.integer("points", 0, 1);
        if (n == 0) throw UsageError("needs either 'step' or 'points'", field);
        const bool log = c.flag("log", false);
        if (log && !(start > 0.0 && stop > 0.0)) throw UsageError("log range needs positive bounds", field);
        for (long long i = 0; i < n; ++i) {
            const double t = n == 1 ? 0.0 : double(i) / double(n - 1);
            out.push_back(log ? std::exp(std::log(start) + t * (std::log(stop) - std::log(start)))
                              : start + t * (stop - start));
        }
    }
    c.finish();
    return out;
}

struct PiezoSpec {
    double sensitivity = 0.1e6;  // Hz/V
    double v_max = 180.0;        // V
    double f0 = 98.2e9;          // Hz
};

inline PiezoSpec parse_piezo(const Cfg& c) {
    PiezoSpec s;
    s.sensitivity = c.num("sensitivity_hz_per_v", s.sensitivity);
    s.v_max = c.num("v_max_v", s.v_max);
    s.f0 = c.num("f0_hz", s.f0);
    return s;
}

struct MBModel {
    MBParams p;
    double f = 98.2e9;
    double t_star = 2.3;
};

/// Model keys: f_hz, tc_k, gap_ratio, geometry_factor_ohm, lambda_l0_m,
/// kinetic_fraction, q_res and either a_prefactor or t_star_k.
inline MBModel parse_mb_model(const Cfg& c) {
    MBModel m;
    m.f = c.num("f_hz", m.f);
    m.p.tc = c.num("tc_k", m.p.tc);
    m.p.alpha = c.num("gap_ratio", m.p.alpha);
    m.p.geometry_factor = c.num("geometry_factor_ohm", m.p.geometry_factor);
    m.p.lambda_l0 = c.num("lambda_l0_m", m.p.lambda_l0);
    m.p.gamma = c.num("kinetic_fraction", m.p.gamma);
    m.p.q_res = c.num("q_res", m.p.q_res);
    const auto a = c.opt_num("a_prefactor");
    m.t_star = c.num("t_star_k", m.t_star);
    if (a && c.raw().contains("t_star_k")) throw UsageError("give either a_prefactor or t_star_k", c.at("a_prefactor"));
    m.p.a_prefactor = a ? *a : prefactor_for_crossover(m.p, m.f, m.t_star);
    m.p.validate();
    return m;
}

struct DuffingSpec {
    DuffingParams p;
    double power_dbm = -80.0;
};

/// Keys: f_lin_hz, kappa_tot_hz, kappa_c_hz, beta_hz_per_photon, power_dbm.
inline DuffingSpec parse_duffing(const Cfg& c) {
    DuffingSpec s;
    s.p.f_lin = c.num("f_lin_hz", s.p.f_lin);
    s.p.kappa_tot = c.num("kappa_tot_hz", s.p.f_lin / 3e7);
    s.p.kappa_c = c.num("kappa_c_hz", 0.5 * s.p.kappa_tot);
    s.p.beta = c.num("beta_hz_per_photon", s.p.beta);
    s.power_dbm = c.num("power_dbm", s.power_dbm);
    s.p.drive_power = dbm_to_watts(s.power_dbm);
    s.p.validate();
    return s;
}

/// Nested blocks optical{...}, mm{...}, atoms{...} plus kappa_opt_hz.
inline HybridParams parse_hybrid(const Cfg& c) {
    HybridParams p;
    {
        const Cfg o = c.obj("optical");
        p.optical.finesse = o.num("finesse", p.optical.finesse);
        p.optical.w0 = o.num("waist_m", p.optical.w0);
        p.optical.lambda = o.num("wavelength_m", p.optical.lambda);
        p.optical.length = o.num("length_m", p.optical.length);
        p.optical.d = o.num("dipole_cm", p.optical.d);
        o.finish();
    }
    {
        const Cfg m = c.obj("mm");
        p.mm.f0 = m.num("f0_hz", p.mm.f0);
        p.mm.q = m.num("q", p.mm.q);
        p.mm.v_over_lambda3 = m.num("v_over_lambda3", p.mm.v_over_lambda3);
        p.mm.d = m.num("dipole_cm", p.mm.d);
        m.finish();
    }
    {
        const Cfg a = c.obj("atoms");
        p.atoms.n_atoms = a.num("n_atoms", p.atoms.n_atoms);
        p.atoms.gamma_5p = a.num("gamma_5p_hz", p.atoms.gamma_5p);
        p.atoms.gamma_ryd = a.num("gamma_ryd_hz", p.atoms.gamma_ryd);
        if (a.has("gamma_35p_hz")) {
            p.atoms.gamma_35p = a.num_req("gamma_35p_hz");
            if (p.atoms.gamma_35p < 0.0) throw UsageError("must be non-negative", a.at("gamma_35p_hz"));
        }
        p.atoms.omega_b = a.num("omega_b_hz", p.atoms.omega_b);
        p.atoms.n_mm = a.num("n_mm", p.atoms.n_mm);
        a.finish();
    }
    p.kappa_opt = c.num("kappa_opt_hz", p.kappa_opt);
    p.validate();
    return p;
}

/// Half-width that shows the vacuum Rabi doublet with margin.
inline double default_qed_span(const HybridParams& p) {
    return 2.5 * collective_enhancement(p.g_opt(), std::max(p.atoms.n_atoms, 1.0)) + 3.0 * p.atoms.gamma_5p +
           3.0 * p.kappa_optical();
}

struct SyntheticSpec {
    ResonanceFit truth;
    double span_linewidths = 10.0;
    int points = 401;
    double noise_sigma = 0.01;
    std::optional<double> power_dbm;
};

inline SyntheticSpec parse_synthetic(const Cfg& c) {
    SyntheticSpec s;
    Environment env;
    env.a = c.num("a", 1.0);
    env.phi = c.num("phi_rad", 0.0);
    env.tau = c.num("tau_s", 0.0);
    s.truth = ResonanceFit::make(c.num("f0_hz", 98.2e9), c.num("qi", 3e7), c.num("qc", 1e7), env);
    s.span_linewidths = c.num("span_linewidths", s.span_linewidths);
    s.points = static_cast<int>(c.integer("points", s.points, 16));
    s.noise_sigma = c.num("noise_sigma", s.noise_sigma);
    if (!(s.span_linewidths > 0.0)) throw UsageError("must be positive", c.at("span_linewidths"));
    if (!(s.noise_sigma >= 0.0)) throw UsageError("must be non-negative", c.at("noise_sigma"));
    s.power_dbm = c.opt_num("power_dbm");
    return s;
}

inline ReflectionTrace synthesize(const SyntheticSpec& s, std::uint64_t seed) {
    auto t = synth_trace(s.truth, s.span_linewidths * s.truth.f0 / s.truth.qtot, s.points, s.noise_sigma, seed);
    if (s.power_dbm) t.power_in_w = dbm_to_watts(*s.power_dbm);
    return t;
}

struct ModesSpec {
    std::optional<CavityGeometry> geometry;
    std::string label;
    int resolution = 16;
    int n_modes = 1;
    double target_hz = 0.0;  // 0 selects the lowest modes
};

inline ModesSpec parse_modes(const Cfg& c) {
    ModesSpec s;
    PresetOptions po;
    po.diameter = c.num("diameter_m", po.diameter);
    po.half_length_diameters = c.num("half_length_diameters", po.half_length_diameters);
    if (c.has("geometry")) {
        if (c.raw().contains("preset")) throw UsageError("give either preset or geometry", c.at("geometry"));
        try {
            s.geometry = geometry_from_json(c.raw().at("geometry"));
        } catch (const UsageError&) {
            throw;
        } catch (const std::exception& e) {
            throw UsageError(e.what(), c.at("geometry"));
        }
        s.label = s.geometry->name();
    } else {
        s.label = c.str("preset", "cross3_hybrid");
        try {
            s.geometry = preset(std::string_view(s.label), po);
        } catch (const LookupError& e) {
            throw UsageError(e.what(), c.at("preset"));
        }
    }
    s.resolution = static_cast<int>(c.integer("resolution", s.resolution, 8));
    s.n_modes = static_cast<int>(c.integer("n_modes", s.n_modes, 1));
    s.target_hz = c.num("target_hz", 0.0);
    if (s.target_hz < 0.0) throw UsageError("must be non-negative", c.at("target_hz"));
    return s;
}

inline std::vector<EigenMode> solve_spec(const ModesSpec& s, int resolution) {
    auto dom = std::make_shared<const DiscretizedDomain>(discretize(*s.geometry, resolution));
    return solve_modes(dom, s.target_hz > 0.0 ? s.target_hz : 1.0, s.n_modes);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void cmd_modes(const Context& ctx) {
    const ModesSpec s = parse_modes(ctx.cfg);
    const bool rich = ctx.cfg.flag("richardson", false);
    const bool dump = ctx.cfg.flag("field_dump", false);
    ctx.cfg.finish();

    auto dom = std::make_shared<const DiscretizedDomain>(discretize(*s.geometry, s.resolution));
    const auto modes = solve_modes(dom, s.target_hz > 0.0 ? s.target_hz : 1.0, s.n_modes);
    json doc = {{"geometry", s.label},
                {"resolution", s.resolution},
                {"h_m", dom->h()},
                {"dofs", dom->dofs()},
                {"cutoff_hz", cutoff_frequency(s.geometry->min_diameter())},
                {"modes", json::array()}};
    if (s.geometry->target_frequency_hz() > 0.0) doc["design_target_hz"] = s.geometry->target_frequency_hz();
    for (const auto& m : modes) doc["modes"].push_back(mode_summary(m));
    if (rich) {
        const int coarse = std::max(8, (2 * s.resolution) / 3);
        if (coarse >= s.resolution) throw UsageError("richardson needs resolution >= 12", ctx.cfg.at("resolution"));
        const auto cm = solve_spec(s, coarse);
        json r = json::array();
        for (std::size_t i = 0; i < std::min(cm.size(), modes.size()); ++i)
            r.push_back(richardson(cm[i].frequency_hz, coarse, modes[i].frequency_hz, s.resolution, 2.0));
        doc["richardson"] = {{"coarse_resolution", coarse}, {"order", 2.0}, {"f_hz", r}};
    }
    if (dump)
        for (std::size_t i = 0; i < modes.size(); ++i) {
            const std::string stem = "mode_" + std::to_string(i);
            write_field_dump(modes[i], ctx.out.dir() / (stem + ".f32"), ctx.out.dir() / (stem + ".json"));
        }
    ctx.emit_json("modes.json", doc);
    ctx.note(std::string("field normalization: ") + EigenMode::normalization);
    ctx.note("mode volume: V = sum eps|E|^2 dV / max eps|E|^2, peak taken away from the walls");
    ctx.info.summary = {{"f_hz", modes.front().frequency_hz}, {"v_over_lambda3", modes.front().mode_volume_ratio}};
}

inline ResonanceFit fit_and_report(const Context& ctx, const ReflectionTrace& trace) {
    const auto r = fit_reflection(trace);
    ctx.emit_json("fit.json", fit_json(r));
    const auto lw = linewidth_and_lifetime(r.f0, r.qtot);
    json rep = {{"kappa_hz", lw.kappa_hz},
                {"lifetime_s", lw.lifetime_s},
                {"noise_rms", r.diagnostics.noise_rms},
                {"condition", r.diagnostics.condition},
                {"ill_conditioned", r.diagnostics.ill_conditioned},
                {"evaluations", r.diagnostics.evaluations},
                {"std_errors",
                 {{"f0_hz", r.diagnostics.std_errors[0]},
                  {"qi", r.diagnostics.std_errors[1]},
                  {"qc", r.diagnostics.std_errors[2]},
                  {"a", r.diagnostics.std_errors[3]},
                  {"phase_rad", r.diagnostics.std_errors[4]},
                  {"tau_s", r.diagnostics.std_errors[5]}}}};
    if (trace.power_in_w) {
        const auto n = photon_number(r, *trace.power_in_w);
        rep["photon_number"] = {{"n", n.n}, {"power_w", n.power_in_w}, {"convention", PhotonNumberEstimate::convention}};
    }
    if (trace.temperature_k) rep["temperature_k"] = *trace.temperature_k;
    ctx.emit_json("fit_report.json", rep);
    ctx.note("s11 model: a e^{i(phi - 2 pi f tau)} [1 - (2 Qtot/Qc) / (1 + 2i Qtot (f - f0)/f0)]");
    ctx.note(std::string("photon number: ") + PhotonNumberEstimate::convention);
    ctx.info.summary = {{"f0_hz", r.f0}, {"qi", r.qi}, {"qc", r.qc}};
    return r;
}

inline void cmd_fit(const Context& ctx) {
    const auto& c = ctx.cfg;
    ReflectionTrace trace;
    if (c.has("trace")) {
        const std::string sidecar = c.str("sidecar", "");
        trace = read_trace(ctx.path(c.str("trace", "")), sidecar.empty() ? fs::path() : ctx.path(sidecar));
        if (const auto p = c.opt_num("power_dbm")) trace.power_in_w = dbm_to_watts(*p);
        if (c.has("synthetic")) throw UsageError("give either trace or synthetic", c.at("synthetic"));
    } else {
        if (c.has("sidecar")) throw UsageError("sidecar needs a trace", c.at("sidecar"));
        const Cfg sc = c.obj("synthetic");
        auto spec = parse_synthetic(sc);
        sc.finish();
        if (const auto p = c.opt_num("power_dbm")) spec.power_dbm = p;
        trace = synthesize(spec, ctx.seed);
        ctx.emit("trace.csv", trace_csv(trace));
    }
    c.finish();
    fit_and_report(ctx, trace);
}

inline void cmd_mb(const Context& ctx) {
    const auto& c = ctx.cfg;
    const MBModel model = parse_mb_model(c);
    std::vector<ThermalPoint> series;
    if (c.has("series")) {
        if (c.has("synthetic")) throw UsageError("give either series or synthetic", c.at("synthetic"));
        series = read_thermal_series(ctx.path(c.str("series", "")));
    } else {
        const Cfg sc = c.obj("synthetic");
        const double noise = sc.num("noise", 0.05);
        const auto temps = sc.has("temperatures_k") ? value_list(sc.raw().at("temperatures_k"), sc.at("temperatures_k"))
                                                    : value_list(json{{"start", 1.0}, {"stop", 4.5}, {"points", 20}}, "");
        sc.finish();
        series = generate_thermal_series(model.p, model.f, temps, noise, ctx.seed);
    }
    const int model_points = static_cast<int>(c.integer("model_points", 200, 2));
    c.finish();

    const ThermalFit fit = fit_thermal_series(series, model.f, model.p);
    ctx.emit("thermal_series.csv", thermal_series_csv(series));
    ctx.emit_json("mb_fit.json", thermal_fit_json(fit));
    double t0 = series.front().t, t1 = t0;
    for (const auto& p : series) t0 = std::min(t0, p.t), t1 = std::max(t1, p.t);
    io::CsvWriter w({"temperature_k", "qi", "df_over_f"});
    for (int i = 0; i < model_points; ++i) {
        const double t = t0 + (t1 - t0) * i / (model_points - 1);
        w.row({t, qi_of_temperature(fit.params, model.f, t), freq_shift_of_temperature(fit.params, model.f, t)});
    }
    ctx.emit("mb_model.csv", w.str());
    ctx.note("1/Qi = A f^2/(G T) exp(-alpha Tc/T) + 1/Q_res (low-temperature BCS limit)");
    ctx.note("delta f/f = -(gamma/2) [lambda_L(T)/lambda_L(0) - 1], two-fluid lambda_L");
    ctx.info.summary = {{"q_res", fit.params.q_res},
                        {"t_star_k", std::isnan(fit.t_star) ? json(nullptr) : json(fit.t_star)}};
}

inline void cmd_duffing(const Context& ctx) {
    const auto& c = ctx.cfg;
    const DuffingSpec s = parse_duffing(c);
    const int points = static_cast<int>(c.integer("points", 2001, 3));
    const double k = s.p.kappa_tot;
    // Upper bound on the pull: beta times the linear on-resonance occupation.
    const double pull = s.p.beta * s.p.drive() / (0.25 * k * k);
    const double f_lo = c.num("f_start_hz", s.p.f_lin - 5.0 * k + std::min(0.0, pull));
    const double f_hi = c.num("f_stop_hz", s.p.f_lin + 5.0 * k + std::max(0.0, pull));
    if (!(f_hi > f_lo)) throw UsageError("must exceed f_start_hz", c.at("f_stop_hz"));

    MetastableStates ms;
    const Cfg tc = c.obj("two_state");
    ms.f1 = tc.num("f1_hz", ms.f1);
    ms.q1 = tc.num("q1", ms.q1);
    ms.f2 = tc.num("f2_hz", ms.f2);
    ms.q2 = tc.num("q2", ms.q2);
    ms.p_sat_w = dbm_to_watts(tc.num("p_sat_dbm", watts_to_dbm(ms.p_sat_w)));
    const auto powers = tc.nums("powers_dbm", {-110.0, -90.0, -85.0, -82.0, -80.0});
    tc.finish();
    c.finish();
    ms.validate();

    std::vector<double> f(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) f[std::size_t(i)] = f_lo + (f_hi - f_lo) * i / (points - 1);
    ctx.emit("duffing_spectrum.csv", spectrum_csv(duffing_spectrum(s.p, f)));
    const auto up = sweep_response(s.p, f, SweepDirection::up);
    const auto down = sweep_response(s.p, f, SweepDirection::down);
    io::CsvWriter sw({"freq_hz", "n_up", "n_down"});
    for (std::size_t i = 0; i < f.size(); ++i) sw.row({f[i], up[i], down[i]});
    ctx.emit("duffing_sweep.csv", sw.str());

    json doc = {{"power_dbm", s.power_dbm}, {"hysteresis_area", hysteresis_area(s.p, f)}};
    if (s.p.beta != 0.0 && s.p.kappa_c > 0.0) {
        const auto b = bifurcation_power(s.p);
        doc["bifurcation"] = {{"power_w", b.power_w},
                              {"power_dbm", watts_to_dbm(b.power_w)},
                              {"n_crit", b.n_crit},
                              {"detuning_hz", b.detuning_hz}};
        doc["bistable"] = s.p.drive_power > b.power_w;
    } else {
        doc["bifurcation"] = nullptr;
        doc["bistable"] = false;
    }
    ctx.emit_json("duffing.json", doc);

    const double k1 = ms.f1 / ms.q1, k2 = ms.f2 / ms.q2;
    std::vector<double> f2(static_cast<std::size_t>(points));
    const double a = std::min(ms.f1 - 5.0 * k1, ms.f2 - 5.0 * k2), b = std::max(ms.f1 + 5.0 * k1, ms.f2 + 5.0 * k2);
    for (int i = 0; i < points; ++i) f2[std::size_t(i)] = a + (b - a) * i / (points - 1);
    io::CsvWriter tw({"power_dbm", "freq_hz", "response"});
    for (double pd : powers) {
        const auto sp = two_state_lineshape(ms, dbm_to_watts(pd), f2);
        for (std::size_t i = 0; i < f2.size(); ++i) tw.row({pd, f2[i], sp.response[i]});
    }
    ctx.emit("two_state.csv", tw.str());
    ctx.note("Kerr cubic n[(delta - beta n)^2 + kappa^2/4] = kappa_c P/(h f), rates in Hz");
    ctx.note("two-state lineshape: empirical interpolation between measured metastable states");
    ctx.info.summary = doc;
}

inline void cmd_qed(const Context& ctx) {
    const auto& c = ctx.cfg;
    const HybridParams p = parse_hybrid(c);
    const double span = c.num("span_hz", default_qed_span(p));
    const int points = static_cast<int>(c.integer("points", 20001, 3));
    const double cascade_n = c.num("cascade_n_mm", p.atoms.n_mm > 0.0 ? p.atoms.n_mm : 10.0);
    c.finish();
    if (!(span > 0.0)) throw UsageError("must be positive", c.at("span_hz"));
    if (!(cascade_n > 0.0)) throw UsageError("must be positive", c.at("cascade_n_mm"));

    const auto grid = detuning_grid(span, points);
    json spectra = json::array();
    const std::pair<Regime, std::function<void(HybridParams&)>> stages[] = {
        {Regime::bare, [](HybridParams& q) { q.atoms.n_atoms = 0.0; }},
        {Regime::rabi, [](HybridParams& q) { q.atoms.omega_b = 0.0, q.atoms.n_mm = 0.0; }},
        {Regime::eit, [](HybridParams& q) { q.atoms.n_mm = 0.0; }},
        {Regime::mm_split, [&](HybridParams& q) { q.atoms.n_mm = cascade_n; }},
    };
    for (const auto& [regime, tweak] : stages) {
        HybridParams q = p;
        tweak(q);
        if (regime_of(q) != regime) continue;  // e.g. omega_b = 0 leaves no EIT stage
        const auto s = eit_transmission(q, grid);
        const std::string file = std::string("eit_") + regime_name(regime) + ".csv";
        ctx.emit(file, transmission_csv(s));
        json e = {{"regime", regime_name(regime)}, {"file", file}};
        try {
            e["splitting_hz"] = extract_splitting(s);
        } catch (const ShapeError& err) {
            e["splitting_hz"] = nullptr;
            e["note"] = err.what();
        }
        spectra.push_back(e);
    }
    json doc = hybrid_summary(p);
    doc["d_mm_cm"] = p.d_mm();
    doc["gamma_35p_hz"] = p.gamma_35p();
    doc["rabi_splitting_expected_hz"] = 2.0 * collective_enhancement(p.g_opt(), p.atoms.n_atoms);
    doc["spectra"] = spectra;
    ctx.emit_json("qed.json", doc);
    ctx.note(field_convention);
    ctx.note(rate_convention);
    ctx.info.summary = {{"c_opt", doc["c_opt"]}, {"c_mm", doc["c_mm"]}};
}

inline void cmd_table1(const Context& ctx) {
    const auto& c = ctx.cfg;
    MmCavity m;
    m.f0 = c.num("f0_hz", m.f0);
    m.q = c.num("q", m.q);
    m.v_over_lambda3 = c.num("v_over_lambda3", m.v_over_lambda3);
    c.finish();
    if (!(m.f0 > 0.0) || !(m.q > 0.0) || !(m.v_over_lambda3 > 0.0))
        throw UsageError("f0_hz, q and v_over_lambda3 must be positive");
    ctx.emit("table1.csv", table1_csv(table1(m)));
    ctx.note("finesse of a resonator = Q (free spectral range taken as f0)");
}

// ---------------------------------------------------------------------------
// Render
// ---------------------------------------------------------------------------

inline void cmd_render(const Context& ctx) {
    const auto& c = ctx.cfg;
    svg::Figure fig;
    fig.title = c.str("title", "");
    fig.width = static_cast<int>(c.integer("width", fig.width, 200));
    fig.panel_height = static_cast<int>(c.integer("panel_height", fig.panel_height, 120));
    const std::string default_csv = c.str("csv", "");
    const std::string output = c.str("output", "plot.svg");
    if (output.empty() || output.find('/') != std::string::npos || output[0] == '.')
        throw UsageError("must be a plain file name", c.at("output"));
    const auto panels = c.objs("panels");
    c.finish();
    if (panels.empty()) throw PlotSpecError("panels: at least one panel is required");

    std::map<std::string, io::CsvTable> tables;
    for (const auto& pc : panels) {
        svg::Panel p;
        const std::string csv = pc.str("csv", default_csv);
        if (csv.empty()) throw PlotSpecError(pc.at("csv") + ": no CSV given for this panel");
        auto it = tables.find(csv);
        if (it == tables.end()) it = tables.emplace(csv, io::read_csv(ctx.path(csv))).first;
        const io::CsvTable& t = it->second;
        auto col = [&](const std::string& name, const std::string& field) {
            for (std::size_t i = 0; i < t.header.size(); ++i)
                if (t.header[i] == name) return i;
            throw PlotSpecError(field + ": column '" + name + "' not found in " + csv);
        };
        auto values = [&](std::size_t ci, const std::string& field) {
            std::vector<double> out;
            for (std::size_t r = 0; r < t.rows.size(); ++r) {
                const std::string& cell = t.rows[r][ci];
                char* end = nullptr;
                const double v = std::strtod(cell.c_str(), &end);
                if (cell.empty() || *end != '\0')
                    throw PlotSpecError(field + ": '" + cell + "' in row " + std::to_string(r + 2) + " is not a number");
                out.push_back(v);
            }
            return out;
        };
        const std::string x = pc.str("x", "");
        if (x.empty()) throw PlotSpecError(pc.at("x") + ": x column is required");
        const auto ys = pc.strs("y"), y2s = pc.strs("y2");
        if (ys.empty() && y2s.empty()) throw PlotSpecError(pc.at("y") + ": at least one y column is required");
        const std::string group = pc.str("group_by", "");
        p.title = pc.str("title", "");
        p.xlabel = pc.str("xlabel", x);
        p.ylabel = pc.str("ylabel", ys.empty() ? "" : ys.front());
        p.y2label = pc.str("y2label", y2s.empty() ? "" : y2s.front());
        p.logx = pc.flag("logx", false);
        p.logy = pc.flag("logy", false);
        p.logy2 = pc.flag("logy2", false);
        const std::string style = pc.str("style", "line");
        if (style != "line" && style != "scatter") throw PlotSpecError(pc.at("style") + ": must be line or scatter");
        p.style = style == "line" ? svg::Style::line : svg::Style::scatter;
        pc.finish();

        const auto xv = values(col(x, pc.at("x")), pc.at("x"));
        std::vector<std::string> keys;  // group values in first-seen order
        std::vector<std::size_t> row_group(t.rows.size(), 0);
        if (!group.empty()) {
            const std::size_t gc = col(group, pc.at("group_by"));
            for (std::size_t r = 0; r < t.rows.size(); ++r) {
                const auto k = std::find(keys.begin(), keys.end(), t.rows[r][gc]);
                row_group[r] = std::size_t(k - keys.begin());
                if (k == keys.end()) keys.push_back(t.rows[r][gc]);
            }
        } else {
            keys.push_back("");
        }
        auto add = [&](const std::string& name, bool right, const std::string& field) {
            const auto yv = values(col(name, field), field);
            for (std::size_t g = 0; g < keys.size(); ++g) {
                svg::Series s;
                s.right_axis = right;
                s.label = group.empty() ? name : name + " (" + group + "=" + keys[g] + ")";
                for (std::size_t r = 0; r < yv.size(); ++r)
                    if (row_group[r] == g) s.x.push_back(xv[r]), s.y.push_back(yv[r]);
                p.series.push_back(std::move(s));
            }
        };
        for (const auto& y : ys) add(y, false, pc.at("y"));
        for (const auto& y : y2s) add(y, true, pc.at("y2"));
        fig.panels.push_back(std::move(p));
    }
    ctx.emit(output, svg::render(fig));
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

using PointEval = std::function<std::vector<double>()>;

struct Pipeline {
    std::vector<std::string> outputs;
    // Parses one point's parameters (usage errors surface here) and returns its evaluator.
    std::function<PointEval(const Cfg&, std::uint64_t seed)> prepare;
};

inline std::map<std::string, Pipeline> pipelines() {
    std::map<std::string, Pipeline> m;
    m["piezo"] = {{"delta_f_hz", "f_hz"}, [](const Cfg& c, std::uint64_t) -> PointEval {
                      const auto s = parse_piezo(c);
                      const double v = c.num_req("voltage_v");
                      return [s, v] {
                          const double df = piezo_tuning_curve(s.sensitivity, s.v_max, {v}).front();
                          return std::vector<double>{df, s.f0 - df};
                      };
                  }};
    m["mb"] = {{"qi", "df_over_f"}, [](const Cfg& c, std::uint64_t seed) -> PointEval {
                   const auto model = parse_mb_model(c);
                   const double t = c.num_req("temperature_k"), noise = c.num("noise", 0.0);
                   if (noise < 0.0) throw UsageError("must be non-negative", c.at("noise"));
                   return [model, t, noise, seed] {
                       const auto pt = generate_thermal_series(model.p, model.f, {t}, noise, seed).front();
                       return std::vector<double>{pt.qi, pt.df_over_f};
                   };
               }};
    m["fit"] = {{"f0_hz_fit", "qi_fit", "qc_fit", "qtot_fit", "photon_number"},
                [](const Cfg& c, std::uint64_t seed) -> PointEval {
                    const auto s = parse_synthetic(c);
                    return [s, seed] {
                        const auto r = fit_reflection(synthesize(s, seed));
                        const double n = s.power_dbm ? photon_number(r, dbm_to_watts(*s.power_dbm)).n : NAN;
                        return std::vector<double>{r.f0, r.qi, r.qc, r.qtot, n};
                    };
                }};
    m["duffing"] = {{"n_peak", "peak_shift_hz", "bistable", "hysteresis_area"},
                    [](const Cfg& c, std::uint64_t) -> PointEval {
                        const auto s = parse_duffing(c);
                        const int points = static_cast<int>(c.integer("points", 2001, 3));
                        return [s, points] {
                            const double k = s.p.kappa_tot, pull = s.p.beta * s.p.drive() / (0.25 * k * k);
                            const double lo = s.p.f_lin - 5.0 * k + std::min(0.0, pull);
                            const double hi = s.p.f_lin + 5.0 * k + std::max(0.0, pull);
                            std::vector<double> f(static_cast<std::size_t>(points));
                            for (int i = 0; i < points; ++i) f[std::size_t(i)] = lo + (hi - lo) * i / (points - 1);
                            const auto up = sweep_response(s.p, f, SweepDirection::up);
                            const auto imax = std::size_t(std::max_element(up.begin(), up.end()) - up.begin());
                            bool bistable = false;
                            for (double fr : f) bistable = bistable || steady_state_response(s.p, fr).roots.size() == 3;
                            return std::vector<double>{up[imax], f[imax] - s.p.f_lin, bistable ? 1.0 : 0.0,
                                                       hysteresis_area(s.p, f)};
                        };
                    }};
    m["qed"] = {{"splitting_hz", "g_mm_hz", "c_mm"}, [](const Cfg& c, std::uint64_t) -> PointEval {
                    const auto p = parse_hybrid(c);
                    const double span = c.num("span_hz", default_qed_span(p));
                    const int points = static_cast<int>(c.integer("points", 20001, 3));
                    return [p, span, points] {
                        const auto s = eit_transmission(p, detuning_grid(span, points));
                        return std::vector<double>{extract_splitting(s), p.g_mm(),
                                                   coop_mm(p.g_mm(), p.gamma_ryd(), p.kappa_mm())};
                    };
                }};
    m["modes"] = {{"f_hz", "v_over_lambda3"}, [](const Cfg& c, std::uint64_t) -> PointEval {
                      const auto s = parse_modes(c);
                      return [s] {
                          const auto modes = solve_spec(s, s.resolution);
                          return std::vector<double>{modes.front().frequency_hz, modes.front().mode_volume_ratio};
                      };
                  }};
    return m;
}

struct GridAxis {
    std::string name;  // dotted path into the base parameters
    std::vector<double> values;
};

inline std::vector<GridAxis> parse_grid(const Cfg& c) {
    if (!c.has("grid")) throw UsageError("required field is missing", c.at("grid"));
    const json& g = c.raw().at("grid");
    std::vector<GridAxis> axes;
    if (g.is_array()) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::string f = c.at("grid") + "[" + std::to_string(i) + "]";
            if (!g[i].is_object()) throw UsageError("must be an object", f);
            json rest = g[i];
            if (!rest.contains("axis") || !rest["axis"].is_string()) throw UsageError("needs a string 'axis'", f);
            GridAxis a{rest["axis"].get<std::string>(), {}};
            rest.erase("axis");
            a.values = rest.contains("values") ? (rest.size() == 1 ? value_list(rest["values"], f + ".values")
                                                                   : throw UsageError("values excludes range keys", f))
                                               : value_list(rest, f);
            axes.push_back(std::move(a));
        }
    } else if (g.is_object()) {
        for (const auto& [k, v] : g.items()) axes.push_back({k, value_list(v, c.at("grid") + "." + k)});
    } else {
        throw UsageError("must be an array or object", c.at("grid"));
    }
    if (axes.empty()) throw UsageError("grid must have at least one axis", c.at("grid"));
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i].name.empty()) throw UsageError("axis name must not be empty", c.at("grid"));
        for (std::size_t j = 0; j < i; ++j)
            if (axes[j].name == axes[i].name) throw UsageError("duplicate axis '" + axes[i].name + "'", c.at("grid"));
    }
    return axes;
}

inline void set_dotted(json& j, const std::string& path, double v) {
    json* cur = &j;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            // Integral values stay integers so count-like fields accept them.
            if (std::nearbyint(v) == v && std::abs(v) < 9e15) (*cur)[key] = static_cast<long long>(v);
            else (*cur)[key] = v;
            return;
        }
        json& next = (*cur)[key];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw UsageError("axis '" + path + "' crosses a non-object field", "grid");
        cur = &next;
        start = dot + 1;
    }
}

inline int cmd_sweep(const Context& ctx) {
    const auto& c = ctx.cfg;
    const std::string name = c.str("pipeline", "");
    const auto all = pipelines();
    const auto pit = all.find(name);
    if (pit == all.end()) {
        std::string known;
        for (const auto& [k, v] : all) known += (known.empty() ? "" : ", ") + k;
        throw UsageError(name.empty() ? "required field is missing (one of " + known + ")"
                                      : "unknown pipeline '" + name + "' (one of " + known + ")",
                         c.at("pipeline"));
    }
    const Pipeline& pipe = pit->second;
    json base = c.has("base") ? c.raw().at("base") : json::object();
    if (!base.is_object()) throw UsageError("must be an object", c.at("base"));
    const auto axes = parse_grid(c);
    c.finish();

    std::size_t total = 1;
    for (const auto& a : axes) {
        total *= a.values.size();
        if (total > 1000000) throw UsageError("grid has more than 1e6 points", c.at("grid"));
    }
    std::vector<std::vector<double>> coords(total);
    std::vector<PointEval> evals(total);
    for (std::size_t i = 0; i < total; ++i) {
        json pt = base;
        std::size_t rem = i;
        coords[i].resize(axes.size());
        for (std::size_t a = axes.size(); a-- > 0;) {  // first axis varies slowest
            const std::size_t n = axes[a].values.size();
            coords[i][a] = axes[a].values[rem % n];
            rem /= n;
        }
        for (std::size_t a = 0; a < axes.size(); ++a) set_dotted(pt, axes[a].name, coords[i][a]);
        const Cfg pc(pt, "base");
        evals[i] = pipe.prepare(pc, ctx.seed + i);
        pc.finish();
    }

    std::vector<std::vector<double>> results(total);
    std::vector<std::string> errors(total);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next++;
            if (i >= total) return;
            try {
                results[i] = evals[i]();
            } catch (const std::exception& e) {
                errors[i] = e.what();
                if (errors[i].empty()) errors[i] = "unknown error";
            }
        }
    };
    const int nthreads = std::max(1, std::min<int>(ctx.threads, static_cast<int>(total)));
    std::vector<std::thread> pool;
    for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<std::string> header = {"index"};
    for (const auto& a : axes) header.push_back(a.name);
    for (const auto& o : pipe.outputs) header.push_back(o);
    io::CsvWriter w(header);
    std::size_t failed = 0;
    for (std::size_t i = 0; i < total; ++i) {
        if (!errors[i].empty()) {
            ++failed;
            json pt = json::object();
            for (std::size_t a = 0; a < axes.size(); ++a) pt[axes[a].name] = coords[i][a];
            ctx.info.failures.push_back({{"index", i}, {"point", pt}, {"error", errors[i]}});
            continue;
        }
        std::vector<double> row = {double(i)};
        row.insert(row.end(), coords[i].begin(), coords[i].end());
        row.insert(row.end(), results[i].begin(), results[i].end());
        w.row(row);
    }
    ctx.emit("sweep.csv", w.str());
    ctx.note("grid order: first axis varies slowest; point i uses seed + i");
    ctx.info.summary = {{"pipeline", name}, {"points", total}, {"failed", failed}};
    return failed ? partial : ok;
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

inline fs::path default_output(const std::string& command) {
    const char* root = std::getenv(run::output_root_env);
    return (root && *root ? fs::path(root) : fs::path("mmcav-out")) / command;
}

inline json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    const std::string text = io::read_text(path);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw UsageError("config file is empty", "--config");
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw UsageError(std::string("invalid JSON: ") + e.what(), "--config");
    }
    if (!j.is_object()) throw UsageError("config must be a JSON object", "--config");
    return j;
}

/// Executes one command; throws mmcav errors for the caller to map onto exit codes.
inline RunResult run(const Invocation& inv) {
    if (std::find_if(commands.begin(), commands.end(), [&](const char* c) { return inv.command == c; }) == commands.end())
        throw UsageError("unknown command '" + inv.command + "'");
    const std::string started = run::utc_now();
    json doc = load_config(inv.config_path);
    const fs::path base_dir = inv.config_path.empty() ? fs::current_path() : fs::absolute(inv.config_path).parent_path();

    // Flags override the matching config fields; flag paths are taken relative to the working directory.
    auto only = [&](bool given, const char* flag, const char* cmd) {
        if (given && inv.command != cmd) throw UsageError(std::string("only valid for '") + cmd + "'", flag);
    };
    only(!inv.preset.empty(), "--preset", "modes");
    only(!inv.trace.empty(), "--trace", "fit");
    only(!inv.sidecar.empty(), "--sidecar", "fit");
    if (!inv.preset.empty()) {
        doc.erase("geometry");
        doc["preset"] = inv.preset;
    }
    if (!inv.trace.empty()) doc["trace"] = fs::absolute(inv.trace).string();
    if (!inv.sidecar.empty()) doc["sidecar"] = fs::absolute(inv.sidecar).string();
    if (inv.resolution) {
        if (*inv.resolution < 8) throw UsageError("must be >= 8", "--resolution");
        if (inv.command == "modes") {
            doc["resolution"] = *inv.resolution;
        } else if (inv.command == "sweep" && doc.value("pipeline", "") == "modes") {
            if (!doc.contains("base")) doc["base"] = json::object();
            if (doc["base"].is_object()) doc["base"]["resolution"] = *inv.resolution;
        } else {
            throw UsageError("only valid for 'modes' and the modes sweep pipeline", "--resolution");
        }
    }

    const Cfg cfg(doc);
    const auto seed_cfg = cfg.has("seed") ? std::optional<long long>(cfg.integer("seed", 0, 0)) : std::nullopt;
    const std::uint64_t seed = inv.seed ? *inv.seed : seed_cfg ? std::uint64_t(*seed_cfg) : 1;
    const int hw = std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
    const int threads = inv.threads ? *inv.threads : static_cast<int>(cfg.integer("threads", hw, 1));
    if (threads < 1) throw UsageError("must be >= 1", "--threads");
    const std::string out_cfg = cfg.str("out", "");
    const fs::path out_path = !inv.out.empty() ? fs::path(inv.out)
                              : !out_cfg.empty() ? (fs::path(out_cfg).is_absolute() ? fs::path(out_cfg) : base_dir / out_cfg)
                                                 : default_output(inv.command);

    run::StagedOutput out(out_path);
    run::ManifestInfo info;
    info.command = inv.command;
    info.config = doc;
    info.seed = seed;
    info.threads = threads;
    info.started_utc = started;
    const Context ctx{cfg, base_dir, seed, threads, out, info};

    int code = ok;
    if (inv.command == "modes") cmd_modes(ctx);
    else if (inv.command == "fit") cmd_fit(ctx);
    else if (inv.command == "mb") cmd_mb(ctx);
    else if (inv.command == "duffing") cmd_duffing(ctx);
    else if (inv.command == "qed") cmd_qed(ctx);
    else if (inv.command == "table1") cmd_table1(ctx);
    else if (inv.command == "render") cmd_render(ctx);
    else code = cmd_sweep(ctx);

    RunResult res;
    res.manifest = run::write_manifest(out, info);
    out.commit();
    res.exit_code = code;
    res.out = out.target();
    return res;
}

/// Maps an exception from run() onto an exit code, printing the message.
inline int report(const std::exception& e, std::ostream& err) {
    if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const PlotSpecError*>(&e)) {
        err << "usage error: " << e.what() << "\n";
        return usage;
    }
    if (const auto* ue = dynamic_cast<const UnderConstrainedError*>(&e)) {
        err << "error: " << e.what() << " (free parameters:";
        for (const auto& p : ue->free_parameters()) err << " " << p;
        err << ")\n";
        return physics;
    }
    if (const auto* ce = dynamic_cast<const CapacityError*>(&e)) {
        err << "error: " << e.what() << " (suggested resolution " << ce->suggested_resolution() << ")\n";
        return physics;
    }
    if (dynamic_cast<const Error*>(&e)) {
        err << "error: " << e.what() << "\n";
        return physics;
    }
    err << "internal error: " << e.what() << "\n";
    return internal;
}

/// Full command-line entry point.
inline int main_entry(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App cli{"mm-wave cavity workbench: mode solving, resonator fits and cavity-QED models", "mmcav"};
    cli.require_subcommand(1);
    cli.set_version_flag("--version", run::tool_version);
    Invocation inv;
    int threads = 0, resolution = 0;
    std::uint64_t seed = 0;
    const std::map<std::string, std::string> help = {
        {"modes", "solve cavity eigenmodes (JSON summary, optional field dump)"},
        {"fit", "fit a reflection trace (CSV freq_hz,re_s11,im_s11) or a synthetic one"},
        {"mb", "fit Qi(T) and df/f(T) with the BCS surface-resistance model"},
        {"duffing", "Kerr bistability and two-state lineshapes"},
        {"qed", "hybrid cavity-QED couplings and the EIT transmission cascade"},
        {"sweep", "evaluate a pipeline over a parameter grid"},
        {"table1", "resonator comparison table"},
        {"render", "plot CSV artifacts to SVG"}};
    std::vector<CLI::App*> subs;
    for (const char* name : commands) {
        CLI::App* s = cli.add_subcommand(name, help.at(name));
        s->add_option("--config", inv.config_path, "JSON config file")->check(CLI::ExistingFile);
        s->add_option("--out", inv.out, std::string("output directory (default $") + run::output_root_env + "/<command>)");
        s->add_option("--seed", seed, "random seed");
        s->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
        s->add_option("--resolution", resolution, "grid cells per tube diameter")->check(CLI::Range(8, 4096));
        if (std::string(name) == "modes") s->add_option("--preset", inv.preset, "geometry preset");
        if (std::string(name) == "fit") {
            s->add_option("--trace", inv.trace, "trace CSV")->check(CLI::ExistingFile);
            s->add_option("--sidecar", inv.sidecar, "trace sidecar JSON")->check(CLI::ExistingFile);
        }
        subs.push_back(s);
    }
    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = cli.exit(e, out, err);
        return rc == 0 ? ok : usage;
    }
    for (auto* s : subs) {
        if (!s->parsed()) continue;
        inv.command = s->get_name();
        if (s->count("--seed")) inv.seed = seed;
        if (s->count("--threads")) inv.threads = threads;
        if (s->count("--resolution")) inv.resolution = resolution;
    }
    try {
        const auto r = run(inv);
        out << r.out.string() << "\n";
        if (r.exit_code == partial)
            err << "sweep: " << r.manifest["failures"].size() << " point(s) failed; see " << run::manifest_name << "\n";
        return r.exit_code;
    } catch (const std::exception& e) {
        return report(e, err);
    }
}

}  // namespace mmcav::app
