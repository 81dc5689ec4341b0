// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "mmcav/cryo.hpp"
#include "mmcav/cutoff2d.hpp"
#include "mmcav/duffing.hpp"
#include "mmcav/hybridqed.hpp"
#include "mmcav/io.hpp"
#include "mmcav/modesolver.hpp"
#include "mmcav/resonfit.hpp"
#include "mmcav/run.hpp"

using namespace mmcav;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Verdict {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0, double e = 0, double g = 0) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a, b, c, d, e, g);
    return buf;
}

bool within(double x, double target, double rel) { return std::abs(x / target - 1.0) <= rel; }

double lowest(const CavityGeometry& g, int res) {
    return solve_lowest(std::make_shared<const DiscretizedDomain>(discretize(g, res))).frequency_hz;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

// Child process running the CLI; output goes to `log`.
pid_t spawn(const std::vector<std::string>& args, const fs::path& cwd, const fs::path& log) {
    const pid_t pid = ::fork();
    if (pid == 0) {
        if (::chdir(cwd.c_str()) != 0) ::_exit(127);
        if (!std::freopen(log.c_str(), "w", stdout) || !std::freopen(log.c_str(), "a", stderr)) ::_exit(127);
        std::vector<char*> argv;
        argv.push_back(const_cast<char*>(MMCAV_CLI_PATH));
        for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
        argv.push_back(nullptr);
        ::execv(MMCAV_CLI_PATH, argv.data());
        ::_exit(127);
    }
    return pid;
}

int wait_exit(pid_t pid) {
    int st = 0;
    ::waitpid(pid, &st, 0);
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::map<std::string, std::string> artifacts(const fs::path& root) {
    std::map<std::string, std::string> m;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() != run::manifest_name)
            m[fs::relative(e.path(), root).string()] = io::read_text(e.path());
    return m;
}

Verdict ac1() {
    const double fc = cutoff_frequency(1.6e-3), f2d = cutoff_2d(1.6e-3, 32);
    const bool ok = std::abs(fc / 1e9 - 109.85) < 0.005 && within(f2d, fc, 0.02);
    return {ok, fmt("cutoff_frequency(1.6 mm) = %.3f GHz, cutoff_2d(res 32) = %.3f GHz (%+.2f%%)", fc / 1e9, f2d / 1e9,
                    100 * (f2d / fc - 1))};
}

Verdict ac2() {
    constexpr double a = 10e-3, b = 5e-3, l = 12.5e-3;
    const double exact = 0.5 * constants::c * std::sqrt(1 / (a * a) + 1 / (l * l));
    auto box = [&](int res) {
        return solve_lowest(std::make_shared<const DiscretizedDomain>(discretize_box(a, b, l, b / res))).frequency_hz;
    };
    const double f12 = box(12), f24 = box(24), rich = richardson(f12, 12, f24, 24, 2.0);
    return {within(f24, exact, 0.02) && within(rich, exact, 0.02),
            fmt("TE101 exact %.4f GHz; res 24 %.4f GHz (%+.3f%%), Richardson %.4f GHz (%+.3f%%)", exact / 1e9, f24 / 1e9,
                100 * (f24 / exact - 1), rich / 1e9, 100 * (rich / exact - 1))};
}

Verdict ac3() {
    const double fe = lowest(preset("elbow"), 16), ft = lowest(preset("tee"), 16), fs4 = lowest(preset("star4"), 16);
    const double fc = cutoff_frequency(1.6e-3);
    const bool order = fs4 < ft && ft < fe && fe < 110e9 && fe < fc;
    const bool values = within(fe, 109e9, 0.05) && within(ft, 98e9, 0.05) && within(fs4, 92e9, 0.05);
    return {order && values, fmt("res 16: star4 %.2f < tee %.2f < elbow %.2f < 110 GHz; targets 92/98/109 GHz within 5%%",
                                 fs4 / 1e9, ft / 1e9, fe / 1e9)};
}

Verdict ac4() {
    const auto m = solve_lowest(std::make_shared<const DiscretizedDomain>(discretize(preset("cross3_hybrid"), 16)));
    const bool f_ok = within(m.frequency_hz, 98.2e9, 0.05), v_ok = within(m.mode_volume_ratio, 0.14, 0.25);
    return {f_ok && v_ok,
            fmt("res 16: f = %.3f GHz (%+.2f%% vs 98.2 GHz, ok %g); V/lambda^3 = %.4f (%+.1f%% vs 0.14, ok %g)",
                m.frequency_hz / 1e9, 100 * (m.frequency_hz / 98.2e9 - 1), f_ok ? 1.0 : 0.0, m.mode_volume_ratio,
                100 * (m.mode_volume_ratio / 0.14 - 1), v_ok ? 1.0 : 0.0)};
}

Verdict ac5() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> noisy, clean;
    for (int k = 0; k < 100; ++k) {
        const auto p = ResonanceFit::make((90 + 20 * u(rng)) * 1e9, std::pow(10, 6 + 2 * u(rng)), std::pow(10, 6 + 2 * u(rng)),
                                          {1.0, 2 * constants::pi * u(rng) - constants::pi, 0.0});
        const double span = 10 * p.f0 / p.qtot;
        // SNR 20 dB: rms noise amplitude is a tenth of the off-resonant level.
        try {
            noisy.push_back(std::abs(fit_reflection(synth_trace(p, span, 401, 0.1, 1000 + k)).qi / p.qi - 1));
        } catch (const Error&) {
            noisy.push_back(INFINITY);
        }
        clean.push_back(std::abs(fit_reflection(synth_trace(p, span, 401, 0.0, 1000 + k)).qi / p.qi - 1));
    }
    const double med = median(noisy), worst = *std::max_element(clean.begin(), clean.end());
    return {med < 0.05 && worst < 1e-3,
            fmt("100 random resonators: median |dQi/Qi| at SNR 20 dB = %.2f%%, worst noiseless = %.2e", 100 * med, worst)};
}

Verdict ac6() {
    const auto lw = linewidth_and_lifetime(98.2e9, 3e7);
    const double n = thermal_occupation(100e9, 1.0);
    const double n_ref = 1.0 / std::expm1(constants::h * 100e9 / (constants::k_B * 1.0));
    const bool ok = std::abs(lw.lifetime_s * 1e6 - 48.6) < 0.05 && std::abs(lw.kappa_hz / 1e3 - 3.27) < 0.005 &&
                    std::abs(n - 0.0083) < 0.00005 && std::abs(n / n_ref - 1) < 1e-12;
    return {ok, fmt("tau = %.2f us, kappa = %.4f kHz, n_th(100 GHz, 1 K) = %.5f", lw.lifetime_s * 1e6, lw.kappa_hz / 1e3, n)};
}

Verdict ac7() {
    MBParams p;
    p.tc = 9.2;
    p.q_res = 3e7;
    p.a_prefactor = prefactor_for_crossover(p, 98.2e9, 2.3);
    std::vector<double> temps;
    for (double t = 1.0; t <= 4.5 + 1e-9; t += 0.25) temps.push_back(t);
    const auto r = fit_thermal_series(generate_thermal_series(p, 98.2e9, temps, 0.05, 7), 98.2e9);
    const bool ok = within(r.params.q_res, 3e7, 0.10) && std::isfinite(r.t_star) && std::abs(r.t_star - 2.3) <= 0.2;
    return {ok, fmt("5%% noise: Q_res = %.3e (%+.1f%%), T* = %.3f K", r.params.q_res, 100 * (r.params.q_res / 3e7 - 1),
                    r.t_star)};
}

Verdict ac8() {
    DuffingParams p;
    p.drive_power = 1e-14;
    p.beta = 0.0;
    const auto lin = ResonanceFit::make(p.f_lin, p.f_lin / (p.kappa_tot - p.kappa_c), p.f_lin / p.kappa_c);
    double dev = 0.0;
    for (double x = -20; x <= 20; x += 0.05) {
        const double f = p.f_lin + x * p.kappa_tot;
        dev = std::max(dev, std::abs(std::abs(duffing_s11(p, f, steady_state_response(p, f).roots[0].n)) -
                                     std::abs(model_s11(lin, f))));
    }
    DuffingParams q;
    const auto c = bifurcation_power(q);
    q.drive_power = 4 * c.power_w;
    int triple = 0, wrong_side = 0;
    for (int i = 0; i <= 6000; ++i) {
        const double f = q.f_lin + (-10 + 30.0 * i / 6000) * q.kappa_tot;
        if (steady_state_response(q, f).roots.size() == 3) ++triple, wrong_side += f <= q.f_lin;
    }
    q.drive_power = 0.9 * c.power_w;
    int below = 0;
    for (int i = 0; i <= 6000; ++i)
        below += steady_state_response(q, q.f_lin + (-10 + 30.0 * i / 6000) * q.kappa_tot).roots.size() == 3;
    const MetastableStates m;
    const auto s0 = two_state_lineshape(m, 0.0, {m.f1}), s1 = two_state_lineshape(m, m.p_sat_w, {m.f2});
    const bool ends = s0.peak_hz == 98.218508e9 && s0.q == 3e7 && std::abs(s1.peak_hz - 98.218508e9 - 24e3) < 1e-3 &&
                      s1.q == 1.3e7;
    return {dev < 1e-9 && triple > 0 && wrong_side == 0 && below == 0 && ends,
            fmt("beta=0 max |S11| deviation %.1e; above P_c %g three-root points (%g below f_lin, %g below P_c); "
                "two-state ends ok = %g",
                dev, triple, wrong_side, below, ends ? 1.0 : 0.0)};
}

Verdict ac9() {
    const HybridParams p;
    const double c_opt = coop_optical(1e4, 80e-6, 780e-9);
    const double c_mm = coop_mm(p.g_mm(), p.gamma_ryd(), p.kappa_mm());
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1e", c_mm);
    const bool ok = std::abs(c_opt - 0.184) < 5e-4 && std::string(buf) == "2.2e+04";
    return {ok, fmt("C_opt = %.4f; C_mm = %.4g with Gamma = %.2f kHz, g = %.0f kHz, kappa = %.3f kHz", c_opt, c_mm,
                    p.gamma_ryd() / 1e3, p.g_mm() / 1e3, p.kappa_mm() / 1e3)};
}

Verdict ac10() {
    HybridParams r;
    r.atoms.omega_b = 0.0;
    r.atoms.n_atoms = 1e5;
    const double gn = collective_enhancement(r.g_opt(), r.atoms.n_atoms);
    const double rabi = extract_splitting(eit_transmission(r, detuning_grid(3 * gn, 200001)));
    HybridParams p;
    const auto det = detuning_grid(8e6, 160001);
    std::vector<double> ln, ls;
    bool monotone = true;
    double prev = 0.0;
    for (double n : {1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0}) {
        p.atoms.n_mm = n;
        const double s = extract_splitting(eit_transmission(p, det));
        monotone = monotone && s > prev;
        prev = s;
        ln.push_back(std::log(n));
        ls.push_back(std::log(s));
    }
    double mx = 0, my = 0, sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < ln.size(); ++i) mx += ln[i] / double(ln.size()), my += ls[i] / double(ls.size());
    for (std::size_t i = 0; i < ln.size(); ++i) sxy += (ln[i] - mx) * (ls[i] - my), sxx += (ln[i] - mx) * (ln[i] - mx);
    const double slope = sxy / sxx;
    return {within(rabi, 2 * gn, 0.02) && std::abs(slope - 0.5) <= 0.05 && monotone,
            fmt("Rabi splitting %.4f MHz vs 2g sqrt(N) = %.4f MHz (%+.3f%%); mm-split exponent over n_mm 1..100 = %.4f",
                rabi / 1e6, 2 * gn / 1e6, 100 * (rabi / (2 * gn) - 1), slope)};
}

Verdict ac11() {
    const fs::path dir = fs::temp_directory_path() / ("mmcav_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const json sweep = {{"pipeline", "fit"},
                        {"base", {{"f0_hz", 98.2e9}, {"qc", 1e7}, {"noise_sigma", 0.05}}},
                        {"grid", {{"qi", {3e6, 1e7, 3e7, 1e8, 3e8}}}}};
    io::write_text(dir / "sweep.json", sweep.dump(2));
    const std::vector<std::string> base = {"sweep", "--config", "sweep.json", "--seed", "42", "--out"};
    auto args = [&](const std::string& out, const std::string& threads) {
        auto a = base;
        a.push_back(out);
        a.push_back("--threads");
        a.push_back(threads);
        return a;
    };
    const int e1 = wait_exit(spawn(args("run1", "1"), dir, dir / "log1.txt"));
    const int e2 = wait_exit(spawn(args("run2", "2"), dir, dir / "log2.txt"));
    const bool identical = e1 == 0 && e2 == 0 && artifacts(dir / "run1") == artifacts(dir / "run2") &&
                           !artifacts(dir / "run1").empty();

    // Interrupt a long mode-solver sweep once its staging directory exists.
    const json slow = {{"pipeline", "modes"},
                       {"base", {{"preset", "cross3_hybrid"}}},
                       {"grid", {{"resolution", {16, 20, 24}}}}};
    io::write_text(dir / "slow.json", slow.dump(2));
    const pid_t pid = spawn({"sweep", "--config", "slow.json", "--out", "killed", "--threads", "1"}, dir, dir / "log3.txt");
    bool staged = false;
    for (int i = 0; i < 600 && !staged; ++i) {
        for (const auto& e : fs::directory_iterator(dir))
            staged = staged || e.path().filename().string().rfind(".killed.staging-", 0) == 0;
        if (!staged) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(500));
    ::kill(pid, SIGKILL);
    int st = 0;
    ::waitpid(pid, &st, 0);
    const bool killed = WIFSIGNALED(st);
    const bool no_partial = !fs::exists(dir / "killed");
    fs::remove_all(dir);
    return {identical && staged && killed && no_partial,
            fmt("fixed-seed sweep byte-identical across runs and thread counts: %g; SIGKILL mid-run leaves no output "
                "directory: %g (staging seen %g)",
                identical ? 1.0 : 0.0, killed && no_partial ? 1.0 : 0.0, staged ? 1.0 : 0.0)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
        {1, ac1}, {2, ac2}, {3, ac3}, {4, ac4}, {5, ac5}, {6, ac6}, {7, ac7}, {8, ac8}, {9, ac9}, {10, ac10}, {11, ac11}};
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& [id, fn] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("AC%-2d %s  %s  [%.1f s]\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str(), dt);
        std::fflush(stdout);
        failed += !v.pass;
    }
    std::printf("%d criteria failed\n", failed);
    return failed ? 1 : 0;
}
