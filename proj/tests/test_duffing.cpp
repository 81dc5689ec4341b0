#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mmcav/duffing.hpp"
#include "mmcav/resonfit.hpp"

using namespace mmcav;

namespace {

// Discriminant of y^3 + a y^2 + b y + c; positive means three distinct real roots.
double discriminant(double a, double b, double c) {
    return 18 * a * b * c - 4 * a * a * a * c + a * a * b * b - 4 * b * b * b - 27 * c * c;
}

std::vector<double> grid(double lo, double hi, int n) {
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(lo + (hi - lo) * i / (n - 1));
    return v;
}

DuffingParams paper_params(double power_w) {
    DuffingParams p;
    p.drive_power = power_w;
    return p;
}

// Cubic residual at detuning d from f_lin.
double residual_at(const DuffingParams& p, double d, double n) {
    const double x = d - p.beta * n;
    return n * (x * x + 0.25 * p.kappa_tot * p.kappa_tot) - p.drive();
}

double residual(const DuffingParams& p, double f, double n) { return residual_at(p, f - p.f_lin, n); }

int max_root_count_near(const DuffingParams& p, double lo, double hi) {
    std::size_t most = 0;
    for (double d : grid(lo, hi, 4001)) most = std::max(most, steady_state_response(p, p.f_lin + d).roots.size());
    return int(most);
}

double argmax(const std::vector<double>& x, const std::vector<double>& y) {
    return x[std::size_t(std::max_element(y.begin(), y.end()) - y.begin())];
}

}  // namespace

TEST(Duffing, LinearLimitMatchesReflectionModel) {
    auto p = paper_params(1e-14);
    p.beta = 0.0;
    const auto lin = ResonanceFit::make(p.f_lin, 1.0 / (1.0 / (p.f_lin / p.kappa_tot) - 1.0 / (p.f_lin / p.kappa_c)),
                                        p.f_lin / p.kappa_c);
    for (double x = -20; x <= 20; x += 0.25) {
        const double f = p.f_lin + x * p.kappa_tot;
        const auto b = steady_state_response(p, f);
        ASSERT_EQ(b.roots.size(), 1u);
        EXPECT_NEAR(std::abs(duffing_s11(p, f, b.roots[0].n)), std::abs(model_s11(lin, f)), 1e-9);
    }
}

TEST(Duffing, LinearPeakIsAtFLinWithInputReferredPhotonNumber) {
    auto p = paper_params(1e-14);
    p.beta = 0.0;
    const auto lin = ResonanceFit::make(p.f_lin, p.f_lin / (p.kappa_tot - p.kappa_c), p.f_lin / p.kappa_c);
    const auto fs = grid(p.f_lin - 5 * p.kappa_tot, p.f_lin + 5 * p.kappa_tot, 2001);
    std::vector<double> n;
    for (double f : fs) n.push_back(steady_state_response(p, f).roots[0].n);
    EXPECT_NEAR(argmax(fs, n), p.f_lin, 1e-6 * p.kappa_tot + (fs[1] - fs[0]));
    EXPECT_NEAR(steady_state_response(p, p.f_lin).roots[0].n / photon_number(lin, 1e-14).n, 1.0, 1e-12);
}

TEST(Duffing, RootsSolveTheCubic) {
    const auto p = paper_params(1e-11);
    for (double f : grid(p.f_lin - 5e3, p.f_lin + 40e3, 301))
        for (const auto& r : steady_state_response(p, f).roots) {
            EXPECT_GE(r.n, 0.0);
            EXPECT_LT(std::abs(residual(p, f, r.n)), 1e-9 * p.drive());
        }
}

TEST(Duffing, RootCountFollowsDiscriminantSign) {
    for (double power : {1e-14, 1e-12, 1e-11}) {
        const auto p = paper_params(power);
        for (double f : grid(p.f_lin - 5e3, p.f_lin + 40e3, 601)) {
            const double d = f - p.f_lin, k2 = 0.25 * p.kappa_tot * p.kappa_tot;
            const double disc = discriminant(-2 * d, d * d + k2, -p.beta * p.drive());
            const auto n = steady_state_response(p, f).roots.size();
            if (std::abs(disc) < 1e-6 * std::pow(p.kappa_tot, 6)) continue;
            EXPECT_EQ(n, disc > 0 ? 3u : 1u) << power << " " << d;
        }
    }
}

TEST(Duffing, BelowBifurcationOneRootEverywhere) {
    const auto c = bifurcation_power(paper_params(0.0));
    const auto p = paper_params(0.9 * c.power_w);
    for (double f : grid(p.f_lin - 10 * p.kappa_tot, p.f_lin + 10 * p.kappa_tot, 4001))
        EXPECT_EQ(steady_state_response(p, f).roots.size(), 1u);
}

TEST(Duffing, AboveBifurcationThreeRootsOnlyAboveFLin) {
    const auto c = bifurcation_power(paper_params(0.0));
    const auto p = paper_params(4.0 * c.power_w);
    int triple = 0;
    for (double f : grid(p.f_lin - 10 * p.kappa_tot, p.f_lin + 20 * p.kappa_tot, 6001)) {
        const auto b = steady_state_response(p, f);
        if (b.roots.size() == 3) {
            ++triple;
            EXPECT_GT(f, p.f_lin);
            EXPECT_TRUE(b.roots[0].stable);
            EXPECT_FALSE(b.roots[1].stable);
            EXPECT_TRUE(b.roots[2].stable);
        }
    }
    EXPECT_GT(triple, 10);
}

TEST(Duffing, BifurcationPointIsATripleRoot) {
    const auto p0 = paper_params(0.0);
    const auto c = bifurcation_power(p0);
    const auto p = paper_params(c.power_w);
    const double k = p.kappa_tot;
    EXPECT_NEAR(c.n_crit, k / (std::sqrt(3.0) * p.beta), 1e-9 * c.n_crit);
    EXPECT_NEAR(c.detuning_hz, 0.5 * std::sqrt(3.0) * k, 1e-9 * k);
    // At (S_c, delta_c) the cubic g(n) has g = g' = g'' = 0 at n_c.
    const double d = c.detuning_hz, n = c.n_crit, b = p.beta;
    EXPECT_NEAR(residual_at(p, d, n) / p.drive(), 0.0, 1e-9);
    const double g1 = (d - b * n) * (d - b * n) + 0.25 * k * k - 2 * b * n * (d - b * n);
    const double g2 = -4 * b * (d - b * n) + 2 * b * b * n;
    EXPECT_NEAR(g1 / (k * k), 0.0, 1e-9);
    EXPECT_NEAR(g2 / (b * k), 0.0, 1e-9);
    // Slightly above the critical power a narrow bistable window opens near delta_c.
    EXPECT_EQ(max_root_count_near(paper_params(1.02 * c.power_w), 0.5 * k, 3 * k), 3);
    EXPECT_EQ(max_root_count_near(paper_params(0.98 * c.power_w), 0.5 * k, 3 * k), 1);
}

TEST(Duffing, DoublingBetaHalvesCriticalPhotonNumber) {
    auto p = paper_params(0.0);
    const double n1 = bifurcation_power(p).n_crit;
    p.beta *= 2;
    EXPECT_DOUBLE_EQ(bifurcation_power(p).n_crit, 0.5 * n1);
}

TEST(Duffing, DoublingLinewidthRaisesCriticalPowerEightfold) {
    auto p = paper_params(0.0);
    const double p1 = bifurcation_power(p).power_w;
    p.kappa_tot *= 2;
    p.kappa_c *= 2;
    // S_c scales as kappa^3; the drive per watt doubles with kappa_c.
    EXPECT_NEAR(bifurcation_power(p).power_w / p1, 4.0, 1e-12);
    auto q = paper_params(0.0);
    q.kappa_tot *= 2;
    EXPECT_NEAR(bifurcation_power(q).power_w / p1, 8.0, 1e-12);
}

TEST(Duffing, ZeroBetaHasNoBifurcation) {
    auto p = paper_params(0.0);
    p.beta = 0.0;
    EXPECT_THROW(bifurcation_power(p), NoBifurcationError);
}

TEST(Duffing, PeakPhotonNumberNondecreasingInPower) {
    const auto fs = grid(98.218508e9 - 5e3, 98.218508e9 + 40e3, 91);
    for (double f : fs) {
        double prev = 0.0;
        for (double dbm = -110; dbm <= -70; dbm += 2) {
            const auto b = steady_state_response(paper_params(dbm_to_watts(dbm)), f);
            const double nmax = b.roots.back().n;
            EXPECT_GE(nmax, prev * (1 - 1e-12));
            prev = nmax;
        }
    }
}

TEST(Duffing, HysteresisOnlyAboveBifurcation) {
    const auto c = bifurcation_power(paper_params(0.0));
    const auto p_lo = paper_params(0.5 * c.power_w), p_hi = paper_params(4.0 * c.power_w);
    const auto fs = grid(p_hi.f_lin - 10 * p_hi.kappa_tot, p_hi.f_lin + 20 * p_hi.kappa_tot, 3001);
    EXPECT_EQ(hysteresis_area(p_lo, fs), 0.0);
    EXPECT_GT(hysteresis_area(p_hi, fs), 0.0);
    const auto up = sweep_response(p_hi, fs, SweepDirection::up);
    const auto down = sweep_response(p_hi, fs, SweepDirection::down);
    // The up-sweep rides the upper branch further than the down-sweep.
    EXPECT_GT(argmax(fs, up), argmax(fs, down));
}

TEST(Duffing, SpectrumLabelsBranches) {
    const auto c = bifurcation_power(paper_params(0.0));
    const auto p = paper_params(4.0 * c.power_w);
    const auto pts = duffing_spectrum(p, grid(p.f_lin - 5e3, p.f_lin + 40e3, 201));
    bool has_single = false, has_upper = false;
    for (const auto& s : pts) {
        has_single |= s.branch == "single";
        has_upper |= s.branch == "upper";
        EXPECT_LE(s.response_mag, 1.0 + 1e-12);
    }
    EXPECT_TRUE(has_single);
    EXPECT_TRUE(has_upper);
    const std::string csv = spectrum_csv(pts);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "freq_hz,response_mag,branch_label");
}

TEST(TwoState, ZeroPowerIsStateOneLorentzian) {
    const MetastableStates m;
    const double k = m.f1 / m.q1;
    const auto fs = grid(m.f1 - 5 * k, m.f1 + 5 * k, 2001);
    const auto s = two_state_lineshape(m, 0.0, fs);
    EXPECT_DOUBLE_EQ(s.peak_hz, 98.218508e9);
    EXPECT_DOUBLE_EQ(s.q, 3e7);
    for (std::size_t i = 0; i < fs.size(); ++i) {
        const double d = fs[i] - m.f1;
        EXPECT_NEAR(s.response[i], 1.0 / (1.0 + 4 * d * d / (k * k)), 1e-12);
    }
}

TEST(TwoState, SaturatedIsStateTwoLorentzian) {
    const MetastableStates m;
    const double k = m.f2 / m.q2;
    const auto fs = grid(m.f2 - 5 * k, m.f2 + 5 * k, 2001);
    for (double pw : {m.p_sat_w, 10 * m.p_sat_w}) {
        const auto s = two_state_lineshape(m, pw, fs);
        EXPECT_NEAR(s.peak_hz - 98.218508e9, 24e3, 1e-3);
        EXPECT_NEAR(s.q, 1.3e7, 1e-6);
        for (std::size_t i = 0; i < fs.size(); ++i) {
            const double d = fs[i] - m.f2;
            EXPECT_NEAR(s.response[i], 1.0 / (1.0 + 4 * d * d / (k * k)), 1e-12);
        }
    }
}

TEST(TwoState, PeakMovesMonotonicallyAndSitsAtTheReportedFrequency) {
    const MetastableStates m;
    const auto fs = grid(m.f1 - 20e3, m.f2 + 20e3, 8001);
    double prev = 0.0;
    for (double dbm = -120; dbm <= -70; dbm += 2.5) {
        const auto s = two_state_lineshape(m, dbm_to_watts(dbm), fs);
        EXPECT_GE(s.peak_hz, prev);
        prev = s.peak_hz;
        EXPECT_NEAR(argmax(fs, s.response), s.peak_hz, 2 * (fs[1] - fs[0])) << dbm;
        EXPECT_NEAR(*std::max_element(s.response.begin(), s.response.end()), 1.0, 1e-3);
    }
    EXPECT_THROW(two_state_lineshape(m, -1.0, fs), DomainError);
}
