#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <memory>

#include "mmcav/modesolver.hpp"

using namespace mmcav;

namespace {

using DomainPtr = std::shared_ptr<const DiscretizedDomain>;

DomainPtr make_domain(const CavityGeometry& g, int res) { return std::make_shared<DiscretizedDomain>(discretize(g, res)); }

double lowest(const std::string& name, int res, const PresetOptions& o = {}) {
    return solve_lowest(make_domain(preset(name, o), res)).frequency_hz;
}

// Closed-form TE101 of an a x b x l box with b the shortest side.
double te101(double a, double l) { return 0.5 * 299792458.0 * std::sqrt(1.0 / (a * a) + 1.0 / (l * l)); }

constexpr double box_a = 10e-3, box_b = 5e-3, box_l = 12.5e-3;

double box_lowest(int res) {
    auto dom = std::make_shared<DiscretizedDomain>(discretize_box(box_a, box_b, box_l, box_b / res));
    return solve_lowest(dom).frequency_hz;
}

// Independent flood fill over vacuum cells with face adjacency.
int count_components(const DiscretizedDomain& dom) {
    const auto& g = dom.grid();
    std::vector<char> seen(std::size_t(g.cells()), 0);
    int comps = 0;
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                if (!dom.vacuum(i, j, k) || seen[std::size_t(g.cell_id(i, j, k))]) continue;
                ++comps;
                std::deque<std::array<int, 3>> q{{i, j, k}};
                seen[std::size_t(g.cell_id(i, j, k))] = 1;
                while (!q.empty()) {
                    const auto c = q.front();
                    q.pop_front();
                    for (int d = 0; d < 3; ++d)
                        for (int s : {-1, 1}) {
                            auto n = c;
                            n[d] += s;
                            if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= g.nx || n[1] >= g.ny || n[2] >= g.nz) continue;
                            const auto id = std::size_t(g.cell_id(n[0], n[1], n[2]));
                            if (seen[id] || !dom.vacuum(n[0], n[1], n[2])) continue;
                            seen[id] = 1;
                            q.push_back(n);
                        }
                }
            }
    return comps;
}

}  // namespace

TEST(Discretize, SingleTubeVolumeWithinTwoPercent) {
    const double d = 1.6e-3, hl = 3 * d;
    const CavityGeometry g({Tube(Vec3::Zero(), Vec3::UnitZ(), d, hl)});
    const auto dom = discretize(g, 16);
    const double exact = constants::pi * 0.25 * d * d * 2 * hl;
    EXPECT_NEAR(dom.vacuum_volume() / exact, 1.0, 0.02);
    EXPECT_GT(dom.h(), 0.0);
}

TEST(Discretize, ResolutionBelowEightIsDomainError) {
    EXPECT_THROW(discretize(preset("tee"), 7), DomainError);
}

TEST(Discretize, OverBudgetSuggestsSmallerResolution) {
    DiscretizeOptions o;
    o.memory_budget_bytes = 2e6;
    try {
        discretize(preset("cross3_hybrid"), 24, o);
        FAIL() << "expected CapacityError";
    } catch (const CapacityError& e) {
        EXPECT_LT(e.suggested_resolution(), 24);
        EXPECT_NE(std::string(e.what()).find("try resolution"), std::string::npos);
    }
}

TEST(Discretize, ElbowMaskIsConnected) {
    const auto dom = discretize(preset("elbow"), 12);
    EXPECT_EQ(count_components(dom), 1);
}

TEST(Discretize, OuterLayerIsMetal) {
    const auto dom = discretize(preset("tee"), 8);
    const auto& g = dom.grid();
    for (int k = 0; k < g.nz; ++k)
        for (int j = 0; j < g.ny; ++j) {
            EXPECT_FALSE(dom.vacuum(0, j, k));
            EXPECT_FALSE(dom.vacuum(g.nx - 1, j, k));
        }
}

TEST(SolveModes, StraightTubeHasNoModeBelowCutoff) {
    const double d = 1.6e-3, hl = 3 * d;
    const CavityGeometry g({Tube(Vec3::Zero(), Vec3::UnitZ(), d, hl)});
    const auto m = solve_lowest(make_domain(g, 12));
    const double fc = cutoff_frequency(d);
    EXPECT_GE(m.frequency_hz, 0.99 * fc);
    // Closed cylinder TE111 oracle.
    const double k = std::hypot(constants::te11_root / (0.5 * d), constants::pi / (2 * hl));
    EXPECT_NEAR(m.frequency_hz / (constants::c * k / (2 * constants::pi)), 1.0, 0.02);
}

TEST(SolveModes, PreconditionsAreChecked) {
    auto dom = make_domain(preset("star4"), 8);
    EXPECT_THROW(solve_modes(dom, 0.0, 1), DomainError);
    EXPECT_THROW(solve_modes(dom, 1e11, 0), DomainError);
}

TEST(SolveModes, BoxMatchesTE101) {
    EXPECT_NEAR(box_lowest(12) / te101(box_a, box_l), 1.0, 0.02);
}

TEST(SolveModes, BoxConvergesWithOrderAtLeastOneAndAHalf) {
    const double f6 = box_lowest(6), f12 = box_lowest(12), f24 = box_lowest(24);
    const double p = observed_order(f6, f12, f24, 2.0);
    EXPECT_GE(p, 1.5);
    const double exact = te101(box_a, box_l);
    const double rich = richardson(f12, 12, f24, 24, 2.0);
    EXPECT_LT(std::abs(rich - exact), std::abs(f24 - exact));
    EXPECT_NEAR(rich / exact, 1.0, 1e-3);
}

TEST(SolveModes, ModesAreConvergedDivergenceFreeAndSorted) {
    auto dom = make_domain(preset("tee"), 10);
    const auto modes = solve_modes(dom, 1.0, 3);
    ASSERT_EQ(modes.size(), 3u);
    for (std::size_t i = 0; i < modes.size(); ++i) {
        const auto& m = modes[i];
        EXPECT_GT(m.frequency_hz, 0.0);
        EXPECT_LE(m.residual, 1e-8);
        EXPECT_LE(m.divergence_fraction, 1e-6);
        EXPECT_NEAR(m.field.norm(), 1.0, 1e-9);
        EXPECT_LE(m.mode_volume_m3, dom->vacuum_volume());
        EXPECT_NEAR(m.mode_volume_ratio, m.mode_volume_m3 / std::pow(constants::c / m.frequency_hz, 3), 1e-12);
        if (i > 0) {
            EXPECT_GE(m.frequency_hz, modes[i - 1].frequency_hz);
        }
    }
}

TEST(SolveModes, ResidualMatchesIndependentOperatorApplication) {
    auto dom = make_domain(preset("elbow"), 10);
    const auto m = solve_lowest(dom);
    const auto ops = build_operators(*dom);
    const double lam = m.k2 * dom->h() * dom->h();
    const double r = (ops.system * m.field - lam * m.field).norm() / lam;
    EXPECT_LE(r, 1e-7);
}

TEST(SolveModes, AddingTubesNeverRaisesLowestFrequency) {
    const double elbow = lowest("elbow", 10), tee = lowest("tee", 10), star4 = lowest("star4", 10);
    EXPECT_LE(tee, elbow);
    EXPECT_LE(star4, tee);
    EXPECT_LT(elbow, cutoff_frequency(1.6e-3));
}

// Energy fractions of the lowest tee mode: outside a 1.5 d sphere around the
// junction, and within one diameter of the closed tube ends.
struct Localization {
    double f, outside, ends;
};

Localization localization(double half_length_diameters) {
    PresetOptions o;
    o.half_length_diameters = half_length_diameters;
    const auto g = preset("tee", o);
    auto dom = make_domain(g, 10);
    const auto m = solve_lowest(dom);
    const auto s = cell_samples(m);
    const auto& gr = dom->grid();
    const double d = g.min_diameter();
    double tot = 0, outside = 0, ends = 0;
    for (std::size_t i = 0; i < s.e2.size(); ++i) {
        const auto c = s.cell[i];
        const int ci = int(c % gr.nx), cj = int((c / gr.nx) % gr.ny), ck = int(c / (std::int64_t(gr.nx) * gr.ny));
        const double r = gr.cell_center(ci, cj, ck).norm(), u = s.e2[i] + s.h2[i];
        tot += u;
        if (r > 1.5 * d) outside += u;
        if (r > (half_length_diameters - 1.0) * d) ends += u;
    }
    return {m.frequency_hz, outside / tot, ends / tot};
}

TEST(SolveModes, BoundStateLocalizesAsTubesLengthen) {
    const auto l3 = localization(3.0), l4 = localization(4.0), l5 = localization(5.0);
    // Energy reaching the closed ends decays exponentially with their distance.
    EXPECT_LT(l4.ends, l3.ends);
    EXPECT_LT(l5.ends, l4.ends);
    EXPECT_LT(l5.ends, 1e-3 * l3.ends);
    // The junction-region share settles: the evanescent tail is small and converged.
    EXPECT_LT(l5.outside, 0.02);
    EXPECT_NEAR(l5.outside, l4.outside, 1e-4);
    EXPECT_LE(l4.f, l3.f);
    EXPECT_LE(l5.f, l4.f);
    EXPECT_LT(l5.f, cutoff_frequency(1.6e-3));
}

TEST(SolveModes, TargetSelectsNearestModes) {
    auto dom = make_domain(preset("tee"), 8);
    const auto low = solve_modes(dom, 1.0, 1).front();
    const auto near = solve_modes(dom, low.frequency_hz * 1.001, 1).front();
    EXPECT_NEAR(near.frequency_hz, low.frequency_hz, 1e-6 * low.frequency_hz);
}

TEST(ModeVolume, UniformFieldFillsTheBox) {
    std::vector<double> e2(1000, 2.5), w(1000, 1e-9);
    EXPECT_NEAR(mode_volume(e2, w), 1e-6, 1e-18);
}

TEST(ModeVolume, PeakedFieldIsSmaller) {
    std::vector<double> e2(100, 1.0), w(100, 1.0);
    e2[3] = 10.0;
    EXPECT_NEAR(mode_volume(e2, w), 10.9, 1e-12);
}

TEST(ModeVolume, ZeroFieldIsDegenerate) {
    std::vector<double> e2(10, 0.0), w(10, 1.0);
    EXPECT_THROW(mode_volume(e2, w), DegenerateInputError);
    auto dom = make_domain(preset("star4"), 8);
    auto m = solve_lowest(dom);
    m.field.setZero();
    EXPECT_THROW(mode_volume(m), DegenerateInputError);
}

TEST(ModeVolume, UniformBoxFieldFromSolverSamples) {
    // The TE101 |E|^2 averages to a quarter of its peak over the box.
    auto dom = std::make_shared<DiscretizedDomain>(discretize_box(box_a, box_b, box_l, box_b / 8));
    const auto m = solve_lowest(dom);
    const auto s = cell_samples(m);
    const double h3 = std::pow(dom->h(), 3);
    const double v = mode_volume(s.e2, std::vector<double>(s.e2.size(), h3));
    EXPECT_NEAR(v / (0.25 * box_a * box_b * box_l), 1.0, 0.05);
}

TEST(ModeVolume, RefinementChangesVolumeByLessThanFivePercent) {
    auto coarse = solve_lowest(make_domain(preset("tee"), 10));
    auto fine = solve_lowest(make_domain(preset("tee"), 20));
    EXPECT_NEAR(fine.mode_volume_ratio / coarse.mode_volume_ratio, 1.0, 0.05);
}

TEST(Richardson, RemovesLeadingError) {
    auto f = [](int n) { return 3.0 + 2.0 / (n * n) + 1.0 / (n * n * n * n); };
    EXPECT_NEAR(richardson(f(10), 10, f(20), 20, 2.0), 3.0, 1e-4);
    EXPECT_NEAR(observed_order(f(10), f(20), f(40), 2.0), 2.0, 0.05);
}
