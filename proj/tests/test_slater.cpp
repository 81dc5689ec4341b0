#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "mmcav/slater.hpp"

using namespace mmcav;

namespace {

constexpr double a = 10e-3, b = 5e-3, l = 12.5e-3, c0 = 299792458.0;

double te101(double aa, double ll) { return 0.5 * c0 * std::sqrt(1.0 / (aa * aa) + 1.0 / (ll * ll)); }

struct BoxMode {
    EigenMode mode;
    double h;
};

const BoxMode& box_mode() {
    static const BoxMode m = [] {
        const double h = b / 12;
        auto dom = std::make_shared<DiscretizedDomain>(discretize_box(a, b, l, h));
        return BoxMode{solve_lowest(dom), h};
    }();
    return m;
}

Deformation wall(int axis, double at, double delta, Box3 patch = {Vec3::Constant(-1.0), Vec3::Constant(1.0)}) {
    Deformation d;
    patch.lo[axis] = at - 0.5e-3;
    patch.hi[axis] = at + 0.5e-3;
    d.patch = patch;
    d.axis = axis;
    d.normal = 1;
    d.delta = delta;
    return d;
}

}  // namespace

TEST(Slater, ZeroDisplacementGivesZeroShift) {
    const auto& m = box_mode();
    EXPECT_EQ(slater_shift(m.mode, wall(2, l, 0.0)), 0.0);
}

TEST(Slater, PatchAwayFromWallsIsEmptySelection) {
    const auto& m = box_mode();
    Deformation d;
    d.patch = Box3{Vec3(0.3 * a, 0.3 * b, 0.3 * l), Vec3(0.4 * a, 0.4 * b, 0.4 * l)};
    d.delta = 1e-6;
    EXPECT_THROW(slater_shift(m.mode, d), EmptySelectionError);
}

TEST(Slater, InvalidDeformationIsDomainError) {
    const auto& m = box_mode();
    auto d = wall(2, l, 1e-6);
    d.axis = 3;
    EXPECT_THROW(slater_shift(m.mode, d), DomainError);
    d = wall(2, l, 1e-6);
    d.normal = 0;
    EXPECT_THROW(slater_shift(m.mode, d), DomainError);
}

TEST(Slater, EndWallMatchesAnalyticBoxDerivative) {
    // Moving the z = l wall inward shortens the box: exact shift from TE101.
    const auto& m = box_mode();
    const double delta = 0.1 * m.h;
    const double exact = te101(a, l - delta) - te101(a, l);
    EXPECT_NEAR(slater_shift(m.mode, wall(2, l, delta)) / exact, 1.0, 0.03);
    const double exact_x = te101(a - delta, l) - te101(a, l);
    EXPECT_NEAR(slater_shift(m.mode, wall(0, a, delta)) / exact_x, 1.0, 0.03);
}

TEST(Slater, ShiftIsLinearAndOddInDisplacement) {
    const auto& m = box_mode();
    const double d1 = slater_shift(m.mode, wall(2, l, 0.05 * m.h));
    const double d2 = slater_shift(m.mode, wall(2, l, 0.10 * m.h));
    const double dm = slater_shift(m.mode, wall(2, l, -0.05 * m.h));
    EXPECT_NEAR(d2, 2 * d1, 1e-9 * std::abs(d2));
    EXPECT_NEAR(dm, -d1, 1e-9 * std::abs(d1));
}

TEST(Slater, WallParallelToFieldHasNoNetShift) {
    // TE101 does not depend on the height b, so moving the whole y = b wall is neutral.
    const auto& m = box_mode();
    const double delta = 0.1 * m.h;
    const double top = slater_shift(m.mode, wall(1, b, delta));
    const double side = slater_shift(m.mode, wall(0, a, delta));
    EXPECT_LT(std::abs(top), 0.02 * std::abs(side));
}

TEST(Slater, ElectricPatchPushedInLowersFrequency) {
    // Center of the y = b wall: E normal and maximal, H vanishes. Removing
    // electric energy lowers the frequency (capacitive loading).
    const auto& m = box_mode();
    const Box3 patch{Vec3(0.4 * a, -1.0, 0.4 * l), Vec3(0.6 * a, 1.0, 0.6 * l)};
    const double df = slater_shift(m.mode, wall(1, b, 0.1 * m.h, patch));
    EXPECT_LT(df, 0.0);
}

TEST(Slater, MagneticPatchPushedInRaisesFrequency) {
    // Center of the z = l wall: E tangential vanishes, H tangential is maximal.
    const auto& m = box_mode();
    const Box3 patch{Vec3(0.4 * a, -1.0, -1.0), Vec3(0.6 * a, 1.0, 1.0)};
    EXPECT_GT(slater_shift(m.mode, wall(2, l, 0.1 * m.h, patch)), 0.0);
}

TEST(Slater, FirstOrderValidityFlag) {
    const auto& m = box_mode();
    EXPECT_TRUE(slater_shifts({m.mode}, wall(2, l, 0.5 * m.h)).first_order_valid);
    EXPECT_FALSE(slater_shifts({m.mode}, wall(2, l, 1.5 * m.h)).first_order_valid);
}

TEST(Slater, HybridThinnedWallMatchesResolve) {
    // Thinned wall pulled out of the vacuum, the piezo tuning direction.
    const auto g = preset("cross3_hybrid");
    const double d = g.min_diameter();
    const int res = 16;
    auto dom = std::make_shared<DiscretizedDomain>(discretize(g, res));
    const auto modes = solve_modes(dom, 1.0, 3);
    Deformation df;
    df.patch = Box3{Vec3(0.55 * d, -0.3 * d, 0.0), Vec3(1.5 * d, 0.3 * d, 0.6 * d)};
    df.axis = 2;
    df.normal = 1;
    df.delta = -2e-6;
    const auto r = slater_shifts(modes, df);
    EXPECT_GT(r.wall_faces, 0);
    EXPECT_TRUE(r.first_order_valid);
    auto dom2 = std::make_shared<DiscretizedDomain>(discretize(g, res, {}, deformed_region(g, df)));
    const auto moved = solve_modes(dom2, 1.0, 3);
    const double predicted = r.delta_f_hz[0], resolved = moved[0].frequency_hz - modes[0].frequency_hz;
    EXPECT_LT(predicted, 0.0);
    EXPECT_LT(resolved, 0.0);
    EXPECT_NEAR(predicted / resolved, 1.0, 0.30);
}

TEST(Piezo, LinearThenClamped) {
    const auto df = piezo_tuning_curve(1e5, 180.0, {0.0, 100.0, 180.0, 250.0});
    ASSERT_EQ(df.size(), 4u);
    EXPECT_EQ(df[0], 0.0);
    EXPECT_DOUBLE_EQ(df[1], 10e6);
    EXPECT_DOUBLE_EQ(df[2], 18e6);
    EXPECT_DOUBLE_EQ(df[3], 18e6);
}

TEST(Piezo, MonotoneNonDecreasing) {
    std::vector<double> v;
    for (int i = 0; i <= 300; ++i) v.push_back(i);
    const auto df = piezo_tuning_curve(1e5, 180.0, v);
    for (std::size_t i = 1; i < df.size(); ++i) EXPECT_GE(df[i], df[i - 1]);
}

TEST(Piezo, NegativeInputsAreDomainErrors) {
    EXPECT_THROW(piezo_tuning_curve(-1e5, 180.0, {1.0}), DomainError);
    EXPECT_THROW(piezo_tuning_curve(1e5, -1.0, {1.0}), DomainError);
    EXPECT_THROW(piezo_tuning_curve(1e5, 180.0, {-1.0}), DomainError);
}
