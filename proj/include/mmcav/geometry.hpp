#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <json.hpp>

#include "mmcav/constants.hpp"
#include "mmcav/errors.hpp"

namespace mmcav {

using Vec3 = Eigen::Vector3d;

struct Box3 {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();

    Vec3 extent() const { return hi - lo; }
    bool contains(const Vec3& p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }
    void expand(const Box3& o) {
        lo = lo.cwiseMin(o.lo);
        hi = hi.cwiseMax(o.hi);
    }
};

/// A finite cylinder of vacuum drilled into the metal block.
class Tube {
public:
    Tube(Vec3 center, Vec3 axis, double diameter, double half_length)
        : center_(std::move(center)), axis_(std::move(axis)), diameter_(diameter), half_length_(half_length) {
        if (!(diameter_ > 0.0)) throw DomainError("tube diameter must be positive");
        if (!(half_length_ > 0.0)) throw DomainError("tube half_length must be positive");
        const double n = axis_.norm();
        if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("tube axis must be a nonzero vector");
        axis_ /= n;
    }

    const Vec3& center() const { return center_; }
    const Vec3& axis() const { return axis_; }
    double diameter() const { return diameter_; }
    double radius() const { return 0.5 * diameter_; }
    double half_length() const { return half_length_; }

    Vec3 end_a() const { return center_ - half_length_ * axis_; }
    Vec3 end_b() const { return center_ + half_length_ * axis_; }

    bool contains(const Vec3& p) const {
        const Vec3 v = p - center_;
        const double t = v.dot(axis_);
        if (std::abs(t) > half_length_) return false;
        return (v - t * axis_).squaredNorm() <= radius() * radius();
    }

    /// Distance from an interior point to the tube surface; negative outside.
    double depth(const Vec3& p) const {
        const Vec3 v = p - center_;
        const double t = v.dot(axis_);
        return std::min(radius() - (v - t * axis_).norm(), half_length_ - std::abs(t));
    }

    Box3 bounds() const {
        Box3 b;
        for (int i = 0; i < 3; ++i) {
            const double a = axis_[i];
            const double ext = half_length_ * std::abs(a) + radius() * std::sqrt(std::max(0.0, 1.0 - a * a));
            b.lo[i] = center_[i] - ext;
            b.hi[i] = center_[i] + ext;
        }
        return b;
    }

    double volume() const { return constants::pi * radius() * radius() * 2.0 * half_length_; }

    Tube transformed(const Eigen::Isometry3d& x) const {
        return Tube(x * center_, x.linear() * axis_, diameter_, half_length_);
    }

private:
    Vec3 center_;
    Vec3 axis_;
    double diameter_;
    double half_length_;
};

namespace detail {

// Closest distance between segments [p0,p1] and [q0,q1].
inline double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
    const Vec3 d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
    const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
    const double c = d1.dot(r), b = d1.dot(d2);
    const double denom = a * e - b * b;
    double s = denom > 1e-300 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
    double t = (b * s + f) / e;
    if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
    } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
    }
    return ((p0 + s * d1) - (q0 + t * d2)).norm();
}

// Axis segments closer than the sum of radii overlap; exact unless the closest
// approach sits on an end cap.
inline bool tubes_overlap(const Tube& a, const Tube& b) {
    return segment_distance(a.end_a(), a.end_b(), b.end_a(), b.end_b()) < a.radius() + b.radius();
}

}  // namespace detail

/// Union of tubes forming one connected vacuum region.
class CavityGeometry {
public:
    CavityGeometry(std::vector<Tube> tubes, std::vector<int> ports = {}, std::string name = {},
                   double target_frequency_hz = 0.0)
        : tubes_(std::move(tubes)), ports_(std::move(ports)), name_(std::move(name)),
          target_frequency_hz_(target_frequency_hz) {
        if (tubes_.empty()) throw DegenerateInputError("geometry needs at least one tube");
        for (int p : ports_)
            if (p < 0 || p >= static_cast<int>(tubes_.size()))
                throw DomainError("coupling port index out of range: " + std::to_string(p));
        if (!connected()) throw DomainError("tubes do not form a connected vacuum region");
        bounds_ = tubes_.front().bounds();
        for (const auto& t : tubes_) bounds_.expand(t.bounds());
    }

    const std::vector<Tube>& tubes() const { return tubes_; }
    const std::vector<int>& ports() const { return ports_; }
    const Box3& bounding_box() const { return bounds_; }
    const std::string& name() const { return name_; }
    /// Resonance the preset was sized for; 0 when not a preset.
    double target_frequency_hz() const { return target_frequency_hz_; }

    double min_diameter() const {
        double d = tubes_.front().diameter();
        for (const auto& t : tubes_) d = std::min(d, t.diameter());
        return d;
    }

    bool contains(const Vec3& p) const {
        return std::any_of(tubes_.begin(), tubes_.end(), [&](const Tube& t) { return t.contains(p); });
    }

    /// Lower bound on the distance from `p` to the metal; negative outside.
    double depth(const Vec3& p) const {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& t : tubes_) best = std::max(best, t.depth(p));
        return best;
    }

    CavityGeometry transformed(const Eigen::Isometry3d& x) const {
        std::vector<Tube> out;
        out.reserve(tubes_.size());
        for (const auto& t : tubes_) out.push_back(t.transformed(x));
        return CavityGeometry(std::move(out), ports_, name_, target_frequency_hz_);
    }

private:
    bool connected() const {
        const std::size_t n = tubes_.size();
        std::vector<int> parent(n);
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int i) {
            while (parent[i] != i) i = parent[i] = parent[parent[i]];
            return i;
        };
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (detail::tubes_overlap(tubes_[i], tubes_[j])) parent[find(int(i))] = find(int(j));
        const int root = find(0);
        for (std::size_t i = 1; i < n; ++i)
            if (find(int(i)) != root) return false;
        return true;
    }

    std::vector<Tube> tubes_;
    std::vector<int> ports_;
    std::string name_;
    double target_frequency_hz_;
    Box3 bounds_;
};

/// Analytic cutoff of the lowest (TE11) mode of a circular guide.
struct CutoffSpec {
    double mode_constant = constants::te11_root;
    double diameter = 0.0;
    double cutoff_frequency = 0.0;
};

inline double cutoff_frequency(double diameter, double mode_constant = constants::te11_root) {
    if (!(diameter > 0.0)) throw DomainError("cutoff_frequency: diameter must be positive");
    return mode_constant * constants::c / (constants::pi * diameter);
}

inline CutoffSpec cutoff_spec(double diameter) {
    return CutoffSpec{constants::te11_root, diameter, cutoff_frequency(diameter)};
}

/// Free-space wavelength whose cutoff radius equals d/2, i.e. the largest drill
/// diameter that stays evanescent at wavelength lambda.
inline double evanescent_cutoff_length(double wavelength) {
    return constants::te11_root * wavelength / constants::pi;
}

// ---------------------------------------------------------------------------
// Presets
//
// Intersections are perpendicular and pass through tube centerlines. Arm
// lengths follow the default half-length of 4 diameters. The tee stem is
// drilled through to the far wall of the tube it meets. The elbow stems run
// 0.15 d past each other's centerline; that overshoot sets how deep the mode
// is bound and was chosen to put the elbow near 109 GHz.
// ---------------------------------------------------------------------------

enum class Preset { elbow, tee, star4, cross3_hybrid, quasicyl15 };

inline constexpr std::array<std::string_view, 5> preset_names = {"elbow", "tee", "star4", "cross3_hybrid",
                                                                  "quasicyl15"};

inline Preset preset_from_name(std::string_view name) {
    for (std::size_t i = 0; i < preset_names.size(); ++i)
        if (preset_names[i] == name) return static_cast<Preset>(i);
    throw LookupError("unknown preset: " + std::string(name));
}

struct PresetOptions {
    double diameter = 0.0;               // 0 selects the preset's own drill size
    double half_length_diameters = 4.0;  // tube half-length in units of diameter
};

namespace detail {

// Tube that starts `overshoot` behind the origin and runs along +dir.
inline Tube stem(const Vec3& dir, double d, double half_length, double overshoot) {
    const Vec3 u = dir.normalized();
    const double start = -overshoot;
    return Tube((start + half_length) * u, u, d, half_length);
}

inline Tube through(const Vec3& dir, double d, double half_length) { return Tube(Vec3::Zero(), dir, d, half_length); }

}  // namespace detail

inline CavityGeometry preset(Preset which, const PresetOptions& opt = {}) {
    using detail::stem;
    using detail::through;
    const Vec3 ex = Vec3::UnitX(), ey = Vec3::UnitY(), ez = Vec3::UnitZ();
    const double d_std = 1.6e-3, d_hybrid = 1.5e-3;
    switch (which) {
        case Preset::elbow: {
            // Two stems meeting at their ends: an L.
            const double d = opt.diameter > 0 ? opt.diameter : d_std;
            const double hl = opt.half_length_diameters * d;
            return CavityGeometry({stem(ex, d, hl, 0.15 * d), stem(ey, d, hl, 0.15 * d)}, {1}, "elbow", 109e9);
        }
        case Preset::tee: {
            // Through-tube along x, stem along y ending at the far wall.
            const double d = opt.diameter > 0 ? opt.diameter : d_std;
            const double hl = opt.half_length_diameters * d;
            return CavityGeometry({through(ex, d, hl), stem(ey, d, hl, 0.5 * d)}, {1}, "tee", 98e9);
        }
        case Preset::star4: {
            // Four arms in a plane: two through-tubes crossing at right angles.
            const double d = opt.diameter > 0 ? opt.diameter : d_std;
            const double hl = opt.half_length_diameters * d;
            return CavityGeometry({through(ex, d, hl), through(ey, d, hl)}, {1}, "star4", 92e9);
        }
        case Preset::cross3_hybrid: {
            // x: atom transport, y: mm-wave coupling, z: optical axis.
            const double d = opt.diameter > 0 ? opt.diameter : d_hybrid;
            const double hl = opt.half_length_diameters * d;
            return CavityGeometry({through(ex, d, hl), through(ey, d, hl), through(ez, d, hl)}, {1},
                                  "cross3_hybrid", 98.2e9);
        }
        case Preset::quasicyl15: {
            // 15 parallel bores: one on axis, rings of 6 and 8 at 0.75 d and 1.5 d.
            const double d = opt.diameter > 0 ? opt.diameter : d_std;
            const double hl = opt.half_length_diameters * d;
            std::vector<Tube> tubes{through(ez, d, hl)};
            auto ring = [&](int count, double radius, double phase) {
                for (int i = 0; i < count; ++i) {
                    const double a = phase + 2.0 * constants::pi * i / count;
                    tubes.emplace_back(Vec3(radius * std::cos(a), radius * std::sin(a), 0.0), ez, d, hl);
                }
            };
            ring(6, 0.75 * d, 0.0);
            ring(8, 1.5 * d, constants::pi / 8.0);
            return CavityGeometry(std::move(tubes), {}, "quasicyl15", 30e9);
        }
    }
    throw LookupError("unknown preset");
}

inline CavityGeometry preset(std::string_view name, const PresetOptions& opt = {}) {
    return preset(preset_from_name(name), opt);
}

// ---------------------------------------------------------------------------
// JSON: {tubes: [{center, axis, diameter_m, half_length_m}], ports: [indices]}
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const CavityGeometry& g) {
    nlohmann::json tubes = nlohmann::json::array();
    for (const auto& t : g.tubes()) {
        tubes.push_back({{"center", {t.center().x(), t.center().y(), t.center().z()}},
                         {"axis", {t.axis().x(), t.axis().y(), t.axis().z()}},
                         {"diameter_m", t.diameter()},
                         {"half_length_m", t.half_length()}});
    }
    nlohmann::json j = {{"tubes", tubes}, {"ports", g.ports()}};
    if (!g.name().empty()) j["name"] = g.name();
    if (g.target_frequency_hz() > 0) j["target_frequency_hz"] = g.target_frequency_hz();
    return j;
}

inline CavityGeometry geometry_from_json(const nlohmann::json& j) {
    auto vec3 = [](const nlohmann::json& a, const char* what) {
        if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() || !a[2].is_number())
            throw UsageError("expected a 3-vector", what);
        return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    };
    if (!j.contains("tubes") || !j["tubes"].is_array()) throw UsageError("missing array", "tubes");
    auto num = [](const nlohmann::json& t, const char* key, const char* what) {
        if (!t.contains(key) || !t[key].is_number()) throw UsageError("expected a number", what);
        return t[key].get<double>();
    };
    auto vec = [&](const nlohmann::json& t, const char* key, const char* what) {
        if (!t.contains(key)) throw UsageError("missing field", what);
        return vec3(t[key], what);
    };
    std::vector<Tube> tubes;
    for (const auto& t : j["tubes"]) {
        if (!t.is_object()) throw UsageError("expected an object", "tubes[]");
        const Vec3 c = vec(t, "center", "tubes[].center"), a = vec(t, "axis", "tubes[].axis");
        const double d = num(t, "diameter_m", "tubes[].diameter_m"), hl = num(t, "half_length_m", "tubes[].half_length_m");
        tubes.emplace_back(c, a, d, hl);
    }
    std::vector<int> ports = j.value("ports", std::vector<int>{});
    return CavityGeometry(std::move(tubes), std::move(ports), j.value("name", std::string{}),
                          j.value("target_frequency_hz", 0.0));
}

}  // namespace mmcav
