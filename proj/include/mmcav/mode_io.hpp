#pragma once

// Mode export: JSON summary and raw float32 field dumps with a JSON sidecar.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmcav/errors.hpp"
#include "mmcav/modesolver.hpp"

namespace mmcav {

inline nlohmann::json mode_summary(const EigenMode& m) {
    return {{"f_hz", m.frequency_hz},
            {"v_m3", m.mode_volume_m3},
            {"v_over_lambda3", m.mode_volume_ratio},
            {"residual", m.residual},
            {"divergence_fraction", m.divergence_fraction},
            {"normalization", EigenMode::normalization}};
}

namespace detail {

inline void write_f32_le(std::ofstream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Edge-sampled E as float32 little-endian, shape [3][nz+1][ny+1][nx+1]
/// (x fastest). Component c of node (i,j,k) sits at node + h/2 e_c; metal
/// edges hold 0. Returns the sidecar document, also written to `sidecar`.
inline nlohmann::json write_field_dump(const EigenMode& m, const std::filesystem::path& bin,
                                       const std::filesystem::path& sidecar) {
    const auto& dom = *m.domain;
    const auto& g = dom.grid();
    const Eigen::VectorXd e = m.edge_field();
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw Error("cannot open " + bin.string() + " for writing");
    for (int c = 0; c < 3; ++c)
        for (int k = 0; k <= g.nz; ++k)
            for (int j = 0; j <= g.ny; ++j)
                for (int i = 0; i <= g.nx; ++i) {
                    const int id = dom.edge_dof(c, i, j, k);
                    detail::write_f32_le(out, id < 0 ? 0.0f : static_cast<float>(e[id]));
                }
    if (!out) throw Error("write failed: " + bin.string());
    nlohmann::json meta = {
        {"file", bin.filename().string()},
        {"dtype", "float32"},
        {"byte_order", "little"},
        {"shape", {3, g.nz + 1, g.ny + 1, g.nx + 1}},
        {"axes", {"component", "z", "y", "x"}},
        {"spacing_m", g.h},
        {"origin_m", {g.origin.x(), g.origin.y(), g.origin.z()}},
        {"sample_offset", "component c is sampled at node + 0.5*h along axis c"},
        {"units", "arbitrary; mode normalized to unit discrete electric energy"},
        {"mode", mode_summary(m)}};
    std::ofstream side(sidecar);
    if (!side) throw Error("cannot open " + sidecar.string() + " for writing");
    side << meta.dump(2) << '\n';
    return meta;
}

}  // namespace mmcav
