#pragma once

#include <numbers>

// SI constants (2019 exact definitions where available, CODATA 2018 otherwise).
namespace mmcav::constants {

inline constexpr double pi = std::numbers::pi;
inline constexpr double c = 299792458.0;             // m/s
inline constexpr double h = 6.62607015e-34;          // J s
inline constexpr double hbar = h / (2.0 * pi);       // J s
inline constexpr double k_B = 1.380649e-23;          // J/K
inline constexpr double e = 1.602176634e-19;         // C
inline constexpr double eps0 = 8.8541878128e-12;     // F/m
inline constexpr double mu0 = 1.25663706212e-6;      // H/m
inline constexpr double a0 = 5.29177210903e-11;      // m, Bohr radius

// Lowest zero of J1' : sets the TE11 cutoff of a circular guide.
inline constexpr double te11_root = 1.8411837813406593;

}  // namespace mmcav::constants
