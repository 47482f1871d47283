#pragma once
#include <cmath>

namespace vpdr {

inline constexpr double two_pi = 6.283185307179586476925286766559;

// electron gyromagnetic ratio for the NV ground state, rad/s per tesla
inline constexpr double gamma_e = two_pi * 28.024e9;

// zero-field splitting, rad/s
inline constexpr double zfs_default = two_pi * 2.87e9;

// axial 14N hyperfine coupling, rad/s
inline constexpr double hyperfine_a_default = two_pi * 2.16e6;

// The single audited boundary between interface units (cycles, MHz) and
// internal angular frequencies (rad/s).
inline constexpr double mhz_to_rad_s(double mhz) { return two_pi * 1e6 * mhz; }
inline constexpr double rad_s_to_mhz(double w) { return w / (two_pi * 1e6); }

inline constexpr double deg_to_rad(double deg) { return deg * (two_pi / 360.0); }
inline constexpr double rad_to_deg(double rad) { return rad * (360.0 / two_pi); }

} // namespace vpdr
