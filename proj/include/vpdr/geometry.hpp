#pragma once
#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "vpdr/constants.hpp"

namespace vpdr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// One of the four cube-diagonal NV orientation classes.  The rotation maps
// crystal coordinates to the NV-local frame with local z along the axis;
// local x is fixed later by the MW projection (see local_frame_for).
struct NvOrientation {
    int index = 0;
    std::string label;
    Vec3 axis;
};

inline const std::array<NvOrientation, 4>& nv_axes() {
    static const std::array<NvOrientation, 4> axes = [] {
        const double s = 1.0 / std::sqrt(3.0);
        std::array<NvOrientation, 4> a;
        a[0] = {0, "<111>", Vec3(s, s, s)};
        a[1] = {1, "<-111>", Vec3(-s, s, s)};
        a[2] = {2, "<1-11>", Vec3(s, -s, s)};
        a[3] = {3, "<11-1>", Vec3(s, s, -s)};
        return a;
    }();
    return axes;
}

inline Vec3 mw_direction_from_angles(double theta_deg, double phi_deg) {
    const double th = deg_to_rad(theta_deg), ph = deg_to_rad(phi_deg);
    return Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th));
}

struct LocalFieldDecomposition {
    double b_axial = 0.0;  // signed projection on the NV axis, tesla
    double b_perp = 0.0;   // transverse magnitude, tesla
    Vec3 local_x;          // unit direction of the transverse part (crystal coords)
};

// Deterministic perpendicular fallback for fields parallel to the axis.
inline Vec3 any_perpendicular(const Vec3& z) {
    Vec3 cand = Vec3::UnitX() - z.x() * z;
    if (cand.norm() < 1e-8) cand = Vec3::UnitY() - z.y() * z;
    return cand.normalized();
}

inline LocalFieldDecomposition project_field(const Vec3& b, const NvOrientation& o) {
    LocalFieldDecomposition d;
    d.b_axial = b.dot(o.axis);
    const Vec3 perp = b - d.b_axial * o.axis;
    d.b_perp = perp.norm();
    // Below roundoff scale the residual direction is noise; fall back.
    const bool resolved = d.b_perp > 1e-12 * b.norm();
    d.local_x = resolved ? Vec3(perp / d.b_perp) : any_perpendicular(o.axis);
    if (!resolved) d.b_perp = 0.0;
    return d;
}

// Rotation taking crystal coordinates to the NV-local frame: rows are
// (x_loc, y_loc, z_loc), with z_loc along the axis and x_loc along the
// transverse MW projection.
inline Mat3 local_frame_for(const NvOrientation& o, const Vec3& b_mw) {
    const Vec3 z = o.axis;
    const LocalFieldDecomposition mw = project_field(b_mw, o);
    const Vec3 x = mw.local_x;
    const Vec3 y = z.cross(x);
    Mat3 r;
    r.row(0) = x;
    r.row(1) = y;
    r.row(2) = z;
    return r;
}

inline std::array<double, 4> rabi_frequencies(const Vec3& b_mw, double gamma = gamma_e) {
    std::array<double, 4> w;
    for (const auto& o : nv_axes()) w[o.index] = gamma * b_mw.cross(o.axis).norm();
    return w;
}

} // namespace vpdr
