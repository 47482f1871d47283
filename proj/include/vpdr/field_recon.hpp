#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <vector>

#include "vpdr/constants.hpp"
#include "vpdr/fitting.hpp"
#include "vpdr/geometry.hpp"

namespace vpdr {

// One spectral-peak pair measured at a coil voltage: the free-evolution-axis
// peak omega_max and the pulse-duration-axis peak nu_max with its harmonic
// assignment relative to the effective Rabi rate.
struct PeakObservation {
    int orientation = 0;
    double omega_max = 0.0;  // rad/s
    double nu_max = 0.0;     // rad/s
    double harmonic_n = 1.0;
    double voltage = 0.0;
};

// Unsigned axial projection implied by the outer hyperfine line at
// omega_max = 2(|omega_L| + A).
inline double projection_from_peak(double omega_max, double a = hyperfine_a_default) {
    return std::abs(omega_max - 2.0 * a) / (2.0 * gamma_e);
}

inline double bare_rabi_from_peak(const PeakObservation& peak) {
    const double eff = peak.nu_max / peak.harmonic_n;
    const double sq = eff * eff - peak.omega_max * peak.omega_max;
    if (sq < 0.0)
        throw std::domain_error(
            "peak frequencies are inconsistent with the assigned harmonic "
            "(imaginary bare Rabi rate)");
    return std::sqrt(sq);
}

// The bare Rabi rate is set by the drive, not the coil, so the correct
// harmonic assignment minimizes its spread across voltages.
struct HarmonicChoice {
    double n = 1.0;
    double spread = 0.0;  // relative spread of the implied bare Rabi rate
    std::array<double, 4> candidate_spread{};  // n = 1/2, 1, 3/2, 2
};

inline HarmonicChoice assign_harmonic(std::vector<PeakObservation> peaks) {
    if (peaks.size() < 2)
        throw std::invalid_argument("harmonic assignment needs peaks at two or more voltages");
    const std::array<double, 4> candidates = {0.5, 1.0, 1.5, 2.0};
    HarmonicChoice choice;
    std::array<double, 4> spread{};
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0, mean = 0.0;
        bool ok = true;
        for (auto p : peaks) {
            p.harmonic_n = candidates[c];
            double rabi = 0.0;
            try {
                rabi = bare_rabi_from_peak(p);
            } catch (const std::domain_error&) {
                ok = false;
                break;
            }
            lo = std::min(lo, rabi);
            hi = std::max(hi, rabi);
            mean += rabi;
        }
        mean /= static_cast<double>(peaks.size());
        spread[c] = ok && mean > 0.0 ? (hi - lo) / mean
                                     : std::numeric_limits<double>::infinity();
    }
    choice.candidate_spread = spread;
    std::size_t best = 0, second = 1;
    if (spread[1] < spread[0]) std::swap(best, second);
    for (std::size_t c = 2; c < candidates.size(); ++c) {
        if (spread[c] < spread[best]) {
            second = best;
            best = c;
        } else if (spread[c] < spread[second]) {
            second = c;
        }
    }
    if (std::isinf(spread[best]))
        throw std::runtime_error(
            "no harmonic assignment yields a real Rabi rate at every voltage");
    if (spread[second] <= 2.0 * spread[best] + 1e-12)
        throw std::runtime_error(
            "harmonic assignment is ambiguous: two candidates explain the peaks "
            "comparably well");
    choice.n = candidates[best];
    choice.spread = spread[best];
    return choice;
}

// Vector field linear in the coil voltage.
struct LinearFieldModel {
    Vec3 offset = Vec3::Zero();  // tesla
    Vec3 slope = Vec3::Zero();   // tesla per volt

    Vec3 field_at(double voltage) const { return offset + slope * voltage; }
};

// Sum of squared differences between measured unsigned projections and the
// model's unsigned projections, in tesla^2.
inline double chi_squared(const std::vector<PeakObservation>& observations,
                          const LinearFieldModel& model, double a = hyperfine_a_default) {
    double acc = 0.0;
    for (const auto& obs : observations) {
        const Vec3& axis = nv_axes()[static_cast<std::size_t>(obs.orientation)].axis;
        const double r =
            projection_from_peak(obs.omega_max, a) - std::abs(model.field_at(obs.voltage).dot(axis));
        acc += r * r;
    }
    return acc;
}

struct FieldFitResult {
    LinearFieldModel model;
    Eigen::VectorXd residuals;  // tesla, observation order
    double rms = 0.0;           // tesla
    FitResult diagnostics;      // parameters in microtesla units
};

// Fits offset and slope to unsigned projections by damped least squares.
// Unsigned data make the solution sign-degenerate (negating the whole model
// preserves the cost), so the returned branch follows the initial guess.
inline FieldFitResult fit_linear_field(const std::vector<PeakObservation>& observations,
                                       const LinearFieldModel& initial,
                                       double a = hyperfine_a_default,
                                       const FitOptions& options = {}) {
    std::set<int> orientations;
    std::set<double> voltages;
    for (const auto& obs : observations) {
        if (obs.orientation < 0 || obs.orientation > 3)
            throw std::invalid_argument("orientation index out of range");
        orientations.insert(obs.orientation);
        voltages.insert(obs.voltage);
    }
    if (orientations.size() < 3)
        throw std::invalid_argument("field fit needs observations from at least 3 orientations");
    if (voltages.size() < 3)
        throw std::invalid_argument("field fit needs observations at 3 or more voltages");

    const int m = static_cast<int>(observations.size());
    const double ut = 1e-6;  // solver works in microtesla for conditioning
    std::vector<double> proj(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k)
        proj[static_cast<std::size_t>(k)] =
            projection_from_peak(observations[static_cast<std::size_t>(k)].omega_max, a) / ut;

    auto eval = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd r(m);
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(m, 6);
        for (int k = 0; k < m; ++k) {
            const auto& obs = observations[static_cast<std::size_t>(k)];
            const Vec3& axis = nv_axes()[static_cast<std::size_t>(obs.orientation)].axis;
            const double u = (p(0) + p(3) * obs.voltage) * axis.x() +
                             (p(1) + p(4) * obs.voltage) * axis.y() +
                             (p(2) + p(5) * obs.voltage) * axis.z();
            const double sign = u < 0.0 ? -1.0 : 1.0;
            r(k) = proj[static_cast<std::size_t>(k)] - std::abs(u);
            for (int axis_i = 0; axis_i < 3; ++axis_i) {
                jac(k, axis_i) = -sign * axis(axis_i);
                jac(k, 3 + axis_i) = -sign * axis(axis_i) * obs.voltage;
            }
        }
        return std::make_pair(r, jac);
    };

    Eigen::VectorXd p0(6);
    p0 << initial.offset.x() / ut, initial.offset.y() / ut, initial.offset.z() / ut,
        initial.slope.x() / ut, initial.slope.y() / ut, initial.slope.z() / ut;
    FitResult fit = levenberg_marquardt(eval, p0, options);

    FieldFitResult out;
    out.model.offset = ut * Vec3(fit.params(0), fit.params(1), fit.params(2));
    out.model.slope = ut * Vec3(fit.params(3), fit.params(4), fit.params(5));
    out.residuals = ut * eval(fit.params).first;
    out.rms = std::sqrt(out.residuals.squaredNorm() / m);
    out.diagnostics = std::move(fit);
    return out;
}

} // namespace vpdr
