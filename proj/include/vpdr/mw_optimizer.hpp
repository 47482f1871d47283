#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "vpdr/constants.hpp"
#include "vpdr/geometry.hpp"
#include "vpdr/parallel.hpp"

namespace vpdr {

// Harmonic multiples that produce spectral collisions between orientations'
// pulse-duration features.
inline const std::array<double, 4>& harmonic_multiples() {
    static const std::array<double, 4> n = {0.5, 1.0, 1.5, 2.0};
    return n;
}

struct SeparationResult {
    double theta_deg = 0.0;
    double phi_deg = 0.0;
    double min_separation_frac = 0.0;  // fraction of the peak Rabi frequency
    int pair_i = -1;
    int pair_j = -1;
    double pair_n = 0.0;
    std::array<double, 4> rabi_fracs{};

    double min_rabi_frac() const {
        return *std::min_element(rabi_fracs.begin(), rabi_fracs.end());
    }
};

// Per-orientation Rabi frequency as a fraction of the drive's peak value:
// the transverse share of a unit drive along `direction`.
inline std::array<double, 4> rabi_fractions(const Vec3& direction) {
    const Vec3 d = direction.normalized();
    std::array<double, 4> f{};
    for (const auto& o : nv_axes())
        f[static_cast<std::size_t>(o.index)] = o.axis.cross(d).norm();
    return f;
}

inline SeparationResult min_harmonic_separation(const Vec3& direction) {
    SeparationResult r;
    r.rabi_fracs = rabi_fractions(direction);
    r.min_separation_frac = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            if (i == j) continue;
            for (double n : harmonic_multiples()) {
                const double sep = std::abs(r.rabi_fracs[static_cast<std::size_t>(i)] -
                                            n * r.rabi_fracs[static_cast<std::size_t>(j)]);
                if (sep < r.min_separation_frac) {
                    r.min_separation_frac = sep;
                    r.pair_i = i;
                    r.pair_j = j;
                    r.pair_n = n;
                }
            }
        }
    return r;
}

inline SeparationResult min_harmonic_separation_angles(double theta_deg, double phi_deg) {
    SeparationResult r = min_harmonic_separation(mw_direction_from_angles(theta_deg, phi_deg));
    r.theta_deg = theta_deg;
    r.phi_deg = phi_deg;
    return r;
}

struct OptimizeRange {
    double lo_deg = 0.0;
    double hi_deg = 0.0;
    std::vector<double> grid(double step_deg) const {
        std::vector<double> g;
        for (double v = lo_deg; v <= hi_deg + 1e-9; v += step_deg) g.push_back(v);
        return g;
    }
};

// Grid search over the symmetry-reduced wedge, keeping directions whose
// smallest Rabi fraction clears the constraint, then one subdivision pass
// (step/10) around each surviving grid-local maximum. Ranked best-first.
inline std::vector<SeparationResult> optimize_direction(
    const OptimizeRange& theta, const OptimizeRange& phi, double step_deg,
    std::optional<double> constraint_min_rabi_frac = std::nullopt, int n_threads = 1) {
    if (!(step_deg > 0.0)) throw std::invalid_argument("step must be positive");
    const auto thetas = theta.grid(step_deg);
    const auto phis = phi.grid(step_deg);
    const std::size_t nt = thetas.size(), np = phis.size();

    auto feasible = [&](const SeparationResult& r) {
        return !constraint_min_rabi_frac || r.min_rabi_frac() >= *constraint_min_rabi_frac;
    };

    const auto cells = parallel_map<SeparationResult>(nt * np, n_threads, [&](std::size_t idx) {
        return min_harmonic_separation_angles(thetas[idx / np], phis[idx % np]);
    });

    auto value = [&](std::size_t a, std::size_t b) -> double {
        const auto& c = cells[a * np + b];
        return feasible(c) ? c.min_separation_frac : -1.0;
    };

    std::vector<SeparationResult> maxima;
    for (std::size_t a = 0; a < nt; ++a)
        for (std::size_t b = 0; b < np; ++b) {
            const double v = value(a, b);
            if (v < 0.0) continue;
            bool top = true;
            for (int da = -1; da <= 1 && top; ++da)
                for (int db = -1; db <= 1 && top; ++db) {
                    if (da == 0 && db == 0) continue;
                    const std::ptrdiff_t aa = static_cast<std::ptrdiff_t>(a) + da;
                    const std::ptrdiff_t bb = static_cast<std::ptrdiff_t>(b) + db;
                    if (aa < 0 || bb < 0 || aa >= static_cast<std::ptrdiff_t>(nt) ||
                        bb >= static_cast<std::ptrdiff_t>(np))
                        continue;
                    if (value(static_cast<std::size_t>(aa), static_cast<std::size_t>(bb)) > v)
                        top = false;
                }
            if (top) maxima.push_back(cells[a * np + b]);
        }
    if (maxima.empty())
        throw std::runtime_error("no feasible direction satisfies the Rabi-fraction constraint");

    for (auto& m : maxima) {
        const double fine = step_deg / 10.0;
        SeparationResult best = m;
        for (double t = m.theta_deg - step_deg; t <= m.theta_deg + step_deg + 1e-9; t += fine)
            for (double p = m.phi_deg - step_deg; p <= m.phi_deg + step_deg + 1e-9; p += fine) {
                if (t < theta.lo_deg - 1e-9 || t > theta.hi_deg + 1e-9 || p < phi.lo_deg - 1e-9 ||
                    p > phi.hi_deg + 1e-9)
                    continue;
                const SeparationResult cand = min_harmonic_separation_angles(t, p);
                if (feasible(cand) && cand.min_separation_frac > best.min_separation_frac)
                    best = cand;
            }
        m = best;
    }

    std::sort(maxima.begin(), maxima.end(), [](const SeparationResult& x, const SeparationResult& y) {
        if (x.min_separation_frac != y.min_separation_frac)
            return x.min_separation_frac > y.min_separation_frac;
        if (x.theta_deg != y.theta_deg) return x.theta_deg < y.theta_deg;
        return x.phi_deg < y.phi_deg;
    });
    return maxima;
}

} // namespace vpdr
