#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vpdr/constants.hpp"
#include "vpdr/fitting.hpp"
#include "vpdr/geometry.hpp"
#include "vpdr/lindblad.hpp"
#include "vpdr/parallel.hpp"
#include "vpdr/spectral.hpp"

namespace vpdr {

// Sum of decaying sinusoids with a shared decay time and frequencies locked
// to 2|omega0 + m_I A|; single-line mode keeps only the m_I = 0 term.
struct RamseyFitModel {
    double omega0 = 0.0;      // rad/s
    double decay_time = 0.0;  // s
    std::array<double, 3> amplitudes{};  // m_I = -1, 0, +1
    std::array<double, 3> phases{};
    double offset = 0.0;
    bool hyperfine = true;

    double value(double tau, double a) const {
        const double damp = std::exp(-2.0 * tau / decay_time);
        double v = offset;
        for (int m = -1; m <= 1; ++m) {
            if (!hyperfine && m != 0) continue;
            const std::size_t i = static_cast<std::size_t>(m + 1);
            v += amplitudes[i] * damp *
                 std::cos(2.0 * std::abs(omega0 + m * a) * tau + phases[i]);
        }
        return v;
    }

    // Highest-frequency hyperfine component; the line reported by inversions.
    double omega_fit(double a) const {
        return hyperfine ? 2.0 * (std::abs(omega0) + a) : 2.0 * std::abs(omega0);
    }
};

struct RamseyFit {
    RamseyFitModel model;
    FitResult diagnostics;
};

namespace detail {

// The solver works in microsecond units so that frequencies, decay rates and
// amplitudes share a comparable scale.
inline Eigen::VectorXd pack_ramsey(const RamseyFitModel& m) {
    const int n = m.hyperfine ? 9 : 5;
    Eigen::VectorXd p(n);
    p(0) = m.omega0 * 1e-6;
    p(1) = 1e-6 / m.decay_time;  // inverse decay, 1/us
    if (m.hyperfine) {
        for (int i = 0; i < 3; ++i) {
            p(2 + i) = m.amplitudes[static_cast<std::size_t>(i)];
            p(5 + i) = m.phases[static_cast<std::size_t>(i)];
        }
        p(8) = m.offset;
    } else {
        p(2) = m.amplitudes[1];
        p(3) = m.phases[1];
        p(4) = m.offset;
    }
    return p;
}

inline RamseyFitModel unpack_ramsey(const Eigen::VectorXd& p, bool hyperfine) {
    RamseyFitModel m;
    m.hyperfine = hyperfine;
    m.omega0 = p(0) * 1e6;
    m.decay_time = 1e-6 / p(1);
    if (hyperfine) {
        for (int i = 0; i < 3; ++i) {
            m.amplitudes[static_cast<std::size_t>(i)] = p(2 + i);
            m.phases[static_cast<std::size_t>(i)] = p(5 + i);
        }
        m.offset = p(8);
    } else {
        m.amplitudes[1] = p(2);
        m.phases[1] = p(3);
        m.offset = p(4);
    }
    return m;
}

} // namespace detail

inline RamseyFit fit_ramsey(const std::vector<double>& tau_axis, const Eigen::VectorXd& y,
                            double a, const RamseyFitModel& initial,
                            const FitOptions& options = {}) {
    const int n = static_cast<int>(tau_axis.size());
    if (y.size() != n) throw std::invalid_argument("trace and tau axis lengths differ");
    const bool hf = initial.hyperfine;
    const int n_params = hf ? 9 : 5;
    if (n < 2 * n_params)
        throw std::invalid_argument("trace shorter than twice the parameter count");

    const double a_us = a * 1e-6;
    std::vector<double> tu(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) tu[static_cast<std::size_t>(k)] = tau_axis[static_cast<std::size_t>(k)] * 1e6;

    auto eval = [&](const Eigen::VectorXd& p) {
        Eigen::VectorXd r(n);
        Eigen::MatrixXd jac(n, n_params);
        const double w0 = p(0), q = p(1);
        for (int k = 0; k < n; ++k) {
            const double tau = tu[static_cast<std::size_t>(k)];
            const double damp = std::exp(-2.0 * q * tau);
            double v = hf ? p(8) : p(4);
            double dw0 = 0.0, dq = 0.0;
            for (int m = -1; m <= 1; ++m) {
                if (!hf && m != 0) continue;
                const int i = hf ? m + 1 : 0;
                const double amp = p(2 + i), ph = hf ? p(5 + i) : p(3);
                const double line = w0 + m * a_us;
                const double sgn = line >= 0.0 ? 1.0 : -1.0;
                const double arg = 2.0 * std::abs(line) * tau + ph;
                const double c = std::cos(arg), s = std::sin(arg);
                v += amp * damp * c;
                dw0 += amp * damp * (-s) * 2.0 * tau * sgn;
                dq += amp * (-2.0 * tau) * damp * c;
                jac(k, 2 + i) = damp * c;
                jac(k, hf ? 5 + i : 3) = -amp * damp * s;
            }
            r(k) = v - y(k);
            jac(k, 0) = dw0;
            jac(k, 1) = dq;
            jac(k, n_params - 1) = 1.0;
        }
        return std::pair<Eigen::VectorXd, Eigen::MatrixXd>(std::move(r), std::move(jac));
    };

    RamseyFit out;
    out.diagnostics = levenberg_marquardt(eval, detail::pack_ramsey(initial), options);
    out.model = detail::unpack_ramsey(out.diagnostics.params, hf);
    return out;
}

// Strongest free-evolution tone of a trace, by complex projection magnitude
// on a frequency grid with three-point quadratic refinement.
inline double dominant_tone(const std::vector<double>& tau_axis, const Eigen::VectorXd& y,
                            double omega_min, double omega_max, double step) {
    if (!(omega_max > omega_min) || !(step > 0.0))
        throw std::invalid_argument("bad tone search range");
    const int n = static_cast<int>(tau_axis.size());
    const double mean = y.mean();
    std::vector<double> mag;
    std::vector<double> omegas;
    for (double w = omega_min; w <= omega_max; w += step) {
        std::complex<double> acc = 0.0;
        for (int k = 0; k < n; ++k)
            acc += (y(k) - mean) *
                   std::exp(std::complex<double>(0.0, -w * tau_axis[static_cast<std::size_t>(k)]));
        omegas.push_back(w);
        mag.push_back(std::abs(acc));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < mag.size(); ++i)
        if (mag[i] > mag[best]) best = i;
    double w = omegas[best];
    if (best > 0 && best + 1 < mag.size()) {
        const double den = mag[best - 1] - 2.0 * mag[best] + mag[best + 1];
        if (std::abs(den) > 1e-300) w += 0.5 * (mag[best - 1] - mag[best + 1]) / den * step;
    }
    return w;
}

// Seed policy: the strongest mean-subtracted tone may belong to any hyperfine
// line, so try all three assignments and keep the lowest-cost fit.
inline RamseyFit fit_ramsey_seeded(const std::vector<double>& tau_axis, const Eigen::VectorXd& y,
                                   double a, double decay_hint, bool hyperfine,
                                   const FitOptions& options = {}) {
    const double dtau = tau_axis.size() > 1 ? tau_axis[1] - tau_axis[0] : 1e-9;
    const double nyquist = 0.5 * two_pi / dtau;
    const int n = static_cast<int>(tau_axis.size());

    const double span = tau_axis.back() - tau_axis.front();
    double decay = decay_hint;
    if (!(decay > 0.0) || !std::isfinite(decay)) decay = span;

    // The non-oscillating decaying background has low-frequency spectral
    // weight that can outshine the fringes; remove it before the tone search.
    Eigen::MatrixXd base(n, 2);
    for (int k = 0; k < n; ++k) {
        const double tau = tau_axis[static_cast<std::size_t>(k)];
        base(k, 0) = 1.0;
        base(k, 1) = std::exp(-2.0 * tau / decay);
    }
    const Eigen::VectorXd detrended = y - base * base.colPivHouseholderQr().solve(y);
    const double peak =
        dominant_tone(tau_axis, detrended, two_pi * 0.02e6, 0.98 * nyquist, two_pi * 0.01e6);

    const double spread = std::sqrt((y.array() - y.mean()).square().mean());
    std::vector<double> seeds;
    if (hyperfine)
        seeds = {0.5 * peak - a, 0.5 * peak, 0.5 * peak + a};
    else
        seeds = {0.5 * peak};

    RamseyFit best;
    best.diagnostics.cost = std::numeric_limits<double>::infinity();
    for (double w0 : seeds) {
        RamseyFitModel guess;
        guess.hyperfine = hyperfine;
        guess.omega0 = w0;
        guess.decay_time = decay;
        guess.offset = y.mean();
        for (auto& amp : guess.amplitudes) amp = std::max(spread, 1e-6);
        RamseyFit fit = fit_ramsey(tau_axis, y, a, guess, options);
        if (fit.diagnostics.cost < best.diagnostics.cost) best = fit;
    }
    return best;
}

struct RabiEstimates {
    std::array<double, 4> omega{};  // rad/s, indexed by orientation
    std::array<bool, 4> ok{};
    std::string message;
    bool all_ok() const { return ok[0] && ok[1] && ok[2] && ok[3]; }
};

// Peak-based Rabi estimation from a pulse-duration spectrum. Peaks are
// assigned to orientations by the expected ascending order; optional
// predicted values trip an error when the assignment disagrees with
// proximity, i.e. when drift has reordered the peaks.
inline RabiEstimates estimate_rabi(const std::vector<double>& nu_axis,
                                   const Eigen::VectorXd& spectrum,
                                   const std::array<int, 4>& ascending_order,
                                   const std::optional<std::array<double, 4>>& predicted =
                                       std::nullopt,
                                   double prominence_frac = 0.02) {
    if (nu_axis.size() != static_cast<std::size_t>(spectrum.size()))
        throw std::invalid_argument("spectrum and axis lengths differ");
    RabiEstimates out;

    const double floor =
        spectrum.minCoeff() + prominence_frac * (spectrum.maxCoeff() - spectrum.minCoeff());
    struct Peak {
        double nu, value;
    };
    std::vector<Peak> peaks;
    for (int i = 1; i + 1 < spectrum.size(); ++i) {
        if (!(spectrum(i) > spectrum(i - 1) && spectrum(i) >= spectrum(i + 1))) continue;
        if (spectrum(i) < floor) continue;
        double nu = nu_axis[static_cast<std::size_t>(i)];
        const double den = spectrum(i - 1) - 2.0 * spectrum(i) + spectrum(i + 1);
        if (std::abs(den) > 1e-300)
            nu += 0.5 * (spectrum(i - 1) - spectrum(i + 1)) / den *
                  (nu_axis[static_cast<std::size_t>(i + 1)] - nu_axis[static_cast<std::size_t>(i)]);
        peaks.push_back({nu, spectrum(i)});
    }
    std::sort(peaks.begin(), peaks.end(),
              [](const Peak& a, const Peak& b) { return a.value > b.value; });
    if (peaks.size() > 4) peaks.resize(4);
    std::sort(peaks.begin(), peaks.end(),
              [](const Peak& a, const Peak& b) { return a.nu < b.nu; });

    if (peaks.size() < 4) {
        out.message = "only " + std::to_string(peaks.size()) +
                      " resolvable spectral peaks; orientations may be degenerate";
        for (std::size_t r = 0; r < peaks.size(); ++r) {
            const auto o = static_cast<std::size_t>(ascending_order[r]);
            out.omega[o] = peaks[r].nu;
            out.ok[o] = true;
        }
        return out;
    }

    for (std::size_t r = 0; r < 4; ++r) {
        const auto o = static_cast<std::size_t>(ascending_order[r]);
        out.omega[o] = peaks[r].nu;
        out.ok[o] = true;
    }

    if (predicted) {
        // Uniform amplitude drift rescales every peak equally and keeps the
        // labeling valid; factor it out before checking for reordering.
        double peak_sum = 0.0, pred_sum = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            peak_sum += peaks[r].nu;
            pred_sum += (*predicted)[static_cast<std::size_t>(ascending_order[r])];
        }
        const double scale = peak_sum / pred_sum;
        for (std::size_t r = 0; r < 4; ++r) {
            const auto o = static_cast<std::size_t>(ascending_order[r]);
            std::size_t nearest = 0;
            double dist = std::abs(peaks[0].nu - scale * (*predicted)[o]);
            for (std::size_t j = 1; j < 4; ++j) {
                const double d = std::abs(peaks[j].nu - scale * (*predicted)[o]);
                if (d < dist) {
                    dist = d;
                    nearest = j;
                }
            }
            if (nearest != r)
                throw std::runtime_error(
                    "spectral peaks crossed their expected order; drift exceeds the "
                    "order-preservation tolerance of the labeling");
        }
    }
    return out;
}

struct OrientationInversion {
    int orientation = -1;
    bool ok = false;
    std::string message;
    double omega_rabi_est = 0.0;  // rad/s
    double omega_fit = 0.0;       // rad/s
    double omega_exact = 0.0;     // rad/s
    double delta_b = 0.0;         // tesla
    RamseyFitModel model;
    double fit_cost = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct InversionReport {
    std::vector<OrientationInversion> rows;

    const OrientationInversion& row(int orientation) const {
        for (const auto& r : rows)
            if (r.orientation == orientation) return r;
        throw std::out_of_range("orientation not in report");
    }
    double max_abs_delta_b() const {
        double m = 0.0;
        for (const auto& r : rows)
            if (r.ok) m = std::max(m, std::abs(r.delta_b));
        return m;
    }
};

struct InversionOptions {
    WindowKind window = WindowKind::blackman;
    std::optional<std::array<double, 4>> known_rabi;  // rad/s; unset = self-calibrated
    double rabi_axis_step = two_pi * 0.2e6;           // rad/s
    FitOptions fit;
};

inline std::array<int, 4> rabi_ascending_order(const std::array<double, 4>& omegas) {
    std::array<int, 4> order{0, 1, 2, 3};
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return omegas[static_cast<std::size_t>(a)] < omegas[static_cast<std::size_t>(b)]; });
    return order;
}

// Full pipeline: per-orientation Rabi frequency (given or spectrum-estimated),
// pulse-duration projection, hyperfine-constrained fit, error vs the exact
// level splitting expressed as an equivalent axial field.
inline InversionReport invert(const SignalGrid& s, const VpdrConfig& cfg,
                              const InversionOptions& options = {}) {
    if (!s.phase_summed)
        throw std::invalid_argument("inversion requires a phase-summed (SQ-cancelled) signal");

    const auto predicted = rabi_frequencies(cfg.b_mw);
    RabiEstimates est;
    if (!options.known_rabi) {
        // Window the search to the fundamental band: half- and
        // three-half-harmonics of other orientations lie outside it for any
        // drive direction with the labeling-friendly spread below 3:2.
        std::vector<double> nu_axis;
        const double lo = 0.9 * *std::min_element(predicted.begin(), predicted.end());
        const double hi = std::min(1.08 * *std::max_element(predicted.begin(), predicted.end()),
                                   0.98 * 0.5 * two_pi / s.config.t_grid.step);
        for (double nu = lo; nu <= hi; nu += options.rabi_axis_step) nu_axis.push_back(nu);
        const Eigen::VectorXd spec = rabi_spectrum(s, nu_axis, options.window);
        est = estimate_rabi(nu_axis, spec, rabi_ascending_order(predicted), predicted);
    }

    const auto transitions = exact_transitions(cfg);
    const bool hyperfine = cfg.m_i_values.size() > 1;
    const double nyquist_tau = 0.5 * two_pi / s.config.tau_grid.step;

    InversionReport report;
    for (int o : cfg.orientations) {
        OrientationInversion row;
        row.orientation = o;
        row.omega_rabi_est = options.known_rabi ? (*options.known_rabi)[static_cast<std::size_t>(o)]
                                                : (est.ok[static_cast<std::size_t>(o)]
                                                       ? est.omega[static_cast<std::size_t>(o)]
                                                       : 0.0);
        for (const auto& tr : transitions)
            if (tr.orientation == o) row.omega_exact = std::max(row.omega_exact, tr.delta_omega);

        if (row.omega_rabi_est <= 0.0) {
            row.message = est.message.empty() ? "no usable Rabi estimate" : est.message;
            report.rows.push_back(row);
            continue;
        }
        if (row.omega_exact > 0.999 * nyquist_tau) {
            row.message =
                "transition frequency exceeds the free-evolution Nyquist limit; "
                "the field is outside the sampling dynamic range";
            report.rows.push_back(row);
            continue;
        }

        try {
            const Eigen::VectorXd trace = f_trace(s, row.omega_rabi_est, options.window);
            const RamseyFit fit =
                fit_ramsey_seeded(s.tau_axis, trace, cfg.hyperfine_a, cfg.t2_star, hyperfine,
                                  options.fit);
            row.model = fit.model;
            row.fit_cost = fit.diagnostics.cost;
            row.iterations = fit.diagnostics.iterations;
            row.converged = fit.diagnostics.converged;
            row.omega_fit = fit.model.omega_fit(cfg.hyperfine_a);
            row.delta_b = (row.omega_fit - row.omega_exact) / (2.0 * gamma_e);
            row.ok = fit.diagnostics.converged;
            if (!row.ok) row.message = fit.diagnostics.message;
        } catch (const std::exception& e) {
            row.message = e.what();
        }
        report.rows.push_back(row);
    }
    return report;
}

struct SweepPoint {
    double theta_deg = 0.0;
    double phi_deg = 0.0;
    double omega_max = 0.0;  // rad/s, MW amplitude sweeps
    bool ok = false;
    std::string message;
    InversionReport report;
};

// Field-direction accuracy map: simulate and invert per direction at fixed
// field magnitude. Failures are recorded and the sweep continues.
inline std::vector<SweepPoint> accuracy_sweep(const VpdrConfig& base,
                                              const std::vector<std::pair<double, double>>& dirs_deg,
                                              double b_magnitude,
                                              const InversionOptions& options = {},
                                              int n_threads = 1) {
    return parallel_map<SweepPoint>(dirs_deg.size(), n_threads, [&](std::size_t i) {
        SweepPoint pt;
        pt.theta_deg = dirs_deg[i].first;
        pt.phi_deg = dirs_deg[i].second;
        try {
            VpdrConfig cfg = base;
            cfg.b_dc = b_magnitude * mw_direction_from_angles(pt.theta_deg, pt.phi_deg);
            cfg.validate();
            pt.report = invert(simulate_grid(cfg), cfg, options);
            pt.ok = true;
        } catch (const std::exception& e) {
            pt.message = e.what();
        }
        return pt;
    });
}

// MW-robustness maps; inversions run self-calibrated (no known_rabi).
inline std::vector<SweepPoint> robustness_amplitude_sweep(const VpdrConfig& base,
                                                          const std::vector<double>& omega_max,
                                                          const InversionOptions& options = {},
                                                          int n_threads = 1) {
    InversionOptions opt = options;
    opt.known_rabi.reset();
    const Vec3 dir = base.b_mw.normalized();
    return parallel_map<SweepPoint>(omega_max.size(), n_threads, [&](std::size_t i) {
        SweepPoint pt;
        pt.omega_max = omega_max[i];
        try {
            VpdrConfig cfg = base;
            cfg.b_mw = VpdrConfig::mw_field_from_peak_rabi(omega_max[i], dir);
            cfg.validate();
            pt.report = invert(simulate_grid(cfg), cfg, opt);
            pt.ok = true;
        } catch (const std::exception& e) {
            pt.message = e.what();
        }
        return pt;
    });
}

inline std::vector<SweepPoint> robustness_angle_sweep(const VpdrConfig& base,
                                                      const std::vector<std::pair<double, double>>& angles_deg,
                                                      double omega_max,
                                                      const InversionOptions& options = {},
                                                      int n_threads = 1) {
    InversionOptions opt = options;
    opt.known_rabi.reset();
    return parallel_map<SweepPoint>(angles_deg.size(), n_threads, [&](std::size_t i) {
        SweepPoint pt;
        pt.theta_deg = angles_deg[i].first;
        pt.phi_deg = angles_deg[i].second;
        pt.omega_max = omega_max;
        try {
            VpdrConfig cfg = base;
            cfg.b_mw = VpdrConfig::mw_field_from_peak_rabi(
                omega_max, mw_direction_from_angles(pt.theta_deg, pt.phi_deg));
            cfg.validate();
            pt.report = invert(simulate_grid(cfg), cfg, opt);
            pt.ok = true;
        } catch (const std::exception& e) {
            pt.message = e.what();
        }
        return pt;
    });
}

} // namespace vpdr
