#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "vpdr/constants.hpp"
#include "vpdr/geometry.hpp"
#include "vpdr/inversion.hpp"
#include "vpdr/lindblad.hpp"
#include "vpdr/parallel.hpp"
#include "vpdr/spectral.hpp"

namespace vpdr {

enum class SensitivityMethod { hard_pulse_analytic, finite_alpha_analytic, monte_carlo };

inline const char* to_string(SensitivityMethod m) {
    switch (m) {
        case SensitivityMethod::hard_pulse_analytic: return "hard_pulse_analytic";
        case SensitivityMethod::finite_alpha_analytic: return "finite_alpha_analytic";
        case SensitivityMethod::monte_carlo: return "monte_carlo";
    }
    return "?";
}

// Noise-to-slope ratio of the variable-pulse protocol relative to a fixed
// pi-pulse double-quantum Ramsey measurement at the same free evolution time.
struct SensitivityRatio {
    double ratio = 0.0;
    SensitivityMethod method = SensitivityMethod::monte_carlo;
    WindowKind window = WindowKind::boxcar;
    int trials = 0;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double max_t = 0.0;    // s
    double tau_opt = 0.0;  // s
    bool dead_zone = false;
};

struct WindowMeans {
    double mean = 1.0;
    double mean_sq = 1.0;
};

// Continuum (large-N) moments of the pulse-duration window.
inline WindowMeans window_continuum_means(WindowKind kind) {
    switch (kind) {
        case WindowKind::boxcar: return {1.0, 1.0};
        case WindowKind::blackman:
            return {0.42, 0.42 * 0.42 + 0.5 * 0.5 / 2.0 + 0.08 * 0.08 / 2.0};
        case WindowKind::cosine: return {2.0 / (0.5 * two_pi), 0.5};
    }
    return {};
}

// Relative sensitivity in the limit of instantaneous pulses: the projection
// keeps half the signal quadrature and the window trades mean weight for
// mean-square noise gain, giving 2*sqrt(2)*sqrt(mean W^2)/mean W.
inline double ratio_hard_pulse(WindowKind window) {
    const WindowMeans m = window_continuum_means(window);
    return 2.0 * std::sqrt(2.0) * std::sqrt(m.mean_sq) / m.mean;
}

// Finite drive-to-precession ratio alpha = Omega/omega_L reduces the weight
// of the extracted double-quantum component by (a^2+4)^4/|a^4(a^4-16a^2-192)|.
inline double ratio_finite_alpha(double alpha, WindowKind window) {
    const double a2 = alpha * alpha;
    const double numerator = std::pow(a2 + 4.0, 4);
    const double denominator = std::abs(a2 * a2 * (a2 * a2 - 16.0 * a2 - 192.0));
    if (denominator < 1e-9)
        throw std::domain_error(
            "sensitivity ratio is singular at this drive-to-precession ratio");
    return ratio_hard_pulse(window) * numerator / denominator;
}

// Field-derivative kernel of the double-quantum fringe, s(tau) =
// exp(-2 tau/T2*) tau sin(2 omega_L tau); its maximizer sets the optimal
// free evolution time.
inline double slope_function(double tau, double omega_l, double t2_star) {
    return std::exp(-2.0 * tau / t2_star) * tau * std::sin(2.0 * omega_l * tau);
}

// s(T2*) for omega_L much smaller than 1/T2*.
inline double slope_small_field_limit(double omega_l, double t2_star) {
    return 2.0 * t2_star * t2_star * omega_l / std::exp(2.0);
}

namespace detail {

// |mean over included hyperfine lines of s(tau, omega_L + m A)|.
inline double hyperfine_slope_magnitude(double tau, double omega_l, double t2_star,
                                        bool hyperfine, double a) {
    if (!hyperfine) return std::abs(slope_function(tau, omega_l, t2_star));
    double acc = 0.0;
    for (int m = -1; m <= 1; ++m) acc += slope_function(tau, omega_l + m * a, t2_star);
    return std::abs(acc / 3.0);
}

} // namespace detail

// Free evolution time maximizing the fringe slope magnitude: coarse scan over
// (0, 3 T2*] followed by golden-section refinement.
inline double optimal_free_evolution(double omega_l, double t2_star, bool hyperfine = false,
                                     double a = hyperfine_a_default) {
    if (!(t2_star > 0.0) || !std::isfinite(t2_star))
        throw std::invalid_argument("optimal free evolution needs a finite positive T2*");
    auto value = [&](double tau) {
        return detail::hyperfine_slope_magnitude(tau, omega_l, t2_star, hyperfine, a);
    };
    const int n_scan = 6000;
    const double hi = 3.0 * t2_star;
    double best_tau = t2_star, best = -1.0;
    for (int i = 1; i <= n_scan; ++i) {
        const double tau = hi * i / n_scan;
        const double v = value(tau);
        if (v > best) {
            best = v;
            best_tau = tau;
        }
    }
    double lo = std::max(best_tau - hi / n_scan, 0.0), up = best_tau + hi / n_scan;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = up - gr * (up - lo), x2 = lo + gr * (up - lo);
    double f1 = value(x1), f2 = value(x2);
    while (up - lo > 1e-15 * t2_star) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (up - lo);
            f2 = value(x2);
        } else {
            up = x2;
            x2 = x1;
            f2 = f1;
            x1 = up - gr * (up - lo);
            f1 = value(x1);
        }
    }
    return 0.5 * (lo + up);
}

struct DeadZoneBound {
    double omega_min = 0.0;  // rad/s
    double b_min = 0.0;      // tesla
};

// Smallest axial precession frequency keeping the peak fringe slope above
// epsilon times its large-field value: omega_L > epsilon e/(4 T2*).
inline DeadZoneBound dead_zone_bound(double epsilon, double t2_star) {
    if (!(epsilon > 0.0) || epsilon > 1.0)
        throw std::invalid_argument("epsilon must lie in (0, 1]");
    if (!(t2_star > 0.0) || !std::isfinite(t2_star))
        throw std::invalid_argument("dead-zone bound needs a finite positive T2*");
    DeadZoneBound b;
    b.omega_min = epsilon * std::exp(1.0) / (4.0 * t2_star);
    b.b_min = b.omega_min / gamma_e;
    return b;
}

// Half-width (degrees) of the excluded band about the plane perpendicular to
// an orientation axis, for a field of the given magnitude.
inline double dead_zone_band_deg(double epsilon, double t2_star, double b_magnitude) {
    if (!(b_magnitude > 0.0)) throw std::invalid_argument("field magnitude must be positive");
    const double bound = dead_zone_bound(epsilon, t2_star).b_min;
    if (bound >= b_magnitude) return 90.0;
    return rad_to_deg(std::asin(bound / b_magnitude));
}

namespace detail {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic per-(seed, stream) standard-normal source; counter-based so
// results are identical for any thread count or library implementation.
class GaussianStream {
public:
    GaussianStream(std::uint64_t seed, std::uint64_t stream)
        : state_(seed * 0xd1342543de82ef95ULL + stream) {
        splitmix64_next(state_);
        splitmix64_next(state_);
    }

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = to_unit(splitmix64_next(state_));
        const double u2 = to_unit(splitmix64_next(state_));
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(two_pi * u2);
        have_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

private:
    static double to_unit(std::uint64_t x) {
        return (static_cast<double>(x >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    }
    std::uint64_t state_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

struct SensitivityContext {
    VpdrConfig cfg;    // single orientation, requested hyperfine content
    Vec3 axis;         // orientation axis
    double omega = 0;  // bare drive Rabi rate, rad/s
    double omega_l = 0;
    double axial_projection = 0;  // signed field-direction projection on axis
};

inline SensitivityContext sensitivity_context(const VpdrConfig& base, bool hyperfine) {
    if (base.orientations.size() != 1)
        throw std::invalid_argument(
            "sensitivity comparison requires a single-orientation config");
    SensitivityContext ctx;
    ctx.cfg = base;
    ctx.cfg.m_i_values = hyperfine ? std::vector<int>{-1, 0, 1} : std::vector<int>{0};
    ctx.cfg.phases = {0.0, 0.5 * two_pi};
    ctx.axis = nv_axes()[static_cast<std::size_t>(base.orientations[0])].axis;
    ctx.omega = gamma_e * base.b_mw.cross(ctx.axis).norm();
    if (!(ctx.omega > 0.0))
        throw std::invalid_argument("drive projects to zero Rabi rate on this orientation");
    ctx.omega_l = gamma_e * base.b_dc.dot(ctx.axis);
    const double bn = base.b_dc.norm();
    ctx.axial_projection = bn > 0.0 ? base.b_dc.dot(ctx.axis) / bn : 1.0;
    return ctx;
}

// Field with magnitude increased by db along the existing direction.
inline Vec3 stepped_field(const Vec3& b, const Vec3& fallback_axis, double db) {
    const double bn = b.norm();
    const Vec3 dir = bn > 0.0 ? Vec3(b / bn) : fallback_axis;
    return b + db * dir;
}

} // namespace detail

// Axial precession rate seen by the single configured orientation; feeds the
// default free evolution time of the Monte-Carlo comparisons.
inline double single_orientation_precession(const VpdrConfig& base, bool hyperfine = false) {
    return detail::sensitivity_context(base, hyperfine).omega_l;
}

// Monte-Carlo relative sensitivity at a fixed free evolution time, following
// the two-field slope estimate: simulate the phase-summed signal at B and
// B + 1 nT, project both onto the drive-frequency cosine, and compare the
// noise-to-slope quotients of the projection and of the single pi-pulse
// readout (whose uncertainty improves as sigma/sqrt(N)).
inline SensitivityRatio monte_carlo_ratio(const VpdrConfig& base, double tau_opt, double sigma,
                                          int trials, double max_t, WindowKind window,
                                          bool hyperfine, std::uint64_t seed = 1,
                                          int n_threads = 1) {
    if (trials < 2) throw std::invalid_argument("need at least two trials");
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
    if (!(tau_opt > 0.0)) throw std::invalid_argument("tau_opt must be positive");
    auto ctx = detail::sensitivity_context(base, hyperfine);

    VpdrConfig c = ctx.cfg;
    const double step = base.t_grid.step;
    const int nt = static_cast<int>(std::ceil(max_t / step - 1e-9));
    if (nt < 2)
        throw std::invalid_argument("max_t must cover at least two pulse-duration samples");
    c.t_grid = {0.0, step, nt};
    c.tau_grid = {tau_opt, tau_opt, 1};

    VpdrConfig c1 = c;
    c1.b_dc = detail::stepped_field(c.b_dc, ctx.axis, 1e-9);

    SensitivityRatio out;
    out.method = SensitivityMethod::monte_carlo;
    out.window = window;
    out.trials = trials;
    out.sigma = sigma;
    out.seed = seed;
    out.max_t = max_t;
    out.tau_opt = tau_opt;
    auto flag_dead = [&out]() -> SensitivityRatio& {
        out.dead_zone = true;
        out.ratio = std::numeric_limits<double>::infinity();
        out.ci_low = out.ci_high = out.ratio;
        return out;
    };

    const double nu = ctx.omega;
    double slope_vpdr = 0.0, slope_ramsey = 0.0;
    try {
        const double f0 = f_trace(simulate_grid(c, n_threads), nu, window)(0);
        const double f1 = f_trace(simulate_grid(c1, n_threads), nu, window)(0);
        slope_vpdr = f1 - f0;

        VpdrConfig cr = c;
        cr.t_grid = {0.5 * two_pi / ctx.omega, step, 1};  // pi pulse
        VpdrConfig cr1 = cr;
        cr1.b_dc = c1.b_dc;
        const double s0 = simulate_grid(cr, n_threads).values(0, 0);
        const double s1 = simulate_grid(cr1, n_threads).values(0, 0);
        slope_ramsey = s1 - s0;
    } catch (const labeling_error&) {
        // Unsplit |+1>/|-1> pair: the protocol has no first-order field
        // response here, which is exactly the dead-zone condition.
        return flag_dead();
    }
    if (std::abs(slope_vpdr) < 1e-12 || std::abs(slope_ramsey) < 1e-12) return flag_dead();

    const auto w = window_weights(window, nt);
    std::vector<double> proj(static_cast<std::size_t>(nt));
    double denom = 0.0;
    for (int j = 0; j < nt; ++j) {
        const double cj = std::cos(nu * step * j);
        proj[static_cast<std::size_t>(j)] = w[static_cast<std::size_t>(j)] * cj;
        denom += cj * cj;
    }
    const auto draws =
        parallel_map<double>(static_cast<std::size_t>(trials), n_threads, [&](std::size_t k) {
            detail::GaussianStream g(seed, k);
            double acc = 0.0;
            for (int j = 0; j < nt; ++j)
                acc += g.next() * proj[static_cast<std::size_t>(j)];
            return sigma * acc / denom;
        });
    const double df_vpdr = detail::sample_std(draws);
    const double df_ramsey = sigma / std::sqrt(static_cast<double>(nt));

    out.ratio = (df_vpdr / std::abs(slope_vpdr)) / (df_ramsey / std::abs(slope_ramsey));
    const double sf = 1.96 / std::sqrt(2.0 * (trials - 1.0));
    out.ci_low = out.ratio * (1.0 - sf);
    out.ci_high = out.ratio * (1.0 + sf);
    return out;
}

struct FitCostPoint {
    double tau_max = 0.0;  // s
    double ratio = 0.0;    // fitted-line uncertainty * sqrt(M) over single-point uncertainty
    double ci_low = 0.0;
    double ci_high = 0.0;
    int trials = 0;
    int excluded = 0;  // non-converged fits dropped from the statistics
    std::uint64_t seed = 0;
};

// Sensitivity cost of spreading the measurement over many free evolution
// times: noisy projection traces are fitted with the decaying-fringe model
// (one line, or the hyperfine-constrained triplet) and the spread of the
// recovered precession frequency, rescaled by sqrt(M), is compared with the
// uncertainty of a single measurement at the optimal free evolution time.
// Fit grids start at the base config's tau start; for grids too small to fit,
// the frequency spread is linearized about the clean trace instead.
inline std::vector<FitCostPoint> fit_cost_ratio(const VpdrConfig& base,
                                                const std::vector<double>& tau_max_grid,
                                                double sigma, int trials, bool hyperfine,
                                                WindowKind window = WindowKind::blackman,
                                                std::uint64_t seed = 1, int n_threads = 1) {
    if (trials < 2) throw std::invalid_argument("need at least two trials");
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
    if (tau_max_grid.empty()) throw std::invalid_argument("tau_max grid is empty");
    auto ctx = detail::sensitivity_context(base, hyperfine);
    const double nu = ctx.omega;
    const int nt = base.t_grid.count;

    const double tau_opt =
        optimal_free_evolution(ctx.omega_l, base.t2_star, hyperfine, base.hyperfine_a);

    // Reference single-point measurement at tau_opt.
    VpdrConfig copt = ctx.cfg;
    copt.tau_grid = {tau_opt, tau_opt, 1};
    VpdrConfig copt1 = copt;
    copt1.b_dc = detail::stepped_field(copt.b_dc, ctx.axis, 1e-9);
    const double f_opt0 = f_trace(simulate_grid(copt, n_threads), nu, window)(0);
    const double f_opt1 = f_trace(simulate_grid(copt1, n_threads), nu, window)(0);
    const double slope_b = (f_opt1 - f_opt0) / 1e-9;  // per tesla
    const double domega_db = gamma_e * ctx.axial_projection;

    const auto w = window_weights(window, nt);
    std::vector<double> proj(static_cast<std::size_t>(nt));
    double denom = 0.0;
    for (int j = 0; j < nt; ++j) {
        const double cj = std::cos(nu * (base.t_grid.start + base.t_grid.step * j));
        proj[static_cast<std::size_t>(j)] = w[static_cast<std::size_t>(j)] * cj;
        denom += cj * cj;
    }
    auto noisy_column = [&](detail::GaussianStream& g) {
        double acc = 0.0;
        for (int j = 0; j < nt; ++j) acc += g.next() * proj[static_cast<std::size_t>(j)];
        return sigma * acc / denom;
    };

    const auto opt_draws =
        parallel_map<double>(static_cast<std::size_t>(trials), n_threads,
                             [&](std::size_t k) {
                                 detail::GaussianStream g(seed, 2 * k + 1);
                                 return noisy_column(g);
                             });
    const double df_opt = detail::sample_std(opt_draws);
    if (std::abs(slope_b) < 1e-3 || df_opt <= 0.0) {
        std::vector<FitCostPoint> dead(tau_max_grid.size());
        for (std::size_t i = 0; i < dead.size(); ++i) {
            dead[i].tau_max = tau_max_grid[i];
            dead[i].ratio = std::numeric_limits<double>::infinity();
            dead[i].trials = trials;
            dead[i].seed = seed;
        }
        return dead;
    }
    const double db_opt = df_opt / std::abs(slope_b);

    std::vector<FitCostPoint> out;
    out.reserve(tau_max_grid.size());
    for (double tau_max : tau_max_grid) {
        const double tstep = base.tau_grid.step;
        const double tstart = base.tau_grid.start;
        const int m = static_cast<int>(std::ceil((tau_max - tstart) / tstep - 1e-9));
        if (m < 1) throw std::invalid_argument("tau_max leaves no free evolution samples");
        VpdrConfig cm = ctx.cfg;
        cm.tau_grid = {tstart, tstep, m};
        const SignalGrid grid = simulate_grid(cm, n_threads);
        const Eigen::VectorXd clean = f_trace(grid, nu, window);

        const int n_params = hyperfine ? 9 : 5;
        const bool fit_path = m >= 2 * n_params;
        int nearest = 0;
        for (int k = 1; k < m; ++k)
            if (std::abs(grid.tau_axis[static_cast<std::size_t>(k)] - tau_opt) <
                std::abs(grid.tau_axis[static_cast<std::size_t>(nearest)] - tau_opt))
                nearest = k;

        std::vector<double> omegas;
        omegas.reserve(static_cast<std::size_t>(trials));
        int excluded = 0;
        const auto trial_results = parallel_map<std::pair<double, bool>>(
            static_cast<std::size_t>(trials), n_threads,
            [&](std::size_t k) -> std::pair<double, bool> {
                detail::GaussianStream g(seed, 2 * k);
                Eigen::VectorXd y = clean;
                for (int col = 0; col < m; ++col) y(col) += noisy_column(g);
                if (!fit_path) {
                    // Single-point linearization: frequency excursion implied
                    // by the noise at the sample nearest tau_opt.
                    const double dn = (y(nearest) - clean(nearest)) / slope_b * domega_db;
                    return {std::abs(ctx.omega_l) + dn, true};
                }
                const RamseyFit fit = fit_ramsey_seeded(grid.tau_axis, y, base.hyperfine_a,
                                                        base.t2_star, hyperfine);
                if (!fit.diagnostics.converged) return {0.0, false};
                return {std::abs(fit.model.omega0), true};
            });
        for (const auto& [omega, ok] : trial_results)
            ok ? omegas.push_back(omega) : static_cast<void>(++excluded);

        FitCostPoint p;
        p.tau_max = tau_max;
        p.trials = trials;
        p.excluded = excluded;
        p.seed = seed;
        if (omegas.size() < 2) {
            p.ratio = std::numeric_limits<double>::infinity();
            p.ci_low = p.ci_high = p.ratio;
        } else {
            const double db_fit = detail::sample_std(omegas) / std::abs(domega_db);
            p.ratio = db_fit * std::sqrt(static_cast<double>(m)) / db_opt;
            const double sf =
                1.96 * std::sqrt(1.0 / (2.0 * (omegas.size() - 1.0)) + 1.0 / (2.0 * (trials - 1.0)));
            p.ci_low = p.ratio * (1.0 - sf);
            p.ci_high = p.ratio * (1.0 + sf);
        }
        out.push_back(p);
    }
    return out;
}

} // namespace vpdr
