#pragma once
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>

#include "vpdr/constants.hpp"

namespace vpdr {

struct AnalyticParams {
    double omega_rabi = 0.0;    // rad/s
    double omega_larmor = 0.0;  // rad/s, signed
    double detuning = 0.0;      // rad/s, hard-pulse path only; >0 shifts both |±1> up
    double phase = 0.0;         // second-pulse phase, rad
    double t2_star = std::numeric_limits<double>::infinity();  // s
    double theta_bright = 0.0;  // second-pulse MW direction rotation, rad
    double hyperfine_a = hyperfine_a_default;
};

inline double omega_eff(double omega_rabi, double omega_larmor) {
    return std::sqrt(omega_rabi * omega_rabi + 4.0 * omega_larmor * omega_larmor);
}

// Population-return probability for ideal delta-like pulses.  The single
// quantum term carries a minus sign: the plus-sign variant circulating in
// the source material is inconsistent with both the exact composition of
// the three evolution segments and the Fourier coefficient table below
// (it amounts to relabeling phi by pi).
inline double p0_hard_pulse(double t, double tau, const AnalyticParams& p) {
    const double half = 0.5 * p.omega_rabi * t;
    const double c2 = std::cos(half) * std::cos(half);
    const double s2 = std::sin(half) * std::sin(half);
    const double sin_wt = std::sin(p.omega_rabi * t);
    const double dq_arg = p.omega_larmor * tau - p.theta_bright;
    double sq_damp = 1.0, dq_damp = 1.0;
    if (std::isfinite(p.t2_star)) {
        sq_damp = std::exp(-tau / p.t2_star);
        dq_damp = std::exp(-2.0 * tau / p.t2_star);
    }
    const double sq = -0.5 * std::cos(tau * p.detuning + p.phase) * sin_wt * sin_wt *
                      std::cos(dq_arg) * sq_damp;
    const double dq = s2 * s2 * 0.5 * (1.0 + dq_damp * std::cos(2.0 * dq_arg));
    return c2 * c2 + sq + dq;
}

// Fourier coefficients a[n][m] of P0(t, tau) = sum a_{n,m} e^{i n W_eff t} e^{i m w_L tau}
// for zero detuning.  Half-integer n is stored doubled: row index 2n+4 in 0..8,
// column index m+2 in 0..4.  Entries are real for every phase (the phase enters
// only via cos(phi) factors); a[-n][-m] = a[n][m].
struct FourierCoefficientTable {
    double alpha = 0.0;
    double phase = 0.0;
    std::array<std::array<double, 5>, 9> a{};  // [2n+4][m+2]

    double at(int twice_n, int m) const { return a[twice_n + 4][m + 2]; }
    double sum() const {
        double s = 0.0;
        for (const auto& row : a)
            for (double v : row) s += v;
        return s;
    }
};

inline FourierCoefficientTable fourier_table(double alpha, double phase) {
    if (!(alpha > 0.0) || !std::isfinite(alpha))
        throw std::invalid_argument("fourier_table: alpha must be positive and finite");
    const double al = alpha;
    const double a2 = al * al, a4 = a2 * a2, a6 = a4 * a2, a8 = a4 * a4;
    const double at = std::sqrt(a2 + 4.0);
    const double at8 = std::pow(at, 8), at9 = at8 * at;
    const double c = std::cos(phase);

    FourierCoefficientTable T;
    T.alpha = alpha;
    T.phase = phase;
    auto set = [&T](int twice_n, int m, double v) { T.a[twice_n + 4][m + 2] = v; };

    set(4, -2, (a8 * (at - 8.0) + 32.0 * a6 * (at - 3.0) + 128.0 * a4 * (at - 2.0)) / (64.0 * at9));
    set(4, -1, a6 * (a2 * (at - 4.0) + 8.0 * (at - 2.0)) * c / (16.0 * at9));
    set(4, 0, 3.0 * a8 / (32.0 * at8));
    set(4, 1, a6 * (a2 * (at + 4.0) + 8.0 * (at + 2.0)) * c / (16.0 * at9));
    set(4, 2, (a8 * (at + 8.0) + 32.0 * a6 * (at + 3.0) + 128.0 * a4 * (at + 2.0)) / (64.0 * at9));

    set(3, -2, (a6 * (20.0 - 6.0 * at) - 32.0 * a4 * (at - 2.0) + a8) / (4.0 * at9));
    set(3, -1, a4 * (16.0 * (at - 2.0) + a4 - 4.0 * a2) * c / (2.0 * at9));
    set(3, 0, 3.0 * a6 / at8);
    set(3, 1, a4 * (16.0 * (at + 2.0) - a4 + 4.0 * a2) * c / (2.0 * at9));
    set(3, 2, -a4 * (a2 * (6.0 * at + 20.0) + 32.0 * (at + 2.0) + a4) / (4.0 * at9));

    set(2, -2, -a4 * (a2 - 24.0) * (a2 * (at - 4.0) + 8.0 * (at - 2.0)) / (16.0 * at9));
    set(2, -1, -a2 * (-4.0 * a4 * (at + 3.0) + 8.0 * a2 * (3.0 * at - 4.0) - 64.0 * (at - 2.0) + a6) * c /
                   (2.0 * at9));
    set(2, 0, a4 * (a4 - 16.0 * a2 + 256.0) / (8.0 * at8));
    set(2, 1, a2 * (4.0 * a4 * (at - 3.0) - 8.0 * a2 * (3.0 * at + 4.0) + 64.0 * (at + 2.0) + a6) * c /
                  (2.0 * at9));
    set(2, 2, -a4 * (a2 - 24.0) * (a2 * (at + 4.0) + 8.0 * (at + 2.0)) / (16.0 * at9));

    set(1, -2, -a4 * (3.0 * a2 - 16.0) * (-2.0 * at + a2 + 4.0) / (4.0 * at9));
    set(1, -1, a2 * (-4.0 * a4 * (2.0 * at + 1.0) + 16.0 * a2 * (3.0 * at + 2.0) - 128.0 * (at - 2.0) + a6) *
                   c / (2.0 * at9));
    set(1, 0, a2 * (5.0 * a4 - 32.0 * a2 + 128.0) / at8);
    set(1, 1, -a2 * (a4 * (8.0 * at - 4.0) + a2 * (32.0 - 48.0 * at) + 128.0 * (at + 2.0) + a6) * c /
                  (2.0 * at9));
    set(1, 2, a4 * (3.0 * a2 - 16.0) * (2.0 * at + a2 + 4.0) / (4.0 * at9));

    set(0, -2, a4 * (3.0 * a4 - 96.0 * a2 + 128.0) / (32.0 * at8));
    set(0, -1, -a2 * (a6 - 24.0 * a4 + 320.0 * a2 - 512.0) * c / (8.0 * at8));
    set(0, 0, (9.0 * a8 + 64.0 * a6 + 1536.0 * a4 + 4096.0) / (16.0 * at8));
    set(0, 1, T.at(0, -1));
    set(0, 2, T.at(0, -2));

    for (int tn = 1; tn <= 4; ++tn)
        for (int m = -2; m <= 2; ++m) T.a[-tn + 4][-m + 2] = T.at(tn, m);
    return T;
}

inline double p0_finite_alpha(double t, double tau, const AnalyticParams& p) {
    if (p.detuning != 0.0)
        throw std::invalid_argument(
            "p0_finite_alpha: expansion requires zero detuning; use p0_hard_pulse for detuned pulses");
    if (p.omega_larmor == 0.0)
        throw std::invalid_argument("p0_finite_alpha: zero Larmor frequency; use p0_hard_pulse");
    // P0 is exactly even in omega_larmor (relabeling |+1> <-> |-1>), so fold
    // the sign away; the table expressions assume a positive frequency.
    const double wl = std::abs(p.omega_larmor);
    const double alpha = std::abs(p.omega_rabi) / wl;
    const FourierCoefficientTable T = fourier_table(alpha, p.phase);
    const double weff = omega_eff(p.omega_rabi, wl);
    std::complex<double> acc = 0.0;
    for (int tn = -4; tn <= 4; ++tn) {
        for (int m = -2; m <= 2; ++m) {
            double damp = 1.0;
            if (std::isfinite(p.t2_star)) damp = std::exp(-std::abs(m) * tau / p.t2_star);
            const double arg = 0.5 * tn * weff * t + m * wl * tau;
            acc += T.at(tn, m) * damp * std::complex<double>(std::cos(arg), std::sin(arg));
        }
    }
    return acc.real();
}

inline std::array<double, 4> dq_first_quadrant_amplitudes(double alpha) {
    const FourierCoefficientTable T = fourier_table(alpha, 0.0);
    return {std::abs(T.at(1, 2)), std::abs(T.at(2, 2)), std::abs(T.at(3, 2)), std::abs(T.at(4, 2))};
}

enum class AnalyticRegime { hard_pulse, finite_alpha };

inline double p0_analytic(double t, double tau, const AnalyticParams& p, AnalyticRegime regime) {
    return regime == AnalyticRegime::hard_pulse ? p0_hard_pulse(t, tau, p)
                                                : p0_finite_alpha(t, tau, p);
}

inline double sq_cancelled_analytic(double t, double tau, AnalyticParams p, AnalyticRegime regime) {
    p.phase = 0.0;
    const double a = p0_analytic(t, tau, p, regime);
    p.phase = two_pi / 2.0;
    return a + p0_analytic(t, tau, p, regime);
}

inline double hyperfine_average(double t, double tau, const AnalyticParams& p_ext,
                                AnalyticRegime regime) {
    double acc = 0.0;
    for (int mi = -1; mi <= 1; ++mi) {
        AnalyticParams p = p_ext;
        p.omega_larmor = p_ext.omega_larmor + mi * p_ext.hyperfine_a;
        acc += p0_analytic(t, tau, p, regime);
    }
    return acc / 3.0;
}

} // namespace vpdr
