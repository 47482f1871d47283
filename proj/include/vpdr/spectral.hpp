#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "vpdr/constants.hpp"
#include "vpdr/lindblad.hpp"
#include "vpdr/parallel.hpp"

namespace vpdr {

enum class WindowKind { boxcar, blackman, cosine };
enum class KernelKind { cosine, complex_exponential };

inline const char* to_string(WindowKind k) {
    switch (k) {
        case WindowKind::boxcar: return "boxcar";
        case WindowKind::blackman: return "blackman";
        case WindowKind::cosine: return "cosine";
    }
    return "?";
}

inline const char* to_string(KernelKind k) {
    return k == KernelKind::cosine ? "cos" : "exp";
}

inline WindowKind window_from_string(const std::string& s) {
    if (s == "boxcar") return WindowKind::boxcar;
    if (s == "blackman") return WindowKind::blackman;
    if (s == "cosine") return WindowKind::cosine;
    throw std::invalid_argument("unknown window '" + s + "' (boxcar|blackman|cosine)");
}

inline KernelKind kernel_from_string(const std::string& s) {
    if (s == "cos") return KernelKind::cosine;
    if (s == "exp") return KernelKind::complex_exponential;
    throw std::invalid_argument("unknown kernel '" + s + "' (cos|exp)");
}

inline std::vector<double> window_weights(WindowKind kind, int n_points) {
    if (n_points < 2) throw std::invalid_argument("window needs at least 2 points");
    std::vector<double> w(static_cast<std::size_t>(n_points));
    for (int n = 0; n < n_points; ++n) {
        double v = 1.0;
        switch (kind) {
            case WindowKind::boxcar: v = 1.0; break;
            case WindowKind::blackman:
                v = 0.42 - 0.5 * std::cos(two_pi * n / n_points) +
                    0.08 * std::cos(2.0 * two_pi * n / n_points);
                break;
            case WindowKind::cosine:
                v = std::sin(0.5 * two_pi * n / (n_points - 1));
                break;
        }
        w[static_cast<std::size_t>(n)] = v;
    }
    return w;
}

namespace detail {

inline void check_nyquist(double freq, double step, const char* axis) {
    if (!(std::abs(freq) <= (0.5 * two_pi / step) * (1.0 + 1e-12)))
        throw std::invalid_argument(std::string(axis) +
                                    " frequency beyond the Nyquist limit of the grid");
}

} // namespace detail

// Pulse-duration inner product: for each tau column,
// sum_j S(t_j, tau_k) W(t_j) cos(nu t_j) / sum_j cos^2(nu t_j).
inline Eigen::VectorXd f_trace(const SignalGrid& s, double nu, WindowKind window) {
    const int nt = static_cast<int>(s.t_axis.size());
    detail::check_nyquist(nu, s.config.t_grid.step, "pulse-duration");
    const auto w = window_weights(window, nt);
    Eigen::VectorXd proj(nt);
    double denom = 0.0;
    for (int j = 0; j < nt; ++j) {
        const double c = std::cos(nu * s.t_axis[static_cast<std::size_t>(j)]);
        proj(j) = w[static_cast<std::size_t>(j)] * c;
        denom += c * c;
    }
    if (denom < 1e-12 * nt)
        throw std::invalid_argument("degenerate pulse-duration projection (sum cos^2 ~ 0)");
    return s.values.transpose() * proj / denom;
}

// Complex-exponential variant with the same normalization convention; the
// denominator sum |e^(i nu t)|^2 reduces to the point count.
inline Eigen::VectorXcd f_trace_kernel(const SignalGrid& s, double nu, WindowKind window,
                                       KernelKind kernel) {
    if (kernel == KernelKind::cosine) return f_trace(s, nu, window).cast<std::complex<double>>();
    const int nt = static_cast<int>(s.t_axis.size());
    detail::check_nyquist(nu, s.config.t_grid.step, "pulse-duration");
    const auto w = window_weights(window, nt);
    Eigen::VectorXcd proj(nt);
    for (int j = 0; j < nt; ++j)
        proj(j) = w[static_cast<std::size_t>(j)] *
                  std::exp(std::complex<double>(0.0, -nu * s.t_axis[static_cast<std::size_t>(j)]));
    return s.values.transpose().cast<std::complex<double>>() * proj / static_cast<double>(nt);
}

struct SpectralMap {
    std::vector<double> nu_axis;     // rad/s
    std::vector<double> omega_axis;  // rad/s
    Eigen::MatrixXcd values;         // nu rows, omega columns
    WindowKind window = WindowKind::boxcar;
    KernelKind kernel = KernelKind::cosine;
};

namespace detail {

inline void check_axis(const std::vector<double>& axis, const char* name) {
    if (axis.empty()) throw std::invalid_argument(std::string(name) + " axis is empty");
    for (std::size_t i = 1; i < axis.size(); ++i)
        if (!(axis[i] > axis[i - 1]))
            throw std::invalid_argument(std::string(name) + " axis must be strictly increasing");
}

} // namespace detail

// Mean-subtracted double inner product: I(nu, omega) =
// sum_k (f(tau_k, nu) - f_mean(nu)) K(omega tau_k) / norm(omega).
inline SpectralMap spectral_map(const SignalGrid& s, std::vector<double> nu_axis,
                                std::vector<double> omega_axis,
                                WindowKind window = WindowKind::blackman,
                                KernelKind kernel = KernelKind::cosine, int n_threads = 1) {
    detail::check_axis(nu_axis, "nu");
    detail::check_axis(omega_axis, "omega");
    const int mt = static_cast<int>(s.tau_axis.size());
    for (double w : omega_axis) detail::check_nyquist(w, s.config.tau_grid.step, "free-evolution");

    SpectralMap out;
    out.window = window;
    out.kernel = kernel;
    out.values.resize(static_cast<Eigen::Index>(nu_axis.size()),
                      static_cast<Eigen::Index>(omega_axis.size()));

    auto cols = parallel_map<Eigen::VectorXcd>(
        nu_axis.size(), n_threads, [&](std::size_t a) -> Eigen::VectorXcd {
            Eigen::VectorXcd f = f_trace_kernel(s, nu_axis[a], window, kernel);
            f.array() -= f.mean();
            Eigen::VectorXcd row(omega_axis.size());
            for (std::size_t b = 0; b < omega_axis.size(); ++b) {
                const double omega = omega_axis[b];
                std::complex<double> acc = 0.0;
                double denom = 0.0;
                for (int k = 0; k < mt; ++k) {
                    const double tau = s.tau_axis[static_cast<std::size_t>(k)];
                    if (kernel == KernelKind::cosine) {
                        const double c = std::cos(omega * tau);
                        acc += f(k) * c;
                        denom += c * c;
                    } else {
                        acc += f(k) * std::exp(std::complex<double>(0.0, -omega * tau));
                        denom += 1.0;
                    }
                }
                if (denom < 1e-12 * mt)
                    throw std::invalid_argument(
                        "degenerate free-evolution projection (sum cos^2 ~ 0)");
                row(static_cast<Eigen::Index>(b)) = acc / denom;
            }
            return row;
        });
    for (std::size_t a = 0; a < nu_axis.size(); ++a)
        out.values.row(static_cast<Eigen::Index>(a)) = cols[a].transpose();
    out.nu_axis = std::move(nu_axis);
    out.omega_axis = std::move(omega_axis);
    return out;
}

// Pulse-duration spectrum: sum over tau of f(tau_k, nu), peaking near the
// per-orientation Rabi frequencies.
inline Eigen::VectorXd rabi_spectrum(const SignalGrid& s, const std::vector<double>& nu_axis,
                                     WindowKind window = WindowKind::blackman) {
    detail::check_axis(nu_axis, "nu");
    Eigen::VectorXd out(static_cast<Eigen::Index>(nu_axis.size()));
    for (std::size_t a = 0; a < nu_axis.size(); ++a)
        out(static_cast<Eigen::Index>(a)) = f_trace(s, nu_axis[a], window).sum();
    return out;
}

} // namespace vpdr
