#pragma once

#include <algorithm>
#include <array>
#include <complex>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "vpdr/constants.hpp"
#include "vpdr/geometry.hpp"
#include "vpdr/parallel.hpp"

namespace vpdr {

using Mat3c = Eigen::Matrix3cd;
using Mat9c = Eigen::MatrixXcd;
using Vec9c = Eigen::VectorXcd;

inline const Mat3c& spin1_z() {
    static const Mat3c m = [] {
        Mat3c z = Mat3c::Zero();
        z(0, 0) = -1.0;
        z(2, 2) = 1.0;
        return z;
    }();
    return m;
}
inline const Mat3c& spin1_x() {
    static const Mat3c m = [] {
        Mat3c x = Mat3c::Zero();
        const double s = 1.0 / std::sqrt(2.0);
        x(0, 1) = x(1, 0) = x(1, 2) = x(2, 1) = s;
        return x;
    }();
    return m;
}
inline const Mat3c& spin1_y() {
    static const Mat3c m = [] {
        Mat3c y = Mat3c::Zero();
        const std::complex<double> i(0.0, 1.0);
        const double s = 1.0 / std::sqrt(2.0);
        y(1, 0) = y(2, 1) = i * s;
        y(0, 1) = y(1, 2) = -i * s;
        return y;
    }();
    return m;
}

struct GridSpec {
    double start = 0.0;  // s
    double step = 0.0;   // s
    int count = 1;

    std::vector<double> axis() const {
        std::vector<double> a(static_cast<std::size_t>(count));
        for (int j = 0; j < count; ++j) a[static_cast<std::size_t>(j)] = start + j * step;
        return a;
    }
};

struct VpdrConfig {
    Vec3 b_dc = Vec3::Zero();  // tesla, crystal frame
    Vec3 b_mw = Vec3::Zero();  // tesla, drive amplitude vector, crystal frame
    double mw_frequency = zfs_default;  // rad/s
    double zfs = zfs_default;           // rad/s
    double hyperfine_a = hyperfine_a_default;  // rad/s
    double t2_star = std::numeric_limits<double>::infinity();  // s
    GridSpec t_grid;
    GridSpec tau_grid;
    std::vector<double> phases{0.0, 0.5 * two_pi};
    std::vector<int> orientations{0, 1, 2, 3};
    std::vector<int> m_i_values{-1, 0, 1};
    std::size_t max_cells = 4'000'000;

    // Drive amplitude such that a fully transverse orientation sees the given
    // peak Rabi frequency.
    static Vec3 mw_field_from_peak_rabi(double omega_max, const Vec3& direction) {
        const double n = direction.norm();
        if (!(n > 0.0)) throw std::invalid_argument("mw direction must be nonzero");
        return (omega_max / gamma_e / n) * direction;
    }

    std::vector<std::string> validate() const {
        auto check_grid = [](const GridSpec& g, const char* name) {
            if (!(g.step > 0.0) || !std::isfinite(g.step))
                throw std::invalid_argument(std::string(name) + ": step must be positive");
            if (g.count < 1)
                throw std::invalid_argument(std::string(name) + ": count must be >= 1");
            if (g.start < 0.0 || !std::isfinite(g.start))
                throw std::invalid_argument(std::string(name) + ": start must be >= 0");
        };
        check_grid(t_grid, "t_grid");
        check_grid(tau_grid, "tau_grid");
        if (!(t2_star > 0.0)) throw std::invalid_argument("t2_star must be positive or infinite");
        if (phases.empty() || phases.size() > 2)
            throw std::invalid_argument("phases: need one or two of {0, pi}");
        for (double p : phases)
            if (std::abs(p) > 1e-9 && std::abs(p - 0.5 * two_pi) > 1e-9)
                throw std::invalid_argument("phases: only 0 and pi are part of the protocol");
        if (orientations.empty() || m_i_values.empty())
            throw std::invalid_argument("orientations and m_i_values must be nonempty");
        for (int o : orientations)
            if (o < 0 || o > 3) throw std::invalid_argument("orientation index out of range");
        for (int mi : m_i_values)
            if (mi < -1 || mi > 1) throw std::invalid_argument("m_I must be in {-1,0,1}");
        const std::size_t cells =
            static_cast<std::size_t>(t_grid.count) * static_cast<std::size_t>(tau_grid.count);
        if (cells > max_cells)
            throw std::length_error("grid of " + std::to_string(cells) +
                                    " cells exceeds max_cells = " + std::to_string(max_cells));
        std::vector<std::string> warnings;
        if (b_dc.norm() > 10e-3)
            warnings.push_back("|b_dc| above 10 mT: eigenstate labeling may degrade");
        return warnings;
    }
};

struct SignalGrid {
    std::vector<double> t_axis;    // s
    std::vector<double> tau_axis;  // s
    Eigen::MatrixXd values;        // t rows, tau columns
    bool phase_summed = false;     // true when both protocol phases were added
    VpdrConfig config;

    double p_max() const { return phase_summed ? 2.0 : 1.0; }
};

struct SpinState {
    Mat3c rho = Mat3c::Zero();

    void check() const {
        if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
            throw std::runtime_error("density matrix lost hermiticity");
        if (std::abs(rho.trace().real() - 1.0) > 1e-10 || std::abs(rho.trace().imag()) > 1e-10)
            throw std::runtime_error("density matrix lost unit trace");
        Eigen::SelfAdjointEigenSolver<Mat3c> es(0.5 * (rho + rho.adjoint()));
        if (es.eigenvalues().minCoeff() < -1e-10)
            throw std::runtime_error("density matrix lost positivity");
    }
};

// Column-stacking: vec(rho)[r + 3c] = rho(r, c).
inline Vec9c vec_state(const Mat3c& rho) {
    Vec9c v(9);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 3; ++r) v(r + 3 * c) = rho(r, c);
    return v;
}

inline Mat3c unvec_state(const Vec9c& v) {
    Mat3c rho;
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 3; ++r) rho(r, c) = v(r + 3 * c);
    return rho;
}

// Free Hamiltonian in the NV-local frame (z along the axis, transverse DC
// component along x), with the hyperfine interaction reduced to its secular
// axial shift A*m_I.
inline Mat3c build_free_hamiltonian(const LocalFieldDecomposition& local_b, int m_i,
                                    double zfs = zfs_default,
                                    double hyperfine_a = hyperfine_a_default) {
    return zfs * spin1_z() * spin1_z() +
           (gamma_e * local_b.b_axial + hyperfine_a * m_i) * spin1_z() +
           gamma_e * local_b.b_perp * spin1_x();
}

// Raised when eigenstates cannot be assigned Zeeman labels; happens when the
// axial field (plus hyperfine shift) no longer splits the |+1>/|-1> pair.
struct labeling_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Free-Hamiltonian eigensystem with columns labeled by dominant Zeeman
// character and reordered to (|-1>-like, |0>-like, |+1>-like).
struct EigenFrame {
    Eigen::Vector3d energies;  // rad/s
    Mat3c vectors;             // columns match `energies`
    double min_overlap_sq = 0.0;
};

inline EigenFrame eigenframe(const Mat3c& h0) {
    Eigen::SelfAdjointEigenSolver<Mat3c> es(h0);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    Eigen::Matrix3d ov;
    for (int z = 0; z < 3; ++z)
        for (int j = 0; j < 3; ++j) ov(z, j) = std::norm(es.eigenvectors()(z, j));
    std::array<int, 3> pick{-1, -1, -1};
    std::array<bool, 3> zeeman_used{}, col_used{};
    double min_ov = 1.0;
    for (int step = 0; step < 3; ++step) {
        int bz = -1, bj = -1;
        double best = -1.0;
        for (int z = 0; z < 3; ++z) {
            if (zeeman_used[static_cast<std::size_t>(z)]) continue;
            for (int j = 0; j < 3; ++j) {
                if (col_used[static_cast<std::size_t>(j)]) continue;
                if (ov(z, j) > best) {
                    best = ov(z, j);
                    bz = z;
                    bj = j;
                }
            }
        }
        pick[static_cast<std::size_t>(bz)] = bj;
        zeeman_used[static_cast<std::size_t>(bz)] = true;
        col_used[static_cast<std::size_t>(bj)] = true;
        min_ov = std::min(min_ov, best);
    }
    if (min_ov < 0.9)
        throw labeling_error(
            "eigenstate labeling ambiguous (Zeeman overlap below 0.9); field outside validity");
    EigenFrame f;
    for (int z = 0; z < 3; ++z) {
        const int j = pick[static_cast<std::size_t>(z)];
        f.energies(z) = es.eigenvalues()(j);
        f.vectors.col(z) = es.eigenvectors().col(j);
    }
    f.min_overlap_sq = min_ov;
    return f;
}

// Rotating-frame drive Hamiltonian in the eigenbasis: diagonal energies with
// the drive frequency removed from the |±1>-like levels, plus the co-rotating
// half of the transverse drive connecting |0>-like to |±1>-like. All other
// drive elements are time dependent in this frame and are dropped.
inline Mat3c build_rwa_hamiltonian(const EigenFrame& frame, const Vec3& local_b_mw, double nu_mw,
                                   double phase) {
    const Mat3c drive = gamma_e * (local_b_mw.x() * spin1_x() + local_b_mw.y() * spin1_y() +
                                   local_b_mw.z() * spin1_z());
    const Mat3c m = frame.vectors.adjoint() * drive * frame.vectors;
    Mat3c h = Mat3c::Zero();
    h(0, 0) = frame.energies(0) - nu_mw;
    h(1, 1) = frame.energies(1);
    h(2, 2) = frame.energies(2) - nu_mw;
    const std::complex<double> half_rot = 0.5 * std::exp(std::complex<double>(0.0, -phase));
    for (int r : {0, 2}) {
        h(r, 1) = half_rot * m(r, 1);
        h(1, r) = std::conj(h(r, 1));
    }
    return h;
}

inline Mat3c build_rwa_hamiltonian(const Mat3c& h0, const Vec3& local_b_mw, double nu_mw,
                                   double phase) {
    return build_rwa_hamiltonian(eigenframe(h0), local_b_mw, nu_mw, phase);
}

inline Mat9c kron9(const Mat3c& a, const Mat3c& b) {
    Mat9c k(9, 9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) k.block<3, 3>(3 * i, 3 * j) = a(i, j) * b;
    return k;
}

// Generator of vec(d rho/dt) = L vec(rho) with column stacking. Dephasing uses
// projector jumps on the |±1>-like levels at rate 2/T2*, which damps the
// single-quantum coherences as e^(-tau/T2*) and the double-quantum coherence
// as e^(-2 tau/T2*).
inline Mat9c liouvillian(const Mat3c& h_rwa, double t2_star) {
    const Mat3c id = Mat3c::Identity();
    const std::complex<double> mi(0.0, -1.0);
    Mat9c l = mi * (kron9(id, h_rwa) - kron9(h_rwa.transpose(), id));
    if (std::isfinite(t2_star)) {
        const double g = 2.0 / t2_star;
        for (int level : {0, 2}) {
            Mat3c c = Mat3c::Zero();
            c(level, level) = 1.0;
            l += g * (kron9(c, c) - 0.5 * (kron9(id, c) + kron9(c, id)));
        }
    }
    return l;
}

struct TransitionRecord {
    int orientation = 0;
    int m_i = 0;
    double delta_omega = 0.0;  // rad/s, |E(+1-like) - E(-1-like)|
};

inline std::vector<TransitionRecord> exact_transitions(const VpdrConfig& cfg) {
    std::vector<TransitionRecord> out;
    for (int o : cfg.orientations) {
        const auto decomp = project_field(cfg.b_dc, nv_axes()[static_cast<std::size_t>(o)]);
        for (int mi : cfg.m_i_values) {
            const auto f =
                eigenframe(build_free_hamiltonian(decomp, mi, cfg.zfs, cfg.hyperfine_a));
            out.push_back({o, mi, std::abs(f.energies(2) - f.energies(0))});
        }
    }
    return out;
}

namespace detail {

struct ComboTask {
    int orientation;
    int m_i;
    double phase;
};

inline Eigen::MatrixXd simulate_combo(const VpdrConfig& cfg, const ComboTask& task) {
    const auto& o = nv_axes()[static_cast<std::size_t>(task.orientation)];
    const auto decomp = project_field(cfg.b_dc, o);
    Mat3 rot;
    rot.row(0) = decomp.local_x;
    rot.row(1) = o.axis.cross(decomp.local_x);
    rot.row(2) = o.axis;
    const Vec3 bmw_loc = rot * cfg.b_mw;

    const Mat3c h0 = build_free_hamiltonian(decomp, task.m_i, cfg.zfs, cfg.hyperfine_a);
    const EigenFrame frame = eigenframe(h0);
    const Mat3c h_first = build_rwa_hamiltonian(frame, bmw_loc, cfg.mw_frequency, 0.0);
    const Mat3c h_second = build_rwa_hamiltonian(frame, bmw_loc, cfg.mw_frequency, task.phase);
    Mat3c h_free = Mat3c::Zero();
    h_free(0, 0) = frame.energies(0) - cfg.mw_frequency;
    h_free(1, 1) = frame.energies(1);
    h_free(2, 2) = frame.energies(2) - cfg.mw_frequency;

    const Mat9c l1 = liouvillian(h_first, cfg.t2_star);
    const Mat9c l2 = liouvillian(h_second, cfg.t2_star);
    const Mat9c lf = liouvillian(h_free, cfg.t2_star);

    const int nt = cfg.t_grid.count, mt = cfg.tau_grid.count;
    const Mat9c e1 = (l1 * cfg.t_grid.step).exp();
    const Mat9c e2 = (l2 * cfg.t_grid.step).exp();
    const Mat9c ef = (lf * cfg.tau_grid.step).exp();
    const Mat9c e1_start = (l1 * cfg.t_grid.start).exp();
    const Mat9c e2_start = (l2 * cfg.t_grid.start).exp();
    const Mat9c ef_start = (lf * cfg.tau_grid.start).exp();

    Mat3c zero_proj = Mat3c::Zero();
    zero_proj(1, 1) = 1.0;
    const Mat3c p = frame.vectors.adjoint() * zero_proj * frame.vectors;

    // State columns after the first pulse of duration t_j.
    Eigen::MatrixXcd states(9, nt);
    Vec9c x = e1_start * vec_state(p);
    for (int j = 0; j < nt; ++j) {
        states.col(j) = x;
        if (j + 1 < nt) x = e1 * x;
    }
    // Readout rows absorbing the second pulse: tr(P rho) = sum P(a,b) vec[b+3a].
    Eigen::RowVectorXcd w(9);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) w(b + 3 * a) = p(a, b);
    Eigen::MatrixXcd readout(nt, 9);
    Eigen::RowVectorXcd wr = w * e2_start;
    for (int j = 0; j < nt; ++j) {
        readout.row(j) = wr;
        if (j + 1 < nt) wr = wr * e2;
    }

    Eigen::MatrixXd signal(nt, mt);
    Eigen::MatrixXcd z = ef_start * states;
    for (int k = 0; k < mt; ++k) {
        signal.col(k) = (readout.array() * z.transpose().array()).rowwise().sum().real();
        if (k + 1 < mt) z = ef * z;
    }
    return signal;
}

} // namespace detail

inline SignalGrid simulate_grid(const VpdrConfig& cfg, int n_threads = 1) {
    cfg.validate();
    std::vector<detail::ComboTask> tasks;
    for (int o : cfg.orientations)
        for (int mi : cfg.m_i_values)
            for (double ph : cfg.phases) tasks.push_back({o, mi, ph});
    auto parts = parallel_map<Eigen::MatrixXd>(
        tasks.size(), n_threads,
        [&](std::size_t i) { return detail::simulate_combo(cfg, tasks[i]); });

    SignalGrid out;
    out.t_axis = cfg.t_grid.axis();
    out.tau_axis = cfg.tau_grid.axis();
    out.values = Eigen::MatrixXd::Zero(cfg.t_grid.count, cfg.tau_grid.count);
    for (const auto& part : parts) out.values += part;
    out.values /=
        static_cast<double>(cfg.orientations.size()) * static_cast<double>(cfg.m_i_values.size());
    out.phase_summed = cfg.phases.size() == 2;
    out.config = cfg;
    return out;
}

} // namespace vpdr
