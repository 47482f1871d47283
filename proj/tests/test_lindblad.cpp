#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>

#include "vpdr/analytic.hpp"
#include "vpdr/lindblad.hpp"

using namespace vpdr;
using cd = std::complex<double>;

namespace {

Mat3c random_density(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector3cd psi;
    for (int i = 0; i < 3; ++i) psi(i) = cd(n(rng), n(rng));
    psi.normalize();
    return psi * psi.adjoint();
}

// Single-tone frequency estimate: concentrated least squares over
// (offset, cos, sin) amplitudes, golden-section search on the frequency.
double fit_tone(const Eigen::VectorXd& y, const std::vector<double>& tau, double w_lo,
                double w_hi) {
    const int n = static_cast<int>(tau.size());
    auto rss = [&](double w) {
        Eigen::MatrixXd a(n, 3);
        for (int k = 0; k < n; ++k) {
            a(k, 0) = 1.0;
            a(k, 1) = std::cos(w * tau[static_cast<std::size_t>(k)]);
            a(k, 2) = std::sin(w * tau[static_cast<std::size_t>(k)]);
        }
        const Eigen::VectorXd c = a.colPivHouseholderQr().solve(y);
        return (y - a * c).squaredNorm();
    };
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = w_lo, b = w_hi;
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = rss(c), fd = rss(d);
    for (int it = 0; it < 200; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = rss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = rss(d);
        }
        if (b - a < 1e-4) break;
    }
    return 0.5 * (a + b);
}

} // namespace

TEST_CASE("free hamiltonian structure") {
    LocalFieldDecomposition none;
    const Mat3c h = build_free_hamiltonian(none, 0);
    REQUIRE(std::abs(h(0, 0) - zfs_default) < 1e-3);
    REQUIRE(std::abs(h(1, 1)) < 1e-12);
    REQUIRE(std::abs(h(2, 2) - zfs_default) < 1e-3);
    REQUIRE(h.cwiseAbs().sum() == Catch::Approx(2.0 * zfs_default));

    LocalFieldDecomposition axial;
    axial.b_axial = 37e-6;
    for (int mi : {-1, 0, 1}) {
        const auto f = eigenframe(build_free_hamiltonian(axial, mi));
        const double expect = 2.0 * (gamma_e * axial.b_axial + hyperfine_a_default * mi);
        REQUIRE(f.energies(2) - f.energies(0) == Catch::Approx(expect).margin(1e-4));
    }

    axial.b_axial = 50e-6;
    const auto f50 = eigenframe(build_free_hamiltonian(axial, 0));
    REQUIRE((f50.energies(2) - f50.energies(0)) / two_pi == Catch::Approx(2.8024e6).epsilon(1e-9));
}

TEST_CASE("rwa hamiltonian drive placement") {
    LocalFieldDecomposition axial;
    axial.b_axial = 40e-6;
    const Mat3c h0 = build_free_hamiltonian(axial, 0);
    const double omega = two_pi * 25e6;
    const Vec3 bmw(omega / gamma_e, 0.0, 0.0);

    const Mat3c h = build_rwa_hamiltonian(h0, bmw, zfs_default, 0.0);
    REQUIRE(std::abs(h(0, 1)) == Catch::Approx(omega / (2.0 * std::sqrt(2.0))));
    REQUIRE(std::abs(h(2, 1)) == Catch::Approx(omega / (2.0 * std::sqrt(2.0))));
    const double bright = std::sqrt(std::norm(h(0, 1)) + std::norm(h(2, 1)));
    REQUIRE(bright == Catch::Approx(omega / 2.0));
    REQUIRE(std::abs(h(0, 2)) == 0.0);
    REQUIRE((h - h.adjoint()).cwiseAbs().maxCoeff() < 1e-9);

    // phase pi flips the sign of the co-rotating elements
    const Mat3c hp = build_rwa_hamiltonian(h0, bmw, zfs_default, 0.5 * two_pi);
    REQUIRE(std::abs(hp(0, 1) + h(0, 1)) < 1e-9 * omega);

    // zero drive: diagonal (-wl, 0, +wl) at resonance
    const Mat3c hz = build_rwa_hamiltonian(h0, Vec3::Zero(), zfs_default, 0.0);
    const double wl = gamma_e * axial.b_axial;
    REQUIRE(std::abs(hz(0, 0) - (-wl)) < 1e-6 * wl);
    REQUIRE(std::abs(hz(1, 1)) < 1e-9);
    REQUIRE(std::abs(hz(2, 2) - wl) < 1e-6 * wl);

    // detuning shifts both |±1>-like diagonal entries by -delta
    const double delta = two_pi * 3e6;
    const Mat3c hd = build_rwa_hamiltonian(h0, bmw, zfs_default + delta, 0.0);
    REQUIRE(std::real(hd(0, 0) - h(0, 0)) == Catch::Approx(-delta));
    REQUIRE(std::real(hd(2, 2) - h(2, 2)) == Catch::Approx(-delta));
    REQUIRE(std::abs(hd(1, 1) - h(1, 1)) < 1e-9);

    // strong transverse field breaks the Zeeman labeling
    LocalFieldDecomposition tilted;
    tilted.b_perp = 50e-3;
    REQUIRE_THROWS_AS(eigenframe(build_free_hamiltonian(tilted, 0)), std::runtime_error);
}

TEST_CASE("liouvillian structure and decay rates") {
    std::mt19937_64 rng(5);
    LocalFieldDecomposition axial;
    axial.b_axial = 21e-6;
    const Mat3c h0 = build_free_hamiltonian(axial, 0);
    const EigenFrame frame = eigenframe(h0);
    const Vec3 bmw(two_pi * 30e6 / gamma_e, 0.0, 0.0);
    const Mat3c h = build_rwa_hamiltonian(frame, bmw, zfs_default, 0.0);

    SECTION("coherent part is the commutator") {
        const Mat9c l = liouvillian(h, std::numeric_limits<double>::infinity());
        for (int rep = 0; rep < 20; ++rep) {
            const Mat3c rho = random_density(rng);
            const Mat3c want = cd(0.0, -1.0) * (h * rho - rho * h);
            const Mat3c got = unvec_state(l * vec_state(rho));
            REQUIRE((want - got).cwiseAbs().maxCoeff() < 1e-6);
        }
        // propagator acts as unitary conjugation
        const double dt = 1.7e-9;
        const Mat9c e = (l * dt).exp();
        const Mat3c u = (cd(0.0, -1.0) * dt * h).exp();
        const Mat3c rho = random_density(rng);
        const Mat3c got = unvec_state(e * vec_state(rho));
        REQUIRE((u * rho * u.adjoint() - got).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("trace is conserved") {
        const Mat9c l = liouvillian(h, 2e-6);
        Eigen::RowVectorXcd tr = Eigen::RowVectorXcd::Zero(9);
        for (int r = 0; r < 3; ++r) tr(r + 3 * r) = 1.0;
        REQUIRE((tr * l).cwiseAbs().maxCoeff() < 1e-14 * l.cwiseAbs().maxCoeff());
    }

    SECTION("coherence orders decay at 1x and 2x the dephasing rate") {
        const double t2 = 2e-6;
        Mat3c hz = Mat3c::Zero();
        const Mat9c l = liouvillian(hz, t2);
        Mat3c rho = Mat3c::Zero();
        rho(0, 0) = rho(1, 1) = rho(2, 2) = 1.0 / 3.0;
        rho(0, 1) = rho(1, 0) = 0.1;
        rho(0, 2) = rho(2, 0) = 0.1;
        for (double tau : {0.3e-6, 1.1e-6}) {
            const Mat3c out = unvec_state((l * tau).exp() * vec_state(rho));
            REQUIRE(std::abs(out(0, 1)) ==
                    Catch::Approx(0.1 * std::exp(-tau / t2)).epsilon(1e-10));
            REQUIRE(std::abs(out(0, 2)) ==
                    Catch::Approx(0.1 * std::exp(-2.0 * tau / t2)).epsilon(1e-10));
            REQUIRE(out(0, 0).real() == Catch::Approx(1.0 / 3.0));
        }
    }
}

TEST_CASE("state stays physical under propagation") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 100; ++rep) {
        LocalFieldDecomposition d;
        d.b_axial = (u(rng) - 0.5) * 100e-6;
        d.b_perp = u(rng) * 50e-6;
        const Mat3c h0 = build_free_hamiltonian(d, static_cast<int>(u(rng) * 3) - 1);
        const EigenFrame frame = eigenframe(h0);
        const Vec3 bmw(u(rng) * two_pi * 80e6 / gamma_e, 0.0, u(rng) * two_pi * 20e6 / gamma_e);
        const Mat3c h = build_rwa_hamiltonian(frame, bmw, zfs_default + (u(rng) - 0.5) * two_pi * 4e6,
                                              u(rng) < 0.5 ? 0.0 : 0.5 * two_pi);
        const double t2 = u(rng) < 0.3 ? std::numeric_limits<double>::infinity()
                                       : 0.5e-6 + 3e-6 * u(rng);
        const Mat9c e = (liouvillian(h, t2) * (u(rng) * 20e-9)).exp();
        Vec9c v = vec_state(random_density(rng));
        for (int step = 0; step < 12; ++step) {
            v = e * v;
            SpinState s{unvec_state(v)};
            s.check();
        }
    }
}

TEST_CASE("recursive propagators track direct exponentials") {
    LocalFieldDecomposition d;
    d.b_axial = 33e-6;
    d.b_perp = 4e-6;
    const EigenFrame frame = eigenframe(build_free_hamiltonian(d, 1));
    const Mat3c h =
        build_rwa_hamiltonian(frame, Vec3(two_pi * 60e6 / gamma_e, 0.0, 0.0), zfs_default, 0.0);
    const Mat9c l = liouvillian(h, 2e-6);
    const double dt = 2.5e-9;
    const Mat9c e = (l * dt).exp();
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> pick(1, 320);
    for (int rep = 0; rep < 10; ++rep) {
        const int j = pick(rng);
        Mat9c acc = Mat9c::Identity(9, 9);
        for (int s = 0; s < j; ++s) acc = e * acc;
        const Mat9c direct = (l * (dt * j)).exp();
        REQUIRE((acc - direct).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("simulator reduces to the analytic expansion on one axial line") {
    const auto& o = nv_axes()[0];
    VpdrConfig cfg;
    cfg.b_dc = 30e-6 * o.axis;
    cfg.b_mw = VpdrConfig::mw_field_from_peak_rabi(two_pi * 20e6, any_perpendicular(o.axis));
    cfg.orientations = {0};
    cfg.m_i_values = {0};
    cfg.t_grid = {0.0, 2e-9, 60};
    cfg.tau_grid = {0.0, 30e-9, 50};

    AnalyticParams p;
    p.omega_larmor = gamma_e * 30e-6;
    p.omega_rabi = two_pi * 20e6;

    for (double phase : {0.0, 0.5 * two_pi}) {
        cfg.phases = {phase};
        const SignalGrid s = simulate_grid(cfg);
        p.phase = phase;
        double worst = 0.0;
        for (int j = 0; j < cfg.t_grid.count; ++j)
            for (int k = 0; k < cfg.tau_grid.count; ++k)
                worst = std::max(worst,
                                 std::abs(s.values(j, k) -
                                          p0_finite_alpha(s.t_axis[static_cast<std::size_t>(j)],
                                                          s.tau_axis[static_cast<std::size_t>(k)],
                                                          p)));
        REQUIRE(worst < 1e-8);
    }
}

TEST_CASE("simulator basics") {
    VpdrConfig cfg;
    cfg.b_dc = Vec3(-38.4e-6, 25.7e-6, 19.1e-6);
    cfg.b_mw =
        VpdrConfig::mw_field_from_peak_rabi(two_pi * 100e6, mw_direction_from_angles(13.74, 30.05));
    cfg.t2_star = 2e-6;
    cfg.t_grid = {0.0, 2.5e-9, 24};
    cfg.tau_grid = {0.0, 20e-9, 30};

    SECTION("zero-duration pulse leaves the population untouched") {
        VpdrConfig c = cfg;
        c.t_grid = {0.0, 1e-9, 1};
        c.phases = {0.0};
        const SignalGrid s = simulate_grid(c);
        REQUIRE(s.values.minCoeff() == Catch::Approx(1.0).margin(1e-10));
        REQUIRE(s.values.maxCoeff() == Catch::Approx(1.0).margin(1e-10));
        REQUIRE_FALSE(s.phase_summed);
    }

    SECTION("phase sum equals the sum of single-phase runs") {
        const SignalGrid both = simulate_grid(cfg);
        VpdrConfig c0 = cfg, cpi = cfg;
        c0.phases = {0.0};
        cpi.phases = {0.5 * two_pi};
        const SignalGrid s0 = simulate_grid(c0), spi = simulate_grid(cpi);
        REQUIRE((both.values - s0.values - spi.values).cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE(both.phase_summed);
        REQUIRE(both.values.minCoeff() >= -1e-12);
        REQUIRE(both.values.maxCoeff() <= both.p_max() + 1e-12);
    }

    SECTION("m_I values are averaged with equal weight") {
        const SignalGrid full = simulate_grid(cfg);
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(cfg.t_grid.count, cfg.tau_grid.count);
        for (int mi : {-1, 0, 1}) {
            VpdrConfig c = cfg;
            c.m_i_values = {mi};
            mean += simulate_grid(c).values;
        }
        mean /= 3.0;
        REQUIRE((full.values - mean).cwiseAbs().maxCoeff() < 1e-12);
    }

    SECTION("threaded run is bit-identical") {
        const SignalGrid a = simulate_grid(cfg, 1);
        const SignalGrid b = simulate_grid(cfg, 4);
        REQUIRE((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
    }

    SECTION("grid refinement changes nothing at shared points") {
        VpdrConfig fine = cfg;
        fine.t_grid = {0.0, cfg.t_grid.step / 2.0, 2 * cfg.t_grid.count - 1};
        const SignalGrid a = simulate_grid(cfg), b = simulate_grid(fine);
        double worst = 0.0;
        for (int j = 0; j < cfg.t_grid.count; ++j)
            worst = std::max(worst, (a.values.row(j) - b.values.row(2 * j)).cwiseAbs().maxCoeff());
        REQUIRE(worst < 1e-8);
    }

    SECTION("config validation") {
        VpdrConfig bad = cfg;
        bad.t_grid.step = 0.0;
        REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = cfg;
        bad.tau_grid.count = 0;
        REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = cfg;
        bad.t2_star = 0.0;
        REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = cfg;
        bad.phases = {0.3};
        REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = cfg;
        bad.t_grid.count = 3000;
        bad.tau_grid.count = 3000;
        REQUIRE_THROWS_AS(bad.validate(), std::length_error);
        bad = cfg;
        bad.b_dc = Vec3(0.02, 0.0, 0.0);
        REQUIRE_FALSE(bad.validate().empty());
        REQUIRE(cfg.validate().empty());
        REQUIRE_THROWS_AS(VpdrConfig::mw_field_from_peak_rabi(two_pi * 1e6, Vec3::Zero()),
                          std::invalid_argument);
    }
}

TEST_CASE("phase sum removes single quantum content") {
    const auto& o = nv_axes()[2];
    const double bz = 25e-6;
    const double wl = gamma_e * bz;
    VpdrConfig cfg;
    cfg.b_dc = bz * o.axis;
    cfg.b_mw = VpdrConfig::mw_field_from_peak_rabi(two_pi * 30e6, any_perpendicular(o.axis));
    cfg.orientations = {2};
    cfg.m_i_values = {0};
    cfg.t_grid = {0.0, 2.5e-9, 32};
    const double dtau = (two_pi / wl) / 32.0;
    cfg.tau_grid = {0.0, dtau, 128};

    auto peak = [&](const SignalGrid& s, int m) {
        double best = 0.0;
        for (int j = 0; j < s.values.rows(); ++j) {
            cd acc = 0.0;
            for (int k = 0; k < s.values.cols(); ++k)
                acc += s.values(j, k) *
                       std::exp(cd(0.0, -m * wl * s.tau_axis[static_cast<std::size_t>(k)]));
            best = std::max(best, std::abs(acc));
        }
        return best;
    };

    SECTION("coherent") {
        const SignalGrid s = simulate_grid(cfg);
        REQUIRE(peak(s, 1) < 1e-6 * peak(s, 2));
    }
    SECTION("dephased") {
        // With dephasing the broadened DQ line physically overlaps the omega_L
        // bin, so plain DFT bins cannot isolate SQ content. Project each tau
        // trace onto the damped tone basis instead: surviving SQ terms would
        // carry an e^(-tau/T2*) envelope, DQ terms e^(-2 tau/T2*).
        VpdrConfig c = cfg;
        c.t2_star = 2e-6;
        const SignalGrid s = simulate_grid(c);
        const int mt = c.tau_grid.count;
        Eigen::MatrixXd basis(mt, 6);
        for (int k = 0; k < mt; ++k) {
            const double tau = s.tau_axis[static_cast<std::size_t>(k)];
            const double e1 = std::exp(-tau / c.t2_star), e2 = e1 * e1;
            basis(k, 0) = 1.0;
            basis(k, 1) = e2;
            basis(k, 2) = e2 * std::cos(2.0 * wl * tau);
            basis(k, 3) = e2 * std::sin(2.0 * wl * tau);
            basis(k, 4) = e1 * std::cos(wl * tau);
            basis(k, 5) = e1 * std::sin(wl * tau);
        }
        const auto qr = basis.colPivHouseholderQr();
        double sq = 0.0, dq = 0.0;
        for (int j = 0; j < s.values.rows(); ++j) {
            const Eigen::VectorXd coef = qr.solve(s.values.row(j).transpose());
            sq = std::max(sq, std::hypot(coef(4), coef(5)));
            dq = std::max(dq, std::hypot(coef(2), coef(3)));
        }
        REQUIRE(sq < 1e-3 * dq);
    }
}

TEST_CASE("detuning leaves the double quantum frequency unchanged") {
    const auto& o = nv_axes()[0];
    const double bz = 30e-6;
    const double wl = gamma_e * bz;
    VpdrConfig cfg;
    cfg.b_dc = bz * o.axis;
    cfg.b_mw = VpdrConfig::mw_field_from_peak_rabi(two_pi * 40e6, any_perpendicular(o.axis));
    cfg.orientations = {0};
    cfg.m_i_values = {0};
    cfg.t_grid = {2.5e-9, 2.5e-9, 1};
    cfg.tau_grid = {0.0, 12e-9, 400};

    auto dq_freq = [&](double detuning) {
        VpdrConfig c = cfg;
        c.mw_frequency = c.zfs + detuning;
        const SignalGrid s = simulate_grid(c);
        Eigen::VectorXd y = s.values.row(0).transpose();
        return fit_tone(y, s.tau_axis, 1.6 * wl, 2.4 * wl);
    };
    const double f0 = dq_freq(0.0);
    const double f1 = dq_freq(two_pi * 1e6);
    REQUIRE(std::abs(f0 - 2.0 * wl) < two_pi * 0.5);
    REQUIRE(std::abs(f1 - f0) < two_pi * 1.0);
}

TEST_CASE("exact transitions") {
    VpdrConfig cfg;
    cfg.b_dc = 42e-6 * nv_axes()[1].axis;
    cfg.orientations = {1};
    cfg.m_i_values = {0};
    cfg.t_grid = {0.0, 1e-9, 1};
    cfg.tau_grid = {0.0, 1e-9, 1};
    const auto tr = exact_transitions(cfg);
    REQUIRE(tr.size() == 1);
    REQUIRE(tr[0].delta_omega == Catch::Approx(2.0 * gamma_e * 42e-6).margin(1e-3));

    VpdrConfig zero = cfg;
    zero.b_dc = Vec3::Zero();
    zero.m_i_values = {-1, 1};
    const auto trz = exact_transitions(zero);
    REQUIRE(trz[0].delta_omega == Catch::Approx(2.0 * hyperfine_a_default).margin(1e-6));
    REQUIRE(trz[1].delta_omega == Catch::Approx(2.0 * hyperfine_a_default).margin(1e-6));

    // transverse field pulls the splitting below the axial value by
    // ~ (gamma b_perp)^2 wz / Delta^2 (second-order repulsion, asymmetric
    // because the |±1> levels sit at Delta ± wz above |0>)
    const double bz = 40e-6, bperp = 30e-6;
    VpdrConfig tilt = cfg;
    tilt.b_dc = bz * nv_axes()[1].axis + bperp * any_perpendicular(nv_axes()[1].axis);
    const auto trt = exact_transitions(tilt);
    const double wz = gamma_e * bz, wx = gamma_e * bperp;
    const double predicted = 2.0 * wz - wx * wx * wz / (zfs_default * zfs_default);
    REQUIRE(trt[0].delta_omega < 2.0 * wz);
    REQUIRE(trt[0].delta_omega == Catch::Approx(predicted).epsilon(1e-4));
}
