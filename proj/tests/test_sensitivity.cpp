#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vpdr/sensitivity.hpp"

using namespace vpdr;

namespace {

const double hard_pulse = 2.0 * std::sqrt(2.0);

VpdrConfig single_orientation_config() {
    VpdrConfig c;
    c.b_dc = Vec3(-38.4e-6, 25.7e-6, 19.1e-6);
    c.b_mw = VpdrConfig::mw_field_from_peak_rabi(two_pi * 100e6,
                                                 mw_direction_from_angles(13.74, 30.05));
    c.t2_star = 2e-6;
    c.t_grid = {0.0, 2.5e-9, 40};
    c.tau_grid = {0.0, 20e-9, 150};
    c.orientations = {2};
    return c;
}

double config_omega_l(const VpdrConfig& c) {
    return gamma_e * c.b_dc.dot(nv_axes()[static_cast<std::size_t>(c.orientations[0])].axis);
}

} // namespace

TEST_CASE("hard-pulse ratio matches continuum window moments") {
    REQUIRE(ratio_hard_pulse(WindowKind::boxcar) == Catch::Approx(hard_pulse).margin(1e-14));
    // Cosine window: mean 2/pi, mean square 1/2, so the ratio collapses to pi.
    REQUIRE(ratio_hard_pulse(WindowKind::cosine) ==
            Catch::Approx(0.5 * two_pi).margin(1e-12));
    // Independent check against dense discrete moments of the actual window.
    for (WindowKind k : {WindowKind::blackman, WindowKind::cosine}) {
        const auto w = window_weights(k, 200000);
        double mean = 0.0, mean_sq = 0.0;
        for (double v : w) {
            mean += v;
            mean_sq += v * v;
        }
        mean /= static_cast<double>(w.size());
        mean_sq /= static_cast<double>(w.size());
        const double expected = hard_pulse * std::sqrt(mean_sq) / mean;
        REQUIRE(ratio_hard_pulse(k) == Catch::Approx(expected).epsilon(1e-4));
    }
    REQUIRE(ratio_hard_pulse(WindowKind::blackman) == Catch::Approx(3.7167).margin(2e-4));
}

TEST_CASE("finite drive-to-precession ratio follows the rational weight") {
    const double f10 = std::pow(104.0, 4) / (1e4 * (1e4 - 1600.0 - 192.0));
    REQUIRE(ratio_finite_alpha(10.0, WindowKind::boxcar) ==
            Catch::Approx(hard_pulse * f10).margin(1e-12));
    REQUIRE(ratio_finite_alpha(10.0, WindowKind::boxcar) == Catch::Approx(4.031).margin(1e-3));
    REQUIRE(ratio_finite_alpha(50.0, WindowKind::boxcar) ==
            Catch::Approx(hard_pulse).epsilon(0.015));
    REQUIRE(ratio_finite_alpha(1e5, WindowKind::boxcar) ==
            Catch::Approx(hard_pulse).epsilon(1e-6));
}

TEST_CASE("finite-alpha ratio is singular at the denominator root") {
    REQUIRE_THROWS_AS(ratio_finite_alpha(std::sqrt(24.0), WindowKind::boxcar),
                      std::domain_error);
}

TEST_CASE("finite-alpha ratio decreases monotonically to its limit") {
    double prev = ratio_finite_alpha(20.0, WindowKind::boxcar);
    for (int a = 21; a <= 100; ++a) {
        const double r = ratio_finite_alpha(static_cast<double>(a), WindowKind::boxcar);
        REQUIRE(r < prev);
        REQUIRE(r > hard_pulse);
        prev = r;
    }
}

TEST_CASE("fringe slope kernel and its limits") {
    const double t2 = 2e-6;
    REQUIRE(slope_function(0.7e-6, 0.0, t2) == 0.0);

    const double wl_small = two_pi * 1e3;
    REQUIRE(slope_function(t2, wl_small, t2) ==
            Catch::Approx(slope_small_field_limit(wl_small, t2)).epsilon(3e-4));
    REQUIRE(optimal_free_evolution(wl_small, t2) == Catch::Approx(t2).epsilon(0.01));

    const double wl_large = two_pi * 10e6;
    const double tau_star = optimal_free_evolution(wl_large, t2);
    REQUIRE(std::abs(tau_star - 0.5 * t2) < 0.5 * two_pi / (2.0 * wl_large));
    REQUIRE(std::abs(slope_function(tau_star, wl_large, t2)) ==
            Catch::Approx(t2 / (2.0 * std::exp(1.0))).epsilon(5e-3));
}

TEST_CASE("optimal free evolution matches a brute-force slope maximization") {
    const double wl = two_pi * 0.7281e6, t2 = 2e-6;
    for (bool hyperfine : {false, true}) {
        double best_tau = 0.0, best = -1.0;
        for (double tau = 1e-8; tau < 3e-6; tau += 1e-11) {
            double acc = 0.0;
            for (int m = -1; m <= 1; ++m) {
                if (!hyperfine && m != 0) continue;
                acc += slope_function(tau, wl + m * hyperfine_a_default, t2);
            }
            if (std::abs(acc) > best) {
                best = std::abs(acc);
                best_tau = tau;
            }
        }
        const double opt = optimal_free_evolution(wl, t2, hyperfine);
        REQUIRE(opt == Catch::Approx(best_tau).margin(5e-11));
        REQUIRE(optimal_free_evolution(-wl, t2, hyperfine) == Catch::Approx(opt).margin(5e-11));
    }
    REQUIRE(optimal_free_evolution(wl, t2, false) == Catch::Approx(862e-9).margin(4e-9));
    REQUIRE(optimal_free_evolution(wl, t2, true) == Catch::Approx(1157e-9).margin(12e-9));
}

TEST_CASE("dead-zone bound and excluded angular band") {
    const auto b = dead_zone_bound(1.0, 2e-6);
    REQUIRE(b.omega_min == Catch::Approx(std::exp(1.0) / 8e-6).margin(1e-6));
    REQUIRE(b.b_min == Catch::Approx(1.9297e-6).epsilon(1e-4));
    REQUIRE(dead_zone_band_deg(0.25, 2e-6, 50e-6) == Catch::Approx(0.553).margin(0.01));
    REQUIRE(dead_zone_band_deg(0.25, 2e-6, 50e-6) < 0.65);
    REQUIRE(dead_zone_bound(1e-9, 2e-6).b_min < 1e-14);
    REQUIRE(dead_zone_band_deg(1.0, 2e-6, 1e-6) == 90.0);
    REQUIRE_THROWS_AS(dead_zone_bound(0.0, 2e-6), std::invalid_argument);
    REQUIRE_THROWS_AS(dead_zone_bound(1.2, 2e-6), std::invalid_argument);
    REQUIRE_THROWS_AS(dead_zone_band_deg(0.5, 2e-6, 0.0), std::invalid_argument);
}

TEST_CASE("short-pulse Monte-Carlo ratio approaches the hard-pulse limit") {
    const auto c = single_orientation_config();
    const double tau_opt = optimal_free_evolution(config_omega_l(c), c.t2_star, false);
    const auto r = monte_carlo_ratio(c, tau_opt, 1e-4, 20000, 50e-9, WindowKind::boxcar,
                                     false, 42);
    REQUIRE(r.ratio == Catch::Approx(hard_pulse).epsilon(0.05));
    REQUIRE(r.ratio > 0.99 * hard_pulse);
    REQUIRE(r.ci_low < r.ratio);
    REQUIRE(r.ci_high > r.ratio);
    REQUIRE_FALSE(r.dead_zone);

    SECTION("fixed seed reproduces bit-identical results") {
        const auto again = monte_carlo_ratio(c, tau_opt, 1e-4, 20000, 50e-9,
                                             WindowKind::boxcar, false, 42);
        REQUIRE(again.ratio == r.ratio);
        const auto other = monte_carlo_ratio(c, tau_opt, 1e-4, 20000, 50e-9,
                                             WindowKind::boxcar, false, 43);
        REQUIRE(other.ratio != r.ratio);
    }

    SECTION("window consistency matches the analytic moment factor") {
        const auto rb = monte_carlo_ratio(c, tau_opt, 1e-4, 20000, 50e-9,
                                          WindowKind::blackman, false, 42);
        const double q = rb.ratio / r.ratio;
        const double analytic = ratio_hard_pulse(WindowKind::blackman) / hard_pulse;
        REQUIRE(q == Catch::Approx(analytic).epsilon(0.10));
    }

    SECTION("hyperfine structure gives a similar ratio") {
        const double tau_hf = optimal_free_evolution(config_omega_l(c), c.t2_star, true);
        const auto rh = monte_carlo_ratio(c, tau_hf, 1e-4, 20000, 50e-9, WindowKind::boxcar,
                                          true, 42);
        REQUIRE(rh.ratio == Catch::Approx(r.ratio).epsilon(0.10));
    }
}

TEST_CASE("dephasing during long pulses raises the sensitivity cost") {
    const auto c = single_orientation_config();
    const double tau_opt = optimal_free_evolution(config_omega_l(c), c.t2_star, false);
    const auto r = monte_carlo_ratio(c, tau_opt, 1e-4, 20000, 800e-9, WindowKind::boxcar,
                                     false, 42);
    REQUIRE(r.ratio / hard_pulse > 1.40);
    REQUIRE(r.ratio / hard_pulse < 1.70);
}

TEST_CASE("perpendicular field is flagged as a dead zone") {
    auto c = single_orientation_config();
    c.orientations = {0};
    c.b_dc = 30e-6 * Vec3(1, -1, 0).normalized();
    const auto r = monte_carlo_ratio(c, 860e-9, 1e-4, 2, 50e-9, WindowKind::boxcar, false, 1);
    REQUIRE(r.dead_zone);
    REQUIRE(std::isinf(r.ratio));
}

TEST_CASE("Monte-Carlo input validation") {
    const auto c = single_orientation_config();
    REQUIRE_THROWS_AS(monte_carlo_ratio(c, 860e-9, 1e-4, 0, 50e-9, WindowKind::boxcar, false),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(monte_carlo_ratio(c, 860e-9, 0.0, 10, 50e-9, WindowKind::boxcar, false),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(monte_carlo_ratio(c, 860e-9, 1e-4, 10, 2.4e-9, WindowKind::boxcar, false),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(monte_carlo_ratio(c, 0.0, 1e-4, 10, 50e-9, WindowKind::boxcar, false),
                      std::invalid_argument);
    auto multi = c;
    multi.orientations = {0, 1, 2, 3};
    REQUIRE_THROWS_AS(monte_carlo_ratio(multi, 860e-9, 1e-4, 10, 50e-9, WindowKind::boxcar,
                                        false),
                      std::invalid_argument);
}

TEST_CASE("single free evolution time at the optimum is cost-neutral") {
    auto c = single_orientation_config();
    c.t_grid = {0.0, 2.5e-9, 20};
    const double tau_opt = optimal_free_evolution(config_omega_l(c), c.t2_star, false);
    c.tau_grid = {tau_opt, 20e-9, 1};
    const auto pts = fit_cost_ratio(c, {tau_opt + 1e-9}, 1e-4, 600, false);
    REQUIRE(pts.size() == 1);
    REQUIRE(pts[0].ratio == Catch::Approx(1.0).margin(0.1));
    REQUIRE(pts[0].excluded == 0);

    const auto again = fit_cost_ratio(c, {tau_opt + 1e-9}, 1e-4, 600, false);
    REQUIRE(again[0].ratio == pts[0].ratio);
}

TEST_CASE("fitting many free evolution times costs about five-fold with hyperfine") {
    const auto c = single_orientation_config();
    const auto pts = fit_cost_ratio(c, {3e-6}, 1e-4, 120, true);
    REQUIRE(pts.size() == 1);
    REQUIRE(pts[0].tau_max == 3e-6);
    REQUIRE(pts[0].ratio > 3.5);
    REQUIRE(pts[0].ratio < 6.0);
    REQUIRE(pts[0].excluded == 0);
    REQUIRE(pts[0].ci_low < pts[0].ratio);
}

TEST_CASE("fit-cost input validation") {
    const auto c = single_orientation_config();
    REQUIRE_THROWS_AS(fit_cost_ratio(c, {}, 1e-4, 100, false), std::invalid_argument);
    REQUIRE_THROWS_AS(fit_cost_ratio(c, {3e-6}, 1e-4, 1, false), std::invalid_argument);
    REQUIRE_THROWS_AS(fit_cost_ratio(c, {-1e-9}, 1e-4, 100, false), std::invalid_argument);
    auto multi = c;
    multi.orientations = {1, 2};
    REQUIRE_THROWS_AS(fit_cost_ratio(multi, {3e-6}, 1e-4, 100, false), std::invalid_argument);
}
