// Command line front end: simulate two-pulse grids, project spectra, invert
// fields, map accuracy and drive robustness, rank drive directions, compare
// sensitivities and reconstruct linear field models. Every run writes a
// manifest (command, config snapshot, seed, code version, wall time, output
// checksums) next to its primary output.
//
// Exit codes: 0 success, 2 invalid input or config, 3 numerical failure.

#include <chrono>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vpdr/io.hpp"

using namespace vpdr;

namespace {

struct Run {
    std::string command;
    json config_snapshot;
    std::optional<std::uint64_t> seed;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
    std::vector<std::string> outputs;

    void finish(const std::string& manifest_path) {
        RunManifest m;
        m.command = command;
        m.config = config_snapshot;
        m.has_seed = seed.has_value();
        m.seed = seed.value_or(0);
        m.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        m.outputs = outputs;
        save_manifest(m, manifest_path);
        std::cout << "manifest " << manifest_path << "\n";
    }
};

VpdrConfig load_validated_config(const std::string& path) {
    const VpdrConfig cfg = load_config(path);
    for (const auto& w : cfg.validate()) std::cerr << "warning: " << w << "\n";
    return cfg;
}

std::vector<double> axis_from_mhz(double start_mhz, double step_mhz, int count) {
    std::vector<double> axis;
    axis.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int j = 0; j < count; ++j) axis.push_back(mhz_to_rad_s(start_mhz + j * step_mhz));
    return axis;
}

std::vector<std::pair<double, double>> direction_grid(double theta_lo, double theta_hi,
                                                      int theta_count, double phi_lo,
                                                      double phi_hi, int phi_count) {
    if (theta_count < 1 || phi_count < 1)
        throw std::invalid_argument("direction grid needs at least one point per angle");
    std::vector<std::pair<double, double>> dirs;
    for (int i = 0; i < theta_count; ++i)
        for (int k = 0; k < phi_count; ++k) {
            const double th =
                theta_count == 1 ? theta_lo
                                 : theta_lo + i * (theta_hi - theta_lo) / (theta_count - 1);
            const double ph =
                phi_count == 1 ? phi_lo : phi_lo + k * (phi_hi - phi_lo) / (phi_count - 1);
            dirs.emplace_back(th, ph);
        }
    return dirs;
}

void print_report(const InversionReport& report) {
    for (const auto& r : report.rows) {
        std::cout << "orientation " << r.orientation;
        if (r.ok)
            std::cout << "  rabi " << rad_s_to_mhz(r.omega_rabi_est) << " MHz  f_fit "
                      << rad_s_to_mhz(r.omega_fit) << " MHz  f_exact "
                      << rad_s_to_mhz(r.omega_exact) << " MHz  dB "
                      << r.delta_b / tesla_per_nt << " nT\n";
        else
            std::cout << "  failed: " << r.message << "\n";
    }
    std::cout << "max |dB| " << report.max_abs_delta_b() / tesla_per_nt << " nT\n";
}

void print_sweep_summary(const std::vector<SweepPoint>& points) {
    std::size_t ok = 0;
    double worst = 0.0;
    for (const auto& pt : points)
        if (pt.ok) {
            ++ok;
            worst = std::max(worst, pt.report.max_abs_delta_b());
        }
    std::cout << ok << "/" << points.size() << " points inverted, worst |dB| "
              << worst / tesla_per_nt << " nT\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"variable-pulse-duration Ramsey toolkit"};
    app.set_version_flag("--version", code_version);
    app.require_subcommand(1);

    std::string config_path, grid_path, peaks_path;
    std::string out, csv, manifest, residuals;
    std::string window = "blackman", kernel = "cos", mode = "mc";
    int threads = 1;
    std::optional<std::uint64_t> seed;

    // simulate
    auto* sim = app.add_subcommand("simulate", "integrate the protocol over the (t, tau) grid");
    sim->add_option("--config", config_path, "config json")->required();
    std::string sim_out = "grid.json";
    sim->add_option("--out", sim_out, "signal grid container")->capture_default_str();
    sim->add_option("--csv", csv, "also export the flat t_ns,tau_ns,value table");
    sim->add_option("--threads", threads)->capture_default_str();
    sim->add_option("--manifest", manifest, "manifest path (default <out>.manifest.json)");
    sim->callback([&] {
        Run run;
        run.command = "simulate";
        const VpdrConfig cfg = load_validated_config(config_path);
        run.config_snapshot = config_to_json(cfg);
        const SignalGrid grid = simulate_grid(cfg, threads);
        save_signal_grid(grid, sim_out);
        run.outputs.push_back(sim_out);
        if (!csv.empty()) {
            write_signal_csv(grid, csv);
            run.outputs.push_back(csv);
        }
        std::cout << "grid " << grid.t_axis.size() << " x " << grid.tau_axis.size()
                  << " written to " << sim_out << "\n";
        run.finish(manifest.empty() ? sim_out + ".manifest.json" : manifest);
    });

    // spectrum
    auto* spec = app.add_subcommand("spectrum", "project a signal grid onto fringe kernels");
    std::string spec_out = "map.json";
    double nu_start = 40.0, nu_step = 0.5, om_start = 3.0, om_step = 0.05;
    int nu_count = 211, om_count = 141;
    spec->add_option("--config", config_path, "config json (grid is simulated)");
    spec->add_option("--grid", grid_path, "previously saved signal grid");
    spec->add_option("--out", spec_out)->capture_default_str();
    spec->add_option("--csv", csv, "also export nu_mhz,omega_mhz,re,im");
    spec->add_option("--window", window, "boxcar|blackman|cosine")->capture_default_str();
    spec->add_option("--kernel", kernel, "cos|exp")->capture_default_str();
    spec->add_option("--nu-start-mhz", nu_start)->capture_default_str();
    spec->add_option("--nu-step-mhz", nu_step)->capture_default_str();
    spec->add_option("--nu-count", nu_count)->capture_default_str();
    spec->add_option("--omega-start-mhz", om_start)->capture_default_str();
    spec->add_option("--omega-step-mhz", om_step)->capture_default_str();
    spec->add_option("--omega-count", om_count)->capture_default_str();
    spec->add_option("--threads", threads)->capture_default_str();
    spec->add_option("--manifest", manifest);
    spec->callback([&] {
        Run run;
        run.command = "spectrum";
        if (config_path.empty() == grid_path.empty())
            throw std::invalid_argument("spectrum needs exactly one of --config or --grid");
        SignalGrid grid;
        if (!config_path.empty()) {
            const VpdrConfig cfg = load_validated_config(config_path);
            run.config_snapshot = config_to_json(cfg);
            grid = simulate_grid(cfg, threads);
        } else {
            grid = load_signal_grid(grid_path);
            run.config_snapshot = config_to_json(grid.config);
        }
        const SpectralMap map = spectral_map(
            grid, axis_from_mhz(nu_start, nu_step, nu_count),
            axis_from_mhz(om_start, om_step, om_count), window_from_string(window),
            kernel_from_string(kernel), threads);
        save_spectral_map(map, spec_out);
        run.outputs.push_back(spec_out);
        if (!csv.empty()) {
            write_spectral_csv(map, csv);
            run.outputs.push_back(csv);
        }
        std::cout << "map " << map.nu_axis.size() << " x " << map.omega_axis.size()
                  << " written to " << spec_out << "\n";
        run.finish(manifest.empty() ? spec_out + ".manifest.json" : manifest);
    });

    // invert
    auto* inv = app.add_subcommand("invert", "recover per-orientation projections from a grid");
    std::string inv_out = "report.json";
    std::vector<double> known_rabi_mhz;
    inv->add_option("--config", config_path)->required();
    inv->add_option("--out", inv_out)->capture_default_str();
    inv->add_option("--window", window)->capture_default_str();
    inv->add_option("--known-rabi-mhz", known_rabi_mhz,
                    "four calibrated Rabi frequencies; omit to self-calibrate")
        ->expected(4);
    inv->add_option("--threads", threads)->capture_default_str();
    inv->add_option("--manifest", manifest);
    inv->callback([&] {
        Run run;
        run.command = "invert";
        const VpdrConfig cfg = load_validated_config(config_path);
        run.config_snapshot = config_to_json(cfg);
        InversionOptions options;
        options.window = window_from_string(window);
        if (!known_rabi_mhz.empty()) {
            std::array<double, 4> rabi{};
            for (int k = 0; k < 4; ++k)
                rabi[static_cast<std::size_t>(k)] =
                    mhz_to_rad_s(known_rabi_mhz[static_cast<std::size_t>(k)]);
            options.known_rabi = rabi;
        }
        const InversionReport report = invert(simulate_grid(cfg, threads), cfg, options);
        save_inversion_report(report, inv_out);
        run.outputs.push_back(inv_out);
        print_report(report);
        run.finish(manifest.empty() ? inv_out + ".manifest.json" : manifest);
    });

    // sweep-accuracy
    auto* acc = app.add_subcommand("sweep-accuracy",
                                   "field-direction accuracy map at fixed magnitude");
    std::string acc_out = "accuracy.csv";
    double b_ut = 50.0, theta_lo = 5.0, theta_hi = 85.0, phi_lo = 5.0, phi_hi = 85.0;
    int theta_count = 5, phi_count = 5;
    bool exact_rabi = false;
    acc->add_option("--config", config_path)->required();
    acc->add_option("--out", acc_out)->capture_default_str();
    acc->add_option("--b-ut", b_ut, "field magnitude")->capture_default_str();
    acc->add_option("--theta-start", theta_lo)->capture_default_str();
    acc->add_option("--theta-stop", theta_hi)->capture_default_str();
    acc->add_option("--theta-count", theta_count)->capture_default_str();
    acc->add_option("--phi-start", phi_lo)->capture_default_str();
    acc->add_option("--phi-stop", phi_hi)->capture_default_str();
    acc->add_option("--phi-count", phi_count)->capture_default_str();
    acc->add_flag("--exact-rabi", exact_rabi,
                  "calibrate with the drive's exact Rabi frequencies");
    acc->add_option("--window", window)->capture_default_str();
    acc->add_option("--threads", threads)->capture_default_str();
    acc->add_option("--manifest", manifest);
    acc->callback([&] {
        Run run;
        run.command = "sweep-accuracy";
        const VpdrConfig cfg = load_validated_config(config_path);
        run.config_snapshot = config_to_json(cfg);
        InversionOptions options;
        options.window = window_from_string(window);
        if (exact_rabi) options.known_rabi = rabi_frequencies(cfg.b_mw);
        const auto dirs =
            direction_grid(theta_lo, theta_hi, theta_count, phi_lo, phi_hi, phi_count);
        const auto points =
            accuracy_sweep(cfg, dirs, b_ut * tesla_per_ut, options, threads);
        write_sweep_csv(points, acc_out);
        run.outputs.push_back(acc_out);
        print_sweep_summary(points);
        run.finish(manifest.empty() ? acc_out + ".manifest.json" : manifest);
    });

    // sweep-robustness
    auto* rob = app.add_subcommand("sweep-robustness",
                                   "self-calibrated inversion under drive perturbations");
    std::string rob_out = "robustness.csv";
    std::vector<double> omega_list_mhz, theta_list, phi_list;
    rob->add_option("--config", config_path)->required();
    rob->add_option("--out", rob_out)->capture_default_str();
    rob->add_option("--mode", mode, "amplitude|angle")->capture_default_str();
    rob->add_option("--omega-max-mhz", omega_list_mhz,
                    "drive amplitudes (amplitude mode) or single amplitude (angle mode)");
    rob->add_option("--theta-deg", theta_list, "drive polar angles (angle mode)");
    rob->add_option("--phi-deg", phi_list, "drive azimuths (angle mode)");
    rob->add_option("--window", window)->capture_default_str();
    rob->add_option("--threads", threads)->capture_default_str();
    rob->add_option("--manifest", manifest);
    rob->callback([&] {
        Run run;
        run.command = "sweep-robustness";
        const VpdrConfig cfg = load_validated_config(config_path);
        run.config_snapshot = config_to_json(cfg);
        InversionOptions options;
        options.window = window_from_string(window);
        std::vector<SweepPoint> points;
        if (mode == "amplitude") {
            if (omega_list_mhz.empty())
                throw std::invalid_argument("amplitude mode needs --omega-max-mhz values");
            std::vector<double> omegas;
            for (double f : omega_list_mhz) omegas.push_back(mhz_to_rad_s(f));
            points = robustness_amplitude_sweep(cfg, omegas, options, threads);
        } else if (mode == "angle") {
            if (theta_list.size() != phi_list.size() || theta_list.empty())
                throw std::invalid_argument(
                    "angle mode needs matching --theta-deg and --phi-deg lists");
            if (omega_list_mhz.size() != 1)
                throw std::invalid_argument("angle mode needs one --omega-max-mhz value");
            std::vector<std::pair<double, double>> angles;
            for (std::size_t i = 0; i < theta_list.size(); ++i)
                angles.emplace_back(theta_list[i], phi_list[i]);
            points = robustness_angle_sweep(cfg, angles, mhz_to_rad_s(omega_list_mhz[0]),
                                            options, threads);
        } else {
            throw std::invalid_argument("mode must be amplitude or angle");
        }
        write_sweep_csv(points, rob_out);
        run.outputs.push_back(rob_out);
        print_sweep_summary(points);
        run.finish(manifest.empty() ? rob_out + ".manifest.json" : manifest);
    });

    // optimize-mw
    auto* opt = app.add_subcommand("optimize-mw",
                                   "rank drive directions by harmonic separation");
    std::string opt_out = "mw.csv";
    double opt_theta_lo = 0.0, opt_theta_hi = 90.0, opt_phi_lo = 0.0, opt_phi_hi = 90.0;
    double step_deg = 0.25;
    std::optional<double> min_rabi_frac;
    int top = 10;
    opt->add_option("--out", opt_out)->capture_default_str();
    opt->add_option("--theta-start", opt_theta_lo)->capture_default_str();
    opt->add_option("--theta-stop", opt_theta_hi)->capture_default_str();
    opt->add_option("--phi-start", opt_phi_lo)->capture_default_str();
    opt->add_option("--phi-stop", opt_phi_hi)->capture_default_str();
    opt->add_option("--step-deg", step_deg)->capture_default_str();
    opt->add_option("--min-rabi-frac", min_rabi_frac,
                    "require every orientation to keep at least this Rabi fraction");
    opt->add_option("--top", top, "rows to keep")->capture_default_str();
    opt->add_option("--threads", threads)->capture_default_str();
    opt->add_option("--manifest", manifest);
    opt->callback([&] {
        Run run;
        run.command = "optimize-mw";
        auto results = optimize_direction({opt_theta_lo, opt_theta_hi}, {opt_phi_lo, opt_phi_hi},
                                          step_deg, min_rabi_frac, threads);
        if (top > 0 && results.size() > static_cast<std::size_t>(top))
            results.resize(static_cast<std::size_t>(top));
        write_mw_csv(results, opt_out);
        run.outputs.push_back(opt_out);
        const auto& best = results.front();
        std::cout << "best direction theta " << best.theta_deg << " deg, phi " << best.phi_deg
                  << " deg, separation " << 100.0 * best.min_separation_frac
                  << "%, min Rabi fraction " << best.min_rabi_frac() << "\n";
        run.finish(manifest.empty() ? opt_out + ".manifest.json" : manifest);
    });

    // sensitivity
    auto* sens = app.add_subcommand("sensitivity",
                                    "pulsed-readout to projection sensitivity comparisons");
    std::string sens_out = "sensitivity.csv";
    std::vector<double> max_t_ns, tau_max_ns, alphas;
    int trials = 200;
    double sigma = 1e-4;
    std::optional<double> tau_opt_ns;
    bool hyperfine = false;
    sens->add_option("--config", config_path)->required();
    sens->add_option("--out", sens_out)->capture_default_str();
    sens->add_option("--mode", mode, "mc|fit-cost|analytic")->capture_default_str();
    sens->add_option("--seed", seed, "noise stream seed")->required();
    sens->add_option("--max-t-ns", max_t_ns, "pulse-duration spans (mc mode)");
    sens->add_option("--tau-max-ns", tau_max_ns, "free-evolution spans (fit-cost mode)");
    sens->add_option("--alpha", alphas, "drive-to-precession ratios (analytic mode)");
    sens->add_option("--trials", trials)->capture_default_str();
    sens->add_option("--sigma", sigma, "per-sample noise")->capture_default_str();
    sens->add_option("--tau-opt-ns", tau_opt_ns, "free evolution time (default: slope optimum)");
    sens->add_flag("--hyperfine", hyperfine, "triple-line model");
    sens->add_option("--window", window)->capture_default_str();
    sens->add_option("--threads", threads)->capture_default_str();
    sens->add_option("--manifest", manifest);
    sens->callback([&] {
        Run run;
        run.command = "sensitivity";
        run.seed = seed;
        const VpdrConfig cfg = load_validated_config(config_path);
        run.config_snapshot = config_to_json(cfg);
        const WindowKind w = window_from_string(window);
        if (mode == "mc") {
            if (max_t_ns.empty())
                throw std::invalid_argument("mc mode needs --max-t-ns values");
            const double omega_l = single_orientation_precession(cfg, hyperfine);
            const double tau_opt =
                tau_opt_ns ? *tau_opt_ns * s_per_ns
                           : optimal_free_evolution(omega_l, cfg.t2_star, hyperfine,
                                                    cfg.hyperfine_a);
            std::vector<SensitivityRatio> rows;
            for (double span : max_t_ns) {
                rows.push_back(monte_carlo_ratio(cfg, tau_opt, sigma, trials, span * s_per_ns,
                                                 w, hyperfine, *seed, threads));
                std::cout << "max_t " << span << " ns: ratio " << rows.back().ratio
                          << (rows.back().dead_zone ? " (dead zone)" : "") << "\n";
            }
            write_sensitivity_csv(rows, sens_out);
            run.outputs.push_back(sens_out);
        } else if (mode == "fit-cost") {
            if (tau_max_ns.empty())
                throw std::invalid_argument("fit-cost mode needs --tau-max-ns values");
            std::vector<double> grid;
            for (double span : tau_max_ns) grid.push_back(span * s_per_ns);
            const auto rows =
                fit_cost_ratio(cfg, grid, sigma, trials, hyperfine, w, *seed, threads);
            for (const auto& r : rows)
                std::cout << "tau_max " << r.tau_max / s_per_ns << " ns: ratio " << r.ratio
                          << " (" << r.excluded << " excluded)\n";
            write_fit_cost_csv(rows, sens_out);
            run.outputs.push_back(sens_out);
        } else if (mode == "analytic") {
            std::cout << "hard-pulse ratio (" << window << "): " << ratio_hard_pulse(w) << "\n";
            for (double a : alphas)
                std::cout << "alpha " << a << ": ratio " << ratio_finite_alpha(a, w) << "\n";
        } else {
            throw std::invalid_argument("mode must be mc, fit-cost or analytic");
        }
        run.finish(manifest.empty() ? sens_out + ".manifest.json" : manifest);
    });

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct",
                                   "fit a linear field model to coil-voltage peak tables");
    std::string rec_out = "field_model.json";
    std::vector<double> init_offset_ut{0.0, 0.0, 0.0}, init_slope_ut{0.0, 0.0, 0.0};
    bool auto_harmonic = false;
    rec->add_option("--peaks", peaks_path, "voltage,orientation_index,omega_max_mhz,... table")
        ->required();
    rec->add_option("--out", rec_out)->capture_default_str();
    rec->add_option("--residuals", residuals, "per-observation residual table");
    rec->add_option("--init-offset-ut", init_offset_ut)->expected(3);
    rec->add_option("--init-slope-ut", init_slope_ut)->expected(3);
    rec->add_flag("--assign-harmonic", auto_harmonic,
                  "pick the shared drive harmonic that explains the peaks");
    rec->add_option("--manifest", manifest);
    rec->callback([&] {
        Run run;
        run.command = "reconstruct";
        auto peaks = read_peaks_csv(peaks_path);
        if (auto_harmonic) {
            const auto choice = assign_harmonic(peaks);
            for (auto& p : peaks) p.harmonic_n = choice.n;
            std::cout << "assigned harmonic n = " << choice.n << "\n";
        }
        LinearFieldModel init;
        init.offset = Vec3(init_offset_ut[0], init_offset_ut[1], init_offset_ut[2]) * tesla_per_ut;
        init.slope = Vec3(init_slope_ut[0], init_slope_ut[1], init_slope_ut[2]) * tesla_per_ut;
        const FieldFitResult fit = fit_linear_field(peaks, init);
        save_field_fit(fit, rec_out);
        run.outputs.push_back(rec_out);
        if (!residuals.empty()) {
            write_residual_csv(peaks, fit, residuals);
            run.outputs.push_back(residuals);
        }
        std::cout << "offset (" << fit.model.offset.x() / tesla_per_ut << ", "
                  << fit.model.offset.y() / tesla_per_ut << ", "
                  << fit.model.offset.z() / tesla_per_ut << ") uT, slope ("
                  << fit.model.slope.x() / tesla_per_ut << ", "
                  << fit.model.slope.y() / tesla_per_ut << ", "
                  << fit.model.slope.z() / tesla_per_ut << ") uT/V, rms "
                  << fit.rms / tesla_per_ut << " uT"
                  << (fit.diagnostics.converged ? "" : " (not converged)") << "\n";
        run.finish(manifest.empty() ? rec_out + ".manifest.json" : manifest);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::length_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
