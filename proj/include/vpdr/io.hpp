#pragma once

// File formats. JSON documents are self-describing (format tag, version,
// config echo); CSV files are flat tables with a fixed header. Interface
// units are MHz, ns, microtesla, nanotesla and degrees; structs keep rad/s,
// seconds and tesla internally. Numbers are written with shortest
// round-trip formatting, so write-then-read is value-exact.

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "constants.hpp"
#include "field_recon.hpp"
#include "inversion.hpp"
#include "lindblad.hpp"
#include "mw_optimizer.hpp"
#include "sensitivity.hpp"
#include "spectral.hpp"

namespace vpdr {

inline constexpr const char* code_version = "0.1.0";

// Interface-unit scale factors; every file conversion goes through these.
inline constexpr double s_per_ns = 1e-9;
inline constexpr double tesla_per_ut = 1e-6;
inline constexpr double tesla_per_nt = 1e-9;

using json = nlohmann::ordered_json;

namespace detail {

inline std::string format_double(double x) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return std::string(buf.data(), res.ptr);
}

inline double parse_double(const std::string& s, const std::string& ctx) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || end != begin + s.size())
        throw std::invalid_argument(ctx + ": cannot parse number \"" + s + "\"");
    return v;
}

inline long long parse_int(const std::string& s, const std::string& ctx) {
    long long v = 0;
    const auto res = std::from_chars(s.c_str(), s.c_str() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.c_str() + s.size())
        throw std::invalid_argument(ctx + ": cannot parse integer \"" + s + "\"");
    return v;
}

inline std::ofstream open_for_write(const std::string& path) {
    std::ofstream f(path);
    if (!f.is_open()) throw std::invalid_argument("cannot open \"" + path + "\" for writing");
    return f;
}

inline void finish_write(std::ofstream& f, const std::string& path) {
    f.flush();
    if (!f.good()) throw std::runtime_error("write to \"" + path + "\" failed");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

// Commas and line breaks would corrupt the table, so free-text fields are
// flattened before writing.
inline std::string sanitize_csv_text(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const std::string& path, const std::vector<std::string>& expected_header) {
    std::ifstream f(path);
    if (!f.is_open()) throw std::invalid_argument("cannot open \"" + path + "\"");
    CsvTable table;
    std::string line;
    if (!std::getline(f, line)) throw std::invalid_argument(path + ": empty file");
    table.header = split_csv_line(line);
    if (table.header != expected_header) {
        std::string want;
        for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
        throw std::invalid_argument(path + ": unexpected header; want \"" + want + "\"");
    }
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != expected_header.size())
            throw std::invalid_argument(path + ": row with " + std::to_string(fields.size()) +
                                        " fields, expected " + std::to_string(expected_header.size()));
        table.rows.push_back(std::move(fields));
    }
    return table;
}

inline void require_key(const json& j, const std::string& key, const std::string& ctx) {
    if (!j.contains(key))
        throw std::invalid_argument(ctx + ": missing required key \"" + key + "\"");
}

inline double get_number(const json& j, const std::string& key, const std::string& ctx) {
    require_key(j, key, ctx);
    if (!j.at(key).is_number())
        throw std::invalid_argument(ctx + ": key \"" + key + "\" must be a number");
    return j.at(key).get<double>();
}

inline double get_number_or(const json& j, const std::string& key, double fallback) {
    return j.contains(key) ? j.at(key).get<double>() : fallback;
}

inline json vec3_to_json(const Vec3& v, double scale) {
    return json::array({v.x() * scale, v.y() * scale, v.z() * scale});
}

inline Vec3 vec3_from_json(const json& j, double scale, const std::string& ctx) {
    if (!j.is_array() || j.size() != 3)
        throw std::invalid_argument(ctx + ": expected an array of three numbers");
    return Vec3(j.at(0).get<double>() * scale, j.at(1).get<double>() * scale,
                j.at(2).get<double>() * scale);
}

inline void check_format(const json& j, const std::string& tag, const std::string& ctx) {
    if (j.contains("format") && j.at("format").get<std::string>() != tag)
        throw std::invalid_argument(ctx + ": format is \"" +
                                    j.at("format").get<std::string>() + "\", expected \"" + tag +
                                    "\"");
}

} // namespace detail

inline json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f.is_open()) throw std::invalid_argument("cannot open \"" + path + "\"");
    try {
        return json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

inline void save_json(const json& j, const std::string& path) {
    auto f = detail::open_for_write(path);
    f << j.dump(2) << '\n';
    detail::finish_write(f, path);
}

// --- protocol config ---------------------------------------------------

inline json grid_to_json(const GridSpec& g) {
    return json{{"start_ns", g.start / s_per_ns}, {"step_ns", g.step / s_per_ns}, {"count", g.count}};
}

inline GridSpec grid_from_json(const json& j, const std::string& ctx) {
    GridSpec g;
    g.start = detail::get_number(j, "start_ns", ctx) * s_per_ns;
    g.step = detail::get_number(j, "step_ns", ctx) * s_per_ns;
    detail::require_key(j, "count", ctx);
    g.count = j.at("count").get<int>();
    return g;
}

inline json config_to_json(const VpdrConfig& c) {
    json j;
    j["format"] = "vpdr-config";
    j["version"] = 1;
    j["b_dc_ut"] = detail::vec3_to_json(c.b_dc, 1.0 / tesla_per_ut);
    j["b_mw_ut"] = detail::vec3_to_json(c.b_mw, 1.0 / tesla_per_ut);
    j["mw_frequency_mhz"] = rad_s_to_mhz(c.mw_frequency);
    j["zfs_mhz"] = rad_s_to_mhz(c.zfs);
    j["hyperfine_mhz"] = rad_s_to_mhz(c.hyperfine_a);
    if (std::isfinite(c.t2_star))
        j["t2_star_us"] = c.t2_star * 1e6;
    else
        j["t2_star_us"] = "inf";
    j["t_grid"] = grid_to_json(c.t_grid);
    j["tau_grid"] = grid_to_json(c.tau_grid);
    json phases = json::array();
    for (double p : c.phases) phases.push_back(std::abs(p) < 1e-9 ? "0" : "pi");
    j["phases"] = phases;
    j["orientations"] = c.orientations;
    j["m_i_values"] = c.m_i_values;
    j["max_cells"] = c.max_cells;
    return j;
}

// Accepts either an explicit drive vector (b_mw_ut) or a peak Rabi frequency
// plus a direction (omega_max_mhz with mw_theta_deg/mw_phi_deg or
// mw_direction). The two spellings are mutually exclusive.
inline VpdrConfig config_from_json(const json& j) {
    const std::string ctx = "config";
    detail::check_format(j, "vpdr-config", ctx);
    VpdrConfig c;
    detail::require_key(j, "b_dc_ut", ctx);
    c.b_dc = detail::vec3_from_json(j.at("b_dc_ut"), tesla_per_ut, ctx + ".b_dc_ut");

    const bool has_vec = j.contains("b_mw_ut");
    const bool has_peak = j.contains("omega_max_mhz");
    if (has_vec && has_peak)
        throw std::invalid_argument(ctx + ": give either b_mw_ut or omega_max_mhz, not both");
    if (!has_vec && !has_peak)
        throw std::invalid_argument(ctx + ": missing required key \"omega_max_mhz\" (or b_mw_ut)");
    if (has_vec) {
        c.b_mw = detail::vec3_from_json(j.at("b_mw_ut"), tesla_per_ut, ctx + ".b_mw_ut");
    } else {
        const double omega_max = mhz_to_rad_s(detail::get_number(j, "omega_max_mhz", ctx));
        Vec3 dir;
        if (j.contains("mw_direction")) {
            dir = detail::vec3_from_json(j.at("mw_direction"), 1.0, ctx + ".mw_direction");
        } else {
            const double theta = detail::get_number(j, "mw_theta_deg", ctx);
            const double phi = detail::get_number(j, "mw_phi_deg", ctx);
            dir = mw_direction_from_angles(theta, phi);
        }
        c.b_mw = VpdrConfig::mw_field_from_peak_rabi(omega_max, dir);
    }

    c.zfs = mhz_to_rad_s(detail::get_number_or(j, "zfs_mhz", rad_s_to_mhz(zfs_default)));
    c.mw_frequency = mhz_to_rad_s(detail::get_number_or(j, "mw_frequency_mhz", rad_s_to_mhz(c.zfs)));
    c.hyperfine_a =
        mhz_to_rad_s(detail::get_number_or(j, "hyperfine_mhz", rad_s_to_mhz(hyperfine_a_default)));

    if (j.contains("t2_star_us") && !j.at("t2_star_us").is_null()) {
        const auto& t2 = j.at("t2_star_us");
        if (t2.is_string()) {
            if (t2.get<std::string>() != "inf")
                throw std::invalid_argument(ctx + ": t2_star_us must be a number or \"inf\"");
            c.t2_star = std::numeric_limits<double>::infinity();
        } else {
            c.t2_star = t2.get<double>() * 1e-6;
        }
    }

    detail::require_key(j, "t_grid", ctx);
    detail::require_key(j, "tau_grid", ctx);
    c.t_grid = grid_from_json(j.at("t_grid"), ctx + ".t_grid");
    c.tau_grid = grid_from_json(j.at("tau_grid"), ctx + ".tau_grid");

    if (j.contains("phases")) {
        c.phases.clear();
        for (const auto& p : j.at("phases")) {
            if (p.is_string()) {
                const auto s = p.get<std::string>();
                if (s == "0")
                    c.phases.push_back(0.0);
                else if (s == "pi")
                    c.phases.push_back(0.5 * two_pi);
                else
                    throw std::invalid_argument(ctx + ": phase must be \"0\" or \"pi\"");
            } else {
                c.phases.push_back(p.get<double>());
            }
        }
    }
    if (j.contains("orientations")) c.orientations = j.at("orientations").get<std::vector<int>>();
    if (j.contains("m_i_values")) c.m_i_values = j.at("m_i_values").get<std::vector<int>>();
    if (j.contains("max_cells")) c.max_cells = j.at("max_cells").get<std::size_t>();
    return c;
}

inline VpdrConfig load_config(const std::string& path) { return config_from_json(load_json(path)); }

inline void save_config(const VpdrConfig& c, const std::string& path) {
    save_json(config_to_json(c), path);
}

// --- signal grids --------------------------------------------------------

inline json signal_grid_to_json(const SignalGrid& s) {
    json j;
    j["format"] = "vpdr-signal-grid";
    j["version"] = 1;
    j["phase_summed"] = s.phase_summed;
    j["config"] = config_to_json(s.config);
    json t = json::array(), tau = json::array();
    for (double v : s.t_axis) t.push_back(v / s_per_ns);
    for (double v : s.tau_axis) tau.push_back(v / s_per_ns);
    j["t_axis_ns"] = std::move(t);
    j["tau_axis_ns"] = std::move(tau);
    json rows = json::array();
    for (Eigen::Index i = 0; i < s.values.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < s.values.cols(); ++k) row.push_back(s.values(i, k));
        rows.push_back(std::move(row));
    }
    j["values"] = std::move(rows);
    return j;
}

inline SignalGrid signal_grid_from_json(const json& j) {
    const std::string ctx = "signal grid";
    detail::check_format(j, "vpdr-signal-grid", ctx);
    detail::require_key(j, "t_axis_ns", ctx);
    detail::require_key(j, "tau_axis_ns", ctx);
    detail::require_key(j, "values", ctx);
    SignalGrid s;
    for (const auto& v : j.at("t_axis_ns")) s.t_axis.push_back(v.get<double>() * s_per_ns);
    for (const auto& v : j.at("tau_axis_ns")) s.tau_axis.push_back(v.get<double>() * s_per_ns);
    const auto& rows = j.at("values");
    if (rows.size() != s.t_axis.size())
        throw std::invalid_argument(ctx + ": values row count does not match t axis");
    s.values.resize(static_cast<Eigen::Index>(s.t_axis.size()),
                    static_cast<Eigen::Index>(s.tau_axis.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != s.tau_axis.size())
            throw std::invalid_argument(ctx + ": values column count does not match tau axis");
        for (std::size_t k = 0; k < rows[i].size(); ++k)
            s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                rows[i][k].get<double>();
    }
    if (j.contains("phase_summed")) s.phase_summed = j.at("phase_summed").get<bool>();
    if (j.contains("config")) s.config = config_from_json(j.at("config"));
    return s;
}

inline void save_signal_grid(const SignalGrid& s, const std::string& path) {
    save_json(signal_grid_to_json(s), path);
}

inline SignalGrid load_signal_grid(const std::string& path) {
    return signal_grid_from_json(load_json(path));
}

// Flat export, pulse-duration major. Carries the data only; the JSON
// container is the self-describing form.
inline void write_signal_csv(const SignalGrid& s, const std::string& path) {
    auto f = detail::open_for_write(path);
    f << "t_ns,tau_ns,value\n";
    for (std::size_t i = 0; i < s.t_axis.size(); ++i)
        for (std::size_t k = 0; k < s.tau_axis.size(); ++k)
            f << detail::format_double(s.t_axis[i] / s_per_ns) << ','
              << detail::format_double(s.tau_axis[k] / s_per_ns) << ','
              << detail::format_double(s.values(static_cast<Eigen::Index>(i),
                                                static_cast<Eigen::Index>(k)))
              << '\n';
    detail::finish_write(f, path);
}

inline SignalGrid read_signal_csv(const std::string& path) {
    const auto table = detail::read_csv(path, {"t_ns", "tau_ns", "value"});
    SignalGrid s;
    std::vector<double> flat;
    flat.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        const double t = detail::parse_double(row[0], path) * s_per_ns;
        const double tau = detail::parse_double(row[1], path) * s_per_ns;
        if (s.t_axis.empty() || t != s.t_axis.back()) {
            if (!s.t_axis.empty() && t < s.t_axis.back())
                throw std::invalid_argument(path + ": rows must be pulse-duration major");
            s.t_axis.push_back(t);
        }
        if (s.t_axis.size() == 1) s.tau_axis.push_back(tau);
        flat.push_back(detail::parse_double(row[2], path));
    }
    if (s.t_axis.empty()) throw std::invalid_argument(path + ": no data rows");
    if (flat.size() != s.t_axis.size() * s.tau_axis.size())
        throw std::invalid_argument(path + ": incomplete grid");
    s.values.resize(static_cast<Eigen::Index>(s.t_axis.size()),
                    static_cast<Eigen::Index>(s.tau_axis.size()));
    for (std::size_t i = 0; i < s.t_axis.size(); ++i)
        for (std::size_t k = 0; k < s.tau_axis.size(); ++k)
            s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                flat[i * s.tau_axis.size() + k];
    return s;
}

// --- spectral maps -------------------------------------------------------

inline json spectral_map_to_json(const SpectralMap& m) {
    json j;
    j["format"] = "vpdr-spectral-map";
    j["version"] = 1;
    j["window"] = to_string(m.window);
    j["kernel"] = to_string(m.kernel);
    json nu = json::array(), om = json::array();
    for (double v : m.nu_axis) nu.push_back(rad_s_to_mhz(v));
    for (double v : m.omega_axis) om.push_back(rad_s_to_mhz(v));
    j["nu_axis_mhz"] = std::move(nu);
    j["omega_axis_mhz"] = std::move(om);
    json re = json::array(), im = json::array();
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        json rrow = json::array(), irow = json::array();
        for (Eigen::Index k = 0; k < m.values.cols(); ++k) {
            rrow.push_back(m.values(i, k).real());
            irow.push_back(m.values(i, k).imag());
        }
        re.push_back(std::move(rrow));
        im.push_back(std::move(irow));
    }
    j["re"] = std::move(re);
    j["im"] = std::move(im);
    return j;
}

inline SpectralMap spectral_map_from_json(const json& j) {
    const std::string ctx = "spectral map";
    detail::check_format(j, "vpdr-spectral-map", ctx);
    SpectralMap m;
    detail::require_key(j, "nu_axis_mhz", ctx);
    detail::require_key(j, "omega_axis_mhz", ctx);
    detail::require_key(j, "re", ctx);
    detail::require_key(j, "im", ctx);
    for (const auto& v : j.at("nu_axis_mhz")) m.nu_axis.push_back(mhz_to_rad_s(v.get<double>()));
    for (const auto& v : j.at("omega_axis_mhz"))
        m.omega_axis.push_back(mhz_to_rad_s(v.get<double>()));
    if (j.contains("window")) m.window = window_from_string(j.at("window").get<std::string>());
    if (j.contains("kernel")) m.kernel = kernel_from_string(j.at("kernel").get<std::string>());
    const auto& re = j.at("re");
    const auto& im = j.at("im");
    if (re.size() != m.nu_axis.size() || im.size() != m.nu_axis.size())
        throw std::invalid_argument(ctx + ": value row count does not match nu axis");
    m.values.resize(static_cast<Eigen::Index>(m.nu_axis.size()),
                    static_cast<Eigen::Index>(m.omega_axis.size()));
    for (std::size_t i = 0; i < re.size(); ++i) {
        if (re[i].size() != m.omega_axis.size() || im[i].size() != m.omega_axis.size())
            throw std::invalid_argument(ctx + ": value column count does not match omega axis");
        for (std::size_t k = 0; k < re[i].size(); ++k)
            m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = {
                re[i][k].get<double>(), im[i][k].get<double>()};
    }
    return m;
}

inline void save_spectral_map(const SpectralMap& m, const std::string& path) {
    save_json(spectral_map_to_json(m), path);
}

inline SpectralMap load_spectral_map(const std::string& path) {
    return spectral_map_from_json(load_json(path));
}

inline void write_spectral_csv(const SpectralMap& m, const std::string& path) {
    auto f = detail::open_for_write(path);
    f << "nu_mhz,omega_mhz,re,im\n";
    for (std::size_t i = 0; i < m.nu_axis.size(); ++i)
        for (std::size_t k = 0; k < m.omega_axis.size(); ++k) {
            const auto v = m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
            f << detail::format_double(rad_s_to_mhz(m.nu_axis[i])) << ','
              << detail::format_double(rad_s_to_mhz(m.omega_axis[k])) << ','
              << detail::format_double(v.real()) << ',' << detail::format_double(v.imag()) << '\n';
        }
    detail::finish_write(f, path);
}

// Rebuilds a map from the flat table; window and kernel tags are not part of
// the CSV, so the JSON defaults apply.
inline SpectralMap read_spectral_csv(const std::string& path) {
    const auto table = detail::read_csv(path, {"nu_mhz", "omega_mhz", "re", "im"});
    SpectralMap m;
    std::vector<std::complex<double>> flat;
    for (const auto& row : table.rows) {
        const double nu = mhz_to_rad_s(detail::parse_double(row[0], path));
        const double om = mhz_to_rad_s(detail::parse_double(row[1], path));
        if (m.nu_axis.empty() || nu != m.nu_axis.back()) {
            if (!m.nu_axis.empty() && nu < m.nu_axis.back())
                throw std::invalid_argument(path + ": rows must be nu major");
            m.nu_axis.push_back(nu);
        }
        if (m.nu_axis.size() == 1) m.omega_axis.push_back(om);
        flat.emplace_back(detail::parse_double(row[2], path), detail::parse_double(row[3], path));
    }
    if (m.nu_axis.empty()) throw std::invalid_argument(path + ": no data rows");
    if (flat.size() != m.nu_axis.size() * m.omega_axis.size())
        throw std::invalid_argument(path + ": incomplete grid");
    m.values.resize(static_cast<Eigen::Index>(m.nu_axis.size()),
                    static_cast<Eigen::Index>(m.omega_axis.size()));
    for (std::size_t i = 0; i < m.nu_axis.size(); ++i)
        for (std::size_t k = 0; k < m.omega_axis.size(); ++k)
            m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
                flat[i * m.omega_axis.size() + k];
    return m;
}

// --- inversion reports ---------------------------------------------------

inline json inversion_report_to_json(const InversionReport& r) {
    json j;
    j["format"] = "vpdr-inversion-report";
    j["version"] = 1;
    json rows = json::array();
    for (const auto& row : r.rows) {
        json o;
        o["orientation"] = row.orientation;
        o["ok"] = row.ok;
        o["message"] = row.message;
        o["omega_rabi_est_mhz"] = rad_s_to_mhz(row.omega_rabi_est);
        o["f_fit_mhz"] = rad_s_to_mhz(row.omega_fit);
        o["f_exact_mhz"] = rad_s_to_mhz(row.omega_exact);
        o["delta_b_nt"] = row.delta_b / tesla_per_nt;
        o["fit_cost"] = row.fit_cost;
        o["iterations"] = row.iterations;
        o["converged"] = row.converged;
        json m;
        m["omega0_mhz"] = rad_s_to_mhz(row.model.omega0);
        m["decay_us"] = std::isfinite(row.model.decay_time) ? json(row.model.decay_time * 1e6)
                                                            : json("inf");
        m["amplitudes"] = row.model.amplitudes;
        m["phases_rad"] = row.model.phases;
        m["offset"] = row.model.offset;
        m["hyperfine"] = row.model.hyperfine;
        o["model"] = std::move(m);
        rows.push_back(std::move(o));
    }
    j["rows"] = std::move(rows);
    return j;
}

inline InversionReport inversion_report_from_json(const json& j) {
    const std::string ctx = "inversion report";
    detail::check_format(j, "vpdr-inversion-report", ctx);
    detail::require_key(j, "rows", ctx);
    InversionReport r;
    for (const auto& o : j.at("rows")) {
        OrientationInversion row;
        row.orientation = o.at("orientation").get<int>();
        row.ok = o.at("ok").get<bool>();
        row.message = o.value("message", std::string{});
        row.omega_rabi_est = mhz_to_rad_s(o.at("omega_rabi_est_mhz").get<double>());
        row.omega_fit = mhz_to_rad_s(o.at("f_fit_mhz").get<double>());
        row.omega_exact = mhz_to_rad_s(o.at("f_exact_mhz").get<double>());
        row.delta_b = o.at("delta_b_nt").get<double>() * tesla_per_nt;
        row.fit_cost = o.value("fit_cost", 0.0);
        row.iterations = o.value("iterations", 0);
        row.converged = o.value("converged", false);
        if (o.contains("model")) {
            const auto& m = o.at("model");
            row.model.omega0 = mhz_to_rad_s(m.at("omega0_mhz").get<double>());
            row.model.decay_time = m.at("decay_us").is_string()
                                       ? std::numeric_limits<double>::infinity()
                                       : m.at("decay_us").get<double>() * 1e-6;
            row.model.amplitudes = m.at("amplitudes").get<std::array<double, 3>>();
            row.model.phases = m.at("phases_rad").get<std::array<double, 3>>();
            row.model.offset = m.at("offset").get<double>();
            row.model.hyperfine = m.at("hyperfine").get<bool>();
        }
        r.rows.push_back(std::move(row));
    }
    return r;
}

inline void save_inversion_report(const InversionReport& r, const std::string& path) {
    save_json(inversion_report_to_json(r), path);
}

inline InversionReport load_inversion_report(const std::string& path) {
    return inversion_report_from_json(load_json(path));
}

// --- sweep tables ----------------------------------------------------------

namespace detail {

inline std::vector<std::string> sweep_header() {
    std::vector<std::string> h{"theta_deg", "phi_deg", "omega_max_mhz", "ok"};
    for (int k = 0; k < 4; ++k) {
        const std::string p = "o" + std::to_string(k) + "_";
        h.push_back(p + "omega_est_mhz");
        h.push_back(p + "f_fit_mhz");
        h.push_back(p + "f_exact_mhz");
        h.push_back(p + "db_nt");
        h.push_back(p + "status");
    }
    h.push_back("message");
    return h;
}

} // namespace detail

inline void write_sweep_csv(const std::vector<SweepPoint>& points, const std::string& path) {
    auto f = detail::open_for_write(path);
    const auto header = detail::sweep_header();
    for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
    f << '\n';
    for (const auto& pt : points) {
        f << detail::format_double(pt.theta_deg) << ',' << detail::format_double(pt.phi_deg) << ','
          << detail::format_double(rad_s_to_mhz(pt.omega_max)) << ',' << (pt.ok ? 1 : 0);
        for (int k = 0; k < 4; ++k) {
            const OrientationInversion* row = nullptr;
            for (const auto& r : pt.report.rows)
                if (r.orientation == k) row = &r;
            if (row) {
                f << ',' << detail::format_double(rad_s_to_mhz(row->omega_rabi_est)) << ','
                  << detail::format_double(rad_s_to_mhz(row->omega_fit)) << ','
                  << detail::format_double(rad_s_to_mhz(row->omega_exact)) << ','
                  << detail::format_double(row->delta_b / tesla_per_nt) << ','
                  << (row->ok ? "ok" : detail::sanitize_csv_text(row->message));
            } else {
                f << ",nan,nan,nan,nan,absent";
            }
        }
        f << ',' << detail::sanitize_csv_text(pt.message) << '\n';
    }
    detail::finish_write(f, path);
}

inline std::vector<SweepPoint> read_sweep_csv(const std::string& path) {
    const auto table = detail::read_csv(path, detail::sweep_header());
    std::vector<SweepPoint> points;
    for (const auto& row : table.rows) {
        SweepPoint pt;
        pt.theta_deg = detail::parse_double(row[0], path);
        pt.phi_deg = detail::parse_double(row[1], path);
        pt.omega_max = mhz_to_rad_s(detail::parse_double(row[2], path));
        pt.ok = detail::parse_int(row[3], path) != 0;
        for (int k = 0; k < 4; ++k) {
            const std::size_t base = 4 + 5 * static_cast<std::size_t>(k);
            if (row[base + 4] == "absent") continue;
            OrientationInversion r;
            r.orientation = k;
            r.omega_rabi_est = mhz_to_rad_s(detail::parse_double(row[base], path));
            r.omega_fit = mhz_to_rad_s(detail::parse_double(row[base + 1], path));
            r.omega_exact = mhz_to_rad_s(detail::parse_double(row[base + 2], path));
            r.delta_b = detail::parse_double(row[base + 3], path) * tesla_per_nt;
            r.ok = row[base + 4] == "ok";
            if (!r.ok) r.message = row[base + 4];
            pt.report.rows.push_back(std::move(r));
        }
        pt.message = row.back();
        points.push_back(std::move(pt));
    }
    return points;
}

// --- drive-direction rankings ----------------------------------------------

inline void write_mw_csv(const std::vector<SeparationResult>& results, const std::string& path) {
    auto f = detail::open_for_write(path);
    f << "theta_deg,phi_deg,separation_frac,min_rabi_frac\n";
    for (const auto& r : results)
        f << detail::format_double(r.theta_deg) << ',' << detail::format_double(r.phi_deg) << ','
          << detail::format_double(r.min_separation_frac) << ','
          << detail::format_double(r.min_rabi_frac()) << '\n';
    detail::finish_write(f, path);
}

inline std::vector<SeparationResult> read_mw_csv(const std::string& path) {
    const auto table =
        detail::read_csv(path, {"theta_deg", "phi_deg", "separation_frac", "min_rabi_frac"});
    std::vector<SeparationResult> results;
    for (const auto& row : table.rows) {
        SeparationResult r;
        r.theta_deg = detail::parse_double(row[0], path);
        r.phi_deg = detail::parse_double(row[1], path);
        r.min_separation_frac = detail::parse_double(row[2], path);
        r.rabi_fracs.fill(detail::parse_double(row[3], path));
        results.push_back(r);
    }
    return results;
}

// --- sensitivity tables ------------------------------------------------------

inline void write_sensitivity_csv(const std::vector<SensitivityRatio>& rows,
                                  const std::string& path) {
    auto f = detail::open_for_write(path);
    f << "max_t_ns,ratio,ci_low,ci_high,trials,seed\n";
    for (const auto& r : rows)
        f << detail::format_double(r.max_t / s_per_ns) << ',' << detail::format_double(r.ratio)
          << ',' << detail::format_double(r.ci_low) << ',' << detail::format_double(r.ci_high)
          << ',' << r.trials << ',' << r.seed << '\n';
    detail::finish_write(f, path);
}

inline std::vector<SensitivityRatio> read_sensitivity_csv(const std::string& path) {
    const auto table =
        detail::read_csv(path, {"max_t_ns", "ratio", "ci_low", "ci_high", "trials", "seed"});
    std::vector<SensitivityRatio> rows;
    for (const auto& row : table.rows) {
        SensitivityRatio r;
        r.max_t = detail::parse_double(row[0], path) * s_per_ns;
        r.ratio = detail::parse_double(row[1], path);
        r.ci_low = detail::parse_double(row[2], path);
        r.ci_high = detail::parse_double(row[3], path);
        r.trials = static_cast<int>(detail::parse_int(row[4], path));
        r.seed = static_cast<std::uint64_t>(detail::parse_int(row[5], path));
        r.dead_zone = std::isinf(r.ratio);
        rows.push_back(r);
    }
    return rows;
}

inline void write_fit_cost_csv(const std::vector<FitCostPoint>& rows, const std::string& path) {
    auto f = detail::open_for_write(path);
    f << "tau_max_ns,ratio,ci_low,ci_high,trials,seed\n";
    for (const auto& r : rows)
        f << detail::format_double(r.tau_max / s_per_ns) << ',' << detail::format_double(r.ratio)
          << ',' << detail::format_double(r.ci_low) << ',' << detail::format_double(r.ci_high)
          << ',' << r.trials << ',' << r.seed << '\n';
    detail::finish_write(f, path);
}

inline std::vector<FitCostPoint> read_fit_cost_csv(const std::string& path) {
    const auto table =
        detail::read_csv(path, {"tau_max_ns", "ratio", "ci_low", "ci_high", "trials", "seed"});
    std::vector<FitCostPoint> rows;
    for (const auto& row : table.rows) {
        FitCostPoint r;
        r.tau_max = detail::parse_double(row[0], path) * s_per_ns;
        r.ratio = detail::parse_double(row[1], path);
        r.ci_low = detail::parse_double(row[2], path);
        r.ci_high = detail::parse_double(row[3], path);
        r.trials = static_cast<int>(detail::parse_int(row[4], path));
        r.seed = static_cast<std::uint64_t>(detail::parse_int(row[5], path));
        rows.push_back(r);
    }
    return rows;
}

// --- field-reconstruction tables --------------------------------------------

inline void write_peaks_csv(const std::vector<PeakObservation>& peaks, const std::string& path) {
    auto f = detail::open_for_write(path);
    f << "voltage,orientation_index,omega_max_mhz,nu_max_mhz,harmonic_n\n";
    for (const auto& p : peaks)
        f << detail::format_double(p.voltage) << ',' << p.orientation << ','
          << detail::format_double(rad_s_to_mhz(p.omega_max)) << ','
          << detail::format_double(rad_s_to_mhz(p.nu_max)) << ','
          << detail::format_double(p.harmonic_n) << '\n';
    detail::finish_write(f, path);
}

inline std::vector<PeakObservation> read_peaks_csv(const std::string& path) {
    const auto table = detail::read_csv(
        path, {"voltage", "orientation_index", "omega_max_mhz", "nu_max_mhz", "harmonic_n"});
    std::vector<PeakObservation> peaks;
    for (const auto& row : table.rows) {
        PeakObservation p;
        p.voltage = detail::parse_double(row[0], path);
        p.orientation = static_cast<int>(detail::parse_int(row[1], path));
        p.omega_max = mhz_to_rad_s(detail::parse_double(row[2], path));
        p.nu_max = mhz_to_rad_s(detail::parse_double(row[3], path));
        p.harmonic_n = detail::parse_double(row[4], path);
        peaks.push_back(p);
    }
    return peaks;
}

inline json field_model_to_json(const LinearFieldModel& m) {
    json j;
    j["format"] = "vpdr-field-model";
    j["version"] = 1;
    j["offset_ut"] = detail::vec3_to_json(m.offset, 1.0 / tesla_per_ut);
    j["slope_ut_per_v"] = detail::vec3_to_json(m.slope, 1.0 / tesla_per_ut);
    return j;
}

inline LinearFieldModel field_model_from_json(const json& j) {
    const std::string ctx = "field model";
    detail::check_format(j, "vpdr-field-model", ctx);
    detail::require_key(j, "offset_ut", ctx);
    detail::require_key(j, "slope_ut_per_v", ctx);
    LinearFieldModel m;
    m.offset = detail::vec3_from_json(j.at("offset_ut"), tesla_per_ut, ctx + ".offset_ut");
    m.slope = detail::vec3_from_json(j.at("slope_ut_per_v"), tesla_per_ut, ctx + ".slope_ut_per_v");
    return m;
}

inline json field_fit_to_json(const FieldFitResult& r) {
    json j = field_model_to_json(r.model);
    j["rms_ut"] = r.rms / tesla_per_ut;
    j["converged"] = r.diagnostics.converged;
    j["iterations"] = r.diagnostics.iterations;
    j["cost_ut2"] = r.diagnostics.cost;
    return j;
}

inline void save_field_fit(const FieldFitResult& r, const std::string& path) {
    save_json(field_fit_to_json(r), path);
}

inline LinearFieldModel load_field_model(const std::string& path) {
    return field_model_from_json(load_json(path));
}

inline void write_residual_csv(const std::vector<PeakObservation>& peaks, const FieldFitResult& r,
                               const std::string& path) {
    if (static_cast<Eigen::Index>(peaks.size()) != r.residuals.size())
        throw std::invalid_argument("residual table: observation count mismatch");
    auto f = detail::open_for_write(path);
    f << "voltage,orientation_index,residual_ut\n";
    for (std::size_t i = 0; i < peaks.size(); ++i)
        f << detail::format_double(peaks[i].voltage) << ',' << peaks[i].orientation << ','
          << detail::format_double(r.residuals(static_cast<Eigen::Index>(i)) / tesla_per_ut)
          << '\n';
    detail::finish_write(f, path);
}

struct ResidualRow {
    double voltage = 0.0;
    int orientation = 0;
    double residual = 0.0;  // tesla
};

inline std::vector<ResidualRow> read_residual_csv(const std::string& path) {
    const auto table = detail::read_csv(path, {"voltage", "orientation_index", "residual_ut"});
    std::vector<ResidualRow> rows;
    for (const auto& row : table.rows) {
        ResidualRow r;
        r.voltage = detail::parse_double(row[0], path);
        r.orientation = static_cast<int>(detail::parse_int(row[1], path));
        r.residual = detail::parse_double(row[2], path) * tesla_per_ut;
        rows.push_back(r);
    }
    return rows;
}

// --- run manifests -----------------------------------------------------------

struct RunManifest {
    std::string command;
    json config;  // snapshot of the parsed config, null when the run has none
    bool has_seed = false;
    std::uint64_t seed = 0;
    double wall_time_s = 0.0;
    std::vector<std::string> outputs;
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.is_open()) throw std::invalid_argument("cannot open \"" + path + "\"");
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

} // namespace detail

inline json manifest_to_json(const RunManifest& m) {
    json j;
    j["format"] = "vpdr-run-manifest";
    j["version"] = 1;
    j["command"] = m.command;
    j["code_version"] = code_version;
    if (m.has_seed)
        j["seed"] = m.seed;
    else
        j["seed"] = nullptr;
    j["config"] = m.config.is_null() ? json(nullptr) : m.config;
    j["wall_time_s"] = m.wall_time_s;
    json outs = json::array();
    for (const auto& path : m.outputs) {
        const auto bytes = detail::read_file_bytes(path);
        json o;
        o["path"] = path;
        o["bytes"] = bytes.size();
        o["fnv1a64"] = detail::hex64(detail::fnv1a64(bytes));
        outs.push_back(std::move(o));
    }
    j["outputs"] = std::move(outs);
    return j;
}

inline void save_manifest(const RunManifest& m, const std::string& path) {
    save_json(manifest_to_json(m), path);
}

} // namespace vpdr
