#pragma once

/**
 * @file experiment.hpp
 * @brief Config-driven runs: INI configs, per-mode artifacts, named recipes.
 */

#include "attraction.hpp"
#include "diagnostics.hpp"
#include "errors.hpp"
#include "lagrangian.hpp"
#include "particles.hpp"
#include "potential.hpp"
#include "steady_state.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace aggregation {

inline constexpr const char* library_version = "1.0.0";

enum class Mode { steady, simulate_radial, simulate_particles, attract_steady, rates, validate };

inline std::string to_string(Mode m)
{
    switch (m) {
    case Mode::steady: return "steady";
    case Mode::simulate_radial: return "simulate_radial";
    case Mode::simulate_particles: return "simulate_particles";
    case Mode::attract_steady: return "attract_steady";
    case Mode::rates: return "rates";
    case Mode::validate: return "validate";
    }
    return "steady";
}

inline Mode parse_mode(const std::string& s)
{
    for (Mode m : {Mode::steady, Mode::simulate_radial, Mode::simulate_particles, Mode::attract_steady, Mode::rates,
                   Mode::validate})
        if (to_string(m) == s)
            return m;
    fail(ErrorKind::config, "unknown mode '" + s + "'");
}

struct PotentialSpec {
    std::string name = "quadratic"; // quadratic quartic log_tail double_well soft_quadratic power_slope constant table
    double k = 1.0, c = 1.0, p = 1.0;
    std::string table;
};

struct DensitySpec {
    std::string shape = "ball"; // ball, shell, interval, csv
    double r_in = 0.0, r_out = 1.0;
    std::size_t cells = 1024;
    std::string csv;
};

struct SolverSpec {
    std::size_t quantiles = 512;
    std::size_t steady_cells = 512;
    double dt_init = 1e-3, dt_min = 1e-10, dt_max = 0.02, t_end = 20.0;
    int rk_order = 4;
    std::string crossing = "reject";
    std::size_t snapshot_stride = 1;
    double density_cap = 0.0;
};

struct ParticleSpec {
    std::size_t count = 2000;
    double delta = 0.0; // 0 selects the default blob radius
    double dt_max = 0.02;
    int rk_order = 2;
    std::vector<double> times{1.0, 3.0, 5.0};
    bool attraction = false;
    bool compare_radial = false;
};

struct AttractionSpec {
    std::string perturbation = "gaussian_bump"; // gaussian_bump or none
    double sup_laplacian = 0.0;
    double tol = 1e-10;
    int max_iter = 100;
    std::size_t cells = 256;
    bool override_smallness = false;
};

struct RatesSpec {
    std::string input; // run directory; defaults to the output directory
    double t_a = 1.0;
    double t_b = 0.0; // 0 selects the noise-floor end
    double d2_target = 1.0;
};

struct ValidateSpec {
    double R0 = 1.0;
    double c_V = 0.0; // 0 selects V'(R0) R0^{(d-1)/(d+1)}
};

struct ExperimentConfig {
    std::string name = "run";
    Mode mode = Mode::steady;
    int dimension = 3;
    double m0 = 1.0;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string output = "out";
    PotentialSpec potential;
    DensitySpec rho0;
    SolverSpec solver;
    ParticleSpec particles;
    AttractionSpec attraction;
    RatesSpec rates;
    ValidateSpec validate;
};

namespace detail {

inline std::string format_double(double x)
{
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

// Accepts plain numbers and multiples of pi ("4pi", "0.5*pi", "pi").
inline double parse_number(const std::string& key, std::string v)
{
    v.erase(std::remove_if(v.begin(), v.end(), ::isspace), v.end());
    double factor = 1.0;
    if (v.size() >= 2 && v.compare(v.size() - 2, 2, "pi") == 0) {
        factor = std::numbers::pi;
        v.resize(v.size() - 2);
        if (!v.empty() && v.back() == '*')
            v.pop_back();
        if (v.empty())
            v = "1";
    }
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size())
            throw std::invalid_argument(v);
        return x * factor;
    } catch (const std::exception&) {
        fail(ErrorKind::config, "key '" + key + "': cannot parse number '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes")
        return true;
    if (v == "false" || v == "0" || v == "no")
        return false;
    fail(ErrorKind::config, "key '" + key + "': expected true or false");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v)
{
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(parse_number(key, item));
    return out;
}

inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        fail(ErrorKind::io, "cannot write " + path.string());
    os << text;
}

template <class F>
std::string to_text(F&& writer)
{
    std::ostringstream os;
    writer(os);
    return os.str();
}

} // namespace detail

/// Flat key/value view "section.key" -> value, stable order.
inline std::map<std::string, std::string> config_entries(const ExperimentConfig& c)
{
    using detail::format_double;
    std::map<std::string, std::string> e;
    e["run.name"] = c.name;
    e["run.mode"] = to_string(c.mode);
    e["run.dimension"] = std::to_string(c.dimension);
    e["run.m0"] = format_double(c.m0);
    e["run.seed"] = std::to_string(c.seed);
    e["run.threads"] = std::to_string(c.threads);
    e["run.output"] = c.output;
    e["potential.name"] = c.potential.name;
    e["potential.k"] = format_double(c.potential.k);
    e["potential.c"] = format_double(c.potential.c);
    e["potential.p"] = format_double(c.potential.p);
    e["potential.table"] = c.potential.table;
    e["rho0.shape"] = c.rho0.shape;
    e["rho0.r_in"] = format_double(c.rho0.r_in);
    e["rho0.r_out"] = format_double(c.rho0.r_out);
    e["rho0.cells"] = std::to_string(c.rho0.cells);
    e["rho0.csv"] = c.rho0.csv;
    e["solver.quantiles"] = std::to_string(c.solver.quantiles);
    e["solver.steady_cells"] = std::to_string(c.solver.steady_cells);
    e["solver.dt_init"] = format_double(c.solver.dt_init);
    e["solver.dt_min"] = format_double(c.solver.dt_min);
    e["solver.dt_max"] = format_double(c.solver.dt_max);
    e["solver.t_end"] = format_double(c.solver.t_end);
    e["solver.rk_order"] = std::to_string(c.solver.rk_order);
    e["solver.crossing"] = c.solver.crossing;
    e["solver.snapshot_stride"] = std::to_string(c.solver.snapshot_stride);
    e["solver.density_cap"] = format_double(c.solver.density_cap);
    e["particles.count"] = std::to_string(c.particles.count);
    e["particles.delta"] = format_double(c.particles.delta);
    e["particles.dt_max"] = format_double(c.particles.dt_max);
    e["particles.rk_order"] = std::to_string(c.particles.rk_order);
    std::string times;
    for (std::size_t i = 0; i < c.particles.times.size(); ++i)
        times += (i ? "," : "") + format_double(c.particles.times[i]);
    e["particles.times"] = times;
    e["particles.attraction"] = c.particles.attraction ? "true" : "false";
    e["particles.compare_radial"] = c.particles.compare_radial ? "true" : "false";
    e["attraction.perturbation"] = c.attraction.perturbation;
    e["attraction.sup_laplacian"] = format_double(c.attraction.sup_laplacian);
    e["attraction.tol"] = format_double(c.attraction.tol);
    e["attraction.max_iter"] = std::to_string(c.attraction.max_iter);
    e["attraction.cells"] = std::to_string(c.attraction.cells);
    e["attraction.override_smallness"] = c.attraction.override_smallness ? "true" : "false";
    e["rates.input"] = c.rates.input;
    e["rates.t_a"] = format_double(c.rates.t_a);
    e["rates.t_b"] = format_double(c.rates.t_b);
    e["rates.d2_target"] = format_double(c.rates.d2_target);
    e["validate.R0"] = format_double(c.validate.R0);
    e["validate.c_V"] = format_double(c.validate.c_V);
    return e;
}

/// INI text holding every key; parsing it back gives the same config.
inline std::string to_ini(const ExperimentConfig& c)
{
    std::string out, section;
    for (const auto& [key, value] : config_entries(c)) {
        const auto dot = key.find('.');
        const auto sec = key.substr(0, dot);
        if (sec != section) {
            out += (section.empty() ? "[" : "\n[") + sec + "]\n";
            section = sec;
        }
        out += key.substr(dot + 1) + " = " + value + "\n";
    }
    return out;
}

inline std::string config_hash(const ExperimentConfig& c)
{
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << detail::fnv1a(to_ini(c));
    return os.str();
}

/// Parses INI text; unknown sections or keys are config errors.
inline ExperimentConfig parse_config(std::istream& is)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        fail(ErrorKind::config, std::string("malformed config: ") + e.what());
    }
    ExperimentConfig c;
    const auto known = config_entries(c);
    std::map<std::string, std::string> given;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            fail(ErrorKind::config, "key '" + section + "' outside a section");
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            if (!known.count(full))
                fail(ErrorKind::config, "unknown config key '" + full + "'");
            given[full] = value.data();
        }
    }
    using detail::parse_bool;
    using detail::parse_number;
    auto num = [&](const std::string& key, auto& target) {
        if (auto it = given.find(key); it != given.end()) {
            const double v = parse_number(key, it->second);
            using T = std::decay_t<decltype(target)>;
            if constexpr (std::is_integral_v<T>) {
                if (v < 0 || v != std::floor(v))
                    fail(ErrorKind::config, "key '" + key + "' must be a non-negative integer");
                target = static_cast<T>(v);
            } else {
                target = v;
            }
        }
    };
    auto str = [&](const std::string& key, std::string& target) {
        if (auto it = given.find(key); it != given.end())
            target = it->second;
    };
    auto flag = [&](const std::string& key, bool& target) {
        if (auto it = given.find(key); it != given.end())
            target = parse_bool(key, it->second);
    };
    str("run.name", c.name);
    if (auto it = given.find("run.mode"); it != given.end())
        c.mode = parse_mode(it->second);
    else
        fail(ErrorKind::config, "missing run.mode");
    num("run.dimension", c.dimension);
    num("run.m0", c.m0);
    num("run.seed", c.seed);
    num("run.threads", c.threads);
    str("run.output", c.output);
    str("potential.name", c.potential.name);
    num("potential.k", c.potential.k);
    num("potential.c", c.potential.c);
    num("potential.p", c.potential.p);
    str("potential.table", c.potential.table);
    str("rho0.shape", c.rho0.shape);
    num("rho0.r_in", c.rho0.r_in);
    num("rho0.r_out", c.rho0.r_out);
    num("rho0.cells", c.rho0.cells);
    str("rho0.csv", c.rho0.csv);
    num("solver.quantiles", c.solver.quantiles);
    num("solver.steady_cells", c.solver.steady_cells);
    num("solver.dt_init", c.solver.dt_init);
    num("solver.dt_min", c.solver.dt_min);
    num("solver.dt_max", c.solver.dt_max);
    num("solver.t_end", c.solver.t_end);
    num("solver.rk_order", c.solver.rk_order);
    str("solver.crossing", c.solver.crossing);
    num("solver.snapshot_stride", c.solver.snapshot_stride);
    num("solver.density_cap", c.solver.density_cap);
    num("particles.count", c.particles.count);
    num("particles.delta", c.particles.delta);
    num("particles.dt_max", c.particles.dt_max);
    num("particles.rk_order", c.particles.rk_order);
    if (auto it = given.find("particles.times"); it != given.end())
        c.particles.times = detail::parse_list("particles.times", it->second);
    flag("particles.attraction", c.particles.attraction);
    flag("particles.compare_radial", c.particles.compare_radial);
    str("attraction.perturbation", c.attraction.perturbation);
    num("attraction.sup_laplacian", c.attraction.sup_laplacian);
    num("attraction.tol", c.attraction.tol);
    num("attraction.max_iter", c.attraction.max_iter);
    num("attraction.cells", c.attraction.cells);
    flag("attraction.override_smallness", c.attraction.override_smallness);
    str("rates.input", c.rates.input);
    num("rates.t_a", c.rates.t_a);
    num("rates.t_b", c.rates.t_b);
    num("rates.d2_target", c.rates.d2_target);
    num("validate.R0", c.validate.R0);
    num("validate.c_V", c.validate.c_V);

    if (c.dimension < 1 || c.dimension > max_dimension)
        fail(ErrorKind::config, "run.dimension must lie in 1..8");
    if (!(c.m0 > 0.0) && c.mode != Mode::rates && c.mode != Mode::validate)
        fail(ErrorKind::config, "run.m0 must be positive");
    if (c.threads == 0)
        fail(ErrorKind::config, "run.threads must be at least 1");
    if (c.solver.crossing != "reject" && c.solver.crossing != "merge")
        fail(ErrorKind::config, "solver.crossing must be reject or merge");
    if (c.mode == Mode::simulate_particles && (c.dimension < 2 || c.dimension > 3))
        fail(ErrorKind::config, "particle runs support d = 2 and d = 3 only");
    return c;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        fail(ErrorKind::config, "cannot open config " + path);
    return parse_config(is);
}

inline RadialPotential make_potential(const PotentialSpec& p)
{
    const auto& n = p.name;
    if (n == "quadratic") return potentials::quadratic(p.k);
    if (n == "quartic") return potentials::quartic(p.k);
    if (n == "log_tail") return potentials::log_tail();
    if (n == "double_well") return potentials::double_well();
    if (n == "soft_quadratic") return potentials::soft_quadratic(p.k, p.c);
    if (n == "power_slope") return potentials::power_slope(p.c, p.p);
    if (n == "constant") return potentials::constant(p.c);
    if (n == "table") return potentials::table_from_csv(p.table);
    fail(ErrorKind::config, "unknown potential '" + n + "'");
}

/// Initial density of mass m0. Shapes: ball (r_out), shell (r_in..r_out), interval (line, d = 1), csv (r,rho).
inline RadialDensity make_density(const DensitySpec& s, int d, double m0)
{
    if (s.shape == "ball")
        return uniform_shell(d, 0.0, s.r_out, m0, s.cells);
    if (s.shape == "shell")
        return uniform_shell(d, s.r_in, s.r_out, m0, s.cells);
    if (s.shape == "interval") {
        if (d != 1)
            fail(ErrorKind::config, "rho0.shape = interval needs d = 1");
        return uniform_interval(s.r_in, s.r_out, m0, s.cells);
    }
    if (s.shape == "csv") {
        std::ifstream is(s.csv);
        if (!is)
            fail(ErrorKind::io, "cannot open density CSV " + s.csv);
        std::vector<double> r, v;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || !(std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '.' || line[0] == '-'))
                continue;
            std::replace(line.begin(), line.end(), ',', ' ');
            std::istringstream row(line);
            double a, b;
            if (!(row >> a >> b))
                fail(ErrorKind::io, "density CSV: malformed row");
            r.push_back(a);
            v.push_back(b);
        }
        const RadialDensity raw(d, r, v);
        return raw.scaled(m0 / raw.mass());
    }
    fail(ErrorKind::config, "unknown rho0.shape '" + s.shape + "'");
}

/// ΔV range over [0, r_max] (sampled), used for the density bounds a and A.
inline std::pair<double, double> laplacian_range(const RadialPotential& V, int d, double r_max, std::size_t samples = 512)
{
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t k = 0; k <= samples; ++k) {
        const double lap = V.laplacian(r_max * double(k) / double(samples), d);
        lo = std::min(lo, lap);
        hi = std::max(hi, lap);
    }
    return {lo, hi};
}

struct RunResult {
    nlohmann::json summary;
    std::vector<std::string> artifacts;
};

namespace detail {

inline EvolutionConfig evolution_config(const SolverSpec& s)
{
    EvolutionConfig c;
    c.dt_init = s.dt_init;
    c.dt_min = s.dt_min;
    c.dt_max = s.dt_max;
    c.t_end = s.t_end;
    c.rk_order = s.rk_order;
    c.crossing_policy = s.crossing == "merge" ? CrossingPolicy::merge : CrossingPolicy::reject_step;
    c.snapshot_stride = std::max<std::size_t>(1, s.snapshot_stride);
    c.density_cap = s.density_cap;
    return c;
}

inline nlohmann::json fit_json(const RateFit& f)
{
    return {{"gamma_hat", f.gamma_hat},     {"t_a", f.window.t_a},
            {"t_b", f.window.t_b},          {"r_squared", f.r_squared},
            {"gamma_theory", f.gamma_theory}, {"q_exponent", f.q_exponent},
            {"super_algebraic", f.super_algebraic}, {"samples", f.samples},
            {"verdict", f.verdict()}};
}

// Velocity scale of a confinement state: |V'| at the support edge.
inline double velocity_scale(const RadialPotential& V, double R) { return std::max(std::abs(V.slope(R)), 1e-300); }

class Artifacts {
public:
    explicit Artifacts(std::filesystem::path dir) : dir_(std::move(dir))
    {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec)
            fail(ErrorKind::io, "cannot create output directory " + dir_.string());
    }

    void write(const std::string& name, const std::string& text)
    {
        write_text(dir_ / name, text);
        names_.push_back(name);
    }

    void json(const std::string& name, const nlohmann::json& j) { write(name, j.dump(2) + "\n"); }

    const std::filesystem::path& dir() const { return dir_; }
    const std::vector<std::string>& names() const { return names_; }

private:
    std::filesystem::path dir_;
    std::vector<std::string> names_;
};

inline void run_steady(const ExperimentConfig& c, Artifacts& out, nlohmann::json& summary)
{
    const auto V = make_potential(c.potential);
    const auto state = build_steady_state(V, c.dimension, c.m0, c.solver.steady_cells);
    const auto check = verify_steady(state, V, c.dimension, 1e-6 * velocity_scale(V, state.R_inf));
    const NewtonianField field(state.density);
    out.write("steady_profile.csv", to_text([&](std::ostream& os) {
                  os << std::setprecision(17) << "r,rho,Phi\n";
                  for (double r : linspace(0.0, 4.0 * state.R_inf, 2049))
                      os << r << ',' << state.density.value(r) << ',' << field(r) + V.value(r) << '\n';
              }));
    summary["steady"] = {{"R_inf", state.R_inf},
                         {"E_inf", state.E_inf},
                         {"potential_plateau", state.potential_plateau},
                         {"rho_center", state.density.value(0.0)},
                         {"rho_edge", state.density.values().back()},
                         {"mass", state.density.mass()},
                         {"max_velocity", check.max_velocity},
                         {"velocity_tolerance", check.tolerance},
                         {"velocity_ok", check.passed}};
    if (!check.passed)
        fail(ErrorKind::resolution, "steady state velocity check failed");
}

// Series columns that need no steady reference (gap, Lyapunov and L1 are NaN).
inline DiagnosticSeries plain_series(const std::vector<LagrangianState>& snaps, const RadialPotential& V)
{
    DiagnosticSeries s;
    s.dim = snaps.front().dim;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& x : snaps) {
        s.times.push_back(x.t);
        s.energy.push_back(energy(x, V));
        s.energy_gap.push_back(nan);
        s.dissipation.push_back(dissipation(x, V));
        s.discrepancy.push_back(discrepancy_F(x, V));
        s.support.push_back(support_radius(x));
        s.lyapunov.push_back(nan);
        s.l1_dist.push_back(nan);
    }
    return s;
}

inline void run_radial(const ExperimentConfig& c, Artifacts& out, nlohmann::json& summary)
{
    const auto V = make_potential(c.potential);
    const auto rho0 = make_density(c.rho0, c.dimension, c.m0);
    const auto s0 = init_lagrangian(rho0, c.solver.quantiles, c.dimension);
    const auto traj = evolve(s0, V, evolution_config(c.solver));
    const auto& terminal = traj.snapshots.back();

    std::optional<SteadyState> steady;
    try {
        steady = build_steady_state(V, c.dimension, c.m0, c.solver.steady_cells);
    } catch (const AggregationError& e) {
        if (e.kind() != ErrorKind::invalid_potential)
            throw;
        warn(e.kind(), std::string("no unique steady reference: ") + e.what());
    }
    const auto series = steady ? build_series(traj.snapshots, V, *steady) : plain_series(traj.snapshots, V);

    out.write("snapshots.csv", to_text([&](std::ostream& os) { write_snapshot_csv(os, traj.snapshots); }));
    out.write("series.csv", to_text([&](std::ostream& os) { write_series_csv(os, series); }));
    const auto recon = reconstruct_density(terminal);
    out.write("terminal_density.csv", to_text([&](std::ostream& os) {
                  os << std::setprecision(17) << "r,rho\n";
                  for (std::size_t i = 0; i < recon.density.grid().size(); ++i)
                      os << recon.density.grid()[i] << ',' << recon.density.values()[i] << '\n';
              }));

    nlohmann::json meta = {{"dimension", c.dimension}, {"m0", c.m0}, {"potential", V.name},
                           {"has_steady_reference", steady.has_value()}};
    if (steady) {
        meta["E_inf"] = series.params.E_inf;
        meta["E_inf_continuum"] = steady->E_inf;
        meta["R_inf"] = steady->R_inf;
    }
    out.json("series_meta.json", meta);

    const auto diss = check_dissipation(series.times, series.energy, series.dissipation);
    double r_max = 0.0, r0 = support_radius(s0);
    for (double R : series.support)
        r_max = std::max(r_max, R);
    nlohmann::json run = {{"accepted_steps", traj.accepted},
                          {"rejected_steps", traj.rejected},
                          {"t_end", terminal.t},
                          {"density_cap", traj.density_cap},
                          {"terminal_support", support_radius(terminal)},
                          {"initial_support", r0},
                          {"max_support", r_max},
                          {"reconstruction_deviation", recon.max_deviation},
                          {"energy_monotone", diss.monotone},
                          {"worst_energy_increase", diss.worst_increase},
                          {"dissipation_violations", diss.violations},
                          {"dissipation_worst_relative", diss.worst_relative}};
    {
        const auto [a, A] = laplacian_range(V, c.dimension, std::max(r_max, steady ? steady->R_inf : 0.0));
        const auto bounds = check_density_bounds(traj.snapshots, a, A);
        run["density_bounds"] = {{"a", a}, {"A", A}, {"t0_prescribed", bounds.t0_prescribed},
                                 {"t_first", bounds.t_first}, {"holds_after_t0", bounds.holds_after_t0}};
    }
    if (steady) {
        run["R_inf"] = steady->R_inf;
        run["terminal_l1"] = series.l1_dist.back();
        run["terminal_energy_gap"] = series.energy_gap.back();
        run["support_bounded"] = r_max <= 2.0 * std::max(r0, steady->R_inf);
    }
    summary["simulate_radial"] = run;
}

inline void run_particles(const ExperimentConfig& c, Artifacts& out, nlohmann::json& summary)
{
    const auto& p = c.particles;
    const int d = c.dimension;
    const auto rho0 = make_density(c.rho0, d, c.m0);
    ParticleForces forces;
    double rho_ref = c.m0;
    if (p.attraction) {
        const double a = c.attraction.sup_laplacian / (2.0 * d);
        forces = ParticleForces::attracting(make_attraction(
            c.attraction.perturbation == "none" ? potentials::constant() : potentials::gaussian_bump(a), d));
    } else {
        const auto V = make_potential(c.potential);
        forces = ParticleForces::confined(V);
        rho_ref = laplacian_range(V, d, 2.0 * rho0.support_radius()).second;
    }
    const double delta = p.delta > 0.0 ? p.delta : default_regularization(c.m0, p.count, d, rho_ref);
    auto times = p.times;
    std::sort(times.begin(), times.end());
    const auto cloud = sample_cloud(rho0, p.count, c.seed, delta);
    ParticleConfig pc;
    pc.dt_max = p.dt_max;
    pc.rk_order = p.rk_order;
    pc.threads = c.threads;
    auto snaps = simulate_particles(cloud, forces, pc, times);
    snaps.insert(snaps.begin(), cloud);

    out.write("particles.csv", to_text([&](std::ostream& os) { write_particles_csv(os, snaps); }));
    nlohmann::json rows = nlohmann::json::array();
    std::string series = "t,E,D,R\n";
    for (const auto& s : snaps) {
        const auto u = velocity_field(s, forces, c.threads);
        const double E = discrete_energy(s, forces);
        const double D = dissipation(s, u);
        const double R = support_radius(s);
        series += detail::format_double(s.t) + ',' + detail::format_double(E) + ',' + detail::format_double(D) + ','
                  + detail::format_double(R) + '\n';
        nlohmann::json row = {{"t", s.t}, {"energy", E}, {"dissipation", D}, {"support", R},
                              {"center_of_mass", s.center_of_mass()}};
        rows.push_back(row);
    }
    out.write("particle_series.csv", series);

    if (p.compare_radial && !p.attraction) {
        const auto V = *forces.confinement;
        auto state = init_lagrangian(rho0, c.solver.quantiles, d);
        auto ec = evolution_config(c.solver);
        for (std::size_t k = 1; k < snaps.size(); ++k) {
            ec.t_end = snaps[k].t - state.t;
            if (ec.t_end > 0.0)
                state = evolve(state, V, ec).snapshots.back();
            const double Rr = support_radius(state), Er = energy(state, V);
            rows[k]["radial_support"] = Rr;
            rows[k]["radial_energy"] = Er;
            rows[k]["support_rel_diff"] = std::abs(rows[k]["support"].get<double>() - Rr) / Rr;
            rows[k]["energy_rel_diff"] = std::abs(rows[k]["energy"].get<double>() - Er) / std::abs(Er);
        }
    }
    summary["simulate_particles"] = {{"count", p.count}, {"delta", delta}, {"snapshots", rows}};
}

inline void run_attraction(const ExperimentConfig& c, Artifacts& out, nlohmann::json& summary)
{
    const int d = c.dimension;
    const auto& a = c.attraction;
    const auto w = a.perturbation == "none" || a.sup_laplacian == 0.0
                       ? potentials::constant()
                       : potentials::gaussian_bump(a.sup_laplacian / (2.0 * d));
    if (a.perturbation != "none" && a.perturbation != "gaussian_bump")
        fail(ErrorKind::config, "attraction.perturbation must be gaussian_bump or none");
    AttractionSolveConfig sc;
    sc.tol = a.tol;
    sc.max_iter = a.max_iter;
    sc.cells = a.cells;
    sc.override_smallness = a.override_smallness;
    const auto W = make_attraction(w, d);
    const auto res = solve_attraction_steady(W, d, c.m0, sc);
    out.write("attract_profile.csv", to_text([&](std::ostream& os) {
                  os << std::setprecision(17) << "r,rho\n";
                  const auto& g = res.state.density.grid();
                  for (std::size_t i = 0; i < g.size(); ++i)
                      os << g[i] << ',' << res.state.density.values()[i] << '\n';
              }));
    out.write("history.csv", to_text([&](std::ostream& os) { write_history_csv(os, res.history); }));
    nlohmann::json ratios = nlohmann::json::array();
    for (std::size_t k = 1; k < res.history.size(); ++k)
        ratios.push_back(res.history[k - 1].residual > 0.0 ? res.history[k].residual / res.history[k - 1].residual
                                                           : 0.0);
    summary["attract_steady"] = {
        {"epsilon", W.epsilon},
        {"R_inf", res.state.R_inf},
        {"E_inf", res.state.E_inf},
        {"iterations", res.history.size()},
        {"final_residual", res.history.back().residual},
        {"residual_ratios", ratios},
        {"lambda", res.lambda},
        {"density_within_bounds", res.field.within_bounds()},
        {"max_velocity", res.velocity.max_velocity},
        {"velocity_tolerance", res.velocity.tolerance},
        {"velocity_ok", res.velocity.passed},
        {"smallness", {{"lhs1", res.smallness.lhs1}, {"rhs1", res.smallness.rhs1}, {"pass1", res.smallness.pass1},
                       {"lhs2", res.smallness.lhs2}, {"rhs2", res.smallness.rhs2}, {"pass2", res.smallness.pass2},
                       {"critical_epsilon", res.smallness.critical_epsilon}}}};
    if (!res.velocity.passed)
        fail(ErrorKind::resolution, "attraction steady state velocity check failed");
}

inline void run_rates(const ExperimentConfig& c, Artifacts& out, nlohmann::json& summary)
{
    const std::filesystem::path in = c.rates.input.empty() ? out.dir() : std::filesystem::path(c.rates.input);
    std::ifstream meta_is(in / "series_meta.json");
    if (!meta_is)
        fail(ErrorKind::io, "rates: no series_meta.json in " + in.string());
    nlohmann::json meta;
    try {
        meta_is >> meta;
    } catch (const std::exception& e) {
        fail(ErrorKind::io, std::string("rates: bad series_meta.json: ") + e.what());
    }
    if (!meta.value("has_steady_reference", false))
        fail(ErrorKind::window, "rates: the run has no steady reference");
    std::ifstream series_is(in / "series.csv");
    if (!series_is)
        fail(ErrorKind::io, "rates: no series.csv in " + in.string());
    auto series = read_series_csv(series_is, meta.at("E_inf").get<double>());
    series.dim = meta.at("dimension").get<int>();
    series.params.R_inf = meta.value("R_inf", 0.0);
    const double m0 = meta.at("m0").get<double>();

    FitWindow window = noise_floor_window(series, m0, c.rates.t_a);
    if (c.rates.t_b > 0.0)
        window.t_b = c.rates.t_b;
    nlohmann::json fits;
    const auto energy_fit = fit_rate(series, RateQuantity::energy_gap, window, c.rates.d2_target);
    fits["energy_gap"] = fit_json(energy_fit);
    const auto bound = check_power_bound(series.times, series.energy_gap, energy_fit.gamma_theory, window.t_a,
                                         window.t_b);
    fits["energy_gap"]["bound"] = {{"constant", bound.constant}, {"worst_ratio", bound.worst_ratio},
                                   {"checked", bound.checked}, {"passed", bound.passed}};
    bool l1_ok = true;
    for (std::size_t k = 0; k < series.size(); ++k)
        if (series.times[k] >= window.t_a && series.times[k] <= window.t_b && !(series.l1_dist[k] > 0.0))
            l1_ok = false;
    if (l1_ok) {
        const auto l1_fit = fit_rate(series, RateQuantity::l1, window, c.rates.d2_target);
        fits["l1"] = fit_json(l1_fit);
        fits["l1"]["relation_holds"] = l1_fit.gamma_hat >= energy_fit.gamma_hat / 2.0 - 0.1;
    }
    out.json("rates.json", fits);
    summary["rates"] = fits;
}

inline void run_validate(const ExperimentConfig& c, Artifacts& out, nlohmann::json& summary)
{
    const auto V = make_potential(c.potential);
    const int d = c.dimension;
    const auto radii = logspace(1e-3, 1e3, 600);
    const auto pareto = check_pareto_tail(V, d, radii, c.m0);
    const double p = double(d - 1) / double(d + 1);
    const double R0 = c.validate.R0;
    const double c_V = c.validate.c_V > 0.0 ? c.validate.c_V : V.slope(R0) * std::pow(R0, p);
    nlohmann::json report = {{"potential", V.name},
                             {"pareto_tail", pareto.passed},
                             {"pareto_reason", pareto.reason},
                             {"pareto_first", pareto.first_value},
                             {"pareto_last", pareto.last_value}};
    if (c_V > 0.0) {
        const auto tail = check_compact_support_tail(V, d, c_V, R0, logspace(R0, 1e3 * R0, 600));
        report["compact_support_tail"] = tail.passed;
        report["compact_support"] = {{"c_V", c_V}, {"R0", R0}, {"slope_ok", tail.slope_ok},
                                     {"laplacian_nonnegative", tail.laplacian_nonnegative},
                                     {"laplacian_bounded", tail.laplacian_bounded},
                                     {"worst_ratio", tail.worst_ratio}};
    } else {
        report["compact_support_tail"] = false;
        report["compact_support"] = {{"reason", "V'(R0) <= 0"}};
    }
    if (pareto.passed) {
        try {
            const auto state = build_steady_state(V, d, c.m0, c.solver.steady_cells);
            report["steady_R_inf"] = state.R_inf;
        } catch (const AggregationError& e) {
            report["steady_error"] = std::string(to_string(e.kind())) + ": " + e.what();
        }
    }
    out.json("validate.json", report);
    summary["validate"] = report;
    if (!pareto.passed)
        fail(ErrorKind::tail_too_weak, pareto.reason);
}

} // namespace detail

/**
 * Runs one experiment into config.output. Writes the mode's artifacts, the
 * resolved config, summary.json and manifest.json; errors propagate after the
 * manifest is written with the failure reason.
 */
inline RunResult run(const ExperimentConfig& c)
{
    const auto start = std::chrono::steady_clock::now();
    detail::Artifacts out(c.output);
    out.write("config.ini", to_ini(c));
    nlohmann::json summary = {{"name", c.name}, {"mode", to_string(c.mode)}, {"dimension", c.dimension}, {"m0", c.m0}};
    std::optional<AggregationError> error;
    try {
        switch (c.mode) {
        case Mode::steady: detail::run_steady(c, out, summary); break;
        case Mode::simulate_radial: detail::run_radial(c, out, summary); break;
        case Mode::simulate_particles: detail::run_particles(c, out, summary); break;
        case Mode::attract_steady: detail::run_attraction(c, out, summary); break;
        case Mode::rates: detail::run_rates(c, out, summary); break;
        case Mode::validate: detail::run_validate(c, out, summary); break;
        }
    } catch (const AggregationError& e) {
        error = e;
        summary["error"] = {{"kind", std::string(to_string(e.kind()))}, {"reason", std::string(e.what())},
                            {"exit_code", exit_code(e.kind())}};
    }
    summary["status"] = error ? "failed" : "ok";
    out.json("summary.json", summary);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    nlohmann::json manifest = {{"name", c.name},
                               {"mode", to_string(c.mode)},
                               {"config_hash", config_hash(c)},
                               {"version", library_version},
                               {"compiler", __VERSION__},
                               {"seed", c.seed},
                               {"threads", c.threads},
                               {"wall_time_s", wall},
                               {"status", error ? "failed" : "ok"}};
    auto names = out.names();
    names.push_back("manifest.json");
    manifest["artifacts"] = names;
    out.json("manifest.json", manifest);
    if (error)
        throw *error;
    return {summary, names};
}

// ---------------------------------------------------------------------------
// Recipes

inline const std::vector<std::string>& recipe_names()
{
    static const std::vector<std::string> names{"thm23_uniqueness", "thm25_rates_d2",        "thm25_rates_d3",
                                                "thm26_attraction", "appx_1d_nonuniqueness", "appx_compact_support"};
    return names;
}

/// Configs of a named reproduction; outputs go to subdirectories of `root`.
inline std::vector<ExperimentConfig> recipe(const std::string& name, const std::string& root = "out")
{
    const double pi = std::numbers::pi;
    auto base = [&](const std::string& run, Mode mode, int d, double m0) {
        ExperimentConfig c;
        c.name = run;
        c.mode = mode;
        c.dimension = d;
        c.m0 = m0;
        c.output = (std::filesystem::path(root) / name / run).string();
        return c;
    };
    auto radial = [&](const std::string& run, int d, double m0, const std::string& shape, double r_in, double r_out) {
        auto c = base(run, Mode::simulate_radial, d, m0);
        c.rho0.shape = shape;
        c.rho0.r_in = r_in;
        c.rho0.r_out = r_out;
        return c;
    };
    std::vector<ExperimentConfig> out;
    if (name == "thm23_uniqueness") {
        out.push_back(radial("ball", 3, 4 * pi, "ball", 0.0, 1.5));
        out.push_back(radial("annulus", 3, 4 * pi, "shell", 1.0, 2.0));
    } else if (name == "thm25_rates_d2" || name == "thm25_rates_d3") {
        const int d = name == "thm25_rates_d2" ? 2 : 3;
        auto sim = radial("simulate", d, sphere_area(d), "shell", 1.0, 2.0);
        auto rates = base("rates", Mode::rates, d, sim.m0);
        rates.rates.input = sim.output;
        out.push_back(sim);
        out.push_back(rates);
    } else if (name == "thm26_attraction") {
        auto baseline = base("baseline", Mode::attract_steady, 3, 1.0);
        baseline.attraction.perturbation = "none";
        auto perturbed = base("perturbed", Mode::attract_steady, 3, 1.0);
        perturbed.attraction.sup_laplacian = 0.01;
        perturbed.attraction.override_smallness = true;
        out.push_back(baseline);
        out.push_back(perturbed);
    } else if (name == "appx_1d_nonuniqueness") {
        for (const auto& [run, pot, lo, hi] :
             std::vector<std::tuple<std::string, std::string, double, double>>{
                 {"double_well_right", "double_well", 0.5, 1.5},
                 {"double_well_left", "double_well", -1.5, -0.5},
                 {"convex_right", "soft_quadratic", 0.5, 1.5},
                 {"convex_left", "soft_quadratic", -1.5, -0.5}}) {
            auto c = radial(run, 1, 0.2, "interval", lo, hi);
            c.potential.name = pot;
            c.solver.t_end = 30.0;
            out.push_back(c);
        }
    } else if (name == "appx_compact_support") {
        auto quad = base("validate_quadratic", Mode::validate, 3, 4 * pi);
        auto weak = base("validate_inverse_slope", Mode::validate, 3, 4 * pi);
        weak.potential.name = "power_slope";
        weak.potential.c = 1.0;
        weak.potential.p = -1.0;
        out.push_back(quad);
        out.push_back(weak);
        out.push_back(radial("bounded_support", 3, 4 * pi, "shell", 1.0, 2.0));
    } else {
        fail(ErrorKind::config, "unknown recipe '" + name + "'");
    }
    for (auto& c : out)
        c.name = name + "/" + c.name;
    return out;
}

namespace detail {

inline std::pair<std::vector<double>, std::vector<double>> terminal_density(const std::string& dir)
{
    std::ifstream is(std::filesystem::path(dir) / "terminal_density.csv");
    if (!is)
        fail(ErrorKind::io, "missing terminal_density.csv in " + dir);
    std::string line;
    std::getline(is, line);
    std::vector<double> r, v;
    while (std::getline(is, line)) {
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        double a, b;
        if (row >> a >> b) {
            r.push_back(a);
            v.push_back(b);
        }
    }
    return {r, v};
}

} // namespace detail

/**
 * Runs every config of a recipe and adds the cross-run comparison: terminal
 * L1 distances for the uniqueness and non-uniqueness recipes. Expected
 * validator failures inside appx_compact_support are recorded, not raised.
 */
inline nlohmann::json run_recipe(const std::string& name, const std::string& root, std::uint64_t seed = 1,
                                 unsigned threads = 1)
{
    nlohmann::json report = {{"recipe", name}};
    std::map<std::string, std::string> dirs;
    std::map<std::string, std::pair<int, Geometry>> layout;
    for (auto c : recipe(name, root)) {
        c.seed = seed;
        c.threads = threads;
        const auto leaf = c.name.substr(c.name.find('/') + 1);
        try {
            report["runs"][leaf] = run(c).summary;
        } catch (const AggregationError& e) {
            const bool expected = name == "appx_compact_support" && e.kind() == ErrorKind::tail_too_weak;
            if (!expected)
                throw;
            report["runs"][leaf] = {{"status", "failed"}, {"reason", std::string(e.what())}};
        }
        dirs[leaf] = c.output;
        layout[leaf] = {c.dimension, c.rho0.shape == "interval" ? Geometry::line : Geometry::radial};
    }
    auto distance = [&](const std::string& a, const std::string& b) {
        auto read = [&](const std::string& leaf) {
            const auto raw = detail::terminal_density(dirs[leaf]);
            const auto [d, geometry] = layout[leaf];
            return RadialDensity(d, raw.first, raw.second, geometry);
        };
        return l1_distance(read(a), read(b));
    };
    if (name == "thm23_uniqueness") {
        const double l1 = distance("ball", "annulus");
        report["comparison"] = {{"terminal_l1", l1}, {"same_terminal_state", l1 < 2e-2}};
    } else if (name == "appx_1d_nonuniqueness") {
        const double dw = distance("double_well_left", "double_well_right");
        const double cv = distance("convex_left", "convex_right");
        report["comparison"] = {{"double_well_l1", dw}, {"double_well_distinct", dw > 0.5 * 0.2},
                                {"convex_l1", cv}, {"convex_same", cv < 2e-2 * 0.2}};
    }
    detail::Artifacts out(root);
    out.json(name + ".json", report);
    return report;
}

} // namespace aggregation
