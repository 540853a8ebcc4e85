#pragma once

/**
 * @file lagrangian.hpp
 * @brief Radial dynamics in mass coordinates.
 *
 * Each quantile carries a fixed mass w_i and the enclosed mass m_i at its
 * midpoint. Its radius and density obey decoupled ODEs
 *   dR/dt   = m_i / (s_d R^{d-1}) - V'(R)      (d >= 2)
 *   dX/dt   = m_i - V'(X),  m_i centred in (-m0/2, m0/2)   (d = 1)
 *   drho/dt = rho (Delta V(R) - rho)
 * so the enclosed mass is conserved exactly.
 */

#include "density.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "potential.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace aggregation {

enum class CrossingPolicy { reject_step, merge };

struct EvolutionConfig {
    double dt_init = 1e-3;
    double dt_min = 1e-10;
    double dt_max = 0.05;
    double t_end = 1.0;
    int rk_order = 4;
    CrossingPolicy crossing_policy = CrossingPolicy::reject_step;
    std::size_t snapshot_stride = 1;
    double density_cap = 0.0; // upper bound on carried densities; 0 selects 10 max(A, max rho0)

    void validate() const
    {
        if (!(dt_min > 0.0 && dt_min <= dt_init && dt_init <= dt_max))
            fail(ErrorKind::parameter, "EvolutionConfig: need 0 < dt_min <= dt_init <= dt_max");
        if (!(t_end >= 0.0))
            fail(ErrorKind::parameter, "EvolutionConfig: t_end must be non-negative");
        if (rk_order != 2 && rk_order != 4)
            fail(ErrorKind::parameter, "EvolutionConfig: rk_order must be 2 or 4");
        if (snapshot_stride == 0)
            fail(ErrorKind::parameter, "EvolutionConfig: snapshot_stride must be positive");
    }
};

struct LagrangianState {
    int dim = 3;
    double m0 = 0.0;
    double t = 0.0;
    std::vector<double> weights;   // mass carried by each quantile
    std::vector<double> quantiles; // enclosed mass at the quantile midpoint, centred when d = 1
    std::vector<double> radii;     // positions X_i when d = 1
    std::vector<double> densities;

    bool line() const noexcept { return dim == 1; }
    std::size_t size() const noexcept { return radii.size(); }
};

/// Recomputes midpoint quantiles from the weights.
inline void assign_quantiles(LagrangianState& s)
{
    s.quantiles.resize(s.weights.size());
    double below = 0.0;
    for (std::size_t i = 0; i < s.weights.size(); ++i) {
        s.quantiles[i] = below + 0.5 * s.weights[i] - (s.line() ? 0.5 * s.m0 : 0.0);
        below += s.weights[i];
    }
}

/// Volume between radii a < b: the shell in d >= 2, the interval length when d = 1.
inline double shell_volume(int d, double a, double b)
{
    if (d == 1)
        return b - a;
    return ball_volume(d) * (std::pow(b, d) - std::pow(a, d));
}

namespace detail {

// Even extension of a radial d = 1 profile to the line.
inline RadialDensity mirrored(const RadialDensity& rho)
{
    const auto& g = rho.grid();
    const auto& v = rho.values();
    std::vector<double> grid, values;
    for (std::size_t k = g.size(); k-- > 0;) {
        if (g[k] == 0.0)
            continue;
        grid.push_back(-g[k]);
        values.push_back(v[k]);
    }
    if (g.front() > 0.0) {
        warn(ErrorKind::domain, "radial d=1 profile with a hole at the origin; the gap is kept");
        // keep the vacuum gap explicit: density vanishes on (-g0, g0)
        grid.push_back(-g.front() * (1 - 1e-12));
        values.push_back(0.0);
        grid.push_back(g.front() * (1 - 1e-12));
        values.push_back(0.0);
    }
    for (std::size_t k = 0; k < g.size(); ++k) {
        grid.push_back(g[k]);
        values.push_back(v[k]);
    }
    return {1, std::move(grid), std::move(values), Geometry::line};
}

// Smallest r in [lo, hi] with rho.enclosed_mass(r) >= target.
inline double invert_mass(const RadialDensity& rho, double target, double lo, double hi)
{
    for (int it = 0; it < 200 && hi - lo > 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(hi));
         ++it) {
        const double mid = 0.5 * (lo + hi);
        if (rho.enclosed_mass(mid) >= target)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

} // namespace detail

/**
 * Quantiles of rho0: R_i is the leftmost radius with M(R_i) = (i - 1/2) m0/N
 * and rho_i = rho0(R_i). A quantile landing in a vacuum region gets the mean
 * density of its own mass cell and a warning.
 */
inline LagrangianState init_lagrangian(const RadialDensity& rho0, std::size_t N, Dimension d)
{
    if (rho0.dimension() != d.value())
        fail(ErrorKind::parameter, "init_lagrangian: density dimension differs from d");
    if (N == 0)
        fail(ErrorKind::parameter, "init_lagrangian: need at least one quantile");
    const RadialDensity rho = (d.value() == 1 && rho0.geometry() == Geometry::radial) ? detail::mirrored(rho0) : rho0;
    const double m0 = rho.mass();
    if (!(m0 > 0.0))
        fail(ErrorKind::parameter, "init_lagrangian: initial density has no mass");

    LagrangianState s;
    s.dim = d.value();
    s.m0 = m0;
    s.weights.assign(N, m0 / static_cast<double>(N));
    assign_quantiles(s);
    s.radii.resize(N);
    s.densities.resize(N);
    const double lo = rho.grid().front(), hi = rho.grid().back();
    std::size_t vacuum = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const double w = s.weights[i];
        const double target = (static_cast<double>(i) + 0.5) * w;
        s.radii[i] = detail::invert_mass(rho, target, lo, hi);
        double value = rho.value(s.radii[i]);
        if (!(value > 0.0)) {
            ++vacuum;
            const double a = detail::invert_mass(rho, static_cast<double>(i) * w, lo, hi);
            const double b = detail::invert_mass(rho, static_cast<double>(i + 1) * w, lo, hi);
            value = w / shell_volume(s.dim, a, b);
        }
        s.densities[i] = value;
    }
    if (vacuum > 0)
        warn(ErrorKind::domain, std::to_string(vacuum) + " quantile(s) fell in a vacuum plateau of rho0; "
                                    "leftmost radius used with the mass-cell mean density");
    for (std::size_t i = 1; i < N; ++i)
        if (!(s.radii[i] > s.radii[i - 1]))
            fail(ErrorKind::resolution, "init_lagrangian: quantile radii are not strictly increasing; refine rho0");
    return s;
}

struct LagrangianRate {
    std::vector<double> dR;
    std::vector<double> drho;
    bool valid = true; // false when a radius left (0, inf)
};

inline double quantile_velocity(const LagrangianState& s, const RadialPotential& V, std::size_t i)
{
    const double R = s.radii[i];
    if (s.line())
        return s.quantiles[i] - V.slope(R);
    return s.quantiles[i] / (sphere_area(s.dim) * std::pow(R, s.dim - 1)) - V.slope(R);
}

inline LagrangianRate rhs(const LagrangianState& s, const RadialPotential& V)
{
    LagrangianRate out;
    const std::size_t n = s.size();
    out.dR.resize(n);
    out.drho.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double R = s.radii[i];
        if (!s.line() && !(R > 0.0)) {
            out.valid = false;
            return out;
        }
        out.dR[i] = quantile_velocity(s, V, i);
        out.drho[i] = s.densities[i] * (V.laplacian(R, s.dim) - s.densities[i]);
    }
    return out;
}

/// Outermost support radius: R_N plus the shell holding half of the last quantile at density rho_N.
inline double support_radius(const LagrangianState& s)
{
    const std::size_t n = s.size();
    const double R = s.radii[n - 1], rho = s.densities[n - 1], half = 0.5 * s.weights[n - 1];
    if (s.line())
        return R + half / rho;
    return std::pow(std::pow(R, s.dim) + half / (rho * ball_volume(s.dim)), 1.0 / s.dim);
}

/// Innermost support radius (the left end when d = 1), 0 for a ball.
inline double inner_radius(const LagrangianState& s)
{
    const double R = s.radii[0], rho = s.densities[0], half = 0.5 * s.weights[0];
    if (s.line())
        return R - half / rho;
    const double inner = std::pow(R, s.dim) - half / (rho * ball_volume(s.dim));
    return inner > 0.0 ? std::pow(inner, 1.0 / s.dim) : 0.0;
}

struct Reconstruction {
    RadialDensity density;     // estimator A
    double max_deviation = 0.0; // max relative gap between estimators A and B
};

/**
 * Density from the carried values (estimator A), capped at both ends by the
 * edge shells; estimator B is the mass of each gap between adjacent quantiles
 * divided by its exact volume, compared with A at the same gap.
 *
 * Nodes are laid out so every quadratic mass panel of RadialDensity is either
 * a constant edge cap or lies inside [R_1, R_N]: caps get a midpoint node, and
 * an odd interior interval count is evened out by splitting the last gap.
 */
inline Reconstruction reconstruct_density(const LagrangianState& s)
{
    const std::size_t n = s.size();
    if (n < 16)
        fail(ErrorKind::parameter, "reconstruct_density needs at least 16 quantiles");
    std::vector<double> grid, values;
    grid.reserve(n + 5);
    values.reserve(n + 5);
    auto cap = [&](double a, double b, double rho) {
        grid.push_back(a);
        values.push_back(rho);
        grid.push_back(0.5 * (a + b));
        values.push_back(rho);
    };
    cap(inner_radius(s), s.radii[0], s.densities[0]);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        grid.push_back(s.radii[i]);
        values.push_back(s.densities[i]);
    }
    if ((n - 1) % 2 == 1) {
        const double x0 = s.radii[n - 3], x1 = s.radii[n - 2], x2 = s.radii[n - 1];
        const double f0 = s.densities[n - 3], f1 = s.densities[n - 2], f2 = s.densities[n - 1];
        const double x = 0.5 * (x1 + x2);
        const double f = f0 * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
            + f1 * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2)) + f2 * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
        grid.push_back(x);
        values.push_back(std::max(f, 0.0));
    }
    const double outer = support_radius(s);
    cap(s.radii[n - 1], outer, s.densities[n - 1]);
    grid.push_back(outer);
    values.push_back(s.densities[n - 1]);

    Reconstruction out;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double b = 0.5 * (s.weights[i] + s.weights[i + 1]) / shell_volume(s.dim, s.radii[i], s.radii[i + 1]);
        const double a = 0.5 * (s.densities[i] + s.densities[i + 1]);
        out.max_deviation = std::max(out.max_deviation, std::abs(a - b) / b);
    }
    out.density = RadialDensity(s.dim, std::move(grid), std::move(values),
                                s.line() ? Geometry::line : Geometry::radial);
    if (out.max_deviation > 0.2)
        warn(ErrorKind::resolution, "reconstructed density estimators differ by "
                                        + std::to_string(100.0 * out.max_deviation) + "% at t = " + std::to_string(s.t));
    return out;
}

/// Largest Delta V on `samples` points of [lo, hi].
inline double laplacian_sup(const RadialPotential& V, int d, double lo, double hi, std::size_t samples = 256)
{
    double sup = 0.0;
    for (double r : linspace(lo, hi, samples))
        sup = std::max(sup, V.laplacian(r, d));
    return sup;
}

inline std::string dump_state(const LagrangianState& s, double dt)
{
    std::ostringstream os;
    os.precision(17);
    os << "t=" << s.t << " dt=" << dt << " N=" << s.size();
    if (s.size() > 0) {
        const auto [lo, hi] = std::minmax_element(s.densities.begin(), s.densities.end());
        os << " R_1=" << s.radii.front() << " R_N=" << s.radii.back() << " rho_min=" << *lo << " rho_max=" << *hi;
    }
    os << '\n' << "i,R_i,rho_i\n";
    for (std::size_t i = 0; i < s.size(); ++i)
        os << i << ',' << s.radii[i] << ',' << s.densities[i] << '\n';
    return os.str();
}

// Adjacent quantiles out of order are fused: mass-weighted radius and density, summed mass.
inline void merge_crossings(LagrangianState& s)
{
    std::size_t merged = 0;
    for (std::size_t i = 1; i < s.size();) {
        if (s.radii[i] > s.radii[i - 1]) {
            ++i;
            continue;
        }
        const double wa = s.weights[i - 1], wb = s.weights[i], w = wa + wb;
        s.radii[i - 1] = (wa * s.radii[i - 1] + wb * s.radii[i]) / w;
        s.densities[i - 1] = (wa * s.densities[i - 1] + wb * s.densities[i]) / w;
        s.weights[i - 1] = w;
        s.radii.erase(s.radii.begin() + static_cast<std::ptrdiff_t>(i));
        s.densities.erase(s.densities.begin() + static_cast<std::ptrdiff_t>(i));
        s.weights.erase(s.weights.begin() + static_cast<std::ptrdiff_t>(i));
        ++merged;
        i = std::max<std::size_t>(i - 1, 1);
    }
    assign_quantiles(s);
    warn(ErrorKind::resolution, "merged " + std::to_string(merged) + " crossing quantile pair(s) at t = "
                                    + std::to_string(s.t));
}

/**
 * Explicit Runge-Kutta stepper with the step-size policy of the solver:
 * a step is rejected and dt halved when radii lose their order or a density
 * leaves (0, cap]; dt doubles (up to dt_max) after 10 consecutive accepts.
 */
class RadialIntegrator {
public:
    RadialIntegrator(EvolutionConfig config, double density_cap) : config_(config), cap_(density_cap), dt_(config.dt_init)
    {
        config_.validate();
        if (!(cap_ > 0.0))
            fail(ErrorKind::parameter, "RadialIntegrator: density cap must be positive");
    }

    double dt() const noexcept { return dt_; }
    std::size_t rejected() const noexcept { return rejected_; }

    /// One accepted step of at most `max_dt`.
    LagrangianState step(const LagrangianState& s, const RadialPotential& V,
                         double max_dt = std::numeric_limits<double>::infinity())
    {
        for (;;) {
            const double h = std::min(dt_, max_dt);
            LagrangianState next;
            if (attempt(s, V, h, next)) {
                if (++streak_ >= 10) {
                    dt_ = std::min(2.0 * dt_, config_.dt_max);
                    streak_ = 0;
                }
                return next;
            }
            ++rejected_;
            streak_ = 0;
            dt_ = 0.5 * h;
            if (dt_ < config_.dt_min)
                fail(ErrorKind::stiffness, "step size fell below dt_min at t = " + std::to_string(s.t),
                     dump_state(s, dt_));
        }
    }

private:
    static void axpy(const LagrangianState& base, const LagrangianRate& k, double h, LagrangianState& out)
    {
        out = base;
        for (std::size_t i = 0; i < base.size(); ++i) {
            out.radii[i] += h * k.dR[i];
            out.densities[i] += h * k.drho[i];
        }
    }

    bool attempt(const LagrangianState& s, const RadialPotential& V, double h, LagrangianState& next) const
    {
        const auto k1 = rhs(s, V);
        if (!k1.valid)
            return false;
        LagrangianState tmp;
        if (config_.rk_order == 2) {
            axpy(s, k1, 0.5 * h, tmp);
            const auto k2 = rhs(tmp, V);
            if (!k2.valid)
                return false;
            axpy(s, k2, h, next);
        } else {
            axpy(s, k1, 0.5 * h, tmp);
            const auto k2 = rhs(tmp, V);
            if (!k2.valid)
                return false;
            axpy(s, k2, 0.5 * h, tmp);
            const auto k3 = rhs(tmp, V);
            if (!k3.valid)
                return false;
            axpy(s, k3, h, tmp);
            const auto k4 = rhs(tmp, V);
            if (!k4.valid)
                return false;
            next = s;
            for (std::size_t i = 0; i < s.size(); ++i) {
                next.radii[i] += h / 6.0 * (k1.dR[i] + 2.0 * k2.dR[i] + 2.0 * k3.dR[i] + k4.dR[i]);
                next.densities[i] += h / 6.0 * (k1.drho[i] + 2.0 * k2.drho[i] + 2.0 * k3.drho[i] + k4.drho[i]);
            }
        }
        next.t = s.t + h;
        for (double rho : next.densities)
            if (!(rho > 0.0 && rho <= cap_))
                return false;
        if (!next.line() && !(next.radii[0] > 0.0))
            return false;
        if (!ordered(next)) {
            if (config_.crossing_policy == CrossingPolicy::reject_step)
                return false;
            merge_crossings(next);
        }
        return true;
    }

    static bool ordered(const LagrangianState& s)
    {
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (!std::isfinite(s.radii[i]))
                return false;
            if (i > 0 && !(s.radii[i] > s.radii[i - 1]))
                return false;
        }
        return true;
    }

    EvolutionConfig config_;
    double cap_;
    double dt_;
    int streak_ = 0;
    std::size_t rejected_ = 0;
};

/// Single step with a fresh integrator at dt_init and the cap of evolve().
inline LagrangianState step(const LagrangianState& s, const RadialPotential& V, const EvolutionConfig& config);

/// Supplies the effective potential for the current state (constant for confinement runs).
using PotentialProvider = std::function<RadialPotential(const LagrangianState&)>;

struct Trajectory {
    std::vector<LagrangianState> snapshots; // every snapshot_stride accepted steps, plus both ends
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    double density_cap = 0.0;
};

/// Density cap 10 max(A, max rho0) with A the sup of Delta V on twice the initial support.
inline double default_density_cap(const LagrangianState& s, const RadialPotential& V)
{
    double lo = 0.0, hi = 2.0 * support_radius(s);
    if (s.line()) {
        const double a = inner_radius(s), b = support_radius(s), c = 0.5 * (a + b);
        lo = c - (b - a);
        hi = c + (b - a);
    }
    const double A = laplacian_sup(V, s.dim, lo, hi);
    const double rho_max = *std::max_element(s.densities.begin(), s.densities.end());
    return 10.0 * std::max(A, rho_max);
}

inline LagrangianState step(const LagrangianState& s, const RadialPotential& V, const EvolutionConfig& config)
{
    const double cap = config.density_cap > 0.0 ? config.density_cap : default_density_cap(s, V);
    RadialIntegrator integrator(config, cap);
    return integrator.step(s, V, config.dt_init);
}

/**
 * Integrates to config.t_end. The observer, when set, sees every accepted
 * state in order, including the initial one.
 */
inline Trajectory evolve(const LagrangianState& s0, const PotentialProvider& potential, const EvolutionConfig& config,
                         const std::function<void(const LagrangianState&)>& observer = {})
{
    config.validate();
    Trajectory out;
    LagrangianState s = s0;
    RadialPotential V = potential(s);
    out.density_cap = config.density_cap > 0.0 ? config.density_cap : default_density_cap(s, V);
    RadialIntegrator integrator(config, out.density_cap);
    out.snapshots.push_back(s);
    if (observer)
        observer(s);
    const double t_end = s0.t + config.t_end;
    while (s.t < t_end * (1 - 1e-14) - 1e-300) {
        s = integrator.step(s, V, t_end - s.t);
        ++out.accepted;
        if (observer)
            observer(s);
        if (out.accepted % config.snapshot_stride == 0)
            out.snapshots.push_back(s);
        V = potential(s);
    }
    if (out.snapshots.back().t != s.t)
        out.snapshots.push_back(s);
    out.rejected = integrator.rejected();
    return out;
}

inline Trajectory evolve(const LagrangianState& s0, const RadialPotential& V, const EvolutionConfig& config,
                         const std::function<void(const LagrangianState&)>& observer = {})
{
    return evolve(s0, PotentialProvider([&V](const LagrangianState&) { return V; }), config, observer);
}

/// Snapshot CSV rows (t, i, m_i, R_i, rho_i).
inline void write_snapshot_csv(std::ostream& os, const std::vector<LagrangianState>& snapshots, bool header = true)
{
    const auto old = os.precision(17);
    if (header)
        os << "t,i,m_i,R_i,rho_i\n";
    for (const auto& s : snapshots)
        for (std::size_t i = 0; i < s.size(); ++i)
            os << s.t << ',' << i + 1 << ',' << s.quantiles[i] << ',' << s.radii[i] << ',' << s.densities[i] << '\n';
    os.precision(old);
}

} // namespace aggregation
