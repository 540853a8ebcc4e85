#pragma once

/**
 * @file diagnostics.hpp
 * @brief Energy, dissipation, discrepancy, Lyapunov functional and decay-rate fits.
 *
 * For a Lagrangian state the energy separates over quantiles:
 *   E = sum_i w_i (m_i N(R_i) + V(R_i))     (d >= 2)
 *   E = sum_i w_i (V(X_i) - m_i X_i)        (d = 1, centred m_i)
 * and the quantile ODE is its exact gradient flow, with dissipation
 * D = sum_i w_i u_i^2.
 */

#include "density.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "lagrangian.hpp"
#include "potential.hpp"
#include "quadrature.hpp"
#include "steady_state.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace aggregation {

/// Energy of quantile i at radius R, up to the quantile weight.
inline double quantile_energy(int d, double quantile, const RadialPotential& V, double R)
{
    if (d == 1)
        return V.value(R) - quantile * R;
    return quantile * newton_kernel(d, R) + V.value(R);
}

inline double energy(const LagrangianState& s, const RadialPotential& V)
{
    double e = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        e += s.weights[i] * quantile_energy(s.dim, s.quantiles[i], V, s.radii[i]);
    return e;
}

/// Continuum energy of a profile (radial Newtonian field plus confinement).
inline double energy(const RadialDensity& rho, const RadialPotential& V) { return radial_energy(rho, V); }

inline double dissipation(const LagrangianState& s, const RadialPotential& V)
{
    double D = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double u = quantile_velocity(s, V, i);
        D += s.weights[i] * u * u;
    }
    return D;
}

/// F = 1/2 sum_i w_i (rho_i - Delta V(R_i))^2.
inline double discrepancy_F(const LagrangianState& s, const RadialPotential& V)
{
    double F = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double g = s.densities[i] - V.laplacian(s.radii[i], s.dim);
        F += s.weights[i] * g * g;
    }
    return 0.5 * F;
}

/**
 * Steady-state reference for the energy gap of a quantile layout.
 *
 * Each quantile's equilibrium R_i* solves m_i = s_d R^{d-1} V'(R) (or
 * V'(X) = m_i when d = 1), the exact fixed points of the quantile ODE for
 * the analytic steady state. The gap is summed term by term as
 * w_i int_{R_i*}^{R_i} g_i'(s) ds with g_i' = V' - m_i/(s_d s^{d-1}), which
 * avoids cancelling two large energies at late times.
 */
class EnergyReference {
public:
    EnergyReference(const LagrangianState& layout, RadialPotential V) : V_(std::move(V)), dim_(layout.dim)
    {
        weights_ = layout.weights;
        quantiles_ = layout.quantiles;
        equilibria_.resize(quantiles_.size());
        for (std::size_t i = 0; i < quantiles_.size(); ++i)
            equilibria_[i] = dim_ == 1 ? line_equilibrium(quantiles_[i]) : solve_support_radius(V_, dim_, quantiles_[i]);
        e_inf_ = 0.0;
        for (std::size_t i = 0; i < quantiles_.size(); ++i)
            e_inf_ += weights_[i] * quantile_energy(dim_, quantiles_[i], V_, equilibria_[i]);
    }

    /// Energy of the equilibrium layout.
    double E_inf() const noexcept { return e_inf_; }
    const std::vector<double>& equilibria() const noexcept { return equilibria_; }

    double gap(const LagrangianState& s) const
    {
        if (s.size() != quantiles_.size())
            fail(ErrorKind::parameter, "EnergyReference: quantile layout changed");
        static const GaussLegendre gl(16);
        const double sd = sphere_area(dim_);
        double total = 0.0;
        for (std::size_t i = 0; i < quantiles_.size(); ++i) {
            const double m = quantiles_[i];
            auto force = [&](double r) {
                return dim_ == 1 ? V_.slope(r) - m : V_.slope(r) - m / (sd * std::pow(r, dim_ - 1));
            };
            total += weights_[i] * gl.integrate(force, equilibria_[i], s.radii[i]);
        }
        return total;
    }

private:
    double line_equilibrium(double m) const
    {
        double lo = -1.0, hi = 1.0;
        for (int k = 0; k < 60 && V_.slope(lo) > m; ++k)
            lo *= 2.0;
        for (int k = 0; k < 60 && V_.slope(hi) < m; ++k)
            hi *= 2.0;
        if (!(V_.slope(lo) <= m && V_.slope(hi) >= m))
            fail(ErrorKind::invalid_potential, "no equilibrium for a d=1 quantile");
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (V_.slope(mid) < m ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }

    RadialPotential V_;
    int dim_;
    std::vector<double> weights_, quantiles_, equilibria_;
    double e_inf_ = 0.0;
};

struct LyapunovParams {
    double eps1 = 0.1;
    double eps2 = 0.01;
    double m = 4.0; // exponent, must exceed d
    double E_inf = 0.0;
    double R_inf = 0.0;

    static LyapunovParams defaults(int d) { return {0.1, 0.01, double(d + 1), 0.0, 0.0}; }
};

/// (E - E_inf) + eps1 F + eps2 (R - R_inf)_+^m.
inline double lyapunov(double energy_gap, double F, double R, const LyapunovParams& p, int d)
{
    if (!(p.m > d))
        fail(ErrorKind::parameter, "lyapunov exponent m must exceed the dimension");
    if (!(p.eps1 > 0.0 && p.eps2 > 0.0))
        fail(ErrorKind::parameter, "lyapunov weights must be positive");
    const double excess = std::max(R - p.R_inf, 0.0);
    return energy_gap + p.eps1 * F + p.eps2 * std::pow(excess, p.m);
}

/// L1 distance between the reconstructed state and the steady profile.
inline double l1_distance(const LagrangianState& s, const SteadyState& steady)
{
    const auto rho = reconstruct_density(s).density;
    if (rho.geometry() == Geometry::line && steady.density.geometry() == Geometry::radial)
        return l1_distance(rho, detail::mirrored(steady.density));
    return l1_distance(rho, steady.density);
}

struct DiagnosticSeries {
    std::vector<double> times, energy, energy_gap, dissipation, discrepancy, support, lyapunov, l1_dist;
    LyapunovParams params;
    int dim = 3;
    double E_inf_continuum = 0.0;

    std::size_t size() const noexcept { return times.size(); }
};

/// Series over a trajectory's snapshots against the analytic steady state.
inline DiagnosticSeries build_series(const std::vector<LagrangianState>& snapshots, const RadialPotential& V,
                                     const SteadyState& steady, std::optional<LyapunovParams> params = {})
{
    if (snapshots.empty())
        fail(ErrorKind::parameter, "build_series: no snapshots");
    DiagnosticSeries out;
    out.dim = snapshots.front().dim;
    const EnergyReference ref(snapshots.front(), V);
    out.params = params.value_or(LyapunovParams::defaults(out.dim));
    out.params.E_inf = ref.E_inf();
    out.params.R_inf = steady.R_inf;
    out.E_inf_continuum = steady.E_inf;
    for (const auto& s : snapshots) {
        const double gap = ref.gap(s);
        const double F = discrepancy_F(s, V);
        const double R = support_radius(s);
        out.times.push_back(s.t);
        out.energy.push_back(energy(s, V));
        out.energy_gap.push_back(gap);
        out.dissipation.push_back(dissipation(s, V));
        out.discrepancy.push_back(F);
        out.support.push_back(R);
        out.lyapunov.push_back(lyapunov(gap, F, R, out.params, out.dim));
        out.l1_dist.push_back(s.size() >= 16 ? l1_distance(s, steady) : std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

inline void write_series_csv(std::ostream& os, const DiagnosticSeries& s)
{
    const auto old = os.precision(17);
    os << "t,E,D,F,R,lyapunov,l1\n";
    for (std::size_t k = 0; k < s.size(); ++k)
        os << s.times[k] << ',' << s.energy[k] << ',' << s.dissipation[k] << ',' << s.discrepancy[k] << ','
           << s.support[k] << ',' << s.lyapunov[k] << ',' << s.l1_dist[k] << '\n';
    os.precision(old);
}

/// Reads the series CSV; energy_gap is recomputed as E - E_inf.
inline DiagnosticSeries read_series_csv(std::istream& is, double E_inf)
{
    DiagnosticSeries s;
    s.params.E_inf = E_inf;
    std::string line;
    if (!std::getline(is, line) || line.rfind("t,E,D,F,R,lyapunov,l1", 0) != 0)
        fail(ErrorKind::io, "series CSV: missing header t,E,D,F,R,lyapunov,l1");
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        double v[7];
        for (double& x : v) {
            std::string tok;
            if (!(row >> tok))
                fail(ErrorKind::io, "series CSV: short row");
            x = std::stod(tok);
        }
        s.times.push_back(v[0]);
        s.energy.push_back(v[1]);
        s.energy_gap.push_back(v[1] - E_inf);
        s.dissipation.push_back(v[2]);
        s.discrepancy.push_back(v[3]);
        s.support.push_back(v[4]);
        s.lyapunov.push_back(v[5]);
        s.l1_dist.push_back(v[6]);
    }
    return s;
}

enum class RateQuantity { energy_gap, l1, support_gap };

struct FitWindow {
    double t_a = 0.0;
    double t_b = std::numeric_limits<double>::infinity();
};

struct RateFit {
    double gamma_hat = 0.0;
    FitWindow window;
    double r_squared = 0.0;
    double gamma_theory = 0.0;
    double q_exponent = 0.0; // 2d/(d+2), recorded for reference only
    bool super_algebraic = false;
    std::size_t samples = 0;

    std::string verdict() const
    {
        std::string v = gamma_hat >= gamma_theory ? "bound satisfied" : "bound not met";
        if (super_algebraic)
            v += " (super-algebraic)";
        return v;
    }
};

/// (d+2)/((d-2)(d+1)) for d >= 3; d = 2 has no theoretical value and takes the caller's target.
inline double theoretical_rate(int d, double d2_target = 1.0)
{
    if (d >= 3)
        return double(d + 2) / double((d - 2) * (d + 1));
    return d2_target;
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

/// Ordinary least squares y = a + b x.
inline LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y)
{
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n)
        fail(ErrorKind::window, "least squares needs at least two points");
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        sxx += (x[k] - mx) * (x[k] - mx);
        sxy += (x[k] - mx) * (y[k] - my);
        syy += (y[k] - my) * (y[k] - my);
    }
    if (sxx == 0.0)
        fail(ErrorKind::window, "least squares: degenerate abscissae");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r_squared = syy == 0.0 ? 1.0 : std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
    return f;
}

inline const std::vector<double>& series_column(const DiagnosticSeries& s, RateQuantity q, std::vector<double>& scratch)
{
    switch (q) {
    case RateQuantity::energy_gap: return s.energy_gap;
    case RateQuantity::l1: return s.l1_dist;
    case RateQuantity::support_gap:
        scratch.resize(s.size());
        for (std::size_t k = 0; k < s.size(); ++k)
            scratch[k] = s.support[k] - s.params.R_inf;
        return scratch;
    }
    return s.energy_gap;
}

/// Power-law fit of values against 1 + t on [t_a, t_b].
inline RateFit fit_power_law(const std::vector<double>& t, const std::vector<double>& v, FitWindow window, int d,
                             double d2_target = 1.0)
{
    std::vector<double> x, y;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] < window.t_a || t[k] > window.t_b)
            continue;
        if (!(v[k] > 0.0) || !std::isfinite(v[k]))
            fail(ErrorKind::window, "fit_rate: nonpositive value at t = " + std::to_string(t[k]));
        x.push_back(std::log1p(t[k]));
        y.push_back(std::log(v[k]));
    }
    if (x.size() < 20)
        fail(ErrorKind::window, "fit_rate: fewer than 20 samples in the window");
    RateFit fit;
    const auto lf = least_squares(x, y);
    fit.gamma_hat = -lf.slope;
    fit.r_squared = lf.r_squared;
    fit.window = {std::max(window.t_a, std::expm1(x.front())), std::min(window.t_b, std::expm1(x.back()))};
    fit.samples = x.size();
    fit.gamma_theory = theoretical_rate(d, d2_target);
    fit.q_exponent = 2.0 * d / (d + 2.0);
    const std::size_t half = x.size() / 2;
    const auto first = least_squares({x.begin(), x.begin() + half}, {y.begin(), y.begin() + half});
    const auto second = least_squares({x.begin() + half, x.end()}, {y.begin() + half, y.end()});
    fit.super_algebraic = -second.slope > -first.slope * (1.0 + 1e-3) + 1e-9;
    return fit;
}

/**
 * Window [t_a, t_b] ending before the first sample at the round-off floor:
 * energy gap <= 1e-18 |E_inf| or, when present, l1 <= 1e-9 m0.
 */
inline FitWindow noise_floor_window(const DiagnosticSeries& s, double m0, double t_a = 1.0)
{
    FitWindow w{t_a, t_a};
    const double gap_floor = 1e-18 * std::max(std::abs(s.params.E_inf), 1e-300);
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (s.times[k] < t_a)
            continue;
        const bool l1_ok = std::isnan(s.l1_dist[k]) || s.l1_dist[k] > 1e-9 * m0;
        if (!(s.energy_gap[k] > gap_floor) || !l1_ok)
            break;
        w.t_b = s.times[k];
    }
    return w;
}

inline RateFit fit_rate(const DiagnosticSeries& s, RateQuantity q, FitWindow window, double d2_target = 1.0)
{
    std::vector<double> scratch;
    return fit_power_law(s.times, series_column(s, q, scratch), window, s.dim, d2_target);
}

struct ExponentialFit {
    double rate = 0.0;
    double r_squared = 0.0;
};

/// Fit of log(value) against t: value ~ C exp(-rate t).
inline ExponentialFit fit_exponential(const std::vector<double>& t, const std::vector<double>& v, FitWindow window)
{
    std::vector<double> x, y;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] < window.t_a || t[k] > window.t_b)
            continue;
        if (!(v[k] > 0.0))
            fail(ErrorKind::window, "fit_exponential: nonpositive value at t = " + std::to_string(t[k]));
        x.push_back(t[k]);
        y.push_back(std::log(v[k]));
    }
    if (x.size() < 20)
        fail(ErrorKind::window, "fit_exponential: fewer than 20 samples in the window");
    const auto lf = least_squares(x, y);
    return {-lf.slope, lf.r_squared};
}

struct BoundCheck {
    bool passed = false;
    double constant = 0.0;    // C fitted at the calibration time
    double worst_ratio = 0.0; // max value / (C (1+t)^-gamma) over checked samples
    std::size_t checked = 0;
};

/// value(t) <= C (1+t)^{-gamma} for t in [t_cal, t_end], with C fixed by the sample at t_cal.
inline BoundCheck check_power_bound(const std::vector<double>& t, const std::vector<double>& v, double gamma,
                                    double t_cal, double t_end = std::numeric_limits<double>::infinity(),
                                    double rel_tol = 1e-9)
{
    BoundCheck out;
    std::size_t cal = t.size();
    for (std::size_t k = 0; k < t.size(); ++k)
        if (t[k] >= t_cal) {
            cal = k;
            break;
        }
    if (cal == t.size())
        fail(ErrorKind::window, "check_power_bound: no sample at or after the calibration time");
    out.constant = v[cal] * std::pow(1.0 + t[cal], gamma);
    for (std::size_t k = cal; k < t.size() && t[k] <= t_end; ++k) {
        const double bound = out.constant * std::pow(1.0 + t[k], -gamma);
        out.worst_ratio = std::max(out.worst_ratio, v[k] / bound);
        ++out.checked;
    }
    out.passed = out.worst_ratio <= 1.0 + rel_tol;
    return out;
}

struct DissipationCheck {
    std::size_t intervals = 0;
    std::size_t violations = 0;
    double worst_relative = 0.0;
    bool monotone = true;
    double worst_increase = 0.0; // max (E_{k+1} - E_k)/|E_k|
};

/**
 * Energy monotonicity and the trapezoid identity E_k - E_{k+1} = int D dt.
 * Intervals whose energy drop is below `floor` are treated as converged and
 * only checked against the absolute tolerance.
 */
inline DissipationCheck check_dissipation(const std::vector<double>& t, const std::vector<double>& E,
                                          const std::vector<double>& D, double rel_tol = 0.05, double abs_tol = 1e-10,
                                          double mono_tol = 1e-8)
{
    DissipationCheck out;
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
        const double drop = E[k] - E[k + 1];
        const double integral = 0.5 * (D[k] + D[k + 1]) * (t[k + 1] - t[k]);
        const double err = std::abs(drop - integral);
        ++out.intervals;
        if (err > rel_tol * std::abs(drop) + abs_tol)
            ++out.violations;
        if (std::abs(drop) > abs_tol)
            out.worst_relative = std::max(out.worst_relative, err / std::abs(drop));
        const double rise = -drop / std::max(std::abs(E[k]), 1e-300);
        out.worst_increase = std::max(out.worst_increase, rise);
        if (rise > mono_tol)
            out.monotone = false;
    }
    return out;
}

struct DensityBoundsReport {
    double a = 0.0, A = 0.0;
    double t0_prescribed = 0.0; // 4 max(|log(rho_min / 2a)|, 1/A)
    double t_first = std::numeric_limits<double>::infinity(); // earliest time from which all samples stay in bounds
    bool holds_after_t0 = false;
    double min_after = std::numeric_limits<double>::infinity(), max_after = 0.0;
};

/// Checks a/2 <= rho_i(t) <= 2A on snapshots with t >= t0.
inline DensityBoundsReport check_density_bounds(const std::vector<LagrangianState>& snapshots, double a, double A)
{
    DensityBoundsReport rep;
    rep.a = a;
    rep.A = A;
    const auto& first = snapshots.front().densities;
    const double rho_min = *std::min_element(first.begin(), first.end());
    rep.t0_prescribed = 4.0 * std::max(std::abs(std::log(rho_min / (2.0 * a))), 1.0 / A);
    rep.holds_after_t0 = true;
    bool tail_inside = true;
    for (std::size_t k = snapshots.size(); k-- > 0;) {
        const auto& s = snapshots[k];
        const auto [lo, hi] = std::minmax_element(s.densities.begin(), s.densities.end());
        const bool inside = *lo >= 0.5 * a && *hi <= 2.0 * A;
        if (s.t >= rep.t0_prescribed) {
            rep.min_after = std::min(rep.min_after, *lo);
            rep.max_after = std::max(rep.max_after, *hi);
            rep.holds_after_t0 = rep.holds_after_t0 && inside;
        }
        tail_inside = tail_inside && inside;
        if (tail_inside)
            rep.t_first = s.t;
    }
    return rep;
}

} // namespace aggregation
