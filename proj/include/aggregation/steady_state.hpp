#pragma once

/**
 * @file steady_state.hpp
 * @brief Steady states rho_R = Delta V on B_R, selected by the mass equation.
 *
 * For radial data the enclosed mass M(r) fixes the Newtonian field:
 *   u(r) = M(r) / (s_d r^{d-1}) - V'(r).
 * On B_R the profile Delta V gives M(r) = s_d r^{d-1} V'(r), so u vanishes
 * there, and the radius is set by s_d R^{d-1} V'(R) = m0.
 */

#include "density.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "potential.hpp"
#include "quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace aggregation {

struct SteadyState {
    RadialDensity density;
    double R_inf = 0.0;
    double E_inf = 0.0;
    double potential_plateau = 0.0; // total potential on the support
    double m0 = 0.0;
};

/// G(R) = s_d R^{d-1} V'(R): mass of Delta V on B_R.
inline double support_mass(const RadialPotential& V, Dimension d, double R)
{
    return sphere_area(d) * std::pow(R, d.value() - 1) * V.slope(R);
}

/**
 * Root of G(R) = m0 by bisection.
 *
 * The bracket starts at [1e-8, 1] and doubles its upper end until G exceeds
 * m0 (giving up at 1e6). G is then scanned on 256 points of the bracket; any
 * sample breaking monotonicity aborts with an invalid-potential error.
 */
inline double solve_support_radius(const RadialPotential& V, Dimension d, double m0)
{
    if (!(m0 > 0.0))
        fail(ErrorKind::parameter, "solve_support_radius: m0 must be positive");
    constexpr double r_max = 1e6;
    double lo = 1e-8, hi = 1.0;
    double g_lo = support_mass(V, d, lo);
    double g_hi = support_mass(V, d, hi);
    if (!(g_hi > g_lo))
        fail(ErrorKind::invalid_potential, "s_d R^{d-1} V'(R) is not increasing near the origin");
    if (g_lo >= m0)
        fail(ErrorKind::invalid_potential, "mass equation has no root above 1e-8");
    while (g_hi <= m0) {
        const double next = 2.0 * hi;
        if (next > r_max)
            fail(ErrorKind::tail_too_weak, "no bracket for the mass equation below R = 1e6");
        const double g_next = support_mass(V, d, next);
        if (!(g_next > g_hi))
            fail(ErrorKind::invalid_potential, "s_d R^{d-1} V'(R) is not increasing");
        lo = hi;
        g_lo = g_hi;
        hi = next;
        g_hi = g_next;
    }
    double prev = support_mass(V, d, 1e-8);
    for (int k = 1; k <= 256; ++k) {
        const double g = support_mass(V, d, hi * k / 256.0);
        if (!(g > prev))
            fail(ErrorKind::invalid_potential, "s_d R^{d-1} V'(R) is not increasing on the bracket");
        prev = g;
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double g = support_mass(V, d, mid);
        if (g < g_lo || g > g_hi)
            fail(ErrorKind::invalid_potential, "s_d R^{d-1} V'(R) is not monotone inside the bracket");
        if (std::abs(g - m0) <= 1e-14 * m0 || mid == lo || mid == hi)
            return mid;
        if (g < m0) {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
            g_hi = g;
        }
    }
    return 0.5 * (lo + hi);
}

/// Radial velocity M(r)/(s_d r^{d-1}) - V'(r) of a radial density.
inline double radial_velocity(const RadialDensity& density, const RadialPotential& V, Dimension d, double r)
{
    if (!(r > 0.0))
        fail(ErrorKind::domain, "radial_velocity requires r > 0");
    return density.enclosed_mass(r) / (sphere_area(d) * std::pow(r, d.value() - 1)) - V.slope(r);
}

/// Newtonian potential of a radial density, integrated inward from m N(R) at the support edge.
class NewtonianField {
public:
    explicit NewtonianField(const RadialDensity& density) : dim_(density.dimension()), mass_(density.mass())
    {
        if (density.geometry() != Geometry::radial)
            fail(ErrorKind::unsupported, "NewtonianField needs a radial density");
        if (density.empty())
            return;
        support_ = density.support_radius();
        const auto& grid = density.grid();
        std::vector<double> g(grid.size());
        const double s = sphere_area(dim_);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double r = grid[i];
            g[i] = r > 0.0 ? density.enclosed_mass(r) / (s * std::pow(r, dim_.value() - 1)) : 0.0;
        }
        field_ = CumulativeIntegral(grid, std::move(g));
        edge_ = mass_ * newton_kernel(dim_, support_);
    }

    double operator()(double r) const
    {
        r = std::abs(r);
        if (mass_ == 0.0)
            return 0.0;
        if (r >= support_)
            return mass_ * newton_kernel(dim_, r);
        return edge_ + field_.total() - field_(r);
    }

private:
    Dimension dim_;
    double mass_ = 0.0;
    double support_ = 0.0;
    double edge_ = 0.0;
    CumulativeIntegral field_;
};

/**
 * Newtonian self-energy (1/2) iint N(x-y) rho(x) rho(y).
 *
 * Radial: (1/2) m^2 N(R) + (1/(2 s_d)) int M(s)^2 s^{1-d} ds (integration by
 * parts of (1/2) int Phi_N dM). Line: -(1/2) int M(x) (m - M(x)) dx.
 */
inline double newtonian_energy(const RadialDensity& density)
{
    if (density.empty())
        return 0.0;
    const auto& grid = density.grid();
    const double m = density.mass();
    std::vector<double> f(grid.size());
    if (density.geometry() == Geometry::line) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const double M = density.enclosed_mass(grid[i]);
            f[i] = M * (m - M);
        }
        return -0.5 * integrate_tabulated(grid, f);
    }
    const Dimension d(density.dimension());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double r = grid[i];
        const double M = density.enclosed_mass(r);
        f[i] = (r > 0.0 || d.value() == 1) ? M * M * std::pow(r, 1 - d.value()) : 0.0;
    }
    return 0.5 * m * m * newton_kernel(d, density.support_radius()) + integrate_tabulated(grid, f) / (2.0 * sphere_area(d));
}

/// int V rho with the density's measure.
inline double potential_energy(const RadialDensity& density, const RadialPotential& V)
{
    if (density.empty())
        return 0.0;
    const auto& grid = density.grid();
    std::vector<double> f(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        f[i] = V.value(grid[i]) * density.values()[i] * density.weight(grid[i]);
    return integrate_tabulated(grid, f);
}

/// Confinement energy E = (1/2) iint N rho rho + int V rho.
inline double radial_energy(const RadialDensity& density, const RadialPotential& V)
{
    return newtonian_energy(density) + potential_energy(density, V);
}

/// Delta V on [0, R] sampled on `cells` uniform cells.
inline RadialDensity steady_profile(const RadialPotential& V, Dimension d, double R, std::size_t cells)
{
    auto grid = linspace(0.0, R, cells + 1);
    std::vector<double> values(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double lap = V.laplacian(grid[i], d);
        if (!std::isfinite(lap) || lap < 0.0)
            fail(ErrorKind::invalid_potential,
                 "Laplacian of V is negative or unbounded at r = " + std::to_string(grid[i]));
        values[i] = lap;
    }
    return {d, std::move(grid), std::move(values)};
}

inline double total_potential(const RadialDensity& density, const RadialPotential& V, double r)
{
    return NewtonianField(density)(r) + V.value(r);
}

/**
 * Steady energy with a refinement gate: the energy is recomputed on a grid of
 * twice the resolution and a relative change above 1e-6 is a resolution error.
 */
inline double steady_energy(const SteadyState& state, const RadialPotential& V, Dimension d)
{
    const double coarse = radial_energy(state.density, V);
    const std::size_t cells = state.density.grid().size() - 1;
    const auto fine = steady_profile(V, d, state.R_inf, 2 * cells);
    const double refined = radial_energy(fine, V);
    if (std::abs(refined - coarse) > 1e-6 * std::max(1.0, std::abs(refined)))
        fail(ErrorKind::resolution, "steady energy not converged under grid refinement");
    return refined;
}

/// Steady state of mass m0 on `cells` uniform cells of [0, R_inf].
inline SteadyState build_steady_state(const RadialPotential& V, Dimension d, double m0, std::size_t cells = 512)
{
    if (cells < 2)
        fail(ErrorKind::parameter, "build_steady_state needs at least two cells");
    SteadyState state;
    state.m0 = m0;
    state.R_inf = solve_support_radius(V, d, m0);
    state.density = steady_profile(V, d, state.R_inf, cells);
    const double mass = state.density.mass();
    if (std::abs(mass - m0) > 1e-8 * m0)
        fail(ErrorKind::resolution, "steady profile mass " + std::to_string(mass) + " misses m0 by more than 1e-8");
    state.E_inf = steady_energy(state, V, d);
    state.potential_plateau = total_potential(state.density, V, 0.5 * state.R_inf);
    return state;
}

struct SteadyReport {
    bool passed = false;
    double max_velocity = 0.0;
    double at_radius = 0.0;
    double tolerance = 0.0;
};

/// Sup of |u| on `samples` equispaced radii of (0, R_inf].
inline SteadyReport verify_steady(const SteadyState& state, const RadialPotential& V, Dimension d, double tol,
                                  std::size_t samples = 2048)
{
    SteadyReport rep;
    rep.tolerance = tol;
    for (std::size_t k = 1; k <= samples; ++k) {
        const double r = state.R_inf * static_cast<double>(k) / static_cast<double>(samples);
        const double u = std::abs(radial_velocity(state.density, V, d, r));
        if (u > rep.max_velocity) {
            rep.max_velocity = u;
            rep.at_radius = r;
        }
    }
    rep.passed = rep.max_velocity <= tol;
    return rep;
}

} // namespace aggregation
