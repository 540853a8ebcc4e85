#pragma once

// Self-consistent steady states for Newtonian repulsion plus a near-quadratic
// attraction W = |x|^2/(2d) + w. The state solves rho = Delta(W * rho) on its
// support, where the support radius carries the prescribed mass.

#include "density.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "potential.hpp"
#include "quadrature.hpp"
#include "steady_state.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace aggregation {

namespace detail {

// Nodes cos(theta_k) and weights w_k sin^{d-2}(theta_k) |S^{d-2}| on [0, pi].
struct SphericalRule {
    std::vector<double> cosines, weights;

    SphericalRule(int d, int order)
    {
        const GaussLegendre gl(order);
        const double half = 0.5 * std::numbers::pi;
        const double shell = sphere_area(d - 1);
        for (std::size_t k = 0; k < gl.nodes.size(); ++k) {
            const double theta = half * (gl.nodes[k] + 1.0);
            cosines.push_back(std::cos(theta));
            weights.push_back(half * gl.weights[k] * std::pow(std::sin(theta), d - 2) * shell);
        }
    }
};

// Integral over |y| = s of g(|x - y|, x.(x - y)/|x|) per unit s^{d-1}, with |x| = r.
template <class G>
double sphere_integral(const SphericalRule& rule, double r, double s, G&& g)
{
    double total = 0.0;
    for (std::size_t k = 0; k < rule.cosines.size(); ++k) {
        const double c = rule.cosines[k];
        const double z = std::sqrt(std::max(0.0, r * r + s * s - 2.0 * r * s * c));
        total += rule.weights[k] * g(z, r - s * c);
    }
    return total;
}

// int rho(s) s^{d-1} h(s) ds on the density grid (Simpson panels); h(s) is the
// angular integral. d = 1 radial profiles contribute both mirror points.
template <class H>
double radial_integral(const RadialDensity& rho, H&& h)
{
    const auto& grid = rho.grid();
    std::vector<double> f(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double s = grid[i];
        const double weight = rho.geometry() == Geometry::line ? 1.0 : std::pow(s, rho.dimension() - 1);
        f[i] = rho.values()[i] * weight * h(s);
    }
    return integrate_tabulated(grid, f);
}

} // namespace detail

/**
 * (f * rho)(r) for a radial kernel f(|x|) and a radial (or line) density:
 * Gauss-Legendre in the polar angle, Simpson panels in the radius.
 */
inline double spherical_mean_convolve(const ScalarFn& f, const RadialDensity& rho, double r, int theta_order = 64)
{
    if (rho.empty())
        return 0.0;
    const int d = rho.dimension();
    if (rho.geometry() == Geometry::line)
        return detail::radial_integral(rho, [&](double s) { return f(std::abs(r - s)); });
    if (d == 1)
        return detail::radial_integral(rho, [&](double s) { return f(std::abs(r - s)) + f(r + s); });
    const detail::SphericalRule rule(d, theta_order);
    return detail::radial_integral(rho, [&](double s) {
        return detail::sphere_integral(rule, r, s, [&](double z, double) { return f(z); });
    });
}

/// Radial component of (grad f * rho)(r), from the kernel slope f'.
inline double spherical_mean_gradient(const ScalarFn& slope, const RadialDensity& rho, double r, int theta_order = 64)
{
    if (rho.empty() || r == 0.0)
        return 0.0;
    const int d = rho.dimension();
    auto sgn = [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); };
    if (rho.geometry() == Geometry::line)
        return detail::radial_integral(rho, [&](double s) { return slope(std::abs(r - s)) * sgn(r - s); });
    if (d == 1)
        return detail::radial_integral(
            rho, [&](double s) { return slope(std::abs(r - s)) * sgn(r - s) + slope(r + s); });
    const detail::SphericalRule rule(d, theta_order);
    return detail::radial_integral(rho, [&](double s) {
        return detail::sphere_integral(rule, r, s, [&](double z, double proj) {
            return z > 0.0 ? slope(z) * proj / z : 0.0;
        });
    });
}

/**
 * Refinement gate: recomputes with halved radial cells and doubled angular
 * order and raises a resolution error when the relative change exceeds `rel`.
 */
inline double checked_convolve(const ScalarFn& f, const RadialDensity& rho, double r, double rel = 1e-6,
                               double scale = 0.0)
{
    const double coarse = spherical_mean_convolve(f, rho, r, 64);
    const auto& grid = rho.grid();
    std::vector<double> fine_grid, fine_values;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (i > 0) {
            const double mid = 0.5 * (grid[i - 1] + grid[i]);
            fine_grid.push_back(mid);
            fine_values.push_back(rho.value(mid));
        }
        fine_grid.push_back(grid[i]);
        fine_values.push_back(rho.values()[i]);
    }
    const RadialDensity fine(rho.dimension(), std::move(fine_grid), std::move(fine_values), rho.geometry());
    const double refined = spherical_mean_convolve(f, fine, r, 128);
    if (std::abs(refined - coarse) > rel * std::max({std::abs(refined), scale, 1e-300}))
        fail(ErrorKind::resolution, "convolution at r = " + std::to_string(r) + " not converged under refinement");
    return coarse;
}

/**
 * W * rho for a centred radial density. The quadratic part of W is exact:
 * value m0 r^2/(2d) + (int |y|^2 rho)/(2d), slope m0 r / d, Laplacian m0;
 * only the perturbation goes through quadrature.
 */
inline RadialPotential effective_potential(const AttractionPotential& W, const RadialDensity& rho)
{
    const int d = rho.dimension();
    const double m0 = rho.mass();
    const double second_moment = detail::radial_integral(rho, [](double s) { return s * s; })
                                 * (rho.geometry() == Geometry::line ? 1.0 : sphere_area(d));
    const auto w = W.perturbation;
    const ScalarFn lap_w = [w, d](double r) { return w.laplacian(r, d); };
    RadialPotential V;
    V.name = "W*rho";
    V.value = [=](double r) {
        return m0 * r * r / (2.0 * d) + second_moment / (2.0 * d) + spherical_mean_convolve(w.value, rho, r);
    };
    V.slope = [=](double r) { return m0 * r / d + spherical_mean_gradient(w.slope, rho, r); };
    V.curvature = [=](double r) {
        const double lap = m0 + spherical_mean_convolve(lap_w, rho, r);
        if (d == 1)
            return lap;
        if (r == 0.0)
            return lap / d;
        return lap - (d - 1) * (m0 / d + spherical_mean_gradient(w.slope, rho, r) / r);
    };
    V.smoothness_order = w.smoothness_order;
    V.r_scale = rho.support_radius();
    return V;
}

/// Delta(W * rho) tabulated on a fixed radial grid.
struct SelfConsistentField {
    std::vector<double> grid;
    std::vector<double> laplacian;
    int iteration = 0;
    double residual = 0.0;
    double lower = 0.0, upper = 0.0; // m0 (1 -+ eps)

    bool within_bounds(double slack = 1e-12) const
    {
        for (double v : laplacian)
            if (v < lower - slack * upper || v > upper + slack * upper)
                return false;
        return true;
    }
};

struct SmallnessReport {
    double epsilon = 0.0;
    double lhs1 = 0.0, rhs1 = 0.0, lhs2 = 0.0, rhs2 = 0.0;
    bool pass1 = false, pass2 = false;
    double critical_epsilon = 0.0;

    bool passed() const { return pass1 && pass2; }
};

/**
 * The two smallness conditions of the uniqueness argument, with the
 * repulsion constant c_d = 2^{1-d}/|S^{d-1}| of lemma1_bound. Defaults use
 * |supp| <= 1/(1-eps) and R <= c'/(1-eps)^{1/d}, c' = omega_d^{-1/d}.
 */
inline SmallnessReport check_smallness(double epsilon, Dimension d, std::optional<double> supp_measure = {},
                                       std::optional<double> R_inf = {}, std::optional<double> radius_constant = {})
{
    const int dd = d.value();
    const double c = lemma1_bound(d, 1.0);
    const double c_prime = radius_constant.value_or(std::pow(ball_volume(d), -1.0 / dd));
    auto evaluate = [&](double eps, bool use_given) {
        SmallnessReport r;
        r.epsilon = eps;
        const double supp = use_given && supp_measure ? *supp_measure : 1.0 / (1.0 - eps);
        const double R = use_given && R_inf ? *R_inf : c_prime / std::pow(1.0 - eps, 1.0 / dd);
        const double denom = 1.0 - supp * 2.0 * eps;
        const double bracket = denom > 0.0 ? (1.0 + 4.0 * eps * supp) / denom + 2.0
                                           : std::numeric_limits<double>::infinity();
        r.lhs1 = 2.0 * eps * (1.0 + eps) / (1.0 - eps) / dd * bracket;
        r.lhs2 = 2.0 * eps * (1.0 + eps) / ((1.0 - eps) * (1.0 - eps)) / dd * bracket;
        r.rhs1 = c / std::pow(2.0 * R, dd);
        r.rhs2 = c * (std::pow(2.0, dd) - 1.0) / std::pow(2.0, dd);
        r.pass1 = eps >= 0.0 && eps < 1.0 && r.lhs1 < r.rhs1;
        r.pass2 = eps >= 0.0 && eps < 1.0 && r.lhs2 < r.rhs2;
        return r;
    };
    auto report = evaluate(epsilon, true);
    double lo = 0.0, hi = 0.5;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (evaluate(mid, false).passed() ? lo : hi) = mid;
    }
    report.critical_epsilon = lo;
    return report;
}

struct AttractionSolveConfig {
    double tol = 1e-10;      // stop when sup |Delta V^{k+1} - Delta V^k| <= tol m0
    int max_iter = 100;
    std::size_t cells = 256; // tabulation uses 2 * cells cells on [0, 1.5 R_0]
    double lambda = 1.0;
    bool override_smallness = false;
};

struct IterationRecord {
    int k = 0;
    double residual = 0.0;
    double radius = 0.0;
};

struct AttractionSteadyState {
    SteadyState state;
    RadialPotential V_eff;
    SelfConsistentField field;
    std::vector<IterationRecord> history;
    SmallnessReport smallness;
    SteadyReport velocity;
    double lambda = 1.0;
};

inline void write_history_csv(std::ostream& os, const std::vector<IterationRecord>& history)
{
    const auto old = os.precision(17);
    os << "k,residual,R\n";
    for (const auto& h : history)
        os << h.k << ',' << h.residual << ',' << h.radius << '\n';
    os.precision(old);
}

namespace detail {

// Profile lap on grid, cut at R (quadratic interpolation for the edge value).
inline RadialDensity truncate_profile(Dimension d, const std::vector<double>& grid, const std::vector<double>& lap,
                                      double R)
{
    std::vector<double> g, v;
    for (std::size_t i = 0; i < grid.size() && grid[i] < R * (1 - 1e-9); ++i) {
        g.push_back(grid[i]);
        v.push_back(lap[i]);
    }
    auto it = std::upper_bound(grid.begin(), grid.end(), R);
    std::size_t j = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - grid.begin()));
    j = std::min(j, grid.size() - 2);
    const double x0 = grid[j - 1], x1 = grid[j], x2 = grid[j + 1];
    const double edge = lap[j - 1] * (R - x1) * (R - x2) / ((x0 - x1) * (x0 - x2))
                        + lap[j] * (R - x0) * (R - x2) / ((x1 - x0) * (x1 - x2))
                        + lap[j + 1] * (R - x0) * (R - x1) / ((x2 - x0) * (x2 - x1));
    g.push_back(R);
    v.push_back(std::max(edge, 0.0));
    return {d, std::move(g), std::move(v)};
}

} // namespace detail

/**
 * Fixed-point iteration rho^{k+1} = Delta(W * rho^k) on B_{R^k}, starting
 * from the w = 0 state (rho = m0 on the ball of unit volume). Delta(W * rho)
 * is tabulated on a fixed grid over [0, 1.5 R_0]; R^k is the radius at which
 * the truncated profile carries m0. Damping drops to 1/2 once the residual
 * grows.
 */
inline AttractionSteadyState solve_attraction_steady(const AttractionPotential& W, Dimension d, double m0,
                                                     const AttractionSolveConfig& config = {})
{
    if (!(m0 > 0.0) || !(config.tol > 0.0) || config.max_iter < 1 || config.cells < 4)
        fail(ErrorKind::parameter, "solve_attraction_steady: invalid parameters");
    if (W.dim != d.value())
        fail(ErrorKind::parameter, "attraction potential built for a different dimension");
    const int dd = d.value();
    AttractionSteadyState out;
    out.smallness = check_smallness(W.epsilon, d);
    if (!out.smallness.passed()) {
        if (!config.override_smallness)
            fail(ErrorKind::parameter, "smallness conditions fail for eps = " + std::to_string(W.epsilon)
                                           + " (critical eps " + std::to_string(out.smallness.critical_epsilon) + ")");
        warn(ErrorKind::parameter, "smallness conditions fail for eps = " + std::to_string(W.epsilon)
                                       + "; continuing by override");
    }

    const double R0 = std::pow(ball_volume(d), -1.0 / dd);
    auto& field = out.field;
    field.grid = linspace(0.0, 1.5 * R0, 2 * config.cells + 1);
    field.laplacian.assign(field.grid.size(), m0);
    field.lower = m0 * (1.0 - W.epsilon);
    field.upper = m0 * (1.0 + W.epsilon);
    RadialDensity rho = density_from_profile(d, [m0](double) { return m0; }, 0.0, R0, config.cells);

    const auto w = W.perturbation;
    const ScalarFn lap_w = [w, dd](double r) { return w.laplacian(r, dd); };
    double lambda = config.lambda;
    double R = R0;
    bool converged = false;
    for (int k = 1; k <= config.max_iter; ++k) {
        double residual = 0.0;
        std::vector<double> next(field.grid.size());
        for (std::size_t i = 0; i < field.grid.size(); ++i) {
            const double fresh = m0 + spherical_mean_convolve(lap_w, rho, field.grid[i]);
            residual = std::max(residual, std::abs(fresh - field.laplacian[i]));
            next[i] = (1.0 - lambda) * field.laplacian[i] + lambda * fresh;
            if (!(next[i] >= 0.0))
                fail(ErrorKind::invalid_potential, "Delta(W * rho) became negative during the iteration");
        }
        // refinement gate at the centre and the current edge
        checked_convolve(lap_w, rho, 0.0, 1e-6, m0);
        checked_convolve(lap_w, rho, R, 1e-6, m0);
        field.laplacian = std::move(next);
        field.iteration = k;
        field.residual = residual;

        const RadialDensity full(d, field.grid, field.laplacian);
        if (full.mass() < m0)
            fail(ErrorKind::resolution, "support radius left the tabulation range [0, 1.5 R_0]");
        double lo = field.grid[2], hi = field.grid.back();
        for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            (detail::truncate_profile(d, field.grid, field.laplacian, mid).mass() < m0 ? lo : hi) = mid;
        }
        R = 0.5 * (lo + hi);
        rho = detail::truncate_profile(d, field.grid, field.laplacian, R);
        out.history.push_back({k, residual, R});

        if (residual <= config.tol * m0) {
            converged = true;
            break;
        }
        const auto n = out.history.size();
        if (lambda == 1.0 && n >= 3 && out.history[n - 1].residual > out.history[n - 2].residual) {
            lambda = 0.5;
            warn(ErrorKind::contraction_failure, "fixed-point residual grew; damping with lambda = 0.5");
        }
    }
    out.lambda = lambda;
    if (!converged) {
        std::ostringstream msg;
        msg << "fixed point did not converge in " << config.max_iter << " iterations; residuals:";
        for (const auto& h : out.history)
            msg << ' ' << h.residual;
        fail(ErrorKind::contraction_failure, msg.str());
    }

    out.V_eff = effective_potential(W, rho);
    auto& state = out.state;
    state.m0 = m0;
    state.R_inf = R;
    state.density = rho;
    const auto& grid = rho.grid();
    std::vector<double> f(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        f[i] = out.V_eff.value(grid[i]) * rho.values()[i] * rho.weight(grid[i]);
    state.E_inf = newtonian_energy(rho) + 0.5 * integrate_tabulated(grid, f);
    state.potential_plateau = NewtonianField(rho)(0.5 * R) + out.V_eff.value(0.5 * R);
    out.velocity = verify_steady(state, out.V_eff, d, 1e-6 * m0 * R, 1024);
    return out;
}

} // namespace aggregation
