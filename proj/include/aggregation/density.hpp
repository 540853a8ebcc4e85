#pragma once

/**
 * @file density.hpp
 * @brief Piecewise-linear density profiles with cumulative mass.
 *
 * A profile lives on [grid.front(), grid.back()] and vanishes outside. In
 * radial geometry the measure is |S^{d-1}| r^{d-1} dr (for d = 1 this is the
 * even extension to the line, weight 2); in line geometry it is dx on R.
 */

#include "errors.hpp"
#include "geometry.hpp"
#include "quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace aggregation {

enum class Geometry { radial, line };

class RadialDensity {
public:
    RadialDensity() = default;

    RadialDensity(Dimension d, std::vector<double> grid, std::vector<double> values,
                  Geometry geometry = Geometry::radial)
        : dim_(d), geometry_(geometry), grid_(std::move(grid)), values_(std::move(values))
    {
        if (grid_.size() != values_.size())
            fail(ErrorKind::parameter, "RadialDensity: grid and values differ in size");
        if (geometry_ == Geometry::line && d.value() != 1)
            fail(ErrorKind::parameter, "RadialDensity: line geometry requires d = 1");
        for (std::size_t i = 0; i < grid_.size(); ++i) {
            if (!(values_[i] >= 0.0) || !std::isfinite(values_[i]))
                fail(ErrorKind::domain, "RadialDensity: values must be finite and non-negative");
            if (i > 0 && !(grid_[i] > grid_[i - 1]))
                fail(ErrorKind::parameter, "RadialDensity: grid must be strictly increasing");
        }
        if (geometry_ == Geometry::radial && !grid_.empty() && grid_.front() < 0.0)
            fail(ErrorKind::parameter, "RadialDensity: radial grid must be non-negative");
        if (grid_.size() == 1)
            fail(ErrorKind::parameter, "RadialDensity: a non-empty profile needs at least two nodes");
        if (!grid_.empty()) {
            cumulative_.assign(grid_.size(), 0.0);
            for (std::size_t i = 0; i + 1 < grid_.size(); ++i)
                cumulative_[i + 1] = cumulative_[i] + partial_mass(i, grid_[i + 1]);
        }
    }

    int dimension() const noexcept { return dim_.value(); }
    Geometry geometry() const noexcept { return geometry_; }
    const std::vector<double>& grid() const noexcept { return grid_; }
    const std::vector<double>& values() const noexcept { return values_; }
    bool empty() const noexcept { return grid_.empty(); }

    double inner_radius() const noexcept { return grid_.empty() ? 0.0 : grid_.front(); }
    double support_radius() const noexcept { return grid_.empty() ? 0.0 : grid_.back(); }

    /// Measure density: |S^{d-1}| r^{d-1} (radial) or 1 (line).
    double weight(double r) const
    {
        if (geometry_ == Geometry::line)
            return 1.0;
        return sphere_area(dim_) * std::pow(std::abs(r), dim_.value() - 1);
    }

    double value(double r) const
    {
        if (geometry_ == Geometry::radial)
            r = std::abs(r);
        if (grid_.empty() || r < grid_.front() || r > grid_.back())
            return 0.0;
        const auto it = std::upper_bound(grid_.begin(), grid_.end(), r);
        if (it == grid_.end())
            return values_.back();
        const std::size_t i = static_cast<std::size_t>(it - grid_.begin()) - 1;
        const double t = (r - grid_[i]) / (grid_[i + 1] - grid_[i]);
        return values_[i] + t * (values_[i + 1] - values_[i]);
    }

    /// Mass inside B_r (radial) or in (-inf, r] (line).
    double enclosed_mass(double r) const
    {
        if (grid_.empty() || r <= grid_.front())
            return 0.0;
        if (r >= grid_.back())
            return cumulative_.back();
        const auto it = std::upper_bound(grid_.begin(), grid_.end(), r);
        const std::size_t i = static_cast<std::size_t>(it - grid_.begin()) - 1;
        return cumulative_[i] + partial_mass(i, r);
    }

    double mass() const { return grid_.empty() ? 0.0 : cumulative_.back(); }

    /// Same profile multiplied by a constant factor.
    RadialDensity scaled(double factor) const
    {
        auto v = values_;
        for (auto& x : v)
            x *= factor;
        return {dim_, grid_, std::move(v), geometry_};
    }

private:
    // Mass over [grid_[i], t]: the density is the quadratic through the panel
    // owning interval i (pairs [2k, 2k+2], the last odd interval borrows
    // [n-2, n]) and the weight s^{d-1} is integrated exactly, so polynomial
    // profiles of degree <= 2 carry no quadrature error near the origin.
    double partial_mass(std::size_t i, double t) const
    {
        const std::size_t n = grid_.size() - 1;
        const int k_max = geometry_ == Geometry::line ? 0 : dim_.value() - 1;
        const double scale = geometry_ == Geometry::line ? 1.0 : sphere_area(dim_);
        double c = grid_[i], f = values_[i], B = 0.0, C = 0.0;
        if (n == 1) {
            B = (values_[1] - values_[0]) / (grid_[1] - grid_[0]);
        } else {
            std::size_t p = i - (i % 2);
            if (p + 2 > n)
                p = n - 2;
            const double x0 = grid_[p], x1 = grid_[p + 1], x2 = grid_[p + 2];
            const double f0 = values_[p], f1 = values_[p + 1], f2 = values_[p + 2];
            const double d01 = (f1 - f0) / (x1 - x0), d12 = (f2 - f1) / (x2 - x1);
            C = (d12 - d01) / (x2 - x0);
            // re-centre the Newton form at c = grid_[i]
            B = d01 + C * (2.0 * c - x0 - x1);
            f = f0 + d01 * (c - x0) + C * (c - x0) * (c - x1);
        }
        // int_0^u (f + B v + C v^2) (c + v)^{k_max} dv, expanded binomially in v
        const double u = t - c;
        double total = 0.0, binom = 1.0, cpow = std::pow(c, k_max), upow = u;
        for (int k = 0; k <= k_max; ++k) {
            const double inner = f / (k + 1) + B * u / (k + 2) + C * u * u / (k + 3);
            total += binom * cpow * upow * inner;
            binom = binom * (k_max - k) / (k + 1);
            cpow = c != 0.0 ? cpow / c : (k + 1 == k_max ? 1.0 : 0.0);
            upow *= u;
        }
        return scale * total;
    }

    Dimension dim_{3};
    Geometry geometry_ = Geometry::radial;
    std::vector<double> grid_, values_;
    std::vector<double> cumulative_;
};

/// Samples f on `cells` uniform cells of [r_in, r_out].
inline RadialDensity density_from_profile(Dimension d, const std::function<double(double)>& f, double r_in,
                                          double r_out, std::size_t cells, Geometry geometry = Geometry::radial)
{
    if (!(r_out > r_in) || cells < 1)
        fail(ErrorKind::parameter, "density_from_profile: need r_out > r_in and at least one cell");
    auto grid = linspace(r_in, r_out, cells + 1);
    std::vector<double> values(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        values[i] = f(grid[i]);
    return {d, std::move(grid), std::move(values), geometry};
}

/// Constant density on the shell r_in <= r <= r_out (a ball when r_in = 0) with total mass m0.
inline RadialDensity uniform_shell(Dimension d, double r_in, double r_out, double m0, std::size_t cells = 512)
{
    const double volume = ball_volume(d) * (std::pow(r_out, d.value()) - std::pow(r_in, d.value()));
    const double level = m0 / volume;
    return density_from_profile(d, [level](double) { return level; }, r_in, r_out, cells);
}

/// Constant density on the interval [a, b] of the line with total mass m0.
inline RadialDensity uniform_interval(double a, double b, double m0, std::size_t cells = 512)
{
    const double level = m0 / (b - a);
    return density_from_profile(Dimension(1), [level](double) { return level; }, a, b, cells, Geometry::line);
}

/**
 * L1 distance with the natural measure of the common geometry.
 *
 * Breakpoints are the union of both grids, so support edges and jumps sit on
 * segment ends; each segment uses 6-point Gauss-Legendre, which never samples
 * an endpoint.
 */
inline double l1_distance(const RadialDensity& a, const RadialDensity& b)
{
    if (a.empty() && b.empty())
        return 0.0;
    if (!a.empty() && !b.empty()
        && (a.geometry() != b.geometry() || a.dimension() != b.dimension()))
        fail(ErrorKind::parameter, "l1_distance: densities differ in geometry or dimension");
    std::vector<double> pts;
    pts.reserve(a.grid().size() + b.grid().size());
    pts.insert(pts.end(), a.grid().begin(), a.grid().end());
    pts.insert(pts.end(), b.grid().begin(), b.grid().end());
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const RadialDensity& ref = a.empty() ? b : a;
    static const GaussLegendre gl(6);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        total += gl.integrate(
            [&](double r) { return std::abs(a.value(r) - b.value(r)) * ref.weight(r); }, pts[i], pts[i + 1]);
    }
    return total;
}

} // namespace aggregation
