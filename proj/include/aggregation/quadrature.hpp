#pragma once

#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace aggregation {

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
    std::vector<double> nodes;
    std::vector<double> weights;

    explicit GaussLegendre(int n)
    {
        if (n < 1)
            fail(ErrorKind::parameter, "Gauss-Legendre order must be positive");
        nodes.resize(n);
        weights.resize(n);
        for (int i = 0; i < (n + 1) / 2; ++i) {
            double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= n; ++k) {
                    const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16)
                    break;
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }

    /// Integrate f over [a, b].
    template <class F>
    double integrate(F&& f, double a, double b) const
    {
        const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
        double s = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k)
            s += weights[k] * f(mid + half * nodes[k]);
        return s * half;
    }
};

namespace detail {

// Integral over [x0, t] of the quadratic through (x0,f0), (x1,f1), (x2,f2).
inline double quadratic_partial(double x0, double x1, double x2, double f0, double f1, double f2, double t)
{
    const double a = x0 - x1, c = x2 - x1;
    const double da = (f0 - f1) / a, dc = (f2 - f1) / c;
    const double C = (dc - da) / (c - a);
    const double B = da - C * a;
    auto prim = [&](double s) { return f1 * s + 0.5 * B * s * s + C * s * s * s / 3.0; };
    return prim(t - x1) - prim(a);
}

} // namespace detail

/**
 * Running integral of tabulated data on an increasing, possibly non-uniform grid.
 *
 * Consecutive node pairs are integrated with the interpolating quadratic
 * (composite Simpson on uniform grids); an odd trailing interval reuses the
 * last three nodes. Evaluation between nodes integrates the same quadratic.
 */
class CumulativeIntegral {
public:
    CumulativeIntegral() = default;

    CumulativeIntegral(std::vector<double> x, std::vector<double> f) : x_(std::move(x)), f_(std::move(f))
    {
        if (x_.size() != f_.size() || x_.empty())
            fail(ErrorKind::parameter, "CumulativeIntegral: grid/value size mismatch");
        for (std::size_t i = 1; i < x_.size(); ++i)
            if (!(x_[i] > x_[i - 1]))
                fail(ErrorKind::parameter, "CumulativeIntegral: grid must be strictly increasing");
        cum_.assign(x_.size(), 0.0);
        const std::size_t n = x_.size() - 1;
        if (n == 0)
            return;
        if (n == 1) {
            cum_[1] = 0.5 * (f_[0] + f_[1]) * (x_[1] - x_[0]);
            return;
        }
        for (std::size_t i = 0; i < n; ++i)
            cum_[i + 1] = cum_[i] + interval_partial(i, x_[i + 1]);
    }

    const std::vector<double>& grid() const noexcept { return x_; }
    const std::vector<double>& node_values() const noexcept { return cum_; }
    double total() const noexcept { return cum_.empty() ? 0.0 : cum_.back(); }

    /// Integral from grid.front() to t, clamped to the grid range.
    double operator()(double t) const
    {
        if (t <= x_.front())
            return 0.0;
        if (t >= x_.back())
            return total();
        const std::size_t n = x_.size() - 1;
        const auto it = std::upper_bound(x_.begin(), x_.end(), t);
        const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
        if (n == 1)
            return linear_partial(0, t);
        return cum_[i] + interval_partial(i, t);
    }

private:
    // Panels are node pairs [2k, 2k+2]; when the interval count is odd the last
    // interval borrows the panel [n-2, n].
    std::size_t panel_start(std::size_t interval) const
    {
        const std::size_t n = x_.size() - 1;
        std::size_t p = interval - (interval % 2);
        if (p + 2 > n)
            p = n - 2;
        return p;
    }

    // Integral over [x_i, t] of the quadratic on the panel owning interval i.
    double interval_partial(std::size_t i, double t) const
    {
        const std::size_t p = panel_start(i);
        auto q = [&](double u) {
            return detail::quadratic_partial(x_[p], x_[p + 1], x_[p + 2], f_[p], f_[p + 1], f_[p + 2], u);
        };
        return q(t) - q(x_[i]);
    }

    double linear_partial(std::size_t i, double t) const
    {
        const double s = (t - x_[i]) / (x_[i + 1] - x_[i]);
        const double ft = f_[i] + s * (f_[i + 1] - f_[i]);
        return cum_[i] + 0.5 * (f_[i] + ft) * (t - x_[i]);
    }

    std::vector<double> x_, f_, cum_;
};

/// Composite rule of CumulativeIntegral applied once.
inline double integrate_tabulated(std::span<const double> x, std::span<const double> f)
{
    return CumulativeIntegral({x.begin(), x.end()}, {f.begin(), f.end()}).total();
}

inline std::vector<double> linspace(double a, double b, std::size_t n)
{
    std::vector<double> out(n);
    if (n == 1) {
        out[0] = a;
        return out;
    }
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    out.back() = b;
    return out;
}

inline std::vector<double> logspace(double a, double b, std::size_t n)
{
    auto out = linspace(std::log(a), std::log(b), n);
    for (auto& v : out)
        v = std::exp(v);
    out.front() = a;
    out.back() = b;
    return out;
}

} // namespace aggregation
