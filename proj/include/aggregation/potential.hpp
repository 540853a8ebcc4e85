#pragma once

/**
 * @file potential.hpp
 * @brief Radial potentials V(r) with slope and Laplacian, plus validity checks.
 *
 * Closures take a signed argument so that the same object serves as an even
 * potential on the real line (d = 1) and as a radial profile for d >= 2:
 * values are even and slopes are odd in the argument.
 */

#include "errors.hpp"
#include "geometry.hpp"
#include "quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace aggregation {

using ScalarFn = std::function<double(double)>;

struct RadialPotential {
    std::string name;
    ScalarFn value;
    ScalarFn slope;
    ScalarFn curvature; // V''; finite differences of slope when empty
    int smoothness_order = 3;
    double r_scale = 1.0;

    double second_derivative(double r) const
    {
        if (curvature)
            return curvature(r);
        // 5-point central stencil on the slope
        const double h = 1e-4 * std::max(1.0, r_scale);
        return (-slope(r + 2 * h) + 8 * slope(r + h) - 8 * slope(r - h) + slope(r - 2 * h)) / (12 * h);
    }

    /// Delta V = V'' + (d-1) V'/r, with the limit d V''(0) at the origin.
    double laplacian(double r, int d) const
    {
        if (d == 1)
            return second_derivative(r);
        r = std::abs(r);
        if (r == 0.0)
            return d * second_derivative(0.0);
        return second_derivative(r) + (d - 1) * slope(r) / r;
    }
};

namespace potentials {

inline double sign(double x) { return x < 0 ? -1.0 : 1.0; }

inline RadialPotential quadratic(double k = 1.0)
{
    return {"quadratic", [k](double x) { return 0.5 * k * x * x; }, [k](double x) { return k * x; },
            [k](double) { return k; }, 99, 1.0};
}

inline RadialPotential quartic(double k = 1.0)
{
    return {"quartic", [k](double x) { return 0.25 * k * x * x * x * x; }, [k](double x) { return k * x * x * x; },
            [k](double x) { return 3 * k * x * x; }, 99, 1.0};
}

/// log(1 + r); Pareto tail holds for d >= 3 only.
inline RadialPotential log_tail()
{
    return {"log-tail", [](double x) { return std::log1p(std::abs(x)); },
            [](double x) { return sign(x) / (1 + std::abs(x)); },
            [](double x) { return -1.0 / ((1 + std::abs(x)) * (1 + std::abs(x))); }, 1, 1.0};
}

/// (x^2 - 1)^2 / 4, non-convex with wells at x = +-1.
inline RadialPotential double_well()
{
    return {"double-well", [](double x) { return 0.25 * (x * x - 1) * (x * x - 1); },
            [](double x) { return x * x * x - x; }, [](double x) { return 3 * x * x - 1; }, 99, 1.0};
}

/// k r^2/2 + c (sqrt(1 + r^2) - 1): Laplacian bounded between d k and d k + d c.
inline RadialPotential soft_quadratic(double k = 1.0, double c = 1.0)
{
    return {"soft-quadratic", [k, c](double x) { return 0.5 * k * x * x + c * (std::sqrt(1 + x * x) - 1); },
            [k, c](double x) { return k * x + c * x / std::sqrt(1 + x * x); },
            [k, c](double x) { return k + c / std::pow(1 + x * x, 1.5); }, 99, 1.0};
}

/// V'(r) = c r^p.
inline RadialPotential power_slope(double c, double p)
{
    ScalarFn value;
    if (p == -1.0)
        value = [c](double x) { return c * std::log(std::abs(x)); };
    else
        value = [c, p](double x) { return c * std::pow(std::abs(x), p + 1) / (p + 1); };
    return {"power-slope", value, [c, p](double x) { return c * sign(x) * std::pow(std::abs(x), p); },
            [c, p](double x) { return c * p * std::pow(std::abs(x), p - 1); }, 0, 1.0};
}

inline RadialPotential constant(double c = 0.0)
{
    return {"constant", [c](double) { return c; }, [](double) { return 0.0; }, [](double) { return 0.0; }, 99, 1.0};
}

/// a r^2 exp(-r^2). Its Laplacian peaks in magnitude at the origin with value 2 d a.
inline RadialPotential gaussian_bump(double a)
{
    return {"gaussian-bump", [a](double x) { return a * x * x * std::exp(-x * x); },
            [a](double x) { return a * (2 * x - 2 * x * x * x) * std::exp(-x * x); },
            [a](double x) {
                const double x2 = x * x;
                return a * (2 - 10 * x2 + 4 * x2 * x2) * std::exp(-x2);
            },
            99, 1.0};
}

/**
 * Tabulated potential from rows (r, V, V', V'') with r >= 0 increasing.
 *
 * V and V' use cubic Hermite interpolation (V' and V'' as derivative data),
 * V'' is linear. Beyond the last row a second-order Taylor expansion is used.
 */
inline RadialPotential table(std::vector<double> r, std::vector<double> v, std::vector<double> dv,
                             std::vector<double> d2v)
{
    const std::size_t n = r.size();
    if (n < 2 || v.size() != n || dv.size() != n || d2v.size() != n)
        fail(ErrorKind::config, "potential table needs at least two complete rows");
    for (std::size_t i = 1; i < n; ++i)
        if (!(r[i] > r[i - 1]))
            fail(ErrorKind::config, "potential table radii must be strictly increasing");
    if (r.front() < 0.0)
        fail(ErrorKind::config, "potential table radii must be non-negative");

    struct Table {
        std::vector<double> r, v, dv, d2v;

        // returns (segment, local coordinate t in [0,1], width); segment == n-1 means beyond the end
        std::tuple<std::size_t, double, double> locate(double x) const
        {
            if (x >= r.back())
                return {r.size() - 1, x - r.back(), 0.0};
            x = std::max(x, r.front());
            const auto it = std::upper_bound(r.begin(), r.end(), x);
            const std::size_t i = static_cast<std::size_t>(it - r.begin()) - 1;
            const double h = r[i + 1] - r[i];
            return {i, (x - r[i]) / h, h};
        }

        static double hermite(double t, double h, double p0, double p1, double m0, double m1)
        {
            const double t2 = t * t, t3 = t2 * t;
            return (2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + t) * h * m0 + (-2 * t3 + 3 * t2) * p1
                + (t3 - t2) * h * m1;
        }

        double value(double x) const
        {
            auto [i, t, h] = locate(std::abs(x));
            if (h == 0.0)
                return v.back() + dv.back() * t + 0.5 * d2v.back() * t * t;
            return hermite(t, h, v[i], v[i + 1], dv[i], dv[i + 1]);
        }
        double slope(double x) const
        {
            auto [i, t, h] = locate(std::abs(x));
            double s;
            if (h == 0.0)
                s = dv.back() + d2v.back() * t;
            else
                s = hermite(t, h, dv[i], dv[i + 1], d2v[i], d2v[i + 1]);
            return x < 0 ? -s : s;
        }
        double curvature(double x) const
        {
            auto [i, t, h] = locate(std::abs(x));
            if (h == 0.0)
                return d2v.back();
            return d2v[i] + t * (d2v[i + 1] - d2v[i]);
        }
    };
    auto tab = std::make_shared<Table>(Table{std::move(r), std::move(v), std::move(dv), std::move(d2v)});
    const double scale = tab->r.back();
    return {"table", [tab](double x) { return tab->value(x); }, [tab](double x) { return tab->slope(x); },
            [tab](double x) { return tab->curvature(x); }, 2, scale};
}

/// Reads a CSV with columns r,V,dV,d2V. A non-numeric first line is treated as a header.
inline RadialPotential table_from_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorKind::io, "cannot open potential table '" + path + "'");
    std::vector<double> r, v, dv, d2v;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        double a, b, c, e;
        if (!(row >> a >> b >> c >> e)) {
            if (first) {
                first = false;
                continue;
            }
            fail(ErrorKind::config, "malformed potential table row: " + line);
        }
        first = false;
        r.push_back(a);
        v.push_back(b);
        dv.push_back(c);
        d2v.push_back(e);
    }
    return table(std::move(r), std::move(v), std::move(dv), std::move(d2v));
}

} // namespace potentials

/// W = |x|^2/(2d) + w with w a small radial perturbation.
struct AttractionPotential {
    RadialPotential base;
    RadialPotential perturbation;
    int dim = 3;
    double epsilon = 0.0; // grid estimate of sup |Laplacian w|
};

/// max |Delta w| over r = 0 and 10^3 log-spaced radii in (0, 10 r_scale].
inline double estimate_laplacian_sup(const RadialPotential& w, Dimension d, double r_scale = 1.0)
{
    double sup = std::abs(w.laplacian(0.0, d));
    for (double r : logspace(1e-6 * r_scale, 10.0 * r_scale, 1000))
        sup = std::max(sup, std::abs(w.laplacian(r, d)));
    return sup;
}

inline AttractionPotential make_attraction(RadialPotential w, Dimension d, double r_scale = 1.0)
{
    const int dd = d.value();
    RadialPotential base;
    base.name = "near-quadratic(" + w.name + ")";
    base.value = [w, dd](double x) { return x * x / (2.0 * dd) + w.value(x); };
    base.slope = [w, dd](double x) { return x / dd + w.slope(x); };
    base.curvature = [w, dd](double x) { return 1.0 / dd + w.second_derivative(x); };
    base.smoothness_order = w.smoothness_order;
    base.r_scale = r_scale;
    AttractionPotential out{std::move(base), std::move(w), dd, 0.0};
    out.epsilon = estimate_laplacian_sup(out.perturbation, d, r_scale);
    return out;
}

/// |w'(r)| <= eps r / d at every sample.
inline bool check_perturbation_slope(const AttractionPotential& W, std::span<const double> radii)
{
    for (double r : radii) {
        const double bound = W.epsilon * std::abs(r) / W.dim;
        if (std::abs(W.perturbation.slope(r)) > bound * (1 + 1e-9) + 1e-300)
            return false;
    }
    return true;
}

struct ParetoTailReport {
    bool passed = false;
    bool increasing = false;
    double first_value = 0.0; // r^{d-1} V'(r) at the smallest radius
    double last_value = 0.0;
    std::string reason;
};

/**
 * Sampled check of r^{d-1} V'(r) -> infinity: the product must increase at
 * every consecutive sample and end above both its first value and the optional
 * mass target.
 */
inline ParetoTailReport check_pareto_tail(const RadialPotential& V, Dimension d, std::span<const double> radii,
                                          double mass_target = 0.0)
{
    if (radii.size() < 2 || !std::is_sorted(radii.begin(), radii.end()) || radii.back() < 10.0)
        fail(ErrorKind::parameter, "check_pareto_tail needs increasing radii reaching at least 10");
    const double s = sphere_area(d);
    ParetoTailReport rep;
    auto growth = [&](double r) { return std::pow(r, d.value() - 1) * V.slope(r); };
    rep.first_value = growth(radii.front());
    rep.increasing = true;
    double prev = rep.first_value;
    for (std::size_t i = 1; i < radii.size(); ++i) {
        const double g = growth(radii[i]);
        if (!(g > prev))
            rep.increasing = false;
        prev = g;
    }
    rep.last_value = prev;
    if (!rep.increasing)
        rep.reason = "pareto tail failed: r^(d-1) V'(r) is not increasing";
    else if (!(rep.last_value > rep.first_value) || !(rep.last_value > 0.0))
        rep.reason = "pareto tail failed: r^(d-1) V'(r) does not grow";
    else if (mass_target > 0.0 && !(s * rep.last_value > mass_target))
        rep.reason = "pareto tail failed: mass target not reached on sampled range";
    rep.passed = rep.reason.empty();
    return rep;
}

struct CompactSupportTailReport {
    bool passed = false;
    bool slope_ok = false;
    bool laplacian_nonnegative = false;
    bool laplacian_bounded = false;
    double laplacian_sup = 0.0;
    double worst_ratio = std::numeric_limits<double>::infinity(); // min V'(r) / (c_V r^{-(d-1)/(d+1)})

    explicit operator bool() const noexcept { return passed; }
};

/// Sampled check of V'(r) >= c_V r^{-(d-1)/(d+1)} on [R0, inf) with 0 <= Delta V < inf.
inline CompactSupportTailReport check_compact_support_tail(const RadialPotential& V, Dimension d, double c_V,
                                                           double R0, std::span<const double> radii)
{
    if (!(c_V > 0.0) || !(R0 > 0.0))
        fail(ErrorKind::parameter, "check_compact_support_tail needs c_V > 0 and R0 > 0");
    const double p = double(d.value() - 1) / double(d.value() + 1);
    CompactSupportTailReport rep;
    rep.slope_ok = rep.laplacian_nonnegative = rep.laplacian_bounded = true;
    for (double r : radii) {
        if (r < R0)
            fail(ErrorKind::parameter, "check_compact_support_tail: sample radius below R0");
        const double bound = c_V * std::pow(r, -p);
        const double slope = V.slope(r);
        rep.worst_ratio = std::min(rep.worst_ratio, slope / bound);
        if (slope < bound * (1 - 1e-12))
            rep.slope_ok = false;
        const double lap = V.laplacian(r, d);
        if (!std::isfinite(lap))
            rep.laplacian_bounded = false;
        else
            rep.laplacian_sup = std::max(rep.laplacian_sup, lap);
        if (lap < -1e-12 * std::max(1.0, std::abs(rep.laplacian_sup)))
            rep.laplacian_nonnegative = false;
    }
    rep.passed = rep.slope_ok && rep.laplacian_nonnegative && rep.laplacian_bounded;
    return rep;
}

} // namespace aggregation
