#pragma once

/**
 * @file geometry.hpp
 * @brief Dimension-dependent constants and the Newtonian kernel.
 *
 * The Newtonian potential N solves -Laplace(N) = delta in R^d:
 *   N(r) = -r/2                     d = 1
 *   N(r) = -log(r)/(2 pi)           d = 2
 *   N(r) = r^(2-d) / ((d-2) s_d)    d >= 3
 * with s_d = |S^{d-1}| the surface area of the unit sphere.
 * Its gradient is -z / (s_d |z|^d) in every dimension.
 */

#include "errors.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace aggregation {

inline constexpr int max_dimension = 8;

/// Spatial dimension, validated on construction.
class Dimension {
public:
    constexpr Dimension() = default;
    Dimension(int d) : d_(d)
    {
        if (d < 1 || d > max_dimension)
            fail(ErrorKind::parameter, "dimension must lie in [1, 8], got " + std::to_string(d));
    }

    constexpr int value() const noexcept { return d_; }
    constexpr operator int() const noexcept { return d_; }

private:
    int d_ = 3;
};

/// |S^{d-1}| = 2 pi^{d/2} / Gamma(d/2). For d = 1 this counts the two points {-1, 1}.
inline double sphere_area(int d)
{
    return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

/// |B_1| = |S^{d-1}| / d.
inline double ball_volume(int d) { return sphere_area(d) / d; }

/// c_d = 1/((d-2) |S^{d-1}|), the coefficient of r^{2-d} for d >= 3.
inline double newton_coefficient(int d)
{
    if (d < 3)
        fail(ErrorKind::unsupported, "newton_coefficient is defined for d >= 3");
    return 1.0 / ((d - 2) * sphere_area(d));
}

inline double newton_kernel(Dimension d, double r)
{
    if (!(r > 0.0))
        fail(ErrorKind::domain, "newton_kernel requires r > 0");
    switch (d.value()) {
    case 1: return -0.5 * r;
    case 2: return -std::log(r) / (2.0 * std::numbers::pi);
    default: return newton_coefficient(d) * std::pow(r, 2 - d.value());
    }
}

/// Radial derivative N'(r) = -1 / (s_d r^{d-1}).
inline double newton_kernel_slope(Dimension d, double r)
{
    if (!(r > 0.0))
        fail(ErrorKind::domain, "newton_kernel_slope requires r > 0");
    return -1.0 / (sphere_area(d) * std::pow(r, d.value() - 1));
}

/// Gradient of N evaluated at x - y.
inline std::vector<double> newton_grad(Dimension d, std::span<const double> x, std::span<const double> y)
{
    const auto dim = static_cast<std::size_t>(d.value());
    if (x.size() != dim || y.size() != dim)
        fail(ErrorKind::parameter, "newton_grad: point dimension mismatch");
    std::vector<double> z(dim);
    double r2 = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        z[k] = x[k] - y[k];
        r2 += z[k] * z[k];
    }
    if (r2 == 0.0)
        fail(ErrorKind::singularity, "newton_grad: x == y");
    const double r = std::sqrt(r2);
    const double scale = -1.0 / (sphere_area(d) * std::pow(r, d.value()));
    for (auto& c : z)
        c *= scale;
    return z;
}

/**
 * Certified lower bound c / R^{d-2} on -x . grad N(x - y) over |y| <= R = |x|.
 *
 * From x.(x-y) >= |x-y|^2 / 2 and |x-y| <= 2R one gets c = 2^{1-d} / s_d,
 * which equals (d-2) c_d 2^{1-d} for d >= 3 and 1/(4 pi) for d = 2.
 */
inline double lemma1_bound(Dimension d, double R)
{
    if (d.value() < 2)
        fail(ErrorKind::unsupported, "lemma1_bound requires d >= 2");
    if (!(R > 0.0))
        fail(ErrorKind::domain, "lemma1_bound requires R > 0");
    const double c = std::pow(2.0, 1 - d.value()) / sphere_area(d);
    return c / std::pow(R, d.value() - 2);
}

} // namespace aggregation
