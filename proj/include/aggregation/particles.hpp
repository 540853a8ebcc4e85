#pragma once

/**
 * @file particles.hpp
 * @brief Direct-summation blob particles for confinement and attraction runs.
 *
 * The Newtonian kernel is regularized by evaluating its radial slope at
 * max(r, delta) while keeping the direction; the energy kernel is the
 * matching primitive, linear in r inside the blob.
 */

#include "density.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "potential.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace aggregation {

struct ParticleCloud {
    int dim = 3;
    double t = 0.0;
    double delta = 0.0;            // blob radius
    std::vector<double> positions; // N * dim, particle-major
    std::vector<double> weights;

    std::size_t size() const noexcept { return weights.size(); }
    std::span<const double> point(std::size_t i) const { return {positions.data() + i * dim, std::size_t(dim)}; }

    double radius(std::size_t i) const
    {
        double r2 = 0.0;
        for (int k = 0; k < dim; ++k)
            r2 += positions[i * dim + k] * positions[i * dim + k];
        return std::sqrt(r2);
    }

    double mass() const
    {
        double m = 0.0;
        for (double w : weights)
            m += w;
        return m;
    }

    std::vector<double> center_of_mass() const
    {
        std::vector<double> c(dim, 0.0);
        const double m = mass();
        for (std::size_t i = 0; i < size(); ++i)
            for (int k = 0; k < dim; ++k)
                c[k] += weights[i] * positions[i * dim + k];
        for (auto& x : c)
            x /= m;
        return c;
    }
};

/// Exactly one of the two potentials drives a run.
struct ParticleForces {
    std::optional<RadialPotential> confinement;
    std::optional<AttractionPotential> attraction;

    static ParticleForces confined(RadialPotential V) { return {std::move(V), std::nullopt}; }
    static ParticleForces attracting(AttractionPotential W) { return {std::nullopt, std::move(W)}; }

    void validate() const
    {
        if (confinement.has_value() == attraction.has_value())
            fail(ErrorKind::parameter, "particle run needs exactly one of a confinement or an attraction potential");
    }
};

struct ParticleConfig {
    double dt_max = 0.01;
    double cfl = 0.1; // max |u| dt <= cfl * delta
    int rk_order = 2;
    unsigned threads = 1;
};

/// 0.5 (m0 / (N rho_ref))^{1/d}.
inline double default_regularization(double m0, std::size_t N, int d, double rho_ref)
{
    return 0.5 * std::pow(m0 / (static_cast<double>(N) * rho_ref), 1.0 / d);
}

/// Regularized kernel: N(r) outside the blob, continued linearly with slope -1/(s_d delta^{d-1}) inside.
inline double regularized_kernel(Dimension d, double r, double delta)
{
    if (r >= delta)
        return newton_kernel(d, r);
    return newton_kernel(d, delta) + (delta - r) / (sphere_area(d) * std::pow(delta, d.value() - 1));
}

namespace detail {

// Pair interaction for targets [begin, end) summed over sources in index order.
struct PairKernel {
    int dim;
    double delta;
    double inv_area;
    const AttractionPotential* W;

    // Velocity factor f such that target i gains -w_j * f * (x_i - x_j); r2 > 0.
    double factor(double r2) const
    {
        const double r = std::sqrt(r2);
        const double rr = std::max(r, delta);
        double f;
        switch (dim) {
        case 2: f = inv_area / (rr * r); break;
        case 3: f = inv_area / (rr * rr * r); break;
        default: f = inv_area / (std::pow(rr, dim - 1) * r); break;
        }
        // grad N_delta(z) = -f z; the velocity term is -w_j grad N_delta = +w_j f z, so f is negated
        f = -f;
        if (W)
            f += W->base.slope(r) / r;
        return f;
    }
};

} // namespace detail

/**
 * Velocities u_i. Confinement: -sum_j w_j grad N_delta(x_i - x_j) - grad V(x_i).
 * Attraction: -sum_j w_j (grad N_delta + grad W)(x_i - x_j).
 *
 * Each target sums its sources in index order. With one thread the pair loop
 * is symmetric and still adds contributions to each target in that order, so
 * the result does not depend on the thread count. Coincident pairs contribute
 * nothing and are reported as a warning.
 */
inline std::vector<double> velocity_field(const ParticleCloud& c, const ParticleForces& forces, unsigned threads = 1)
{
    forces.validate();
    const int d = c.dim;
    const std::size_t n = c.size();
    const double* x = c.positions.data();
    const double* w = c.weights.data();
    const detail::PairKernel kernel{d, c.delta, 1.0 / sphere_area(d),
                                    forces.attraction ? &*forces.attraction : nullptr};
    std::vector<double> u(n * d, 0.0);
    std::size_t coincident = 0;

    if (threads <= 1) {
        double z[max_dimension];
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = a + 1; b < n; ++b) {
                double r2 = 0.0;
                for (int k = 0; k < d; ++k) {
                    z[k] = x[a * d + k] - x[b * d + k];
                    r2 += z[k] * z[k];
                }
                if (r2 == 0.0) {
                    ++coincident;
                    continue;
                }
                const double f = kernel.factor(r2);
                for (int k = 0; k < d; ++k) {
                    u[a * d + k] -= (w[b] * f) * z[k];
                    u[b * d + k] -= (w[a] * f) * (-z[k]);
                }
            }
        }
    } else {
        std::vector<std::size_t> counts(threads, 0);
        auto work = [&](unsigned id) {
            double z[max_dimension];
            for (std::size_t i = id; i < n; i += threads) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i)
                        continue;
                    double r2 = 0.0;
                    for (int k = 0; k < d; ++k) {
                        z[k] = x[i * d + k] - x[j * d + k];
                        r2 += z[k] * z[k];
                    }
                    if (r2 == 0.0) {
                        if (j > i)
                            ++counts[id];
                        continue;
                    }
                    const double f = kernel.factor(r2);
                    for (int k = 0; k < d; ++k)
                        u[i * d + k] -= (w[j] * f) * z[k];
                }
            }
        };
        {
            std::vector<std::jthread> pool;
            for (unsigned id = 0; id < threads; ++id)
                pool.emplace_back(work, id);
        }
        for (auto k : counts)
            coincident += k;
    }

    if (forces.confinement) {
        const auto& V = *forces.confinement;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = c.radius(i);
            if (r == 0.0)
                continue;
            const double g = V.slope(r) / r;
            for (int k = 0; k < d; ++k)
                u[i * d + k] -= g * x[i * d + k];
        }
    }
    if (coincident > 0)
        warn(ErrorKind::singularity, std::to_string(coincident) + " coincident particle pair(s) beyond the blob radius");
    return u;
}

/// 1/2 sum_{i != j} w_i w_j K(x_i - x_j) + sum_i w_i V(x_i), with K = N_delta (+ W).
inline double discrete_energy(const ParticleCloud& c, const ParticleForces& forces)
{
    forces.validate();
    const int d = c.dim;
    const std::size_t n = c.size();
    double pairs = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        double row = 0.0;
        for (std::size_t b = a + 1; b < n; ++b) {
            double r2 = 0.0;
            for (int k = 0; k < d; ++k) {
                const double z = c.positions[a * d + k] - c.positions[b * d + k];
                r2 += z * z;
            }
            const double r = std::sqrt(r2);
            double K = regularized_kernel(d, r, c.delta);
            if (forces.attraction)
                K += forces.attraction->base.value(r);
            row += c.weights[b] * K;
        }
        pairs += c.weights[a] * row;
    }
    double external = 0.0;
    if (forces.confinement)
        for (std::size_t i = 0; i < n; ++i)
            external += c.weights[i] * forces.confinement->value(c.radius(i));
    return pairs + external;
}

/// Sum_i w_i |u_i|^2.
inline double dissipation(const ParticleCloud& c, const std::vector<double>& u)
{
    double D = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        double u2 = 0.0;
        for (int k = 0; k < c.dim; ++k)
            u2 += u[i * c.dim + k] * u[i * c.dim + k];
        D += c.weights[i] * u2;
    }
    return D;
}

inline double max_speed(const std::vector<double>& u, int d)
{
    double m = 0.0;
    for (std::size_t i = 0; i < u.size() / d; ++i) {
        double u2 = 0.0;
        for (int k = 0; k < d; ++k)
            u2 += u[i * d + k] * u[i * d + k];
        m = std::max(m, u2);
    }
    return std::sqrt(m);
}

/**
 * One explicit step (RK2 midpoint or RK4) of at most `max_dt`, with
 * dt = min(dt_max, max_dt, cfl * delta / max|u|).
 */
inline ParticleCloud advance(const ParticleCloud& c, const ParticleForces& forces, const ParticleConfig& config,
                             double max_dt = std::numeric_limits<double>::infinity())
{
    const int d = c.dim;
    const auto u1 = velocity_field(c, forces, config.threads);
    const double speed = max_speed(u1, d);
    double dt = std::min(config.dt_max, max_dt);
    if (speed > 0.0)
        dt = std::min(dt, config.cfl * c.delta / speed);

    auto shifted = [&](const std::vector<double>& u, double h) {
        ParticleCloud s = c;
        for (std::size_t k = 0; k < s.positions.size(); ++k)
            s.positions[k] += h * u[k];
        return s;
    };
    ParticleCloud next = c;
    if (config.rk_order == 2) {
        const auto u2 = velocity_field(shifted(u1, 0.5 * dt), forces, config.threads);
        for (std::size_t k = 0; k < next.positions.size(); ++k)
            next.positions[k] += dt * u2[k];
    } else if (config.rk_order == 4) {
        const auto u2 = velocity_field(shifted(u1, 0.5 * dt), forces, config.threads);
        const auto u3 = velocity_field(shifted(u2, 0.5 * dt), forces, config.threads);
        const auto u4 = velocity_field(shifted(u3, dt), forces, config.threads);
        for (std::size_t k = 0; k < next.positions.size(); ++k)
            next.positions[k] += dt / 6.0 * (u1[k] + 2.0 * u2[k] + 2.0 * u3[k] + u4[k]);
    } else {
        fail(ErrorKind::parameter, "particle rk_order must be 2 or 4");
    }
    next.t = c.t + dt;
    for (std::size_t i = 0; i < next.size(); ++i)
        if (!(next.radius(i) <= 1e6))
            fail(ErrorKind::divergence, "particle " + std::to_string(i) + " left |x| <= 1e6 at t = " + std::to_string(next.t));
    return next;
}

/// Advances to each requested time (increasing) and returns the cloud there.
inline std::vector<ParticleCloud> simulate_particles(ParticleCloud c, const ParticleForces& forces,
                                                     const ParticleConfig& config, const std::vector<double>& times)
{
    std::vector<ParticleCloud> out;
    for (double target : times) {
        while (c.t < target * (1 - 1e-14))
            c = advance(c, forces, config, target - c.t);
        out.push_back(c);
    }
    return out;
}

/**
 * Samples N equal-weight particles from a radial density: stratified
 * inverse-CDF radii (one uniform draw per mass stratum) and uniform directions.
 */
inline ParticleCloud sample_cloud(const RadialDensity& rho, std::size_t N, std::uint64_t seed, double delta)
{
    const int d = rho.dimension();
    if (rho.geometry() != Geometry::radial || d < 2)
        fail(ErrorKind::unsupported, "particle sampling needs a radial density in d >= 2");
    if (N == 0 || !(delta > 0.0))
        fail(ErrorKind::parameter, "sample_cloud needs N > 0 and a positive blob radius");
    const double m0 = rho.mass();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    ParticleCloud c;
    c.dim = d;
    c.delta = delta;
    c.weights.assign(N, m0 / static_cast<double>(N));
    c.positions.resize(N * d);
    const double lo = rho.grid().front(), hi = rho.grid().back();
    for (std::size_t i = 0; i < N; ++i) {
        const double target = (static_cast<double>(i) + unit(rng)) / static_cast<double>(N) * m0;
        double a = lo, b = hi;
        for (int it = 0; it < 100; ++it) {
            const double mid = 0.5 * (a + b);
            (rho.enclosed_mass(mid) < target ? a : b) = mid;
        }
        const double r = 0.5 * (a + b);
        double dir[max_dimension], n2 = 0.0;
        do {
            n2 = 0.0;
            for (int k = 0; k < d; ++k) {
                dir[k] = gauss(rng);
                n2 += dir[k] * dir[k];
            }
        } while (n2 == 0.0);
        const double s = r / std::sqrt(n2);
        for (int k = 0; k < d; ++k)
            c.positions[i * d + k] = s * dir[k];
    }
    return c;
}

/**
 * Outer support radius: the largest |x_i| plus the shell holding half a
 * particle at the density of the outermost k = max(8, sqrt N) particles.
 */
inline double support_radius(const ParticleCloud& c)
{
    const std::size_t n = c.size();
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i)
        r[i] = c.radius(i);
    std::sort(r.begin(), r.end());
    const std::size_t k = std::min<std::size_t>(n - 1, std::max<std::size_t>(8, std::size_t(std::sqrt(double(n)))));
    if (k == 0)
        return r.back();
    const double w = c.mass() / static_cast<double>(n);
    const double vol = ball_volume(c.dim) * (std::pow(r[n - 1], c.dim) - std::pow(r[n - 1 - k], c.dim));
    if (!(vol > 0.0))
        return r.back();
    const double rho_edge = static_cast<double>(k) * w / vol;
    return std::pow(std::pow(r[n - 1], c.dim) + 0.5 * w / (rho_edge * ball_volume(c.dim)), 1.0 / c.dim);
}

/// CSV rows (t, id, x_1..x_d, w).
inline void write_particles_csv(std::ostream& os, const std::vector<ParticleCloud>& snapshots, bool header = true)
{
    if (snapshots.empty())
        return;
    const int d = snapshots.front().dim;
    const auto old = os.precision(17);
    if (header) {
        os << "t,id";
        for (int k = 1; k <= d; ++k)
            os << ",x" << k;
        os << ",w\n";
    }
    for (const auto& c : snapshots)
        for (std::size_t i = 0; i < c.size(); ++i) {
            os << c.t << ',' << i;
            for (int k = 0; k < d; ++k)
                os << ',' << c.positions[i * d + k];
            os << ',' << c.weights[i] << '\n';
        }
    os.precision(old);
}

/// Loads one cloud from the CSV layout above; rows of the first time stamp only.
inline ParticleCloud read_particles_csv(std::istream& is, double delta)
{
    std::string line;
    if (!std::getline(is, line) || line.rfind("t,id,", 0) != 0)
        fail(ErrorKind::io, "particle CSV: missing header t,id,x1..xd,w");
    const int d = static_cast<int>(std::count(line.begin(), line.end(), ',')) - 2;
    if (d < 1 || d > max_dimension)
        fail(ErrorKind::io, "particle CSV: bad column count");
    ParticleCloud c;
    c.dim = d;
    c.delta = delta;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        double t, id, w;
        std::vector<double> x(d);
        if (!(row >> t >> id))
            fail(ErrorKind::io, "particle CSV: malformed row");
        for (auto& v : x)
            if (!(row >> v))
                fail(ErrorKind::io, "particle CSV: malformed row");
        if (!(row >> w) || !(w > 0.0))
            fail(ErrorKind::io, "particle CSV: weights must be positive");
        if (first) {
            c.t = t;
            first = false;
        } else if (t != c.t) {
            break;
        }
        c.positions.insert(c.positions.end(), x.begin(), x.end());
        c.weights.push_back(w);
    }
    if (c.weights.empty())
        fail(ErrorKind::io, "particle CSV: no particles");
    return c;
}

} // namespace aggregation
