#include <aggregation/steady_state.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace aggregation;
using Catch::Approx;

namespace {

constexpr double pi = std::numbers::pi;

// Uniform point in the unit ball of R^3 by rejection.
std::array<double, 3> ball_point(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (;;) {
        std::array<double, 3> p{u(rng), u(rng), u(rng)};
        if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0)
            return p;
    }
}

// Same profile on [0, R_inf] multiplied by (1 + delta) and renormalized to mass m0,
// which also moves its support radius.
RadialDensity rescaled_profile(const SteadyState& s, const RadialPotential& V, int d, double factor)
{
    // (1+delta) Delta V on B_R' with R' chosen so the mass is still m0.
    const double target = s.m0 / factor;
    double lo = 1e-6, hi = 10.0 * s.R_inf;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (support_mass(V, d, mid) < target ? lo : hi) = mid;
    }
    return steady_profile(V, d, 0.5 * (lo + hi), 1024).scaled(factor);
}

} // namespace

TEST_CASE("support radius of closed-form cases")
{
    CHECK(solve_support_radius(potentials::quadratic(), 2, 2 * pi) == Approx(1.0).margin(1e-10));
    CHECK(solve_support_radius(potentials::quadratic(), 3, 4 * pi) == Approx(1.0).margin(1e-10));
    const double R = solve_support_radius(potentials::quartic(), 2, 2 * pi);
    CHECK(R == Approx(1.0).margin(1e-10));
    // Oracle: G(R) = 2 pi R^4 for the quartic in d = 2.
    CHECK(std::abs(2 * pi * std::pow(R, 4) - 2 * pi) <= 1e-10 * 2 * pi);
    CHECK(solve_support_radius(potentials::quadratic(), 3, 4 * pi * 8) == Approx(2.0).margin(1e-10));
}

TEST_CASE("support radius errors")
{
    try {
        solve_support_radius(potentials::constant(), 3, 1.0);
        FAIL("expected an error");
    } catch (const AggregationError& e) {
        CHECK(e.kind() == ErrorKind::invalid_potential);
    }
    try {
        // log tail in d = 2: 2 pi r/(1+r) never exceeds 2 pi.
        solve_support_radius(potentials::log_tail(), 2, 10.0);
        FAIL("expected an error");
    } catch (const AggregationError& e) {
        CHECK(e.kind() == ErrorKind::tail_too_weak);
    }
    try {
        solve_support_radius(potentials::double_well(), 3, 10.0);
        FAIL("expected an error");
    } catch (const AggregationError& e) {
        CHECK(e.kind() == ErrorKind::invalid_potential);
    }
    CHECK_THROWS_AS(solve_support_radius(potentials::quadratic(), 3, 0.0), AggregationError);
}

TEST_CASE("closed-form steady profiles")
{
    const auto s2 = build_steady_state(potentials::quadratic(), 2, 2 * pi);
    const auto s3 = build_steady_state(potentials::quadratic(), 3, 4 * pi);
    const auto q2 = build_steady_state(potentials::quartic(), 2, 2 * pi);
    for (double r : {0.0, 0.25, 0.5, 0.99, 1.0 - 1e-12}) {
        CHECK(s2.density.value(r) == Approx(2.0).margin(1e-6));
        CHECK(s3.density.value(r) == Approx(3.0).margin(1e-6));
        CHECK(q2.density.value(r) == Approx(4 * r * r).margin(1e-6));
    }
    CHECK(s3.density.value(1.01) == 0.0);
    CHECK(s2.density.mass() == Approx(2 * pi).epsilon(1e-8));
    CHECK(q2.density.mass() == Approx(2 * pi).epsilon(1e-8));
}

TEST_CASE("radial velocity examples")
{
    const auto V = potentials::quadratic();
    const auto s = build_steady_state(V, 3, 4 * pi);
    CHECK(radial_velocity(s.density, V, 3, 0.5) == Approx(0.0).margin(1e-12));
    CHECK(radial_velocity(s.density, V, 3, 2.0) == Approx(-1.75).epsilon(1e-12));
    CHECK(radial_velocity(RadialDensity(), V, 3, 1.0) == -1.0);
    CHECK_THROWS_AS(radial_velocity(s.density, V, 3, 0.0), AggregationError);
}

TEST_CASE("velocity vanishes on the support of constructed states")
{
    struct Case {
        RadialPotential V;
        int d;
        double m0;
    };
    const std::vector<Case> cases{{potentials::quadratic(), 2, 2 * pi},
                                  {potentials::quadratic(), 3, 4 * pi},
                                  {potentials::quartic(), 2, 2 * pi},
                                  {potentials::quartic(), 3, 1.0},
                                  {potentials::soft_quadratic(1.0, 2.0), 3, 10.0},
                                  {potentials::soft_quadratic(1.0, 0.5), 2, 3.0}};
    for (const auto& c : cases) {
        const auto s = build_steady_state(c.V, c.d, c.m0);
        const double tol = 1e-8 * std::max(1.0, c.V.slope(s.R_inf));
        const auto rep = verify_steady(s, c.V, c.d, tol);
        INFO(c.V.name << " d=" << c.d << " max|u|=" << rep.max_velocity);
        CHECK(rep.passed);
    }
}

TEST_CASE("wrong steady candidates fail verification")
{
    const auto V = potentials::quadratic();
    const auto s = build_steady_state(V, 3, 4 * pi);

    SteadyState wide = s;
    wide.R_inf = 1.1 * s.R_inf;
    auto profile = steady_profile(V, 3, wide.R_inf, 512);
    wide.density = profile.scaled(s.m0 / profile.mass());
    CHECK_FALSE(verify_steady(wide, V, 3, 1e-8).passed);

    SteadyState weak = s;
    weak.density = s.density.scaled(0.9);
    const auto rep = verify_steady(weak, V, 3, 1e-8);
    CHECK_FALSE(rep.passed);
    CHECK(radial_velocity(weak.density, V, 3, 0.5) < 0.0);
}

TEST_CASE("steady family is monotone in radius and mass")
{
    const auto V = potentials::soft_quadratic(1.0, 1.0);
    for (int d : {2, 3}) {
        double prev = 0.0;
        for (double R : linspace(0.05, 5.0, 100)) {
            const double m = steady_profile(V, d, R, 256).mass();
            CHECK(m > prev);
            prev = m;
        }
        const double R1 = solve_support_radius(V, d, 3.0);
        const double R2 = solve_support_radius(V, d, 6.0);
        CHECK(R2 > R1);
    }
    const auto s = build_steady_state(V, 3, 3.0);
    CHECK(s.density.values().back() == Approx(V.laplacian(s.R_inf, 3)));
    CHECK(s.density.values().back() > 0.0);
}

TEST_CASE("energy of closed-form states")
{
    // Uniform ball, d = 3: (3/5) M^2 / (4 pi R) + (3/2) int r^2 = 12 pi/5 + 6 pi/5.
    const auto V = potentials::quadratic();
    const auto s3 = build_steady_state(V, 3, 4 * pi);
    CHECK(s3.E_inf == Approx(18 * pi / 5).epsilon(1e-10));
    // Uniform disk, d = 2: M^2/(16 pi) + int r^2 = pi/4 + pi/2.
    const auto s2 = build_steady_state(V, 2, 2 * pi);
    CHECK(s2.E_inf == Approx(3 * pi / 4).epsilon(1e-10));
}

TEST_CASE("steady energy agrees with a Monte-Carlo double integral")
{
    const auto V = potentials::quadratic();
    const auto s = build_steady_state(V, 3, 4 * pi);
    std::mt19937_64 rng(11);
    const std::size_t pairs = 10'000'000;
    double interaction = 0.0, confinement = 0.0;
    for (std::size_t k = 0; k < pairs; ++k) {
        const auto x = ball_point(rng);
        const auto y = ball_point(rng);
        const double r = std::hypot(x[0] - y[0], x[1] - y[1], x[2] - y[2]);
        interaction += newton_kernel(3, r);
        confinement += V.value(std::hypot(x[0], x[1], x[2]));
    }
    const double m0 = s.m0;
    const double mc = 0.5 * m0 * m0 * interaction / pairs + m0 * confinement / pairs;
    CHECK(s.E_inf == Approx(mc).epsilon(1e-3));
}

TEST_CASE("steady state minimizes the energy among rescaled profiles")
{
    for (int d : {2, 3}) {
        for (const auto& V : {potentials::quadratic(), potentials::soft_quadratic(1.0, 1.0)}) {
            const auto s = build_steady_state(V, d, 5.0);
            for (double f : {0.9, 1.1}) {
                const auto other = rescaled_profile(s, V, d, f);
                REQUIRE(other.mass() == Approx(s.m0).epsilon(1e-8));
                CHECK(radial_energy(other, V) > s.E_inf);
            }
        }
    }
}

TEST_CASE("steady energy is stable under refinement")
{
    const auto V = potentials::soft_quadratic(1.0, 1.0);
    const auto s = build_steady_state(V, 3, 5.0, 256);
    const auto fine = build_steady_state(V, 3, 5.0, 512);
    CHECK(std::abs(s.E_inf - fine.E_inf) <= 1e-6 * std::abs(fine.E_inf));
}

TEST_CASE("total potential is flat on the support")
{
    const auto V = potentials::soft_quadratic(1.0, 1.0);
    for (int d : {2, 3}) {
        const auto s = build_steady_state(V, d, 5.0);
        for (double f : {0.0, 0.3, 0.7, 1.0})
            CHECK(total_potential(s.density, V, f * s.R_inf) == Approx(s.potential_plateau).epsilon(1e-9));
        // Outside the support the exterior field is m N(r).
        const double r = 2.0 * s.R_inf;
        CHECK(NewtonianField(s.density)(r) == Approx(5.0 * newton_kernel(d, r)));
    }
}
