#include <aggregation/particles.hpp>
#include <aggregation/steady_state.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace aggregation;
using Catch::Approx;

namespace {

constexpr double pi = std::numbers::pi;

ParticleCloud two_particles(int d, double separation, double w, double delta)
{
    ParticleCloud c;
    c.dim = d;
    c.delta = delta;
    c.weights = {w, w};
    c.positions.assign(2 * d, 0.0);
    c.positions[0] = 0.5 * separation;
    c.positions[d] = -0.5 * separation;
    return c;
}

ParticleCloud random_cloud(int d, std::size_t n, std::uint64_t seed, double delta)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0), w(0.5, 1.5);
    ParticleCloud c;
    c.dim = d;
    c.delta = delta;
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < d; ++k)
            c.positions.push_back(u(rng));
        c.weights.push_back(w(rng) / n);
    }
    return c;
}

double separation(const ParticleCloud& c)
{
    double s2 = 0.0;
    for (int k = 0; k < c.dim; ++k) {
        const double z = c.positions[k] - c.positions[c.dim + k];
        s2 += z * z;
    }
    return std::sqrt(s2);
}

} // namespace

TEST_CASE("two particles in d = 3 repel along their axis")
{
    const auto c = two_particles(3, 1.0, 0.5, 1e-3);
    const auto forces = ParticleForces::confined(potentials::constant());
    const auto u = velocity_field(c, forces);
    CHECK(u[0] == Approx(0.5 / (4 * pi)).epsilon(1e-14));
    CHECK(u[3] == Approx(-0.5 / (4 * pi)).epsilon(1e-14));
    CHECK(u[1] == 0.0);
    CHECK(u[5] == 0.0);
    CHECK(discrete_energy(c, forces) == Approx(0.25 / (4 * pi)).epsilon(1e-14));
}

TEST_CASE("regularized kernel is C1 at the blob radius")
{
    for (int d : {2, 3, 4}) {
        const double delta = 0.1, h = 1e-7;
        CHECK(regularized_kernel(d, delta, delta) == Approx(newton_kernel(d, delta)).epsilon(1e-14));
        const double inside = (regularized_kernel(d, delta, delta) - regularized_kernel(d, delta - h, delta)) / h;
        CHECK(inside == Approx(newton_kernel_slope(d, delta)).epsilon(1e-5));
        // velocities inside the blob stay bounded by the blob-radius value
        const auto c = two_particles(d, 0.01, 1.0, delta);
        const auto u = velocity_field(c, ParticleForces::confined(potentials::constant()));
        CHECK(u[0] == Approx(1.0 / (sphere_area(d) * std::pow(delta, d - 1))).epsilon(1e-12));
    }
}

TEST_CASE("pair forces carry no net momentum")
{
    for (int d : {2, 3}) {
        const auto c = random_cloud(d, 200, 17 + d, 0.02);
        const auto u = velocity_field(c, ParticleForces::confined(potentials::constant()));
        for (int k = 0; k < d; ++k) {
            double p = 0.0, scale = 0.0;
            for (std::size_t i = 0; i < c.size(); ++i) {
                p += c.weights[i] * u[i * d + k];
                scale += c.weights[i] * std::abs(u[i * d + k]);
            }
            CHECK(std::abs(p) <= 1e-13 * scale);
        }
    }
}

TEST_CASE("velocities do not depend on the thread count")
{
    const auto c = random_cloud(3, 301, 5, 0.05);
    const auto forces = ParticleForces::confined(potentials::quadratic());
    const auto u1 = velocity_field(c, forces, 1);
    const auto u3 = velocity_field(c, forces, 3);
    REQUIRE(u1.size() == u3.size());
    for (std::size_t k = 0; k < u1.size(); ++k)
        CHECK(u1[k] == u3[k]);
    const auto W = ParticleForces::attracting(make_attraction(potentials::gaussian_bump(0.001), 3));
    const auto a1 = velocity_field(c, W, 1);
    const auto a4 = velocity_field(c, W, 4);
    for (std::size_t k = 0; k < a1.size(); ++k)
        CHECK(a1[k] == a4[k]);
}

TEST_CASE("attraction runs conserve the centre of mass")
{
    auto c = random_cloud(3, 120, 9, 0.05);
    const auto before = c.center_of_mass();
    const auto forces = ParticleForces::attracting(make_attraction(potentials::gaussian_bump(0.002), 3));
    ParticleConfig cfg;
    cfg.dt_max = 0.01;
    const auto out = simulate_particles(c, forces, cfg, {0.5});
    const auto after = out.back().center_of_mass();
    for (int k = 0; k < 3; ++k)
        CHECK(after[k] == Approx(before[k]).margin(1e-12));
}

TEST_CASE("two-body attraction follows the separation ODE")
{
    // ds/dt = m0 (1/(s_d s^{d-1}) - s/d), reference solved with fine RK4
    for (int d : {2, 3}) {
        const double m0 = 1.0;
        auto rate = [&](double s) { return m0 * (1.0 / (sphere_area(d) * std::pow(s, d - 1)) - s / d); };
        double s = 1.0;
        const double h = 1e-4;
        for (int k = 0; k < 10000; ++k) {
            const double k1 = rate(s), k2 = rate(s + 0.5 * h * k1), k3 = rate(s + 0.5 * h * k2),
                         k4 = rate(s + h * k3);
            s += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
        }
        for (int order : {2, 4}) {
            const auto forces = ParticleForces::attracting(make_attraction(potentials::constant(), d));
            ParticleConfig cfg;
            cfg.dt_max = 1e-3;
            cfg.rk_order = order;
            const auto out = simulate_particles(two_particles(d, 1.0, 0.5 * m0, 1e-4), forces, cfg, {1.0});
            CHECK(out.back().t == Approx(1.0).epsilon(1e-14));
            CHECK(separation(out.back()) == Approx(s).epsilon(1e-6));
        }
        // equilibrium separation (d / s_d)^{1/d}
        const double s_eq = std::pow(d / sphere_area(d), 1.0 / d);
        const auto forces = ParticleForces::attracting(make_attraction(potentials::constant(), d));
        const auto u = velocity_field(two_particles(d, s_eq, 0.5 * m0, 1e-4), forces);
        CHECK(std::abs(u[0]) < 1e-14);
    }
}

TEST_CASE("single confined particle")
{
    ParticleCloud c;
    c.dim = 3;
    c.delta = 0.1;
    c.positions = {1.0, 0.0, 0.0};
    c.weights = {2.5};
    const auto forces = ParticleForces::confined(potentials::quadratic());
    const auto u = velocity_field(c, forces);
    CHECK(u[0] == Approx(-1.0));
    CHECK(dissipation(c, u) == Approx(2.5));
    CHECK(discrete_energy(c, forces) == Approx(2.5 * 0.5));
}

TEST_CASE("particle energy of a sampled steady state matches the radial energy")
{
    const auto V = potentials::quadratic();
    const double m0 = 4 * pi;
    const auto steady = build_steady_state(V, 3, m0);
    const std::size_t N = 4000;
    const auto cloud = sample_cloud(steady.density, N, 42, default_regularization(m0, N, 3, 3.0));
    CHECK(cloud.mass() == Approx(m0).epsilon(1e-12));
    const double E = discrete_energy(cloud, ParticleForces::confined(V));
    CHECK(E == Approx(steady.E_inf).epsilon(0.01));
    CHECK(support_radius(cloud) == Approx(steady.R_inf).epsilon(0.01));
}

TEST_CASE("stratified sampling matches the enclosed mass")
{
    const auto rho = uniform_shell(3, 1.0, 2.0, 1.0);
    const std::size_t N = 1000;
    const auto c = sample_cloud(rho, N, 7, 0.01);
    for (double r : {1.2, 1.5, 1.8}) {
        std::size_t inside = 0;
        for (std::size_t i = 0; i < N; ++i)
            inside += c.radius(i) <= r;
        // one particle per stratum: counts differ from N M(r) by at most one
        CHECK(std::abs(double(inside) - N * rho.enclosed_mass(r)) <= 1.0);
    }
    for (std::size_t i = 0; i < N; ++i) {
        CHECK(c.radius(i) >= 1.0);
        CHECK(c.radius(i) <= 2.0);
    }
    const auto again = sample_cloud(rho, N, 7, 0.01);
    CHECK(again.positions == c.positions);
}

TEST_CASE("coincident particles raise a warning")
{
    auto c = two_particles(2, 0.0, 1.0, 0.1);
    std::vector<std::string> seen;
    auto old = warning_handler();
    warning_handler() = [&](ErrorKind, const std::string& m) { seen.push_back(m); };
    const auto u = velocity_field(c, ParticleForces::confined(potentials::constant()));
    warning_handler() = old;
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].find("coincident") != std::string::npos);
    CHECK(u[0] == 0.0);
}

TEST_CASE("runaway particles raise a divergence error")
{
    ParticleCloud c;
    c.dim = 2;
    c.delta = 1.0;
    c.positions = {1e6 - 1.0, 0.0};
    c.weights = {1.0};
    RadialPotential push{"push", [](double r) { return -1e3 * r; }, [](double) { return -1e3; },
                         [](double) { return 0.0; }, 3, 1.0};
    ParticleConfig cfg;
    try {
        simulate_particles(c, ParticleForces::confined(push), cfg, {1.0});
        FAIL("expected divergence");
    } catch (const AggregationError& e) {
        CHECK(e.kind() == ErrorKind::divergence);
    }
}

TEST_CASE("particle runs need exactly one potential")
{
    const auto c = two_particles(3, 1.0, 0.5, 0.01);
    ParticleForces none;
    CHECK_THROWS_AS(velocity_field(c, none), AggregationError);
    ParticleForces both{potentials::quadratic(), make_attraction(potentials::constant(), 3)};
    CHECK_THROWS_AS(velocity_field(c, both), AggregationError);
    ParticleConfig cfg;
    cfg.rk_order = 3;
    CHECK_THROWS_AS(advance(c, ParticleForces::confined(potentials::quadratic()), cfg), AggregationError);
}

TEST_CASE("particle CSV round trip")
{
    const auto c = random_cloud(3, 10, 3, 0.05);
    std::stringstream ss;
    write_particles_csv(ss, {c});
    const auto back = read_particles_csv(ss, 0.05);
    CHECK(back.dim == 3);
    CHECK(back.positions == c.positions);
    CHECK(back.weights == c.weights);
}
