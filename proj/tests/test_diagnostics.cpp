#include <aggregation/diagnostics.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace aggregation;
using Catch::Approx;

namespace {

constexpr double pi = std::numbers::pi;

struct Run {
    SteadyState steady;
    Trajectory traj;
    DiagnosticSeries series;
};

Run quadratic_run(int d, const RadialDensity& rho0, double t_end, std::size_t N = 256)
{
    const auto V = potentials::quadratic();
    Run r;
    r.steady = build_steady_state(V, d, rho0.mass());
    EvolutionConfig c;
    c.dt_max = 0.02;
    c.t_end = t_end;
    r.traj = evolve(init_lagrangian(rho0, N, d), V, c);
    r.series = build_series(r.traj.snapshots, V, r.steady);
    return r;
}

std::vector<double> synthetic_times(double a, double b, std::size_t n) { return linspace(a, b, n); }

} // namespace

TEST_CASE("energy of the steady profile is the steady energy")
{
    const auto V = potentials::soft_quadratic(1.0, 1.0);
    const auto s = build_steady_state(V, 3, 5.0);
    CHECK(energy(s.density, V) == Approx(s.E_inf).epsilon(1e-10));
    const auto wide = steady_profile(V, 3, 1.2 * s.R_inf, 512);
    const auto other = wide.scaled(s.m0 / wide.mass());
    CHECK(energy(other, V) > s.E_inf);
}

TEST_CASE("Lagrangian energy approaches the continuum energy")
{
    const auto V = potentials::quadratic();
    const auto steady = build_steady_state(V, 3, 4 * pi);
    const auto coarse = init_lagrangian(steady.density, 128, 3);
    const auto fine = init_lagrangian(steady.density, 1024, 3);
    const double e_coarse = std::abs(energy(coarse, V) - steady.E_inf);
    const double e_fine = std::abs(energy(fine, V) - steady.E_inf);
    CHECK(e_fine < e_coarse);
    CHECK(e_fine < 1e-5 * steady.E_inf);
}

TEST_CASE("dissipation, discrepancy and Lyapunov functional at the steady state")
{
    const auto V = potentials::quadratic();
    const auto steady = build_steady_state(V, 2, 2 * pi);
    const auto s = init_lagrangian(steady.density, 128, 2);
    CHECK(dissipation(s, V) < 1e-24);
    CHECK(discrepancy_F(s, V) < 1e-24);
    const EnergyReference ref(s, V);
    CHECK(std::abs(ref.gap(s)) < 1e-13);
    const auto p = LyapunovParams{0.1, 0.01, 3.0, ref.E_inf(), steady.R_inf};
    CHECK(std::abs(lyapunov(ref.gap(s), discrepancy_F(s, V), support_radius(s), p, 2)) < 1e-13);
    CHECK(l1_distance(s, steady) < 1e-10);
}

TEST_CASE("discrepancy of a uniformly offset density is half the mass")
{
    const auto V = potentials::quadratic();
    auto s = init_lagrangian(uniform_shell(3, 0.0, 1.0, 4.0 * (4 * pi / 3)), 64, 3); // rho = 4 = Delta V + 1
    CHECK(discrepancy_F(s, V) == Approx(0.5 * s.m0).epsilon(1e-12));
}

TEST_CASE("Lyapunov functional properties")
{
    const auto p = LyapunovParams::defaults(3);
    CHECK(p.m == 4.0);
    const LyapunovParams q{0.1, 0.01, 4.0, 0.0, 2.0};
    CHECK(lyapunov(0.3, 0.0, 1.5, q, 3) == Approx(0.3)); // R < R_inf adds nothing
    CHECK(lyapunov(0.3, 2.0, 3.0, q, 3) == Approx(0.3 + 0.2 + 0.01));
    CHECK(lyapunov(0.3, 2.0, 3.0, q, 3) >= 0.3);
    CHECK_THROWS_AS(lyapunov(0.1, 0.1, 1.0, LyapunovParams{0.1, 0.01, 3.0, 0, 0}, 3), AggregationError);
    CHECK_THROWS_AS(lyapunov(0.1, 0.1, 1.0, LyapunovParams{0.0, 0.01, 4.0, 0, 0}, 3), AggregationError);
}

TEST_CASE("energy gap reference matches direct energy differences early on")
{
    const auto r = quadratic_run(3, uniform_shell(3, 1.0, 2.0, 4 * pi), 1.0, 128);
    for (std::size_t k = 0; k < r.series.size(); k += 10)
        CHECK(r.series.energy_gap[k]
              == Approx(r.series.energy[k] - r.series.params.E_inf).epsilon(1e-9).margin(1e-12));
}

TEST_CASE("series invariants along a relaxation run")
{
    const auto r = quadratic_run(2, uniform_shell(2, 1.0, 2.0, 2 * pi), 6.0);
    const auto& s = r.series;
    for (std::size_t k = 0; k < s.size(); ++k) {
        CHECK(s.dissipation[k] >= 0.0);
        CHECK(s.discrepancy[k] >= 0.0);
        CHECK(s.lyapunov[k] >= -1e-14);
        CHECK(s.lyapunov[k] >= s.energy_gap[k]);
        if (k > 0)
            CHECK(s.times[k] > s.times[k - 1]);
    }
    const auto dc = check_dissipation(s.times, s.energy, s.dissipation);
    CHECK(dc.monotone);
    CHECK(dc.violations == 0);
    // forward difference of E against D at the left end
    for (std::size_t k = 0; k + 1 < s.size() && s.times[k] < 3.0; ++k) {
        const double fd = (s.energy[k] - s.energy[k + 1]) / (s.times[k + 1] - s.times[k]);
        CHECK(fd == Approx(s.dissipation[k]).epsilon(0.05));
    }
    // F settles monotonically once the transient is over
    for (std::size_t k = 1; k < s.size(); ++k)
        if (s.times[k] > 1.0 && s.discrepancy[k] > 1e-20)
            CHECK(s.discrepancy[k] <= s.discrepancy[k - 1]);
}

TEST_CASE("power-law fit of an exact power law")
{
    const auto t = synthetic_times(0.0, 50.0, 200);
    std::vector<double> v;
    for (double x : t)
        v.push_back(std::pow(1.0 + x, -2.0));
    const auto f = fit_power_law(t, v, {}, 3);
    CHECK(f.gamma_hat == Approx(2.0).margin(1e-6));
    CHECK(f.r_squared == Approx(1.0).margin(1e-12));
    CHECK_FALSE(f.super_algebraic);
    CHECK(f.gamma_theory == Approx(1.25));
    CHECK(f.q_exponent == Approx(1.2));
    CHECK(f.verdict() == "bound satisfied");
}

TEST_CASE("exponential decay is flagged super-algebraic")
{
    const auto t = synthetic_times(0.0, 30.0, 301);
    std::vector<double> v;
    for (double x : t)
        v.push_back(std::exp(-x));
    const auto f = fit_power_law(t, v, {10.0, 20.0}, 3);
    CHECK(f.gamma_hat > 10.0);
    CHECK(f.super_algebraic);
    CHECK(f.window.t_a == Approx(10.0));
    CHECK(f.window.t_b == Approx(20.0));
    const auto e = fit_exponential(t, v, {10.0, 20.0});
    CHECK(e.rate == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fit window errors")
{
    const auto t = synthetic_times(0.0, 10.0, 50);
    std::vector<double> v(t.size(), 1.0);
    v[10] = 0.0;
    try {
        fit_power_law(t, v, {}, 3);
        FAIL("expected a window error");
    } catch (const AggregationError& e) {
        CHECK(e.kind() == ErrorKind::window);
    }
    CHECK_THROWS_AS(fit_power_law(t, std::vector<double>(t.size(), 1.0), {0.0, 1.0}, 3), AggregationError);
    CHECK(theoretical_rate(2, 0.7) == 0.7);
    CHECK(theoretical_rate(4) == Approx(6.0 / 10.0));
}

TEST_CASE("calibrated power bound")
{
    const auto t = synthetic_times(0.0, 20.0, 101);
    std::vector<double> fast, slow;
    for (double x : t) {
        fast.push_back(std::exp(-x));
        slow.push_back(std::pow(1.0 + x, -1.0));
    }
    CHECK(check_power_bound(t, fast, 1.25, 1.0).passed);
    CHECK_FALSE(check_power_bound(t, slow, 1.25, 1.0).passed);
}

TEST_CASE("d=3 quadratic relaxation beats the theoretical energy rate")
{
    const auto r = quadratic_run(3, uniform_shell(3, 0.0, 1.5, 4 * pi), 8.0);
    const auto& s = r.series;
    double t_b = 0.0;
    for (std::size_t k = 0; k < s.size() && s.energy_gap[k] > 1e-18 * std::abs(s.params.E_inf); ++k)
        t_b = s.times[k];
    const auto fit = fit_rate(s, RateQuantity::energy_gap, {1.0, t_b});
    CHECK(fit.gamma_hat >= 1.25);
    CHECK(fit.super_algebraic);
    const auto sup = fit_rate(s, RateQuantity::support_gap, {1.0, std::min(t_b, 5.0)});
    CHECK(sup.gamma_hat > 0.0);
}

TEST_CASE("series CSV round trip")
{
    const auto r = quadratic_run(2, uniform_shell(2, 0.0, 1.5, 2 * pi), 0.5, 64);
    std::stringstream io;
    write_series_csv(io, r.series);
    const auto back = read_series_csv(io, r.series.params.E_inf);
    REQUIRE(back.size() == r.series.size());
    for (std::size_t k = 0; k < back.size(); ++k) {
        CHECK(back.times[k] == r.series.times[k]);
        CHECK(back.energy[k] == r.series.energy[k]);
        CHECK(back.l1_dist[k] == r.series.l1_dist[k]);
    }
    std::stringstream bad("x,y\n1,2\n");
    CHECK_THROWS_AS(read_series_csv(bad, 0.0), AggregationError);
}

TEST_CASE("density bounds hold after the relaxation time")
{
    const auto V = potentials::soft_quadratic(1.0, 1.0);
    const double a = 3.0, A = 6.0; // Delta V in d = 3 lies in (3, 6]
    const auto rho0 = uniform_shell(3, 1.0, 2.0, 10.0);
    EvolutionConfig c;
    c.dt_max = 0.02;
    c.t_end = 12.0;
    const auto traj = evolve(init_lagrangian(rho0, 256, 3), V, c);
    const auto rep = check_density_bounds(traj.snapshots, a, A);
    CHECK(rep.holds_after_t0);
    CHECK(rep.t_first <= rep.t0_prescribed);
    CHECK(rep.min_after >= 0.5 * a);
    CHECK(rep.max_after <= 2.0 * A);
}
