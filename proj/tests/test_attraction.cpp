#include <aggregation/attraction.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace aggregation;
using Catch::Approx;

namespace {

constexpr double pi = std::numbers::pi;

AttractionPotential bump(int d, double sup_lap)
{
    // |Delta (a r^2 e^{-r^2})| peaks at the origin with 2 d a
    return make_attraction(potentials::gaussian_bump(sup_lap / (2.0 * d)), d);
}

AttractionSolveConfig overridden()
{
    AttractionSolveConfig c;
    c.override_smallness = true;
    return c;
}

template <class F>
auto quiet(F&& f)
{
    auto old = warning_handler();
    warning_handler() = nullptr;
    auto out = f();
    warning_handler() = old;
    return out;
}

} // namespace

TEST_CASE("constant kernel returns the mass")
{
    const ScalarFn one = [](double) { return 1.0; };
    for (int d : {1, 2, 3, 4}) {
        const auto rho = uniform_shell(d, 0.3, 1.2, 2.5, 128);
        for (double r : {0.0, 0.5, 2.0})
            CHECK(spherical_mean_convolve(one, rho, r) == Approx(2.5).epsilon(1e-12));
    }
    const auto line = uniform_interval(-1.0, 2.0, 1.5, 128);
    CHECK(spherical_mean_convolve(one, line, 0.7) == Approx(1.5).epsilon(1e-12));
}

TEST_CASE("squared distance kernel adds the second moment")
{
    const ScalarFn sq = [](double z) { return z * z; };
    const ScalarFn twice = [](double z) { return 2.0 * z; };
    for (int d : {2, 3}) {
        const double m0 = 2.0;
        const auto rho = uniform_shell(d, 0.5, 1.0, m0, 256);
        // second moment of a uniform shell: m0 d/(d+2) (b^{d+2} - a^{d+2})/(b^d - a^d)
        const double M2 = m0 * d / (d + 2.0) * (std::pow(1.0, d + 2) - std::pow(0.5, d + 2))
                          / (1.0 - std::pow(0.5, d));
        for (double r : {0.0, 0.3, 0.75, 1.7}) {
            CHECK(spherical_mean_convolve(sq, rho, r) == Approx(m0 * r * r + M2).epsilon(1e-10));
            if (r > 0.0)
                CHECK(spherical_mean_gradient(twice, rho, r) == Approx(2.0 * m0 * r).epsilon(1e-10));
        }

        // Monte-Carlo over y ~ rho at x = (r, 0, ..)
        std::mt19937_64 rng(11 + d);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> g(0.0, 1.0);
        const double r = 0.75;
        const int n = 200000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double a = std::pow(0.5, d), s = std::pow(a + (1.0 - a) * u(rng), 1.0 / d);
            double dir[3], nn = 0.0;
            for (int k = 0; k < d; ++k) {
                dir[k] = g(rng);
                nn += dir[k] * dir[k];
            }
            double z2 = 0.0;
            for (int k = 0; k < d; ++k) {
                const double y = s * dir[k] / std::sqrt(nn);
                const double x = k == 0 ? r : 0.0;
                z2 += (x - y) * (x - y);
            }
            sum += m0 * z2;
            sum2 += m0 * m0 * z2 * z2;
        }
        const double mean = sum / n, sd = std::sqrt((sum2 / n - mean * mean) / n);
        CHECK(std::abs(spherical_mean_convolve(sq, rho, r) - mean) < 4.0 * sd);
    }
}

TEST_CASE("Laplacian of the unperturbed attraction returns the mass")
{
    const auto W = make_attraction(potentials::constant(), 3);
    CHECK(W.epsilon == 0.0);
    const auto rho = uniform_shell(3, 0.0, 1.0, 3.0, 64);
    const ScalarFn lap = [&](double r) { return W.base.laplacian(r, 3); };
    CHECK(spherical_mean_convolve(lap, rho, 0.4) == Approx(3.0).epsilon(1e-12));
}

TEST_CASE("convolution refinement gate")
{
    const auto rho = uniform_shell(3, 0.0, 1.0, 1.0, 256);
    const ScalarFn smooth = [](double z) { return std::exp(-z * z); };
    CHECK_NOTHROW(checked_convolve(smooth, rho, 0.5));
    const ScalarFn rough = [](double z) { return std::cos(400.0 * z); };
    const auto coarse = uniform_shell(3, 0.0, 1.0, 1.0, 8);
    CHECK_THROWS_AS(checked_convolve(rough, coarse, 0.5), AggregationError);
}

TEST_CASE("unperturbed attraction converges in one iteration")
{
    for (int d : {2, 3}) {
        for (double m0 : {1.0, 5.0}) {
            const auto out = solve_attraction_steady(make_attraction(potentials::constant(), d), d, m0);
            REQUIRE(out.history.size() == 1);
            CHECK(out.history[0].residual == 0.0);
            CHECK(out.state.R_inf == Approx(std::pow(ball_volume(d), -1.0 / d)).epsilon(1e-12));
            for (double v : out.state.density.values())
                CHECK(v == Approx(m0).epsilon(1e-14));
            CHECK(out.velocity.passed);
            CHECK(out.velocity.max_velocity <= 1e-6 * m0 * out.state.R_inf);
        }
    }
}

TEST_CASE("perturbed attraction contracts geometrically")
{
    const auto W = bump(3, 0.01);
    CHECK(W.epsilon == Approx(0.01).epsilon(1e-9));
    const double m0 = 1.0;
    const auto out = quiet([&] { return solve_attraction_steady(W, 3, m0, overridden()); });
    REQUIRE(out.history.size() >= 3);
    for (std::size_t k = 2; k < out.history.size(); ++k)
        if (out.history[k - 1].residual > 1e-13 * m0)
            CHECK(out.history[k].residual < 0.5 * out.history[k - 1].residual);
    CHECK(out.velocity.passed);
    CHECK(out.state.density.mass() == Approx(m0).epsilon(1e-10));
    for (double v : out.state.density.values()) {
        CHECK(v >= m0 * (1 - W.epsilon) - 1e-12);
        CHECK(v <= m0 * (1 + W.epsilon) + 1e-12);
    }
    CHECK(out.field.within_bounds());
    // support measure stays within 1/(1 - eps)
    CHECK(ball_volume(3) * std::pow(out.state.R_inf, 3) <= 1.0 / (1.0 - W.epsilon));
}

TEST_CASE("flipping the perturbation keeps the mass and moves the edge")
{
    const auto plus = quiet([] { return solve_attraction_steady(bump(3, 0.01), 3, 1.0, overridden()); });
    const auto minus = quiet([] { return solve_attraction_steady(bump(3, -0.01), 3, 1.0, overridden()); });
    CHECK(plus.state.density.mass() == Approx(minus.state.density.mass()).epsilon(1e-10));
    CHECK(std::abs(plus.state.R_inf - minus.state.R_inf) > 1e-5);
    // a positive bump raises Delta W near the origin, compacting the state
    CHECK(plus.state.R_inf < minus.state.R_inf);
}

TEST_CASE("smallness conditions")
{
    const auto zero = check_smallness(0.0, 3);
    CHECK(zero.pass1);
    CHECK(zero.pass2);
    CHECK(zero.lhs1 == 0.0);
    const auto big = check_smallness(0.5, 3);
    CHECK_FALSE(big.passed());
    const auto two = check_smallness(0.001, 2);
    CHECK(two.critical_epsilon > 0.0);
    CHECK(check_smallness(0.5 * two.critical_epsilon, 2).passed());
    CHECK_FALSE(check_smallness(1.5 * two.critical_epsilon, 2).passed());
    // explicit supp measure and radius are honoured
    const auto given = check_smallness(0.001, 3, 1.0, 10.0);
    CHECK(given.rhs1 == Approx(lemma1_bound(3, 1.0) / 8000.0));
}

TEST_CASE("failing smallness needs an override")
{
    CHECK_THROWS_AS(solve_attraction_steady(bump(3, 0.01), 3, 1.0), AggregationError);
}

TEST_CASE("contraction failure reports the residual history")
{
    AttractionSolveConfig c = overridden();
    c.max_iter = 1;
    c.tol = 1e-300;
    try {
        quiet([&] { return solve_attraction_steady(bump(3, 0.01), 3, 1.0, c); });
        FAIL("expected contraction failure");
    } catch (const AggregationError& e) {
        CHECK(e.kind() == ErrorKind::contraction_failure);
        CHECK(exit_code(e.kind()) == 4);
        CHECK(std::string(e.what()).find("residuals") != std::string::npos);
    }
}

TEST_CASE("iteration history CSV")
{
    std::ostringstream os;
    write_history_csv(os, {{1, 0.5, 0.62}, {2, 0.01, 0.621}});
    CHECK(os.str().rfind("k,residual,R\n1,0.5,0.62", 0) == 0);
}
