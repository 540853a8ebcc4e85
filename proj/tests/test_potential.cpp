#include <aggregation/potential.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace aggregation;
using Catch::Approx;

TEST_CASE("Laplacian of the quadratic potential equals the dimension")
{
    const auto V = potentials::quadratic();
    for (int d = 1; d <= 8; ++d)
        for (double r : {0.0, 1e-9, 0.3, 1.0, 50.0})
            CHECK(V.laplacian(r, d) == Approx(double(d)).epsilon(1e-15));
}

TEST_CASE("Laplacian of the quartic potential")
{
    const auto V = potentials::quartic();
    // V'' + (d-1) V'/r = 3 r^2 + (d-1) r^2
    for (int d = 1; d <= 4; ++d)
        CHECK(V.laplacian(0.7, d) == Approx((d + 2) * 0.49));
    CHECK(V.laplacian(0.0, 2) == 0.0);
}

TEST_CASE("finite-difference curvature agrees with the analytic one")
{
    auto V = potentials::soft_quadratic(1.0, 2.0);
    auto fd = V;
    fd.curvature = nullptr;
    for (double r : {0.0, 0.2, 1.0, 3.0})
        for (int d : {1, 2, 3})
            CHECK(fd.laplacian(r, d) == Approx(V.laplacian(r, d)).epsilon(1e-8));
}

TEST_CASE("gaussian bump Laplacian peaks at the origin")
{
    const auto w = potentials::gaussian_bump(0.5);
    for (int d : {2, 3}) {
        CHECK(w.laplacian(0.0, d) == Approx(2.0 * d * 0.5));
        CHECK(estimate_laplacian_sup(w, d) == Approx(2.0 * d * 0.5).epsilon(1e-9));
    }
}

TEST_CASE("attraction potential splits into quadratic part and perturbation")
{
    const double a = 0.01 / 6.0;
    const auto W = make_attraction(potentials::gaussian_bump(a), 3);
    CHECK(W.epsilon == Approx(0.01).epsilon(1e-9));
    for (double r : {0.0, 0.5, 2.0})
        CHECK(W.base.laplacian(r, 3) == Approx(1.0 + W.perturbation.laplacian(r, 3)).epsilon(1e-12));
    CHECK(check_perturbation_slope(W, logspace(1e-4, 10.0, 1000)));

    const auto Z = make_attraction(potentials::constant(0.0), 3);
    CHECK(Z.epsilon == 0.0);
    CHECK(Z.base.laplacian(0.4, 3) == Approx(1.0));
}

TEST_CASE("perturbation slope bound violation is detected")
{
    // w' = r^2 has Laplacian (d+1) r, unbounded, and |w'| exceeds eps r/d far out.
    RadialPotential w{"cubic", [](double x) { return x * x * x / 3; }, [](double x) { return x * x; },
                      [](double x) { return 2 * x; }, 3, 1.0};
    AttractionPotential W{w, w, 3, 0.01};
    CHECK_FALSE(check_perturbation_slope(W, logspace(1e-3, 10.0, 100)));
}

TEST_CASE("pareto tail check")
{
    const auto radii = logspace(0.1, 100.0, 200);
    CHECK(check_pareto_tail(potentials::quadratic(), 3, radii).passed);
    CHECK(check_pareto_tail(potentials::log_tail(), 3, radii).passed);
    const auto flat = check_pareto_tail(potentials::constant(1.0), 3, radii);
    CHECK_FALSE(flat.passed);
    CHECK(flat.reason.rfind("pareto tail failed", 0) == 0);
    CHECK_FALSE(check_pareto_tail(potentials::log_tail(), 1, radii).passed);
    CHECK_FALSE(check_pareto_tail(potentials::quadratic(), 3, radii, 1e12).passed);
    CHECK_THROWS_AS(check_pareto_tail(potentials::quadratic(), 3, logspace(0.1, 5.0, 10)), AggregationError);
}

TEST_CASE("compact support tail check")
{
    const auto radii = logspace(1.0, 1000.0, 300);
    CHECK(check_compact_support_tail(potentials::quadratic(), 3, 1.0, 1.0, radii));
    CHECK_FALSE(check_compact_support_tail(potentials::power_slope(1.0, -1.0), 3, 1.0, 1.0, radii));
    const auto edge = check_compact_support_tail(potentials::power_slope(1.0, -0.5), 3, 1.0, 1.0, radii);
    CHECK(edge.passed);
    CHECK(edge.worst_ratio == Approx(1.0));
    CHECK_THROWS_AS(check_compact_support_tail(potentials::quadratic(), 3, 1.0, 2.0, radii), AggregationError);
}

TEST_CASE("tabulated potential reproduces a cubic-slope source")
{
    std::vector<double> r, v, dv, d2v;
    for (double x : linspace(0.0, 2.0, 41)) {
        r.push_back(x);
        v.push_back(0.5 * x * x);
        dv.push_back(x);
        d2v.push_back(1.0);
    }
    const auto T = potentials::table(r, v, dv, d2v);
    for (double x : {0.0, 0.33, 1.01, 1.99, 2.5, -0.7}) {
        CHECK(T.value(x) == Approx(0.5 * x * x).margin(1e-14));
        CHECK(T.slope(x) == Approx(x).margin(1e-14));
        CHECK(T.laplacian(x, 3) == Approx(3.0).epsilon(1e-12));
    }

    const std::string path = "potential_table_test.csv";
    {
        std::ofstream out(path);
        out << "r,V,dV,d2V\n";
        for (std::size_t i = 0; i < r.size(); ++i)
            out << r[i] << ',' << v[i] << ',' << dv[i] << ',' << d2v[i] << '\n';
    }
    const auto C = potentials::table_from_csv(path);
    CHECK(C.slope(1.234) == Approx(1.234).epsilon(1e-12));
    std::remove(path.c_str());
    CHECK_THROWS_AS(potentials::table_from_csv("missing_table.csv"), AggregationError);
}
