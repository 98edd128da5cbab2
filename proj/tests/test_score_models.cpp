// Score fields: exactness of the mixture field, analytic structure of the
// sinusoidal perturbation, the tabulated oscillatory tail integral against
// frozen 40-digit references, and the empirical misfit meter.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lab/score_field.hpp"

using namespace lab;

namespace {

AtomCloud two_atoms() { return AtomCloud::make({Vec{1.0}, Vec{-1.0}}, {0.5, 0.5}); }

template <class F>
double fd5(F&& f, double x, double h) {
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
}

}  // namespace

TEST_CASE("exact field delegates to the closed forms") {
    const AtomCloud c = two_atoms();
    const ForwardSpec fs{Forward::vp};
    const ScoreField f = exact_field(c, fs);
    CHECK(f.dim == 1);
    CHECK(f.variant == "exact");
    const double t = 0.9;
    const Vec x{0.35};
    const MarginalScaling sc = fs.scaling(t);
    CHECK(f.s(t, x)[0] == score(c, sc, x)[0]);
    CHECK(f.jac(t, x)(0, 0) == score_jacobian(c, sc, x)(0, 0));
    CHECK(f.div(t, x) == score_divergence(c, sc, x));
}

TEST_CASE("sinusoidal perturbation") {
    const AtomCloud c = two_atoms();
    const ForwardSpec fs{Forward::ve};
    const double a = 0.05, m = 3.0;
    const ScoreField f = perturbed_field(c, fs, a, m);
    const ScoreField ex = exact_field(c, fs);
    const double t = 1.4;
    SECTION("misfit is exactly a*sin(m x) and bounded by a") {
        for (double x : {-2.0, -0.3, 0.0, 0.7, 1.9}) {
            const double diff = f.s(t, Vec{x})[0] - ex.s(t, Vec{x})[0];
            CHECK(diff == Catch::Approx(a * std::sin(m * x)).margin(1e-15));
            CHECK(std::abs(diff) <= a + 1e-15);
        }
    }
    SECTION("jacobian and divergence carry the analytic derivative") {
        for (double x : {-1.1, 0.4}) {
            const double jd = f.jac(t, Vec{x})(0, 0) - ex.jac(t, Vec{x})(0, 0);
            CHECK(jd == Catch::Approx(a * m * std::cos(m * x)).margin(1e-15));
            CHECK(f.div(t, Vec{x}) == Catch::Approx(f.jac(t, Vec{x})(0, 0)).margin(1e-14));
            const double fd = fd5([&](double u) { return f.s(t, Vec{u})[0]; }, x, 1e-4);
            CHECK(f.jac(t, Vec{x})(0, 0) == Catch::Approx(fd).margin(1e-8));
        }
    }
    SECTION("d = 2 perturbation is coordinatewise") {
        const AtomCloud c2 =
            AtomCloud::make({Vec{0.5, -0.5}, Vec{-0.5, 0.5}}, {0.5, 0.5});
        const ScoreField f2 = perturbed_field(c2, fs, a, m);
        const ScoreField e2 = exact_field(c2, fs);
        const Vec x{0.3, -0.8};
        const Vec d = f2.s(t, x) - e2.s(t, x);
        CHECK(d[0] == Catch::Approx(a * std::sin(m * x[0])).margin(1e-15));
        CHECK(d[1] == Catch::Approx(a * std::sin(m * x[1])).margin(1e-15));
        const double dv = f2.div(t, x) - e2.div(t, x);
        CHECK(dv ==
              Catch::Approx(a * m * (std::cos(m * x[0]) + std::cos(m * x[1]))).margin(1e-14));
    }
}

TEST_CASE("tabulated oscillatory tail integral, frozen references") {
    // R(x) = int_x^inf phi(y) sin(8 pi y) dy at 40 digits
    const double b = 8.0 * 3.14159265358979323846;
    const SineTail tail(b, 13.0, 1e-3);
    CHECK(tail(0.0) == Catch::Approx(0.015898659175748045).epsilon(1e-10));
    CHECK(tail(0.5) == Catch::Approx(0.014024922164449366).epsilon(1e-10));
    CHECK(tail(1.0) == Catch::Approx(0.0096276603426674277).epsilon(1e-10));
    CHECK(tail(-0.75) == Catch::Approx(0.011990174632693873).epsilon(1e-10));
    // beyond the table the two-term asymptotic takes over continuously
    CHECK(tail(12.999999) == Catch::Approx(tail(13.000001)).margin(1e-12));
}

TEST_CASE("oscillatory counterexample field") {
    const int n = 8;
    const double T = 1.0;
    SineCounterexample ce;
    const ScoreField f = sine_counterexample_field(n, T, &ce);
    SECTION("uniform proximity to the single-gaussian score") {
        const double cap = ce.sup_error_bound();
        CHECK(cap == Catch::Approx(1.0 / (T * n * 3.14159265358979323846)).epsilon(1e-15));
        double worst = 0.0;
        for (int i = 0; i <= 4000; ++i) {
            const double x = -5.0 + 10.0 * i / 4000.0;
            for (double tau : {0.02, 0.3, 0.8}) {
                worst = std::max(worst, std::abs(f.s(tau, Vec{x})[0] + x));
            }
        }
        CHECK(worst <= cap * (1.0 + 1e-9));
        // attained sup is (1/2) max|cos u|/(1+c sin u) / (T b), about 0.29 of the cap
        CHECK(worst > 0.25 * cap);
    }
    SECTION("density family is normalized and positive") {
        for (double tau : {0.0, 0.4, 1.0}) {
            const double mass =
                integrate([&](double x) { return ce.hat_density(tau, x); }, -9.0, 9.0, 256);
            CHECK(mass == Catch::Approx(1.0).epsilon(1e-12));
        }
        double dmin = 1.0;
        for (int i = 0; i <= 200; ++i) {
            const double x = -3.0 + 6.0 * i / 200.0;
            dmin = std::min(dmin, ce.hat_density(0.0, x) / SineTail::phi(x));
        }
        CHECK(dmin >= 0.5 - 1e-12);  // 1 + (1/2) sin >= 1/2
    }
    SECTION("field derivative matches a stencil") {
        for (double x : {-1.2, 0.1, 0.9}) {
            const double fd = fd5([&](double u) { return ce.svalue(0.3, u); }, x, 1e-5);
            CHECK(f.jac(0.3, Vec{x})(0, 0) == Catch::Approx(fd).margin(1e-6));
        }
    }
}

TEST_CASE("assumption meter") {
    const AtomCloud c = two_atoms();
    const ForwardSpec fs{Forward::vp};
    const TimeGrid grid = build_grid(4.0, 0.05, 0.25);
    SECTION("exact field has zero misfit") {
        const Assumptions a = measure_assumptions(exact_field(c, fs), c, fs, grid, 200, 3);
        CHECK(a.eps_score == 0.0);
        CHECK(a.eps_div == 0.0);
        CHECK(a.lipschitz > 0.0);
    }
    SECTION("perturbed field misfit is bounded by the amplitude budget") {
        const double amp = 0.1;
        const Assumptions a =
            measure_assumptions(perturbed_field(c, fs, amp, 5.0), c, fs, grid, 500, 3);
        CHECK(a.eps_score > 0.0);
        CHECK(a.eps_score <= amp * std::sqrt(grid.nodes.back()) * 1.001);
        CHECK(a.eps_div > 0.0);
        CHECK(a.eps_div <= amp * 5.0 * std::sqrt(grid.nodes.back()) * 1.001);
    }
    SECTION("worker count does not change the numbers") {
        const ScoreField f = perturbed_field(c, fs, 0.2, 2.0);
        const Assumptions a1 = measure_assumptions(f, c, fs, grid, 300, 17, 1);
        const Assumptions a4 = measure_assumptions(f, c, fs, grid, 300, 17, 4);
        CHECK(a1.eps_score == a4.eps_score);
        CHECK(a1.eps_div == a4.eps_div);
        CHECK(a1.lipschitz == a4.lipschitz);
        CHECK(a1.c0 == a4.c0);
    }
}
