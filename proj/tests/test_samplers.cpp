// Discrete reverse samplers: step formulas against hand-rolled arithmetic,
// interpolant consistency by finite differences, Newton inversion round trips,
// a linear-Gaussian pushforward oracle, and continuous reference flows against
// single-atom closed forms.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lab/samplers.hpp"

using namespace lab;

namespace {

AtomCloud two_atoms() { return AtomCloud::make({Vec{1.0}, Vec{-1.0}}, {0.5, 0.5}); }

template <class F>
double fd5(F&& f, double x, double h) {
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
}

}  // namespace

TEST_CASE("scheme naming and applicability") {
    CHECK(scheme_from_name("euler") == Scheme::euler);
    CHECK(scheme_from_name("ei") == Scheme::exponential_integrator);
    CHECK(scheme_from_name("ddim") == Scheme::ddim);
    CHECK_THROWS_AS(scheme_from_name("heun"), std::invalid_argument);
    CHECK(scheme_name(Scheme::ddim) == "ddim");
    CHECK_THROWS_AS(check_scheme(Scheme::exponential_integrator, ForwardSpec{Forward::ve}),
                    std::invalid_argument);
    CHECK_NOTHROW(check_scheme(Scheme::exponential_integrator, ForwardSpec{Forward::vp}));
    CHECK_NOTHROW(check_scheme(Scheme::ddim, ForwardSpec{Forward::ve}));
}

TEST_CASE("ddim score multiplier") {
    CHECK(ddim_coef(1.0) == Catch::Approx(1.0).epsilon(1e-15));
    CHECK(ddim_coef(2.0) == Catch::Approx(0.58578643762690495).epsilon(1e-15));
    CHECK(ddim_coef(1e12) == Catch::Approx(0.5).epsilon(1e-6));
    CHECK_THROWS_AS(ddim_coef(0.5), std::domain_error);
    // l(1 - sqrt(1 - 1/l)) direct form agrees where it is stable
    for (double l : {1.5, 3.0, 10.0}) {
        CHECK(ddim_coef(l) == Catch::Approx(l * (1.0 - std::sqrt(1.0 - 1.0 / l))).epsilon(1e-12));
    }
}

TEST_CASE("step formulas by hand") {
    const AtomCloud c = two_atoms();
    const double T = 4.0, tk = 1.3, tk1 = 1.55;
    const double eta = tk1 - tk, tau = T - tk;
    const Vec x{0.42};

    SECTION("euler on vp") {
        const ForwardSpec fs{Forward::vp};
        const ScoreField f = exact_field(c, fs);
        const double s = f.s(tau, x)[0];
        const double manual = x[0] + eta * x[0] + eta * s;  // dc=-1, g2/2=1
        CHECK(step(Scheme::euler, fs, f, T, tk, tk1, x)[0] ==
              Catch::Approx(manual).epsilon(1e-15));
    }
    SECTION("euler on ve") {
        const ForwardSpec fs{Forward::ve};
        const ScoreField f = exact_field(c, fs);
        const double s = f.s(tau, x)[0];
        CHECK(step(Scheme::euler, fs, f, T, tk, tk1, x)[0] ==
              Catch::Approx(x[0] + 0.5 * eta * s).epsilon(1e-15));
    }
    SECTION("exponential integrator on vp") {
        const ForwardSpec fs{Forward::vp};
        const ScoreField f = exact_field(c, fs);
        const double s = f.s(tau, x)[0];
        const double e = std::exp(eta);
        CHECK(step(Scheme::exponential_integrator, fs, f, T, tk, tk1, x)[0] ==
              Catch::Approx(e * x[0] + (e - 1.0) * s).epsilon(1e-15));
    }
    SECTION("ddim on ve uses the full-step ratio") {
        const ForwardSpec fs{Forward::ve};
        const ScoreField f = exact_field(c, fs);
        const double s = f.s(tau, x)[0];
        const double cl = ddim_coef(tau / eta);
        CHECK(step(Scheme::ddim, fs, f, T, tk, tk1, x)[0] ==
              Catch::Approx(x[0] + eta * cl * s).epsilon(1e-15));
    }
    CHECK_THROWS_AS(step(Scheme::euler, ForwardSpec{Forward::vp},
                         exact_field(c, ForwardSpec{Forward::vp}), T, tk, tk, x),
                    std::invalid_argument);
}

TEST_CASE("interpolant consistency") {
    const AtomCloud c = two_atoms();
    struct Case {
        Scheme sch;
        Forward fw;
    };
    const Case cases[] = {{Scheme::euler, Forward::vp},
                          {Scheme::euler, Forward::ve},
                          {Scheme::exponential_integrator, Forward::vp},
                          {Scheme::ddim, Forward::ve},
                          {Scheme::ddim, Forward::vp}};
    const double T = 5.0, tk = 2.1, tk1 = 2.4;
    for (const Case& cs : cases) {
        const ForwardSpec fs{cs.fw};
        const ScoreField f = cs.fw == Forward::vp ? perturbed_field(c, fs, 0.05, 2.0)
                                                  : exact_field(c, fs);
        for (double z0 : {-1.4, 0.25, 1.7}) {
            const Vec z{z0};
            // endpoints: identity at t_k, the full step at t_{k+1}
            CHECK(interpolant(cs.sch, fs, f, T, tk, tk1, tk, z)[0] ==
                  Catch::Approx(z0).margin(1e-14));
            CHECK(interpolant(cs.sch, fs, f, T, tk, tk1, tk1, z)[0] ==
                  Catch::Approx(step(cs.sch, fs, f, T, tk, tk1, z)[0]).margin(1e-14));
            const double tm = 0.5 * (tk + tk1);
            // time derivative
            const double dt_fd = fd5(
                [&](double t) { return interpolant(cs.sch, fs, f, T, tk, tk1, t, z)[0]; }, tm,
                1e-5);
            CHECK(interpolant_dt(cs.sch, fs, f, T, tk, tk1, tm, z)[0] ==
                  Catch::Approx(dt_fd).margin(1e-9));
            // spatial jacobian
            const double jz_fd = fd5(
                [&](double u) { return interpolant(cs.sch, fs, f, T, tk, tk1, tm, Vec{u})[0]; },
                z0, 1e-5);
            CHECK(interpolant_jac(cs.sch, fs, f, T, tk, tk1, tm, z)(0, 0) ==
                  Catch::Approx(jz_fd).margin(1e-9));
            // mixed derivative
            const double mj_fd = fd5(
                [&](double u) {
                    return interpolant_dt(cs.sch, fs, f, T, tk, tk1, tm, Vec{u})[0];
                },
                z0, 1e-5);
            CHECK(interpolant_dt_jac(cs.sch, fs, f, T, tk, tk1, tm, z)(0, 0) ==
                  Catch::Approx(mj_fd).margin(1e-8));
        }
    }
}

TEST_CASE("newton inversion round trip") {
    const AtomCloud c = two_atoms();
    const double T = 6.0, tk = 3.0, tk1 = 3.2;
    struct Case {
        Scheme sch;
        Forward fw;
    };
    const Case cases[] = {{Scheme::euler, Forward::vp},
                          {Scheme::exponential_integrator, Forward::vp},
                          {Scheme::ddim, Forward::ve}};
    for (const Case& cs : cases) {
        const ForwardSpec fs{cs.fw};
        const ScoreField f = perturbed_field(c, fs, 0.1, 3.0);
        for (double t : {tk1, 0.5 * (tk + tk1)}) {
            for (double z0 : {-2.0, -0.3, 0.6, 2.4}) {
                const Vec z{z0};
                const Vec y = interpolant(cs.sch, fs, f, T, tk, tk1, t, z);
                const Vec back = invert_interpolant(cs.sch, fs, f, T, tk, tk1, t, y);
                CHECK(std::abs(back[0] - z0) < 1e-10);
            }
        }
    }
    SECTION("2-d round trip") {
        const AtomCloud c2 = AtomCloud::make({Vec{0.8, -0.2}, Vec{-0.8, 0.4}}, {0.5, 0.5});
        const ForwardSpec fs{Forward::vp};
        const ScoreField f = perturbed_field(c2, fs, 0.05, 2.0);
        const Vec z{0.7, -1.1};
        const Vec y = interpolant(Scheme::exponential_integrator, fs, f, T, tk, tk1, tk1, z);
        const Vec back =
            invert_interpolant(Scheme::exponential_integrator, fs, f, T, tk, tk1, tk1, y);
        CHECK(norm(back - z) < 1e-10);
    }
}

TEST_CASE("reverse runs are deterministic and finite") {
    const AtomCloud c = two_atoms();
    const ForwardSpec fs{Forward::vp};
    const ScoreField f = exact_field(c, fs);
    const TimeGrid grid = build_grid(4.0, 0.05, 0.2);
    const StartLaw start = StartLaw::marginal_start(c, fs, grid.T);
    const ReverseRun r1 = run_reverse(Scheme::exponential_integrator, fs, f, grid, start, 64, 7, 1);
    const ReverseRun r4 = run_reverse(Scheme::exponential_integrator, fs, f, grid, start, 64, 7, 4);
    REQUIRE(r1.states.size() == 64);
    for (std::size_t p = 0; p < 64; ++p) {
        REQUIRE(r1.states[p].size() == grid.nodes.size());
        for (std::size_t k = 0; k < grid.nodes.size(); ++k) {
            CHECK(r1.states[p][k][0] == r4.states[p][k][0]);
            CHECK(std::isfinite(r1.states[p][k][0]));
            CHECK(r1.logdet[p][k] == r4.logdet[p][k]);
        }
    }
    // cumulative logdet increments match fresh per-step evaluations
    const std::size_t p = 5;
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < grid.nodes.size(); ++k) {
        acc += step_logdet(Scheme::exponential_integrator, fs, f, grid.T, grid.nodes[k],
                           grid.nodes[k + 1], grid.nodes[k + 1], r1.states[p][k]);
        CHECK(r1.logdet[p][k + 1] == Catch::Approx(acc).margin(1e-13));
    }
}

TEST_CASE("linear gaussian pushforward oracle") {
    // single atom at the origin: every map is linear, so the pushforward of the
    // prior stays gaussian with a product-of-squares variance
    const AtomCloud c0 = AtomCloud::make({Vec{0.0}}, {1.0});
    struct Case {
        Scheme sch;
        Forward fw;
    };
    const Case cases[] = {{Scheme::euler, Forward::vp},
                          {Scheme::exponential_integrator, Forward::vp},
                          {Scheme::ddim, Forward::ve}};
    for (const Case& cs : cases) {
        const ForwardSpec fs{cs.fw};
        const ScoreField f = exact_field(c0, fs);
        const TimeGrid grid = build_grid(3.0, 0.05, 0.25);
        const StartLaw start = StartLaw::prior_start(fs, grid.T, 1);
        double var = prior(fs, grid.T, 1).var;
        for (std::size_t k = 0; k + 1 < grid.nodes.size(); ++k) {
            const double a =
                interpolant_jac(cs.sch, fs, f, grid.T, grid.nodes[k], grid.nodes[k + 1],
                                grid.nodes[k + 1], Vec{0.0})(0, 0);
            var *= a * a;
        }
        GaussianLaw law;
        law.mean = Vec{0.0};
        law.var = var;
        for (double x : {-1.2, 0.0, 0.8}) {
            CHECK(pushforward_log_density(cs.sch, fs, f, grid, start, grid.steps(), Vec{x}) ==
                  Catch::Approx(law.log_density(Vec{x})).margin(1e-9));
        }
    }
}

TEST_CASE("pushforward mass is conserved") {
    const AtomCloud c = two_atoms();
    const ForwardSpec fs{Forward::vp};
    const ScoreField f = perturbed_field(c, fs, 0.1, 2.0);
    const TimeGrid grid = build_grid(3.0, 0.1, 0.5);
    const StartLaw start = StartLaw::marginal_start(c, fs, grid.T);
    const double mass = integrate(
        [&](double x) {
            return std::exp(
                pushforward_log_density(Scheme::euler, fs, f, grid, start, grid.steps(), Vec{x}));
        },
        -8.0, 8.0, 400);
    CHECK(mass == Catch::Approx(1.0).epsilon(5e-7));
}

TEST_CASE("continuous reference against single-atom closed forms") {
    SECTION("vp: Y(t) = Y0 g(T-t)/g(T)") {
        const AtomCloud c0 = AtomCloud::make({Vec{0.0}}, {1.0});
        const ForwardSpec fs{Forward::vp};
        const ScoreField f = exact_field(c0, fs);
        const double T = 3.0, t_to = T - 0.05;
        auto gfun = [&](double tau) { return fs.scaling(tau).g; };
        for (double y0 : {-1.5, 0.4, 2.0}) {
            const Vec y = continuous_reference(fs, f, T, 0.0, t_to, Vec{y0});
            CHECK(y[0] == Catch::Approx(y0 * gfun(T - t_to) / gfun(T)).epsilon(1e-8));
        }
    }
    SECTION("ve: Y(t) = mu + (Y0 - mu) sqrt((T-t)/T)") {
        const double mu = 0.7;
        const AtomCloud ca = AtomCloud::make({Vec{mu}}, {1.0});
        const ForwardSpec fs{Forward::ve};
        const ScoreField f = exact_field(ca, fs);
        const double T = 2.0, t_to = T - 0.1;
        for (double y0 : {-1.0, 1.3}) {
            const Vec y = continuous_reference(fs, f, T, 0.0, t_to, Vec{y0});
            CHECK(y[0] ==
                  Catch::Approx(mu + (y0 - mu) * std::sqrt((T - t_to) / T)).epsilon(1e-8));
        }
    }
    SECTION("flow transport maps the start gaussian to the scaled gaussian") {
        const AtomCloud c0 = AtomCloud::make({Vec{0.0}}, {1.0});
        const ForwardSpec fs{Forward::vp};
        const ScoreField f = exact_field(c0, fs);
        const double T = 3.0, t_q = T - 0.2;
        const GaussianLaw pi = prior(fs, T, 1);
        const double ratio = fs.scaling(T - t_q).g / fs.scaling(T).g;
        GaussianLaw out;
        out.mean = Vec{0.0};
        out.var = pi.var * ratio * ratio;
        for (double x : {-0.9, 0.3}) {
            const double lp = flow_log_density(
                fs, f, T, 0.0, t_q, Vec{x}, [&](const Vec& z) { return pi.log_density(z); });
            CHECK(lp == Catch::Approx(out.log_density(Vec{x})).margin(1e-7));
        }
        // exact-score flow carries the marginal at T to the marginal at T - t
        const double lq = flow_log_density(
            fs, f, T, 0.0, t_q, Vec{0.5},
            [&](const Vec& z) { return log_marginal_density(c0, fs.scaling(T), z); });
        CHECK(lq ==
              Catch::Approx(log_marginal_density(c0, fs.scaling(T - t_q), Vec{0.5})).margin(1e-7));
    }
}
