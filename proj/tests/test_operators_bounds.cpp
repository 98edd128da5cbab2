#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "lab/operators_bounds.hpp"

using namespace lab;

namespace {

AtomCloud pair_cloud() {
    return AtomCloud::make({Vec{-1.0}, Vec{1.0}}, {0.5, 0.5});
}

AtomCloud skew_cloud() {
    return AtomCloud::make({Vec{-0.8}, Vec{0.3}, Vec{1.1}}, {0.25, 0.45, 0.3});
}

AtomCloud plane_cloud() {
    return AtomCloud::make({Vec{-0.9, 0.4}, Vec{0.7, -0.2}, Vec{0.1, 1.0}}, {0.3, 0.3, 0.4});
}

}  // namespace

TEST_CASE("error operators match closed forms and carry no time dependence") {
    const AtomCloud cloud = skew_cloud();
    const double a = 0.07, m = 3.0;

    SECTION("vp with exponential integrator") {
        const ForwardSpec fs = ForwardSpec{Forward::vp};
        const ScoreField field = perturbed_field(cloud, fs, a, m);
        const double T = 2.0, tk = 0.6, tk1 = 0.85;
        for (double z0 : {-1.7, -0.2, 0.9, 2.4}) {
            const Vec z{z0};
            // misfit of the perturbed field is a sin(m x), so the estimation
            // error has that value exactly and the divergence error its slope
            const Vec cf = estimation_error_closed_form(Scheme::exponential_integrator, fs,
                                                        field, cloud, T, tk, tk1, z);
            CHECK(cf[0] == Catch::Approx(a * std::sin(m * z0)).margin(1e-14));
            const Mat cj = divergence_error_closed_form(Scheme::exponential_integrator, fs,
                                                        field, cloud, T, tk, tk1, z);
            CHECK(cj(0, 0) == Catch::Approx(a * m * std::cos(m * z0)).margin(1e-13));
            for (double t : {tk, tk + 0.11, tk1 - 1e-9}) {
                const Vec phi = estimation_error_operator(Scheme::exponential_integrator, fs,
                                                          field, cloud, T, tk, tk1, t, z);
                CHECK(phi[0] == Catch::Approx(cf[0]).margin(1e-11));
                const Mat psi = divergence_error_operator(Scheme::exponential_integrator, fs,
                                                          field, cloud, T, tk, tk1, t, z);
                CHECK(psi(0, 0) == Catch::Approx(cj(0, 0)).margin(1e-11));
            }
        }
    }

    SECTION("ve with the ddim coefficient") {
        const ForwardSpec fs = ForwardSpec{Forward::ve};
        const ScoreField field = exact_field(cloud, fs);
        const double T = 4.0, tk = 1.0, tk1 = 1.5;
        const double cl = ddim_coef((T - tk) / (tk1 - tk));
        for (double z0 : {-1.1, 0.4, 1.9}) {
            const Vec z{z0};
            // exact field: closed form is (c_l - 1/2) grad log q at the step start
            const Vec sv = score(cloud, fs.scaling(T - tk), z);
            const Vec cf =
                estimation_error_closed_form(Scheme::ddim, fs, field, cloud, T, tk, tk1, z);
            CHECK(cf[0] == Catch::Approx((cl - 0.5) * sv[0]).margin(1e-14));
            for (double t : {tk + 0.05, tk + 0.37}) {
                const Vec phi =
                    estimation_error_operator(Scheme::ddim, fs, field, cloud, T, tk, tk1, t, z);
                CHECK(phi[0] == Catch::Approx(cf[0]).margin(1e-11));
                const Mat psi = divergence_error_operator(Scheme::ddim, fs, field, cloud, T, tk,
                                                          tk1, t, z);
                const Mat cj =
                    divergence_error_closed_form(Scheme::ddim, fs, field, cloud, T, tk, tk1, z);
                CHECK(psi(0, 0) == Catch::Approx(cj(0, 0)).margin(1e-11));
            }
        }
    }

    SECTION("pairings without a closed form are rejected") {
        const ForwardSpec fs = ForwardSpec{Forward::vp};
        const ScoreField field = exact_field(cloud, fs);
        CHECK_THROWS_AS(estimation_error_closed_form(Scheme::euler, fs, field, cloud, 2.0, 0.5,
                                                     0.75, Vec{0.1}),
                        std::invalid_argument);
        CHECK_THROWS_AS(divergence_error_closed_form(Scheme::euler, fs, field, cloud, 2.0, 0.5,
                                                     0.75, Vec{0.1}),
                        std::invalid_argument);
    }
}

TEST_CASE("operator identity report passes on both supported pairings") {
    const AtomCloud cloud = pair_cloud();
    {
        const ForwardSpec fs = ForwardSpec{Forward::vp};
        const ScoreField field = perturbed_field(cloud, fs, 0.05, 2.0);
        const TimeGrid grid = build_grid(2.0, 0.05, 0.25);
        const auto rep = operator_identity_report(Scheme::exponential_integrator, fs, field,
                                                  cloud, grid, 500, 11);
        CHECK(rep.pass);
        CHECK(rep.max_phi_dev <= 1e-10);
        CHECK(rep.max_psi_dev <= 1e-10);
        CHECK(rep.max_t_dev <= 1e-10);
    }
    {
        const ForwardSpec fs = ForwardSpec{Forward::ve};
        const ScoreField field = perturbed_field(cloud, fs, 0.05, 2.0);
        const TimeGrid grid = build_grid(4.0, 0.05, 0.25);
        const auto rep = operator_identity_report(Scheme::ddim, fs, field, cloud, grid, 500, 12);
        CHECK(rep.pass);
        CHECK(rep.max_phi_dev <= 1e-10);
    }
}

TEST_CASE("ratio tracker and certificate gate handle degenerate values") {
    detail::RatioTracker trk;
    trk.update(0.0, 0.0, {});
    CHECK(trk.max_ratio == 0.0);  // zero measured passes against any bound
    trk.update(0.5, 1.0, {{"tag", 1}});
    CHECK(trk.max_ratio == 0.5);
    CHECK(trk.at["tag"] == 1);
    trk.update(0.25, 1.0, {{"tag", 2}});
    CHECK(trk.at["tag"] == 1);  // smaller ratio does not displace the worst probe

    detail::RatioTracker inf_trk;
    inf_trk.update(1.0, 0.0, {});  // positive measured against zero bound
    CHECK(std::isinf(inf_trk.max_ratio));

    detail::RatioTracker nan_trk;
    nan_trk.update(std::nan(""), 1.0, {});
    CHECK(std::isnan(nan_trk.max_ratio));  // NaN must register as worst

    BoundCertificate c;
    c.max_ratio = nan_trk.max_ratio;
    c.finalize();
    CHECK_FALSE(c.pass);
    c.max_ratio = 1.0 + 2e-9;
    c.finalize();
    CHECK_FALSE(c.pass);
    c.max_ratio = 1.0 + 5e-10;
    c.finalize();
    CHECK(c.pass);
}

TEST_CASE("score bound certificates hold with exact constants") {
    ProbeSpec spec;
    spec.probes = 4000;
    spec.seed = 7;
    for (Forward kind : {Forward::vp, Forward::ve}) {
        const ForwardSpec fs = ForwardSpec{kind};
        for (const AtomCloud& cloud : {skew_cloud(), plane_cloud()}) {
            const auto certs = certify_score_bounds(cloud, fs, spec);
            REQUIRE(certs.size() == 3);
            for (const auto& c : certs) {
                INFO(forward_name(kind) << " " << c.bound_name << " d=" << cloud.dim
                                        << " ratio=" << c.max_ratio);
                CHECK(c.pass);
                CHECK(c.exact_constant);
                CHECK(c.max_ratio > 0.0);
                CHECK(c.max_ratio <= 1.0 + 1e-9);
                CHECK(c.probes == spec.probes);
            }
        }
    }
}

TEST_CASE("hessian envelope tightens at the center of a symmetric pair") {
    // at x = 0 the measured-to-bound ratio is |u - 1|/(1 + 2u) with
    // u = f^2 R^2 / g^2, which approaches 1 as the smoothing dominates
    const AtomCloud cloud = pair_cloud();
    const ForwardSpec fs = ForwardSpec{Forward::vp};
    const MarginalScaling sc = fs.scaling(3.0);
    const double u = sc.f * sc.f / sc.g2();
    REQUIRE(u < 0.01);
    const Mat h = score_jacobian(cloud, sc, Vec{0.0});
    const double measured = sym_spectral_norm(h);
    const double bound = (1.0 + 2.0 * sc.f * sc.f / sc.g2()) / sc.g2();
    CHECK(measured / bound <= 1.0 + 1e-12);
    CHECK(measured / bound >= 0.95);
    CHECK(measured / bound == Catch::Approx((1.0 - u) / (1.0 + 2.0 * u)).epsilon(1e-12));
}

TEST_CASE("time derivative envelopes hold with order-only caps") {
    ProbeSpec spec;
    spec.probes = 1500;
    spec.t_lo = 0.1;
    spec.t_hi = 2.5;
    spec.seed = 21;
    for (Forward kind : {Forward::vp, Forward::ve}) {
        const ForwardSpec fs = ForwardSpec{kind};
        const auto certs = certify_time_derivative_bounds(skew_cloud(), fs, spec);
        REQUIRE(certs.size() == 2);
        for (const auto& c : certs) {
            INFO(forward_name(kind) << " " << c.bound_name << " ratio=" << c.max_ratio);
            CHECK(c.pass);
            CHECK_FALSE(c.exact_constant);
            CHECK(c.cap == 10.0);
            CHECK(c.max_ratio > 0.0);
            CHECK(c.max_ratio <= 10.0);
        }
    }
}

TEST_CASE("moment envelopes hold and the ve second order form is attained at the radius") {
    const std::vector<double> taus{0.25, 0.5, 1.0, 2.0, 4.0};
    {
        // every atom on the unit sphere makes E|Y_u|^2 = R^2 + u d exactly
        const auto certs = certify_moment_bounds(pair_cloud(), ForwardSpec{Forward::ve}, 4.0,
                                                 taus, 4000, 31);
        REQUIRE(certs.size() == 4);
        CHECK(certs[1].bound_name == "moment_order_2");
        CHECK(certs[1].exact_constant);
        CHECK(certs[1].max_ratio == Catch::Approx(1.0).margin(1e-12));
        CHECK(certs[1].pass);
        for (const auto& c : certs) {
            INFO(c.bound_name << " ratio=" << c.max_ratio);
            CHECK(c.pass);
            CHECK(c.max_ratio > 0.0);
        }
    }
    {
        const auto certs = certify_moment_bounds(skew_cloud(), ForwardSpec{Forward::vp}, 4.0,
                                                 taus, 4000, 32);
        for (const auto& c : certs) {
            INFO(c.bound_name << " ratio=" << c.max_ratio);
            CHECK(c.pass);
            CHECK_FALSE(c.exact_constant);
        }
    }
    CHECK_THROWS_AS(certify_moment_bounds(pair_cloud(), ForwardSpec{Forward::ve}, 4.0, {}, 10, 1),
                    std::invalid_argument);
}

TEST_CASE("gaussian smoothing ratio is attained at a lone atom") {
    {
        const AtomCloud lone = AtomCloud::make({Vec{0.7}}, {1.0});
        const BoundCertificate c = gaussian_ratio_certificate(lone, 0.01, 0.01);
        CHECK(c.pass);
        // the sup over x of the density ratio sits at the atom and meets the
        // bound exactly for a single component
        CHECK(c.max_ratio == Catch::Approx(1.0).epsilon(1e-12));
    }
    {
        const BoundCertificate c = gaussian_ratio_certificate(plane_cloud(), 0.02, 0.03, 31);
        CHECK(c.pass);
        CHECK(c.max_ratio > 0.5);
        CHECK(c.max_ratio <= 1.0 + 1e-9);
    }
    CHECK_THROWS_AS(gaussian_ratio_certificate(pair_cloud(), 0.0, 0.01), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_ratio_certificate(pair_cloud(), 0.01, -0.01), std::invalid_argument);
    const AtomCloud wide = AtomCloud::make({Vec{0.0, 0.0, 0.0, 0.0}}, {1.0});
    CHECK_THROWS_AS(gaussian_ratio_certificate(wide, 0.01, 0.01), std::invalid_argument);
}

TEST_CASE("tweedie second moment certificate passes and a lone atom saturates it") {
    const std::vector<double> ts{0.3, 0.8, 1.6};
    {
        const AtomCloud lone = AtomCloud::make({Vec{0.4}}, {1.0});
        const BoundCertificate c =
            tweedie_certificate(lone, ForwardSpec{Forward::vp}, ts, 20000, 41);
        CHECK(c.pass);
        // E|grad log q|^2 = d/g^2 exactly for one atom; only the Monte Carlo
        // margin keeps the ratio below one
        CHECK(c.max_ratio > 0.9);
        CHECK(c.max_ratio <= 1.0 + 1e-9);
    }
    {
        const BoundCertificate c =
            tweedie_certificate(skew_cloud(), ForwardSpec{Forward::ve}, ts, 8000, 42);
        CHECK(c.pass);
        CHECK(c.max_ratio > 0.0);
    }
    CHECK_THROWS_AS(tweedie_certificate(pair_cloud(), ForwardSpec{Forward::vp}, {}, 10, 1),
                    std::invalid_argument);
}

TEST_CASE("prior gap certificates: exact pinsker for ve, order-only decay for vp") {
    {
        const auto certs =
            prior_gap_certificates(pair_cloud(), ForwardSpec{Forward::ve}, {2.0, 8.0, 32.0});
        REQUIRE(certs.size() == 1);
        CHECK(certs[0].bound_name == "prior_tv_pinsker");
        CHECK(certs[0].exact_constant);
        CHECK(certs[0].pass);
        CHECK(certs[0].max_ratio > 0.0);
        CHECK(certs[0].max_ratio <= 1.0 + 1e-9);
    }
    {
        const auto certs =
            prior_gap_certificates(skew_cloud(), ForwardSpec{Forward::vp}, {2.0, 4.0, 6.0});
        CHECK(certs[0].bound_name == "prior_tv_decay");
        CHECK_FALSE(certs[0].exact_constant);
        CHECK(certs[0].pass);
        CHECK(certs[0].max_ratio <= 10.0);
    }
    CHECK_THROWS_AS(prior_gap_certificates(plane_cloud(), ForwardSpec{Forward::vp}, {2.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(prior_gap_certificates(pair_cloud(), ForwardSpec{Forward::vp}, {}),
                    std::invalid_argument);
}

TEST_CASE("continuous tv certificate collapses to the terminal gap for the exact field") {
    const AtomCloud cloud = pair_cloud();
    const ForwardSpec fs = ForwardSpec{Forward::vp};
    const double T = 1.5, delta = 0.05;
    {
        const ScoreField field = exact_field(cloud, fs);
        const auto rep = continuous_tv_certificate(cloud, fs, field, T, delta, 1e-4, 16, 32, 32);
        CHECK(rep.pass);
        CHECK(rep.eps_score == 0.0);
        CHECK(rep.eps_div == 0.0);
        CHECK(rep.bound == rep.tv_start);
        // the exact flow transports q_T to q_delta, so the measured gap is the
        // terminal one up to quadrature and ode tolerances
        CHECK(rep.tv_measured == Catch::Approx(rep.tv_start).margin(2e-4));
        CHECK(rep.score_moment_integral <= rep.score_weight * rep.score_weight);
    }
    {
        const ScoreField field = perturbed_field(cloud, fs, 0.05, 3.0);
        const auto rep = continuous_tv_certificate(cloud, fs, field, T, delta, 1e-4, 16, 32, 32);
        CHECK(rep.pass);
        CHECK(rep.eps_score > 0.0);
        CHECK(rep.eps_div > 0.0);
        CHECK(rep.bound > rep.tv_start);
        CHECK(rep.slack > 0.0);
        const auto j = continuous_tv_to_json(rep);
        CHECK(j["pass"] == true);
        CHECK(j["bound"].get<double>() == rep.bound);
    }
    CHECK_THROWS_AS(
        continuous_tv_certificate(cloud, ForwardSpec{Forward::ve}, exact_field(cloud, fs), T,
                                  delta),
        std::invalid_argument);
    CHECK_THROWS_AS(continuous_tv_certificate(cloud, fs, exact_field(cloud, fs), 0.8, delta),
                    std::invalid_argument);
    CHECK_THROWS_AS(continuous_tv_certificate(cloud, fs, exact_field(cloud, fs), T, 1.5),
                    std::invalid_argument);
}

TEST_CASE("per step tv terms vanish for the exact field and certify the inequality") {
    const AtomCloud cloud = pair_cloud();
    DiscreteTvSpec spec;
    spec.x_panels = 24;
    spec.tv_panels = 32;

    SECTION("vp with exponential integrator") {
        const ForwardSpec fs = ForwardSpec{Forward::vp};
        const ScoreField field = exact_field(cloud, fs);
        const TimeGrid grid = build_grid_with_steps(2.0, 0.05, 24);
        const auto rep =
            discrete_tv_terms(Scheme::exponential_integrator, fs, field, cloud, grid, spec);
        CHECK(rep.pass);
        CHECK(rep.rows.size() == grid.steps());
        // terms (i) and (ii) are the estimation and divergence misfits, zero
        // for the exact field up to rounding in the assembled operator
        CHECK(rep.sum_i <= 1e-8);
        CHECK(rep.sum_ii <= 1e-8);
        CHECK(rep.sum_iii > 0.0);
        CHECK(rep.sum_iv > 0.0);
        CHECK(rep.max_eta_lip > 0.0);
        CHECK(rep.max_clipped_mass < 1e-8);
        CHECK(rep.tv_lhs <= rep.bound + rep.tol + 3.0 * rep.quad_err);
        const auto j = discrete_tv_to_json(rep);
        CHECK(j["rows"].size() == rep.rows.size());
        CHECK(j["pass"] == true);
    }

    SECTION("discretization terms scale linearly in the step size") {
        const ForwardSpec fs = ForwardSpec{Forward::vp};
        const ScoreField field = exact_field(cloud, fs);
        const auto coarse = discrete_tv_terms(Scheme::exponential_integrator, fs, field, cloud,
                                              build_grid_with_steps(2.0, 0.05, 16), spec);
        const auto fine = discrete_tv_terms(Scheme::exponential_integrator, fs, field, cloud,
                                            build_grid_with_steps(2.0, 0.05, 32), spec);
        const double r =
            (coarse.sum_iii + coarse.sum_iv) / (fine.sum_iii + fine.sum_iv);
        CHECK(r > 1.6);
        CHECK(r < 2.4);
    }

    SECTION("ve with ddim keeps a genuine first term yet the bound holds") {
        const ForwardSpec fs = ForwardSpec{Forward::ve};
        const ScoreField field = perturbed_field(cloud, fs, 0.03, 2.0);
        const TimeGrid grid = build_grid_with_steps(2.0, 0.05, 24);
        const auto rep = discrete_tv_terms(Scheme::ddim, fs, field, cloud, grid, spec);
        CHECK(rep.pass);
        CHECK(rep.sum_i > 1e-4);
        CHECK(rep.tv_lhs <= rep.bound + rep.tol + 3.0 * rep.quad_err);
    }

    SECTION("dimension other than one is rejected") {
        const ForwardSpec fs = ForwardSpec{Forward::vp};
        const ScoreField field = exact_field(plane_cloud(), fs);
        CHECK_THROWS_AS(discrete_tv_terms(Scheme::exponential_integrator, fs, field,
                                          plane_cloud(), build_grid_with_steps(2.0, 0.05, 8),
                                          spec),
                        std::invalid_argument);
    }
}

TEST_CASE("certificate serialization round trips") {
    ProbeSpec spec;
    spec.probes = 200;
    const auto certs = certify_score_bounds(pair_cloud(), ForwardSpec{Forward::vp}, spec);
    const auto summary = certificates_summary(certs);
    CHECK(summary["all_pass"] == true);
    CHECK(summary["count"] == certs.size());
    CHECK(summary["certificates"].size() == certs.size());
    const auto j = certificate_to_json(certs[0]);
    CHECK(j["bound_name"] == certs[0].bound_name);
    CHECK(j["max_ratio"].get<double>() == certs[0].max_ratio);

    const std::string path = "cert_roundtrip_tmp.csv";
    save_certificates_csv(certs, path);
    const CsvTable t = read_csv(path);
    REQUIRE(t.header.size() == 5);
    CHECK(t.header[0] == "bound_name");
    REQUIRE(t.rows.size() == certs.size());
    CHECK(t.rows[0][t.column("bound_name")] == certs[0].bound_name);
    CHECK(std::stod(t.rows[0][t.column("max_ratio")]) == certs[0].max_ratio);
    std::filesystem::remove(path);
}
