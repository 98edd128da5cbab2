#pragma once

// Forward corruption processes and their bookkeeping: marginal scalings,
// the two-stage reverse time grid (uniform then geometric tail) with its
// normative validator, terminal priors, moment/score bound functionals,
// and deterministic marginal sampling.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/analytic_data.hpp"
#include "lab/atom_cloud.hpp"
#include "lab/rng.hpp"
#include "lab/smallvec.hpp"

namespace lab {

enum class Forward { vp, ve };

inline std::string forward_name(Forward f) { return f == Forward::vp ? "vp" : "ve"; }

inline Forward forward_from_name(const std::string& s) {
    if (s == "vp") return Forward::vp;
    if (s == "ve") return Forward::ve;
    throw std::invalid_argument("unknown forward process: " + s);
}

struct ForwardSpec {
    Forward kind = Forward::vp;

    // drift is linear, f_sde(t,x) = drift_coef * x
    double drift_coef() const { return kind == Forward::vp ? -1.0 : 0.0; }
    Vec drift(double, const Vec& x) const { return drift_coef() * x; }

    // squared diffusion coefficient g_sde(t)^2
    double g_sde2(double) const { return kind == Forward::vp ? 2.0 : 1.0; }

    // marginal law coefficients at forward time t > 0: x_t = f(t) y + g(t) z
    MarginalScaling scaling(double t) const {
        if (!(t > 0.0)) throw std::domain_error("ForwardSpec::scaling: need t > 0");
        if (kind == Forward::vp) {
            const double f = std::exp(-t);
            const double g2 = -std::expm1(-2.0 * t);  // 1 - e^{-2t}, accurate near 0
            return MarginalScaling(f, std::sqrt(g2));
        }
        return MarginalScaling(1.0, std::sqrt(t));
    }
};

// isotropic Gaussian law (priors, proposals)
struct GaussianLaw {
    Vec mean;
    double var = 1.0;

    double log_density(const Vec& x) const {
        const double d = static_cast<double>(x.size());
        return -0.5 * norm2(x - mean) / var -
               0.5 * d * std::log(6.283185307179586476925286766559 * var);
    }
    double density(const Vec& x) const { return std::exp(log_density(x)); }
    Vec sample(Rng& rng) const {
        Vec z = rng.normal_vec(mean.size());
        return mean + std::sqrt(var) * z;
    }
};

inline GaussianLaw prior(const ForwardSpec& fs, double T, std::size_t d) {
    if (!(T > 0.0)) throw std::domain_error("prior: need T > 0");
    GaussianLaw g;
    g.mean = Vec(d);
    g.var = fs.kind == Forward::vp ? 1.0 : T;
    return g;
}

// ---------------------------------------------------------------------------
// time grid

struct TimeGrid {
    double T = 0.0, delta = 0.0, eta = 0.0;
    std::vector<double> nodes;  // ascending, nodes.front()=0, nodes.back()=T-delta

    std::size_t steps() const { return nodes.empty() ? 0 : nodes.size() - 1; }
    double step(std::size_t k) const { return nodes[k + 1] - nodes[k]; }
};

// Two stages: [0, T-1] cut into equal steps of at most eta, then a geometric
// tail built backward from T-delta so the gap to T grows by (1+eta) per node
// until it reaches 1 at the stage boundary. The loop guards are exact, not
// epsilon-fudged, so every step obeys the validator rule below to rounding.
inline TimeGrid build_grid(double T, double delta, double eta) {
    if (!(T > 1.0)) throw std::invalid_argument("build_grid: need T > 1");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("build_grid: need delta in (0,1)");
    if (!(eta > 0.0)) throw std::invalid_argument("build_grid: need eta > 0");
    TimeGrid g;
    g.T = T;
    g.delta = delta;
    g.eta = eta;
    const double t1 = T - 1.0;
    const long long n1 = std::max(1LL, static_cast<long long>(std::ceil(t1 / eta)));
    const double h = t1 / static_cast<double>(n1);
    g.nodes.push_back(0.0);
    for (long long i = 1; i < n1; ++i) g.nodes.push_back(static_cast<double>(i) * h);
    g.nodes.push_back(t1);

    std::vector<double> gaps;  // gaps to T, ascending from delta, all < 1
    double u = delta;
    gaps.push_back(u);
    while (u * (1.0 + eta) < 1.0) {
        u *= 1.0 + eta;
        gaps.push_back(u);
    }
    for (auto it = gaps.rbegin(); it != gaps.rend(); ++it)
        if (T - *it > g.nodes.back()) g.nodes.push_back(T - *it);
    return g;
}

struct GridCheck {
    bool pass = true;
    long first_violation = -1;  // step index of first failing step, -1 otherwise
    std::string reason;
};

// Normative step-size rule: every step obeys eta_k <= eta*min{1, T-t_{k+1}}.
// Any ascending grid from 0 to T-delta satisfying it passes, two-stage or not.
inline GridCheck validate_grid(const TimeGrid& g, double eta, double tol = 1e-12) {
    GridCheck r;
    auto fail = [&](long idx, std::string why) {
        r.pass = false;
        r.first_violation = idx;
        r.reason = std::move(why);
        return r;
    };
    if (g.nodes.size() < 2) return fail(-1, "grid needs at least two nodes");
    if (std::abs(g.nodes.front()) > tol) return fail(-1, "first node must be 0");
    if (std::abs(g.nodes.back() - (g.T - g.delta)) > tol)
        return fail(-1, "last node must be T-delta");
    for (std::size_t k = 0; k + 1 < g.nodes.size(); ++k) {
        const double etak = g.nodes[k + 1] - g.nodes[k];
        if (!(etak > 0.0)) return fail(static_cast<long>(k), "nodes must be strictly ascending");
        const double cap = eta * std::min(1.0, g.T - g.nodes[k + 1]);
        if (etak > cap + tol)
            return fail(static_cast<long>(k),
                        "step " + std::to_string(k) + " exceeds eta*min{1, T-t_{k+1}}");
    }
    return r;
}

inline nlohmann::json grid_to_json(const TimeGrid& g) {
    return {{"T", g.T}, {"delta", g.delta}, {"eta", g.eta}, {"nodes", g.nodes}};
}

inline TimeGrid grid_from_json(const nlohmann::json& j) {
    TimeGrid g;
    g.T = j.at("T").get<double>();
    g.delta = j.at("delta").get<double>();
    g.eta = j.at("eta").get<double>();
    g.nodes = j.at("nodes").get<std::vector<double>>();
    return g;
}

// Pick eta so build_grid produces the requested number of steps (monotone
// bisection; the step count is weakly decreasing in eta). Returns the grid
// whose step count is closest to n_target, exact when attainable.
inline TimeGrid build_grid_with_steps(double T, double delta, std::size_t n_target) {
    if (n_target < 2) throw std::invalid_argument("build_grid_with_steps: need >= 2 steps");
    double lo = 1e-8, hi = std::max(4.0, 2.0 * (T - 1.0));  // steps(lo) huge, steps(hi) small
    auto count = [&](double eta) { return build_grid(T, delta, eta).steps(); };
    for (int it = 0; it < 200; ++it) {
        const double mid = std::sqrt(lo * hi);
        if (count(mid) > n_target) lo = mid;
        else hi = mid;
        if (hi / lo < 1.0 + 1e-14) break;
    }
    TimeGrid a = build_grid(T, delta, hi), b = build_grid(T, delta, lo);
    auto dist = [&](const TimeGrid& g) {
        return std::llabs(static_cast<long long>(g.steps()) - static_cast<long long>(n_target));
    };
    return dist(a) <= dist(b) ? a : b;
}

// ---------------------------------------------------------------------------
// closed-form bound functionals

struct BoundValue {
    double value = 0.0;
    bool exact = false;  // false: order-only, constant 1
};

// terminal mismatch between the data marginal at T and the sampling prior
inline BoundValue prior_tv_bound(const ForwardSpec& fs, const AtomCloud& cloud, double T) {
    if (!(T > 0.0)) throw std::domain_error("prior_tv_bound: need T > 0");
    const double d = static_cast<double>(cloud.dim);
    if (fs.kind == Forward::vp)
        return {std::sqrt(0.5 * d) * std::exp(-T), false};
    // Pinsker on KL <= E|X0|^2 / (2T)
    return {std::sqrt(cloud.second_moment() / (4.0 * T)), true};
}

// E|Y_t|^k bound functional; u = T - t is the remaining time
inline BoundValue moment_bound(const ForwardSpec& fs, int order, double R, double u, double d) {
    if (!(u > 0.0)) throw std::domain_error("moment_bound: need T - t > 0");
    if (order < 1 || order > 4) throw std::invalid_argument("moment_bound: order in 1..4");
    const double m = fs.kind == Forward::vp ? std::min(u, 1.0) : u;
    const double md = m * d;
    double v = 0.0;
    switch (order) {
        case 1: v = R + std::sqrt(md); break;
        case 2: v = R * R + md; break;
        case 3: v = R * R * R + std::pow(md, 1.5); break;
        case 4: v = R * R * R * R + md * md; break;
    }
    const bool exact = (fs.kind == Forward::ve && order == 2);
    return {v, exact};
}

// E|grad log q_t(X_t)|^2 <= d / g(t)^2 (exact constant)
inline BoundValue tweedie_second_moment_bound(const ForwardSpec& fs, double t, double d) {
    if (!(t > 0.0)) throw std::domain_error("tweedie_second_moment_bound: need t > 0");
    const double g2 = fs.scaling(t).g2();
    return {d / g2, true};
}

// ---------------------------------------------------------------------------
// deterministic forward sampling: x_i = f(t) y_{a_i} + g(t) z_i, stream i from seed

inline std::vector<Vec> sample_marginal(const AtomCloud& c, const ForwardSpec& fs, double t,
                                        std::size_t count, std::uint64_t seed) {
    const MarginalScaling sc = fs.scaling(t);
    const Rng root(seed);
    std::vector<Vec> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng r = root.derive(i);
        const std::size_t a = r.categorical(c.weights.data(), c.weights.size());
        out[i] = sc.f * c.atoms[a] + sc.g * r.normal_vec(c.dim);
    }
    return out;
}

}  // namespace lab
