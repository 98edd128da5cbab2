#pragma once

// Score fields fed to the samplers: the exact mixture score, sinusoidal
// perturbations of it, and the 1-d oscillatory field whose reverse flow stays
// uniformly close to the true one while ending a fixed TV distance away.
// Fields expose value, Jacobian, and divergence as separate callables so
// closed-form divergences stay on an independent code path from the Jacobian.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lab/analytic_data.hpp"
#include "lab/forward.hpp"
#include "lab/parallel.hpp"
#include "lab/quadrature.hpp"
#include "lab/rng.hpp"

namespace lab {

struct ScoreField {
    std::size_t dim = 0;
    std::string variant;
    nlohmann::json params;
    std::function<Vec(double, const Vec&)> s;     // s(t, x), t = forward time
    std::function<Mat(double, const Vec&)> jac;   // spatial Jacobian of s
    std::function<double(double, const Vec&)> div;  // divergence of s
};

inline ScoreField exact_field(const AtomCloud& cloud, const ForwardSpec& fs) {
    ScoreField f;
    f.dim = cloud.dim;
    f.variant = "exact";
    f.params = {{"forward", forward_name(fs.kind)}};
    f.s = [cloud, fs](double t, const Vec& x) { return score(cloud, fs.scaling(t), x); };
    f.jac = [cloud, fs](double t, const Vec& x) { return score_jacobian(cloud, fs.scaling(t), x); };
    f.div = [cloud, fs](double t, const Vec& x) { return score_divergence(cloud, fs.scaling(t), x); };
    return f;
}

// exact score plus a*sin(m x_i) per coordinate: bounded misfit, analytic Jacobian
inline ScoreField perturbed_field(const AtomCloud& cloud, const ForwardSpec& fs, double amplitude,
                                  double wavenumber) {
    if (!std::isfinite(amplitude) || !std::isfinite(wavenumber))
        throw std::invalid_argument("perturbed_field: non-finite parameters");
    ScoreField f;
    f.dim = cloud.dim;
    f.variant = "perturbed";
    f.params = {{"forward", forward_name(fs.kind)}, {"amplitude", amplitude},
                {"wavenumber", wavenumber}};
    const double a = amplitude, m = wavenumber;
    f.s = [cloud, fs, a, m](double t, const Vec& x) {
        Vec v = score(cloud, fs.scaling(t), x);
        for (std::size_t i = 0; i < x.size(); ++i) v[i] += a * std::sin(m * x[i]);
        return v;
    };
    f.jac = [cloud, fs, a, m](double t, const Vec& x) {
        Mat j = score_jacobian(cloud, fs.scaling(t), x);
        for (std::size_t i = 0; i < x.size(); ++i) j(i, i) += a * m * std::cos(m * x[i]);
        return j;
    };
    f.div = [cloud, fs, a, m](double t, const Vec& x) {
        double dv = score_divergence(cloud, fs.scaling(t), x);
        for (std::size_t i = 0; i < x.size(); ++i) dv += a * m * std::cos(m * x[i]);
        return dv;
    };
    return f;
}

// ---------------------------------------------------------------------------
// 1-d counterexample field (OU forward from N(0,1), d=1).
//
// With b = 2*pi*n and R(x) = int_x^inf phi(y) sin(b y) dy, the field
//   s(tau, x) = R(x) / (2T * hat_q(tau, x)) - x,
//   hat_q(tau, x) = phi(x) (1 + ((T-tau)/(2T)) sin(b x)),
// drives the reverse ODE started from N(0,1) to the law hat_q(0, .) exactly,
// while |s - (-x)| <= 1/(T n pi) everywhere. R is tabulated once by cumulative
// quadrature of its analytic derivative; queries add an exact sub-panel
// correction, and a two-term integration-by-parts tail covers |x| > x_lim.

class SineTail {
  public:
    SineTail(double b, double x_lim, double h) : b_(b), x_lim_(x_lim) {
        const std::size_t n = static_cast<std::size_t>(std::ceil(x_lim / h)) + 1;
        h_ = x_lim / static_cast<double>(n - 1);
        table_.resize(n);
        table_[n - 1] = asym(x_lim);
        const GLRule r = gl_rule(10);
        for (std::size_t j = n - 1; j-- > 0;) {
            const double a = h_ * static_cast<double>(j);
            table_[j] = table_[j + 1] + gl_panel([&](double y) { return integrand(y); },
                                                 a, a + h_, r);
        }
    }

    // R(x) = int_x^inf phi(y) sin(b y) dy. R is even (the full-line integral
    // vanishes), so queries run on |x|; the cumulative table lives on [0, x_lim]
    // and never sums through the central bulk, which keeps it relatively
    // accurate deep into the tail.
    double operator()(double x) const {
        const double ax = std::abs(x);
        if (ax >= x_lim_) return asym(ax);
        std::size_t j = static_cast<std::size_t>(ax / h_);
        if (j >= table_.size() - 1) j = table_.size() - 2;
        const GLRule r = gl_rule(10);
        return table_[j] -
               gl_panel([&](double y) { return integrand(y); }, h_ * static_cast<double>(j),
                        ax, r);
    }

    double integrand(double y) const { return phi(y) * std::sin(b_ * y); }
    static double phi(double y) {
        return std::exp(-0.5 * y * y) * 0.39894228040143267793994605993438;
    }

  private:
    double asym(double x) const {
        const double p = phi(x);
        return p * std::cos(b_ * x) / b_ + x * p * std::sin(b_ * x) / (b_ * b_);
    }
    double b_, x_lim_, h_;
    std::vector<double> table_;
};

struct SineCounterexample {
    int n = 0;
    double T = 0.0;
    double b = 0.0;
    std::shared_ptr<SineTail> tail;

    // density of the simulated reverse state at forward time tau (reverse time T-tau)
    double hat_density(double tau, double x) const {
        return SineTail::phi(x) * (1.0 + ((T - tau) / (2.0 * T)) * std::sin(b * x));
    }
    // d/dt of the reverse-time density at reverse time t (linear in t)
    double hat_density_dt(double x) const {
        return SineTail::phi(x) * std::sin(b * x) / (2.0 * T);
    }
    double final_density(double x) const { return hat_density(0.0, x); }
    double start_density(double x) const { return SineTail::phi(x); }
    double sup_error_bound() const { return 1.0 / (T * n * 3.14159265358979323846); }

    double svalue(double tau, double x) const {
        return (*tail)(x) / (2.0 * T * hat_density(tau, x)) - x;
    }
    double sderiv(double tau, double x) const {
        const double q = hat_density(tau, x);
        const double c = (T - tau) / (2.0 * T);
        const double phi = SineTail::phi(x);
        const double dq = -x * q + phi * c * b * std::cos(b * x);
        const double R = (*tail)(x);
        const double dR = -phi * std::sin(b * x);
        return (dR * q - R * dq) / (2.0 * T * q * q) - 1.0;
    }
};

inline ScoreField sine_counterexample_field(int n, double T, SineCounterexample* out = nullptr) {
    if (n < 1) throw std::invalid_argument("sine_counterexample_field: need n >= 1");
    if (!(T > 0.0)) throw std::invalid_argument("sine_counterexample_field: need T > 0");
    SineCounterexample ce;
    ce.n = n;
    ce.T = T;
    ce.b = 2.0 * 3.14159265358979323846 * n;
    ce.tail = std::make_shared<SineTail>(ce.b, 13.0, std::min(1e-3, 1.0 / (8.0 * n)));
    if (out) *out = ce;
    ScoreField f;
    f.dim = 1;
    f.variant = "sine_counterexample";
    f.params = {{"n", n}, {"T", T}};
    f.s = [ce](double tau, const Vec& x) { return Vec{ce.svalue(tau, x[0])}; };
    f.jac = [ce](double tau, const Vec& x) {
        Mat j(1);
        j(0, 0) = ce.sderiv(tau, x[0]);
        return j;
    };
    f.div = [ce](double tau, const Vec& x) { return ce.sderiv(tau, x[0]); };
    return f;
}

// ---------------------------------------------------------------------------
// empirical misfit / regularity numbers for a field against the exact score

struct Assumptions {
    double eps_score = 0.0;  // sqrt(sum_k eta_k E|s - grad log q|^2)
    double eps_div = 0.0;    // sqrt(sum_k eta_k E tr(D D), D = jac - hess)
    double lipschitz = 0.0;  // max spectral norm of the field Jacobian + pair ratios
    double c0 = 0.0;         // max_k |s(T - t_k, 0)|
};

inline Assumptions measure_assumptions(const ScoreField& field, const AtomCloud& cloud,
                                       const ForwardSpec& fs, const TimeGrid& grid,
                                       std::size_t n_mc, std::uint64_t seed, int jobs = 1) {
    Assumptions out;
    const std::size_t K = grid.steps();
    std::vector<double> acc_s(K, 0.0), acc_d(K, 0.0), acc_l(K, 0.0);
    const Rng root(seed);
    parallel_for(K, jobs, [&](std::size_t k) {
        const double tau = grid.T - grid.nodes[k];
        const MarginalScaling sc = fs.scaling(tau);
        const Rng node_rng = root.derive(k);
        double ss = 0.0, sd = 0.0, lmax = 0.0;
        Vec prev_x, prev_s;
        for (std::size_t i = 0; i < n_mc; ++i) {
            Rng r = node_rng.derive(i);
            const std::size_t a = r.categorical(cloud.weights.data(), cloud.weights.size());
            const Vec x = sc.f * cloud.atoms[a] + sc.g * r.normal_vec(cloud.dim);
            const Vec sv = field.s(tau, x);
            ss += norm2(sv - score(cloud, sc, x));
            Mat dlt = field.jac(tau, x) - score_jacobian(cloud, sc, x);
            sd += trace(matmul(dlt, dlt));
            Mat j = field.jac(tau, x);
            // symmetrize before the eigen pass; fields may carry tiny asymmetry
            Mat sym(j.n);
            for (std::size_t p = 0; p < j.n; ++p)
                for (std::size_t q = 0; q < j.n; ++q) sym(p, q) = 0.5 * (j(p, q) + j(q, p));
            lmax = std::max(lmax, sym_spectral_norm(sym));
            if (i > 0 && norm(x - prev_x) > 1e-9)
                lmax = std::max(lmax, norm(sv - prev_s) / norm(x - prev_x));
            prev_x = x;
            prev_s = sv;
        }
        acc_s[k] = ss / static_cast<double>(n_mc);
        acc_d[k] = sd / static_cast<double>(n_mc);
        acc_l[k] = lmax;
    });
    double es = 0.0, ed = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        es += grid.step(k) * acc_s[k];
        ed += grid.step(k) * acc_d[k];
        out.lipschitz = std::max(out.lipschitz, acc_l[k]);
        const Vec zero(cloud.dim);
        out.c0 = std::max(out.c0, norm(field.s(grid.T - grid.nodes[k], zero)));
    }
    out.eps_score = std::sqrt(es);
    out.eps_div = std::sqrt(ed);
    return out;
}

}  // namespace lab
