#pragma once

// Closed-form marginals of an atom cloud pushed through a linear-Gaussian
// corruption x = f*y + g*z: density, score, score Jacobian (= log-density
// Hessian), divergence, gradient of the Hessian trace, and finite-difference
// time derivatives. Everything runs through responsibility moments computed
// with log-sum-exp stabilization, so far-field queries stay finite.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "lab/atom_cloud.hpp"
#include "lab/smallvec.hpp"

namespace lab {

struct MarginalScaling {
    double f = 1.0;  // data coefficient
    double g = 1.0;  // noise standard deviation, > 0

    MarginalScaling() = default;
    MarginalScaling(double f_, double g_) : f(f_), g(g_) {
        if (!std::isfinite(f) || !std::isfinite(g) || g <= 0.0)
            throw std::domain_error("MarginalScaling: need finite f and g > 0");
    }
    double g2() const { return g * g; }
};

inline double logsumexp(const std::vector<double>& v) {
    double m = -INFINITY;
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

// posterior atom probabilities given the corrupted coordinate x
inline std::vector<double> responsibilities(const AtomCloud& c, const MarginalScaling& sc,
                                            const Vec& x) {
    if (x.size() != c.dim) throw std::invalid_argument("responsibilities: dim mismatch");
    const double inv2g2 = 1.0 / (2.0 * sc.g2());
    std::vector<double> lw(c.atoms.size());
    double m = -INFINITY;
    for (std::size_t i = 0; i < c.atoms.size(); ++i) {
        lw[i] = (c.weights[i] > 0.0 ? std::log(c.weights[i]) : -INFINITY) -
                norm2(x - sc.f * c.atoms[i]) * inv2g2;
        m = std::max(m, lw[i]);
    }
    double s = 0.0;
    for (double& v : lw) {
        v = std::exp(v - m);
        s += v;
    }
    for (double& v : lw) v /= s;
    return lw;
}

inline double log_marginal_density(const AtomCloud& c, const MarginalScaling& sc, const Vec& x) {
    if (x.size() != c.dim) throw std::invalid_argument("log_marginal_density: dim mismatch");
    const double inv2g2 = 1.0 / (2.0 * sc.g2());
    std::vector<double> lw(c.atoms.size());
    for (std::size_t i = 0; i < c.atoms.size(); ++i)
        lw[i] = (c.weights[i] > 0.0 ? std::log(c.weights[i]) : -INFINITY) -
                norm2(x - sc.f * c.atoms[i]) * inv2g2;
    const double d = static_cast<double>(c.dim);
    return logsumexp(lw) - 0.5 * d * std::log(6.283185307179586476925286766559 * sc.g2());
}

inline double marginal_density(const AtomCloud& c, const MarginalScaling& sc, const Vec& x) {
    return std::exp(log_marginal_density(c, sc, x));
}

// responsibility moments used by every derivative formula below
struct RespMoments {
    Vec m1;        // E_r[y]
    Mat m2;        // E_r[y y^T]
    double s2 = 0; // E_r[|y|^2]
    Vec m3;        // E_r[|y|^2 y]
};

inline RespMoments resp_moments(const AtomCloud& c, const MarginalScaling& sc, const Vec& x) {
    const std::vector<double> r = responsibilities(c, sc, x);
    RespMoments mm;
    mm.m1 = Vec(c.dim);
    mm.m2 = Mat(c.dim);
    mm.m3 = Vec(c.dim);
    for (std::size_t i = 0; i < c.atoms.size(); ++i) {
        const Vec& y = c.atoms[i];
        const double ri = r[i];
        if (ri == 0.0) continue;
        const double y2 = norm2(y);
        mm.m1 += ri * y;
        mm.s2 += ri * y2;
        mm.m3 += (ri * y2) * y;
        for (std::size_t a = 0; a < c.dim; ++a)
            for (std::size_t b = 0; b < c.dim; ++b) mm.m2(a, b) += ri * y[a] * y[b];
    }
    return mm;
}

// grad log q = -(x - f E_r[y]) / g^2
inline Vec score(const AtomCloud& c, const MarginalScaling& sc, const Vec& x) {
    const RespMoments mm = resp_moments(c, sc, x);
    return (-1.0 / sc.g2()) * (x - sc.f * mm.m1);
}

// Hessian of log q: (1/g^2) * (-I + (f^2/g^2) Cov_r(y))
inline Mat score_jacobian(const AtomCloud& c, const MarginalScaling& sc, const Vec& x) {
    const RespMoments mm = resp_moments(c, sc, x);
    const double g2 = sc.g2();
    Mat h = mm.m2 - outer(mm.m1, mm.m1);
    h *= sc.f * sc.f / (g2 * g2);
    for (std::size_t i = 0; i < c.dim; ++i) h(i, i) -= 1.0 / g2;
    return h;
}

// divergence of the score by the scalar moment route (no matrix assembly)
inline double score_divergence(const AtomCloud& c, const MarginalScaling& sc, const Vec& x) {
    const RespMoments mm = resp_moments(c, sc, x);
    const double g2 = sc.g2();
    const double d = static_cast<double>(c.dim);
    return -d / g2 + (sc.f * sc.f / (g2 * g2)) * (mm.s2 - norm2(mm.m1));
}

// gradient of tr(Hessian log q):
// (f^3/g^6) [ E_r(|y|^2 y) - E_r(|y|^2) E_r(y) - 2 E_r(y y^T) E_r(y) + 2 |E_r(y)|^2 E_r(y) ]
inline Vec grad_trace_hessian(const AtomCloud& c, const MarginalScaling& sc, const Vec& x) {
    const RespMoments mm = resp_moments(c, sc, x);
    const double g2 = sc.g2();
    const double k = sc.f * sc.f * sc.f / (g2 * g2 * g2);
    Vec v = mm.m3 - mm.s2 * mm.m1 - 2.0 * (mm.m2 * mm.m1) + (2.0 * norm2(mm.m1)) * mm.m1;
    return k * v;
}

// time derivatives of score and of tr(Hessian), via centered differences in t
// with one Richardson level; h scales with t so small-time marginals stay valid
struct TimeDerivatives {
    Vec dscore_dt;
    double dtrace_dt;
};

template <class ScalingFn>
auto time_derivatives(const AtomCloud& c, ScalingFn&& scaling_at, double t, const Vec& x) {
    const double h = 1e-4 * std::max(t, 1e-3);
    if (t - h <= 0.0) throw std::domain_error("time_derivatives: t too small for stencil");
    auto ds = [&](double hh) {
        const MarginalScaling sp = scaling_at(t + hh), sm = scaling_at(t - hh);
        return (0.5 / hh) * (score(c, sp, x) - score(c, sm, x));
    };
    auto dtr = [&](double hh) {
        const MarginalScaling sp = scaling_at(t + hh), sm = scaling_at(t - hh);
        double tp = 0.0, tm = 0.0;
        {
            Mat jp = score_jacobian(c, sp, x), jm = score_jacobian(c, sm, x);
            tp = trace(jp);
            tm = trace(jm);
        }
        return (tp - tm) / (2.0 * hh);
    };
    const Vec d1 = ds(h), d2 = ds(0.5 * h);
    const double t1 = dtr(h), t2 = dtr(0.5 * h);
    TimeDerivatives out;
    out.dscore_dt = (1.0 / 3.0) * (4.0 * d2 - d1);
    out.dtrace_dt = (4.0 * t2 - t1) / 3.0;
    return out;
}

}  // namespace lab
