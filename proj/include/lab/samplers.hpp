#pragma once

// Deterministic reverse-time samplers on a TimeGrid: frozen-drift Euler, the
// exponential integrator for the mean-reverting forward process, and the
// implicit-model step with coefficient c_l = 1/(1 + sqrt(1 - 1/l)), l = (T-t_k)/eta_k.
// Each step map has a within-step interpolant F_t, with analytic time
// derivative and spatial Jacobian, Newton inversion, and log|det grad F|
// accumulation, which is what turns particle runs into density pushforwards.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lab/forward.hpp"
#include "lab/ode.hpp"
#include "lab/parallel.hpp"
#include "lab/score_field.hpp"
#include "lab/smallvec.hpp"

namespace lab {

enum class Scheme { euler, exponential_integrator, ddim };

inline std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::euler: return "euler";
        case Scheme::exponential_integrator: return "ei";
        default: return "ddim";
    }
}

inline Scheme scheme_from_name(const std::string& s) {
    if (s == "euler") return Scheme::euler;
    if (s == "ei") return Scheme::exponential_integrator;
    if (s == "ddim") return Scheme::ddim;
    throw std::invalid_argument("unknown scheme: " + s);
}

inline void check_scheme(Scheme sch, const ForwardSpec& fs) {
    if (sch == Scheme::exponential_integrator && fs.kind != Forward::vp)
        throw std::invalid_argument("exponential integrator step is defined for vp only");
}

// c_l = l(1 - sqrt(1 - 1/l)) in the cancellation-free form 1/(1 + sqrt(1 - 1/l))
inline double ddim_coef(double l) {
    if (!(l >= 1.0 - 1e-12)) throw std::domain_error("ddim_coef: need l >= 1");
    return 1.0 / (1.0 + std::sqrt(std::max(0.0, 1.0 - 1.0 / l)));
}

namespace detail {
struct StepCtx {
    double tau;   // forward time at the step anchor, T - t_k
    double eta;   // full step length
    double dc;    // drift coefficient of the forward sde
    double g2;    // squared diffusion at tau
    double coef;  // scheme-specific score multiplier on a unit of time
};

inline StepCtx step_ctx(Scheme sch, const ForwardSpec& fs, double T, double tk, double tk1) {
    check_scheme(sch, fs);
    if (!(tk1 > tk)) throw std::invalid_argument("step: need t_{k+1} > t_k");
    if (!(T - tk > 0.0)) throw std::domain_error("step: t_k must lie below T");
    StepCtx c;
    c.tau = T - tk;
    c.eta = tk1 - tk;
    c.dc = fs.drift_coef();
    c.g2 = fs.g_sde2(c.tau);
    switch (sch) {
        case Scheme::euler: c.coef = 0.5 * c.g2; break;
        case Scheme::exponential_integrator: c.coef = 0.0; break;  // handled separately
        case Scheme::ddim: c.coef = ddim_coef(c.tau / c.eta) * c.g2; break;
    }
    return c;
}
}  // namespace detail

// one full step x_{k+1} = F_{t_{k+1}}(x_k)
inline Vec step(Scheme sch, const ForwardSpec& fs, const ScoreField& field, double T, double tk,
                double tk1, const Vec& x) {
    const auto c = detail::step_ctx(sch, fs, T, tk, tk1);
    const Vec sv = field.s(c.tau, x);
    if (sch == Scheme::exponential_integrator) {
        const double e = std::exp(c.eta);
        return e * x + (e - 1.0) * sv;
    }
    return x - c.eta * c.dc * x + c.eta * c.coef * sv;
}

// within-step interpolant F_t, t in [t_k, t_{k+1}]
inline Vec interpolant(Scheme sch, const ForwardSpec& fs, const ScoreField& field, double T,
                       double tk, double tk1, double t, const Vec& z) {
    const auto c = detail::step_ctx(sch, fs, T, tk, tk1);
    if (t < tk - 1e-12 || t > tk1 + 1e-12)
        throw std::invalid_argument("interpolant: t outside [t_k, t_{k+1}]");
    const double dt = t - tk;
    const Vec sv = field.s(c.tau, z);
    if (sch == Scheme::exponential_integrator) {
        const double e = std::exp(dt);
        return e * z + (e - 1.0) * sv;
    }
    return z - dt * c.dc * z + dt * c.coef * sv;
}

// d/dt F_t(z)
inline Vec interpolant_dt(Scheme sch, const ForwardSpec& fs, const ScoreField& field, double T,
                          double tk, double tk1, double t, const Vec& z) {
    const auto c = detail::step_ctx(sch, fs, T, tk, tk1);
    const double dt = t - tk;
    const Vec sv = field.s(c.tau, z);
    if (sch == Scheme::exponential_integrator) {
        const double e = std::exp(dt);
        return e * z + e * sv;
    }
    return -c.dc * z + c.coef * sv;
}

// spatial Jacobian grad F_t(z)
inline Mat interpolant_jac(Scheme sch, const ForwardSpec& fs, const ScoreField& field, double T,
                           double tk, double tk1, double t, const Vec& z) {
    const auto c = detail::step_ctx(sch, fs, T, tk, tk1);
    const double dt = t - tk;
    Mat j = field.jac(c.tau, z);
    if (sch == Scheme::exponential_integrator) {
        const double e = std::exp(dt);
        j *= (e - 1.0);
        for (std::size_t i = 0; i < j.n; ++i) j(i, i) += e;
        return j;
    }
    j *= dt * c.coef;
    for (std::size_t i = 0; i < j.n; ++i) j(i, i) += 1.0 - dt * c.dc;
    return j;
}

// grad_z of d/dt F_t(z) (enters the curvature operator and remainder terms)
inline Mat interpolant_dt_jac(Scheme sch, const ForwardSpec& fs, const ScoreField& field, double T,
                              double tk, double tk1, double t, const Vec& z) {
    const auto c = detail::step_ctx(sch, fs, T, tk, tk1);
    const double dt = t - tk;
    Mat j = field.jac(c.tau, z);
    if (sch == Scheme::exponential_integrator) {
        const double e = std::exp(dt);
        j *= e;
        for (std::size_t i = 0; i < j.n; ++i) j(i, i) += e;
        return j;
    }
    j *= c.coef;
    for (std::size_t i = 0; i < j.n; ++i) j(i, i) -= c.dc;
    return j;
}

// Newton inversion of F_t with analytic Jacobian and step damping.
inline Vec invert_interpolant(Scheme sch, const ForwardSpec& fs, const ScoreField& field, double T,
                              double tk, double tk1, double t, const Vec& y,
                              double tol = 1e-12, int max_iter = 100) {
    // initial guess: invert the score-free linear part
    Vec z = y;
    {
        const double dt = t - tk;
        const double lin = sch == Scheme::exponential_integrator
                               ? std::exp(dt)
                               : 1.0 - dt * fs.drift_coef();
        z *= 1.0 / lin;
    }
    double res = norm(interpolant(sch, fs, field, T, tk, tk1, t, z) - y);
    for (int it = 0; it < max_iter; ++it) {
        if (res <= tol * std::max(1.0, norm(y))) return z;
        const Mat j = interpolant_jac(sch, fs, field, T, tk, tk1, t, z);
        const Vec r = interpolant(sch, fs, field, T, tk, tk1, t, z) - y;
        Vec dz;
        try {
            dz = lu_solve(j, r);
        } catch (const std::runtime_error&) {
            throw std::runtime_error("invert_interpolant: singular interpolant Jacobian");
        }
        double lambda = 1.0;
        for (int bt = 0; bt < 40; ++bt) {
            const Vec cand = z - lambda * dz;
            const double rn = norm(interpolant(sch, fs, field, T, tk, tk1, t, cand) - y);
            if (rn < res * (1.0 - 1e-4 * lambda) || rn <= tol * std::max(1.0, norm(y))) {
                z = cand;
                res = rn;
                break;
            }
            lambda *= 0.5;
            if (bt == 39)
                throw std::runtime_error("invert_interpolant: line search stalled (map may be singular)");
        }
    }
    throw std::runtime_error("invert_interpolant: no convergence in max_iter");
}

inline double step_logdet(Scheme sch, const ForwardSpec& fs, const ScoreField& field, double T,
                          double tk, double tk1, double t, const Vec& z) {
    return log_abs_det(interpolant_jac(sch, fs, field, T, tk, tk1, t, z));
}

// ---------------------------------------------------------------------------
// start laws for reverse runs: the sampling prior, or the exact data marginal
// at time T (isolates discretization error from prior mismatch)

struct StartLaw {
    enum class Kind { gaussian, data_marginal } kind = Kind::gaussian;
    GaussianLaw gauss;
    AtomCloud cloud;      // used by data_marginal
    ForwardSpec fs;       // used by data_marginal
    double T = 0.0;       // used by data_marginal

    static StartLaw prior_start(const ForwardSpec& fs, double T, std::size_t d) {
        StartLaw s;
        s.kind = Kind::gaussian;
        s.gauss = prior(fs, T, d);
        return s;
    }
    static StartLaw marginal_start(const AtomCloud& cloud, const ForwardSpec& fs, double T) {
        StartLaw s;
        s.kind = Kind::data_marginal;
        s.cloud = cloud;
        s.fs = fs;
        s.T = T;
        return s;
    }

    double log_density(const Vec& x) const {
        if (kind == Kind::gaussian) return gauss.log_density(x);
        return log_marginal_density(cloud, fs.scaling(T), x);
    }
    Vec sample(Rng& rng) const {
        if (kind == Kind::gaussian) return gauss.sample(rng);
        const MarginalScaling sc = fs.scaling(T);
        const std::size_t a = rng.categorical(cloud.weights.data(), cloud.weights.size());
        return sc.f * cloud.atoms[a] + sc.g * rng.normal_vec(cloud.dim);
    }
};

struct ReverseRun {
    Scheme scheme = Scheme::euler;
    ForwardSpec fs;
    ScoreField field;
    TimeGrid grid;
    StartLaw start;
    std::uint64_t seed = 0;
    std::vector<std::vector<Vec>> states;     // [particle][node]
    std::vector<std::vector<double>> logdet;  // cumulative per node, 0 at node 0
};

inline ReverseRun run_reverse(Scheme sch, const ForwardSpec& fs, const ScoreField& field,
                              const TimeGrid& grid, const StartLaw& start, std::size_t particles,
                              std::uint64_t seed, int jobs = 1) {
    check_scheme(sch, fs);
    if (grid.nodes.size() < 2) throw std::invalid_argument("run_reverse: degenerate grid");
    ReverseRun run;
    run.scheme = sch;
    run.fs = fs;
    run.field = field;
    run.grid = grid;
    run.start = start;
    run.seed = seed;
    run.states.assign(particles, {});
    run.logdet.assign(particles, {});
    const Rng root(seed);
    parallel_for(particles, jobs, [&](std::size_t p) {
        Rng r = root.derive(p);
        Vec x = start.sample(r);
        std::vector<Vec> path{x};
        std::vector<double> ld{0.0};
        for (std::size_t k = 0; k + 1 < grid.nodes.size(); ++k) {
            const double tk = grid.nodes[k], tk1 = grid.nodes[k + 1];
            ld.push_back(ld.back() + step_logdet(sch, fs, field, grid.T, tk, tk1, tk1, x));
            x = step(sch, fs, field, grid.T, tk, tk1, x);
            if (!all_finite(x)) throw std::runtime_error("run_reverse: state diverged");
            path.push_back(x);
        }
        run.states[p] = std::move(path);
        run.logdet[p] = std::move(ld);
    });
    return run;
}

inline void save_run_csv(const ReverseRun& run, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_run_csv: cannot open " + path);
    const std::size_t d = run.field.dim;
    out << "particle,node,t";
    for (std::size_t i = 0; i < d; ++i) out << ",x" << i;
    out << ",cum_logdet\r\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (std::size_t p = 0; p < run.states.size(); ++p)
        for (std::size_t k = 0; k < run.states[p].size(); ++k) {
            out << p << ',' << k << ',';
            put(run.grid.nodes[k]);
            for (std::size_t i = 0; i < d; ++i) {
                out << ',';
                put(run.states[p][k][i]);
            }
            out << ',';
            put(run.logdet[p][k]);
            out << "\r\n";
        }
}

// log-density of the pushforward of `start` through the first k full steps,
// by inverting the composed map and accumulating log-Jacobians at preimages
inline double pushforward_log_density(Scheme sch, const ForwardSpec& fs, const ScoreField& field,
                                      const TimeGrid& grid, const StartLaw& start, std::size_t k,
                                      const Vec& x) {
    if (k > grid.steps()) throw std::invalid_argument("pushforward_log_density: node out of range");
    Vec z = x;
    double ld = 0.0;
    for (std::size_t j = k; j-- > 0;) {
        const double tj = grid.nodes[j], tj1 = grid.nodes[j + 1];
        z = invert_interpolant(sch, fs, field, grid.T, tj, tj1, tj1, z);
        ld += step_logdet(sch, fs, field, grid.T, tj, tj1, tj1, z);
    }
    return start.log_density(z) - ld;
}

inline double pushforward_density(const ReverseRun& run, std::size_t k, const Vec& x) {
    return std::exp(
        pushforward_log_density(run.scheme, run.fs, run.field, run.grid, run.start, k, x));
}

// ---------------------------------------------------------------------------
// continuous reference flow dY/dt = -(f_sde(T-t,Y) - 1/2 g^2(T-t) s(T-t,Y))

struct ReverseDrift {
    ForwardSpec fs;
    ScoreField field;
    double T = 0.0;

    Vec operator()(double t, const Vec& y) const {
        const double tau = T - t;
        return -fs.drift_coef() * y + 0.5 * fs.g_sde2(tau) * field.s(tau, y);
    }
    double divergence(double t, const Vec& y) const {
        const double tau = T - t;
        return -fs.drift_coef() * static_cast<double>(y.size()) +
               0.5 * fs.g_sde2(tau) * field.div(tau, y);
    }
};

inline Vec continuous_reference(const ForwardSpec& fs, const ScoreField& field, double T,
                                double t_from, double t_to, const Vec& y0,
                                const OdeOptions& opt = {}) {
    const ReverseDrift b{fs, field, T};
    return ode_integrate([&](double t, const Vec& y) { return b(t, y); }, t_from, t_to, y0, opt);
}

// density of the flow-transported law at (t_query, x) given the start law's
// log-density at t_from, via backward characteristics with log-Jacobian
template <class LogDensity>
double flow_log_density(const ForwardSpec& fs, const ScoreField& field, double T, double t_from,
                        double t_query, const Vec& x, LogDensity&& log_p0,
                        const OdeOptions& opt = {}) {
    const ReverseDrift b{fs, field, T};
    const std::size_t d = x.size();
    Vec aug(d + 1);
    for (std::size_t i = 0; i < d; ++i) aug[i] = x[i];
    aug[d] = 0.0;
    aug = ode_integrate(
        [&](double t, const Vec& y) {
            Vec st(d);
            for (std::size_t i = 0; i < d; ++i) st[i] = y[i];
            const Vec dy = b(t, st);
            Vec out(d + 1);
            for (std::size_t i = 0; i < d; ++i) out[i] = dy[i];
            out[d] = b.divergence(t, st);
            return out;
        },
        t_query, t_from, aug, opt);
    Vec z(d);
    for (std::size_t i = 0; i < d; ++i) z[i] = aug[i];
    // aug[d] = int_{t_query}^{t_from} div b = -int_{t_from}^{t_query} div b
    return log_p0(z) + aug[d];
}

}  // namespace lab
