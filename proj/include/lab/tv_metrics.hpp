#pragma once

// Total-variation metrology. d=1 quadrature locates |p-q| kinks (sign changes
// of p-q) and splits panels there; d=2 uses tensor panels with refinement
// error; the MC route importance-samples from a caller-supplied Gaussian
// mixture proposal. Also: backward-characteristic density transport for
// arbitrary 1-d drifts, the density-evolution identity checker, and the
// oscillatory-counterexample report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lab/ode.hpp"
#include "lab/parallel.hpp"
#include "lab/quadrature.hpp"
#include "lab/rng.hpp"
#include "lab/score_field.hpp"
#include "lab/smallvec.hpp"

namespace lab {

using Density1 = std::function<double(double)>;

inline std::pair<double, double> window_from_moments(
    const std::vector<std::pair<double, double>>& mean_sd, double k = 10.0) {
    if (mean_sd.empty()) throw std::invalid_argument("window_from_moments: empty");
    double lo = INFINITY, hi = -INFINITY;
    for (auto [m, s] : mean_sd) {
        lo = std::min(lo, m - k * s);
        hi = std::max(hi, m + k * s);
    }
    return {lo, hi};
}

// zeros of f located by scan + bisection; returns ascending interior points.
// A scan point where f is exactly 0 is itself a crossing (both endpoints of a
// zero run are emitted; duplicates collapse downstream).
template <class F>
std::vector<double> find_crossings(F&& f, double a, double b, int scan_points) {
    std::vector<double> out;
    const double h = (b - a) / scan_points;
    double x0 = a, f0 = f(a);
    for (int i = 1; i <= scan_points; ++i) {
        const double x1 = a + i * h, f1 = f(x1);
        if (f0 == 0.0 && f1 != 0.0 && i > 1) {
            out.push_back(x0);
        } else if (f1 == 0.0 && f0 != 0.0) {
            out.push_back(x1);
        } else if ((f0 < 0.0 && f1 > 0.0) || (f0 > 0.0 && f1 < 0.0)) {
            double lo = x0, hi = x1, flo = f0;
            for (int it = 0; it < 50; ++it) {
                const double mid = 0.5 * (lo + hi), fm = f(mid);
                if ((flo < 0.0) == (fm < 0.0)) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            out.push_back(0.5 * (lo + hi));
        }
        x0 = x1;
        f0 = f1;
    }
    return out;
}

struct TvResult {
    double tv = 0.0;
    double refine_err = 0.0;  // |last refinement delta|
    double mass_p = 0.0, mass_q = 0.0;
};

// 1/2 int |p - q| over [a,b]; crossings of p-q become panel boundaries so the
// integrand is smooth on every panel
inline TvResult tv_quadrature(const Density1& p, const Density1& q, double a, double b,
                              int panels = 1024, int scan_points = 0,
                              const std::vector<double>* known_breaks = nullptr) {
    if (!(b > a)) throw std::invalid_argument("tv_quadrature: empty window");
    auto diff = [&](double x) { return p(x) - q(x); };
    std::vector<double> breaks;
    if (known_breaks) breaks = *known_breaks;
    else breaks = find_crossings(diff, a, b, scan_points > 0 ? scan_points : 4 * panels);
    auto absdiff = [&](double x) { return std::abs(diff(x)); };
    const double c = integrate_split(absdiff, a, b, breaks, (b - a) / panels);
    const double fine = integrate_split(absdiff, a, b, breaks, 0.5 * (b - a) / panels);
    TvResult r;
    r.tv = 0.5 * fine;
    r.refine_err = 0.5 * std::abs(fine - c);
    r.mass_p = integrate(p, a, b, panels);
    r.mass_q = integrate(q, a, b, panels);
    return r;
}

using Density = std::function<double(const Vec&)>;

// d=2 tensor-panel variant (no kink handling; refinement delta is the error proxy)
inline TvResult tv_quadrature_2d(const Density& p, const Density& q, double ax, double bx,
                                 double ay, double by, int panels_per_axis = 64) {
    auto sweep = [&](int m) {
        const GLRule r = gl_rule(8);
        const double hx = (bx - ax) / m, hy = (by - ay) / m;
        double s = 0.0, mp = 0.0, mq = 0.0;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                const double cx = ax + (i + 0.5) * hx, cy = ay + (j + 0.5) * hy;
                for (int u = 0; u < r.m; ++u)
                    for (int v = 0; v < r.m; ++v) {
                        const Vec x{cx + 0.5 * hx * r.x[u], cy + 0.5 * hy * r.x[v]};
                        const double w = r.w[u] * r.w[v] * 0.25 * hx * hy;
                        const double pv = p(x), qv = q(x);
                        s += w * std::abs(pv - qv);
                        mp += w * pv;
                        mq += w * qv;
                    }
            }
        return std::array<double, 3>{s, mp, mq};
    };
    const auto coarse = sweep(panels_per_axis);
    const auto fine = sweep(2 * panels_per_axis);
    TvResult r;
    r.tv = 0.5 * fine[0];
    r.refine_err = 0.5 * std::abs(fine[0] - coarse[0]);
    r.mass_p = fine[1];
    r.mass_q = fine[2];
    return r;
}

struct TvMcResult {
    double tv = 0.0;
    double stderr_ = 0.0;
};

// importance-sampled TV with a Gaussian-mixture proposal; per-index streams,
// serial summation order, so the result is independent of worker count
inline TvMcResult tv_monte_carlo(const Density& p, const Density& q,
                                 const std::vector<GaussianLaw>& proposal,
                                 const std::vector<double>& prop_weights, std::size_t n,
                                 std::uint64_t seed, int jobs = 1) {
    if (proposal.empty() || proposal.size() != prop_weights.size())
        throw std::invalid_argument("tv_monte_carlo: bad proposal");
    const Rng root(seed);
    std::vector<double> vals(n);
    parallel_for(n, jobs, [&](std::size_t i) {
        Rng r = root.derive(i);
        const std::size_t c = r.categorical(prop_weights.data(), prop_weights.size());
        const Vec x = proposal[c].sample(r);
        double rd = 0.0;
        for (std::size_t j = 0; j < proposal.size(); ++j)
            rd += prop_weights[j] * proposal[j].density(x);
        vals[i] = 0.5 * std::abs(p(x) - q(x)) / rd;
    });
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n) * std::max<double>(1.0, static_cast<double>(n) - 1.0);
    return {mean, std::sqrt(var)};
}

struct DensityGrid {
    std::vector<double> xs;
    std::vector<double> values;
};

inline void save_density_csv(const DensityGrid& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_density_csv: cannot open " + path);
    out << "x,density\r\n";
    char buf[64];
    for (std::size_t i = 0; i < g.xs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", g.xs[i]);
        out << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", g.values[i]);
        out << buf << "\r\n";
    }
}

// ---------------------------------------------------------------------------
// generic 1-d characteristic transport: log-density of the law pushed by
// drift v from time t0 to t, evaluated by backward integration of (x, log J)

struct Drift1 {
    std::function<double(double, double)> v;    // v(t, x)
    std::function<double(double, double)> div;  // d/dx v(t, x)
};

inline double transported_log_density(const Drift1& drift, double t0, double t, double x,
                                      const std::function<double(double)>& log_rho0,
                                      const OdeOptions& opt = {}) {
    Vec aug{x, 0.0};
    aug = ode_integrate(
        [&](double s, const Vec& y) {
            return Vec{drift.v(s, y[0]), drift.div(s, y[0])};
        },
        t, t0, aug, opt);
    return log_rho0(aug[0]) + aug[1];
}

// ---------------------------------------------------------------------------
// density-evolution identity check: d/dt TV(p_t, q_t) against
// -int_{p>q} (div v_p - div v_q) q - int_{p>q} (v_p - v_q) (d/dx log q) q

struct TvRateSetup {
    Drift1 drift_p, drift_q;
    std::function<double(double)> log_p0, log_q0;
    double t0 = 0.0;
    double a = 0.0, b = 0.0;      // spatial window
    std::vector<double> times;    // output times, all > t0
    int base_points = 1200;       // uniform grid intervals at level 0
    double base_dt = 2e-3;        // centered time step at level 0
    OdeOptions ode{1e-10, 1e-12};
};

struct TvRateRow {
    double t = 0.0, tv = 0.0, lhs = 0.0, rhs = 0.0, residual = 0.0, rel_residual = 0.0;
};

struct TvRateLevel {
    int points = 0;
    double dt = 0.0;
    std::vector<TvRateRow> rows;
    double max_rel_residual = 0.0;
};

namespace detail {
// trapezoid of |p-q| with sign-change nodes located by linear interpolation
inline double tv_from_grid(const std::vector<double>& xs, const std::vector<double>& p,
                           const std::vector<double>& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
        const double d0 = p[i] - q[i], d1 = p[i + 1] - q[i + 1];
        const double h = xs[i + 1] - xs[i];
        if ((d0 > 0.0) != (d1 > 0.0) && d0 != d1) {
            const double w = h * d0 / (d0 - d1);
            acc += 0.5 * (std::abs(d0) * w + std::abs(d1) * (h - w));
        } else {
            acc += 0.5 * (std::abs(d0) + std::abs(d1)) * h;
        }
    }
    return 0.5 * acc;
}
}  // namespace detail

inline std::vector<TvRateLevel> tv_rate_check(const TvRateSetup& cfg, int levels = 2,
                                             int jobs = 1) {
    if (!(cfg.b > cfg.a)) throw std::invalid_argument("tv_rate_check: empty window");
    if (cfg.times.empty()) throw std::invalid_argument("tv_rate_check: no output times");
    std::vector<TvRateLevel> out;
    for (int lv = 0; lv < levels; ++lv) {
        TvRateLevel level;
        level.points = cfg.base_points << lv;
        level.dt = cfg.base_dt / static_cast<double>(1 << lv);
        const int N = level.points;
        std::vector<double> xs(N + 1);
        for (int i = 0; i <= N; ++i)
            xs[i] = cfg.a + (cfg.b - cfg.a) * static_cast<double>(i) / N;

        auto grids_at = [&](double t, std::vector<double>& p, std::vector<double>& q,
                            std::vector<double>& logq) {
            p.assign(xs.size(), 0.0);
            q.assign(xs.size(), 0.0);
            logq.assign(xs.size(), 0.0);
            parallel_for(xs.size(), jobs, [&](std::size_t i) {
                p[i] = std::exp(
                    transported_log_density(cfg.drift_p, cfg.t0, t, xs[i], cfg.log_p0, cfg.ode));
                logq[i] =
                    transported_log_density(cfg.drift_q, cfg.t0, t, xs[i], cfg.log_q0, cfg.ode);
                q[i] = std::exp(logq[i]);
            });
        };

        for (double t : cfg.times) {
            std::vector<double> p, q, logq, pm, qm, lqm, pp, qp, lqp;
            grids_at(t, p, q, logq);
            grids_at(t - level.dt, pm, qm, lqm);
            grids_at(t + level.dt, pp, qp, lqp);
            TvRateRow row;
            row.t = t;
            row.tv = detail::tv_from_grid(xs, p, q);
            row.lhs = (detail::tv_from_grid(xs, pp, qp) - detail::tv_from_grid(xs, pm, qm)) /
                      (2.0 * level.dt);
            // node values of the identity integrand; dlog q by centered FD on the grid
            std::vector<double> w(xs.size(), 0.0), diff(xs.size(), 0.0);
            for (std::size_t i = 0; i < xs.size(); ++i) {
                diff[i] = p[i] - q[i];
                const std::size_t il = i == 0 ? 0 : i - 1;
                const std::size_t ir = i + 1 == xs.size() ? i : i + 1;
                const double dlq = (logq[ir] - logq[il]) / (xs[ir] - xs[il]);
                const double x = xs[i];
                w[i] = -(cfg.drift_p.div(t, x) - cfg.drift_q.div(t, x)) * q[i] -
                       (cfg.drift_p.v(t, x) - cfg.drift_q.v(t, x)) * dlq * q[i];
            }
            // integrate w over {p > q}, splitting crossing cells linearly
            double rhs = 0.0;
            for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
                const double d0 = diff[i], d1 = diff[i + 1];
                const double h = xs[i + 1] - xs[i];
                if (d0 > 0.0 && d1 > 0.0) {
                    rhs += 0.5 * (w[i] + w[i + 1]) * h;
                } else if ((d0 > 0.0) != (d1 > 0.0) && d0 != d1) {
                    const double frac = d0 / (d0 - d1);  // crossing offset fraction
                    const double wc = w[i] + (w[i + 1] - w[i]) * frac;
                    if (d0 > 0.0) rhs += 0.5 * (w[i] + wc) * frac * h;
                    else rhs += 0.5 * (wc + w[i + 1]) * (1.0 - frac) * h;
                }
            }
            row.rhs = rhs;
            row.residual = std::abs(row.lhs - row.rhs);
            row.rel_residual = row.residual / std::max(std::abs(row.rhs), 1e-6);
            level.max_rel_residual = std::max(level.max_rel_residual, row.rel_residual);
            level.rows.push_back(row);
        }
        out.push_back(std::move(level));
    }
    return out;
}

// ---------------------------------------------------------------------------
// counterexample report: uniform drift accuracy, transport identity residual,
// and the non-vanishing terminal TV, all from the oscillatory field

struct CounterexampleReport {
    int n = 0;
    double T = 0.0;
    double sup_err = 0.0, sup_err_bound = 0.0;
    double fp_residual_max = 0.0;
    double tv_final = 0.0, tv_refine_err = 0.0;
    double tv_final_ode = 0.0;
    double tv_lower = 0.0;  // 1/(4 pi)
    bool pass_sup = false, pass_fp = false, pass_tv = false, pass_ode = false;
};

inline CounterexampleReport counterexample_report(int n, double T, int nt = 401, int nx = 401,
                                                  double x_lo = -5.0, double x_hi = 5.0,
                                                  double fp_tol = 1e-8, double ode_match_tol = 2e-3,
                                                  int jobs = 1) {
    SineCounterexample ce;
    const ScoreField field = sine_counterexample_field(n, T, &ce);
    CounterexampleReport rep;
    rep.n = n;
    rep.T = T;
    rep.sup_err_bound = ce.sup_error_bound();
    rep.tv_lower = 0.25 / 3.14159265358979323846;

    // sup_x,t |s(T-t,x) + x| on the lattice, against 1/(T n pi)
    std::vector<double> col_sup(nx, 0.0), col_res(nx, 0.0);
    // the flux oscillates at wavenumber b; the stencil must keep b*h small or
    // its O((b h)^4) truncation swamps the identity residual
    const double hx_fd = std::min(4e-4, 0.025 / ce.b), ht_fd = 1e-3;
    parallel_for(nx, jobs, [&](std::size_t ix) {
        const double x = x_lo + (x_hi - x_lo) * static_cast<double>(ix) / (nx - 1);
        // 5-point stencil values of the flux (s + x) * rho, shared across times
        double se = 0.0, re = 0.0;
        for (int it = 0; it < nt; ++it) {
            const double t = T * static_cast<double>(it) / (nt - 1);
            const double tau = T - t;
            se = std::max(se, std::abs(ce.svalue(tau, x) + x));
            auto flux = [&](double xx) {
                return (ce.svalue(tau, xx) + xx) * ce.hat_density(tau, xx);
            };
            const double dflux = (-flux(x + 2.0 * hx_fd) + 8.0 * flux(x + hx_fd) -
                                  8.0 * flux(x - hx_fd) + flux(x - 2.0 * hx_fd)) /
                                 (12.0 * hx_fd);
            const double drho =
                (ce.hat_density(T - (t + ht_fd), x) - ce.hat_density(T - (t - ht_fd), x)) /
                (2.0 * ht_fd);
            re = std::max(re, std::abs(drho + dflux));
        }
        col_sup[ix] = se;
        col_res[ix] = re;
    });
    for (int i = 0; i < nx; ++i) {
        rep.sup_err = std::max(rep.sup_err, col_sup[i]);
        rep.fp_residual_max = std::max(rep.fp_residual_max, col_res[i]);
    }

    // terminal TV, closed-form densities with kinks at the sine zeros
    const double wlo = -10.0, whi = 10.0;
    std::vector<double> breaks;
    const double half_osc = 0.5 / n;
    for (double x = std::ceil(wlo / half_osc) * half_osc; x < whi; x += half_osc)
        breaks.push_back(x);
    Density1 pf = [&](double x) { return ce.final_density(x); };
    Density1 q0 = [&](double x) { return ce.start_density(x); };
    const TvResult tvr = tv_quadrature(pf, q0, wlo, whi, 512, 0, &breaks);
    rep.tv_final = tvr.tv;
    rep.tv_refine_err = tvr.refine_err;

    // cross-check: push N(0,1) through the simulated reverse flow, then TV
    Drift1 drift{[&](double t, double x) { return x + ce.svalue(T - t, x); },
                 [&](double t, double x) { return 1.0 + ce.sderiv(T - t, x); }};
    auto logphi = [](double x) {
        return -0.5 * x * x - 0.91893853320467274178032973640562;
    };
    OdeOptions ode{1e-9, 1e-11};
    // reuse the closed-form kink locations as panel boundaries
    Density1 p_ode = [&](double x) {
        return std::exp(transported_log_density(drift, 0.0, T, x, logphi, ode));
    };
    const TvResult tvo = tv_quadrature(p_ode, q0, wlo, whi, 256, 0, &breaks);
    rep.tv_final_ode = tvo.tv;

    rep.pass_sup = rep.sup_err <= rep.sup_err_bound;
    rep.pass_fp = rep.fp_residual_max <= fp_tol;
    rep.pass_tv = rep.tv_final >= rep.tv_lower;
    rep.pass_ode = std::abs(rep.tv_final_ode - rep.tv_final) <= ode_match_tol;
    return rep;
}

}  // namespace lab
