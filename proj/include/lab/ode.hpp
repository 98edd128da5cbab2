#pragma once

// Embedded Dormand-Prince 5(4) with PI step control, FSAL, mixed abs/rel
// error norm. Integrates forward or backward in time; state is a lab::Vec so
// augmented systems (state + log-Jacobian) ride along in extra components.

#include <cmath>
#include <stdexcept>

#include "lab/smallvec.hpp"

namespace lab {

struct OdeOptions {
    double rtol = 1e-9;
    double atol = 1e-11;
    double h0 = 0.0;  // 0: auto
    long max_steps = 2000000;
};

struct OdeStats {
    long accepted = 0;
    long rejected = 0;
};

template <class F>
Vec ode_integrate(F&& f, double t0, double t1, Vec y, const OdeOptions& opt = {},
                  OdeStats* stats = nullptr) {
    if (t0 == t1) return y;
    const double dir = t1 > t0 ? 1.0 : -1.0;
    const double span = std::abs(t1 - t0);
    double h = opt.h0 > 0.0 ? opt.h0 : span / 100.0;
    h = std::min(h, span);
    double t = t0;
    Vec k1 = f(t, y);
    double err_prev = 1.0;
    long steps = 0;
    while (dir * (t1 - t) > 0.0) {
        if (++steps > opt.max_steps) throw std::runtime_error("ode_integrate: step limit");
        h = std::min(h, std::abs(t1 - t));
        if (h < 1e-14 * std::max(1.0, std::abs(t)))
            throw std::runtime_error("ode_integrate: step underflow");
        const double hs = dir * h;
        const Vec k2 = f(t + hs * 0.2, y + hs * 0.2 * k1);
        const Vec k3 = f(t + hs * 0.3, y + hs * (0.075 * k1 + 0.225 * k2));
        const Vec k4 = f(t + hs * 0.8,
                         y + hs * ((44.0 / 45.0) * k1 - (56.0 / 15.0) * k2 + (32.0 / 9.0) * k3));
        const Vec k5 =
            f(t + hs * (8.0 / 9.0),
              y + hs * ((19372.0 / 6561.0) * k1 - (25360.0 / 2187.0) * k2 +
                        (64448.0 / 6561.0) * k3 - (212.0 / 729.0) * k4));
        const Vec k6 = f(t + hs, y + hs * ((9017.0 / 3168.0) * k1 - (355.0 / 33.0) * k2 +
                                           (46732.0 / 5247.0) * k3 + (49.0 / 176.0) * k4 -
                                           (5103.0 / 18656.0) * k5));
        const Vec ynew = y + hs * ((35.0 / 384.0) * k1 + (500.0 / 1113.0) * k3 +
                                   (125.0 / 192.0) * k4 - (2187.0 / 6784.0) * k5 +
                                   (11.0 / 84.0) * k6);
        const Vec k7 = f(t + hs, ynew);
        const Vec e = hs * ((71.0 / 57600.0) * k1 - (71.0 / 16695.0) * k3 +
                            (71.0 / 1920.0) * k4 - (17253.0 / 339200.0) * k5 +
                            (22.0 / 525.0) * k6 - (1.0 / 40.0) * k7);
        double errn = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            const double q = e[i] / sc;
            errn += q * q;
        }
        errn = std::sqrt(errn / static_cast<double>(y.size()));
        if (errn <= 1.0) {
            t += hs;
            y = ynew;
            k1 = k7;  // FSAL
            if (stats) ++stats->accepted;
            const double fac =
                0.9 * std::pow(std::max(errn, 1e-10), -0.7 / 5.0) * std::pow(err_prev, 0.4 / 5.0);
            h *= std::min(5.0, std::max(0.2, fac));
            err_prev = std::max(errn, 1e-10);
        } else {
            if (stats) ++stats->rejected;
            h *= std::max(0.2, 0.9 * std::pow(errn, -0.2));
        }
    }
    return y;
}

}  // namespace lab
