#pragma once

// Least-squares slope estimation for convergence-order studies. Fits are
// ordinary LSQ lines; half_width is the standard error of the slope and
// residual the root-mean-square misfit in the fitted coordinates.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lab {

struct OrderFit {
    double slope = 0.0;
    double intercept = 0.0;
    double half_width = 0.0;  // standard error of the slope
    double residual = 0.0;    // rms residual in fit coordinates
    std::size_t n = 0;
};

inline OrderFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("fit_line: length mismatch");
    const std::size_t n = xs.size();
    if (n < 4) throw std::invalid_argument("fit_line: need at least 4 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(xs[i]) || !std::isfinite(ys[i]))
            throw std::invalid_argument("fit_line: non-finite input");
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx <= 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
    OrderFit f;
    f.n = n;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ys[i] - (f.intercept + f.slope * xs[i]);
        rss += r * r;
    }
    f.residual = std::sqrt(rss / static_cast<double>(n));
    const double sigma2 = rss / static_cast<double>(n - 2);
    f.half_width = std::sqrt(sigma2 / sxx);
    return f;
}

// slope of log(err) against log(x); all values must be positive
inline OrderFit fit_order(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.size() < 4) throw std::invalid_argument("fit_order: need at least 4 pairs");
    std::vector<double> xs, ys;
    xs.reserve(pairs.size());
    ys.reserve(pairs.size());
    for (const auto& [x, e] : pairs) {
        if (!(x > 0.0) || !(e > 0.0)) throw std::invalid_argument("fit_order: nonpositive value");
        xs.push_back(std::log(x));
        ys.push_back(std::log(e));
    }
    return fit_line(xs, ys);
}

// slope of log(err) against x; errors must be positive
inline OrderFit fit_semilog(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.size() < 4) throw std::invalid_argument("fit_semilog: need at least 4 pairs");
    std::vector<double> xs, ys;
    xs.reserve(pairs.size());
    ys.reserve(pairs.size());
    for (const auto& [x, e] : pairs) {
        if (!(e > 0.0)) throw std::invalid_argument("fit_semilog: nonpositive error");
        xs.push_back(x);
        ys.push_back(std::log(e));
    }
    return fit_line(xs, ys);
}

}  // namespace lab
