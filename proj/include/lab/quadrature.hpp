#pragma once

// Composite Gauss-Legendre panel quadrature. Fixed rules only: panel counts are
// the refinement knob, which keeps evaluation layouts deterministic.

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace lab {

struct GLRule {
    const double* x;  // nodes in (-1,1)
    const double* w;
    int m;
};

namespace detail {
inline constexpr double gl4_x[] = {-0.8611363115940525752, -0.3399810435848562648,
                                   0.3399810435848562648, 0.8611363115940525752};
inline constexpr double gl4_w[] = {0.3478548451374538574, 0.6521451548625461426,
                                   0.6521451548625461426, 0.3478548451374538574};
inline constexpr double gl8_x[] = {-0.9602898564975362316, -0.7966664774136267395,
                                   -0.5255324099163289858, -0.1834346424956498049,
                                   0.1834346424956498049,  0.5255324099163289858,
                                   0.7966664774136267395,  0.9602898564975362316};
inline constexpr double gl8_w[] = {0.1012285362903762592, 0.2223810344533744705,
                                   0.3137066458778872873, 0.3626837833783619830,
                                   0.3626837833783619830, 0.3137066458778872873,
                                   0.2223810344533744705, 0.1012285362903762592};
inline constexpr double gl10_x[] = {-0.9739065285171717201, -0.8650633666889845107,
                                    -0.6794095682990244062, -0.4333953941292471908,
                                    -0.1488743389816312109, 0.1488743389816312109,
                                    0.4333953941292471908,  0.6794095682990244062,
                                    0.8650633666889845107,  0.9739065285171717201};
inline constexpr double gl10_w[] = {0.0666713443086881376, 0.1494513491505805931,
                                    0.2190863625159820440, 0.2692667193099963551,
                                    0.2955242247147528702, 0.2955242247147528702,
                                    0.2692667193099963551, 0.2190863625159820440,
                                    0.1494513491505805931, 0.0666713443086881376};
inline constexpr double gl16_x[] = {-0.9894009349916499326, -0.9445750230732325761,
                                    -0.8656312023878317439, -0.7554044083550030339,
                                    -0.6178762444026437484, -0.4580167776572273863,
                                    -0.2816035507792589132, -0.0950125098376374402,
                                    0.0950125098376374402,  0.2816035507792589132,
                                    0.4580167776572273863,  0.6178762444026437484,
                                    0.7554044083550030339,  0.8656312023878317439,
                                    0.9445750230732325761,  0.9894009349916499326};
inline constexpr double gl16_w[] = {0.0271524594117540949, 0.0622535239386478929,
                                    0.0951585116824927848, 0.1246289712555338721,
                                    0.1495959888165767320, 0.1691565193950025382,
                                    0.1826034150449235889, 0.1894506104550684963,
                                    0.1894506104550684963, 0.1826034150449235889,
                                    0.1691565193950025382, 0.1495959888165767320,
                                    0.1246289712555338721, 0.0951585116824927848,
                                    0.0622535239386478929, 0.0271524594117540949};
}  // namespace detail

inline GLRule gl_rule(int order) {
    switch (order) {
        case 4:  return {detail::gl4_x, detail::gl4_w, 4};
        case 8:  return {detail::gl8_x, detail::gl8_w, 8};
        case 10: return {detail::gl10_x, detail::gl10_w, 10};
        case 16: return {detail::gl16_x, detail::gl16_w, 16};
        default: throw std::invalid_argument("gl_rule: unsupported order");
    }
}

// integral of f over one panel [a,b]
template <class F>
double gl_panel(F&& f, double a, double b, const GLRule& r) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double s = 0.0;
    for (int i = 0; i < r.m; ++i) s += r.w[i] * f(c + h * r.x[i]);
    return s * h;
}

template <class F>
double integrate(F&& f, double a, double b, int panels, int order = 8) {
    if (!(b >= a)) throw std::invalid_argument("integrate: b < a");
    if (panels < 1) throw std::invalid_argument("integrate: panels < 1");
    const GLRule r = gl_rule(order);
    const double h = (b - a) / panels;
    double s = 0.0;
    for (int p = 0; p < panels; ++p) s += gl_panel(f, a + p * h, a + (p + 1) * h, r);
    return s;
}

// integral over [a,b] split at the given ascending interior breakpoints,
// long segments subdivided so no panel exceeds max_h
template <class F>
double integrate_split(F&& f, double a, double b, const std::vector<double>& breaks,
                       double max_h, int order = 8) {
    const GLRule r = gl_rule(order);
    double s = 0.0, lo = a;
    auto seg = [&](double u, double v) {
        if (v <= u) return;
        const int k = std::max(1, static_cast<int>((v - u) / max_h) + 1);
        const double h = (v - u) / k;
        for (int p = 0; p < k; ++p) s += gl_panel(f, u + p * h, u + (p + 1) * h, r);
    };
    for (double br : breaks) {
        if (br <= lo || br >= b) continue;
        seg(lo, br);
        lo = br;
    }
    seg(lo, b);
    return s;
}

}  // namespace lab
