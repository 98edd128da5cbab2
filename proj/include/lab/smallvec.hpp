#pragma once

// Fixed-capacity vector/matrix for low-dimensional state (dim <= LAB_MAX_DIM).
// Stack-only: hot loops (per-step Newton inversion chains) must not allocate.

#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>

namespace lab {

inline constexpr std::size_t LAB_MAX_DIM = 8;

struct Vec {
    std::array<double, LAB_MAX_DIM> a{};
    std::size_t n = 0;

    Vec() = default;
    explicit Vec(std::size_t dim, double fill = 0.0) : n(dim) {
        assert(dim <= LAB_MAX_DIM);
        a.fill(0.0);
        for (std::size_t i = 0; i < n; ++i) a[i] = fill;
    }
    Vec(std::initializer_list<double> xs) : n(xs.size()) {
        assert(n <= LAB_MAX_DIM);
        std::size_t i = 0;
        for (double x : xs) a[i++] = x;
    }

    std::size_t size() const { return n; }
    double& operator[](std::size_t i) { assert(i < n); return a[i]; }
    double operator[](std::size_t i) const { assert(i < n); return a[i]; }

    Vec& operator+=(const Vec& o) { for (std::size_t i = 0; i < n; ++i) a[i] += o.a[i]; return *this; }
    Vec& operator-=(const Vec& o) { for (std::size_t i = 0; i < n; ++i) a[i] -= o.a[i]; return *this; }
    Vec& operator*=(double c)     { for (std::size_t i = 0; i < n; ++i) a[i] *= c; return *this; }
};

inline Vec operator+(Vec x, const Vec& y) { x += y; return x; }
inline Vec operator-(Vec x, const Vec& y) { x -= y; return x; }
inline Vec operator*(double c, Vec x) { x *= c; return x; }
inline Vec operator*(Vec x, double c) { x *= c; return x; }
inline Vec operator-(Vec x) { x *= -1.0; return x; }

inline double dot(const Vec& x, const Vec& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.n; ++i) s += x.a[i] * y.a[i];
    return s;
}
inline double norm2(const Vec& x) { return dot(x, x); }
inline double norm(const Vec& x) { return std::sqrt(norm2(x)); }

inline double norm_inf(const Vec& x) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.n; ++i) m = std::max(m, std::abs(x.a[i]));
    return m;
}

inline bool all_finite(const Vec& x) {
    for (std::size_t i = 0; i < x.n; ++i)
        if (!std::isfinite(x.a[i])) return false;
    return true;
}

// Row-major dense matrix, same capacity cap as Vec.
struct Mat {
    std::array<double, LAB_MAX_DIM * LAB_MAX_DIM> a{};
    std::size_t n = 0;  // rows == cols == n (all uses are square)

    Mat() = default;
    explicit Mat(std::size_t dim, double fill = 0.0) : n(dim) {
        assert(dim <= LAB_MAX_DIM);
        a.fill(0.0);
        for (std::size_t i = 0; i < n * n; ++i) a[i] = fill;
    }
    static Mat identity(std::size_t dim) {
        Mat m(dim);
        for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { assert(i < n && j < n); return a[i * n + j]; }
    double operator()(std::size_t i, std::size_t j) const { assert(i < n && j < n); return a[i * n + j]; }

    Mat& operator+=(const Mat& o) { for (std::size_t i = 0; i < n * n; ++i) a[i] += o.a[i]; return *this; }
    Mat& operator-=(const Mat& o) { for (std::size_t i = 0; i < n * n; ++i) a[i] -= o.a[i]; return *this; }
    Mat& operator*=(double c)     { for (std::size_t i = 0; i < n * n; ++i) a[i] *= c; return *this; }
};

inline Mat operator+(Mat x, const Mat& y) { x += y; return x; }
inline Mat operator-(Mat x, const Mat& y) { x -= y; return x; }
inline Mat operator*(double c, Mat x) { x *= c; return x; }

inline Vec operator*(const Mat& m, const Vec& x) {
    Vec y(x.n);
    for (std::size_t i = 0; i < m.n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m.n; ++j) s += m(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

inline Mat matmul(const Mat& x, const Mat& y) {
    Mat z(x.n);
    for (std::size_t i = 0; i < x.n; ++i)
        for (std::size_t k = 0; k < x.n; ++k) {
            const double v = x(i, k);
            for (std::size_t j = 0; j < x.n; ++j) z(i, j) += v * y(k, j);
        }
    return z;
}

inline Mat outer(const Vec& x, const Vec& y) {
    Mat m(x.n);
    for (std::size_t i = 0; i < x.n; ++i)
        for (std::size_t j = 0; j < x.n; ++j) m(i, j) = x[i] * y[j];
    return m;
}

inline double trace(const Mat& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.n; ++i) s += m(i, i);
    return s;
}

inline double max_abs(const Mat& m) {
    double v = 0.0;
    for (std::size_t i = 0; i < m.n * m.n; ++i) v = std::max(v, std::abs(m.a[i]));
    return v;
}

// In-place Gaussian elimination with partial pivoting; returns log|det| through ld.
// Throws on (numerically) singular systems.
inline Vec lu_solve(Mat m, Vec b, double* ld = nullptr, double* sign = nullptr) {
    const std::size_t n = m.n;
    double logdet = 0.0, sgn = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(m(r, c)) > std::abs(m(p, c))) p = r;
        if (p != c) {
            for (std::size_t j = 0; j < n; ++j) std::swap(m(p, j), m(c, j));
            std::swap(b[p], b[c]);
            sgn = -sgn;
        }
        const double piv = m(c, c);
        if (piv == 0.0 || !std::isfinite(piv))
            throw std::runtime_error("lu_solve: singular matrix");
        logdet += std::log(std::abs(piv));
        if (piv < 0.0) sgn = -sgn;
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = m(r, c) / piv;
            if (f == 0.0) continue;
            for (std::size_t j = c; j < n; ++j) m(r, j) -= f * m(c, j);
            b[r] -= f * b[c];
        }
    }
    Vec x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= m(i, j) * x[j];
        x[i] = s / m(i, i);
    }
    if (ld) *ld = logdet;
    if (sign) *sign = sgn;
    return x;
}

inline double log_abs_det(const Mat& m, double* sign = nullptr) {
    Vec b(m.n, 0.0);
    double ld = 0.0, sgn = 1.0;
    // elimination only; rhs irrelevant
    Mat c = m;
    const std::size_t n = c.n;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t p = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(c(r, col)) > std::abs(c(p, col))) p = r;
        if (p != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(c(p, j), c(col, j));
            sgn = -sgn;
        }
        const double piv = c(col, col);
        if (piv == 0.0 || !std::isfinite(piv))
            throw std::runtime_error("log_abs_det: singular matrix");
        ld += std::log(std::abs(piv));
        if (piv < 0.0) sgn = -sgn;
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = c(r, col) / piv;
            if (f == 0.0) continue;
            for (std::size_t j = col; j < n; ++j) c(r, j) -= f * c(col, j);
        }
    }
    (void)b;
    if (sign) *sign = sgn;
    return ld;
}

// Largest |eigenvalue| of a symmetric matrix (cyclic Jacobi; dim <= 8 so cheap).
inline double sym_spectral_norm(Mat m) {
    const std::size_t n = m.n;
    if (n == 1) return std::abs(m(0, 0));
    for (int sweep = 0; sweep < 50; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(m(p, q)) < 1e-300) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
            }
    }
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v = std::max(v, std::abs(m(i, i)));
    return v;
}

}  // namespace lab
