#pragma once

// Scalar root finding and quadrature used by the weight-family machinery.

#include "robscatter/core.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>

namespace robscatter {

class RootFindingError : public Error {
public:
    using Error::Error;
};

class QuadratureError : public Error {
public:
    QuadratureError(const std::string& what, double a, double b) : Error(what), a_(a), b_(b) {}
    double interval_lo() const noexcept { return a_; }
    double interval_hi() const noexcept { return b_; }

private:
    double a_;
    double b_;
};

struct RootResult {
    double x = 0.0;
    double fx = 0.0;
    int iterations = 0;
};

/// Brent's method on a bracket [a, b] with f(a) f(b) <= 0.
///
/// Stops when |f(x)| <= ftol or the bracket is narrower than the usual
/// 2 eps |x| + xtol / 2 criterion.
template <class F>
RootResult brent_root(F&& f, double a, double b, double xtol, double ftol, int max_iter = 500)
{
    double fa = f(a);
    double fb = f(b);
    if (fa == 0.0) {
        return {a, fa, 0};
    }
    if (fb == 0.0) {
        return {b, fb, 0};
    }
    if ((fa > 0.0) == (fb > 0.0)) {
        std::ostringstream os;
        os << "brent_root: no sign change on [" << a << ", " << b << "]";
        throw RootFindingError(os.str());
    }
    double c = a;
    double fc = fa;
    double d = b - a;
    double e = d;
    constexpr double eps = std::numeric_limits<double>::epsilon();
    for (int it = 1; it <= max_iter; ++it) {
        if ((fb > 0.0) == (fc > 0.0)) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if (std::fabs(fc) < std::fabs(fb)) {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        const double tol1 = 2.0 * eps * std::fabs(b) + 0.5 * xtol;
        const double xm = 0.5 * (c - b);
        if (std::fabs(fb) <= ftol || std::fabs(xm) <= tol1) {
            return {b, fb, it};
        }
        if (std::fabs(e) >= tol1 && std::fabs(fa) > std::fabs(fb)) {
            // inverse quadratic interpolation, secant when only two points
            const double s = fb / fa;
            double p;
            double q;
            if (a == c) {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                const double qq = fa / fc;
                const double r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if (p > 0.0) {
                q = -q;
            }
            p = std::fabs(p);
            const double min1 = 3.0 * xm * q - std::fabs(tol1 * q);
            const double min2 = std::fabs(e * q);
            if (2.0 * p < std::min(min1, min2)) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += (std::fabs(d) > tol1) ? d : (xm > 0.0 ? tol1 : -tol1);
        fb = f(b);
    }
    return {b, fb, max_iter};
}

namespace detail {

template <class F>
double simpson_step(F& f, double a, double b, double fa, double fm, double fb, double whole, double tol, int depth,
                    int max_depth)
{
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (std::fabs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    if (depth >= max_depth || !std::isfinite(delta)) {
        std::ostringstream os;
        os << "adaptive_simpson: no convergence after " << max_depth << " levels on [" << a << ", " << b << "]";
        throw QuadratureError(os.str(), a, b);
    }
    return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1, max_depth) +
           simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1, max_depth);
}

} // namespace detail

/// Adaptive Simpson quadrature of f over [a, b] (b < a gives the signed integral).
template <class F>
double adaptive_simpson(F&& f, double a, double b, double abs_tol, int max_depth = 60)
{
    if (a == b) {
        return 0.0;
    }
    const double fa = f(a);
    const double fb = f(b);
    const double fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return detail::simpson_step(f, a, b, fa, fm, fb, whole, abs_tol, 0, max_depth);
}

} // namespace robscatter
