#pragma once

// Weight families u(t, x) and the scalar functions derived from them.
//
// A family is defined for t > 0 by a callable u(t, x); the t = 0 member is
// always u(0, x) = m / x (Tyler's weight). Everything else (v, v1, w, x_t, h,
// g, u_x) can be supplied in closed form; when it is not, a numeric fallback
// is used.

#include "robscatter/core.hpp"
#include "robscatter/numerics.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace robscatter {

/// The family violates one of the monotonicity / growth conditions a solver relies on.
class ConditionViolation : public Error {
public:
    using Error::Error;
};

/// Closed-form pieces of a weight family. Only `u` is mandatory.
struct WeightFunctions {
    std::function<double(double, double)> u;
    std::function<double(double, double)> u_x;
    std::function<double(double)> v1;
    std::function<double(double)> w1;
    std::function<double(double)> xt;
    /// Root of v1, i.e. lim x_t as t -> 0.
    std::optional<double> x0;
    std::function<double(double, double)> log_h;
    std::function<double(double)> lt;
};

class WeightFamily {
public:
    static constexpr double kV1Step = 1e-7;
    static constexpr double kQuadratureTol = 1e-12;
    static constexpr double kBracketCap = 1e12;

    WeightFamily(std::string label, int m, WeightFunctions fns) : label_(std::move(label)), m_(m), fns_(std::move(fns))
    {
        if (m_ < 1) {
            throw InputError("WeightFamily: dimension must be >= 1");
        }
        if (!fns_.u) {
            throw InputError("WeightFamily: u(t, x) is required");
        }
    }

    const std::string& label() const noexcept { return label_; }
    int dim() const noexcept { return m_; }
    double md() const noexcept { return double(m_); }

    bool has_analytic_v1() const noexcept { return bool(fns_.v1); }
    bool has_analytic_xt() const noexcept { return bool(fns_.xt); }
    bool has_analytic_h() const noexcept { return bool(fns_.log_h); }

    double u(double t, double x) const { return t == 0.0 ? md() / x : fns_.u(t, x); }

    /// v(t, x) = x u(t, x); v(0, .) == m exactly.
    double v(double t, double x) const { return t == 0.0 ? md() : x * fns_.u(t, x); }

    /// du/dx: closed form when known, else central difference with step 1e-7 x.
    double u_x(double t, double x) const
    {
        if (t == 0.0) {
            return -md() / (x * x);
        }
        if (fns_.u_x) {
            return fns_.u_x(t, x);
        }
        const double hstep = 1e-7 * x;
        return (fns_.u(t, x + hstep) - fns_.u(t, x - hstep)) / (2.0 * hstep);
    }

    double v1(double x) const { return fns_.v1 ? fns_.v1(x) : numeric_v1(x); }

    /// One-sided difference quotient at t = 0 with one Richardson step.
    double numeric_v1(double x) const
    {
        const double d = kV1Step;
        const double coarse = (v(d, x) - md()) / d;
        const double fine = (v(0.5 * d, x) - md()) / (0.5 * d);
        return 2.0 * fine - coarse;
    }

    /// Remainder in v(t, x) = m + t v1(x) + t w(t, x).
    double w(double t, double x) const { return (v(t, x) - md()) / t - v1(x); }

    std::optional<double> w1(double x) const
    {
        if (fns_.w1) {
            return fns_.w1(x);
        }
        return std::nullopt;
    }

    /// sup_x v(t, x); closed form when known, else v(t, 1e12) as a lower estimate.
    double lt(double t) const { return fns_.lt ? fns_.lt(t) : v(t, kBracketCap); }

    double xt(double t) const { return fns_.xt ? fns_.xt(t) : numeric_xt(t); }

    /// Solves v(t, x) = m by bracket expansion followed by Brent's method.
    double numeric_xt(double t) const
    {
        if (!(t > 0.0)) {
            throw InputError("solve_xt: t must be positive");
        }
        auto f = [&](double x) { return v(t, x) - md(); };
        double lo = 1e-8;
        double hi = 1.0;
        while (f(lo) >= 0.0) {
            lo *= 0.5;
            if (lo < 1e-300) {
                throw ConditionViolation(label_ + ": v(t, x) >= m for all small x at t=" + fmt(t));
            }
        }
        if (hi < lo) {
            hi = 2.0 * lo;
        }
        while (f(hi) <= 0.0) {
            hi *= 2.0;
            if (hi > kBracketCap) {
                throw ConditionViolation(label_ + ": sup_x v(t, x) <= m at t=" + fmt(t) + " (condition U2)");
            }
        }
        return brent_root(f, lo, hi, 0.0, 1e-12 * md()).x;
    }

    /// Root x0 of v1, the limit of x_t as t -> 0.
    double x0() const
    {
        if (fns_.x0) {
            return *fns_.x0;
        }
        auto f = [&](double x) { return v1(x); };
        double lo = 1.0;
        double hi = 1.0;
        while (f(lo) >= 0.0) {
            lo *= 0.5;
            if (lo < 1e-12) {
                throw ConditionViolation(label_ + ": v1 has no positive root (condition U3)");
            }
        }
        while (f(hi) <= 0.0) {
            hi *= 2.0;
            if (hi > kBracketCap) {
                throw ConditionViolation(label_ + ": v1 has no positive root (condition U3)");
            }
        }
        return brent_root(f, lo, hi, 1e-15, 0.0).x;
    }

    /// log h(t, x) with log h(0, x) = -log x.
    double log_h(double t, double x) const
    {
        if (t == 0.0) {
            return -std::log(x);
        }
        if (fns_.log_h) {
            return fns_.log_h(t, x);
        }
        return numeric_log_h(t, x);
    }

    /// -log x_t - (1/m) * integral_{x_t}^{x} u(t, y) dy, integrated in s = log y
    /// where the integrand becomes v(t, e^s). The -log x_t term makes
    /// g(t, x_t) = 1 and h(t, .) -> 1/x as t -> 0 for any x_t.
    double numeric_log_h(double t, double x) const
    {
        const double xt_ = xt(t);
        const double a = std::log(xt_);
        const double b = std::log(x);
        const double integral = adaptive_simpson([&](double s) { return v(t, std::exp(s)); }, a, b, kQuadratureTol);
        return -a - integral / md();
    }

    double h(double t, double x) const { return std::exp(log_h(t, x)); }

    double log_g(double t, double x) const { return t == 0.0 ? 0.0 : std::log(x) + log_h(t, x); }

    double g(double t, double x) const { return std::exp(log_g(t, x)); }

private:
    static std::string fmt(double x)
    {
        std::ostringstream os;
        os.precision(17);
        os << x;
        return os.str();
    }

    std::string label_;
    int m_;
    WeightFunctions fns_;
};

/// u(t, x) = m (1 + t) / (x + t).
inline WeightFamily make_model_family(int m)
{
    const double md = m;
    WeightFunctions f;
    f.u = [md](double t, double x) { return md * (1.0 + t) / (x + t); };
    f.u_x = [md](double t, double x) { return -md * (1.0 + t) / ((x + t) * (x + t)); };
    f.v1 = [md](double x) { return md * (1.0 - 1.0 / x); };
    f.w1 = [md](double x) { return -md * (x - 1.0) / (x * x); };
    f.xt = [](double) { return 1.0; };
    f.x0 = 1.0;
    f.log_h = [](double t, double x) { return (1.0 + t) * std::log((1.0 + t) / (x + t)); };
    f.lt = [md](double t) { return md * (1.0 + t); };
    return WeightFamily("model", m, std::move(f));
}

/// Student-t maximum-likelihood weight u(t, x) = (m + t) / (t + x), t the degrees of freedom.
inline WeightFamily make_student_t_family(int m)
{
    const double md = m;
    WeightFunctions f;
    f.u = [md](double t, double x) { return (md + t) / (t + x); };
    f.u_x = [md](double t, double x) { return -(md + t) / ((t + x) * (t + x)); };
    f.v1 = [md](double x) { return 1.0 - md / x; };
    f.w1 = [md](double x) { return -(x - md) / (x * x); };
    f.xt = [md](double) { return md; };
    f.x0 = md;
    f.log_h = [md](double t, double x) { return (md + t) / md * std::log((md + t) / (x + t)) - std::log(md); };
    f.lt = [md](double t) { return md + t; };
    return WeightFamily("student-t", m, std::move(f));
}

/// u(t, x) = 1 for t > 0. Violates strict monotonicity; used to exercise the validators.
inline WeightFamily make_constant_family(int m)
{
    WeightFunctions f;
    f.u = [](double, double) { return 1.0; };
    return WeightFamily("const", m, std::move(f));
}

inline std::vector<std::string> family_names() { return {"model", "student-t", "const"}; }

inline WeightFamily make_family(const std::string& name, int m)
{
    if (name == "model") {
        return make_model_family(m);
    }
    if (name == "student-t" || name == "student") {
        return make_student_t_family(m);
    }
    if (name == "const") {
        return make_constant_family(m);
    }
    throw InputError("unknown weight family '" + name + "' (expected model, student-t or const)");
}

// ---------------------------------------------------------------------------
// Condition validation
// ---------------------------------------------------------------------------

/// One grid point (t, x) at which a condition failed, with an explanation.
struct ConditionWitness {
    double t = 0.0;
    double x = 0.0;
    std::string what;
};

struct ConditionCheck {
    std::string name;
    bool passed = true;
    std::vector<ConditionWitness> witnesses;
};

struct ConditionReport {
    ConditionCheck u1{"U1"};
    ConditionCheck u2{"U2"};
    ConditionCheck u3{"U3"};

    bool all_passed() const { return u1.passed && u2.passed && u3.passed; }
};

inline std::vector<double> log_spaced(double lo, double hi, int n)
{
    std::vector<double> out;
    out.reserve(std::size_t(n));
    const double a = std::log10(lo);
    const double b = std::log10(hi);
    for (int i = 0; i < n; ++i) {
        out.push_back(n == 1 ? lo : std::pow(10.0, a + (b - a) * double(i) / double(n - 1)));
    }
    return out;
}

inline std::vector<double> default_t_grid() { return log_spaced(1e-4, 1.0, 20); }
inline std::vector<double> default_x_grid() { return log_spaced(1e-3, 1e3, 200); }

/// Checks the monotonicity and growth conditions on finite grids.
///
/// Each condition keeps at most `max_witnesses` failing grid points.
inline ConditionReport validate_conditions(const WeightFamily& f, const std::vector<double>& t_grid = default_t_grid(),
                                           const std::vector<double>& x_grid = default_x_grid(),
                                           std::size_t max_witnesses = 8)
{
    ConditionReport r;
    auto fail = [max_witnesses](ConditionCheck& c, double t, double x, std::string what) {
        c.passed = false;
        if (c.witnesses.size() < max_witnesses) {
            c.witnesses.push_back({t, x, std::move(what)});
        }
    };

    for (double t : t_grid) {
        double vmax = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < x_grid.size(); ++k) {
            const double x = x_grid[k];
            const double vx = f.v(t, x);
            vmax = std::max(vmax, vx);
            if (k + 1 == x_grid.size()) {
                continue;
            }
            const double xn = x_grid[k + 1];
            if (!(f.u(t, xn) < f.u(t, x))) {
                fail(r.u1, t, x, "u(t, .) not strictly decreasing between x and the next grid point");
            }
            const double vn = f.v(t, xn);
            if (vn < vx) {
                fail(r.u2, t, x, "v(t, .) decreases between x and the next grid point");
            }
            if (!(vn > vx)) {
                fail(r.u3, t, x, "v_x not positive between x and the next grid point");
            }
        }
        if (!(vmax > f.md())) {
            fail(r.u2, t, x_grid.empty() ? 0.0 : x_grid.back(), "max of v(t, .) on the grid does not exceed m");
        }
        try {
            const double xt = f.xt(t);
            if (!(xt >= 1e-3 && xt <= 1e3)) {
                fail(r.u3, t, xt, "x_t outside [1e-3, 1e3]");
            }
        } catch (const Error& e) {
            fail(r.u3, t, 0.0, std::string("x_t not computable: ") + e.what());
        }
    }
    for (std::size_t k = 0; k + 1 < x_grid.size(); ++k) {
        if (!(f.v1(x_grid[k + 1]) > f.v1(x_grid[k]))) {
            fail(r.u3, 0.0, x_grid[k], "v1 not increasing between x and the next grid point");
        }
    }
    return r;
}

} // namespace robscatter
