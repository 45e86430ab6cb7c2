#pragma once

// Variational functionals behind the estimator and executable checks of their
// properties:
//
//   H(t, M) = prod_i h(t, q_i)^m / det(M)^N      B(M) = prod_i q_i^{-m} / det(M)^N
//
// Critical points of H(t, .) are exactly the solutions of the fixed-point
// equation, they are strict local maxima, and H <= B everywhere. All
// functionals are evaluated in the log domain.

#include "robscatter/core.hpp"
#include "robscatter/solver.hpp"
#include "robscatter/weights.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace robscatter {

/// A positive functional value kept in log form.
struct LogValue {
    double log = 0.0;
    double value() const { return std::exp(log); }
};

inline LogValue eval_H(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M)
{
    const Vector q = quadratic_forms(d, M);
    double s = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        s += f.log_h(t, q(i));
    }
    return {f.md() * s - double(d.size()) * M.log_det()};
}

inline LogValue eval_B(const Dataset& d, const SpdMatrix& M)
{
    const Vector q = quadratic_forms(d, M);
    return {-double(d.dim()) * q.array().log().sum() - double(d.size()) * M.log_det()};
}

/// Gradient of log H(t, .) at M by central differences over the m(m+1)/2
/// symmetric coordinate directions, returned as a symmetric matrix in the
/// Frobenius geometry of Sym_m.
inline Matrix fd_log_H_gradient(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M,
                                double rel_step = 1e-6)
{
    const auto m = M.dim();
    const double step = rel_step * M.matrix().norm();
    Matrix grad = Matrix::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            Matrix e = Matrix::Zero(m, m);
            e(i, j) = 1.0;
            e(j, i) = 1.0;
            const double up = eval_H(d, f, t, SpdMatrix(M.matrix() + step * e)).log;
            const double dn = eval_H(d, f, t, SpdMatrix(M.matrix() - step * e)).log;
            const double dd = (up - dn) / (2.0 * step);
            // <G, E_ij + E_ji> = 2 G_ij off the diagonal
            const double gij = (i == j) ? dd : 0.5 * dd;
            grad(i, j) = gij;
            grad(j, i) = gij;
        }
    }
    return grad;
}

/// ||(-M grad H M) / (N H) - (M - RHS(M))||_F / ||M||_F, the gradient taken by
/// finite differences. Since grad H / H = grad log H the left side needs only log H.
inline double gradient_identity_residual(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M)
{
    const Matrix g = fd_log_H_gradient(d, f, t, M);
    const Matrix lhs = -(M.matrix() * g * M.matrix()) / double(d.size());
    const Matrix rhs = M.matrix() - maronna_map(d, f, t, M);
    return (lhs - rhs).norm() / M.matrix().norm();
}

struct HessianForm {
    /// <Q, Hess_M(Q)>
    double value = 0.0;
    /// value / (N H(t, M)); same sign, never under/overflows.
    double normalized = 0.0;
    double log_H = 0.0;
};

/// The Hessian-gate tolerance: the closed form is valid at solutions only.
inline constexpr double kHessianResidualGate = 1e-6;

class PreconditionError : public Error {
public:
    using Error::Error;
};

/// <Q, Hess H(t, .)(M) Q> at a solution M of the fixed-point equation:
///   -N H [ <Q, M^{-1} Q M^{-1}> + (1/N) sum_i u_x(t, q_i) (y_i^T M^{-1} Q M^{-1} y_i)^2 ].
inline HessianForm hessian_quadratic_form(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M,
                                          const Matrix& Q)
{
    const double res = maronna_residual(d, f, t, M);
    if (!(res <= kHessianResidualGate)) {
        std::ostringstream os;
        os << "hessian_quadratic_form: M is not a solution (residual " << res << " > " << kHessianResidualGate << ")";
        throw PreconditionError(os.str());
    }
    const Matrix minv = M.inverse();
    const Matrix a = minv * Q * minv;
    const double n = double(d.size());
    double s = (Q.array() * a.array()).sum();
    const Vector q = quadratic_forms(d, M);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const Vector y = d.sample(i);
        const double z = y.dot(a * y);
        s += f.u_x(t, q(i)) * z * z / n;
    }
    HessianForm out;
    out.log_H = eval_H(d, f, t, M).log;
    out.normalized = -s;
    out.value = -n * std::exp(out.log_H) * s;
    return out;
}

// ---------------------------------------------------------------------------
// Diagnostic suite
// ---------------------------------------------------------------------------

struct DiagnosticReport {
    std::string name;
    double t = 0.0;
    bool passed = false;
    double worst_case = 0.0;
    double tolerance = 0.0;
    std::string details;
};

/// Random symmetric matrix with i.i.d. N(0,1) entries in the lower triangle.
inline Matrix random_symmetric(Eigen::Index m, std::mt19937_64& rng)
{
    std::normal_distribution<double> n01;
    Matrix q(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            q(i, j) = n01(rng);
            q(j, i) = q(i, j);
        }
    }
    return q;
}

/// Random orthogonal eigenvectors with log-uniform eigenvalues in [lo, hi].
inline SpdMatrix random_spd(Eigen::Index m, std::mt19937_64& rng, double lo = 1e-2, double hi = 1e2)
{
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> unif(std::log(lo), std::log(hi));
    Matrix g(m, m);
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        g.data()[i] = n01(rng);
    }
    const Matrix o = Eigen::HouseholderQR<Matrix>(g).householderQ();
    Vector lam(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        lam(i) = std::exp(unif(rng));
    }
    return SpdMatrix(o * lam.asDiagonal() * o.transpose());
}

struct DiagnosticOptions {
    std::uint64_t seed = 20240101;
    int random_matrices = 20;
    int random_directions = 100;
    double gradient_tol = 1e-4;
    double bound_tol = 1e-10;
    /// Eigenvalue bracket widening factor relative to the largest-t solve.
    double eigen_margin = 10.0;
    SolverConfig solver{};
};

inline DiagnosticReport gradient_identity_check(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M,
                                                double tol, const std::string& label)
{
    const double r = gradient_identity_residual(d, f, t, M);
    return {"gradient-identity" + label, t, r < tol, r, tol, "relative Frobenius residual"};
}

/// Negativity: <Q, Hess Q> < 0 for random Q != 0. worst_case is the
/// largest normalized value, which must be negative.
inline DiagnosticReport hessian_negativity_check(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M,
                                                 int directions, std::mt19937_64& rng)
{
    DiagnosticReport r{"hessian-negative", t, false, 0.0, 0.0, ""};
    const double res = maronna_residual(d, f, t, M);
    if (!(res <= kHessianResidualGate)) {
        std::ostringstream os;
        os << "precondition violated: M is not a solution (residual " << res << ")";
        r.worst_case = res;
        r.tolerance = kHessianResidualGate;
        r.details = os.str();
        return r;
    }
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < directions; ++k) {
        const Matrix q = random_symmetric(M.dim(), rng);
        worst = std::max(worst, hessian_quadratic_form(d, f, t, M, q).normalized);
    }
    r.worst_case = worst;
    r.passed = worst < 0.0;
    r.details = std::to_string(directions) + " random directions, max of <Q,HQ>/(N H)";
    return r;
}

/// log H - log B <= 0 on random SPD matrices and at M; also checks the
/// product identity H / B = prod_i g(t, q_i)^m.
inline DiagnosticReport h_below_b_check(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M,
                                        int samples, double tol, std::mt19937_64& rng)
{
    double worst = -std::numeric_limits<double>::infinity();
    double identity_err = 0.0;
    auto probe = [&](const SpdMatrix& a) {
        const double lh = eval_H(d, f, t, a).log;
        const double lb = eval_B(d, a).log;
        worst = std::max(worst, lh - lb);
        const Vector q = quadratic_forms(d, a);
        double lg = 0.0;
        for (Eigen::Index i = 0; i < q.size(); ++i) {
            lg += f.log_g(t, q(i));
        }
        identity_err = std::max(identity_err, std::fabs((lh - lb) - f.md() * lg) / std::max(1.0, std::fabs(lh - lb)));
    };
    probe(M);
    for (int k = 0; k < samples; ++k) {
        probe(random_spd(M.dim(), rng));
    }
    DiagnosticReport r{"H<=B", t, worst <= tol && identity_err <= tol, worst, tol, ""};
    std::ostringstream os;
    os << samples + 1 << " matrices, max log(H/B); product identity error " << identity_err;
    r.details = os.str();
    return r;
}

/// g(t, .) <= 1 at every q_i(M) and on a log grid, with g(t, x_t) = 1.
inline DiagnosticReport g_maximum_check(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M,
                                        double tol)
{
    double worst = -std::numeric_limits<double>::infinity();
    const Vector q = quadratic_forms(d, M);
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        worst = std::max(worst, f.log_g(t, q(i)));
    }
    for (double x : log_spaced(1e-3, 1e3, 61)) {
        worst = std::max(worst, f.log_g(t, x));
    }
    const double xt = f.xt(t);
    const double at_peak = std::fabs(f.log_g(t, xt));
    DiagnosticReport r{"g-maximum", t, worst <= tol && at_peak <= 1e-8, worst, tol, ""};
    std::ostringstream os;
    os << "max log g over q_i and grid; |log g(t, x_t)| = " << at_peak;
    r.details = os.str();
    return r;
}

/// Runs every check at each t (solving for M(t) first) plus the eigenvalue
/// bracket across the t-list. Admissibility and weight conditions are gated
/// first; when they fail the solver-based checks are skipped.
inline std::vector<DiagnosticReport> run_diagnostic_suite(const Dataset& d, const WeightFamily& f,
                                                          std::vector<double> t_list, const DiagnosticOptions& opt = {})
{
    std::vector<DiagnosticReport> out;
    std::mt19937_64 rng(opt.seed);

    AdmissibilityVerdict adm;
    try {
        adm = check_admissibility(d, AdmissibilityMode::exact);
    } catch (const InputError&) {
        adm = check_admissibility(d, AdmissibilityMode::randomized);
    }
    {
        DiagnosticReport r{"admissibility", 0.0, adm.admissible, double(adm.subsets_checked), 0.0, ""};
        std::ostringstream os;
        os << (adm.exhaustive ? "exhaustive" : "randomized") << ", " << adm.subsets_checked << " subsets";
        if (!adm.admissible) {
            os << "; rank-deficient subset {";
            for (std::size_t k = 0; k < adm.witness.size(); ++k) {
                os << (k ? "," : "") << adm.witness[k];
            }
            os << "}";
        }
        if (d.size() <= d.dim()) {
            os << "; need N > m";
            r.passed = false;
        }
        r.details = os.str();
        out.push_back(r);
    }

    const ConditionReport cond = validate_conditions(f);
    for (const ConditionCheck* c : {&cond.u1, &cond.u2, &cond.u3}) {
        DiagnosticReport r{"condition-" + c->name, 0.0, c->passed, double(c->witnesses.size()), 0.0, ""};
        if (!c->passed) {
            const auto& w = c->witnesses.front();
            std::ostringstream os;
            os << "t=" << w.t << " x=" << w.x << ": " << w.what;
            r.details = os.str();
        } else {
            r.details = "holds on the default grid";
        }
        out.push_back(r);
    }
    if (!adm.admissible || !cond.all_passed() || d.size() <= d.dim()) {
        return out;
    }

    std::sort(t_list.begin(), t_list.end(), std::greater<>());
    double lam_lo = 0.0;
    double lam_hi = 0.0;
    double bracket_worst = 1.0;
    bool bracket_ok = true;
    std::optional<Matrix> previous;
    for (std::size_t k = 0; k < t_list.size(); ++k) {
        const double t = t_list[k];
        const SolverConfig cfg = previous ? opt.solver.with_init(*previous) : opt.solver;
        Solution s = solve_maronna(d, f, t, cfg);
        if (!s.report.converged) {
            out.push_back({"solve", t, false, s.report.final_residual, opt.solver.tol, "solver did not converge"});
            continue;
        }
        previous = s.matrix.matrix();
        const SpdMatrix& M = s.matrix;

        out.push_back(gradient_identity_check(d, f, t, M, opt.gradient_tol, "@solution"));
        double worst_random = 0.0;
        for (int j = 0; j < opt.random_matrices; ++j) {
            worst_random = std::max(worst_random, gradient_identity_residual(d, f, t, random_spd(M.dim(), rng, 0.1, 10.0)));
        }
        out.push_back({"gradient-identity@random", t, worst_random < opt.gradient_tol, worst_random, opt.gradient_tol,
                       std::to_string(opt.random_matrices) + " random SPD matrices"});
        out.push_back(hessian_negativity_check(d, f, t, M, opt.random_directions, rng));
        out.push_back(h_below_b_check(d, f, t, M, opt.random_directions, opt.bound_tol, rng));
        out.push_back(g_maximum_check(d, f, t, M, opt.bound_tol));

        const Eigen::SelfAdjointEigenSolver<Matrix> es(M.matrix(), Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        if (k == 0) {
            lam_lo = lo / opt.eigen_margin;
            lam_hi = hi * opt.eigen_margin;
        } else {
            bracket_ok = bracket_ok && lo >= lam_lo && hi <= lam_hi;
            bracket_worst = std::max({bracket_worst, lam_lo / lo, hi / lam_hi});
        }
    }
    if (!t_list.empty()) {
        std::ostringstream os;
        os << "eigenvalues within [" << lam_lo << ", " << lam_hi << "] (largest-t bracket widened by "
           << opt.eigen_margin << "); worst ratio to bracket edge";
        out.push_back({"eigenvalue-bracket", t_list.back(), bracket_ok, bracket_worst, 1.0, os.str()});
    }
    return out;
}

inline bool all_passed(const std::vector<DiagnosticReport>& reports)
{
    return std::all_of(reports.begin(), reports.end(), [](const DiagnosticReport& r) { return r.passed; });
}

} // namespace robscatter
