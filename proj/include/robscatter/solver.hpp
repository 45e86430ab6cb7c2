#pragma once

// Fixed-point solvers for the M-estimator equation
//
//     M = (1/N) sum_i u(t, y_i^T M^{-1} y_i) y_i y_i^T          (t > 0)
//
// its Tyler limit (u(0, x) = m / x, solutions form a ray, pinned by trace m),
// the limit scale xi solving sum_i v1(q_i(P) / xi) = 0, and the t -> 0 path.

#include "robscatter/core.hpp"
#include "robscatter/numerics.hpp"
#include "robscatter/weights.hpp"

#include <Eigen/QR>

#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace robscatter {

/// The iterate stopped being positive definite.
class SolverError : public Error {
public:
    SolverError(const std::string& what, int iteration) : Error(what), iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

enum class InitKind { identity, sample_scatter, user };

/// How successive iterates are produced from evaluations of the fixed-point map.
enum class Scheme {
    /// M_{k+1} = F(M_k).
    picard,
    /// Damped Newton on the sample weights. Solutions have the form
    /// M = (1/N) sum_i w_i y_i y_i^T, so the equation reduces to the N scalar
    /// equations w_i = u(t, q_i(M(w))). Falls back to a plain step when the
    /// line search fails. Tyler's equation always uses `anderson` instead.
    newton,
    /// Anderson mixing of the last `anderson_depth` map evaluations, falling
    /// back to a plain step whenever the mixed iterate is not SPD.
    anderson,
};

struct SolverConfig {
    double tol = 1e-10;
    int max_iter = 2000;
    InitKind init = InitKind::identity;
    std::optional<Matrix> init_matrix;
    Scheme scheme = Scheme::newton;
    int anderson_depth = 5;
    bool record_trajectory = false;

    void validate() const
    {
        if (!(tol > 0.0)) {
            throw InputError("SolverConfig: tol must be positive");
        }
        if (max_iter < 1) {
            throw InputError("SolverConfig: max_iter must be >= 1");
        }
        if (anderson_depth < 1) {
            throw InputError("SolverConfig: anderson_depth must be >= 1");
        }
        if (init == InitKind::user && !init_matrix) {
            throw InputError("SolverConfig: user init selected but no matrix supplied");
        }
    }

    SolverConfig with_init(const Matrix& m) const
    {
        SolverConfig c = *this;
        c.init = InitKind::user;
        c.init_matrix = m;
        return c;
    }
};

struct SolveReport {
    int iterations = 0;
    /// ||M - F(M)||_F / ||M||_F at the returned matrix.
    double final_residual = 0.0;
    bool converged = false;
    /// Residual of every iterate, when requested.
    std::vector<double> trajectory;
};

struct Solution {
    SpdMatrix matrix;
    SolveReport report;
};

namespace detail {

inline Matrix initial_matrix(const Dataset& d, const SolverConfig& cfg)
{
    const auto m = d.dim();
    switch (cfg.init) {
    case InitKind::identity:
        return Matrix::Identity(m, m);
    case InitKind::sample_scatter:
        return sample_scatter(d);
    case InitKind::user:
        if (cfg.init_matrix->rows() != m || cfg.init_matrix->cols() != m) {
            throw InputError("SolverConfig: init matrix has the wrong dimension");
        }
        return *cfg.init_matrix;
    }
    return Matrix::Identity(m, m);
}

inline Eigen::Map<const Vector> flat(const Matrix& a) { return {a.data(), a.size()}; }

/// Generic fixed-point driver. `map` takes an SPD iterate and returns F(M).
/// `residual` computes ||M - F(M)|| / ||M|| in the sense of the equation being solved.
template <class Map, class Residual>
Solution fixed_point(Matrix start, const SolverConfig& cfg, Map&& map, Residual&& residual)
{
    cfg.validate();
    SolveReport rep;
    std::optional<SpdMatrix> x;
    try {
        x.emplace(std::move(start));
    } catch (const NotSpdError&) {
        throw InputError("fixed_point: initial matrix is not positive definite");
    }

    std::deque<Vector> xs;
    std::deque<Vector> gs;
    std::deque<Vector> fs;
    const std::size_t depth = std::size_t(cfg.anderson_depth);

    for (int k = 0;; ++k) {
        Matrix fx = map(*x);
        const double r = residual(x->matrix(), fx);
        if (!std::isfinite(r) || !fx.allFinite()) {
            throw SolverError("fixed_point: non-finite iterate at iteration " + std::to_string(k), k);
        }
        if (cfg.record_trajectory) {
            rep.trajectory.push_back(r);
        }
        rep.iterations = k;
        rep.final_residual = r;
        if (r < cfg.tol) {
            rep.converged = true;
            return {std::move(*x), std::move(rep)};
        }
        if (k >= cfg.max_iter) {
            return {std::move(*x), std::move(rep)};
        }

        Matrix next = fx;
        if (cfg.scheme == Scheme::anderson) {
            // Residuals are weighted by 1/||M||: the least-squares step then
            // minimizes the relative residual used by the stopping test. With
            // the plain residual F(M) - M, which vanishes as M -> 0 for nearly
            // scale-invariant maps (small t), the mixing drifts towards 0.
            const double scale = x->matrix().norm();
            xs.emplace_back(flat(x->matrix()));
            gs.emplace_back(flat(fx));
            fs.emplace_back((flat(fx) - flat(x->matrix())) / scale);
            if (xs.size() > depth + 1) {
                xs.pop_front();
                gs.pop_front();
                fs.pop_front();
            }
            if (xs.size() > 1) {
                const auto cols = Eigen::Index(xs.size() - 1);
                const auto len = Eigen::Index(xs.front().size());
                Matrix df(len, cols);
                Matrix dg(len, cols);
                for (Eigen::Index j = 0; j < cols; ++j) {
                    const auto a = std::size_t(j);
                    df.col(j) = fs[a + 1] - fs[a];
                    dg.col(j) = gs[a + 1] - gs[a];
                }
                const Vector gamma = df.colPivHouseholderQr().solve(fs.back());
                if (gamma.allFinite()) {
                    Vector mixed = gs.back() - dg * gamma;
                    next = Eigen::Map<Matrix>(mixed.data(), fx.rows(), fx.cols());
                }
            }
        }

        auto candidate = SpdMatrix::try_make(next);
        if (candidate && cfg.scheme == Scheme::anderson) {
            // reject mixed steps that change the scale by more than the map itself could
            const double ratio = next.trace() / fx.trace();
            if (!(ratio > 0.1 && ratio < 10.0)) {
                candidate.reset();
            }
        }
        if (!candidate && cfg.scheme == Scheme::anderson) {
            xs.clear();
            gs.clear();
            fs.clear();
            candidate = SpdMatrix::try_make(fx);
        }
        if (!candidate) {
            throw SolverError("fixed_point: iterate " + std::to_string(k + 1) +
                                  " lost positive definiteness (are the samples admissible?)",
                              k + 1);
        }
        x.emplace(std::move(*candidate));
    }
}

inline double relative_change(const Matrix& m, const Matrix& fm) { return (m - fm).norm() / m.norm(); }

/// M(w) together with the quantities the weight-space Newton step needs.
struct WeightState {
    SpdMatrix matrix;
    Vector q;
    Vector uq;
    /// L^{-1} Y^T, so that y_i^T M^{-1} y_j = (Z^T Z)_ij.
    Matrix z;
};

inline std::optional<WeightState> weight_state(const Dataset& d, const WeightFamily& f, double t, const Vector& w)
{
    auto m = SpdMatrix::try_make(weighted_scatter(d, w));
    if (!m) {
        return std::nullopt;
    }
    Matrix z = d.samples().transpose();
    m->cholesky().matrixL().solveInPlace(z);
    Vector q = z.colwise().squaredNorm().transpose();
    Vector uq(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        uq(i) = f.u(t, q(i));
    }
    if (!q.allFinite() || !uq.allFinite()) {
        return std::nullopt;
    }
    return WeightState{std::move(*m), std::move(q), std::move(uq), std::move(z)};
}

/// Rescales w so that M(w) satisfies the trace identity (1/N) sum_i v(t, q_i) = m,
/// which every solution obeys (multiply the equation by M^{-1} and take traces).
/// q scales as 1/c under w -> c w and v(t, .) is increasing, so the root is unique.
inline std::optional<WeightState> project_scale(const Dataset& d, const WeightFamily& f, double t, Vector& w,
                                                const WeightState& st)
{
    const double target = f.md() * double(d.size());
    auto phi = [&](double log_c) {
        const double c = std::exp(log_c);
        double sum = 0.0;
        for (Eigen::Index i = 0; i < st.q.size(); ++i) {
            sum += f.v(t, st.q(i) / c);
        }
        return sum - target;
    };
    double lo = -1.0;
    double hi = 1.0;
    for (int k = 0; phi(lo) <= 0.0; ++k) {
        if (k > 60) {
            return std::nullopt;
        }
        lo *= 2.0;
    }
    for (int k = 0; phi(hi) >= 0.0; ++k) {
        if (k > 60) {
            return std::nullopt;
        }
        hi *= 2.0;
    }
    const double log_c = brent_root(phi, lo, hi, 1e-15, 0.0).x;
    w *= std::exp(log_c);
    return weight_state(d, f, t, w);
}

/// Newton iteration in s = log w for G(s) = s - log u(t, q(M(e^s))) = 0, with
///   dq_i / dw_j = -(y_i^T M^{-1} y_j)^2 / N.
/// The log form keeps the weights positive and makes ||G|| blind to the
/// overall scale; a residual in w itself vanishes as M -> 0 and attracts the
/// iteration there when t is small. The stopping rule is the same relative
/// change ||M - F(M)|| / ||M|| as for the fixed-point schemes, evaluated at M(w).
inline Solution maronna_newton(const Dataset& d, const WeightFamily& f, double t, const SolverConfig& cfg)
{
    cfg.validate();
    const double n = double(d.size());
    Vector w;
    try {
        const SpdMatrix start(initial_matrix(d, cfg));
        const Vector q = quadratic_forms(d, start);
        w.resize(q.size());
        for (Eigen::Index i = 0; i < q.size(); ++i) {
            w(i) = f.u(t, q(i));
        }
    } catch (const NotSpdError&) {
        throw InputError("fixed_point: initial matrix is not positive definite");
    }
    auto log_residual = [](const Vector& weights, const WeightState& st) {
        return Vector(weights.array().log() - st.uq.array().log());
    };

    // Projects onto the trace identity; along the overall scale the
    // Jacobian has an O(t) eigenvalue and the Newton merit is nearly flat.
    auto settle = [&](Vector& weights) -> std::optional<WeightState> {
        auto st = weight_state(d, f, t, weights);
        if (!st) {
            return st;
        }
        Vector scaled = weights;
        auto projected = project_scale(d, f, t, scaled, *st);
        if (!projected) {
            return st;
        }
        weights = std::move(scaled);
        return projected;
    };

    SolveReport rep;
    auto state = settle(w);
    for (int k = 0;; ++k) {
        if (!state || !(state->uq.minCoeff() > 0.0)) {
            throw SolverError("fixed_point: iterate " + std::to_string(k + 1) +
                                  " lost positive definiteness (are the samples admissible?)",
                              k + 1);
        }
        const double r = relative_change(state->matrix.matrix(), weighted_scatter(d, state->uq));
        if (!std::isfinite(r)) {
            throw SolverError("fixed_point: non-finite iterate at iteration " + std::to_string(k), k);
        }
        if (cfg.record_trajectory) {
            rep.trajectory.push_back(r);
        }
        rep.iterations = k;
        rep.final_residual = r;
        if (r < cfg.tol) {
            rep.converged = true;
            return {std::move(state->matrix), std::move(rep)};
        }
        if (k >= cfg.max_iter) {
            return {std::move(state->matrix), std::move(rep)};
        }

        const Vector g = log_residual(w, *state);
        const Matrix kk = (state->z.transpose() * state->z).cwiseAbs2() / n;
        Matrix jac = Matrix::Identity(w.size(), w.size());
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double dlogu = f.u_x(t, state->q(i)) / state->uq(i);
            jac.row(i) += dlogu * kk.row(i).cwiseProduct(w.transpose());
        }
        const Vector step = jac.partialPivLu().solve(-g);

        std::optional<WeightState> next;
        Vector wn;
        if (step.allFinite()) {
            const double g0 = g.norm();
            for (double alpha = 1.0; alpha > 1e-6; alpha *= 0.5) {
                wn = (w.array().log() + alpha * step.array()).exp();
                auto trial = settle(wn);
                if (trial && trial->uq.minCoeff() > 0.0 && log_residual(wn, *trial).norm() <= (1.0 - 1e-4 * alpha) * g0) {
                    next = std::move(trial);
                    break;
                }
            }
        }
        if (!next) {
            // plain step: the weights of F(M(w))
            wn = state->uq;
            next = settle(wn);
        }
        w = std::move(wn);
        state = std::move(next);
    }
}

inline void require_square_data(const Dataset& d, const char* who)
{
    if (d.size() <= d.dim()) {
        throw InputError(std::string(who) + ": need N > m samples, got N=" + std::to_string(d.size()) +
                         ", m=" + std::to_string(d.dim()));
    }
}

} // namespace detail

/// Right-hand side (1/N) sum_i u(t, q_i(M)) y_i y_i^T.
inline Matrix maronna_map(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M)
{
    const Vector q = quadratic_forms(d, M);
    Vector w(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        w(i) = f.u(t, q(i));
    }
    return weighted_scatter(d, w);
}

/// Right-hand side (m/N) sum_i y_i y_i^T / q_i(M).
inline Matrix tyler_map(const Dataset& d, const SpdMatrix& M)
{
    const Vector q = quadratic_forms(d, M);
    return weighted_scatter(d, double(d.dim()) * q.cwiseInverse());
}

inline double maronna_residual(const Dataset& d, const WeightFamily& f, double t, const SpdMatrix& M)
{
    return detail::relative_change(M.matrix(), maronna_map(d, f, t, M));
}

inline double tyler_residual(const Dataset& d, const SpdMatrix& M)
{
    return detail::relative_change(M.matrix(), tyler_map(d, M));
}

/// Solves M = (1/N) sum_i u(t, y_i^T M^{-1} y_i) y_i y_i^T for t > 0.
inline Solution solve_maronna(const Dataset& d, const WeightFamily& f, double t, const SolverConfig& cfg = {})
{
    if (!(t > 0.0)) {
        throw InputError("solve_maronna: t must be positive");
    }
    if (f.dim() != d.dim()) {
        throw InputError("solve_maronna: family dimension " + std::to_string(f.dim()) +
                         " does not match data dimension " + std::to_string(d.dim()));
    }
    detail::require_square_data(d, "solve_maronna");
    if (cfg.scheme == Scheme::newton) {
        return detail::maronna_newton(d, f, t, cfg);
    }
    return detail::fixed_point(
        detail::initial_matrix(d, cfg), cfg, [&](const SpdMatrix& M) { return maronna_map(d, f, t, M); },
        [](const Matrix& m, const Matrix& fm) { return detail::relative_change(m, fm); });
}

enum class TylerScaling {
    /// Rescale every iterate to trace m; converges to the unique trace-m solution P.
    trace,
    /// Plain iteration; the limit depends on the scale of the start.
    none,
};

/// Solves M = (m/N) sum_i y_i y_i^T / (y_i^T M^{-1} y_i).
///
/// With TylerScaling::trace the result has Tr = m. The reported residual is
/// always measured against the unnormalized equation.
inline Solution solve_tyler(const Dataset& d, const SolverConfig& config = {},
                            TylerScaling scaling = TylerScaling::trace)
{
    detail::require_square_data(d, "solve_tyler");
    SolverConfig cfg = config;
    if (cfg.scheme == Scheme::newton) {
        // the weight-space Jacobian is singular along the scale direction here
        cfg.scheme = Scheme::anderson;
    }
    const double md = double(d.dim());
    auto rescale = [md](Matrix a) {
        a *= md / a.trace();
        return a;
    };
    Matrix start = detail::initial_matrix(d, cfg);
    if (scaling == TylerScaling::trace) {
        start = rescale(std::move(start));
        return detail::fixed_point(
            std::move(start), cfg, [&](const SpdMatrix& M) { return rescale(tyler_map(d, M)); },
            // At a fixed point of the normalized map F(P) = cP forces c = 1, so
            // comparing against the normalized image is the same test.
            [](const Matrix& m, const Matrix& fm) { return detail::relative_change(m, fm); });
    }
    return detail::fixed_point(
        std::move(start), cfg, [&](const SpdMatrix& M) { return tyler_map(d, M); },
        [](const Matrix& m, const Matrix& fm) { return detail::relative_change(m, fm); });
}

struct XiResult {
    double xi = 0.0;
    /// sum_i v1(q_i / xi) at the returned xi.
    double equation_value = 0.0;
    int iterations = 0;
};

/// Unique xi > 0 with sum_i v1(q_i(P) / xi) = 0.
///
/// The map xi -> sum_i v1(q_i / xi) is strictly decreasing when v1 is
/// increasing, so the root is bracketed starting from the q-range over x0.
inline XiResult solve_xi(const Dataset& d, const WeightFamily& f, const SpdMatrix& P)
{
    const Vector q = quadratic_forms(d, P);
    const double n = double(d.size());
    auto phi = [&](double xi) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < q.size(); ++i) {
            s += f.v1(q(i) / xi);
        }
        return s;
    };
    const double x0 = f.x0();
    double lo = q.minCoeff() / x0 * 0.5;
    double hi = q.maxCoeff() / x0 * 2.0;
    int expansions = 0;
    while (phi(lo) <= 0.0) {
        lo *= 0.5;
        if (++expansions > 200) {
            throw ConditionViolation("solve_xi: no sign change below the bracket (condition U3)");
        }
    }
    while (phi(hi) >= 0.0) {
        hi *= 2.0;
        if (++expansions > 200) {
            throw ConditionViolation("solve_xi: no sign change above the bracket (condition U3)");
        }
    }
    const RootResult r = brent_root(phi, lo, hi, 0.0, 1e-10 * n);
    return {r.x, r.fx, r.iterations};
}

struct PathPoint {
    double t = 0.0;
    SpdMatrix matrix;
    /// ||M(t) - M0||_F
    double deviation = 0.0;
    SolveReport report;
};

struct LimitPath {
    SpdMatrix tyler;  ///< trace-m solution P
    double xi = 0.0;
    SpdMatrix limit;  ///< M0 = xi P
    SolveReport tyler_report;
    std::vector<PathPoint> points;
};

/// M(t) along a strictly decreasing grid together with the limit M0 = xi P.
///
/// With `warm_start` each solve starts from the previous grid point's solution.
inline LimitPath limit_path(const Dataset& d, const WeightFamily& f, const std::vector<double>& t_grid,
                            const SolverConfig& cfg = {}, bool warm_start = true)
{
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        if (!(t_grid[k] > 0.0)) {
            throw InputError("limit_path: grid values must be positive");
        }
        if (k > 0 && !(t_grid[k] < t_grid[k - 1])) {
            throw InputError("limit_path: grid must be strictly decreasing");
        }
    }
    Solution tyler = solve_tyler(d, cfg);
    if (!tyler.report.converged) {
        throw SolverError("limit_path: Tyler solve did not converge (residual " +
                              std::to_string(tyler.report.final_residual) + ")",
                          tyler.report.iterations);
    }
    const XiResult xi = solve_xi(d, f, tyler.matrix);
    SpdMatrix limit = tyler.matrix.scaled(xi.xi);

    LimitPath out{tyler.matrix, xi.xi, limit, tyler.report, {}};
    std::optional<Matrix> previous;
    for (double t : t_grid) {
        const SolverConfig c = (warm_start && previous) ? cfg.with_init(*previous) : cfg;
        Solution s = solve_maronna(d, f, t, c);
        const double dev = (s.matrix.matrix() - limit.matrix()).norm();
        previous = s.matrix.matrix();
        out.points.push_back({t, std::move(s.matrix), dev, std::move(s.report)});
    }
    return out;
}

} // namespace robscatter
