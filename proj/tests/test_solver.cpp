#include "test_support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

using namespace robscatter;
using robscatter::testing::frame3;
using robscatter::testing::gaussian_dataset;
using robscatter::testing::rel_frob;

namespace {

// Substitution residual computed with an explicit inverse, independent of the
// Cholesky-based path in the library.
double substituted_residual(const Dataset& d, const WeightFamily& f, double t, const Matrix& M)
{
    const Matrix inv = M.inverse();
    Matrix rhs = Matrix::Zero(d.dim(), d.dim());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const Vector y = d.sample(i);
        rhs += f.u(t, y.dot(inv * y)) * y * y.transpose();
    }
    rhs /= double(d.size());
    return (M - rhs).norm() / M.norm();
}

} // namespace

TEST(SolveMaronna, TightFrameModelIsIdentity)
{
    const auto f = make_model_family(2);
    for (double t : {1e-3, 1e-2, 0.1, 1.0}) {
        const Solution s = solve_maronna(frame3(), f, t);
        ASSERT_TRUE(s.report.converged);
        EXPECT_LT((s.matrix.matrix() - Matrix::Identity(2, 2)).norm(), 1e-8) << "t=" << t;
    }
}

TEST(SolveMaronna, TightFrameStudentScalarFixedPoint)
{
    // M = c I, q = 1/c, M = (u(t, 1/c) / m) I. Scalar oracle by plain iteration.
    const int m = 2;
    const double t = 1.0;
    const auto f = make_student_t_family(m);
    double c = 1.0;
    for (int i = 0; i < 2000; ++i) {
        c = (m + t) / (t + 1.0 / c) / m;
    }
    EXPECT_NEAR(c, 0.5, 1e-14);
    const Solution s = solve_maronna(frame3(), f, t);
    ASSERT_TRUE(s.report.converged);
    EXPECT_LT((s.matrix.matrix() - c * Matrix::Identity(2, 2)).norm(), 1e-9);
    EXPECT_LT(substituted_residual(frame3(), f, t, s.matrix.matrix()), 1e-8);
}

TEST(SolveMaronna, SeededDatasetResidual)
{
    const Dataset d = gaussian_dataset(5, 20, 42);
    const auto f = make_model_family(5);
    for (Scheme scheme : {Scheme::newton, Scheme::anderson, Scheme::picard}) {
        SolverConfig cfg;
        cfg.scheme = scheme;
        cfg.max_iter = 100000;
        const Solution s = solve_maronna(d, f, 0.5, cfg);
        ASSERT_TRUE(s.report.converged);
        EXPECT_LT(s.report.final_residual, cfg.tol);
        EXPECT_LT(substituted_residual(d, f, 0.5, s.matrix.matrix()), 1e-8);
        EXPECT_LT(maronna_residual(d, f, 0.5, s.matrix), 10 * cfg.tol);
    }
}

TEST(SolveMaronna, SchemesAgree)
{
    const Dataset d = gaussian_dataset(4, 12, 9);
    const auto f = make_student_t_family(4);
    SolverConfig picard;
    picard.scheme = Scheme::picard;
    picard.max_iter = 200000;
    SolverConfig anderson;
    anderson.scheme = Scheme::anderson;
    const Solution a = solve_maronna(d, f, 0.2, picard);
    const Solution b = solve_maronna(d, f, 0.2, anderson);
    const Solution c = solve_maronna(d, f, 0.2);
    ASSERT_TRUE(a.report.converged);
    ASSERT_TRUE(b.report.converged);
    ASSERT_TRUE(c.report.converged);
    EXPECT_LT(rel_frob(a.matrix.matrix(), b.matrix.matrix()), 1e-8);
    EXPECT_LT(rel_frob(c.matrix.matrix(), b.matrix.matrix()), 1e-8);
    EXPECT_LE(b.report.iterations, a.report.iterations);
    EXPECT_LE(c.report.iterations, b.report.iterations);
}

TEST(SolveMaronna, MinimalSampleSizeMatchesNullVectorReduction)
{
    // With N = m + 1 the samples have a one-dimensional left null vector c
    // (Y^T c = 0), and for M = (1/N) Y^T W Y one has
    //   q_i = N (1 - c_i^2 / (w_i s)) / w_i,   s = sum_j c_j^2 / w_j.
    // A solution must satisfy w_i = u(t, q_i) with q_i from that formula.
    const int m = 6;
    const Dataset d = gaussian_dataset(m, m + 1, 77);
    const auto f = make_student_t_family(m);
    const double t = 0.3;
    const Solution s = solve_maronna(d, f, t);
    ASSERT_TRUE(s.report.converged);

    const Eigen::FullPivLU<Matrix> lu(d.samples().transpose());
    const Vector c = lu.kernel().col(0);
    const Vector q = quadratic_forms(d, s.matrix);
    Vector w(m + 1);
    for (int i = 0; i <= m; ++i) {
        w(i) = f.u(t, q(i));
    }
    const double sum = (c.array().square() / w.array()).sum();
    for (int i = 0; i <= m; ++i) {
        const double qi = double(m + 1) * (1.0 - c(i) * c(i) / (w(i) * sum)) / w(i);
        EXPECT_NEAR(qi, q(i), 1e-7 * q(i));
        EXPECT_NEAR(f.u(t, qi), w(i), 1e-7 * w(i));
    }
}

TEST(SolveMaronna, NonConvergenceIsReported)
{
    const Dataset d = gaussian_dataset(5, 20, 42);
    SolverConfig cfg;
    cfg.max_iter = 1;
    cfg.record_trajectory = true;
    const Solution s = solve_maronna(d, make_model_family(5), 0.5, cfg);
    EXPECT_FALSE(s.report.converged);
    EXPECT_GE(s.report.final_residual, cfg.tol);
    EXPECT_EQ(s.report.trajectory.size(), 2u);
    EXPECT_EQ(s.report.trajectory.back(), s.report.final_residual);
}

TEST(SolveMaronna, RejectsBadInput)
{
    const auto f = make_model_family(2);
    EXPECT_THROW(solve_maronna(frame3(), f, 0.0), InputError);
    EXPECT_THROW(solve_maronna(frame3(), make_model_family(3), 1.0), InputError);
    const Dataset small = normalize_dataset(std::vector<std::vector<double>>{{1, 0}, {0, 1}});
    EXPECT_THROW(solve_maronna(small, f, 1.0), InputError);
    SolverConfig cfg;
    cfg.tol = 0.0;
    EXPECT_THROW(solve_maronna(frame3(), f, 1.0, cfg), InputError);
}

TEST(SolveMaronna, CholeskyFailureCarriesIteration)
{
    // Samples all on one line: the scatter is singular after the first step.
    const Dataset d = normalize_dataset(std::vector<std::vector<double>>{{1, 0}, {1, 0}, {-1, 0}});
    try {
        solve_maronna(d, make_model_family(2), 1.0);
        FAIL() << "expected SolverError";
    } catch (const SolverError& e) {
        EXPECT_EQ(e.iteration(), 1);
    }
}

TEST(SolveTyler, TightFrame)
{
    const Solution s = solve_tyler(frame3());
    ASSERT_TRUE(s.report.converged);
    EXPECT_LT((s.matrix.matrix() - Matrix::Identity(2, 2)).norm(), 1e-10);
}

TEST(SolveTyler, TraceAndTraceIdentity)
{
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Dataset d = gaussian_dataset(5, 20, seed);
        const Solution s = solve_tyler(d);
        ASSERT_TRUE(s.report.converged);
        EXPECT_NEAR(s.matrix.matrix().trace(), 5.0, 1e-12);
        EXPECT_LT(tyler_residual(d, s.matrix), 1e-9);
        EXPECT_NEAR(quadratic_forms(d, s.matrix).cwiseInverse().sum(), 20.0, 1e-8);
    }
}

TEST(SolveTyler, MultiStartAgreement)
{
    const double r = std::sqrt(2.0) / 2.0;
    const Dataset d = normalize_dataset(std::vector<std::vector<double>>{{1, 0}, {0, 1}, {r, r}});
    const Solution a = solve_tyler(d);
    Matrix init(2, 2);
    init << 5.0, -1.0, -1.0, 0.3;
    SolverConfig cfg;
    cfg.init = InitKind::user;
    cfg.init_matrix = init;
    const Solution b = solve_tyler(d, cfg);
    ASSERT_TRUE(a.report.converged && b.report.converged);
    EXPECT_LT((a.matrix.matrix() - b.matrix.matrix()).norm(), 1e-9);
}

TEST(SolveTyler, UnnormalizedSolutionsLieOnARay)
{
    const Dataset d = gaussian_dataset(4, 10, 5);
    std::mt19937_64 rng(8);
    const SpdMatrix start = random_spd(4, rng, 0.5, 2.0);
    SolverConfig cfg;
    cfg.scheme = Scheme::picard;
    cfg.max_iter = 100000;
    const Solution a = solve_tyler(d, cfg.with_init(start.matrix()), TylerScaling::none);
    const Solution b = solve_tyler(d, cfg.with_init(2.0 * start.matrix()), TylerScaling::none);
    ASSERT_TRUE(a.report.converged && b.report.converged);
    const double ratio = b.matrix.matrix().trace() / a.matrix.matrix().trace();
    EXPECT_LT(rel_frob(b.matrix.matrix(), ratio * a.matrix.matrix()), 1e-8);
    // both are proportional to the trace-normalized solution
    const Solution p = solve_tyler(d);
    const double ca = a.matrix.matrix().trace() / 4.0;
    EXPECT_LT(rel_frob(a.matrix.matrix(), ca * p.matrix.matrix()), 1e-8);
}

TEST(SolveXi, ModelFamilyIsOne)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Dataset d = gaussian_dataset(5, 20, seed);
        const Solution p = solve_tyler(d);
        EXPECT_NEAR(solve_xi(d, make_model_family(5), p.matrix).xi, 1.0, 1e-10);
    }
}

TEST(SolveXi, StudentFamilyIsOneOverM)
{
    const Dataset d = gaussian_dataset(5, 20, 17);
    const Solution p = solve_tyler(d);
    // oracle: v1(x) = 1 - m/x gives xi = N / (m sum 1/q_i)
    const Vector q = quadratic_forms(d, p.matrix);
    const double closed = 20.0 / (5.0 * q.cwiseInverse().sum());
    const XiResult r = solve_xi(d, make_student_t_family(5), p.matrix);
    EXPECT_NEAR(r.xi, closed, 1e-12);
    EXPECT_NEAR(r.xi, 0.2, 1e-8);
    EXPECT_LT(std::fabs(r.equation_value), 1e-10 * 20);
}

TEST(SolveXi, SymmetricCaseIsOneOverX0)
{
    const Solution p = solve_tyler(frame3());
    EXPECT_NEAR(solve_xi(frame3(), make_student_t_family(2), p.matrix).xi, 0.5, 1e-12);
    EXPECT_NEAR(solve_xi(frame3(), make_model_family(2), p.matrix).xi, 1.0, 1e-12);
}

TEST(SolveXi, NoRootIsReported)
{
    WeightFunctions fns;
    fns.u = [](double t, double x) { return 2.0 * (1.0 + t) / (x + t); };
    fns.v1 = [](double x) { return 1.0 + x; };  // never zero
    const WeightFamily f("no-root", 2, std::move(fns));
    const Solution p = solve_tyler(frame3());
    EXPECT_THROW(solve_xi(frame3(), f, p.matrix), ConditionViolation);
}

TEST(LimitPath, SymmetricCaseHasZeroDeviation)
{
    const LimitPath path = limit_path(frame3(), make_model_family(2), {1.0, 0.1, 0.01});
    for (const auto& p : path.points) {
        EXPECT_LT(p.deviation, 1e-8);
    }
}

TEST(LimitPath, DeviationDecreasesTowardsLimit)
{
    const Dataset d = gaussian_dataset(5, 20, 2024);
    const std::vector<double> grid{1e-1, 1e-2, 1e-3, 1e-4};
    for (const auto& f : {make_model_family(5), make_student_t_family(5)}) {
        const LimitPath path = limit_path(d, f, grid);
        for (std::size_t k = 1; k < path.points.size(); ++k) {
            EXPECT_LT(path.points[k].deviation, path.points[k - 1].deviation) << f.label();
        }
        EXPECT_LT(path.points.back().deviation, 0.1 * path.points.front().deviation);

        // A tighter tolerance gives the same deviations. The contraction rate of
        // the map is about 1 - t, so a residual r bounds the error by ~ r / t.
        SolverConfig tight;
        tight.tol = 1e-13;
        const LimitPath again = limit_path(d, f, grid, tight);
        for (std::size_t k = 0; k < grid.size(); ++k) {
            const double bound = 10.0 * SolverConfig{}.tol / grid[k] * path.limit.matrix().norm();
            EXPECT_NEAR(again.points[k].deviation, path.points[k].deviation, bound);
        }
    }
    const LimitPath st = limit_path(d, make_student_t_family(5), grid);
    EXPECT_NEAR(st.xi, 0.2, 1e-8);
    EXPECT_LT(rel_frob(st.limit.matrix(), st.tyler.matrix() / 5.0), 1e-8);
}

TEST(LimitPath, WarmAndColdAgree)
{
    const Dataset d = gaussian_dataset(4, 15, 31);
    const auto f = make_student_t_family(4);
    const std::vector<double> grid{1.0, 0.3, 0.05, 0.01};
    const LimitPath warm = limit_path(d, f, grid, {}, true);
    const LimitPath cold = limit_path(d, f, grid, {}, false);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        EXPECT_LT(rel_frob(warm.points[k].matrix.matrix(), cold.points[k].matrix.matrix()), 1e-8);
    }
}

TEST(LimitPath, RejectsNonDecreasingGrid)
{
    EXPECT_THROW(limit_path(frame3(), make_model_family(2), {0.1, 0.5}), InputError);
    EXPECT_THROW(limit_path(frame3(), make_model_family(2), {0.1, -0.5}), InputError);
}

TEST(Uniqueness, RandomStartsAgree)
{
    std::mt19937_64 rng(99);
    for (std::uint64_t seed : {10u, 11u}) {
        const Dataset d = gaussian_dataset(4, 9, seed);
        for (const auto& f : {make_model_family(4), make_student_t_family(4)}) {
            for (double t : {0.01, 1.0}) {
                const Solution ref = solve_maronna(d, f, t);
                ASSERT_TRUE(ref.report.converged);
                for (int k = 0; k < 10; ++k) {
                    SolverConfig cfg;
                    cfg.max_iter = 20000;
                    cfg.scheme = k % 2 ? Scheme::anderson : Scheme::newton;
                    const Solution s = solve_maronna(d, f, t, cfg.with_init(random_spd(4, rng).matrix()));
                    ASSERT_TRUE(s.report.converged);
                    EXPECT_LT(rel_frob(s.matrix.matrix(), ref.matrix.matrix()), 1e-6);
                }
            }
        }
    }
}

TEST(LimitPath, EigenvaluesStayBracketed)
{
    const Dataset d = gaussian_dataset(5, 20, 123);
    const LimitPath path = limit_path(d, make_model_family(5), {0.1, 0.03, 0.01, 0.003, 0.001, 1e-4});
    const Eigen::SelfAdjointEigenSolver<Matrix> top(path.points.front().matrix.matrix());
    const double lo = top.eigenvalues().minCoeff() / 10.0;
    const double hi = top.eigenvalues().maxCoeff() * 10.0;
    for (const auto& p : path.points) {
        const Eigen::SelfAdjointEigenSolver<Matrix> es(p.matrix.matrix());
        EXPECT_GE(es.eigenvalues().minCoeff(), lo);
        EXPECT_LE(es.eigenvalues().maxCoeff(), hi);
    }
}

TEST(SolveMaronna, SmallTDoesNotDriftToZero)
{
    // Nearly scale-invariant regime: every scheme must land on the same
    // finite solution rather than collapse towards M = 0.
    const Matrix raw = sample_gaussian(6, toeplitz_covariance(4, 0.5), 7);
    const Dataset d = normalize_dataset(raw);
    const auto f = make_student_t_family(4);
    const LimitPath path = limit_path(d, f, {0.01});
    for (Scheme scheme : {Scheme::newton, Scheme::anderson}) {
        SolverConfig cfg;
        cfg.scheme = scheme;
        cfg.max_iter = 100000;
        const Solution s = solve_maronna(d, f, 1e-3, cfg);
        ASSERT_TRUE(s.report.converged);
        EXPECT_NEAR(s.matrix.matrix().trace(), path.limit.matrix().trace(), 0.01);
    }
}

TEST(SolveMaronna, SolutionsSatisfyTraceIdentity)
{
    // tr(M^{-1} M) = m gives (1/N) sum_i v(t, q_i) = m at any solution
    const Dataset d = gaussian_dataset(5, 12, 8);
    for (const auto& f : {make_model_family(5), make_student_t_family(5)}) {
        for (double t : {1e-3, 0.3, 2.0}) {
            const Solution s = solve_maronna(d, f, t);
            const Matrix inv = s.matrix.matrix().inverse();
            double sum = 0.0;
            for (Eigen::Index i = 0; i < d.size(); ++i) {
                const Vector y = d.sample(i);
                const double q = y.dot(inv * y);
                sum += q * f.u(t, q);
            }
            EXPECT_NEAR(sum / 12.0, 5.0, 1e-8) << f.label() << " t=" << t;
        }
    }
}
