#pragma once

// Monte-Carlo experiment: C(t) = E ||M(t) - M0||_F^2 for Gaussian samples with
// Toeplitz covariance rho^|i-j|.

#include "robscatter/core.hpp"
#include "robscatter/solver.hpp"
#include "robscatter/weights.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace robscatter {

/// Too many trials failed for the curve to be meaningful.
class ExperimentError : public Error {
public:
    using Error::Error;
};

inline SpdMatrix toeplitz_covariance(int m, double rho)
{
    if (m < 1) {
        throw InputError("toeplitz_covariance: m must be >= 1");
    }
    if (!(rho >= 0.0 && rho < 1.0)) {
        throw InputError("toeplitz_covariance: rho must lie in [0, 1) for rho^|i-j| to be positive definite");
    }
    Matrix s(m, m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            s(i, j) = std::pow(rho, std::abs(i - j));
        }
    }
    return SpdMatrix(std::move(s));
}

/// Generator for stream `stream` under `seed`. Streams are independent of the
/// order in which they are created.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream)
{
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(stream),
                      std::uint32_t(stream >> 32), 0x6d61726fu};
    return std::mt19937_64(seq);
}

/// n draws L z (one per row) with L the Cholesky factor of sigma and z i.i.d. N(0, 1).
inline Matrix sample_gaussian(Eigen::Index n, const SpdMatrix& sigma, std::uint64_t seed, std::uint64_t stream = 0)
{
    auto rng = stream_rng(seed, stream);
    std::normal_distribution<double> n01;
    const auto m = sigma.dim();
    Matrix z(m, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < m; ++i) {
            z(i, j) = n01(rng);
        }
    }
    const Matrix lower = sigma.cholesky().matrixL();
    return (lower * z).transpose();
}

struct ExperimentSpec {
    int m = 50;
    int N = 51;
    double rho = 0.1;
    std::string family = "student-t";
    std::vector<double> t_grid;
    int trials = 100;
    std::uint64_t seed = 7;
    bool normalize = true;

    void validate() const
    {
        if (m < 1 || N <= m) {
            throw InputError("ExperimentSpec: need N > m >= 1");
        }
        if (t_grid.empty()) {
            throw InputError("ExperimentSpec: empty t grid");
        }
        for (double t : t_grid) {
            if (!(t > 0.0)) {
                throw InputError("ExperimentSpec: t grid values must be positive");
            }
        }
        if (trials < 1) {
            throw InputError("ExperimentSpec: trials must be >= 1");
        }
        if (!(rho >= 0.0 && rho < 1.0)) {
            throw InputError("ExperimentSpec: rho must lie in [0, 1) for a valid Toeplitz covariance");
        }
    }
};

struct CurvePoint {
    double t = 0.0;
    double c_mean = 0.0;
    double c_stderr = 0.0;
    int trials_used = 0;
};

struct TrialResult {
    bool ok = false;
    std::string failure;
    /// ||M(t) - M0||_F^2 in the order of ExperimentSpec::t_grid.
    std::vector<double> sq_dev;
};

struct CurveResult {
    std::vector<CurvePoint> points;
    int failed_trials = 0;
    std::vector<std::string> failures;
    std::vector<TrialResult> trials;
};

struct RunOptions {
    unsigned threads = 1;
    SolverConfig solver{};
    /// Replaces the Gaussian draw of trial k (test hook).
    std::function<Matrix(int)> data_override;
};

/// One Monte-Carlo trial. Deterministic in (spec, trial).
inline TrialResult run_trial(const ExperimentSpec& spec, const WeightFamily& f, const SpdMatrix& sigma, int trial,
                             const RunOptions& opt)
{
    TrialResult out;
    try {
        const Matrix raw = opt.data_override ? opt.data_override(trial)
                                             : sample_gaussian(spec.N, sigma, spec.seed, std::uint64_t(trial));
        Dataset d = spec.normalize ? normalize_dataset(raw) : Dataset(raw, false);
        AdmissibilityOptions aopt;
        aopt.seed = spec.seed ^ (0x9e3779b97f4a7c15ull * std::uint64_t(trial + 1));
        const AdmissibilityVerdict adm = check_admissibility(d, AdmissibilityMode::randomized, aopt);
        if (!adm.admissible) {
            out.failure = "trial " + std::to_string(trial) + ": samples not admissible";
            return out;
        }
        d = d.with_verdict(adm);

        // Solve from the largest t downwards, warm starting each solve.
        std::vector<std::size_t> order(spec.t_grid.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return spec.t_grid[a] > spec.t_grid[b]; });
        std::vector<double> grid;
        for (auto k : order) {
            grid.push_back(spec.t_grid[k]);
        }
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

        const LimitPath path = limit_path(d, f, grid, opt.solver);
        out.sq_dev.assign(spec.t_grid.size(), 0.0);
        for (std::size_t k = 0; k < spec.t_grid.size(); ++k) {
            const auto it = std::find_if(path.points.begin(), path.points.end(),
                                         [&](const PathPoint& p) { return p.t == spec.t_grid[k]; });
            if (!it->report.converged) {
                out.failure = "trial " + std::to_string(trial) + ": no convergence at t=" + std::to_string(it->t) +
                              " (residual " + std::to_string(it->report.final_residual) + ")";
                return out;
            }
            out.sq_dev[k] = it->deviation * it->deviation;
        }
        out.ok = true;
    } catch (const Error& e) {
        out.failure = "trial " + std::to_string(trial) + ": " + e.what();
    }
    return out;
}

/// Runs all trials (in parallel when requested) and reduces them in trial
/// order, so the result does not depend on the number of threads.
inline CurveResult run_curve(const ExperimentSpec& spec, const RunOptions& opt = {})
{
    spec.validate();
    const WeightFamily f = make_family(spec.family, spec.m);
    const ConditionReport cond = validate_conditions(f);
    if (!cond.all_passed()) {
        throw InputError("run_curve: family '" + spec.family + "' fails the weight conditions");
    }
    const SpdMatrix sigma = toeplitz_covariance(spec.m, spec.rho);

    std::vector<TrialResult> results(std::size_t(spec.trials));
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int k = next++; k < spec.trials; k = next++) {
            results[std::size_t(k)] = run_trial(spec, f, sigma, k, opt);
        }
    };
    const unsigned nthreads = std::max(1u, std::min<unsigned>(opt.threads, unsigned(spec.trials)));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned i = 0; i < nthreads; ++i) {
            pool.emplace_back(worker);
        }
        for (auto& th : pool) {
            th.join();
        }
    }

    CurveResult out;
    for (const auto& r : results) {
        if (!r.ok) {
            ++out.failed_trials;
            out.failures.push_back(r.failure);
        }
    }
    if (double(out.failed_trials) > 0.1 * double(spec.trials)) {
        throw ExperimentError("run_curve: " + std::to_string(out.failed_trials) + " of " +
                              std::to_string(spec.trials) + " trials failed; first: " + out.failures.front());
    }
    for (std::size_t k = 0; k < spec.t_grid.size(); ++k) {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : results) {
            if (r.ok) {
                sum += r.sq_dev[k];
                ++n;
            }
        }
        CurvePoint p;
        p.t = spec.t_grid[k];
        p.trials_used = n;
        p.c_mean = n > 0 ? sum / n : 0.0;
        if (n > 1) {
            double ss = 0.0;
            for (const auto& r : results) {
                if (r.ok) {
                    ss += (r.sq_dev[k] - p.c_mean) * (r.sq_dev[k] - p.c_mean);
                }
            }
            p.c_stderr = std::sqrt(ss / double(n - 1) / double(n));
        }
        out.points.push_back(p);
    }
    out.trials = std::move(results);
    return out;
}

} // namespace robscatter
