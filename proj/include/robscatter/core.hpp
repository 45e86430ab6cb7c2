#pragma once

// Sample families, SPD matrices and the admissibility conditions on samples.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace robscatter {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller supplied invalid input (bad dimensions, zero vectors, bad flags...).
class InputError : public Error {
public:
    using Error::Error;
};

/// A matrix that was required to be positive definite is not.
class NotSpdError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// SpdMatrix
// ---------------------------------------------------------------------------

/// Symmetric positive-definite matrix with its Cholesky factor.
///
/// The input is symmetrized on construction (lower triangle is mirrored to the
/// upper one) and factorized immediately; a failed factorization throws
/// NotSpdError. Instances are immutable.
class SpdMatrix {
public:
    explicit SpdMatrix(Matrix entries) : entries_(std::move(entries))
    {
        if (entries_.rows() != entries_.cols() || entries_.rows() == 0) {
            throw InputError("SpdMatrix: expected a non-empty square matrix, got " +
                             std::to_string(entries_.rows()) + "x" + std::to_string(entries_.cols()));
        }
        if (!entries_.allFinite()) {
            throw NotSpdError("SpdMatrix: non-finite entries");
        }
        const Matrix mirrored = entries_.transpose();
        entries_.triangularView<Eigen::StrictlyUpper>() = mirrored;
        llt_.compute(entries_);
        if (llt_.info() != Eigen::Success || !(llt_.matrixLLT().diagonal().array() > 0.0).all()) {
            throw NotSpdError("SpdMatrix: Cholesky factorization failed (matrix is not positive definite)");
        }
    }

    static SpdMatrix identity(Eigen::Index m) { return SpdMatrix(Matrix::Identity(m, m)); }

    /// Returns the matrix if it is SPD, std::nullopt otherwise.
    static std::optional<SpdMatrix> try_make(Matrix entries)
    {
        try {
            return SpdMatrix(std::move(entries));
        } catch (const NotSpdError&) {
            return std::nullopt;
        }
    }

    const Matrix& matrix() const noexcept { return entries_; }
    Eigen::Index dim() const noexcept { return entries_.rows(); }
    const Eigen::LLT<Matrix>& cholesky() const noexcept { return llt_; }

    double log_det() const { return 2.0 * llt_.matrixLLT().diagonal().array().log().sum(); }

    Matrix inverse() const { return llt_.solve(Matrix::Identity(dim(), dim())); }

    SpdMatrix scaled(double c) const
    {
        if (!(c > 0.0)) {
            throw InputError("SpdMatrix::scaled: factor must be positive");
        }
        return SpdMatrix(c * entries_);
    }

private:
    Matrix entries_;
    Eigen::LLT<Matrix> llt_;
};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

enum class Admissibility { unchecked, verified, violated };

enum class AdmissibilityMode { exact, randomized };

/// Outcome of an admissibility check.
struct AdmissibilityVerdict {
    bool admissible = false;
    /// True when every size-m subset was examined.
    bool exhaustive = false;
    std::uint64_t subsets_checked = 0;
    /// Indices of one rank-deficient subset when !admissible.
    std::vector<std::size_t> witness;
};

/// N samples in R^m, stored one per row.
class Dataset {
public:
    Dataset() = default;

    /// Wraps raw samples. No normalization is applied here, see normalize_dataset.
    Dataset(Matrix samples, bool normalized)
        : samples_(std::move(samples)), normalized_(normalized)
    {
        if (samples_.rows() == 0 || samples_.cols() == 0) {
            throw InputError("Dataset: need at least one sample of positive dimension");
        }
        if (!samples_.allFinite()) {
            throw InputError("Dataset: samples contain non-finite values");
        }
    }

    Eigen::Index dim() const noexcept { return samples_.cols(); }
    Eigen::Index size() const noexcept { return samples_.rows(); }
    const Matrix& samples() const noexcept { return samples_; }
    auto sample(Eigen::Index i) const { return samples_.row(i).transpose(); }
    bool normalized() const noexcept { return normalized_; }
    double aspect_ratio() const noexcept { return double(dim()) / double(size()); }

    Admissibility admissibility() const noexcept { return status_; }
    const std::vector<std::size_t>& witness() const noexcept { return witness_; }

    Dataset with_verdict(const AdmissibilityVerdict& v) const
    {
        Dataset out = *this;
        out.status_ = v.admissible ? Admissibility::verified : Admissibility::violated;
        out.witness_ = v.witness;
        return out;
    }

private:
    Matrix samples_;
    bool normalized_ = false;
    Admissibility status_ = Admissibility::unchecked;
    std::vector<std::size_t> witness_;
};

/// Scales every row of `raw` to unit Euclidean norm.
inline Dataset normalize_dataset(const Matrix& raw)
{
    if (raw.rows() == 0 || raw.cols() == 0) {
        throw InputError("normalize_dataset: empty input");
    }
    Matrix out = raw;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double n = out.row(i).norm();
        if (!(n > 0.0) || !std::isfinite(n)) {
            throw InputError("normalize_dataset: sample " + std::to_string(i) + " has zero or non-finite norm");
        }
        out.row(i) /= n;
    }
    return Dataset(std::move(out), true);
}

inline Matrix rows_to_matrix(const std::vector<std::vector<double>>& rows)
{
    if (rows.empty()) {
        throw InputError("no samples given");
    }
    const std::size_t m = rows.front().size();
    if (m == 0) {
        throw InputError("sample 0 has dimension 0");
    }
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m) {
            throw InputError("sample " + std::to_string(i) + " has dimension " + std::to_string(rows[i].size()) +
                             ", expected " + std::to_string(m));
        }
        for (std::size_t j = 0; j < m; ++j) {
            out(Eigen::Index(i), Eigen::Index(j)) = rows[i][j];
        }
    }
    return out;
}

inline Dataset normalize_dataset(const std::vector<std::vector<double>>& raw)
{
    return normalize_dataset(rows_to_matrix(raw));
}

// ---------------------------------------------------------------------------
// Admissibility
// ---------------------------------------------------------------------------

struct AdmissibilityOptions {
    /// Largest binomial(N, m) accepted in exact mode.
    double exact_budget = 1e6;
    /// Number of random subsets examined in randomized mode.
    std::uint64_t random_subsets = 1000;
    std::uint64_t seed = 0x5eed;
    /// Pivot threshold relative to the largest pivot.
    double rank_tolerance = 1e-10;
};

namespace detail {

inline double binomial(std::int64_t n, std::int64_t k)
{
    if (k < 0 || k > n) {
        return 0.0;
    }
    k = std::min(k, n - k);
    double r = 1.0;
    for (std::int64_t i = 1; i <= k; ++i) {
        r = r * double(n - k + i) / double(i);
    }
    return std::round(r);
}

inline bool full_rank(const Matrix& samples, const std::vector<std::size_t>& idx, double tol)
{
    const auto m = samples.cols();
    Matrix sub(m, m);
    for (Eigen::Index r = 0; r < m; ++r) {
        sub.row(r) = samples.row(Eigen::Index(idx[std::size_t(r)]));
    }
    Eigen::FullPivLU<Matrix> lu(sub);
    lu.setThreshold(tol);
    return lu.rank() == m;
}

// Advances `idx` to the next size-k combination of {0..n-1} in lexicographic order.
inline bool next_combination(std::vector<std::size_t>& idx, std::size_t n)
{
    const std::size_t k = idx.size();
    for (std::size_t i = k; i-- > 0;) {
        if (idx[i] < n - k + i) {
            ++idx[i];
            for (std::size_t j = i + 1; j < k; ++j) {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    return false;
}

} // namespace detail

/// Checks that every size-m subset of the samples is linearly independent.
///
/// Exact mode enumerates all binomial(N, m) subsets and refuses to run when
/// that count exceeds the budget. Randomized mode samples subsets uniformly;
/// when the sample budget covers all subsets it falls back to enumeration and
/// the verdict is marked exhaustive.
inline AdmissibilityVerdict check_admissibility(const Dataset& d, AdmissibilityMode mode,
                                                const AdmissibilityOptions& opt = {})
{
    const auto n = std::size_t(d.size());
    const auto m = std::size_t(d.dim());
    AdmissibilityVerdict v;
    if (n < m) {
        // No subset of size m exists; the samples cannot span R^m.
        v.admissible = false;
        v.exhaustive = true;
        v.witness.resize(n);
        std::iota(v.witness.begin(), v.witness.end(), std::size_t{0});
        return v;
    }
    const double total = detail::binomial(std::int64_t(n), std::int64_t(m));

    const bool enumerate = mode == AdmissibilityMode::exact || total <= double(opt.random_subsets);
    if (mode == AdmissibilityMode::exact && total > opt.exact_budget) {
        throw InputError("check_admissibility: binomial(" + std::to_string(n) + ", " + std::to_string(m) +
                         ") exceeds the exact-mode budget; use randomized mode");
    }

    if (enumerate) {
        std::vector<std::size_t> idx(m);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        do {
            ++v.subsets_checked;
            if (!detail::full_rank(d.samples(), idx, opt.rank_tolerance)) {
                v.witness = idx;
                v.exhaustive = true;
                return v;
            }
        } while (detail::next_combination(idx, n));
        v.admissible = true;
        v.exhaustive = true;
        return v;
    }

    std::mt19937_64 rng(opt.seed);
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::uint64_t k = 0; k < opt.random_subsets; ++k) {
        // Partial Fisher-Yates to draw m distinct indices.
        for (std::size_t i = 0; i < m; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(pool[i], pool[pick(rng)]);
        }
        std::vector<std::size_t> idx(pool.begin(), pool.begin() + std::ptrdiff_t(m));
        std::sort(idx.begin(), idx.end());
        ++v.subsets_checked;
        if (!detail::full_rank(d.samples(), idx, opt.rank_tolerance)) {
            v.witness = std::move(idx);
            return v;
        }
    }
    v.admissible = true;
    return v;
}

// ---------------------------------------------------------------------------
// Quadratic forms and weighted scatter
// ---------------------------------------------------------------------------

/// q_i = y_i^T M^{-1} y_i for every sample, via triangular solves on the
/// Cholesky factor of M.
inline Vector quadratic_forms(const Dataset& d, const SpdMatrix& M)
{
    if (M.dim() != d.dim()) {
        throw InputError("quadratic_forms: matrix is " + std::to_string(M.dim()) + "x" + std::to_string(M.dim()) +
                         " but samples have dimension " + std::to_string(d.dim()));
    }
    Matrix z = d.samples().transpose();
    M.cholesky().matrixL().solveInPlace(z);
    return z.colwise().squaredNorm().transpose();
}

/// (1/N) sum_i w_i y_i y_i^T, exactly symmetric.
inline Matrix weighted_scatter(const Dataset& d, const Vector& weights)
{
    if (weights.size() != d.size()) {
        throw InputError("weighted_scatter: got " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(d.size()) + " samples");
    }
    const Matrix& y = d.samples();
    Matrix lower = (y.transpose() * weights.asDiagonal() * y) / double(d.size());
    Matrix out = lower.triangularView<Eigen::Lower>();
    out.triangularView<Eigen::StrictlyUpper>() = lower.transpose();
    return out;
}

/// The scatter C = (m/N) sum_i y_i y_i^T.
inline Matrix sample_scatter(const Dataset& d)
{
    return weighted_scatter(d, Vector::Constant(d.size(), double(d.dim())));
}

} // namespace robscatter
