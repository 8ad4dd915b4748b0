#pragma once

#include "sparsecl/errors.hpp"
#include "sparsecl/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace sparsecl {

enum class CovarianceSource { Empirical, Population };

/// Relative eigenvalue threshold below which a score covariance is treated as singular.
inline constexpr double kRankTolerance = 1e-10;

/// m x m score covariance J(theta) or its empirical counterpart, with the
/// diagonal cached. The stored matrix is exactly symmetric.
template <typename Scalar>
class ScoreCovariance {
public:
    using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using VectorType = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    ScoreCovariance() = default;

    ScoreCovariance(MatrixType matrix, CovarianceSource source, Index sample_size = 0, Vector theta = {})
        : source_(source), sample_size_(sample_size), theta_(std::move(theta)) {
        if (matrix.rows() != matrix.cols()) throw ConfigError("score covariance must be square");
        if (!matrix.allFinite()) throw DomainError("score covariance has non-finite entries");
        matrix_ = (matrix + matrix.transpose()) / Scalar(2);
        if ((matrix_.diagonal().array() < Scalar(0)).any())
            throw DomainError("score covariance has a negative diagonal entry");
        diagonal_ = matrix_.diagonal();
    }

    const MatrixType& matrix() const noexcept { return matrix_; }
    const VectorType& diagonal() const noexcept { return diagonal_; }
    CovarianceSource source() const noexcept { return source_; }
    /// n for empirical covariances, 0 for population ones.
    Index sample_size() const noexcept { return sample_size_; }
    const Vector& theta() const noexcept { return theta_; }
    Index size() const noexcept { return matrix_.rows(); }
    Scalar trace() const { return diagonal_.sum(); }
    /// Upper bound on rank(J) known from construction; m when nothing is known.
    Index rank_bound() const noexcept { return rank_bound_ < 0 ? size() : std::min(rank_bound_, size()); }
    void set_rank_bound(Index r) noexcept { rank_bound_ = r; }

    template <typename Other>
    ScoreCovariance<Other> cast() const {
        ScoreCovariance<Other> out(matrix_.template cast<Other>(), source_, sample_size_, theta_);
        out.set_rank_bound(rank_bound_);
        return out;
    }

private:
    MatrixType matrix_;
    VectorType diagonal_;
    CovarianceSource source_ = CovarianceSource::Population;
    Index sample_size_ = 0;
    Vector theta_;
    Index rank_bound_ = -1;
};

/// n^{-1} S'S for the (n p) x m stack S of per-observation score matrices.
template <typename Derived>
ScoreCovariance<typename Derived::Scalar> score_covariance_from_stack(const Eigen::MatrixBase<Derived>& stacked,
                                                                      Index n, Vector theta = {}) {
    using Scalar = typename Derived::Scalar;
    using MatrixType = typename ScoreCovariance<Scalar>::MatrixType;
    if (n < 1) throw ConfigError("score covariance needs at least one observation");
    MatrixType j(stacked.cols(), stacked.cols());
    j.setZero();
    j.template selfadjointView<Eigen::Lower>().rankUpdate(stacked.transpose());
    j = j.template selfadjointView<Eigen::Lower>();
    j /= static_cast<Scalar>(n);
    ScoreCovariance<Scalar> out(std::move(j), CovarianceSource::Empirical, n, std::move(theta));
    out.set_rank_bound(stacked.rows());
    return out;
}

/// Eigen-decomposition with eigenvalues sorted in descending order.
template <typename Scalar>
struct SymmetricSpectrum {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> values;
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> vectors;

    Scalar zero_threshold() const {
        const Scalar top = values.size() ? std::max(values(0), Scalar(0)) : Scalar(0);
        return Scalar(kRankTolerance) * top;
    }
    Index rank() const {
        const Scalar tol = zero_threshold();
        Index r = 0;
        for (Index i = 0; i < values.size(); ++i)
            if (values(i) > tol) ++r;
        return r;
    }
    /// m x q orthonormal basis of the numerical null space.
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> null_space() const {
        const Index r = rank();
        return vectors.rightCols(values.size() - r);
    }
};

template <typename Derived>
SymmetricSpectrum<typename Derived::Scalar> symmetric_spectrum(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    using MatrixType = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    Eigen::SelfAdjointEigenSolver<MatrixType> solver(a.derived());
    if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigendecomposition failed");
    const Index m = a.rows();
    SymmetricSpectrum<Scalar> out;
    out.values = solver.eigenvalues().reverse();
    out.vectors = solver.eigenvectors().rowwise().reverse();
    // deterministic orientation: largest-magnitude entry of each vector positive
    for (Index c = 0; c < m; ++c) {
        Index at = 0;
        out.vectors.col(c).cwiseAbs().maxCoeff(&at);
        if (out.vectors(at, c) < Scalar(0)) out.vectors.col(c) *= Scalar(-1);
    }
    return out;
}

template <typename Scalar>
bool is_positive_definite(const ScoreCovariance<Scalar>& j) {
    return symmetric_spectrum(j.matrix()).rank() == j.size();
}

struct EtaOptions {
    int random_restarts = 50;
    int iterations = 150;
    std::uint64_t seed = 20240521;
};

/// eta = max over the null space of linear' V x / ||V x||_1, 0 when `j` is
/// positive definite. Exact for a one-dimensional null space; otherwise a lower
/// bound found by subgradient ascent from every +-basis direction plus random
/// restarts.
template <typename DerivedJ, typename DerivedL>
typename DerivedJ::Scalar eta_threshold(const Eigen::MatrixBase<DerivedJ>& j, const Eigen::MatrixBase<DerivedL>& linear,
                                        const EtaOptions& options = {}) {
    using Scalar = typename DerivedJ::Scalar;
    using VectorType = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const auto spectrum = symmetric_spectrum(j);
    const auto basis = spectrum.null_space();
    const Index q = basis.cols();
    if (q == 0) return Scalar(0);
    const VectorType projected = basis.transpose() * linear.derived();  // V' d

    auto ratio = [&](const VectorType& x) -> Scalar {
        const VectorType y = basis * x;
        const Scalar l1 = y.template lpNorm<1>();
        return l1 > Scalar(0) ? projected.dot(x) / l1 : Scalar(0);
    };
    if (q == 1) return std::abs(ratio(VectorType::Ones(1)));

    Scalar best = Scalar(0);
    auto ascend = [&](VectorType x) {
        x.normalize();
        Scalar value = ratio(x);
        best = std::max(best, value);
        for (int it = 0; it < options.iterations; ++it) {
            const VectorType y = basis * x;
            const Scalar l1 = y.template lpNorm<1>();
            if (!(l1 > Scalar(0))) return;
            const VectorType sgn = y.unaryExpr([](Scalar v) { return Scalar((v > 0) - (v < 0)); });
            VectorType grad = (projected * l1 - (projected.dot(x)) * (basis.transpose() * sgn)) / (l1 * l1);
            grad -= grad.dot(x) * x;  // tangent to the unit sphere
            const Scalar gnorm = grad.norm();
            if (!(gnorm > Scalar(1e-14))) return;
            const Scalar step = Scalar(0.5) / std::sqrt(Scalar(it + 1));
            x = (x + step * grad / gnorm).normalized();
            value = ratio(x);
            best = std::max(best, value);
        }
    };
    // keep the search near 1e9 flops for large null spaces
    const double per_start = static_cast<double>(options.iterations) * static_cast<double>(basis.rows()) * q;
    const auto budget = static_cast<long>(std::max(2.0, 1e9 / std::max(per_start, 1.0)));
    if (2 * q <= budget)
        for (Index c = 0; c < q; ++c) {
            VectorType e = VectorType::Zero(q);
            e(c) = Scalar(1);
            ascend(e);
            ascend(-e);
        }
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const long restarts = std::min<long>(options.random_restarts, budget);
    for (long r = 0; r < restarts; ++r) {
        VectorType x(q);
        for (Index c = 0; c < q; ++c) x(c) = Scalar(normal(rng));
        ascend(x);
    }
    return best;
}

template <typename Scalar>
Scalar eta_threshold(const ScoreCovariance<Scalar>& j, const EtaOptions& options = {}) {
    return eta_threshold(j.matrix(), j.diagonal(), options);
}

/// tr{J restricted to `active`} / tr{J}.
template <typename Scalar>
Scalar trace_ratio(const ScoreCovariance<Scalar>& j, std::span<const Index> active) {
    const Scalar total = j.trace();
    if (!(total > Scalar(0))) throw DegenerateError("score covariance has zero trace");
    Scalar part = 0;
    for (Index k : active) {
        if (k < 0 || k >= j.size()) throw ConfigError("active index out of range");
        part += j.diagonal()(k);
    }
    return std::min(part / total, Scalar(1));
}

/// Empirical covariance n^{-1} sum_i M_i' M_i of a score batch.
ScoreCovariance<double> empirical_score_covariance(const ScoreBatch& batch);

/// Exact J(theta) when the data are generated at theta. Location kinds use
/// Sigma_jk / (sigma_j^2 sigma_k^2); pairwise kinds use Gaussian fourth
/// moments (Isserlis) of the quadratic-form scores.
ScoreCovariance<double> population_score_covariance(const ModelSpec& model, const Vector& theta);

/// Seeded Monte Carlo estimate of J(theta) from n draws at theta.
ScoreCovariance<double> monte_carlo_score_covariance(const ModelSpec& model, const Vector& theta, Index n,
                                                     std::uint64_t seed);

/// Fisher information of the full Gaussian model (p = 1 built-in kinds).
double fisher_information(const ModelSpec& model, const Vector& theta);

}  // namespace sparsecl
