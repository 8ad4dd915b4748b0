#include "sparsecl/score_stats.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace sparsecl {

namespace {

// Pairwise score as a quadratic form: U = alpha (z_a^2 + z_b^2) + beta z_a z_b + gamma.
struct QuadraticScore {
    Index a, b;
    double alpha, beta, gamma;
};

QuadraticScore quadratic_score(double theta, Index a, Index b, double delta) {
    const double t = theta * delta;
    if (!(t > 0.0) || !std::isfinite(t))
        throw DomainError("population covariance undefined for pair (" + std::to_string(a) + "," +
                          std::to_string(b) + "): theta * delta <= 0");
    const double r = std::exp(-t);
    const double den = 1.0 - r * r;
    const double den2 = den * den;
    return {a, b, r * r * delta / den2, -r * delta * (1.0 + r * r) / den2, -r * r * delta / den};
}

}  // namespace

ScoreCovariance<double> empirical_score_covariance(const ScoreBatch& batch) {
    if (batch.n() < 1) throw ConfigError("empty score batch");
    const Matrix stacked = batch.stacked();
    if (!stacked.allFinite()) throw DomainError("score batch has non-finite entries");
    return score_covariance_from_stack(stacked, batch.n(), batch.theta);
}

ScoreCovariance<double> population_score_covariance(const ModelSpec& model, const Vector& theta) {
    if (!model.is_builtin())
        throw UnsupportedModelError("population score covariance is unavailable for user-defined models; "
                                    "use a Monte Carlo estimate instead");
    if (model.is_location()) {
        const Matrix sigma = model.location_covariance();
        const Vector inv = model.marginal_variances().cwiseInverse();
        Matrix j = inv.asDiagonal() * sigma * inv.asDiagonal();
        return {std::move(j), CovarianceSource::Population, 0, theta};
    }

    const double th = theta(0);
    const Matrix& delta = model.delta();
    const Matrix corr = exp_correlation(th, delta);
    const Index m = model.sublikelihood_count();
    std::vector<QuadraticScore> forms;
    forms.reserve(static_cast<std::size_t>(m));
    for (const auto& [a, b] : model.pairs()) forms.push_back(quadratic_score(th, a, b, delta(a, b)));

    // E[U_a U_b] = 2 tr(A_a R A_b R) + E[U_a] E[U_b] for zero-mean Gaussian z ~ N(0, R)
    Vector mean(m);
    std::vector<Eigen::Matrix2d> blocks(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) {
        const auto& f = forms[static_cast<std::size_t>(j)];
        mean(j) = 2.0 * f.alpha + f.beta * corr(f.a, f.b) + f.gamma;
        blocks[static_cast<std::size_t>(j)] << f.alpha, 0.5 * f.beta, 0.5 * f.beta, f.alpha;
    }
    Matrix j(m, m);
    for (Index u = 0; u < m; ++u) {
        const auto& fu = forms[static_cast<std::size_t>(u)];
        const Eigen::Matrix2d& au = blocks[static_cast<std::size_t>(u)];
        for (Index v = u; v < m; ++v) {
            const auto& fv = forms[static_cast<std::size_t>(v)];
            Eigen::Matrix2d c;
            c << corr(fu.a, fv.a), corr(fu.a, fv.b), corr(fu.b, fv.a), corr(fu.b, fv.b);
            const double tr = (au * c * blocks[static_cast<std::size_t>(v)] * c.transpose()).trace();
            j(u, v) = j(v, u) = 2.0 * tr + mean(u) * mean(v);
        }
    }
    return {std::move(j), CovarianceSource::Population, 0, theta};
}

ScoreCovariance<double> monte_carlo_score_covariance(const ModelSpec& model, const Vector& theta, Index n,
                                                     std::uint64_t seed) {
    if (n < 1) throw ConfigError("Monte Carlo covariance needs n >= 1");
    std::mt19937_64 rng(seed);
    const Index m = model.sublikelihood_count();
    const Index chunk = 20000;
    Matrix acc = Matrix::Zero(m, m);
    for (Index done = 0; done < n; done += chunk) {
        const Index rows = std::min(chunk, n - done);
        const Dataset data = simulate(model, theta, rows, rng);
        const Matrix stacked = evaluate_scores(model, theta, data).stacked();
        acc.selfadjointView<Eigen::Lower>().rankUpdate(stacked.transpose());
    }
    Matrix j = acc.selfadjointView<Eigen::Lower>();
    j /= static_cast<double>(n);
    return {std::move(j), CovarianceSource::Empirical, n, theta};
}

double fisher_information(const ModelSpec& model, const Vector& theta) {
    if (!model.is_builtin()) throw UnsupportedModelError("Fisher information needs a built-in Gaussian model");
    if (model.is_location()) {
        const Matrix sigma = model.location_covariance();
        const Vector ones = Vector::Ones(sigma.rows());
        return ones.dot(sigma.ldlt().solve(ones));
    }
    const double th = theta(0);
    const Matrix& delta = model.delta();
    const Matrix corr = exp_correlation(th, delta);
    Matrix dcorr = -delta.cwiseProduct(corr);
    dcorr.diagonal().setZero();
    const Matrix a = corr.ldlt().solve(dcorr);
    return 0.5 * (a * a).trace();
}

}  // namespace sparsecl
