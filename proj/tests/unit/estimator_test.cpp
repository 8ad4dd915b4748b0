#include "helpers.hpp"

#include <doctest.h>
#include <sparsecl/errors.hpp>
#include <sparsecl/estimator.hpp>

using namespace sparsecl;

namespace {

Vector column_means(const Dataset& data) { return data.observations().colwise().mean().transpose(); }

Rule unit_rule(Index m) {
    Rule rule;
    rule.weights = Vector::Ones(m);
    for (Index k = 0; k < m; ++k) {
        rule.active_set.push_back(k);
        rule.signs.push_back(1);
    }
    return rule;
}

UserModel scalar_user(std::function<double(double, double)> score) {
    UserModel user;
    user.scores = [score](const Vector& theta, const Vector& x) { return Matrix::Constant(1, 1, score(theta(0), x(0))); };
    return user;
}

}  // namespace

TEST_SUITE("estimator") {

TEST_CASE("uniform preliminary estimate of the independent model is a precision-weighted mean") {
    const Vector sigmas = (Vector(4) << 0.5, 1.0, 2.0, 3.0).finished();
    const auto model = ModelSpec::location_independent(sigmas);
    std::mt19937_64 rng(1);
    const Dataset data = simulate(model, Vector::Constant(1, 0.8), 200, rng);
    const Vector xbar = column_means(data);
    const Vector prec = sigmas.array().square().inverse();
    const double expect = xbar.dot(prec) / prec.sum();
    CHECK(preliminary_estimate(model, data)(0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("uniform preliminary estimate of the exchangeable model is the grand mean") {
    const auto model = ModelSpec::exchangeable_location(0.4, 6);
    std::mt19937_64 rng(2);
    const Dataset data = simulate(model, Vector::Constant(1, -1.2), 150, rng);
    CHECK(preliminary_estimate(model, data)(0) == doctest::Approx(column_means(data).mean()).epsilon(1e-12));
}

TEST_CASE("pairwise preliminary estimate is near the truth") {
    const auto model = ModelSpec::pairwise_exp_covariance(unit::abs_difference_delta(5));
    std::mt19937_64 rng(3);
    const Dataset data = simulate(model, Vector::Constant(1, 0.6), 500, rng);
    RootTrace trace;
    const Vector theta = preliminary_estimate(model, data, {}, &trace);
    const auto report = sandwich_inference(model, data, unit_rule(model.sublikelihood_count()), theta);
    CHECK(std::abs(theta(0) - 0.6) <= 3.0 * report.standard_errors(0));
    CHECK(std::abs(mean_weighted_score(model, data, theta, Vector::Ones(model.sublikelihood_count()))(0)) <= 1e-8);
    CHECK(trace.iterations > 0);
}

TEST_CASE("random-subset preliminary weights") {
    const Vector w = preliminary_weights(10, {PreliminaryMode::RandomSubset, 4, 9});
    CHECK(w.sum() == 4.0);
    CHECK((w.array() * (1.0 - w.array())).abs().maxCoeff() == 0.0);
    CHECK(w == preliminary_weights(10, {PreliminaryMode::RandomSubset, 4, 9}));
    CHECK(preliminary_weights(3, {}) == Vector::Ones(3));
}

TEST_CASE("estimating equation without a root") {
    const auto model = ModelSpec::user_defined(scalar_user([](double t, double) { return std::exp(t); }));
    const Dataset data(Matrix::Ones(5, 1));
    CHECK_THROWS_AS(preliminary_estimate(model, data), RootFindingError);
}

TEST_CASE("zero weights leave the preliminary estimate unchanged") {
    const auto model = ModelSpec::exchangeable_location(0.3, 4);
    std::mt19937_64 rng(4);
    const Dataset data = simulate(model, Vector::Zero(1), 30, rng);
    const Vector start = Vector::Constant(1, 0.123);
    CHECK(one_step_update(model, data, Vector::Zero(4), start) == start);
}

TEST_CASE("one Newton step solves a linear estimating equation") {
    const Matrix sigma = (Matrix(3, 3) << 1.0, 0.2, 0.0, 0.2, 2.0, 0.5, 0.0, 0.5, 1.5).finished();
    const auto model = ModelSpec::location_heterogeneous(sigma);
    std::mt19937_64 rng(5);
    const Dataset data = simulate(model, Vector::Constant(1, 2.0), 80, rng);
    const Vector w = (Vector(3) << 0.7, 0.2, 1.1).finished();
    for (double start : {-5.0, 0.0, 2.0, 40.0}) {
        const Vector theta = one_step_update(model, data, w, Vector::Constant(1, start));
        CHECK(std::abs(mean_weighted_score(model, data, theta, w)(0)) <= 1e-12);
    }
}

TEST_CASE("one-step and iterated estimates coincide for the independent model") {
    const Vector sigmas = (Vector(5) << 1.0, 1.5, 2.0, 2.5, 3.0).finished();
    const auto model = ModelSpec::location_independent(sigmas);
    std::mt19937_64 rng(6);
    for (Index n : {100, 1000, 10000}) {
        const Dataset data = simulate(model, Vector::Constant(1, 0.3), n, rng);
        const Vector w = (Vector(5) << 1.0, 0.8, 0.5, 0.2, 0.0).finished();
        const Vector prelim = preliminary_estimate(model, data);
        const Vector one = one_step_update(model, data, w, prelim);
        const Vector iter = iterate_update(model, data, w, prelim);
        CHECK(std::abs(one(0) - iter(0)) * std::sqrt(static_cast<double>(n)) <= 1e-8);
        // the fixed point is a weighted average of the marginal sample means
        const Vector c = w.array() / sigmas.array().square();
        CHECK(iter(0) == doctest::Approx(column_means(data).dot(c) / c.sum()).epsilon(1e-12));
    }
}

TEST_CASE("sandwich for a single unit-variance score") {
    const auto model = ModelSpec::location_independent(Vector::Ones(1));
    std::mt19937_64 rng(7);
    const Dataset data = simulate(model, Vector::Constant(1, 1.0), 60, rng);
    const double mean = data.observations().mean();
    const auto report = sandwich_inference(model, data, unit_rule(1), Vector::Constant(1, mean));
    const double k = (data.observations().array() - mean).square().mean();
    CHECK(report.H_hat(0, 0) == doctest::Approx(1.0));
    CHECK(report.K_hat(0, 0) == doctest::Approx(k).epsilon(1e-12));
    CHECK(report.standard_errors(0) == doctest::Approx(std::sqrt(k / 60.0)).epsilon(1e-12));
}

TEST_CASE("exchangeable variance with unit weights") {
    const double rho = 0.5;
    const Index m = 5, n = 4000;
    const auto model = ModelSpec::exchangeable_location(rho, m);
    const double expect = (rho * (m - 1) + 1.0) / static_cast<double>(m * n);
    const auto j = population_score_covariance(model, Vector::Zero(1));
    CHECK(1.0 / (n * godambe_information(j, Vector::Ones(m))) == doctest::Approx(expect).epsilon(1e-12));
    std::mt19937_64 rng(8);
    const Dataset data = simulate(model, Vector::Zero(1), n, rng);
    const Vector theta = preliminary_estimate(model, data);
    const double se = sandwich_inference(model, data, unit_rule(m), theta).standard_errors(0);
    CHECK(se * se == doctest::Approx(expect).epsilon(0.1));
}

TEST_CASE("singular sensitivity is reported") {
    const auto model = ModelSpec::user_defined(scalar_user([](double, double x) { return x; }));
    const Dataset data((Matrix(3, 1) << 1.0, 2.0, 3.0).finished());
    CHECK_THROWS_AS(one_step_update(model, data, Vector::Ones(1), Vector::Zero(1)), InferenceError);
}

TEST_CASE("singular variability is reported") {
    const auto model = ModelSpec::location_independent(Vector::Ones(1));
    const Dataset data(Matrix::Constant(4, 1, 2.0));
    CHECK_THROWS_AS(sandwich_inference(model, data, unit_rule(1), Vector::Constant(1, 2.0)), InferenceError);
}

TEST_CASE("one-step update stays admissible") {
    const auto model = ModelSpec::pairwise_exp_covariance(unit::abs_difference_delta(4));
    std::mt19937_64 rng(9);
    const Dataset data = simulate(model, Vector::Constant(1, 0.05), 200, rng);
    const Vector w = Vector::Ones(model.sublikelihood_count());
    int damped_count = 0;
    for (double start : {0.05, 0.1, 0.3, 1.0}) {
        const Vector t0 = Vector::Constant(1, start);
        bool damped = false;
        const Vector theta = one_step_update(model, data, w, t0, &damped);
        CHECK(model.admissible(theta));
        // the full Newton step, assembled separately, leaves the domain exactly when the update was damped
        const Vector raw = t0 + sensitivity_matrix(model, data, t0, w).lu().solve(mean_weighted_score(model, data, t0, w));
        CHECK(damped == !model.admissible(raw));
        damped_count += damped ? 1 : 0;
    }
    CHECK(damped_count > 0);
}

TEST_CASE("efficiency relative to maximum likelihood") {
    SUBCASE("unpenalised weights of the independent model are efficient") {
        const auto model = ModelSpec::location_independent((Vector(3) << 1.0, 2.0, 3.0).finished());
        const auto j = population_score_covariance(model, Vector::Zero(1));
        const Vector w = j.matrix().ldlt().solve(j.diagonal());
        CHECK(asymptotic_relative_efficiency(model, Vector::Zero(1), w) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("exchangeable unit weights") {
        // the grand mean is the maximum likelihood estimate; finite m against m -> infinity is rho m / {rho (m - 1) + 1}
        for (Index m : {5, 9, 50}) {
            const auto model = ModelSpec::exchangeable_location(0.5, m);
            CHECK(asymptotic_relative_efficiency(model, Vector::Zero(1), Vector::Ones(m)) == doctest::Approx(1.0).epsilon(1e-12));
            const auto j = population_score_covariance(model, Vector::Zero(1));
            CHECK(0.5 * godambe_information(j, Vector::Ones(m)) == doctest::Approx(0.5 * m / (0.5 * (m - 1) + 1.0)).epsilon(1e-12));
        }
    }
}

TEST_CASE("second Bartlett identity for each pairwise score") {
    const auto model = ModelSpec::pairwise_exp_covariance(unit::abs_difference_delta(3));
    const Vector theta = Vector::Constant(1, 0.7);
    std::mt19937_64 rng(10);
    const Index n = 200000;
    const ScoreBatch batch = evaluate_scores(model, theta, simulate(model, theta, n, rng), true);
    for (Index j = 0; j < 3; ++j) {
        Eigen::ArrayXd diff(n);
        for (Index i = 0; i < n; ++i) {
            const double u = batch.scores[static_cast<std::size_t>(i)](0, j);
            diff(i) = batch.gradient(i, j)(0, 0) + u * u;
        }
        const double mean = diff.mean();
        const double sd = std::sqrt((diff - mean).square().sum() / static_cast<double>(n - 1) / static_cast<double>(n));
        CHECK(std::abs(mean) <= 3.0 * sd);
    }
}

}
