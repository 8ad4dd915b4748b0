#include "sparsecl/estimator.hpp"

#include "sparsecl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace sparsecl {

namespace {

struct WeightedMoments {
    Vector mean;  // n^{-1} sum_i U_i
    Matrix h;     // -n^{-1} sum_i grad U_i
    Matrix k;     // n^{-1} sum_i U_i U_i'
};

WeightedMoments weighted_moments(const ModelSpec& model, const Dataset& data, const Vector& theta,
                                 const Vector& weights, bool with_gradient, bool with_variability) {
    const Index p = model.parameter_dimension();
    const Index m = model.sublikelihood_count();
    if (weights.size() != m) throw ConfigError("weight vector length differs from the number of sub-likelihoods");
    if (theta.size() != p) throw ConfigError("theta has the wrong dimension");
    if (!model.admissible(theta)) {
        std::ostringstream os;
        os << "theta = " << theta.transpose() << " is outside the admissible domain";
        throw DomainError(os.str());
    }
    WeightedMoments out{Vector::Zero(p), Matrix::Zero(p, p), Matrix::Zero(p, p)};
    std::vector<Index> active;
    for (Index j = 0; j < m; ++j)
        if (weights(j) != 0.0) active.push_back(j);
    for (Index i = 0; i < data.n(); ++i) {
        const Vector x = data.row(i).transpose();
        const Matrix scores = observation_scores(model, theta, x);
        Vector u = Vector::Zero(p);
        for (Index j : active) u += weights(j) * scores.col(j);
        if (!u.allFinite()) throw DomainError("non-finite weighted score at observation " + std::to_string(i));
        out.mean += u;
        if (with_variability) out.k.noalias() += u * u.transpose();
        if (with_gradient) {
            const Matrix grads = observation_score_gradients(model, theta, x);
            for (Index j : active) out.h -= weights(j) * grads.middleCols(j * p, p);
        }
    }
    const double n = static_cast<double>(data.n());
    out.mean /= n;
    out.h /= n;
    out.k /= n;
    return out;
}

std::string describe_trace(const RootTrace& trace) {
    std::ostringstream os;
    os << trace.method << " after " << trace.iterations << " iterations, residual " << trace.residual
       << ", iterates:";
    const std::size_t from = trace.history.size() > 8 ? trace.history.size() - 8 : 0;
    for (std::size_t i = from; i < trace.history.size(); ++i) os << " " << trace.history[i];
    return os.str();
}

Vector scalar_root(const ModelSpec& model, const Dataset& data, const Vector& weights, double start, RootTrace& trace,
                   const RootOptions& options) {
    auto theta_of = [](double t) { return Vector::Constant(1, t); };
    auto admissible = [&](double t) { return model.admissible(theta_of(t)); };
    auto value = [&](double t) { return weighted_moments(model, data, theta_of(t), weights, false, false).mean(0); };

    auto sign_change_at = [&](double at) {
        const double h = std::max(1e-8 * std::abs(at), 1e-12);
        if (!admissible(at - h) || !admissible(at + h)) return true;
        const double a = value(at - h), b = value(at + h);
        return (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0) || (a == 0.0 && b != 0.0);
    };

    double t = start;
    trace.method = "newton";
    trace.history.push_back(t);
    double f = value(t);
    for (int it = 0; it < options.max_iterations; ++it) {
        trace.iterations = it + 1;
        trace.residual = std::abs(f);
        if (f == 0.0) {
            if (sign_change_at(t)) return theta_of(t);
            break;
        }
        const auto mo = weighted_moments(model, data, theta_of(t), weights, true, false);
        const double slope = -mo.h(0, 0);
        if (!(std::isfinite(slope)) || slope == 0.0) break;
        const double step = -f / slope;
        double scale = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
            const double cand = t + scale * step;
            if (!admissible(cand)) continue;
            const double fc = value(cand);
            if (std::isfinite(fc) && std::abs(fc) < std::abs(f)) {
                t = cand;
                f = fc;
                accepted = true;
                break;
            }
        }
        trace.history.push_back(t);
        if (!accepted) break;
        trace.residual = std::abs(f);
        if (std::abs(scale * step) <= options.step_tolerance * (1.0 + std::abs(t))) {
            if (sign_change_at(t)) return theta_of(t);
            break;  // |f| can also shrink towards an asymptote without a root
        }
    }

    // bracket a sign change around the start and bisect
    trace.method = "bisection";
    const bool positive_domain = model.is_pairwise();
    const double base = admissible(start) ? start : t;
    const double f0 = value(base);
    double lo = base, hi = base, flo = f0, fhi = f0;
    bool found = false;
    double prev_up = base, fprev_up = f0, prev_dn = base, fprev_dn = f0;
    for (int k = 1; k <= 60 && !found; ++k) {
        const double factor = std::ldexp(1.0, k);
        const double up = positive_domain ? base * factor : base + 1e-3 * std::max(1.0, std::abs(base)) * factor;
        const double dn = positive_domain ? base / factor : base - 1e-3 * std::max(1.0, std::abs(base)) * factor;
        for (const auto& [cand, prev, fprev, is_up] :
             {std::tuple{up, prev_up, fprev_up, true}, std::tuple{dn, prev_dn, fprev_dn, false}}) {
            if (found || !admissible(cand)) continue;
            double fc;
            try {
                fc = value(cand);
            } catch (const DomainError&) {
                continue;
            }
            if (!std::isfinite(fc)) continue;
            if (fc == 0.0) {
                if (sign_change_at(cand)) return theta_of(cand);
                continue;  // underflow rather than a root
            }
            if ((fc > 0.0) != (fprev > 0.0)) {
                lo = std::min(prev, cand);
                hi = std::max(prev, cand);
                flo = lo == prev ? fprev : fc;
                fhi = hi == prev ? fprev : fc;
                found = true;
            }
            if (is_up) {
                prev_up = cand;
                fprev_up = fc;
            } else {
                prev_dn = cand;
                fprev_dn = fc;
            }
        }
    }
    if (!found) {
        trace.residual = std::abs(f);
        throw RootFindingError("estimating equation has no sign change near the start: " + describe_trace(trace));
    }
    for (int it = 0; it < 300; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = value(mid);
        trace.history.push_back(mid);
        trace.iterations++;
        trace.residual = std::abs(fm);
        if (fm == 0.0 || (hi - lo) <= options.step_tolerance * (1.0 + std::abs(mid))) return theta_of(mid);
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fhi = fm;
        }
    }
    (void)fhi;
    return theta_of(0.5 * (lo + hi));
}

Vector vector_root(const ModelSpec& model, const Dataset& data, const Vector& weights, Vector theta, RootTrace& trace,
                   const RootOptions& options) {
    trace.method = "damped-newton";
    auto mo = weighted_moments(model, data, theta, weights, true, false);
    for (int it = 0; it < options.max_iterations; ++it) {
        trace.iterations = it + 1;
        trace.residual = mo.mean.norm();
        trace.history.push_back(theta(0));
        if (trace.residual == 0.0) return theta;
        Eigen::FullPivLU<Matrix> lu(mo.h);
        if (!lu.isInvertible()) throw RootFindingError("singular Jacobian in damped Newton: " + describe_trace(trace));
        const Vector step = lu.solve(mo.mean);
        double scale = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
            const Vector cand = theta + scale * step;
            if (!model.admissible(cand)) continue;
            auto next = weighted_moments(model, data, cand, weights, true, false);
            if (next.mean.allFinite() && next.mean.norm() < trace.residual) {
                theta = cand;
                mo = std::move(next);
                accepted = true;
                break;
            }
        }
        if (!accepted) throw RootFindingError("damped Newton stalled: " + describe_trace(trace));
        if ((scale * step).norm() <= options.step_tolerance * (1.0 + theta.norm())) return theta;
    }
    throw RootFindingError("damped Newton did not converge: " + describe_trace(trace));
}

}  // namespace

Vector mean_weighted_score(const ModelSpec& model, const Dataset& data, const Vector& theta, const Vector& weights) {
    return weighted_moments(model, data, theta, weights, false, false).mean;
}

Matrix sensitivity_matrix(const ModelSpec& model, const Dataset& data, const Vector& theta, const Vector& weights) {
    return weighted_moments(model, data, theta, weights, true, false).h;
}

Matrix variability_matrix(const ModelSpec& model, const Dataset& data, const Vector& theta, const Vector& weights) {
    return weighted_moments(model, data, theta, weights, false, true).k;
}

Vector solve_estimating_equation(const ModelSpec& model, const Dataset& data, const Vector& weights, Vector start,
                                 RootTrace* trace, const RootOptions& options) {
    RootTrace local;
    RootTrace& tr = trace ? *trace : local;
    if (!model.admissible(start)) start = initial_guess(model, data);
    if (!model.admissible(start)) throw RootFindingError("no admissible starting value for the root search");
    if (model.parameter_dimension() == 1) return scalar_root(model, data, weights, start(0), tr, options);
    return vector_root(model, data, weights, std::move(start), tr, options);
}

Vector preliminary_weights(Index m, const PreliminaryOptions& options) {
    if (options.mode == PreliminaryMode::Uniform) return Vector::Ones(m);
    const Index size = options.subset_size > 0 ? options.subset_size : (m + 1) / 2;
    if (size > m) throw ConfigError("random subset larger than the number of sub-likelihoods");
    std::vector<Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 rng(options.seed);
    std::shuffle(order.begin(), order.end(), rng);
    Vector w = Vector::Zero(m);
    for (Index k = 0; k < size; ++k) w(order[static_cast<std::size_t>(k)]) = 1.0;
    return w;
}

Vector preliminary_estimate(const ModelSpec& model, const Dataset& data, const PreliminaryOptions& options,
                            RootTrace* trace) {
    const Vector w = preliminary_weights(model.sublikelihood_count(), options);
    return solve_estimating_equation(model, data, w, initial_guess(model, data), trace);
}

Vector one_step_update(const ModelSpec& model, const Dataset& data, const Vector& weights, const Vector& theta_prelim,
                       bool* damped) {
    if (damped) *damped = false;
    if ((weights.array() == 0.0).all()) return theta_prelim;
    const auto mo = weighted_moments(model, data, theta_prelim, weights, true, false);
    Eigen::FullPivLU<Matrix> lu(mo.h);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible())
        throw InferenceError("sensitivity matrix is singular at the preliminary estimate; "
                             "try a larger lambda or a different preliminary mode");
    const Vector step = lu.solve(mo.mean);
    double scale = 1.0;
    for (int halvings = 0; halvings < 60; ++halvings, scale *= 0.5) {
        const Vector theta = theta_prelim + scale * step;
        if (model.admissible(theta)) {
            if (damped) *damped = scale < 1.0;
            return theta;
        }
    }
    throw InferenceError("one-step update leaves the admissible domain for every step length");
}

Vector iterate_update(const ModelSpec& model, const Dataset& data, const Vector& weights, const Vector& theta_prelim,
                      double tolerance, int max_iterations, int* iterations) {
    Vector theta = theta_prelim;
    for (int it = 0; it < max_iterations; ++it) {
        if (iterations) *iterations = it + 1;
        theta = one_step_update(model, data, weights, theta);
        if (mean_weighted_score(model, data, theta, weights).norm() < tolerance) return theta;
    }
    throw RootFindingError("fully iterated Newton update did not reach the residual tolerance");
}

EstimateReport sandwich_inference(const ModelSpec& model, const Dataset& data, const Rule& rule, const Vector& theta_hat) {
    const auto mo = weighted_moments(model, data, theta_hat, rule.weights, true, true);
    const Index p = model.parameter_dimension();
    EstimateReport report;
    report.lambda = rule.lambda;
    report.theta_hat = theta_hat;
    report.rule = rule;
    report.n_active = rule.n_active();
    report.H_hat = mo.h;
    report.K_hat = (mo.k + mo.k.transpose()) / 2.0;
    report.diagnostics.residual_norm = mo.mean.norm();

    const double tr = report.K_hat.trace();
    if (!(tr > 0.0)) throw InferenceError("variability matrix is zero; the composite score vanishes identically");
    Matrix k = report.K_hat;
    Eigen::LDLT<Matrix> ldlt(k);
    auto usable = [&](const Eigen::LDLT<Matrix>& f) {
        return f.info() == Eigen::Success && f.isPositive() && f.vectorD().minCoeff() > 1e-14 * tr;
    };
    if (!usable(ldlt)) {
        k += Matrix::Identity(p, p) * (1e-12 * tr / static_cast<double>(p));
        ldlt.compute(k);
        report.diagnostics.jitter_applied = true;
        if (!usable(ldlt))
            throw InferenceError("variability matrix is singular; a larger lambda reduces the number of score terms");
    }
    report.G_hat = report.H_hat * ldlt.solve(report.H_hat);
    Eigen::FullPivLU<Matrix> glu(report.G_hat);
    glu.setThreshold(1e-14);
    if (!glu.isInvertible())
        throw InferenceError("Godambe information is singular; try a larger lambda or a different preliminary mode");
    const Matrix g_inv = glu.inverse();
    report.standard_errors = (g_inv.diagonal() / static_cast<double>(data.n())).cwiseMax(0.0).cwiseSqrt();
    return report;
}

EstimateReport estimate_with_rule(const ModelSpec& model, const Dataset& data, const Rule& rule,
                                  const Vector& theta_prelim, const EstimateOptions& options) {
    int iterations = 1;
    bool damped = false;
    const Vector theta_hat = options.full_iterate
                                 ? iterate_update(model, data, rule.weights, theta_prelim, 1e-10, 200, &iterations)
                                 : one_step_update(model, data, rule.weights, theta_prelim, &damped);
    EstimateReport report = sandwich_inference(model, data, rule, theta_hat);
    report.diagnostics.step_damped = damped;
    report.theta_prelim = theta_prelim;
    report.diagnostics.update_iterations = iterations;
    return report;
}

double godambe_information(const ScoreCovariance<double>& j, const Vector& weights) {
    const double quad = weights.dot(j.matrix() * weights);
    if (!(quad > 0.0)) return 0.0;
    const double lin = weights.dot(j.diagonal());
    return lin * lin / quad;
}

double asymptotic_relative_efficiency(const ScoreCovariance<double>& population_j, double fisher,
                                      const Vector& weights) {
    if (!(fisher > 0.0)) throw DegenerateError("Fisher information must be positive");
    return godambe_information(population_j, weights) / fisher;
}

double asymptotic_relative_efficiency(const ModelSpec& model, const Vector& theta, const Vector& weights) {
    if (!model.is_builtin() || model.parameter_dimension() != 1)
        throw UnsupportedModelError("asymptotic relative efficiency needs a built-in p = 1 model");
    return asymptotic_relative_efficiency(population_score_covariance(model, theta), fisher_information(model, theta),
                                          weights);
}

}  // namespace sparsecl
