#include "sparsecl/model.hpp"

#include "sparsecl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace sparsecl {

namespace {

std::vector<std::pair<Index, Index>> lexicographic_pairs(Index d) {
    std::vector<std::pair<Index, Index>> out;
    out.reserve(static_cast<std::size_t>(d * (d - 1) / 2));
    for (Index a = 0; a < d; ++a)
        for (Index b = a + 1; b < d; ++b) out.emplace_back(a, b);
    return out;
}

void require_symmetric(const Matrix& a, const char* what) {
    if (a.rows() != a.cols()) throw ConfigError(std::string(what) + " must be square");
    if (!a.allFinite()) throw ConfigError(std::string(what) + " has non-finite entries");
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw ConfigError(std::string(what) + " must be symmetric");
}

std::string pair_label(Index a, Index b) {
    std::ostringstream os;
    os << "(" << a << "," << b << ")";
    return os.str();
}

// Lower-triangular factor L with L L' = sigma; falls back to the symmetric
// square root for semi-definite matrices.
Matrix covariance_factor(const Matrix& sigma) {
    Eigen::LLT<Matrix> llt(sigma);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < -1e-10 * es.eigenvalues().cwiseAbs().maxCoeff())
        throw DomainError("covariance matrix is not positive semi-definite");
    const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

std::string_view to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::LocationHeterogeneous: return "location-heterogeneous";
    case ModelKind::ExchangeableLocation: return "exchangeable-location";
    case ModelKind::PairwiseExpCovariance: return "pairwise-exp-covariance";
    case ModelKind::GravityField: return "gravity-field";
    case ModelKind::UserDefined: return "user-defined";
    }
    return "unknown";
}

ModelKind model_kind_from_string(std::string_view name) {
    for (auto kind : {ModelKind::LocationHeterogeneous, ModelKind::ExchangeableLocation,
                      ModelKind::PairwiseExpCovariance, ModelKind::GravityField, ModelKind::UserDefined})
        if (to_string(kind) == name) return kind;
    throw ConfigError("unknown model kind '" + std::string(name) + "'");
}

ModelSpec::ModelSpec(ModelKind kind, ModelParameters params, Index p, Index m, Index d)
    : kind_(kind), params_(std::move(params)), p_(p), m_(m), d_(d) {
    if (p_ < 1 || m_ < 1) throw ConfigError("model needs p >= 1 and m >= 1");
    if (is_pairwise()) pairs_ = lexicographic_pairs(d_);
}

ModelSpec ModelSpec::location_heterogeneous(Matrix covariance) {
    require_symmetric(covariance, "location covariance");
    if (covariance.rows() < 1) throw ConfigError("location covariance is empty");
    if ((covariance.diagonal().array() <= 0.0).any()) throw ConfigError("sigma_j must be positive");
    const Index d = covariance.rows();
    Vector variances = covariance.diagonal();
    ModelSpec spec(ModelKind::LocationHeterogeneous, LocationParameters{std::move(covariance)}, 1, d, d);
    spec.marginal_variances_ = std::move(variances);
    return spec;
}

ModelSpec ModelSpec::location_independent(const Vector& sigmas) {
    if (sigmas.size() < 1 || !sigmas.allFinite() || (sigmas.array() <= 0.0).any())
        throw ConfigError("sigma_j must be positive and finite");
    return location_heterogeneous(sigmas.array().square().matrix().asDiagonal());
}

ModelSpec ModelSpec::exchangeable_location(double rho, Index m) {
    if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("exchangeable model needs 0 < rho < 1");
    if (m < 1) throw ConfigError("exchangeable model needs m >= 1");
    ModelSpec spec(ModelKind::ExchangeableLocation, ExchangeableParameters{rho, m}, 1, m, m);
    spec.marginal_variances_ = Vector::Ones(m);
    return spec;
}

ModelSpec ModelSpec::pairwise_exp_covariance(Matrix delta) {
    require_symmetric(delta, "delta");
    const Index d = delta.rows();
    if (d < 2) throw ConfigError("pairwise model needs at least two variates");
    if ((delta.array() < 0.0).any()) throw ConfigError("delta_jk must be non-negative");
    return ModelSpec(ModelKind::PairwiseExpCovariance, PairwiseParameters{std::move(delta)}, 1, d * (d - 1) / 2, d);
}

ModelSpec ModelSpec::gravity_field(std::vector<Site> sites, Vector sigmas) {
    const auto d = static_cast<Index>(sites.size());
    if (d < 2) throw ConfigError("gravity model needs at least two sites");
    if (sigmas.size() != d) throw ConfigError("gravity model: one sigma per site required");
    if (!sigmas.allFinite() || (sigmas.array() <= 0.0).any()) throw ConfigError("sigma_j must be positive");
    for (const auto& s : sites)
        if (!(s.population > 0.0) || !std::isfinite(s.lat) || !std::isfinite(s.lon))
            throw ConfigError("site '" + s.id + "' needs finite coordinates and a positive population");
    Matrix delta = gravity_delta(sites);
    return ModelSpec(ModelKind::GravityField, GravityParameters{std::move(sites), std::move(sigmas), std::move(delta)},
                     1, d * (d - 1) / 2, d);
}

ModelSpec ModelSpec::user_defined(UserModel model) {
    if (!model.scores) throw ConfigError("user-defined model needs a score callback");
    const Index p = model.parameter_dimension, m = model.sublikelihood_count, d = model.variate_dimension;
    if (d < 1) throw ConfigError("user-defined model needs d >= 1");
    return ModelSpec(ModelKind::UserDefined, std::move(model), p, m, d);
}

const Vector& ModelSpec::marginal_variances() const {
    if (!is_location()) throw UnsupportedModelError("marginal variances are defined for location models only");
    return marginal_variances_;
}

Matrix ModelSpec::location_covariance() const {
    if (const auto* loc = std::get_if<LocationParameters>(&params_)) return loc->covariance;
    if (const auto* ex = std::get_if<ExchangeableParameters>(&params_)) {
        Matrix sigma = Matrix::Constant(ex->m, ex->m, ex->rho);
        sigma.diagonal().setOnes();
        return sigma;
    }
    throw UnsupportedModelError("location covariance requested from a non-location model");
}

const Matrix& ModelSpec::delta() const {
    if (const auto* pw = std::get_if<PairwiseParameters>(&params_)) return pw->delta;
    if (const auto* gr = std::get_if<GravityParameters>(&params_)) return gr->delta;
    throw UnsupportedModelError("delta requested from a non-pairwise model");
}

Vector ModelSpec::variate_scales() const {
    if (const auto* gr = std::get_if<GravityParameters>(&params_)) return gr->sigmas;
    return Vector::Ones(d_);
}

const UserModel& ModelSpec::user() const {
    if (const auto* u = std::get_if<UserModel>(&params_)) return *u;
    throw UnsupportedModelError("not a user-defined model");
}

Index ModelSpec::pair_index(Index a, Index b) const {
    if (!is_pairwise()) throw UnsupportedModelError("pair index on a non-pairwise model");
    if (a > b) std::swap(a, b);
    if (a < 0 || b >= d_ || a == b) throw ConfigError("invalid pair " + pair_label(a, b));
    return a * d_ - a * (a + 1) / 2 + (b - a - 1);
}

bool ModelSpec::admissible(const Vector& theta) const {
    if (theta.size() != p_ || !theta.allFinite()) return false;
    if (is_pairwise()) return theta(0) > 0.0;
    return true;
}

Dataset::Dataset(Matrix observations) : x_(std::move(observations)) {
    if (x_.rows() < 1 || x_.cols() < 1) throw ConfigError("dataset needs at least one observation and one variate");
    if (!x_.allFinite()) throw ConfigError("dataset contains non-finite entries");
}

Matrix ScoreBatch::stacked() const {
    const Index pp = p(), mm = m();
    Matrix out(n() * pp, mm);
    for (Index i = 0; i < n(); ++i) out.middleRows(i * pp, pp) = scores[static_cast<std::size_t>(i)];
    return out;
}

double pairwise_normal_score(double theta, double xj, double xk, double delta) {
    const double t = theta * delta;
    if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("pairwise score needs theta * delta > 0");
    const double r = std::exp(-t);
    const double den = 1.0 - r * r;
    const double s = xj * xj + xk * xk;
    const double p = xj * xk;
    return (r * (s - 2.0 * p * r) / (den * den)) * r * delta - ((r + p) / den) * r * delta;
}

double pairwise_normal_score_derivative(double theta, double xj, double xk, double delta) {
    const double t = theta * delta;
    if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("pairwise score needs theta * delta > 0");
    const double r = std::exp(-t);
    const double den = 1.0 - r * r;
    const double s = xj * xj + xk * xk;
    const double p = xj * xk;
    // U = delta h(r), h = r^2 (s - 2 p r) / den^2 - (r^2 + p r) / den, dr/dtheta = -delta r
    const double d2 = den * den;
    const double d3 = d2 * den;
    const double t1 = (2.0 * r * s - 6.0 * p * r * r) / d2 + (r * r * s - 2.0 * p * r * r * r) * 4.0 * r / d3;
    const double t2 = (2.0 * r + p) / den + (r * r + p * r) * 2.0 * r / d2;
    return -delta * delta * r * (t1 - t2);
}

double pairwise_normal_log_density(double theta, double xj, double xk, double delta) {
    const double t = theta * delta;
    if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("pairwise density needs theta * delta > 0");
    const double r = std::exp(-t);
    const double den = 1.0 - r * r;
    return -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(den) -
           (xj * xj + xk * xk - 2.0 * r * xj * xk) / (2.0 * den);
}

Matrix site_distances(std::span<const Site> sites) {
    const auto d = static_cast<Index>(sites.size());
    Matrix t = Matrix::Zero(d, d);
    for (Index j = 0; j < d; ++j)
        for (Index k = j + 1; k < d; ++k) {
            const auto& a = sites[static_cast<std::size_t>(j)];
            const auto& b = sites[static_cast<std::size_t>(k)];
            t(j, k) = t(k, j) = std::hypot(a.lat - b.lat, a.lon - b.lon);
        }
    return t;
}

Matrix gravity_delta(std::span<const Site> sites) {
    Matrix t = site_distances(sites);
    for (Index j = 0; j < t.rows(); ++j)
        for (Index k = 0; k < t.cols(); ++k)
            t(j, k) /= sites[static_cast<std::size_t>(j)].population * sites[static_cast<std::size_t>(k)].population;
    return t;
}

Matrix gravity_covariance(double theta, std::span<const Site> sites, const Vector& sigmas) {
    if (sigmas.size() != static_cast<Index>(sites.size())) throw ConfigError("one sigma per site required");
    if ((sigmas.array() <= 0.0).any()) throw ConfigError("sigma_j must be positive");
    for (const auto& s : sites)
        if (!(s.population > 0.0)) throw ConfigError("site populations must be positive");
    const Matrix delta = gravity_delta(sites);
    Matrix out = (-theta * delta.array()).exp().matrix();
    return sigmas.asDiagonal() * out * sigmas.asDiagonal();
}

Matrix exp_correlation(double theta, const Matrix& delta) {
    Matrix out = (-theta * delta.array()).exp().matrix();
    out.diagonal().setOnes();
    return out;
}

Matrix model_covariance(const ModelSpec& model, const Vector& theta) {
    switch (model.kind()) {
    case ModelKind::LocationHeterogeneous:
    case ModelKind::ExchangeableLocation: return model.location_covariance();
    case ModelKind::PairwiseExpCovariance: return exp_correlation(theta(0), model.delta());
    case ModelKind::GravityField: {
        const Vector s = model.variate_scales();
        return s.asDiagonal() * exp_correlation(theta(0), model.delta()) * s.asDiagonal();
    }
    case ModelKind::UserDefined: break;
    }
    throw UnsupportedModelError("model covariance is not available for user-defined models");
}

Matrix observation_scores(const ModelSpec& model, const Vector& theta, const Vector& x) {
    const Index m = model.sublikelihood_count();
    if (x.size() != model.variate_dimension())
        throw ConfigError("observation has " + std::to_string(x.size()) + " variates, model expects " +
                          std::to_string(model.variate_dimension()));
    if (model.is_location()) {
        const Vector& var = model.marginal_variances();
        return ((x.array() - theta(0)) / var.array()).matrix().transpose();
    }
    if (model.is_pairwise()) {
        const Matrix& delta = model.delta();
        const Vector z = x.cwiseQuotient(model.variate_scales());
        Matrix out(1, m);
        for (Index j = 0; j < m; ++j) {
            const auto [a, b] = model.pair(j);
            const double dl = delta(a, b);
            if (!(theta(0) * dl > 0.0))
                throw DomainError("pairwise score undefined for pair " + pair_label(a, b) +
                                  ": correlation magnitude reaches 1 (theta * delta <= 0)");
            out(0, j) = pairwise_normal_score(theta(0), z(a), z(b), dl);
        }
        return out;
    }
    Matrix out = model.user().scores(theta, x);
    if (out.rows() != model.parameter_dimension() || out.cols() != m)
        throw ConfigError("user score callback returned a matrix of the wrong shape");
    return out;
}

Matrix observation_score_gradients(const ModelSpec& model, const Vector& theta, const Vector& x) {
    const Index m = model.sublikelihood_count();
    const Index p = model.parameter_dimension();
    if (model.is_location()) return (-model.marginal_variances().cwiseInverse()).transpose();
    if (model.is_pairwise()) {
        const Matrix& delta = model.delta();
        const Vector z = x.cwiseQuotient(model.variate_scales());
        Matrix out(1, m);
        for (Index j = 0; j < m; ++j) {
            const auto [a, b] = model.pair(j);
            out(0, j) = pairwise_normal_score_derivative(theta(0), z(a), z(b), delta(a, b));
        }
        return out;
    }
    const UserModel& user = model.user();
    if (user.score_gradients) {
        Matrix out = user.score_gradients(theta, x);
        if (out.rows() != p || out.cols() != m * p)
            throw ConfigError("user gradient callback returned a matrix of the wrong shape");
        return out;
    }
    // central differences, step max(1e-6, 1e-8 |theta_r|)
    Matrix out(p, m * p);
    for (Index r = 0; r < p; ++r) {
        const double h = std::max(1e-6, 1e-8 * std::abs(theta(r)));
        Vector up = theta, down = theta;
        up(r) += h;
        down(r) -= h;
        const Matrix diff = (user.scores(up, x) - user.scores(down, x)) / (2.0 * h);
        for (Index j = 0; j < m; ++j) out.col(j * p + r) = diff.col(j);
    }
    return out;
}

ScoreBatch evaluate_scores(const ModelSpec& model, const Vector& theta, const Dataset& data, bool with_gradients) {
    if (theta.size() != model.parameter_dimension())
        throw ConfigError("theta has dimension " + std::to_string(theta.size()) + ", model expects " +
                          std::to_string(model.parameter_dimension()));
    if (!theta.allFinite()) throw DomainError("theta is not finite");
    ScoreBatch batch;
    batch.theta = theta;
    batch.scores.reserve(static_cast<std::size_t>(data.n()));
    if (with_gradients) batch.gradients.reserve(static_cast<std::size_t>(data.n()));
    for (Index i = 0; i < data.n(); ++i) {
        const Vector x = data.row(i).transpose();
        Matrix s = observation_scores(model, theta, x);
        if (!s.allFinite()) {
            for (Index j = 0; j < s.cols(); ++j)
                if (!s.col(j).allFinite()) {
                    if (model.is_pairwise()) {
                        const auto [a, b] = model.pair(j);
                        throw DomainError("non-finite score for pair " + pair_label(a, b) + " at observation " +
                                          std::to_string(i));
                    }
                    throw DomainError("non-finite score for sub-likelihood " + std::to_string(j) +
                                      " at observation " + std::to_string(i));
                }
        }
        batch.scores.push_back(std::move(s));
        if (with_gradients) {
            Matrix g = observation_score_gradients(model, theta, x);
            if (!g.allFinite()) throw DomainError("non-finite score gradient at observation " + std::to_string(i));
            batch.gradients.push_back(std::move(g));
        }
    }
    return batch;
}

double sub_log_density(const ModelSpec& model, const Vector& theta, const Vector& x, Index j) {
    constexpr double log_2pi = 1.8378770664093454836;
    if (model.is_location()) {
        const double var = model.marginal_variances()(j);
        const double r = x(j) - theta(0);
        return -0.5 * (log_2pi + std::log(var)) - r * r / (2.0 * var);
    }
    if (model.is_pairwise()) {
        const auto [a, b] = model.pair(j);
        const Vector s = model.variate_scales();
        // the Jacobian of standardisation does not depend on theta
        return pairwise_normal_log_density(theta(0), x(a) / s(a), x(b) / s(b), model.delta()(a, b)) -
               std::log(s(a) * s(b));
    }
    const UserModel& user = model.user();
    if (!user.log_density) throw UnsupportedModelError("user-defined model has no log-density callback");
    return user.log_density(theta, x, j);
}

Dataset simulate(const ModelSpec& model, const Vector& theta, Index n, std::mt19937_64& rng) {
    if (n < 1) throw ConfigError("simulate needs n >= 1");
    const Matrix sigma = model_covariance(model, theta);
    const Matrix factor = covariance_factor(sigma);
    const Index d = sigma.rows();
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix z(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < d; ++k) z(i, k) = normal(rng);
    Matrix x = z * factor.transpose();
    if (model.is_location()) x.array() += theta(0);
    return Dataset(std::move(x));
}

Vector initial_guess(const ModelSpec& model, const Dataset& data) {
    const Index p = model.parameter_dimension();
    if (model.is_location()) {
        const Vector inv = model.marginal_variances().cwiseInverse();
        const Vector means = data.observations().colwise().mean().transpose();
        return Vector::Constant(1, means.dot(inv) / inv.sum());
    }
    if (model.is_pairwise()) {
        const Matrix& delta = model.delta();
        const Vector s = model.variate_scales();
        const Matrix z = data.observations() * s.cwiseInverse().asDiagonal();
        const Matrix moments = (z.transpose() * z) / static_cast<double>(data.n());
        std::vector<double> candidates;
        for (const auto& [a, b] : model.pairs()) {
            const double r = moments(a, b) / std::sqrt(moments(a, a) * moments(b, b));
            if (delta(a, b) > 0.0 && r > 0.02 && r < 0.98) candidates.push_back(-std::log(r) / delta(a, b));
        }
        if (candidates.empty()) {
            const double mean_delta = delta.sum() / static_cast<double>(delta.rows() * (delta.rows() - 1));
            return Vector::Constant(1, mean_delta > 0.0 ? 1.0 / mean_delta : 1.0);
        }
        auto mid = candidates.begin() + static_cast<std::ptrdiff_t>(candidates.size() / 2);
        std::nth_element(candidates.begin(), mid, candidates.end());
        return Vector::Constant(1, *mid);
    }
    return Vector::Zero(p);
}

}  // namespace sparsecl
