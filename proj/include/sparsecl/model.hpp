#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace sparsecl {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ModelKind {
    LocationHeterogeneous,
    ExchangeableLocation,
    PairwiseExpCovariance,
    GravityField,
    UserDefined,
};

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

/// A spatial site of the gravity model. `population` is in millions.
struct Site {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
    double population = 1.0;
};

/// Extension point for models whose scores are supplied by the caller.
///
/// `scores(theta, x)` returns the p x m matrix whose column j is U_j(theta; x).
/// `score_gradients(theta, x)`, when set, returns a p x (m p) matrix whose j-th
/// p x p block is the Jacobian of U_j; otherwise central differences are used.
/// `log_density(theta, x, j)` is optional and only used by diagnostics.
struct UserModel {
    Index parameter_dimension = 1;
    Index sublikelihood_count = 1;
    Index variate_dimension = 1;
    std::function<Matrix(const Vector& theta, const Vector& x)> scores;
    std::function<Matrix(const Vector& theta, const Vector& x)> score_gradients;
    std::function<double(const Vector& theta, const Vector& x, Index j)> log_density;
};

struct LocationParameters {
    Matrix covariance;  // true covariance of X; sigma_j^2 is its diagonal
};

struct ExchangeableParameters {
    double rho = 0.0;
    Index m = 1;
};

struct PairwiseParameters {
    Matrix delta;
};

struct GravityParameters {
    std::vector<Site> sites;
    Vector sigmas;
    Matrix delta;  // t_jk / (m_j m_k)
};

using ModelParameters = std::variant<LocationParameters, ExchangeableParameters, PairwiseParameters,
                                     GravityParameters, UserModel>;

/// Sub-likelihood model: the parameter dimension p, the number m of
/// sub-likelihoods and whatever the kind needs to evaluate U_j.
///
/// Pairwise kinds index sub-likelihood j by the pair (a, b), a < b, in
/// lexicographic order.
class ModelSpec {
public:
    /// Marginal Gaussian scores (x_j - theta) / sigma_j^2 of X ~ N(theta 1, covariance).
    static ModelSpec location_heterogeneous(Matrix covariance);
    /// Independent components with standard deviations `sigmas`.
    static ModelSpec location_independent(const Vector& sigmas);
    /// Marginal scores x_j - theta of X ~ N(theta 1, (1 - rho) I + rho 11').
    static ModelSpec exchangeable_location(double rho, Index m);
    /// Pairwise bivariate-normal scores of X ~ N(0, Sigma(theta)) with
    /// Sigma_jk = exp(-theta delta_jk) off the diagonal and unit variances.
    static ModelSpec pairwise_exp_covariance(Matrix delta);
    /// Pairwise scores under cov(X_j, X_k) = s_j s_k exp(-theta t_jk / (m_j m_k)).
    static ModelSpec gravity_field(std::vector<Site> sites, Vector sigmas);
    static ModelSpec user_defined(UserModel model);

    ModelKind kind() const noexcept { return kind_; }
    Index parameter_dimension() const noexcept { return p_; }
    Index sublikelihood_count() const noexcept { return m_; }
    Index variate_dimension() const noexcept { return d_; }

    bool is_location() const noexcept {
        return kind_ == ModelKind::LocationHeterogeneous || kind_ == ModelKind::ExchangeableLocation;
    }
    bool is_pairwise() const noexcept {
        return kind_ == ModelKind::PairwiseExpCovariance || kind_ == ModelKind::GravityField;
    }
    bool is_builtin() const noexcept { return kind_ != ModelKind::UserDefined; }

    const ModelParameters& parameters() const noexcept { return params_; }

    /// Marginal variances sigma_j^2 used to scale location scores.
    const Vector& marginal_variances() const;
    /// True covariance of X for location kinds.
    Matrix location_covariance() const;
    /// delta_jk for pairwise kinds (gravity: t_jk / (m_j m_k)).
    const Matrix& delta() const;
    /// Per-variate scale used to standardise data before pairwise scoring.
    Vector variate_scales() const;
    const UserModel& user() const;

    std::pair<Index, Index> pair(Index j) const { return pairs_.at(static_cast<std::size_t>(j)); }
    Index pair_index(Index a, Index b) const;
    const std::vector<std::pair<Index, Index>>& pairs() const noexcept { return pairs_; }

    bool admissible(const Vector& theta) const;

private:
    ModelSpec(ModelKind kind, ModelParameters params, Index p, Index m, Index d);

    ModelKind kind_;
    ModelParameters params_;
    Index p_;
    Index m_;
    Index d_;
    Vector marginal_variances_;
    std::vector<std::pair<Index, Index>> pairs_;
};

/// n x d matrix of i.i.d. observations, one row per observation.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(Matrix observations);

    const Matrix& observations() const noexcept { return x_; }
    Index n() const noexcept { return x_.rows(); }
    Index d() const noexcept { return x_.cols(); }
    auto row(Index i) const { return x_.row(i); }

private:
    Matrix x_;
};

/// Scores M(theta; X_i) for every observation at a fixed theta.
struct ScoreBatch {
    Vector theta;
    std::vector<Matrix> scores;     // n entries, each p x m
    std::vector<Matrix> gradients;  // empty, or n entries of p x (m p)

    Index n() const noexcept { return static_cast<Index>(scores.size()); }
    Index p() const noexcept { return theta.size(); }
    Index m() const noexcept { return scores.empty() ? 0 : scores.front().cols(); }
    bool has_gradients() const noexcept { return !gradients.empty(); }

    /// p x p Jacobian of U_j at observation i.
    auto gradient(Index i, Index j) const {
        return gradients[static_cast<std::size_t>(i)].middleCols(j * p(), p());
    }

    /// (n p) x m matrix stacking all score matrices.
    Matrix stacked() const;
};

/// Score of the bivariate standard normal pair with correlation exp(-theta delta)
/// with respect to theta.
double pairwise_normal_score(double theta, double xj, double xk, double delta);
/// d/dtheta of pairwise_normal_score.
double pairwise_normal_score_derivative(double theta, double xj, double xk, double delta);
double pairwise_normal_log_density(double theta, double xj, double xk, double delta);

/// Euclidean lat/lon distances t_jk.
Matrix site_distances(std::span<const Site> sites);
/// delta_jk = t_jk / (m_j m_k).
Matrix gravity_delta(std::span<const Site> sites);
/// Entry (j, k) = sigma_j sigma_k exp(-theta t_jk / (m_j m_k)).
Matrix gravity_covariance(double theta, std::span<const Site> sites, const Vector& sigmas);

/// Sigma_jk = exp(-theta delta_jk), unit diagonal.
Matrix exp_correlation(double theta, const Matrix& delta);

/// Covariance of X under the model at theta (built-in kinds only).
Matrix model_covariance(const ModelSpec& model, const Vector& theta);

ScoreBatch evaluate_scores(const ModelSpec& model, const Vector& theta, const Dataset& data,
                           bool with_gradients = false);

/// p x m score matrix for a single observation.
Matrix observation_scores(const ModelSpec& model, const Vector& theta, const Vector& x);
/// p x (m p) stacked Jacobians for a single observation.
Matrix observation_score_gradients(const ModelSpec& model, const Vector& theta, const Vector& x);

/// log f_j(S_j; theta) for built-in kinds (or the user callback when provided).
double sub_log_density(const ModelSpec& model, const Vector& theta, const Vector& x, Index j);

/// Draws n observations from the full Gaussian model at theta.
Dataset simulate(const ModelSpec& model, const Vector& theta, Index n, std::mt19937_64& rng);

/// Cheap starting point for root finding.
Vector initial_guess(const ModelSpec& model, const Dataset& data);

}  // namespace sparsecl
