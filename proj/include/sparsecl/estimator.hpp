#pragma once

#include "sparsecl/model.hpp"
#include "sparsecl/score_stats.hpp"
#include "sparsecl/sparse_solver.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sparsecl {

using Rule = CompositionRule<double>;

enum class PreliminaryMode { Uniform, RandomSubset };

struct PreliminaryOptions {
    PreliminaryMode mode = PreliminaryMode::Uniform;
    Index subset_size = 0;  // RandomSubset only
    std::uint64_t seed = 0;
};

/// Iteration record of a root search, kept for diagnostics and error messages.
struct RootTrace {
    std::string method;
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> history;  // first coordinate of every iterate
};

struct RootOptions {
    int max_iterations = 100;
    double step_tolerance = 1e-12;
};

/// n^{-1} sum_i M(theta; X_i) w.
Vector mean_weighted_score(const ModelSpec& model, const Dataset& data, const Vector& theta, const Vector& weights);

/// H = -n^{-1} sum_i sum_j w_j grad U_j(theta; X_i).
Matrix sensitivity_matrix(const ModelSpec& model, const Dataset& data, const Vector& theta, const Vector& weights);

/// K = n^{-1} sum_i U_i U_i' with U_i = M(theta; X_i) w.
Matrix variability_matrix(const ModelSpec& model, const Dataset& data, const Vector& theta, const Vector& weights);

/// Root of sum_i M(theta; X_i) w = 0: safeguarded Newton with a bisection
/// fallback for p = 1, damped Newton otherwise.
Vector solve_estimating_equation(const ModelSpec& model, const Dataset& data, const Vector& weights, Vector start,
                                 RootTrace* trace = nullptr, const RootOptions& options = {});

/// Composite likelihood estimate with uniform (or random-subset) unit weights.
Vector preliminary_estimate(const ModelSpec& model, const Dataset& data, const PreliminaryOptions& options = {},
                            RootTrace* trace = nullptr);

/// Weights used by preliminary_estimate.
Vector preliminary_weights(Index m, const PreliminaryOptions& options);

/// theta + H(theta)^{-1} n^{-1} sum_i U(theta, w; X_i) with w frozen. The step
/// is halved until theta stays admissible; `damped` reports whether it was.
Vector one_step_update(const ModelSpec& model, const Dataset& data, const Vector& weights, const Vector& theta_prelim,
                       bool* damped = nullptr);

/// Repeats the Newton update with frozen weights until ||mean score|| < tol.
Vector iterate_update(const ModelSpec& model, const Dataset& data, const Vector& weights, const Vector& theta_prelim,
                      double tolerance = 1e-10, int max_iterations = 200, int* iterations = nullptr);

struct EstimateDiagnostics {
    int preliminary_iterations = 0;
    int update_iterations = 0;
    double residual_norm = 0.0;
    bool jitter_applied = false;
    bool selection_fallback = false;
    bool step_damped = false;
};

struct EstimateReport {
    std::string label = "sparse";  // "sparse" or "uniform"
    std::optional<double> lambda;
    Vector theta_hat;
    Vector theta_prelim;
    Rule rule;
    Matrix H_hat;
    Matrix K_hat;
    Matrix G_hat;
    Vector standard_errors;
    Index n_active = 0;
    EstimateDiagnostics diagnostics;
};

/// Sandwich H K^{-1} H at theta_hat with weights frozen at `rule`.
EstimateReport sandwich_inference(const ModelSpec& model, const Dataset& data, const Rule& rule, const Vector& theta_hat);

struct EstimateOptions {
    bool full_iterate = false;
};

/// One-step (or fully iterated) estimate from theta_prelim plus sandwich inference.
EstimateReport estimate_with_rule(const ModelSpec& model, const Dataset& data, const Rule& rule,
                                  const Vector& theta_prelim, const EstimateOptions& options = {});

/// (w' diag J)^2 / (w' J w) for a population J (p = 1).
double godambe_information(const ScoreCovariance<double>& j, const Vector& weights);

/// Godambe over Fisher information at theta (p = 1 built-in models).
double asymptotic_relative_efficiency(const ModelSpec& model, const Vector& theta, const Vector& weights);
double asymptotic_relative_efficiency(const ScoreCovariance<double>& population_j, double fisher, const Vector& weights);

}  // namespace sparsecl
