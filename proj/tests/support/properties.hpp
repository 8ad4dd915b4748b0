#pragma once

// Generators, independent oracles and property checks shared by the unit
// tests and the acceptance runner.

#include "sparsecl/estimator.hpp"
#include "sparsecl/lambda_select.hpp"
#include "sparsecl/model.hpp"
#include "sparsecl/score_stats.hpp"
#include "sparsecl/sparse_solver.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace sparsecl::testing {

struct CheckResult {
    bool pass = true;
    std::string detail;

    static CheckResult ok(std::string detail = {}) { return {true, std::move(detail)}; }
    static CheckResult fail(std::string detail) { return {false, std::move(detail)}; }
};

/// Formats like printf into a std::string.
std::string strf(const char* fmt, ...);

// ---- generators ----

struct ScoreInstance {
    ScoreCovariance<double> j;
    Index n = 0;
    Index p = 1;
};

/// J = n^{-1} sum_i M_i' M_i with Gaussian p x m score matrices whose columns
/// carry random scales; rank at most min(n p, m).
ScoreInstance random_score_instance(std::mt19937_64& rng, Index m, Index n, Index p = 1);

/// lambda drawn uniformly in [eta + lo (max diag - eta), eta + hi (max diag - eta)].
double random_lambda(std::mt19937_64& rng, const ScoreCovariance<double>& j, double lo = 0.05, double hi = 0.95);

/// One admissible model of every built-in kind with small dimensions.
struct ModelCase {
    std::string name;
    ModelSpec model;
    Vector theta;
};
std::vector<ModelCase> builtin_model_cases(std::mt19937_64& rng);

// ---- independent oracles ----

/// Exhaustive search over sign patterns with its own extended-precision
/// solves; returns the KKT point of lowest objective.
struct OracleSolution {
    Vector weights;
    double objective = 0.0;
    int kkt_points = 0;
};
OracleSolution enumeration_oracle(const Matrix& j, double lambda);

/// w_E = (J_E)^{-1} (diag J_E - lambda sign w_E) recomputed from scratch.
Vector closed_form_weights(const Matrix& j, const Vector& w, double lambda);

/// Central difference of f at x with step h.
double central_difference(const std::function<double(double)>& f, double x, double h);

// ---- criterion-level checks ----

CheckResult check_oracle_equivalence(std::uint64_t seed, int instances = 200);
CheckResult check_active_set_closed_form(std::uint64_t seed, int instances = 200, int data_instances = 100);
CheckResult check_diagonal_closed_form(Index m = 20);
CheckResult check_exchangeable_weights();
CheckResult check_msd_bound(Index m = 200, int grid = 30);
CheckResult check_weight_consistency(std::uint64_t seed, int replicates = 50);
CheckResult check_sandwich_coverage(std::uint64_t seed, int replicates = 1000, Index m = 10, Index n = 500);
CheckResult check_figure_structure(bool include_large = true);
CheckResult check_gravity_round_trip(std::uint64_t seed);

// ---- invariants (each takes a global seed) ----

struct Invariant {
    std::string module;
    std::string name;
    std::function<CheckResult(std::uint64_t)> check;
};

CheckResult inv_score_is_log_density_gradient(std::uint64_t seed);
CheckResult inv_score_gradient_matches_differences(std::uint64_t seed);
CheckResult inv_scores_unbiased(std::uint64_t seed);
CheckResult inv_empirical_covariance_psd(std::uint64_t seed);
CheckResult inv_independent_population_diagonal(std::uint64_t seed);
CheckResult inv_empirical_rank_bound(std::uint64_t seed);
CheckResult inv_oracle_equivalence(std::uint64_t seed);
CheckResult inv_path_piecewise_linear(std::uint64_t seed);
CheckResult inv_path_active_bound(std::uint64_t seed);
CheckResult inv_objective_concave_nondecreasing(std::uint64_t seed);
CheckResult inv_unpenalized_weights(std::uint64_t seed);
CheckResult inv_knot_bookkeeping(std::uint64_t seed);
CheckResult inv_trace_ratio_monotone(std::uint64_t seed);
CheckResult inv_selection_monotone_in_tau(std::uint64_t seed);
CheckResult inv_sensitivity_matches_differences(std::uint64_t seed);
CheckResult inv_information_identity(std::uint64_t seed);
CheckResult inv_sandwich_scale_invariance(std::uint64_t seed);
CheckResult inv_msd_bound(std::uint64_t seed);
CheckResult inv_harness_paths_satisfy_kkt(std::uint64_t seed);
CheckResult inv_are_bounded(std::uint64_t seed);
CheckResult inv_harness_reproducible(std::uint64_t seed);
CheckResult inv_pipeline_reproducible(std::uint64_t seed);
CheckResult inv_pair_indexing(std::uint64_t seed);
CheckResult inv_smoother_normal_equations(std::uint64_t seed);

std::vector<Invariant> invariant_suite();

}  // namespace sparsecl::testing
