#pragma once

#include "sparsecl/lambda_select.hpp"
#include "sparsecl/model.hpp"
#include "sparsecl/pipeline.hpp"
#include "sparsecl/score_stats.hpp"
#include "sparsecl/sparse_solver.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace sparsecl {

/// Heterogeneous location model with Sigma = (1 - rho) diag(j) + rho u u', u_j = sqrt(j).
struct Fig1Scenario {
    double rho = 0.5;
    Index m = 20;
};

/// Pairwise model on d equally spaced points with delta_jk = sqrt(2 |j - k|).
struct Fig2Scenario {
    double theta = 0.6;
    Index d = 10;
};

struct ExchangeableScenario {
    double rho = 0.5;
    Index m = 5;
};

struct GravitySyntheticScenario {
    Index d = 20;
    Index n = 60;
    double theta_star = 0.05;
    std::uint64_t seed = 1;
};

using Scenario = std::variant<Fig1Scenario, Fig2Scenario, ExchangeableScenario, GravitySyntheticScenario>;

/// Replaces the closed-form pairwise J by a Monte Carlo estimate.
struct McOracle {
    Index n = 100000;
    std::uint64_t seed = 1;
};

struct ExperimentConfig {
    Scenario scenario;
    std::vector<double> lambda_grid;
    double tau = kDefaultTau;
    std::string output_prefix;
    std::optional<McOracle> mc_oracle;
};

Matrix fig1_covariance(double rho, Index m);
Matrix fig2_delta(Index d);

struct CurvePoint {
    double lambda = 0.0;
    double are = 0.0;
    Index n_active = 0;
    double phi = 0.0;
};

struct PathStudy {
    ScoreCovariance<double> j;
    double fisher = 0.0;
    SolutionPath<double> path;
    std::vector<CurvePoint> curve;  // path knots and extra grid values, decreasing lambda
    Selection<double> selection;
    double selected_are = 0.0;
};

/// Path, ARE(lambda) and the trace-ratio selection for a population J.
PathStudy study_path(const ScoreCovariance<double>& j, double fisher, double tau, std::span<const double> grid = {});

PathStudy run_fig1(const Fig1Scenario& scenario, double tau = kDefaultTau, std::span<const double> grid = {});
PathStudy run_fig2(const Fig2Scenario& scenario, double tau = kDefaultTau, std::span<const double> grid = {},
                   const std::optional<McOracle>& mc = std::nullopt);

/// (1 - lambda) / (rho (m - 1) + 1) for lambda < 1, else 0.
double exchangeable_weight(double rho, Index m, double lambda);
/// rho m / (rho (m - 1) + 1).
double exchangeable_are(double rho, Index m);

struct ExchangeableRow {
    double lambda = 0.0;
    double weight = 0.0;         // closed form
    double max_abs_error = 0.0;  // solver against the closed form
};

struct ExchangeableStudy {
    std::vector<ExchangeableRow> rows;
    double are_formula = 0.0;
    double are_computed = 0.0;   // unit-weight Godambe information times rho
};

ExchangeableStudy run_exchangeable(const ExchangeableScenario& scenario, std::span<const double> lambdas = {});

/// Random sites inside lat [37, 47], lon [7, 18] with log-uniform populations
/// (millions) in [pop_lo, pop_hi].
std::vector<Site> synthetic_sites(Index d, std::mt19937_64& rng, double pop_lo = 0.1, double pop_hi = 0.5);

struct GravityStudy {
    std::vector<Site> sites;
    Vector sigmas;
    Dataset raw;
    FitResult fit;
    std::vector<ReportRow> rows;
};

/// Simulates gravity-model fields at theta_star, scales each column by its
/// root mean square and runs the fit on the pairwise gravity model. Site
/// layouts are redrawn until the gravity covariance is positive definite,
/// which it is not for arbitrary populations.
GravityStudy run_gravity_synthetic(const GravitySyntheticScenario& scenario, const FitOptions& options = {});

/// Runs a scenario and writes <prefix>_path.csv, _are.csv, _report.csv and
/// _manifest.json. Returns the written paths.
std::vector<std::string> run_experiment(const ExperimentConfig& config);

}  // namespace sparsecl
