#pragma once

#include "sparsecl/estimator.hpp"
#include "sparsecl/io.hpp"
#include "sparsecl/lambda_select.hpp"
#include "sparsecl/model.hpp"
#include "sparsecl/score_stats.hpp"
#include "sparsecl/sparse_solver.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sparsecl {

/// ksmooth-style Gaussian kernel: quartiles at +-0.25 bandwidth.
inline constexpr double kNormalKernelScale = 0.3706506;

/// n^{-1/5} times half the time range, with time scaled to [0, 1].
double default_bandwidth(Index n);

/// Row-normalised Nadaraya-Watson weights on the time grid t.
Matrix kernel_weights(const Vector& t, double bandwidth);

/// Nadaraya-Watson fit of y on the time grid t at every t_i.
Vector nadaraya_watson(const Vector& t, const Vector& y, double bandwidth);

struct Detrended {
    Dataset residuals;  // (x - trend) / sigma_hat, column-wise
    Matrix trend;
    Vector variances;   // sigma_hat^2 = sum_i (x - trend)^2 / n
    double bandwidth = 0.0;
};

/// Removes a kernel-smoothed trend from every column (time = row order on
/// [0, 1]) and scales the residuals to unit variance.
Detrended detrend_normalize(const Dataset& data, std::optional<double> bandwidth = std::nullopt);

/// Column-wise scaling by sigma_hat^2 = sum_i x^2 / n (no trend removal).
Detrended normalize_only(const Dataset& data);

struct FitOptions {
    SelectionRule selection = SelectionRule::trace(kDefaultTau);
    std::vector<double> lambda_grid;  // report grid; empty means the largest knots
    Index report_rows = 11;
    PreliminaryOptions preliminary;
    EstimateOptions estimate;
    SolverOptions solver;
    std::optional<double> lambda_min;  // default: follow the path until it ends
    std::optional<double> fixed_lambda; // skip selection and use this lambda
};

struct FitResult {
    Vector theta_prelim;
    RootTrace preliminary_trace;
    ScoreCovariance<double> j;
    SolutionPath<double> path;
    Selection<double> selection;
    EstimateReport selected;
    std::vector<EstimateReport> grid;  // one per report lambda, decreasing
    EstimateReport uniform;
};

/// The `rows` largest knot lambdas below lambda_start with a non-empty rule.
std::vector<double> default_report_grid(const SolutionPath<double>& path, Index rows);

/// Uniform preliminary estimate, empirical J, path, selection, one-step
/// estimates on the report grid and the uniform comparison row.
FitResult fit_composite(const ModelSpec& model, const Dataset& data, const FitOptions& options = {});

struct PipelineConfig {
    std::string input_csv;
    std::string sites_csv;
    std::optional<double> bandwidth;
    FitOptions fit;
    std::string output_dir;  // empty: nothing written
    ReportFormat format = ReportFormat::Text;
    bool dump_cov = false;
};

struct PipelineResult {
    std::vector<Site> sites;
    Detrended detrended;
    ModelSpec model;
    FitResult fit;
    std::vector<ReportRow> rows;  // grid rows then the uniform row
};

PipelineResult run_pipeline(const PipelineConfig& config);

/// Report rows for a fit: every grid lambda followed by the uniform row.
std::vector<ReportRow> fit_report_rows(const FitResult& fit);

/// Selected pairs as CSV: index, site_a, site_b, weight.
void write_selected_pairs(const ModelSpec& model, std::span<const Site> sites, const Rule& rule, std::ostream& out);

}  // namespace sparsecl
