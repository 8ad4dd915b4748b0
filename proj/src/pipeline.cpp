#include "sparsecl/pipeline.hpp"

#include "sparsecl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace sparsecl {

double default_bandwidth(Index n) {
    if (n < 2) throw ConfigError("bandwidth needs at least two time points");
    return std::pow(static_cast<double>(n), -0.2) * 0.5;
}

Matrix kernel_weights(const Vector& t, double bandwidth) {
    if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
    const double s = kNormalKernelScale * bandwidth;
    const Index n = t.size();
    Matrix k(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index l = 0; l < n; ++l) {
            const double u = (t(i) - t(l)) / s;
            k(i, l) = std::exp(-0.5 * u * u);
        }
    const Vector rows = k.rowwise().sum();
    return rows.cwiseInverse().asDiagonal() * k;
}

Vector nadaraya_watson(const Vector& t, const Vector& y, double bandwidth) {
    if (t.size() != y.size()) throw ConfigError("time grid and response differ in length");
    return kernel_weights(t, bandwidth) * y;
}

Detrended detrend_normalize(const Dataset& data, std::optional<double> bandwidth) {
    const Index n = data.n();
    if (n < 3) throw ConfigError("detrending needs at least three observations");
    const double bw = bandwidth.value_or(default_bandwidth(n));
    const Vector t = Vector::LinSpaced(n, 0.0, 1.0);
    const Matrix weights = kernel_weights(t, bw);
    Detrended out;
    out.bandwidth = bw;
    out.trend = weights * data.observations();
    Matrix resid = data.observations() - out.trend;
    out.variances = resid.colwise().squaredNorm().transpose() / static_cast<double>(n);
    for (Index j = 0; j < data.d(); ++j) {
        const double scale = data.observations().col(j).cwiseAbs().maxCoeff();
        const double sd = std::sqrt(out.variances(j));
        if (!(sd > 1e-12 * scale) || !(sd > 0.0))
            throw DegenerateError("column " + std::to_string(j) + " has zero variance after detrending");
        resid.col(j) /= sd;
    }
    out.residuals = Dataset(std::move(resid));
    return out;
}

Detrended normalize_only(const Dataset& data) {
    const Index n = data.n();
    Detrended out;
    out.trend = Matrix::Zero(n, data.d());
    out.variances = data.observations().colwise().squaredNorm().transpose() / static_cast<double>(n);
    Matrix x = data.observations();
    for (Index j = 0; j < data.d(); ++j) {
        if (!(out.variances(j) > 0.0)) throw DegenerateError("column " + std::to_string(j) + " is identically zero");
        x.col(j) /= std::sqrt(out.variances(j));
    }
    out.residuals = Dataset(std::move(x));
    return out;
}

std::vector<double> default_report_grid(const SolutionPath<double>& path, Index rows) {
    std::vector<double> grid;
    for (const auto& knot : path.knots) {
        if (static_cast<Index>(grid.size()) >= rows) break;
        if (knot.lambda < path.lambda_start && !knot.rule.active_set.empty()) grid.push_back(knot.lambda);
    }
    return grid;
}

FitResult fit_composite(const ModelSpec& model, const Dataset& data, const FitOptions& options) {
    FitResult fit;
    fit.theta_prelim = preliminary_estimate(model, data, options.preliminary, &fit.preliminary_trace);
    fit.j = empirical_score_covariance(evaluate_scores(model, fit.theta_prelim, data));

    double lambda_min = options.lambda_min.value_or(0.0);
    for (double l : options.lambda_grid) {
        if (!(l > 0.0)) throw ConfigError("report lambdas must be positive");
        lambda_min = std::min(lambda_min, l);
    }
    if (options.fixed_lambda) lambda_min = std::min(lambda_min, *options.fixed_lambda);
    SolverOptions solver = options.solver;
    solver.stop_at_singular_entry = true;
    fit.path = solution_path(fit.j, lambda_min, solver);
    const double path_end = fit.path.knots.back().lambda;

    auto rule_for = [&](double lambda) {
        if (lambda < path_end) {
            std::ostringstream os;
            os << "lambda = " << lambda << " lies below " << path_end
               << ", where the empirical score covariance runs out of rank; choose a larger lambda";
            throw ConfigError(os.str());
        }
        auto rule = rule_at(fit.path, fit.j, lambda);
        if (rule.active_set.empty()) {
            std::ostringstream os;
            os << "lambda = " << lambda << " is at or above lambda_start = " << fit.path.lambda_start
               << " and selects no sub-likelihood";
            throw ConfigError(os.str());
        }
        return rule;
    };

    if (options.fixed_lambda) {
        auto rule = rule_for(*options.fixed_lambda);
        const double phi = trace_ratio(fit.j, rule.active_set);
        fit.selection = {*options.fixed_lambda, std::move(rule), phi, 0, false};
    } else {
        fit.selection = select_lambda(fit.path, fit.j, options.selection, std::span<const double>(options.lambda_grid));
    }
    fit.selected = estimate_with_rule(model, data, fit.selection.rule, fit.theta_prelim, options.estimate);
    fit.selected.diagnostics.selection_fallback = fit.selection.fallback;
    fit.selected.diagnostics.preliminary_iterations = fit.preliminary_trace.iterations;

    std::vector<double> grid = options.lambda_grid.empty() ? default_report_grid(fit.path, options.report_rows)
                                                           : options.lambda_grid;
    std::sort(grid.begin(), grid.end(), std::greater<>());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (double lambda : grid) {
        auto report = estimate_with_rule(model, data, rule_for(lambda), fit.theta_prelim, options.estimate);
        report.diagnostics.preliminary_iterations = fit.preliminary_trace.iterations;
        fit.grid.push_back(std::move(report));
    }

    const Index m = model.sublikelihood_count();
    Vector theta_unif = fit.theta_prelim;
    if (options.preliminary.mode != PreliminaryMode::Uniform)
        theta_unif = solve_estimating_equation(model, data, Vector::Ones(m), fit.theta_prelim);
    Rule uniform = rule_from_weights(fit.j, Vector::Ones(m).eval(), 0.0);
    fit.uniform = sandwich_inference(model, data, uniform, theta_unif);
    fit.uniform.label = "uniform";
    fit.uniform.lambda.reset();
    fit.uniform.theta_prelim = theta_unif;
    return fit;
}

std::vector<ReportRow> fit_report_rows(const FitResult& fit) {
    auto rows = report_rows(fit.grid);
    rows.push_back(report_row(fit.uniform));
    return rows;
}

void write_selected_pairs(const ModelSpec& model, std::span<const Site> sites, const Rule& rule, std::ostream& out) {
    if (!model.is_pairwise()) throw UnsupportedModelError("selected pairs exist only for pairwise models");
    out << "index,site_a,site_b,weight\n";
    for (Index idx : rule.active_set) {
        const auto [a, b] = model.pair(idx);
        out << idx << ',' << sites[static_cast<std::size_t>(a)].id << ',' << sites[static_cast<std::size_t>(b)].id << ','
            << format_double(rule.weights(idx)) << '\n';
    }
}

PipelineResult run_pipeline(const PipelineConfig& config) {
    const NumericTable table = read_numeric_csv_file(config.input_csv);
    std::vector<Site> sites = read_sites_csv_file(config.sites_csv);
    const auto d = static_cast<Index>(sites.size());
    if (table.values.cols() != d)
        throw ConfigError("data has " + std::to_string(table.values.cols()) + " columns but " + std::to_string(d) +
                          " sites were given");
    if (d < 2) throw ConfigError("the pairwise model needs at least two sites");

    Detrended detrended = detrend_normalize(Dataset(table.values), config.bandwidth);
    ModelSpec model = ModelSpec::gravity_field(sites, Vector::Ones(d));
    FitResult fit = fit_composite(model, detrended.residuals, config.fit);
    std::vector<ReportRow> rows = fit_report_rows(fit);

    if (!config.output_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(config.output_dir);
        const fs::path dir(config.output_dir);
        for (auto [format, name] : {std::pair{ReportFormat::Text, "report.txt"}, std::pair{ReportFormat::Csv, "report.csv"},
                                    std::pair{ReportFormat::Json, "report.json"}}) {
            std::ostringstream os;
            emit_report(rows, format, os);
            write_text_file((dir / name).string(), os.str());
        }
        std::ostringstream path_csv, pairs;
        write_path_csv(fit.path, path_csv);
        write_text_file((dir / "path.csv").string(), path_csv.str());
        write_selected_pairs(model, sites, fit.selection.rule, pairs);
        write_text_file((dir / "selected_pairs.csv").string(), pairs.str());
        if (config.dump_cov) {
            std::ostringstream cov;
            write_matrix_csv(cov, fit.j.matrix());
            write_text_file((dir / "cov.csv").string(), cov.str());
        }
    }
    return {std::move(sites), std::move(detrended), std::move(model), std::move(fit), std::move(rows)};
}

}  // namespace sparsecl
