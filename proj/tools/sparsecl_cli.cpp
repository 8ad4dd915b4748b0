// sparsecl: sparse composite likelihood command-line tool.

#include "sparsecl/errors.hpp"
#include "sparsecl/io.hpp"
#include "sparsecl/pipeline.hpp"
#include "sparsecl/simulation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace sparsecl;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct SelectionFlags {
    std::string rule;
    double tau = kDefaultTau;
    double delta = kDefaultDelta;
    bool delta_given = false;

    SelectionRule resolve() const {
        const std::string name = rule.empty() ? (delta_given ? "relative" : "trace") : rule;
        return selection_kind_from_string(name) == SelectionKind::TraceRatio ? SelectionRule::trace(tau)
                                                                              : SelectionRule::relative(delta);
    }
};

void add_selection_flags(CLI::App* cmd, SelectionFlags& flags) {
    cmd->add_option("--rule", flags.rule, "selection rule: trace or relative");
    cmd->add_option("--tau", flags.tau, "trace-ratio threshold in (0, 1]");
    cmd->add_option_function<double>(
        "--delta",
        [&flags](double v) {
            flags.delta = v;
            flags.delta_given = true;
        },
        "relative-tolerance threshold in (0, 1)");
}

struct CovarianceInput {
    std::string cov_csv;
    std::string data_csv;
    std::string model_json;
};

void add_covariance_inputs(CLI::App* cmd, CovarianceInput& in) {
    cmd->add_option("--cov", in.cov_csv, "m x m score covariance CSV");
    cmd->add_option("--data", in.data_csv, "observations CSV (one row per observation)");
    cmd->add_option("--model", in.model_json, "model JSON");
}

ScoreCovariance<double> load_covariance(const CovarianceInput& in) {
    if (!in.cov_csv.empty()) {
        const auto table = read_numeric_csv_file(in.cov_csv);
        return ScoreCovariance<double>(table.values, CovarianceSource::Empirical);
    }
    if (in.data_csv.empty() || in.model_json.empty())
        throw ConfigError("give either --cov, or --data together with --model");
    const ModelSpec model = read_model_config_file(in.model_json);
    const Dataset data(read_numeric_csv_file(in.data_csv).values);
    const Vector theta = preliminary_estimate(model, data);
    return empirical_score_covariance(evaluate_scores(model, theta, data));
}

void write_output(const std::string& file, const std::string& text) {
    if (file.empty() || file == "-")
        std::cout << text;
    else
        write_text_file(file, text);
}

nlohmann::json rule_json(const Rule& rule) {
    nlohmann::json w = nlohmann::json::array();
    for (Index idx : rule.active_set) w.push_back(rule.weights(idx));
    return {{"lambda", rule.lambda}, {"active_set", rule.active_set}, {"weights", w}, {"objective", rule.objective}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse composite likelihood: L1-penalized composition rules, paths and one-step estimates"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "regenerate a simulation scenario");
    std::string scenario;
    double rho = 0.5, theta = 0.6, theta_star = 0.05, tau_sim = kDefaultTau;
    Index m = 20, d = 10, n = 60;
    std::uint64_t seed = 1;
    std::vector<double> grid_sim;
    std::vector<std::uint64_t> mc;
    std::string prefix;
    sim->add_option("scenario", scenario, "fig1, fig2, exchangeable or gravity-synthetic")->required();
    sim->add_option("--rho", rho);
    sim->add_option("--m", m);
    sim->add_option("--theta", theta);
    sim->add_option("--d", d);
    sim->add_option("--n", n);
    sim->add_option("--theta-star", theta_star);
    sim->add_option("--seed", seed);
    sim->add_option("--tau", tau_sim);
    sim->add_option("--lambda-grid", grid_sim)->delimiter(',');
    sim->add_option("--mc-oracle", mc, "N SEED: Monte Carlo score covariance for fig2")->expected(2);
    sim->add_option("--out", prefix, "output prefix")->required();

    // path
    auto* path_cmd = app.add_subcommand("path", "solution path of the penalized criterion");
    CovarianceInput path_in;
    double lambda_min = 0.0;
    std::string path_format = "csv", path_out;
    add_covariance_inputs(path_cmd, path_in);
    path_cmd->add_option("--lambda-min", lambda_min);
    path_cmd->add_option("--format", path_format, "csv or json");
    path_cmd->add_option("-o,--output", path_out);

    // select
    auto* select_cmd = app.add_subcommand("select", "choose lambda along the path");
    CovarianceInput select_in;
    SelectionFlags select_flags;
    std::vector<double> grid_select;
    std::string select_out;
    add_covariance_inputs(select_cmd, select_in);
    add_selection_flags(select_cmd, select_flags);
    select_cmd->add_option("--lambda-grid", grid_select)->delimiter(',');
    select_cmd->add_option("-o,--output", select_out);

    // estimate
    auto* est = app.add_subcommand("estimate", "one-step estimate with sandwich standard errors");
    std::string est_data, est_model, est_format = "text", est_out;
    SelectionFlags est_flags;
    std::vector<double> grid_est;
    std::optional<double> fixed_lambda;
    bool est_full = false;
    est->add_option("--data", est_data)->required();
    est->add_option("--model", est_model)->required();
    add_selection_flags(est, est_flags);
    est->add_option("--lambda", fixed_lambda, "use this lambda instead of a selection rule");
    est->add_option("--lambda-grid", grid_est)->delimiter(',');
    est->add_flag("--full-iterate", est_full);
    est->add_option("--format", est_format, "text, csv or json");
    est->add_option("-o,--output", est_out);

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "detrend, normalise, select and estimate on gravity-model data");
    PipelineConfig config;
    SelectionFlags pipe_flags;
    std::string pipe_format = "text";
    Index subset = 0;
    std::uint64_t pipe_seed = 0;
    pipe->add_option("--data", config.input_csv)->required();
    pipe->add_option("--sites", config.sites_csv, "id,lat,lon,population_millions")->required();
    pipe->add_option("--bandwidth", config.bandwidth);
    add_selection_flags(pipe, pipe_flags);
    pipe->add_option("--lambda-grid", config.fit.lambda_grid)->delimiter(',');
    pipe->add_option("--seed", pipe_seed);
    pipe->add_option("--subset", subset, "preliminary fit on a random subset of this many pairs");
    pipe->add_flag("--dump-cov", config.dump_cov);
    pipe->add_flag("--full-iterate", config.fit.estimate.full_iterate);
    pipe->add_option("--out-dir", config.output_dir);
    pipe->add_option("--format", pipe_format, "text, csv or json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    try {
        if (*sim) {
            ExperimentConfig ec;
            ec.tau = tau_sim;
            ec.lambda_grid = grid_sim;
            ec.output_prefix = prefix;
            if (!mc.empty()) ec.mc_oracle = McOracle{static_cast<Index>(mc[0]), mc[1]};
            if (scenario == "fig1")
                ec.scenario = Fig1Scenario{rho, m};
            else if (scenario == "fig2")
                ec.scenario = Fig2Scenario{theta, d};
            else if (scenario == "exchangeable")
                ec.scenario = ExchangeableScenario{rho, m};
            else if (scenario == "gravity-synthetic")
                ec.scenario = GravitySyntheticScenario{d, n, theta_star, seed};
            else
                throw ConfigError("unknown scenario '" + scenario + "'");
            for (const auto& f : run_experiment(ec)) std::cout << f << '\n';
        } else if (*path_cmd) {
            const auto j = load_covariance(path_in);
            SolverOptions options;
            options.stop_at_singular_entry = true;
            const auto path = solution_path(j, lambda_min, options);
            std::ostringstream os;
            if (path_format == "json")
                write_path_json(path, os);
            else if (path_format == "csv")
                write_path_csv(path, os);
            else
                throw ConfigError("--format must be csv or json");
            write_output(path_out, os.str());
        } else if (*select_cmd) {
            const auto j = load_covariance(select_in);
            SolverOptions options;
            options.stop_at_singular_entry = true;
            double lowest = 0.0;
            for (double l : grid_select) lowest = std::min(lowest, l);
            const auto path = solution_path(j, lowest, options);
            const auto sel = select_lambda(path, j, select_flags.resolve(), std::span<const double>(grid_select));
            nlohmann::json out = rule_json(sel.rule);
            out["ratio"] = sel.ratio;
            out["fallback"] = sel.fallback;
            write_output(select_out, out.dump(2) + "\n");
            if (sel.fallback) std::cerr << "warning: no lambda met the threshold; using the smallest grid value\n";
        } else if (*est) {
            const ModelSpec model = read_model_config_file(est_model);
            const Dataset data(read_numeric_csv_file(est_data).values);
            FitOptions options;
            options.selection = est_flags.resolve();
            options.fixed_lambda = fixed_lambda;
            options.lambda_grid = grid_est;
            options.report_rows = grid_est.empty() ? 0 : static_cast<Index>(grid_est.size());
            options.estimate.full_iterate = est_full;
            const FitResult fit = fit_composite(model, data, options);
            std::vector<ReportRow> rows{report_row(fit.selected)};
            for (const auto& r : fit.grid) rows.push_back(report_row(r));
            rows.push_back(report_row(fit.uniform));
            std::ostringstream os;
            emit_report(rows, report_format_from_string(est_format), os);
            write_output(est_out, os.str());
            if (fit.selection.fallback)
                std::cerr << "warning: no lambda met the threshold; using the smallest grid value\n";
        } else if (*pipe) {
            config.fit.selection = pipe_flags.resolve();
            if (subset > 0) config.fit.preliminary = {PreliminaryMode::RandomSubset, subset, pipe_seed};
            const auto result = run_pipeline(config);
            std::ostringstream os;
            emit_report(result.rows, report_format_from_string(pipe_format), os);
            std::cout << os.str();
            std::cerr << "selected lambda " << format_double(result.fit.selection.lambda) << " with "
                      << result.fit.selection.rule.n_active() << " of " << result.model.sublikelihood_count()
                      << " pairs" << (result.fit.selection.fallback ? " (threshold not met)" : "") << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return 0;
}
