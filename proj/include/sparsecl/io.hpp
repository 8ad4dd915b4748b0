#pragma once

#include "sparsecl/estimator.hpp"
#include "sparsecl/model.hpp"
#include "sparsecl/sparse_solver.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sparsecl {

/// Shortest "%.17g" rendering; what every CSV writer uses so output is reproducible.
std::string format_double(double value);

struct NumericTable {
    std::vector<std::string> header;  // empty when the file has none
    Matrix values;
};

/// Comma-separated numbers, one row per line. A first line that does not parse
/// as numbers is taken as the header. Blank lines are skipped.
NumericTable read_numeric_csv(std::istream& in, std::string_view source = "<stream>");
NumericTable read_numeric_csv_file(const std::string& path);

/// Columns id, lat, lon, population_millions (header optional).
std::vector<Site> read_sites_csv(std::istream& in, std::string_view source = "<stream>");
std::vector<Site> read_sites_csv_file(const std::string& path);

void write_matrix_csv(std::ostream& out, const Matrix& a);

enum class ReportFormat { Text, Csv, Json };
ReportFormat report_format_from_string(std::string_view name);

/// One line of a Table-1 style report.
struct ReportRow {
    std::string rule = "sparse";
    std::optional<double> lambda;
    Vector theta_hat;
    Vector se;
    Index n_sub = 0;

    bool operator==(const ReportRow&) const = default;
};

ReportRow report_row(const EstimateReport& report);
std::vector<ReportRow> report_rows(std::span<const EstimateReport> reports);

/// Columns rule, lambda, theta_hat, se, n_sub. The text table prints each
/// numeric column with its own power-of-ten annotation.
void emit_report(std::span<const ReportRow> rows, ReportFormat format, std::ostream& out);
std::vector<ReportRow> parse_report_json(std::string_view text);

/// Long format: knot, lambda, event, index, weight (non-zero weights only).
void write_path_csv(const SolutionPath<double>& path, std::ostream& out);
void write_path_json(const SolutionPath<double>& path, std::ostream& out);

void write_text_file(const std::string& path, const std::string& contents);

/// Model from a JSON document (schema in the README). Relative file names
/// inside it resolve against `base_dir`.
ModelSpec parse_model_config(std::string_view text, const std::string& base_dir = ".");
ModelSpec read_model_config_file(const std::string& path);

}  // namespace sparsecl
