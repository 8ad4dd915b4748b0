#include "sparsecl/io.hpp"

#include "sparsecl/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sparsecl {

namespace {

using json = nlohmann::json;

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\"");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\"");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::optional<double> parse_number(const std::string& field) {
    if (field.empty()) return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(field.c_str(), &end);
    if (end != field.c_str() + field.size() || errno == ERANGE) return std::nullopt;
    return v;
}

bool blank(const std::string& line) { return trim(line).empty(); }

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    return in;
}

const char* event_name(EventKind kind) {
    switch (kind) {
    case EventKind::Start: return "start";
    case EventKind::Enter: return "enter";
    case EventKind::Leave: return "leave";
    case EventKind::EnterLeave: return "enter-leave";
    case EventKind::End: return "end";
    }
    return "unknown";
}

// Exponent e such that the column prints as value / 10^e; 0 keeps it unscaled.
int column_exponent(const std::vector<double>& values) {
    double top = 0.0;
    for (double v : values)
        if (std::isfinite(v)) top = std::max(top, std::abs(v));
    if (top == 0.0) return 0;
    const int e = static_cast<int>(std::floor(std::log10(top)));
    return (e <= -2 || e >= 3) ? e : 0;
}

std::string scaled_header(const std::string& name, int e) {
    return e == 0 ? name : name + " (x10^" + std::to_string(e) + ")";
}

std::string scaled_value(double v, int e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v / std::pow(10.0, e));
    return buf;
}

std::vector<std::string> estimate_columns(const char* base, Index p) {
    std::vector<std::string> out;
    if (p == 1) return {base};
    for (Index r = 0; r < p; ++r) out.push_back(std::string(base) + "_" + std::to_string(r + 1));
    return out;
}

json vector_json(const Vector& v) {
    json a = json::array();
    for (Index r = 0; r < v.size(); ++r) a.push_back(v(r));
    return a;
}

Vector vector_from_json(const json& a) {
    Vector v(static_cast<Index>(a.size()));
    for (std::size_t r = 0; r < a.size(); ++r) v(static_cast<Index>(r)) = a[r].get<double>();
    return v;
}

}  // namespace

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[40];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, value);
        if (std::strtod(buf, nullptr) == value) break;
    }
    return buf;
}

NumericTable read_numeric_csv(std::istream& in, std::string_view source) {
    NumericTable table;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        auto fields = split_fields(line);
        std::vector<double> row;
        bool numeric = true;
        for (const auto& f : fields) {
            auto v = parse_number(f);
            if (!v) {
                numeric = false;
                break;
            }
            row.push_back(*v);
        }
        if (first) {
            first = false;
            width = fields.size();
            if (!numeric) {
                table.header = std::move(fields);
                continue;
            }
        }
        if (!numeric) throw ParseError(std::string(source) + ": non-numeric field", line_no);
        if (row.size() != width)
            throw ParseError(std::string(source) + ": expected " + std::to_string(width) + " fields, found " +
                                 std::to_string(row.size()),
                             line_no);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(std::string(source) + ": no data rows", line_no);
    table.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < width; ++c) table.values(static_cast<Index>(i), static_cast<Index>(c)) = rows[i][c];
    return table;
}

NumericTable read_numeric_csv_file(const std::string& path) {
    auto in = open_input(path);
    return read_numeric_csv(in, path);
}

std::vector<Site> read_sites_csv(std::istream& in, std::string_view source) {
    std::vector<Site> sites;
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 4)
            throw ParseError(std::string(source) + ": expected id,lat,lon,population_millions", line_no);
        const auto lat = parse_number(fields[1]);
        const auto lon = parse_number(fields[2]);
        const auto pop = parse_number(fields[3]);
        if (first) {
            first = false;
            if (!lat && !lon && !pop) continue;
        }
        if (!lat || !lon || !pop) throw ParseError(std::string(source) + ": non-numeric site coordinate", line_no);
        if (!(*pop > 0.0)) throw ParseError(std::string(source) + ": population must be positive", line_no);
        sites.push_back({fields[0], *lat, *lon, *pop});
    }
    if (sites.empty()) throw ParseError(std::string(source) + ": no sites", line_no);
    return sites;
}

std::vector<Site> read_sites_csv_file(const std::string& path) {
    auto in = open_input(path);
    return read_sites_csv(in, path);
}

void write_matrix_csv(std::ostream& out, const Matrix& a) {
    for (Index r = 0; r < a.rows(); ++r) {
        for (Index c = 0; c < a.cols(); ++c) out << (c ? "," : "") << format_double(a(r, c));
        out << '\n';
    }
}

ReportFormat report_format_from_string(std::string_view name) {
    if (name == "text") return ReportFormat::Text;
    if (name == "csv") return ReportFormat::Csv;
    if (name == "json") return ReportFormat::Json;
    throw ConfigError("unknown report format '" + std::string(name) + "' (expected text, csv or json)");
}

ReportRow report_row(const EstimateReport& report) {
    return {report.label, report.lambda, report.theta_hat, report.standard_errors, report.n_active};
}

std::vector<ReportRow> report_rows(std::span<const EstimateReport> reports) {
    std::vector<ReportRow> rows;
    for (const auto& r : reports) rows.push_back(report_row(r));
    return rows;
}

void emit_report(std::span<const ReportRow> rows, ReportFormat format, std::ostream& out) {
    if (rows.empty()) throw ConfigError("nothing to report");
    const Index p = rows.front().theta_hat.size();
    for (const auto& r : rows)
        if (r.theta_hat.size() != p || r.se.size() != p) throw ConfigError("report rows differ in parameter dimension");
    const auto theta_cols = estimate_columns("theta_hat", p);
    const auto se_cols = estimate_columns("se", p);

    if (format == ReportFormat::Json) {
        json doc = json::array();
        for (const auto& r : rows) {
            json row;
            row["rule"] = r.rule;
            row["lambda"] = r.lambda ? json(*r.lambda) : json(nullptr);
            row["theta_hat"] = vector_json(r.theta_hat);
            row["se"] = vector_json(r.se);
            row["n_sub"] = r.n_sub;
            doc.push_back(std::move(row));
        }
        out << doc.dump(2) << '\n';
        return;
    }

    if (format == ReportFormat::Csv) {
        out << "rule,lambda";
        for (const auto& c : theta_cols) out << ',' << c;
        for (const auto& c : se_cols) out << ',' << c;
        out << ",n_sub\n";
        for (const auto& r : rows) {
            out << r.rule << ',' << (r.lambda ? format_double(*r.lambda) : "");
            for (Index k = 0; k < p; ++k) out << ',' << format_double(r.theta_hat(k));
            for (Index k = 0; k < p; ++k) out << ',' << format_double(r.se(k));
            out << ',' << r.n_sub << '\n';
        }
        return;
    }

    // text table: one scale per numeric column
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"rule"};
    std::vector<std::vector<double>> columns;
    {
        std::vector<double> lambdas;
        for (const auto& r : rows)
            if (r.lambda) lambdas.push_back(*r.lambda);
        columns.push_back(lambdas);
    }
    for (Index k = 0; k < p; ++k) {
        std::vector<double> v;
        for (const auto& r : rows) v.push_back(r.theta_hat(k));
        columns.push_back(v);
    }
    for (Index k = 0; k < p; ++k) {
        std::vector<double> v;
        for (const auto& r : rows) v.push_back(r.se(k));
        columns.push_back(v);
    }
    std::vector<int> exps;
    for (const auto& c : columns) exps.push_back(column_exponent(c));
    header.push_back(scaled_header("lambda", exps[0]));
    for (Index k = 0; k < p; ++k) header.push_back(scaled_header(theta_cols[static_cast<std::size_t>(k)], exps[1 + k]));
    for (Index k = 0; k < p; ++k) header.push_back(scaled_header(se_cols[static_cast<std::size_t>(k)], exps[1 + p + k]));
    header.push_back("n_sub");
    cells.push_back(header);
    for (const auto& r : rows) {
        std::vector<std::string> line{r.rule, r.lambda ? scaled_value(*r.lambda, exps[0]) : "-"};
        for (Index k = 0; k < p; ++k) line.push_back(scaled_value(r.theta_hat(k), exps[1 + k]));
        for (Index k = 0; k < p; ++k) line.push_back(scaled_value(r.se(k), exps[1 + p + k]));
        line.push_back(std::to_string(r.n_sub));
        cells.push_back(std::move(line));
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : cells)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    for (const auto& line : cells) {
        for (std::size_t c = 0; c < line.size(); ++c) {
            if (c) out << "  ";
            if (c == 0)
                out << std::left << std::setw(static_cast<int>(width[c])) << line[c];
            else
                out << std::right << std::setw(static_cast<int>(width[c])) << line[c];
        }
        out << '\n';
    }
}

std::vector<ReportRow> parse_report_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("report JSON: ") + e.what(), 0);
    }
    if (!doc.is_array()) throw ParseError("report JSON must be an array", 0);
    std::vector<ReportRow> rows;
    for (const auto& item : doc) {
        ReportRow r;
        r.rule = item.at("rule").get<std::string>();
        if (!item.at("lambda").is_null()) r.lambda = item.at("lambda").get<double>();
        r.theta_hat = vector_from_json(item.at("theta_hat"));
        r.se = vector_from_json(item.at("se"));
        r.n_sub = item.at("n_sub").get<Index>();
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_path_csv(const SolutionPath<double>& path, std::ostream& out) {
    out << "knot,lambda,event,index,weight\n";
    for (std::size_t k = 0; k < path.knots.size(); ++k) {
        const auto& knot = path.knots[k];
        const std::string prefix = std::to_string(k) + "," + format_double(knot.lambda) + "," + event_name(knot.event.kind);
        if (knot.rule.active_set.empty()) out << prefix << ",,\n";
        for (Index idx : knot.rule.active_set) out << prefix << ',' << idx << ',' << format_double(knot.rule.weights(idx)) << '\n';
    }
}

void write_path_json(const SolutionPath<double>& path, std::ostream& out) {
    json doc;
    doc["lambda_start"] = path.lambda_start;
    doc["lambda_min"] = path.lambda_min;
    doc["truncated"] = path.truncated;
    doc["theta"] = vector_json(path.theta);
    json knots = json::array();
    for (const auto& knot : path.knots) {
        json k;
        k["lambda"] = knot.lambda;
        k["event"] = event_name(knot.event.kind);
        k["entered"] = knot.event.entered;
        k["left"] = knot.event.left;
        k["active_set"] = knot.rule.active_set;
        json w = json::array();
        for (Index idx : knot.rule.active_set) w.push_back(knot.rule.weights(idx));
        k["weights"] = std::move(w);
        k["objective"] = knot.rule.objective;
        knots.push_back(std::move(k));
    }
    doc["knots"] = std::move(knots);
    out << doc.dump(2) << '\n';
}

void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << contents;
    if (!out) throw ConfigError("failed writing '" + path + "'");
}

ModelSpec parse_model_config(std::string_view text, const std::string& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model config: ") + e.what(), 0);
    }
    auto matrix = [](const json& rows) {
        if (!rows.is_array() || rows.empty()) throw ConfigError("model config: expected a non-empty matrix");
        Matrix a(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != rows[0].size()) throw ConfigError("model config: ragged matrix");
            for (std::size_t c = 0; c < rows[r].size(); ++c)
                a(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c].get<double>();
        }
        return a;
    };
    try {
        const ModelKind kind = model_kind_from_string(doc.at("kind").get<std::string>());
        switch (kind) {
        case ModelKind::LocationHeterogeneous:
            if (doc.contains("covariance")) return ModelSpec::location_heterogeneous(matrix(doc["covariance"]));
            return ModelSpec::location_independent(vector_from_json(doc.at("sigmas")));
        case ModelKind::ExchangeableLocation:
            return ModelSpec::exchangeable_location(doc.at("rho").get<double>(), doc.at("m").get<Index>());
        case ModelKind::PairwiseExpCovariance:
            return ModelSpec::pairwise_exp_covariance(matrix(doc.at("delta")));
        case ModelKind::GravityField: {
            std::filesystem::path sites = doc.at("sites").get<std::string>();
            if (sites.is_relative()) sites = std::filesystem::path(base_dir) / sites;
            auto list = read_sites_csv_file(sites.string());
            const auto d = static_cast<Index>(list.size());
            Vector sigmas = doc.contains("sigmas") ? vector_from_json(doc["sigmas"]) : Vector::Ones(d);
            return ModelSpec::gravity_field(std::move(list), std::move(sigmas));
        }
        case ModelKind::UserDefined: break;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    throw ConfigError("model config: user-defined models can only be built through the library");
}

ModelSpec read_model_config_file(const std::string& path) {
    auto in = open_input(path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_model_config(text.str(), std::filesystem::path(path).parent_path().string());
}

}  // namespace sparsecl
