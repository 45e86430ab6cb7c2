#pragma once

// File formats: dataset CSV, matrix CSV, solver JSON, curve CSV/SVG and
// diagnostic JSON. Numbers are written with 17 significant digits.

#include "robscatter/core.hpp"
#include "robscatter/diagnostics.hpp"
#include "robscatter/simulate.hpp"
#include "robscatter/solver.hpp"

#include <json.hpp>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace robscatter {

/// Malformed input file; carries the 1-based line number.
class ParseError : public InputError {
public:
    ParseError(const std::string& what, std::size_t line) : InputError(what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

inline std::string format_double(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace detail {

inline std::string_view trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(std::string_view field, std::size_t line)
{
    const std::string tmp(trim(field));
    if (tmp.empty()) {
        throw ParseError("line " + std::to_string(line) + ": empty field", line);
    }
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(tmp.c_str(), &end);
    if (end != tmp.c_str() + tmp.size() || errno == ERANGE || !std::isfinite(v)) {
        throw ParseError("line " + std::to_string(line) + ": '" + tmp + "' is not a finite number", line);
    }
    return v;
}

} // namespace detail

/// Parses one sample per row, comma separated; lines starting with '#' and
/// blank lines are skipped.
inline std::vector<std::vector<double>> parse_samples_csv(std::istream& in)
{
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto body = detail::trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        std::vector<double> row;
        std::size_t start = 0;
        while (true) {
            const auto comma = body.find(',', start);
            row.push_back(detail::parse_double(body.substr(start, comma - start), lineno));
            if (comma == std::string_view::npos) {
                break;
            }
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(rows.front().size()) +
                                 " values, got " + std::to_string(row.size()),
                             lineno);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw ParseError("no samples found", lineno);
    }
    return rows;
}

inline Dataset load_dataset_csv(const std::string& path, bool normalize = true)
{
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open data file '" + path + "'");
    }
    const auto rows = parse_samples_csv(in);
    const Matrix raw = rows_to_matrix(rows);
    return normalize ? normalize_dataset(raw) : Dataset(raw, false);
}

inline void write_samples_csv(std::ostream& out, const Matrix& samples)
{
    out << "# " << samples.rows() << " samples, dimension " << samples.cols() << '\n';
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
        for (Eigen::Index j = 0; j < samples.cols(); ++j) {
            out << (j ? "," : "") << format_double(samples(i, j));
        }
        out << '\n';
    }
}

/// m rows of m comma-separated entries.
inline void write_matrix_csv(std::ostream& out, const Matrix& a)
{
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            out << (j ? "," : "") << format_double(a(i, j));
        }
        out << '\n';
    }
}

inline nlohmann::json matrix_to_json(const Matrix& a)
{
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            arr.push_back(a(i, j));
        }
    }
    return arr;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index m)
{
    if (!j.is_array() || Eigen::Index(j.size()) != m * m) {
        throw InputError("matrix JSON: expected a row-major array of " + std::to_string(m * m) + " numbers");
    }
    Matrix a(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index k = 0; k < m; ++k) {
            a(i, k) = j.at(std::size_t(i * m + k)).get<double>();
        }
    }
    return a;
}

/// {m, N, t, matrix (row-major), iterations, residual, converged}
inline nlohmann::json solution_to_json(const Dataset& d, double t, const Solution& s)
{
    return {{"m", d.dim()},
            {"N", d.size()},
            {"t", t},
            {"matrix", matrix_to_json(s.matrix.matrix())},
            {"iterations", s.report.iterations},
            {"residual", s.report.final_residual},
            {"converged", s.report.converged}};
}

/// nlohmann::json prints doubles in shortest round-trip form.
inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline nlohmann::json diagnostics_to_json(const std::vector<DiagnosticReport>& reports)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) {
        arr.push_back({{"name", r.name},
                       {"t", r.t},
                       {"passed", r.passed},
                       {"worst_case", r.worst_case},
                       {"tolerance", r.tolerance},
                       {"details", r.details}});
    }
    return arr;
}

inline void write_diagnostics_table(std::ostream& out, const std::vector<DiagnosticReport>& reports)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-26s %-10s %-6s %-14s %s\n", "check", "t", "status", "worst", "details");
    out << buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-26s %-10.4g %-6s %-14.6g ", r.name.c_str(), r.t, r.passed ? "PASS" : "FAIL",
                      r.worst_case);
        out << buf << r.details << '\n';
    }
}

inline void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& points)
{
    out << "t,c_mean,c_stderr,trials\n";
    for (const auto& p : points) {
        out << format_double(p.t) << ',' << format_double(p.c_mean) << ',' << format_double(p.c_stderr) << ','
            << p.trials_used << '\n';
    }
}

/// Minimal line plot of C(t) on linear axes.
inline void write_curve_svg(std::ostream& out, const std::vector<CurvePoint>& points, const std::string& title = "")
{
    constexpr double width = 640.0;
    constexpr double height = 420.0;
    constexpr double margin = 50.0;
    double tmax = 0.0;
    double cmax = 0.0;
    for (const auto& p : points) {
        tmax = std::max(tmax, p.t);
        cmax = std::max(cmax, p.c_mean);
    }
    if (tmax <= 0.0) {
        tmax = 1.0;
    }
    if (cmax <= 0.0) {
        cmax = 1.0;
    }
    auto px = [&](double t) { return margin + (width - 2 * margin) * t / tmax; };
    auto py = [&](double c) { return height - margin - (height - 2 * margin) * c / cmax; };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
        << height - margin << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin << "\" y2=\"" << height - margin
        << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">t (max "
        << format_double(tmax) << ")</text>\n";
    out << "<text x=\"12\" y=\"" << margin - 12 << "\">C(t) (max " << format_double(cmax) << ")</text>\n";
    if (!title.empty()) {
        out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\">" << title << "</text>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"red\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : points) {
        out << px(p.t) << ',' << py(p.c_mean) << ' ';
    }
    out << "\"/>\n</svg>\n";
}

namespace detail {

inline std::vector<double> parse_grid_unchecked(const std::string& spec)
{
    std::vector<double> out;
    if (spec.find(':') != std::string::npos) {
        std::vector<double> parts;
        std::size_t start = 0;
        while (true) {
            const auto colon = spec.find(':', start);
            parts.push_back(parse_double(std::string_view(spec).substr(start, colon - start), 0));
            if (colon == std::string::npos) {
                break;
            }
            start = colon + 1;
        }
        if (parts.size() != 3 || !(parts[1] != 0.0)) {
            throw InputError("grid spec '" + spec + "': expected start:step:end with nonzero step");
        }
        const double n = std::floor((parts[2] - parts[0]) / parts[1] + 1e-9);
        if (n < 0 || n > 1e7) {
            throw InputError("grid spec '" + spec + "': empty or too large");
        }
        for (long k = 0; k <= long(n); ++k) {
            // 12 significant digits removes accumulated binary noise (0.051, not 0.051000000000000004)
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.12g", parts[0] + double(k) * parts[1]);
            out.push_back(std::strtod(buf, nullptr));
        }
        return out;
    }
    std::size_t start = 0;
    while (true) {
        const auto comma = spec.find(',', start);
        out.push_back(parse_double(std::string_view(spec).substr(start, comma - start), 0));
        if (comma == std::string::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

} // namespace detail

/// `start:step:end` (inclusive, tolerant to rounding) or a comma-separated list.
inline std::vector<double> parse_grid(const std::string& spec)
{
    try {
        return detail::parse_grid_unchecked(spec);
    } catch (const ParseError&) {
        throw InputError("grid spec '" + spec + "': expected start:step:end or a comma-separated list of numbers");
    }
}

} // namespace robscatter
