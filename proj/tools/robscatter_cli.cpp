// Command-line front end: estimate, tyler, xi, path, verify, curve, sample.
//
// Exit codes: 0 success, 1 input error, 2 solver non-convergence,
// 3 experiment failure, 4 verification failure.

#include "robscatter/robscatter.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <thread>

namespace {

using namespace robscatter;

enum Exit : int { kOk = 0, kInput = 1, kSolver = 2, kExperiment = 3, kVerify = 4 };

struct SolverFlags {
    double tol = 1e-10;
    int max_iter = 2000;
    std::string init = "identity";
    std::string scheme = "newton";

    void add(CLI::App* app)
    {
        app->add_option("--tol", tol, "Relative Frobenius stopping tolerance")->capture_default_str();
        app->add_option("--max-iter", max_iter, "Maximum number of fixed-point iterations")->capture_default_str();
        app->add_option("--init", init, "Initial matrix: identity or sample-scatter")
            ->check(CLI::IsMember({"identity", "sample-scatter"}))
            ->capture_default_str();
        app->add_option("--scheme", scheme, "Iteration scheme: newton, anderson or picard")
            ->check(CLI::IsMember({"newton", "anderson", "picard"}))
            ->capture_default_str();
    }

    SolverConfig config() const
    {
        SolverConfig c;
        c.tol = tol;
        c.max_iter = max_iter;
        c.init = init == "sample-scatter" ? InitKind::sample_scatter : InitKind::identity;
        c.scheme = scheme == "picard" ? Scheme::picard : scheme == "anderson" ? Scheme::anderson : Scheme::newton;
        c.validate();
        return c;
    }
};

struct DataFlags {
    std::string path;
    bool no_normalize = false;

    void add(CLI::App* app)
    {
        app->add_option("--data", path, "Sample CSV, one m-dimensional sample per row")->required();
        app->add_flag("--no-normalize", no_normalize, "Keep raw sample norms");
    }

    Dataset load() const { return load_dataset_csv(path, !no_normalize); }
};

void write_text(const std::string& path, const std::string& text)
{
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write '" + path + "'");
    }
    out << text;
}

std::string solution_text(const Dataset& d, double t, const Solution& s)
{
    return dump_json(solution_to_json(d, t, s));
}

std::string matrix_csv_text(const Matrix& a)
{
    std::ostringstream os;
    write_matrix_csv(os, a);
    return os.str();
}

int report_solution(const Dataset& d, double t, const Solution& s, const std::string& out,
                    const std::string& matrix_csv)
{
    write_text(out, solution_text(d, t, s));
    if (!matrix_csv.empty()) {
        write_text(matrix_csv, matrix_csv_text(s.matrix.matrix()));
    }
    if (!s.report.converged) {
        std::cerr << "error: no convergence after " << s.report.iterations << " iterations, residual "
                  << format_double(s.report.final_residual) << '\n';
        return kSolver;
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Robust scatter estimation: M-estimators of scatter, Tyler's estimator and their t -> 0 limit"};
    app.require_subcommand(1, 1);

    // estimate
    auto* est = app.add_subcommand("estimate", "Solve the M-estimator equation at a given t");
    DataFlags est_data;
    SolverFlags est_solver;
    std::string est_family = "model";
    double est_t = 0.0;
    std::string est_out;
    std::string est_csv;
    est_data.add(est);
    est_solver.add(est);
    est->add_option("--family", est_family, "Weight family: model, student-t")->capture_default_str();
    est->add_option("--t", est_t, "Family parameter t > 0")->required();
    est->add_option("--out", est_out, "JSON output file (default stdout)");
    est->add_option("--matrix-csv", est_csv, "Also write the matrix as CSV");

    // tyler
    auto* ty = app.add_subcommand("tyler", "Solve Tyler's equation, trace normalized to m");
    DataFlags ty_data;
    SolverFlags ty_solver;
    std::string ty_out;
    std::string ty_csv;
    ty_data.add(ty);
    ty_solver.add(ty);
    ty->add_option("--out", ty_out, "JSON output file (default stdout)");
    ty->add_option("--matrix-csv", ty_csv, "Also write the matrix as CSV");

    // xi
    auto* xi = app.add_subcommand("xi", "Limit scale xi relating Tyler's P to lim M(t) = xi P");
    DataFlags xi_data;
    SolverFlags xi_solver;
    std::string xi_family = "model";
    std::string xi_out;
    xi_data.add(xi);
    xi_solver.add(xi);
    xi->add_option("--family", xi_family, "Weight family: model, student-t")->capture_default_str();
    xi->add_option("--out", xi_out, "JSON output file (default stdout)");

    // path
    auto* pa = app.add_subcommand("path", "M(t) along a decreasing t grid and its distance to the limit");
    DataFlags pa_data;
    SolverFlags pa_solver;
    std::string pa_family = "model";
    std::string pa_grid = "0.1,0.01,0.001,0.0001";
    bool pa_cold = false;
    std::string pa_out;
    pa_data.add(pa);
    pa_solver.add(pa);
    pa->add_option("--family", pa_family, "Weight family: model, student-t")->capture_default_str();
    pa->add_option("--t-grid", pa_grid, "start:step:end or comma list; sorted decreasing")->capture_default_str();
    pa->add_flag("--cold", pa_cold, "Do not warm start successive solves");
    pa->add_option("--out", pa_out, "JSON output file (default stdout)");

    // verify
    auto* ve = app.add_subcommand("verify", "Run the diagnostic suite (variational identities and bounds)");
    DataFlags ve_data;
    std::string ve_family = "model";
    std::string ve_list = "1,0.1,0.01";
    std::string ve_json;
    std::uint64_t ve_seed = 20240101;
    ve_data.add(ve);
    ve->add_option("--family", ve_family, "Weight family: model, student-t, const")->capture_default_str();
    ve->add_option("--t-list", ve_list, "start:step:end or comma list")->capture_default_str();
    ve->add_option("--json", ve_json, "Also write the reports as JSON");
    ve->add_option("--seed", ve_seed, "Seed for random probe matrices")->capture_default_str();

    // curve
    auto* cu = app.add_subcommand("curve", "Monte-Carlo estimate of C(t) = E||M(t) - M0||_F^2");
    ExperimentSpec cu_spec;
    SolverFlags cu_solver;
    std::string cu_grid = "0.001:0.05:1.001";
    bool cu_no_normalize = false;
    std::string cu_out;
    std::string cu_svg;
    unsigned cu_threads = std::max(1u, std::thread::hardware_concurrency());
    cu_solver.add(cu);
    cu->add_option("--m", cu_spec.m, "Dimension")->capture_default_str();
    cu->add_option("--N", cu_spec.N, "Samples per trial")->capture_default_str();
    cu->add_option("--rho", cu_spec.rho, "Toeplitz parameter in [0, 1)")->capture_default_str();
    cu->add_option("--family", cu_spec.family, "Weight family: model, student-t")->capture_default_str();
    cu->add_option("--t-grid", cu_grid, "start:step:end or comma list")->capture_default_str();
    cu->add_option("--trials", cu_spec.trials, "Monte-Carlo trials")->capture_default_str();
    cu->add_option("--seed", cu_spec.seed, "Random seed")->capture_default_str();
    cu->add_flag("--no-normalize", cu_no_normalize, "Use raw Gaussian samples instead of unit-norm ones");
    cu->add_option("--out", cu_out, "CSV output file (default stdout)");
    cu->add_option("--svg", cu_svg, "Optional SVG plot");
    cu->add_option("--threads", cu_threads, "Worker threads")->capture_default_str();

    // sample
    auto* sa = app.add_subcommand("sample", "Draw Gaussian samples with Toeplitz covariance as CSV");
    int sa_m = 5;
    int sa_n = 20;
    double sa_rho = 0.5;
    std::uint64_t sa_seed = 1;
    std::string sa_out;
    sa->add_option("--m", sa_m, "Dimension")->capture_default_str();
    sa->add_option("--N", sa_n, "Number of samples")->capture_default_str();
    sa->add_option("--rho", sa_rho, "Toeplitz parameter in [0, 1)")->capture_default_str();
    sa->add_option("--seed", sa_seed, "Random seed")->capture_default_str();
    sa->add_option("--out", sa_out, "CSV output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInput;
    }

    try {
        if (*est) {
            const Dataset d = est_data.load();
            const WeightFamily f = make_family(est_family, int(d.dim()));
            const Solution s = solve_maronna(d, f, est_t, est_solver.config());
            return report_solution(d, est_t, s, est_out, est_csv);
        }
        if (*ty) {
            const Dataset d = ty_data.load();
            const Solution s = solve_tyler(d, ty_solver.config());
            return report_solution(d, 0.0, s, ty_out, ty_csv);
        }
        if (*xi) {
            const Dataset d = xi_data.load();
            const WeightFamily f = make_family(xi_family, int(d.dim()));
            const Solution p = solve_tyler(d, xi_solver.config());
            if (!p.report.converged) {
                std::cerr << "error: Tyler solve did not converge, residual " << format_double(p.report.final_residual)
                          << '\n';
                return kSolver;
            }
            const XiResult r = solve_xi(d, f, p.matrix);
            nlohmann::json j = {{"m", d.dim()},
                                {"N", d.size()},
                                {"family", f.label()},
                                {"xi", r.xi},
                                {"equation_value", r.equation_value},
                                {"tyler", matrix_to_json(p.matrix.matrix())},
                                {"limit", matrix_to_json(p.matrix.matrix() * r.xi)}};
            write_text(xi_out, dump_json(j));
            return kOk;
        }
        if (*pa) {
            const Dataset d = pa_data.load();
            const WeightFamily f = make_family(pa_family, int(d.dim()));
            auto grid = parse_grid(pa_grid);
            std::sort(grid.begin(), grid.end(), std::greater<>());
            grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
            const LimitPath path = limit_path(d, f, grid, pa_solver.config(), !pa_cold);
            nlohmann::json pts = nlohmann::json::array();
            bool all_converged = true;
            for (const auto& p : path.points) {
                all_converged = all_converged && p.report.converged;
                pts.push_back({{"t", p.t},
                               {"deviation", p.deviation},
                               {"iterations", p.report.iterations},
                               {"residual", p.report.final_residual},
                               {"converged", p.report.converged},
                               {"matrix", matrix_to_json(p.matrix.matrix())}});
            }
            nlohmann::json j = {{"m", d.dim()},
                                {"N", d.size()},
                                {"family", f.label()},
                                {"xi", path.xi},
                                {"limit", matrix_to_json(path.limit.matrix())},
                                {"points", pts}};
            write_text(pa_out, dump_json(j));
            if (!all_converged) {
                std::cerr << "error: at least one solve along the path did not converge\n";
                return kSolver;
            }
            return kOk;
        }
        if (*ve) {
            const Dataset d = ve_data.load();
            const WeightFamily f = make_family(ve_family, int(d.dim()));
            DiagnosticOptions opt;
            opt.seed = ve_seed;
            const auto reports = run_diagnostic_suite(d, f, parse_grid(ve_list), opt);
            write_diagnostics_table(std::cout, reports);
            if (!ve_json.empty()) {
                write_text(ve_json, dump_json(diagnostics_to_json(reports)));
            }
            if (!all_passed(reports)) {
                std::cerr << "verification failed:";
                for (const auto& r : reports) {
                    if (!r.passed) {
                        std::cerr << ' ' << r.name;
                    }
                }
                std::cerr << '\n';
                return kVerify;
            }
            return kOk;
        }
        if (*cu) {
            cu_spec.t_grid = parse_grid(cu_grid);
            cu_spec.normalize = !cu_no_normalize;
            RunOptions opt;
            opt.threads = std::max(1u, cu_threads);
            opt.solver = cu_solver.config();
            const CurveResult res = run_curve(cu_spec, opt);
            std::ostringstream csv;
            write_curve_csv(csv, res.points);
            write_text(cu_out, csv.str());
            if (!cu_svg.empty()) {
                std::ostringstream svg;
                write_curve_svg(svg, res.points,
                                cu_spec.family + ", m=" + std::to_string(cu_spec.m) + ", N=" +
                                    std::to_string(cu_spec.N) + ", rho=" + format_double(cu_spec.rho));
                write_text(cu_svg, svg.str());
            }
            if (res.failed_trials > 0) {
                std::cerr << "warning: " << res.failed_trials << " trial(s) failed and were excluded\n";
            }
            return kOk;
        }
        if (*sa) {
            if (sa_n < 1) {
                throw InputError("--N must be >= 1");
            }
            const Matrix y = sample_gaussian(sa_n, toeplitz_covariance(sa_m, sa_rho), sa_seed);
            std::ostringstream os;
            write_samples_csv(os, y);
            write_text(sa_out, os.str());
            return kOk;
        }
    } catch (const ExperimentError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExperiment;
    } catch (const SolverError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kSolver;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInput;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInput;
    }
    return kInput;
}
