#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hydrotype/congruence.hpp"
#include "hydrotype/hodograph.hpp"
#include "hydrotype/io.hpp"
#include "hydrotype/laplace.hpp"
#include "hydrotype/system.hpp"
#include "hydrotype/version.hpp"

using namespace ht;
using nlohmann::json;

namespace {

constexpr double kResidualGate = 1e-5;   // solve / verify acceptance bound
constexpr double kIncidenceGate = 1e-8;  // focal points must sit on their lines

struct Overrides {
    std::optional<double> tol, eps_hyp;
    std::optional<int> samples;
    std::optional<std::uint64_t> seed;
};

void add_overrides(CLI::App* cmd, Overrides& ov) {
    cmd->add_option("--tol", ov.tol, "residual tolerance override");
    cmd->add_option("--eps-hyp", ov.eps_hyp, "minimal speed gap override");
    cmd->add_option("--samples", ov.samples, "sample budget override");
    cmd->add_option("--seed", ov.seed, "sampling seed override");
}

DiagonalSystem apply_overrides(DiagonalSystem sys, const Overrides& ov) {
    if (ov.tol) sys.tol = *ov.tol;
    if (ov.eps_hyp) sys.eps_hyp = *ov.eps_hyp;
    if (ov.samples) sys.samples = *ov.samples;
    if (ov.seed) sys.seed = *ov.seed;
    return sys;
}

json base_report(const DiagonalSystem& sys, const std::string& command) {
    json j;
    j["command"] = command;
    j["config"] = system_json(sys);
    j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
    return j;
}

void emit(const json& j) { std::cout << j.dump(2) << '\n'; }

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("failed while writing " + path.string());
}

std::string usage_error(const std::string& msg) {
    std::cerr << "hydrotype: " << msg << '\n';
    return msg;
}

// ---------------------------------------------------------------- diagnose

int run_diagnose(const DiagonalSystem& sys) {
    const DiagnosticsReport rep = full_report(sys);
    json j = diagnostics_json(rep);
    j["command"] = "diagnose";
    emit(j);
    return rep.hyperbolic.flag ? 0 : 2;
}

// ----------------------------------------------------------------- laplace

int run_laplace(const DiagonalSystem& sys, int i, std::optional<int> jpair, int depth) {
    json out = base_report(sys, "laplace");
    out["i"] = i;
    if (jpair) {
        const SamplePlan plan = sample_plan(sys);
        const CoeffTable table = coefficient_table(sys, plan);
        out["step"] = laplace_step_json(laplace_transform(sys, table, plan, i, *jpair));
        emit(out);
        return 0;
    }
    const SequenceResult res = sequence_terminates(sys, i, depth);
    out["depth"] = depth;
    out["sequence"] = sequence_json(res);
    emit(out);
    return 0;
}

// ------------------------------------------------------------------- solve

int run_solve(const DiagonalSystem& sys, const std::vector<std::string>& phi_text,
              std::vector<double> grid4, std::vector<double> origin, std::vector<double> u0,
              int cells, int substeps, bool force, const std::string& outdir) {
    if (static_cast<int>(phi_text.size()) != sys.n)
        throw ParseError(usage_error("need exactly " + std::to_string(sys.n) +
                                     " --phi entries for this system"),
                         0);
    std::vector<Expr> phi;
    for (const std::string& s : phi_text) phi.push_back(parse_expr(s, 1));

    if (origin.empty()) origin = {0.0, 0.0};
    if (origin.size() != 2)
        throw ParseError(usage_error("--origin takes x,t"), 0);
    if (grid4.size() != 4 || grid4[0] <= 0 || grid4[1] <= 0 || grid4[2] < 1 || grid4[3] < 1)
        throw ParseError(usage_error("--grid takes X,T,NX,NT with positive extents"), 0);
    const GridAxis x_axis{origin[0] - grid4[0] / 2, origin[0] + grid4[0] / 2,
                          static_cast<int>(grid4[2])};
    const GridAxis t_axis{origin[1] - grid4[1] / 2, origin[1] + grid4[1] / 2,
                          static_cast<int>(grid4[3])};

    if (u0.empty())
        for (const Interval& iv : sys.domain) u0.push_back((iv.lo + iv.hi) / 2);
    if (static_cast<int>(u0.size()) != sys.n)
        throw ParseError(usage_error("--u0 needs one value per component"), 0);

    PipelineOptions opt;
    opt.u_cells = cells;
    opt.substeps = substeps;
    opt.force = force;
    const PipelineResult res =
        pipeline_solve(sys, phi, u0, origin[0], origin[1], x_axis, t_axis, opt);

    const std::filesystem::path dir(outdir);
    std::filesystem::create_directories(dir);
    write_file(dir / "solution.csv", solution_csv(res.grid));
    write_file(dir / "plot.gp", gnuplot_script("solution.csv", res.grid));

    json out = base_report(sys, "solve");
    out["phi"] = phi_text;
    out["origin"] = json::array({origin[0], origin[1]});
    out["u0"] = u0;
    out["cells"] = cells;
    out["substeps"] = substeps;
    out["force"] = force;
    out["artifacts"] = json::array({"solution.csv", "plot.gp"});
    out["result"] = pipeline_json(res);
    emit(out);
    return res.verify.max_residual <= kResidualGate ? 0 : 2;
}

// -------------------------------------------------------------- congruence

int run_congruence(const DiagonalSystem& sys, std::vector<int> pair_ij, int cells,
                   const std::string& outdir) {
    if (pair_ij.empty()) pair_ij = {1, 2};
    if (pair_ij.size() != 2)
        throw ParseError(usage_error("--pair takes I,J"), 0);

    const SamplePlan plan = sample_plan(sys);
    const CoeffTable table = coefficient_table(sys, plan);

    GridSpec spec;
    for (const Interval& iv : sys.domain) spec.axes.push_back(GridAxis{iv.lo, iv.hi, cells});
    AxisData axis;
    axis.base.reserve(sys.n);
    for (const Interval& iv : sys.domain) axis.base.push_back((iv.lo + iv.hi) / 2);

    // default basis: the p-th pair restricts to u^p on its own axis and to a
    // constant on the others, so the density Jacobian is the identity at the base
    std::vector<ConservationPair> pairs;
    for (int p = 0; p < sys.n; ++p) {
        axis.f.assign(sys.n, parse_expr("0", 1));
        axis.f[p] = parse_expr("u1", 1);
        pairs.push_back(solve_density(sys, table, axis, spec));
    }

    const std::filesystem::path dir(outdir);
    std::filesystem::create_directories(dir);
    json artifacts = json::array();
    json pair_summaries = json::array();
    for (int p = 0; p < sys.n; ++p) {
        const std::string nn = "pair" + std::to_string(p + 1) + "_N.csv";
        const std::string mn = "pair" + std::to_string(p + 1) + "_M.csv";
        write_file(dir / nn, scalar_field_csv(pairs[p].Ng));
        write_file(dir / mn, scalar_field_csv(pairs[p].Mg));
        artifacts.push_back(nn);
        artifacts.push_back(mn);
        json ps;
        ps["closed_form"] = pairs[p].closed_form();
        ps["mixed_defect"] = pairs[p].mixed_defect;
        pair_summaries.push_back(ps);
    }

    json charts = json::array();
    double worst_incidence = 0.0;
    for (int i = 1; i <= sys.n; ++i) {
        const FocalChart chart = focal_chart(sys, pairs, i);
        const std::string cn = "chart" + std::to_string(i) + ".csv";
        write_file(dir / cn, focal_chart_csv(chart));
        artifacts.push_back(cn);
        if (sys.n == 2) {
            const std::string mn = "chart" + std::to_string(i) + ".mesh";
            write_file(dir / mn, focal_chart_mesh(chart));
            artifacts.push_back(mn);
        }
        std::size_t masked = 0;
        for (char m : chart.mask) masked += m == 0;
        json cj;
        cj["i"] = i;
        cj["incidence_residual"] = chart.incidence_residual;
        cj["pencil_variance"] = chart.pencil_variance;
        cj["masked_nodes"] = masked;
        charts.push_back(cj);
        worst_incidence = std::max(worst_incidence, chart.incidence_residual);
    }

    json out = base_report(sys, "congruence");
    out["cells"] = cells;
    out["pair"] = pair_ij;
    out["pairs"] = pair_summaries;
    out["charts"] = charts;
    out["artifacts"] = artifacts;
    try {
        out["invariance"] =
            speed_invariance_json(verify_speed_invariance(sys, table, plan, pairs,
                                                          pair_ij[0], pair_ij[1]));
    } catch (const PrereqViolated& e) {
        // a vanishing coefficient makes the transform undefined; that is a
        // property of the system, not a failure of this run
        out["invariance"] = json{{"skipped", e.what()}};
    }
    emit(out);
    return worst_incidence <= kIncidenceGate ? 0 : 2;
}

// ------------------------------------------------------------------ verify

int run_verify(const DiagonalSystem& sys, const std::string& solution) {
    std::ifstream in(solution, std::ios::binary);
    if (!in) throw ParseError(usage_error("cannot read " + solution), 0);
    std::ostringstream buf;
    buf << in.rdbuf();
    SolutionGrid grid = parse_solution_csv(buf.str(), solution);
    if (grid.n != sys.n)
        throw ParseError(usage_error("solution has " + std::to_string(grid.n) +
                                     " components, system has " + std::to_string(sys.n)),
                         0);
    const VerifyReport rep = verify_solution(sys, grid);
    json out = base_report(sys, "verify");
    out["solution"] = solution;
    out["report"] = verify_json(rep);
    emit(out);
    return rep.max_residual <= kResidualGate ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diagnostics, Laplace elimination, and exact solvers for diagonal "
                 "systems of hydrodynamic type"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    std::string input, outdir = ".", solution;
    Overrides ov;
    int i = 1, depth = 3, cells = 10, solve_cells = 24, substeps = 16;
    std::optional<int> jpair;
    bool force = false;
    std::vector<std::string> phi_text;
    std::vector<double> grid4, origin, u0;
    std::vector<int> pair_ij;

    CLI::App* diag = app.add_subcommand("diagnose", "hyperbolicity and integrability checks");
    diag->add_option("system", input, "built-in name or definition file")->required();
    add_overrides(diag, ov);

    CLI::App* lap = app.add_subcommand("laplace", "elimination step or termination search");
    lap->add_option("system", input)->required();
    lap->add_option("--i", i, "component whose row is eliminated")->required();
    CLI::Option* jopt = lap->add_option("--j", jpair, "apply the single step (i, j)");
    lap->add_option("--depth", depth, "search depth when --j is absent");
    add_overrides(lap, ov);

    CLI::App* sol = app.add_subcommand("solve", "build an exact solution on an (x, t) grid");
    sol->add_option("system", input)->required();
    sol->add_option("--phi", phi_text, "solution datum per component, as an expression in u1")
        ->required();
    sol->add_option("--grid", grid4, "X,T,NX,NT extents and cells, centered on --origin")
        ->required()
        ->delimiter(',');
    sol->add_option("--origin", origin, "x,t center of the grid and pipeline seed")
        ->delimiter(',');
    sol->add_option("--u0", u0, "u seed at the origin (default: domain center)")
        ->delimiter(',');
    sol->add_option("--cells", solve_cells, "u-grid resolution for mu construction");
    sol->add_option("--substeps", substeps, "integrator substeps per cell");
    sol->add_flag("--force", force, "run the generic route despite failed diagnostics");
    sol->add_option("--out", outdir, "artifact directory");
    add_overrides(sol, ov);

    CLI::App* con = app.add_subcommand("congruence", "conservation-law geometry reports");
    con->add_option("system", input)->required();
    con->add_option("--pair", pair_ij, "transform indices I,J (default 1,2)")->delimiter(',');
    con->add_option("--cells", cells, "lattice cells per u-axis");
    con->add_option("--out", outdir, "artifact directory");
    add_overrides(con, ov);

    CLI::App* ver = app.add_subcommand("verify", "residual-check a stored solution grid");
    ver->add_option("system", input)->required();
    ver->add_option("--solution", solution, "solution CSV produced by solve")->required();
    add_overrides(ver, ov);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    DiagonalSystem sys;
    try {
        sys = apply_overrides(resolve_system(input), ov);
    } catch (const Error& e) {
        std::cerr << "hydrotype: " << e.what() << '\n';
        return 1;
    }

    try {
        if (diag->parsed()) return run_diagnose(sys);
        if (lap->parsed())
            return run_laplace(sys, i, jopt->count() ? jpair : std::nullopt, depth);
        if (sol->parsed())
            return run_solve(sys, phi_text, grid4, origin, u0, solve_cells, substeps, force,
                             outdir);
        if (con->parsed()) return run_congruence(sys, pair_ij, cells, outdir);
        if (ver->parsed()) return run_verify(sys, solution);
    } catch (const ParseError& e) {
        std::cerr << "hydrotype: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        std::cerr << "hydrotype: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
