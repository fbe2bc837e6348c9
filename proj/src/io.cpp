#include "hydrotype/io.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "hydrotype/version.hpp"

namespace ht {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_num(const std::string& s, std::size_t line, const std::string& what) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || !std::isfinite(v))
        throw ParseError("bad numeric value for " + what + " on line " + std::to_string(line),
                         line);
    return v;
}

}  // namespace

DiagonalSystem parse_system_text(const std::string& text, const std::string& origin) {
    std::map<std::string, std::pair<std::string, std::size_t>> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(origin + ": expected 'key = value' on line " + std::to_string(lineno),
                             lineno);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ParseError(origin + ": empty key or value on line " + std::to_string(lineno),
                             lineno);
        if (kv.count(key))
            throw ParseError(origin + ": duplicate key '" + key + "' on line " +
                             std::to_string(lineno), lineno);
        kv[key] = {value, lineno};
    }

    auto take = [&](const std::string& key) -> std::pair<std::string, std::size_t> {
        auto it = kv.find(key);
        if (it == kv.end()) throw ParseError(origin + ": missing key '" + key + "'", 0);
        auto r = it->second;
        kv.erase(it);
        return r;
    };
    auto take_opt = [&](const std::string& key, std::string* out, std::size_t* ln) {
        auto it = kv.find(key);
        if (it == kv.end()) return false;
        *out = it->second.first;
        *ln = it->second.second;
        kv.erase(it);
        return true;
    };

    DiagonalSystem sys;
    {
        auto [v, ln] = take("n");
        double n = parse_num(v, ln, "n");
        if (n != std::floor(n) || n < 2 || n > 16)
            throw ParseError(origin + ": n must be an integer in [2, 16]", ln);
        sys.n = static_cast<int>(n);
    }
    for (int i = 1; i <= sys.n; ++i) {
        auto [v, ln] = take("lambda.l" + std::to_string(i));
        try {
            sys.lambda.push_back(parse_expr(v, sys.n));
        } catch (const ParseError& err) {
            throw ParseError(origin + ": lambda.l" + std::to_string(i) + ": " + err.what(), ln);
        }
    }
    for (int i = 1; i <= sys.n; ++i) {
        auto [v, ln] = take("domain.u" + std::to_string(i));
        std::string body = trim(v);
        if (body.size() < 2 || body.front() != '[' || body.back() != ']')
            throw ParseError(origin + ": domain.u" + std::to_string(i) + " must look like [lo, hi]",
                             ln);
        body = body.substr(1, body.size() - 2);
        std::size_t comma = body.find(',');
        if (comma == std::string::npos)
            throw ParseError(origin + ": domain.u" + std::to_string(i) + " must have two bounds",
                             ln);
        Interval iv;
        iv.lo = parse_num(trim(body.substr(0, comma)), ln, "domain lower bound");
        iv.hi = parse_num(trim(body.substr(comma + 1)), ln, "domain upper bound");
        if (!(iv.lo < iv.hi))
            throw ParseError(origin + ": domain.u" + std::to_string(i) + " needs lo < hi", ln);
        sys.domain.push_back(iv);
    }

    std::string v;
    std::size_t ln;
    if (take_opt("tol", &v, &ln)) {
        sys.tol = parse_num(v, ln, "tol");
        if (!(sys.tol > 0)) throw ParseError(origin + ": tol must be positive", ln);
    }
    if (take_opt("eps_hyp", &v, &ln)) {
        sys.eps_hyp = parse_num(v, ln, "eps_hyp");
        if (!(sys.eps_hyp > 0)) throw ParseError(origin + ": eps_hyp must be positive", ln);
    }
    if (take_opt("samples", &v, &ln)) {
        double s = parse_num(v, ln, "samples");
        if (s != std::floor(s) || s < 8 || s > 100000)
            throw ParseError(origin + ": samples must be an integer in [8, 100000]", ln);
        sys.samples = static_cast<int>(s);
    }
    if (take_opt("seed", &v, &ln)) sys.seed = static_cast<std::uint64_t>(parse_num(v, ln, "seed"));
    if (take_opt("name", &v, &ln)) sys.name = v;

    if (!kv.empty())
        throw ParseError(origin + ": unknown key '" + kv.begin()->first + "'",
                         kv.begin()->second.second);
    return sys;
}

DiagonalSystem load_system_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open system file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    DiagonalSystem sys = parse_system_text(buf.str(), path);
    if (sys.name.empty()) {
        std::size_t slash = path.find_last_of('/');
        std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
        std::size_t dot = base.find_last_of('.');
        sys.name = dot == std::string::npos ? base : base.substr(0, dot);
    }
    return sys;
}

namespace {

// The shipped example systems. data/<name>.sys carries the same text.
const std::map<std::string, const char*>& builtin_table() {
    static const std::map<std::string, const char*> table = {
        {"constant2",
         "# Two constant speeds; every coefficient vanishes.\n"
         "n = 2\n"
         "lambda.l1 = 0\n"
         "lambda.l2 = 1\n"
         "domain.u1 = [-1, 1]\n"
         "domain.u2 = [-1, 1]\n"},
        {"order0_decoupled",
         "# Each component rides its own speed; fully decoupled.\n"
         "n = 2\n"
         "lambda.l1 = u1\n"
         "lambda.l2 = u2\n"
         "domain.u1 = [1, 4.5]\n"
         "domain.u2 = [5, 8.5]\n"},
        {"lindeg2",
         "# Crossed speeds; linearly degenerate in both components.\n"
         "n = 2\n"
         "lambda.l1 = u2\n"
         "lambda.l2 = u1\n"
         "domain.u1 = [1.5, 3]\n"
         "domain.u2 = [0.2, 1.2]\n"},
        {"shifted3",
         "# Common drift plus constant per-component shifts.\n"
         "n = 3\n"
         "lambda.l1 = u1+u2+u3\n"
         "lambda.l2 = u1+u2+u3+1\n"
         "lambda.l3 = u1+u2+u3+2\n"
         "domain.u1 = [-0.5, 0.5]\n"
         "domain.u2 = [-0.5, 0.5]\n"
         "domain.u3 = [-0.5, 0.5]\n"},
        {"ratio2",
         "# One moving component with speed u2/u1, one at rest.\n"
         "n = 2\n"
         "lambda.l1 = u2/u1\n"
         "lambda.l2 = 0\n"
         "domain.u1 = [1, 2]\n"
         "domain.u2 = [1, 2]\n"},
        {"nonsemiham3",
         "# Fails the closedness condition on coefficient derivatives.\n"
         "n = 3\n"
         "lambda.l1 = u2*u3\n"
         "lambda.l2 = u1\n"
         "lambda.l3 = u2\n"
         "domain.u1 = [4, 5]\n"
         "domain.u2 = [1, 2]\n"
         "domain.u3 = [6, 8]\n"},
        {"order1_mixed",
         "# Component 1 decouples after one elimination step, component 2 outright.\n"
         "n = 2\n"
         "lambda.l1 = u1+u2\n"
         "lambda.l2 = 2*u2\n"
         "domain.u1 = [2, 3]\n"
         "domain.u2 = [0.2, 1]\n"},
    };
    return table;
}

}  // namespace

std::vector<std::string> builtin_names() {
    std::vector<std::string> names;
    for (const auto& [name, text] : builtin_table()) names.push_back(name);
    return names;
}

bool is_builtin(const std::string& name) { return builtin_table().count(name) != 0; }

std::string builtin_system_text(const std::string& name) {
    auto it = builtin_table().find(name);
    if (it == builtin_table().end()) throw Error("no built-in system named '" + name + "'");
    return it->second;
}

DiagonalSystem builtin_system(const std::string& name) {
    DiagonalSystem sys = parse_system_text(builtin_system_text(name), "builtin:" + name);
    sys.name = name;
    return sys;
}

DiagonalSystem resolve_system(const std::string& name_or_path) {
    if (is_builtin(name_or_path)) return builtin_system(name_or_path);
    return load_system_file(name_or_path);
}

// ---------------------------------------------------------------------------
// JSON report assembly

namespace {

using nlohmann::json;

json num_or_null(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

json point_json(const std::vector<double>& p) {
    json arr = json::array();
    for (double x : p) arr.push_back(x);
    return arr;
}

json check_json(const CheckResult& c) {
    json j;
    j["flag"] = c.flag;
    j["max_residual"] = num_or_null(c.residual);
    j["witness"] = point_json(c.witness);
    if (!c.note.empty()) j["note"] = c.note;
    return j;
}

}  // namespace

json system_json(const DiagonalSystem& sys) {
    json j;
    j["n"] = sys.n;
    json lambdas = json::array();
    for (const Expr& l : sys.lambda) lambdas.push_back(print_expr(l));
    j["lambda"] = lambdas;
    json dom = json::array();
    for (const Interval& iv : sys.domain) dom.push_back(json::array({iv.lo, iv.hi}));
    j["domain"] = dom;
    j["eps_hyp"] = sys.eps_hyp;
    j["tol"] = sys.tol;
    j["samples"] = sys.samples;
    j["seed"] = sys.seed;
    j["name"] = sys.name;
    return j;
}

json diagnostics_json(const DiagnosticsReport& rep) {
    json j;
    j["config"] = system_json(rep.sys);
    j["tool"] = {{"name", kToolName}, {"version", kToolVersion}};

    json hyp;
    hyp["flag"] = rep.hyperbolic.flag;
    hyp["worst_gap"] = num_or_null(rep.hyperbolic.worst_gap);
    hyp["worst_gap_point"] = point_json(rep.hyperbolic.worst_gap_point);
    hyp["attempted"] = rep.hyperbolic.attempted;
    hyp["rejected"] = rep.hyperbolic.rejected;
    if (!rep.hyperbolic.flag) {
        hyp["failure_reason"] = rep.hyperbolic.failure_reason;
        hyp["witness"] = point_json(rep.hyperbolic.witness);
    }
    j["hyperbolicity"] = hyp;

    json lindeg;
    lindeg["flags"] = rep.linearly_degenerate;
    bool all = true;
    for (bool f : rep.linearly_degenerate) all = all && f;
    lindeg["all"] = all;
    j["linearly_degenerate"] = lindeg;

    if (rep.semihamiltonian) j["semihamiltonian"] = check_json(*rep.semihamiltonian);
    if (rep.commuting) j["commuting_compatibility"] = check_json(*rep.commuting);

    if (!rep.order0.empty()) {
        json darboux;
        json o0 = json::array();
        for (const Order0Result& r : rep.order0) {
            json e;
            e["flag"] = r.flag;
            e["numeric_only"] = r.numeric_only;
            e["max_residual"] = num_or_null(r.residual);
            if (!r.witness.empty()) e["witness"] = point_json(r.witness);
            o0.push_back(e);
        }
        darboux["order0"] = o0;
        json o1 = json::array();
        for (const Order1Result& r : rep.order1) {
            json e;
            e["applicable"] = r.applicable;
            e["flag"] = r.flag;
            e["witness_j"] = r.witness_j;
            e["skipped"] = r.skipped;
            e["max_residual"] = num_or_null(r.residual);
            if (!r.witness.empty()) e["witness"] = point_json(r.witness);
            if (!r.note.empty()) e["note"] = r.note;
            o1.push_back(e);
        }
        darboux["order1"] = o1;
        if (rep.darboux_order_le1) darboux["order_le1"] = *rep.darboux_order_le1;
        j["darboux"] = darboux;
    }
    return j;
}

namespace {

/* 17 significant digits round-trip a double exactly and deterministically. */
std::string fmt_full(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

}  // namespace

json sequence_json(const SequenceResult& res) {
    static const char* kOutcomes[] = {"terminated", "not_terminated", "degenerate",
                                      "prereq_violated"};
    json j;
    j["outcome"] = kOutcomes[static_cast<int>(res.outcome)];
    j["steps"] = res.steps;
    j["numeric_only"] = res.numeric_only;
    j["explored"] = res.explored;
    json path = json::array();
    for (const SequenceStep& s : res.path) {
        json e;
        e["j"] = s.j;
        e["lambda"] = s.lambda_printed;
        e["semiham_ok"] = s.semiham_ok;
        e["semiham_residual"] = num_or_null(s.semiham_residual);
        path.push_back(e);
    }
    j["path"] = path;
    j["branch_notes"] = res.branch_notes;
    return j;
}

json laplace_step_json(const LaplaceStep& step) {
    json j;
    j["i"] = step.i;
    j["j"] = step.j;
    j["transformed"] = system_json(step.transformed);
    j["denominator"] = print_expr(step.denominator);
    j["min_abs_denominator"] = num_or_null(step.min_abs_denominator);
    j["cross_residual"] = num_or_null(step.cross_residual);
    return j;
}

json verify_json(const VerifyReport& rep) {
    json j;
    j["max_residual"] = num_or_null(rep.max_residual);
    j["checked"] = rep.checked;
    j["skipped"] = rep.skipped;
    j["worst_point"] = point_json(rep.worst_point);
    j["worst_component"] = rep.worst_component;
    return j;
}

json pipeline_json(const PipelineResult& res) {
    json j;
    j["route"] = res.route;
    j["path_defect"] = num_or_null(res.path_defect);
    j["commuting_residual"] = num_or_null(res.commuting_residual);
    j["notes"] = res.notes;
    j["verify"] = verify_json(res.verify);
    json g;
    g["n"] = res.grid.n;
    g["x"] = json::array({res.grid.x.lo, res.grid.x.hi, res.grid.x.cells});
    g["t"] = json::array({res.grid.t.lo, res.grid.t.hi, res.grid.t.cells});
    std::size_t converged = 0;
    for (char c : res.grid.converged) converged += c != 0;
    g["converged"] = converged;
    g["unconverged"] = res.grid.node_count() - converged;
    j["grid"] = g;
    return j;
}

json speed_invariance_json(const SpeedInvarianceReport& rep) {
    json j;
    j["i"] = rep.i;
    j["j"] = rep.j;
    j["relation_residual"] = num_or_null(rep.relation_residual);
    j["cross_residual"] = num_or_null(rep.cross_residual);
    j["checked"] = rep.checked;
    j["degenerate"] = rep.degenerate;
    json extracted = json::array();
    for (const ScalarFieldGrid& s : rep.speeds) {
        std::size_t nodes = 0;
        for (std::size_t f = 0; f < s.values.size(); ++f) nodes += s.valid(f) ? 1 : 0;
        extracted.push_back(nodes);
    }
    j["extracted_nodes"] = extracted;
    return j;
}

std::string solution_csv(const SolutionGrid& grid) {
    std::ostringstream os;
    os << "x,t";
    for (int c = 0; c < grid.n; ++c) os << ",u" << c + 1;
    os << ",converged,iterations,residual\n";
    for (int it = 0; it <= grid.t.cells; ++it)
        for (int ix = 0; ix <= grid.x.cells; ++ix) {
            const std::size_t f = grid.flat(ix, it);
            os << fmt_full(grid.x.coord(ix)) << ',' << fmt_full(grid.t.coord(it));
            for (int c = 0; c < grid.n; ++c) os << ',' << fmt_full(grid.u[c][f]);
            const double r = f < grid.residual.size()
                                 ? grid.residual[f]
                                 : std::numeric_limits<double>::quiet_NaN();
            os << ',' << int(grid.converged[f]) << ',' << grid.iterations[f] << ','
               << fmt_full(r) << '\n';
        }
    return os.str();
}

SolutionGrid parse_solution_csv(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;

    auto fail = [&](const std::string& msg) -> void {
        throw ParseError(origin + ": " + msg + " on line " + std::to_string(lineno), lineno);
    };
    auto number = [&](const std::string& tok, bool finite) {
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') fail("bad number '" + tok + "'");
        if (finite && !std::isfinite(v)) fail("non-finite value '" + tok + "'");
        return v;
    };

    if (!std::getline(in, line)) throw ParseError(origin + ": empty solution file", 0);
    ++lineno;
    const std::vector<std::string> head = split_fields(line);
    if (head.size() < 6 || head[0] != "x" || head[1] != "t")
        throw ParseError(origin + ": header must start with x,t,u1,...", 1);
    int n = 0;
    while (2 + n < static_cast<int>(head.size()) && head[2 + n] == "u" + std::to_string(n + 1))
        ++n;
    if (n == 0 || head.size() != static_cast<std::size_t>(2 + n + 3) ||
        head[2 + n] != "converged" || head[3 + n] != "iterations" || head[4 + n] != "residual")
        throw ParseError(origin + ": header must be x,t,u1..un,converged,iterations,residual", 1);

    struct Row {
        double x, t, residual;
        std::vector<double> u;
        int converged, iterations;
    };
    std::vector<Row> rows;
    std::set<double> xs, ts;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::vector<std::string> tok = split_fields(line);
        if (tok.size() != head.size()) fail("wrong column count");
        Row r;
        r.x = number(tok[0], true);
        r.t = number(tok[1], true);
        for (int c = 0; c < n; ++c) r.u.push_back(number(tok[2 + c], true));
        r.converged = number(tok[2 + n], true) != 0.0;
        r.iterations = static_cast<int>(number(tok[3 + n], true));
        r.residual = number(tok[4 + n], false);
        xs.insert(r.x);
        ts.insert(r.t);
        rows.push_back(std::move(r));
    }
    if (xs.size() < 2 || ts.size() < 2)
        throw ParseError(origin + ": need at least a 2 x 2 lattice", lineno);
    if (rows.size() != xs.size() * ts.size())
        throw ParseError(origin + ": rows do not cover a full lattice", lineno);

    std::map<double, int> xi, ti;
    for (double v : xs) xi.emplace(v, static_cast<int>(xi.size()));
    for (double v : ts) ti.emplace(v, static_cast<int>(ti.size()));

    SolutionGrid grid;
    grid.x = GridAxis{*xs.begin(), *xs.rbegin(), static_cast<int>(xs.size()) - 1};
    grid.t = GridAxis{*ts.begin(), *ts.rbegin(), static_cast<int>(ts.size()) - 1};
    grid.allocate(n);
    grid.residual.assign(grid.node_count(), std::numeric_limits<double>::quiet_NaN());
    std::vector<char> seen(grid.node_count(), 0);
    for (const Row& r : rows) {
        const std::size_t f = grid.flat(xi.at(r.x), ti.at(r.t));
        if (seen[f])
            throw ParseError(origin + ": duplicate lattice node", 0);
        seen[f] = 1;
        for (int c = 0; c < n; ++c) grid.u[c][f] = r.u[c];
        grid.converged[f] = static_cast<char>(r.converged);
        grid.iterations[f] = r.iterations;
        grid.residual[f] = r.residual;
    }
    return grid;
}

std::string scalar_field_csv(const ScalarFieldGrid& field) {
    const int n = field.spec.dim();
    std::ostringstream os;
    for (int k = 0; k < n; ++k) os << (k ? "," : "") << 'u' << k + 1;
    os << ",value,valid\n";
    for (std::size_t f = 0; f < field.spec.node_count(); ++f) {
        const std::vector<double> p = field.spec.point(field.spec.unflat(f));
        for (double v : p) os << fmt_full(v) << ',';
        os << fmt_full(field.values[f]) << ',' << (field.valid(f) ? 1 : 0) << '\n';
    }
    return os.str();
}

std::string focal_chart_csv(const FocalChart& chart) {
    const int n = chart.spec.dim();
    std::ostringstream os;
    for (int k = 0; k < n; ++k) os << (k ? "," : "") << 'u' << k + 1;
    for (int m = 0; m <= n; ++m) os << ",y" << m;
    os << ",valid\n";
    for (std::size_t f = 0; f < chart.spec.node_count(); ++f) {
        const std::vector<double> p = chart.spec.point(chart.spec.unflat(f));
        for (double v : p) os << fmt_full(v) << ',';
        for (int m = 0; m <= n; ++m) os << fmt_full(chart.y[m][f]) << ',';
        os << (chart.mask[f] ? 1 : 0) << '\n';
    }
    return os.str();
}

std::string focal_chart_mesh(const FocalChart& chart) {
    if (chart.spec.dim() != 2)
        throw Error("mesh export is only defined for two-component charts");
    const GridSpec& spec = chart.spec;
    std::ostringstream os;
    os << "# focal chart " << chart.i << ": vertices are (y0, y1, y2)\n";
    std::vector<int> vid(spec.node_count(), 0);
    int next = 1;
    for (std::size_t f = 0; f < spec.node_count(); ++f) {
        if (!chart.mask[f]) continue;
        vid[f] = next++;
        os << "v " << fmt_full(chart.y[0][f]) << ' ' << fmt_full(chart.y[1][f]) << ' '
           << fmt_full(chart.y[2][f]) << '\n';
    }
    for (int i = 0; i < spec.axes[0].cells; ++i)
        for (int j = 0; j < spec.axes[1].cells; ++j) {
            const int a = vid[spec.flat({i, j})];
            const int b = vid[spec.flat({i + 1, j})];
            const int c = vid[spec.flat({i + 1, j + 1})];
            const int d = vid[spec.flat({i, j + 1})];
            if (!a || !b || !c || !d) continue;
            os << "f " << a << ' ' << b << ' ' << c << '\n';
            os << "f " << a << ' ' << c << ' ' << d << '\n';
        }
    return os.str();
}

std::string gnuplot_script(const std::string& csv_name, const SolutionGrid& grid) {
    std::ostringstream os;
    os << "# surface plot of " << csv_name << "; run: gnuplot -p <this file>\n";
    os << "set datafile separator comma\n";
    os << "set xlabel 'x'\nset ylabel 't'\n";
    os << "set dgrid3d " << grid.t.cells + 1 << ',' << grid.x.cells + 1 << "\n";
    os << "set hidden3d\n";
    os << "splot";
    for (int c = 0; c < grid.n; ++c) {
        if (c) os << ',';
        os << " '" << csv_name << "' using 1:2:" << 3 + c << " with lines title 'u" << c + 1
           << "'";
    }
    os << '\n';
    return os.str();
}

}  // namespace ht
