#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// Drives the installed binary end to end: exit codes, the JSON envelope on
// stdout, diagnostics on stderr, and the artifact files each subcommand writes.

using nlohmann::json;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

RunResult run(const std::string& args) {
    const std::string cmd =
        std::string(HYDROTYPE_BIN) + " " + args + " > cli_stdout.txt 2> cli_stderr.txt";
    const int raw = std::system(cmd.c_str());
    RunResult res;
    res.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    res.out = slurp("cli_stdout.txt");
    res.err = slurp("cli_stderr.txt");
    std::remove("cli_stdout.txt");
    std::remove("cli_stderr.txt");
    return res;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("diagnose emits the full envelope and exits clean on a good system") {
    const RunResult r = run("diagnose lindeg2");
    CHECK(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("command") == "diagnose");
    CHECK(j.at("config").at("name") == "lindeg2");
    CHECK(j.at("tool").at("name") == "hydrotype");
    CHECK(j.at("tool").at("version") == "0.1.0");
    CHECK(j.at("hyperbolicity").at("flag") == true);
    CHECK(j.at("darboux").at("order_le1") == true);
}

TEST_CASE("diagnose on a non-hyperbolic system exits 2 with a witness") {
    write_text("degenerate.sys",
               "n = 2\n"
               "lambda.l1 = u1\n"
               "lambda.l2 = u1\n"
               "domain.u1 = [0, 1]\n"
               "domain.u2 = [0, 1]\n");
    const RunResult r = run("diagnose degenerate.sys");
    std::remove("degenerate.sys");
    CHECK(r.code == 2);
    const json j = json::parse(r.out);
    CHECK(j.at("hyperbolicity").at("flag") == false);
    CHECK(j.at("hyperbolicity").contains("witness"));
}

TEST_CASE("missing required options and unknown systems are usage errors") {
    const RunResult missing = run("laplace lindeg2");
    CHECK(missing.code == 1);
    CHECK(!missing.err.empty());

    const RunResult unknown = run("diagnose nosuchsystem");
    CHECK(unknown.code == 1);
    CHECK(unknown.err.find("nosuchsystem") != std::string::npos);
}

TEST_CASE("laplace reports a sequence tree, or a single step with --j") {
    const RunResult tree = run("laplace shifted3 --i 1 --depth 2");
    CHECK(tree.code == 0);
    const json jt = json::parse(tree.out);
    CHECK(jt.at("depth") == 2);
    CHECK(jt.at("sequence").at("outcome") == "not_terminated");

    const RunResult step = run("laplace shifted3 --i 1 --j 2");
    CHECK(step.code == 0);
    const json js = json::parse(step.out);
    CHECK(js.at("step").at("i") == 1);
    CHECK(js.at("step").at("j") == 2);
    CHECK(js.at("step").at("cross_residual").get<double>() < 1e-10);
}

TEST_CASE("laplace on a vanishing coefficient is a gate failure") {
    const RunResult r = run("laplace constant2 --i 1 --j 2");
    CHECK(r.code == 2);
    CHECK(r.err.find("identically zero") != std::string::npos);
}

TEST_CASE("solve writes artifacts and verify accepts them back") {
    std::filesystem::remove_all("cli_solve");
    const RunResult r = run(
        "solve order0_decoupled --phi u1 --phi u1 --grid 0.4,0.04,20,16 --origin 0,0"
        " --out cli_solve");
    CHECK(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("result").at("route") == "tsarev-symbolic");
    CHECK(j.at("result").at("verify").at("max_residual").get<double>() <= 1e-5);
    CHECK(std::filesystem::exists("cli_solve/solution.csv"));
    CHECK(std::filesystem::exists("cli_solve/plot.gp"));

    const RunResult v = run("verify order0_decoupled --solution cli_solve/solution.csv");
    CHECK(v.code == 0);
    const json jv = json::parse(v.out);
    // the CSV must round-trip the residual to the last digit
    CHECK(jv.at("report").at("max_residual") == j.at("result").at("verify").at("max_residual"));
    std::filesystem::remove_all("cli_solve");
}

TEST_CASE("a grid too coarse for the residual gate exits 2") {
    std::filesystem::remove_all("cli_coarse");
    const RunResult r = run(
        "solve order0_decoupled --phi u1 --phi u1 --grid 1,0.2,12,6 --out cli_coarse");
    CHECK(r.code == 2);
    const json j = json::parse(r.out);
    CHECK(j.at("result").at("verify").at("max_residual").get<double>() > 1e-5);
    std::filesystem::remove_all("cli_coarse");
}

TEST_CASE("solve refuses a non-decoupling system unless forced") {
    std::filesystem::remove_all("cli_force");
    const RunResult r = run(
        "solve shifted3 --phi u1 --phi u1 --phi u1 --grid 0.2,0.05,8,6 --out cli_force");
    CHECK(r.code == 2);
    CHECK(r.err.find("force") != std::string::npos);
    std::filesystem::remove_all("cli_force");
}

TEST_CASE("congruence writes pair fields, charts, and a mesh for n = 2") {
    std::filesystem::remove_all("cli_cong");
    const RunResult r = run("congruence lindeg2 --cells 8 --out cli_cong");
    CHECK(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("charts").size() == 2);
    for (const json& c : j.at("charts"))
        CHECK(c.at("incidence_residual").get<double>() <= 1e-8);
    // lindeg2 has one vanishing coefficient, so both invariance directions degrade
    CHECK(j.at("invariance").at("degenerate").size() == 2);
    CHECK(std::filesystem::exists("cli_cong/pair1_N.csv"));
    CHECK(std::filesystem::exists("cli_cong/chart2.csv"));
    const std::string mesh = slurp("cli_cong/chart1.mesh");
    CHECK(mesh.rfind("# focal chart", 0) == 0);
    CHECK(mesh.find("\nv ") != std::string::npos);
    CHECK(mesh.find("\nf ") != std::string::npos);
    std::filesystem::remove_all("cli_cong");
}

TEST_CASE("identical invocations are byte-identical") {
    const RunResult a = run("diagnose lindeg2");
    const RunResult b = run("diagnose lindeg2");
    CHECK(a.out == b.out);

    std::filesystem::remove_all("cli_det_a");
    std::filesystem::remove_all("cli_det_b");
    const RunResult ca = run("congruence lindeg2 --cells 6 --out cli_det_a");
    const RunResult cb = run("congruence lindeg2 --cells 6 --out cli_det_b");
    CHECK(ca.code == 0);
    CHECK(ca.out == cb.out);
    CHECK(slurp("cli_det_a/chart1.csv") == slurp("cli_det_b/chart1.csv"));
    CHECK(slurp("cli_det_a/pair2_M.csv") == slurp("cli_det_b/pair2_M.csv"));
    std::filesystem::remove_all("cli_det_a");
    std::filesystem::remove_all("cli_det_b");
}

TEST_CASE("--version prints the release and exits clean") {
    const RunResult r = run("--version");
    CHECK(r.code == 0);
    CHECK(r.out.find("0.1.0") != std::string::npos);
}
