#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hydrotype/io.hpp"
#include "hydrotype/system.hpp"
#include "support/oracle.hpp"

using namespace ht;

namespace {

CoeffTable table_of(const DiagonalSystem& sys) {
    return coefficient_table(sys, sample_plan(sys));
}

}  // namespace

TEST_CASE("sample plans are seeded and reproducible") {
    DiagonalSystem sys = builtin_system("lindeg2");
    SamplePlan p1 = sample_plan(sys);
    SamplePlan p2 = sample_plan(sys);
    REQUIRE(p1.points.size() == p2.points.size());
    for (std::size_t k = 0; k < p1.points.size(); ++k) CHECK(p1.points[k] == p2.points[k]);
    CHECK(p1.hyperbolic_ok);
    CHECK(p1.rejected == 0);
    // 200 strata plus 4 corners.
    CHECK(p1.attempted == 204);
    CHECK(p1.points.size() == 204);

    sys.seed = 7;
    SamplePlan p3 = sample_plan(sys);
    CHECK(p3.points[0] != p1.points[0]);
}

TEST_CASE("strict hyperbolicity gate rejects coinciding speeds") {
    DiagonalSystem sys;
    sys.n = 2;
    sys.lambda = {parse_expr("u2", 2), parse_expr("u2", 2)};
    sys.domain = {{0.0, 1.0}, {0.0, 1.0}};
    SamplePlan plan = sample_plan(sys);
    CHECK_FALSE(plan.hyperbolic_ok);
    CHECK(plan.rejected > 0);
    CHECK(!plan.witness.empty());
    CHECK_THROWS_AS(coefficient_table(sys, plan), NotStrictlyHyperbolic);

    // The report still carries linear degeneracy flags: d_1 u2 = 0, d_2 u2 = 1.
    DiagnosticsReport rep = full_report(sys);
    CHECK_FALSE(rep.hyperbolic.flag);
    REQUIRE(rep.linearly_degenerate.size() == 2);
    CHECK(rep.linearly_degenerate[0]);
    CHECK_FALSE(rep.linearly_degenerate[1]);
    CHECK_FALSE(rep.semihamiltonian.has_value());
    CHECK(rep.order0.empty());
}

TEST_CASE("coefficient closed form for crossed speeds") {
    DiagonalSystem sys = builtin_system("lindeg2");
    CoeffTable t = table_of(sys);
    // a_12 = 1/(u1 - u2), so a_12(2, 1) = 1.
    CHECK(eval(t.A(1, 2), {2.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(eval(t.A(2, 1), {2.0, 1.0}) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_FALSE(t.Azero(1, 2));
    // b_12 collapses numerically: d_1 a_12 / a_12 cancels against a_21.
    for (const auto& p : sample_plan(sys).points)
        CHECK(std::abs(eval(t.B(1, 2), p)) < 1e-10);
}

TEST_CASE("defining identity of the a-table holds at samples") {
    for (const std::string& name :
         {"lindeg2", "shifted3", "ratio2", "nonsemiham3", "order1_mixed"}) {
        DiagonalSystem sys = builtin_system(name);
        SamplePlan plan = sample_plan(sys);
        CoeffTable t = coefficient_table(sys, plan);
        for (int i = 1; i <= sys.n; ++i)
            for (int j = 1; j <= sys.n; ++j) {
                if (i == j) continue;
                for (const auto& p : plan.points) {
                    double lhs = eval(t.A(i, j), p) *
                                 (eval(sys.lambda[j - 1], p) - eval(sys.lambda[i - 1], p));
                    double rhs = eval(diff(sys.lambda[i - 1], j), p);
                    double scale = 1.0 + std::max(std::abs(lhs), std::abs(rhs));
                    CHECK(std::abs(lhs - rhs) <= 1e-12 * scale);
                }
            }
    }
}

TEST_CASE("b-table matches its lambda-only form") {
    // b_ij can also be written d_i d_j lambda^i / d_j lambda^i
    //                          + d_i lambda^i / (lambda^j - lambda^i).
    for (const std::string& name : {"lindeg2", "shifted3", "order1_mixed"}) {
        DiagonalSystem sys = builtin_system(name);
        SamplePlan plan = sample_plan(sys);
        CoeffTable t = coefficient_table(sys, plan);
        for (int i = 1; i <= sys.n; ++i)
            for (int j = 1; j <= sys.n; ++j) {
                if (i == j || t.Azero(i, j)) continue;
                Expr lam_j = diff(sys.lambda[i - 1], j);
                Expr alt = diff(lam_j, i) / lam_j +
                           diff(sys.lambda[i - 1], i) /
                               (sys.lambda[j - 1] - sys.lambda[i - 1]);
                for (const auto& p : plan.points) {
                    double lhs = eval(t.B(i, j), p);
                    double rhs = eval(alt, p);
                    CHECK(std::abs(lhs - rhs) <= 1e-9 * (1.0 + std::abs(rhs)));
                }
            }
    }
}

TEST_CASE("a-table derivatives agree with finite differences") {
    DiagonalSystem sys = builtin_system("nonsemiham3");
    SamplePlan plan = sample_plan(sys);
    CoeffTable t = coefficient_table(sys, plan);
    int probes = 0;
    for (int i = 1; i <= 3 && probes < 60; ++i)
        for (int j = 1; j <= 3; ++j) {
            if (i == j || t.Azero(i, j)) continue;
            for (int k = 1; k <= 3; ++k) {
                const auto& p = plan.points[static_cast<std::size_t>(7 * (i + j + k)) % plan.points.size()];
                double sym = eval(t.dA(i, j, k), p);
                double num = testsupport::central_diff_expr(t.A(i, j), p, k);
                CHECK(std::abs(sym - num) <= 1e-6 * (1.0 + std::abs(num)));
                ++probes;
            }
        }
    CHECK(probes >= 12);
}

TEST_CASE("semihamiltonian verdicts") {
    {
        DiagonalSystem sys = builtin_system("shifted3");
        SamplePlan plan = sample_plan(sys);
        CoeffTable t = coefficient_table(sys, plan);
        CheckResult r = check_semihamiltonian(sys, t, plan);
        CHECK(r.flag);
        CHECK(r.residual <= 1e-10);
    }
    {
        DiagonalSystem sys = builtin_system("nonsemiham3");
        SamplePlan plan = sample_plan(sys);
        CoeffTable t = coefficient_table(sys, plan);
        CheckResult r = check_semihamiltonian(sys, t, plan);
        CHECK_FALSE(r.flag);
        CHECK(r.residual > 1e-3);
        CHECK(r.witness.size() == 3);
    }
    {
        DiagonalSystem sys = builtin_system("lindeg2");
        SamplePlan plan = sample_plan(sys);
        CoeffTable t = coefficient_table(sys, plan);
        CheckResult r = check_semihamiltonian(sys, t, plan);
        CHECK(r.flag);  // vacuous for n = 2
        CHECK(r.note.find("vacuous") != std::string::npos);
    }
}

TEST_CASE("commuting-flow closure holds for the shifted family") {
    DiagonalSystem sys = builtin_system("shifted3");
    SamplePlan plan = sample_plan(sys);
    CoeffTable t = coefficient_table(sys, plan);
    CheckResult r = check_commuting_compatibility(sys, t, plan);
    CHECK(r.flag);
    CHECK(r.residual <= 1e-9);
    // Spot check the right-hand side arithmetic at constants:
    // a_12 a_23 + a_13 a_32 - a_12 a_13 = 1*1 + (1/2)(-1) - 1*(1/2) = 0.
    std::vector<double> p{0.1, -0.2, 0.3};
    double rhs = eval(t.A(1, 2), p) * eval(t.A(2, 3), p) +
                 eval(t.A(1, 3), p) * eval(t.A(3, 2), p) -
                 eval(t.A(1, 2), p) * eval(t.A(1, 3), p);
    CHECK(std::abs(rhs) < 1e-12);
}

TEST_CASE("order-0 decoupling detection") {
    {
        DiagonalSystem sys = builtin_system("order0_decoupled");
        SamplePlan plan = sample_plan(sys);
        for (int i = 1; i <= 2; ++i) {
            Order0Result r = check_darboux_order0(sys, plan, i);
            CHECK(r.flag);
            CHECK_FALSE(r.numeric_only);
        }
    }
    {
        DiagonalSystem sys = builtin_system("lindeg2");
        SamplePlan plan = sample_plan(sys);
        Order0Result r = check_darboux_order0(sys, plan, 1);
        CHECK_FALSE(r.flag);
        CHECK(r.residual > 0.5);  // d_2 lambda^1 = 1
    }
    {
        // Numeric-only zero: a coefficient below tol that is not syntactically 0.
        DiagonalSystem sys;
        sys.n = 2;
        sys.lambda = {parse_expr("u1+1e-13*sin(u2)", 2), parse_expr("u1+5", 2)};
        sys.domain = {{0.0, 1.0}, {0.0, 1.0}};
        SamplePlan plan = sample_plan(sys);
        Order0Result r = check_darboux_order0(sys, plan, 1);
        CHECK(r.flag);
        CHECK(r.numeric_only);
    }
}

TEST_CASE("order-1 decoupling criterion") {
    {
        DiagonalSystem sys = builtin_system("lindeg2");
        SamplePlan plan = sample_plan(sys);
        CoeffTable t = coefficient_table(sys, plan);
        Order1Result r = check_darboux_order1(sys, t, plan, 1);
        CHECK(r.applicable);
        CHECK(r.flag);
        CHECK(r.witness_j == 2);
        CHECK(r.skipped.empty());
        CHECK(r.residual <= 1e-10);
    }
    {
        DiagonalSystem sys = builtin_system("ratio2");
        SamplePlan plan = sample_plan(sys);
        CoeffTable t = coefficient_table(sys, plan);
        Order1Result r1 = check_darboux_order1(sys, t, plan, 1);
        CHECK(r1.applicable);
        CHECK(r1.flag);
        Order1Result r2 = check_darboux_order1(sys, t, plan, 2);
        CHECK_FALSE(r2.applicable);  // lambda^2 is constant: order 0 already
    }
    {
        DiagonalSystem sys = builtin_system("shifted3");
        SamplePlan plan = sample_plan(sys);
        CoeffTable t = coefficient_table(sys, plan);
        for (int i = 1; i <= 3; ++i) {
            Order1Result r = check_darboux_order1(sys, t, plan, i);
            CHECK(r.applicable);
            CHECK_FALSE(r.flag);  // b is a nonzero constant; the decay law fails
        }
    }
    {
        DiagonalSystem sys = builtin_system("order1_mixed");
        SamplePlan plan = sample_plan(sys);
        CoeffTable t = coefficient_table(sys, plan);
        Order1Result r1 = check_darboux_order1(sys, t, plan, 1);
        CHECK(r1.applicable);
        CHECK(r1.flag);
        CHECK(r1.witness_j == 2);
        // b_12 = 1/(u2 - u1), genuinely nonzero.
        CHECK(std::abs(eval(t.B(1, 2), {2.5, 0.5})) > 0.4);
        Order0Result r2 = check_darboux_order0(sys, plan, 2);
        CHECK(r2.flag);
    }
}

TEST_CASE("full report composes the verdicts") {
    DiagnosticsReport rep = full_report(builtin_system("order1_mixed"));
    CHECK(rep.hyperbolic.flag);
    REQUIRE(rep.darboux_order_le1.has_value());
    CHECK(*rep.darboux_order_le1);

    DiagnosticsReport bad = full_report(builtin_system("nonsemiham3"));
    CHECK(bad.hyperbolic.flag);
    REQUIRE(bad.semihamiltonian.has_value());
    CHECK_FALSE(bad.semihamiltonian->flag);

    DiagnosticsReport lind = full_report(builtin_system("lindeg2"));
    CHECK(lind.linearly_degenerate == std::vector<bool>{true, true});
    CHECK(*lind.darboux_order_le1);
}

TEST_CASE("system file loader") {
    DiagonalSystem sys = parse_system_text(
        "# demo\n"
        "n = 2\n"
        "lambda.l1 = u2\n"
        "lambda.l2 = u1\n"
        "domain.u1 = [0, 1]\n"
        "domain.u2 = [2, 3]\n"
        "tol = 1e-8\n"
        "seed = 11\n",
        "demo");
    CHECK(sys.n == 2);
    CHECK(print_expr(sys.lambda[0]) == "u2");
    CHECK(sys.domain[1].lo == 2.0);
    CHECK(sys.tol == 1e-8);
    CHECK(sys.seed == 11);

    auto bad = [](const std::string& text) {
        CHECK_THROWS_AS(parse_system_text(text, "bad"), ParseError);
    };
    bad("n = 2\nlambda.l1 = u1\n");                     // missing keys
    bad("n = 2\nlambda.l1 = u3\nlambda.l2 = u1\n"
        "domain.u1 = [0,1]\ndomain.u2 = [0,1]\n");      // u3 out of range
    bad("n = 2\nlambda.l1 = u1\nlambda.l2 = u2\n"
        "domain.u1 = [1,0]\ndomain.u2 = [0,1]\n");      // inverted bounds
    bad("n = 2\nlambda.l1 = u1\nlambda.l2 = u2\n"
        "domain.u1 = [0,1]\ndomain.u2 = [0,1]\nfoo = 1\n");  // unknown key
    bad("n = 1\n");                                     // n too small
}

TEST_CASE("shipped data files match the built-ins") {
    for (const std::string& name : builtin_names()) {
        DiagonalSystem a = builtin_system(name);
        DiagonalSystem b = load_system_file(std::string(DATA_DIR) + "/" + name + ".sys");
        CHECK(a.n == b.n);
        for (int i = 0; i < a.n; ++i) {
            CHECK(print_expr(a.lambda[i]) == print_expr(b.lambda[i]));
            CHECK(a.domain[i].lo == b.domain[i].lo);
            CHECK(a.domain[i].hi == b.domain[i].hi);
        }
    }
}

TEST_CASE("diagnostics JSON is byte-deterministic") {
    DiagonalSystem sys = builtin_system("shifted3");
    std::string s1 = diagnostics_json(full_report(sys)).dump(2);
    std::string s2 = diagnostics_json(full_report(sys)).dump(2);
    CHECK(s1 == s2);
    CHECK(s1.find("\"semihamiltonian\"") != std::string::npos);
    CHECK(s1.find("\"order_le1\"") != std::string::npos);
}
