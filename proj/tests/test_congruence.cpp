#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "hydrotype/congruence.hpp"
#include "hydrotype/io.hpp"
#include "hydrotype/system.hpp"

using namespace ht;

namespace {

struct Prepared {
    DiagonalSystem sys;
    SamplePlan plan;
    CoeffTable table;
};

Prepared prepare(const std::string& name) {
    Prepared p;
    p.sys = builtin_system(name);
    p.plan = sample_plan(p.sys);
    p.table = coefficient_table(p.sys, p.plan);
    return p;
}

bool message_contains(const Error& e, const std::string& needle) {
    return std::string(e.what()).find(needle) != std::string::npos;
}

GridSpec make_spec(std::vector<GridAxis> axes) {
    GridSpec spec;
    spec.axes = std::move(axes);
    return spec;
}

}  // namespace

TEST_CASE("a closed-form pair is validated and sampled onto the lattice") {
    Prepared p = prepare("lindeg2");
    const Expr N = parse_expr("u1 + u2", 2);
    const Expr M = parse_expr("u1 * u2", 2);
    const GridSpec spec = make_spec({GridAxis{1.5, 3.0, 10}, GridAxis{0.2, 1.2, 10}});

    ConservationPair pair = pair_from_exprs(p.sys, p.table, p.plan, N, M, spec);
    CHECK(pair.closed_form());
    CHECK(pair.mixed_defect <= 1e-12);
    REQUIRE(pair.g.size() == 2);

    const std::vector<int> idx{3, 7};
    const std::size_t f = spec.flat(idx);
    const std::vector<double> pt = spec.point(idx);
    CHECK(std::abs(pair.Ng.values[f] - (pt[0] + pt[1])) <= 1e-12);
    CHECK(std::abs(pair.Mg.values[f] - pt[0] * pt[1]) <= 1e-12);
    CHECK(std::abs(pair.g[0].values[f] - 1.0) <= 1e-12);
    CHECK(std::abs(pair.g[1].values[f] - 1.0) <= 1e-12);
}

TEST_CASE("a pair that breaks the flux identity is rejected with its residual") {
    Prepared p = prepare("lindeg2");
    const Expr N = parse_expr("u1 + u2", 2);
    const Expr M = parse_expr("u1 + u2", 2);
    const GridSpec spec = make_spec({GridAxis{1.5, 3.0, 4}, GridAxis{0.2, 1.2, 4}});
    try {
        pair_from_exprs(p.sys, p.table, p.plan, N, M, spec);
        FAIL("expected a rejection");
    } catch (const Error& e) {
        CHECK(message_contains(e, "not a conservation law"));
    }
}

TEST_CASE("constant axis data solves to a flat density with zero flux") {
    Prepared p = prepare("constant2");
    AxisData axis;
    axis.f = {parse_expr("3", 1), parse_expr("7", 1)};
    axis.base = {0.0, 0.0};
    const GridSpec spec = make_spec({GridAxis{-1.0, 1.0, 8}, GridAxis{-1.0, 1.0, 8}});

    ConservationPair pair = solve_density(p.sys, p.table, axis, spec);
    CHECK_FALSE(pair.closed_form());
    for (std::size_t f = 0; f < spec.node_count(); ++f) {
        CHECK(std::abs(pair.Ng.values[f] - 3.0) <= 1e-14);
        CHECK(std::abs(pair.Mg.values[f]) <= 1e-14);
        CHECK(std::abs(pair.g[0].values[f]) <= 1e-14);
        CHECK(std::abs(pair.g[1].values[f]) <= 1e-14);
    }
    CHECK(pair.mixed_defect <= 1e-14);
}

TEST_CASE("decoupled speeds integrate to the split closed form") {
    Prepared p = prepare("order0_decoupled");
    AxisData axis;
    axis.f = {parse_expr("u1^2 / 2", 1), parse_expr("u1^2 / 2", 1)};
    axis.base = {2.0, 6.0};
    const GridSpec spec = make_spec({GridAxis{1.0, 4.5, 14}, GridAxis{5.0, 8.5, 14}});

    ConservationPair pair = solve_density(p.sys, p.table, axis, spec);
    double worstN = 0.0, worstM = 0.0;
    for (std::size_t f = 0; f < spec.node_count(); ++f) {
        const std::vector<double> q = spec.point(spec.unflat(f));
        const double wantN = q[0] * q[0] / 2 + (q[1] * q[1] - 36.0) / 2;
        const double wantM = (q[0] * q[0] * q[0] - 8.0) / 3 + (q[1] * q[1] * q[1] - 216.0) / 3;
        worstN = std::max(worstN, std::abs(pair.Ng.values[f] - wantN));
        worstM = std::max(worstM, std::abs(pair.Mg.values[f] - wantM));
    }
    CHECK(worstN <= 1e-9);
    CHECK(worstM <= 1e-9);
    CHECK(pair.mixed_defect <= 1e-8);
}

TEST_CASE("the coupled degenerate system closes to the product density") {
    Prepared p = prepare("lindeg2");
    AxisData axis;
    axis.f = {parse_expr("u1", 1), parse_expr("u1", 1)};
    axis.base = {2.0, 1.0};
    // step sizes chosen so the base lands exactly on a node
    const GridSpec spec = make_spec({GridAxis{1.5, 3.0, 15}, GridAxis{0.2, 1.2, 20}});

    ConservationPair pair = solve_density(p.sys, p.table, axis, spec);
    REQUIRE(pair.Ng.base.size() == 2);
    CHECK(std::abs(pair.Ng.base[0] - 2.0) <= 1e-12);
    CHECK(std::abs(pair.Ng.base[1] - 1.0) <= 1e-12);

    double worstN = 0.0, worstM = 0.0, worstG = 0.0;
    for (std::size_t f = 0; f < spec.node_count(); ++f) {
        const std::vector<double> q = spec.point(spec.unflat(f));
        worstN = std::max(worstN, std::abs(pair.Ng.values[f] - (q[0] + q[1] - 1.0)));
        worstM = std::max(worstM, std::abs(pair.Mg.values[f] - (q[0] * q[1] - 2.0)));
        worstG = std::max(worstG, std::abs(pair.g[0].values[f] - 1.0));
        worstG = std::max(worstG, std::abs(pair.g[1].values[f] - 1.0));
    }
    CHECK(worstN <= 1e-9);
    CHECK(worstM <= 1e-9);
    CHECK(worstG <= 1e-12);
    CHECK(pair.mixed_defect <= 1e-6);
}

TEST_CASE("coupled axis data reproduces an independent fixpoint oracle") {
    // expected values from a Picard iteration of the equivalent integral
    // equations on an 800-cell lattice (trapezoid quadrature, change < 1e-14);
    // mesh halving puts that oracle within ~1e-6 of the limit
    Prepared p = prepare("lindeg2");
    AxisData axis;
    axis.f = {parse_expr("u1", 1), parse_expr("0", 1)};
    axis.base = {2.25, 0.7};
    const GridSpec spec = make_spec({GridAxis{1.5, 3.0, 10}, GridAxis{0.2, 1.2, 10}});

    ConservationPair pair = solve_density(p.sys, p.table, axis, spec);
    struct Want {
        int i, j;
        double g1, g2, N, M;
    };
    const Want want[] = {
        {0, 0, 0.393490246, -0.355029403, 1.788461959, -0.092307062},
        {2, 4, 0.885416532, -0.343750283, 1.837500061, -0.247499891},
        {5, 5, 1.0, 0.0, 2.25, 0.0},
        {7, 9, 1.218787141, 0.263971847, 2.632758726, 0.421034752},
        {10, 10, 1.162036939, 0.532408033, 3.208333532, 1.150000595},
    };
    for (const Want& w : want) {
        const std::size_t f = spec.flat({w.i, w.j});
        CHECK(std::abs(pair.g[0].values[f] - w.g1) <= 5e-4);
        CHECK(std::abs(pair.g[1].values[f] - w.g2) <= 5e-4);
        CHECK(std::abs(pair.Ng.values[f] - w.N) <= 5e-4);
        CHECK(std::abs(pair.Mg.values[f] - w.M) <= 5e-4);
    }
    // the defect audit is truncation-limited near the u1 = u2 corner
    CHECK(pair.mixed_defect <= 0.02);
}

TEST_CASE("the focal chart of the constant system collapses to explicit lines") {
    Prepared p = prepare("constant2");
    const GridSpec spec = make_spec({GridAxis{-1.0, 1.0, 10}, GridAxis{-1.0, 1.0, 10}});
    std::vector<ConservationPair> pairs;
    pairs.push_back(pair_from_exprs(p.sys, p.table, p.plan, parse_expr("u1", 2),
                                    parse_expr("0", 2), spec));
    pairs.push_back(pair_from_exprs(p.sys, p.table, p.plan, parse_expr("u2", 2),
                                    parse_expr("u2", 2), spec));

    FocalChart slow = focal_chart(p.sys, pairs, 1);
    CHECK(slow.incidence_residual <= 1e-12);
    CHECK(slow.pencil_variance <= 1e-12);
    for (std::size_t f = 0; f < spec.node_count(); ++f) {
        REQUIRE(slow.mask[f] == 1);
        const std::vector<double> q = spec.point(spec.unflat(f));
        CHECK(std::abs(slow.y[0][f]) <= 1e-14);
        CHECK(std::abs(slow.y[1][f]) <= 1e-14);
        CHECK(std::abs(slow.y[2][f] + q[1]) <= 1e-14);
    }

    FocalChart fast = focal_chart(p.sys, pairs, 2);
    CHECK(fast.pencil_variance <= 1e-12);
    for (std::size_t f = 0; f < spec.node_count(); ++f) {
        const std::vector<double> q = spec.point(spec.unflat(f));
        CHECK(std::abs(fast.y[0][f] - 1.0) <= 1e-14);
        CHECK(std::abs(fast.y[1][f] - q[0]) <= 1e-14);
        CHECK(std::abs(fast.y[2][f]) <= 1e-14);
    }
}

TEST_CASE("dependent densities are refused") {
    Prepared p = prepare("constant2");
    const GridSpec spec = make_spec({GridAxis{-1.0, 1.0, 6}, GridAxis{-1.0, 1.0, 6}});
    std::vector<ConservationPair> pairs;
    pairs.push_back(pair_from_exprs(p.sys, p.table, p.plan, parse_expr("u1", 2),
                                    parse_expr("0", 2), spec));
    pairs.push_back(pair_from_exprs(p.sys, p.table, p.plan, parse_expr("2 * u1", 2),
                                    parse_expr("0", 2), spec));
    try {
        focal_chart(p.sys, pairs, 1);
        FAIL("expected a dependence rejection");
    } catch (const DependentDensities& e) {
        CHECK(message_contains(e, "singular"));
    }
}

TEST_CASE("focal speeds stay constant along transverse lattice lines") {
    Prepared p = prepare("order0_decoupled");
    const GridSpec spec = make_spec({GridAxis{1.0, 4.5, 10}, GridAxis{5.0, 8.5, 10}});
    std::vector<ConservationPair> pairs;
    pairs.push_back(pair_from_exprs(p.sys, p.table, p.plan, parse_expr("u1^2 / 2", 2),
                                    parse_expr("u1^3 / 3", 2), spec));
    pairs.push_back(pair_from_exprs(p.sys, p.table, p.plan, parse_expr("u2", 2),
                                    parse_expr("u2^2 / 2", 2), spec));

    FocalChart chart = focal_chart(p.sys, pairs, 1);
    CHECK(chart.pencil_variance <= 1e-12);
    CHECK(chart.incidence_residual <= 1e-12);

    // y^1 = u1 * u1^2/2 - u1^3/3 = u1^3/6 at any node
    const std::vector<int> idx{4, 7};
    const double u1 = spec.point(idx)[0];
    CHECK(std::abs(chart.y[1][spec.flat(idx)] - u1 * u1 * u1 / 6) <= 1e-12);
}

TEST_CASE("transforming against an identically zero coefficient is refused") {
    Prepared p = prepare("constant2");
    const GridSpec spec = make_spec({GridAxis{-1.0, 1.0, 6}, GridAxis{-1.0, 1.0, 6}});
    std::vector<ConservationPair> pairs;
    pairs.push_back(pair_from_exprs(p.sys, p.table, p.plan, parse_expr("u1", 2),
                                    parse_expr("0", 2), spec));
    try {
        laplace_transform_congruence(p.sys, p.table, pairs, 1, 2);
        FAIL("expected a prerequisite rejection");
    } catch (const PrereqViolated& e) {
        CHECK(message_contains(e, "identically zero"));
    }
}

TEST_CASE("the grid-path transform of the solved pair matches closed forms") {
    Prepared p = prepare("lindeg2");
    AxisData axis;
    axis.f = {parse_expr("u1", 1), parse_expr("u1", 1)};
    axis.base = {2.0, 1.0};
    const GridSpec spec = make_spec({GridAxis{1.5, 3.0, 15}, GridAxis{0.2, 1.2, 20}});
    std::vector<ConservationPair> pairs{solve_density(p.sys, p.table, axis, spec)};

    std::vector<ConservationPair> barred = laplace_transform_congruence(p.sys, p.table, pairs, 1, 2);
    REQUIRE(barred.size() == 1);
    const ConservationPair& bar = barred[0];
    CHECK_FALSE(bar.closed_form());

    // barN = 2 u2 - 1 and barM = u2^2 - 2 for the base (2, 1)
    double worstN = 0.0, worstM = 0.0, worstFlux = 0.0;
    const double h2 = spec.axes[1].step();
    for (std::size_t f = 0; f < spec.node_count(); ++f) {
        const std::vector<int> idx = spec.unflat(f);
        const std::vector<double> q = spec.point(idx);
        REQUIRE(bar.Ng.valid(f));
        worstN = std::max(worstN, std::abs(bar.Ng.values[f] - (2 * q[1] - 1.0)));
        worstM = std::max(worstM, std::abs(bar.Mg.values[f] - (q[1] * q[1] - 2.0)));
        // d_2 barM = lambda^1 d_2 barN away from the boundary ring
        if (idx[1] >= 1 && idx[1] < spec.axes[1].cells) {
            std::vector<int> lo = idx, hi = idx;
            --lo[1];
            ++hi[1];
            const double dM =
                (bar.Mg.values[spec.flat(hi)] - bar.Mg.values[spec.flat(lo)]) / (2 * h2);
            const double dN =
                (bar.Ng.values[spec.flat(hi)] - bar.Ng.values[spec.flat(lo)]) / (2 * h2);
            worstFlux = std::max(worstFlux, std::abs(dM - q[1] * dN));
        }
    }
    CHECK(worstN <= 1e-9);
    CHECK(worstM <= 1e-9);
    CHECK(worstFlux <= 1e-9);

    // derivative grids come from centered differences, boundary masked
    const std::vector<int> inner{7, 10};
    const std::size_t fi = spec.flat(inner);
    REQUIRE(bar.g[1].valid(fi));
    CHECK(std::abs(bar.g[1].values[fi] - 2.0) <= 1e-9);
    CHECK(std::abs(bar.g[0].values[fi]) <= 1e-9);
    const std::vector<int> edge{7, 0};
    CHECK_FALSE(bar.g[1].valid(spec.flat(edge)));
}

TEST_CASE("the shifted triple's speed audit matches the offset ladder") {
    Prepared p = prepare("shifted3");
    const GridSpec spec = make_spec(
        {GridAxis{-0.5, 0.5, 12}, GridAxis{-0.5, 0.5, 12}, GridAxis{-0.5, 0.5, 12}});
    const Expr N1 = parse_expr("u1 + u2 + u3", 3);
    const Expr M1 = parse_expr("(u1 + u2 + u3)^2 / 2 + u2 + 2 * u3", 3);
    const Expr N2 = parse_expr("(u1 + u2 + u3)^2 / 2 - u2 - 2 * u3", 3);
    const Expr M2 = parse_expr("(u1 + u2 + u3)^3 / 3 - u2 - 4 * u3", 3);
    std::vector<ConservationPair> pairs;
    pairs.push_back(pair_from_exprs(p.sys, p.table, p.plan, N1, M1, spec));
    pairs.push_back(pair_from_exprs(p.sys, p.table, p.plan, N2, M2, spec));
    CHECK(pairs[0].mixed_defect <= 1e-12);
    CHECK(pairs[1].mixed_defect <= 1e-12);

    SpeedInvarianceReport rep = verify_speed_invariance(p.sys, p.table, p.plan, pairs, 1, 2);
    CHECK(rep.degenerate.empty());
    CHECK(rep.relation_residual <= 1e-6);
    CHECK(rep.cross_residual <= 1e-6);
    CHECK(rep.checked >= 1000);

    // transformed speeds are s - 1, s, s + 1 with s = u1 + u2 + u3
    const double offset[3] = {-1.0, 0.0, 1.0};
    for (int k = 0; k < 3; ++k) {
        std::size_t seen = 0;
        double worst = 0.0;
        for (std::size_t f = 0; f < spec.node_count(); ++f) {
            if (!rep.speeds[k].valid(f)) continue;
            const std::vector<double> q = spec.point(spec.unflat(f));
            const double s = q[0] + q[1] + q[2];
            worst = std::max(worst, std::abs(rep.speeds[k].values[f] - (s + offset[k])));
            ++seen;
        }
        CHECK(seen >= 500);
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("speed extraction does not depend on the density basis") {
    Prepared p = prepare("shifted3");
    const GridSpec spec = make_spec(
        {GridAxis{-0.5, 0.5, 12}, GridAxis{-0.5, 0.5, 12}, GridAxis{-0.5, 0.5, 12}});
    const Expr N1 = parse_expr("u1 + u2 + u3", 3);
    const Expr M1 = parse_expr("(u1 + u2 + u3)^2 / 2 + u2 + 2 * u3", 3);
    const Expr N2 = parse_expr("(u1 + u2 + u3)^2 / 2 - u2 - 2 * u3", 3);
    const Expr M2 = parse_expr("(u1 + u2 + u3)^3 / 3 - u2 - 4 * u3", 3);
    std::vector<ConservationPair> basis1{pair_from_exprs(p.sys, p.table, p.plan, N1, M1, spec)};
    std::vector<ConservationPair> basis2{pair_from_exprs(p.sys, p.table, p.plan, N2, M2, spec)};

    SpeedInvarianceReport r1 = verify_speed_invariance(p.sys, p.table, p.plan, basis1, 1, 2);
    SpeedInvarianceReport r2 = verify_speed_invariance(p.sys, p.table, p.plan, basis2, 1, 2);
    for (int k = 0; k < 3; ++k) {
        std::size_t shared = 0;
        double worst = 0.0;
        for (std::size_t f = 0; f < spec.node_count(); ++f) {
            if (!r1.speeds[k].valid(f) || !r2.speeds[k].valid(f)) continue;
            worst = std::max(worst,
                             std::abs(r1.speeds[k].values[f] - r2.speeds[k].values[f]));
            ++shared;
        }
        CHECK(shared >= 50);
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("degenerate relation directions are reported, not crashed") {
    Prepared p = prepare("lindeg2");
    AxisData axis;
    axis.f = {parse_expr("u1", 1), parse_expr("u1", 1)};
    axis.base = {2.0, 1.0};
    const GridSpec spec = make_spec({GridAxis{1.5, 3.0, 15}, GridAxis{0.2, 1.2, 20}});
    std::vector<ConservationPair> pairs{solve_density(p.sys, p.table, axis, spec)};

    SpeedInvarianceReport rep = verify_speed_invariance(p.sys, p.table, p.plan, pairs, 1, 2);
    // the mu lift degenerates (b vanishes) and the i-relation denominator with it
    REQUIRE(rep.degenerate.size() == 2);
    CHECK(rep.degenerate[0].find("lift") != std::string::npos);
    CHECK(rep.degenerate[1].find("direction 1") != std::string::npos);
    CHECK(std::isnan(rep.cross_residual));
    CHECK(rep.checked > 0);
    CHECK(rep.relation_residual <= 1e-9);

    // the j-direction still extracts: d_2 barM / d_2 barN = u2
    std::size_t seen = 0;
    double worst = 0.0;
    for (std::size_t f = 0; f < spec.node_count(); ++f) {
        CHECK_FALSE(rep.speeds[0].valid(f));
        if (!rep.speeds[1].valid(f)) continue;
        const std::vector<double> q = spec.point(spec.unflat(f));
        worst = std::max(worst, std::abs(rep.speeds[1].values[f] - q[1]));
        ++seen;
    }
    CHECK(seen >= 100);
    CHECK(worst <= 1e-9);
}

TEST_CASE("the identity and swap reciprocal changes act as expected") {
    Prepared p = prepare("lindeg2");
    const Expr one = parse_expr("1", 2);
    const Expr zero = parse_expr("0", 2);

    DiagonalSystem same =
        reciprocal_speeds(p.sys, p.plan, one, zero, zero, one);
    CHECK(same.name == "lindeg2-reciprocal");
    CHECK(print_expr(same.lambda[0]) == print_expr(simplify(p.sys.lambda[0])));
    CHECK(print_expr(same.lambda[1]) == print_expr(simplify(p.sys.lambda[1])));

    DiagonalSystem flipped =
        reciprocal_speeds(p.sys, p.plan, zero, one, one, zero);
    CHECK(print_expr(flipped.lambda[0]) == "1/u2");
    CHECK(print_expr(flipped.lambda[1]) == "1/u1");
    for (const std::vector<double>& q : p.plan.points) {
        for (int k = 0; k < 2; ++k) {
            const double lam = eval(p.sys.lambda[k], q);
            CHECK(std::abs(eval(same.lambda[k], q) - lam) <= 1e-14);
            CHECK(std::abs(eval(flipped.lambda[k], q) - 1.0 / lam) <= 1e-12);
        }
    }
}

TEST_CASE("the degenerate flow's reciprocal has inverse-coordinate speeds") {
    Prepared p = prepare("lindeg2");
    DiagonalSystem out = reciprocal_speeds(p.sys, p.plan, parse_expr("1", 2), parse_expr("0", 2),
                                           parse_expr("u1 + u2", 2), parse_expr("u1 * u2", 2));
    for (const std::vector<double>& q : p.plan.points) {
        CHECK(std::abs(eval(out.lambda[0], q) + 1.0 / q[1]) <= 1e-12);
        CHECK(std::abs(eval(out.lambda[1], q) + 1.0 / q[0]) <= 1e-12);
    }

    DiagnosticsReport rep = full_report(out);
    CHECK(rep.hyperbolic.flag);
    REQUIRE(rep.semihamiltonian.has_value());
    CHECK(rep.semihamiltonian->flag);
}

TEST_CASE("a reciprocal change with non-conserved data is rejected") {
    Prepared p = prepare("lindeg2");
    try {
        reciprocal_speeds(p.sys, p.plan, parse_expr("1", 2), parse_expr("0", 2),
                          parse_expr("u1 + u2", 2), parse_expr("u1 + u2", 2));
        FAIL("expected a rejection");
    } catch (const Error& e) {
        CHECK(message_contains(e, "(N, M)"));
    }
}

TEST_CASE("a reciprocal change with a vanishing denominator is rejected") {
    Prepared p = prepare("constant2");
    try {
        reciprocal_speeds(p.sys, p.plan, parse_expr("1", 2), parse_expr("0", 2),
                          parse_expr("u1", 2), parse_expr("0", 2));
        FAIL("expected a rejection");
    } catch (const Error& e) {
        CHECK(message_contains(e, "denominator"));
    }
}
