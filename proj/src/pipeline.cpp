#include <cmath>
#include <sstream>

#include "hydrotype/integrate.hpp"

namespace ht {
namespace {

/* φ follows the one-variable convention (written in u1); rewrite it as a
 * function of u^target so it can enter n-variable expression slots. */
Expr rebase_univar(const Expr& e, int target) {
    const ExprNode& nd = e.node();
    switch (nd.kind) {
        case NodeKind::constant:
            return e;
        case NodeKind::variable:
            return Expr::variable(target);
        case NodeKind::unary:
            return Expr::unary(nd.uop, rebase_univar(nd.a, target));
        case NodeKind::binary:
            return Expr::binary(nd.bop, rebase_univar(nd.a, target), rebase_univar(nd.b, target));
    }
    return e;
}

std::string format_residual(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

PipelineResult pipeline_solve(const DiagonalSystem& sys, const std::vector<Expr>& phi,
                              const std::vector<double>& u0, double x0, double t0,
                              const GridAxis& x_axis, const GridAxis& t_axis,
                              const PipelineOptions& opt) {
    if (static_cast<int>(phi.size()) != sys.n)
        throw Error("phi count does not match the system dimension");
    for (const Expr& p : phi)
        if (p.empty()) throw Error("phi entries must be non-empty expressions");
    if (static_cast<int>(u0.size()) != sys.n)
        throw Error("u0 size does not match the system dimension");

    const SamplePlan plan = sample_plan(sys);
    if (!plan.hyperbolic_ok)
        throw PipelineRefused("system is not strictly hyperbolic on the sampled box: " +
                              plan.failure_reason);

    std::vector<bool> order0(sys.n, false);
    bool all_order0 = true;
    for (int i = 1; i <= sys.n; ++i) {
        order0[i - 1] = check_darboux_order0(sys, plan, i).flag;
        all_order0 = all_order0 && order0[i - 1];
    }

    PipelineResult out;
    if (all_order0) {
        // each speed decouples, so the potentials are the drivers themselves
        std::vector<Expr> mu(sys.n);
        for (int i = 1; i <= sys.n; ++i) mu[i - 1] = rebase_univar(phi[i - 1], i);
        out.route = "tsarev-symbolic";
        out.grid = solve_tsarev(sys, mu, x_axis, t_axis, u0, x0, t0);
        out.verify = verify_solution(sys, out.grid);
        out.notes.push_back("all components decouple at order 0");
        return out;
    }

    const CoeffTable table = coefficient_table(sys, plan);
    bool all_le1 = true;
    std::ostringstream blockers;
    for (int i = 1; i <= sys.n; ++i) {
        if (order0[i - 1]) continue;
        Order1Result row = check_darboux_order1(sys, table, plan, i);
        if (!(row.applicable && row.flag)) {
            all_le1 = false;
            blockers << " component " << i << " (residual "
                     << format_residual(row.residual) << ")";
        }
    }
    if (!all_le1 && !opt.force) {
        throw PipelineRefused(
            "system fails the order <= 1 decoupling conditions:" + blockers.str() +
            "; pass force to integrate anyway and inspect the defect report");
    }
    if (!all_le1)
        out.notes.push_back("forced: order <= 1 conditions fail at" + blockers.str());

    // a vanishing second invariant admits the closed-form P route
    bool b_all_zero = true;
    for (int i = 1; i <= sys.n && b_all_zero; ++i) {
        for (int k = 1; k <= sys.n && b_all_zero; ++k) {
            if (k == i || table.Azero(i, k)) continue;
            const Expr& b = table.B(i, k);
            if (b.empty() || is_zero(b)) continue;
            for (const auto& p : plan.points) {
                double v;
                try {
                    v = eval(b, p);
                } catch (const EvalError&) {
                    continue;
                }
                if (std::fabs(v) > 1e-7) {
                    b_all_zero = false;
                    break;
                }
            }
        }
    }

    if (b_all_zero && all_le1) {
        std::vector<OrbitFn> P;
        for (int i = 1; i <= sys.n; ++i) {
            FieldFn H = [table, i, base = u0](const std::vector<double>& u) {
                return lame_value(table, i, base, u);
            };
            P.push_back(p_for_b_zero(sys, table, i, std::move(H), phi[i - 1], u0));
        }
        OrbitResult orbit =
            integrate_orbit_solution(sys, P, x0, t0, u0, x_axis, t_axis, opt.substeps);
        out.route = "orbit";
        out.grid = std::move(orbit.grid);
        out.verify = orbit.verify;
        out.path_defect = orbit.cross_defect;
        out.notes.push_back("all b coefficients vanish; used the closed-form P fields");
        if (orbit.masked > 0)
            out.notes.push_back(std::to_string(orbit.masked) +
                                " lattice nodes hit the breakdown locus");
        return out;
    }

    // generic route: commuting-flow potentials on a u-grid, then the implicit solve
    PfaffianSpec spec = pfaffian_from_table(sys, table, plan, phi);
    for (int i = 1; i <= sys.n; ++i)
        if (order0[i - 1]) spec.fixed_mu[i - 1] = phi[i - 1];
    const GridSpec ugrid = box_grid(sys.domain, opt.u_cells);
    std::vector<double> mu0(sys.n);
    for (int i = 1; i <= sys.n; ++i) {
        const std::vector<double> arg{u0[i - 1]};
        mu0[i - 1] = eval(phi[i - 1], arg);
    }
    FrobeniusResult fro = integrate_frobenius_mu(spec, ugrid, u0, mu0, opt.substeps);

    double fd_step = ugrid.axes[0].step();
    for (const GridAxis& ax : ugrid.axes) fd_step = std::min(fd_step, ax.step());
    std::vector<MuCallable> mu(sys.n);
    for (int i = 0; i < sys.n; ++i) {
        mu[i].value = [g = fro.mu[i]](const std::vector<double>& u) { return g.interpolate(u); };
        mu[i].fd_step = 0.5 * fd_step;
    }

    out.route = "frobenius-tsarev";
    out.grid = solve_tsarev(sys, mu, x_axis, t_axis, u0, x0, t0);
    out.verify = verify_solution(sys, out.grid);
    out.path_defect = fro.reversed_defect;
    out.commuting_residual = fro.commuting_residual;
    if (fro.integrable_warning)
        out.notes.push_back("path-independence defect " + format_residual(fro.reversed_defect) +
                            " exceeds 100x tolerance; the Pfaffian system is not closed");
    if (fro.blowups > 0)
        out.notes.push_back(std::to_string(fro.blowups) + " mu nodes masked by blow-up");
    return out;
}

}  // namespace ht
