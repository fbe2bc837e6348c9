#include "hydrotype/hodograph.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "detail/linsolve.hpp"

namespace ht {
namespace {

/* Uniform evaluation facade so the Newton core does not care whether μ came
 * in as expression trees or as callables. Indices are 1-based. */
struct MuFacade {
    std::function<double(int, const std::vector<double>&)> value;
    std::function<double(int, int, const std::vector<double>&)> partial;
};

MuFacade facade_from_exprs(const std::vector<Expr>& mu, int n) {
    auto dmu = std::make_shared<std::vector<std::vector<Expr>>>();
    dmu->resize(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) {
        (*dmu)[i].reserve(n);
        for (int k = 1; k <= n; ++k) (*dmu)[i].push_back(simplify(diff(mu[i], k)));
    }
    auto mu_copy = std::make_shared<std::vector<Expr>>(mu);
    MuFacade f;
    f.value = [mu_copy](int i, const std::vector<double>& u) {
        return eval((*mu_copy)[i - 1], u);
    };
    f.partial = [dmu](int i, int k, const std::vector<double>& u) {
        return eval((*dmu)[i - 1][k - 1], u);
    };
    return f;
}

MuFacade facade_from_callables(const std::vector<MuCallable>& mu) {
    auto mu_copy = std::make_shared<std::vector<MuCallable>>(mu);
    MuFacade f;
    f.value = [mu_copy](int i, const std::vector<double>& u) {
        return (*mu_copy)[i - 1].value(u);
    };
    f.partial = [mu_copy](int i, int k, const std::vector<double>& u) {
        const MuCallable& m = (*mu_copy)[i - 1];
        std::vector<double> lo = u, hi = u;
        hi[k - 1] += m.fd_step;
        lo[k - 1] -= m.fd_step;
        return (m.value(hi) - m.value(lo)) / (2.0 * m.fd_step);
    };
    return f;
}

struct NodeOutcome {
    bool converged = false;
    int iterations = 0;
    double residual = std::numeric_limits<double>::quiet_NaN();
};

/* Newton on F_i(u) = μ^i(u) − λ^i(u) t − x with step halving whenever the
 * full step fails to reduce |F|_inf. Evaluation faults and singular
 * Jacobians end the node without converging; the caller keeps the iterate. */
NodeOutcome newton_node(const DiagonalSystem& sys, const MuFacade& mu,
                        const std::vector<std::vector<Expr>>& dlambda, double x, double t,
                        std::vector<double>& u, const TsarevOptions& opt) {
    const int n = sys.n;
    NodeOutcome out;
    std::vector<double> F(n), J(n * n), step(n), trial(n), Ft(n);

    auto fill_F = [&](const std::vector<double>& point, std::vector<double>& into) {
        double worst = 0.0;
        for (int i = 1; i <= n; ++i) {
            into[i - 1] = mu.value(i, point) - eval(sys.lambda[i - 1], point) * t - x;
            worst = std::max(worst, std::fabs(into[i - 1]));
        }
        return worst;
    };

    try {
        double res = fill_F(u, F);
        for (int iter = 0; iter < opt.max_iterations; ++iter) {
            out.residual = res;
            if (res <= opt.newton_tol) {
                out.converged = true;
                return out;
            }
            out.iterations = iter + 1;
            for (int i = 1; i <= n; ++i)
                for (int k = 1; k <= n; ++k)
                    J[(i - 1) * n + (k - 1)] =
                        mu.partial(i, k, u) - t * eval(dlambda[i - 1][k - 1], u);
            step = F;
            for (double& v : step) v = -v;
            std::vector<double> Jwork = J;
            if (!detail::solve_dense(Jwork, step, n)) return out;

            double factor = 1.0;
            double best = res;
            bool accepted = false;
            for (int h = 0; h <= opt.max_halvings; ++h) {
                for (int k = 0; k < n; ++k) trial[k] = u[k] + factor * step[k];
                const double r = fill_F(trial, Ft);
                if (r < best || h == opt.max_halvings) {
                    // last resort keeps the shortest probe so the iterate moves
                    if (r < best || !accepted) {
                        u = trial;
                        F = Ft;
                        res = r;
                    }
                    accepted = true;
                    if (r < best) break;
                }
                factor *= 0.5;
            }
            if (!accepted) return out;
        }
        out.residual = res;
        out.converged = res <= opt.newton_tol;
    } catch (const EvalError&) {
        out.converged = false;
    }
    return out;
}

SolutionGrid sweep(const DiagonalSystem& sys, const MuFacade& mu, const GridAxis& x_axis,
                   const GridAxis& t_axis, const std::vector<double>& u_seed, double x_seed,
                   double t_seed, const TsarevOptions& opt) {
    if (static_cast<int>(u_seed.size()) != sys.n)
        throw Error("u seed size does not match the system dimension");

    std::vector<std::vector<Expr>> dlambda(sys.n);
    for (int i = 1; i <= sys.n; ++i)
        for (int k = 1; k <= sys.n; ++k)
            dlambda[i - 1].push_back(simplify(diff(sys.lambda[i - 1], k)));

    SolutionGrid grid;
    grid.x = x_axis;
    grid.t = t_axis;
    grid.allocate(sys.n);

    const int nx = x_axis.cells, nt = t_axis.cells;
    const int sx = x_axis.nearest(x_seed), st = t_axis.nearest(t_seed);

    auto solved = [&](int ix, int it) {
        return ix >= 0 && ix <= nx && it >= 0 && it <= nt && grid.converged[grid.flat(ix, it)];
    };
    auto node_u = [&](int ix, int it) {
        std::vector<double> u(sys.n);
        for (int c = 0; c < sys.n; ++c) u[c] = grid.u[c][grid.flat(ix, it)];
        return u;
    };

    const int max_ring = std::max({sx, nx - sx, st, nt - st});
    for (int ring = 0; ring <= max_ring; ++ring) {
        for (int it = 0; it <= nt; ++it) {
            for (int ix = 0; ix <= nx; ++ix) {
                if (std::max(std::abs(ix - sx), std::abs(it - st)) != ring) continue;
                // warm start from the neighbor one ring closer to the seed
                const int px = ix + (sx > ix ? 1 : (sx < ix ? -1 : 0));
                const int pt = it + (st > it ? 1 : (st < it ? -1 : 0));
                std::vector<double> u;
                if (ring > 0 && solved(px, pt))
                    u = node_u(px, pt);
                else if (ring > 0 && solved(px, it))
                    u = node_u(px, it);
                else if (ring > 0 && solved(ix, pt))
                    u = node_u(ix, pt);
                else
                    u = u_seed;

                NodeOutcome res = newton_node(sys, mu, dlambda, x_axis.coord(ix),
                                              t_axis.coord(it), u, opt);
                const std::size_t idx = grid.flat(ix, it);
                for (int c = 0; c < sys.n; ++c) grid.u[c][idx] = u[c];
                grid.converged[idx] = res.converged ? 1 : 0;
                grid.iterations[idx] = res.iterations;
                grid.residual[idx] = res.residual;
            }
        }
    }
    return grid;
}

}  // namespace

SolutionGrid solve_tsarev(const DiagonalSystem& sys, const std::vector<Expr>& mu,
                          const GridAxis& x_axis, const GridAxis& t_axis,
                          const std::vector<double>& u_seed, double x_seed, double t_seed,
                          const TsarevOptions& opt) {
    if (static_cast<int>(mu.size()) != sys.n)
        throw Error("mu count does not match the system dimension");
    return sweep(sys, facade_from_exprs(mu, sys.n), x_axis, t_axis, u_seed, x_seed, t_seed,
                 opt);
}

SolutionGrid solve_tsarev(const DiagonalSystem& sys, const std::vector<MuCallable>& mu,
                          const GridAxis& x_axis, const GridAxis& t_axis,
                          const std::vector<double>& u_seed, double x_seed, double t_seed,
                          const TsarevOptions& opt) {
    if (static_cast<int>(mu.size()) != sys.n)
        throw Error("mu count does not match the system dimension");
    return sweep(sys, facade_from_callables(mu), x_axis, t_axis, u_seed, x_seed, t_seed, opt);
}

VerifyReport verify_solution(const DiagonalSystem& sys, SolutionGrid& grid) {
    VerifyReport report;
    const int nx = grid.x.cells, nt = grid.t.cells;
    const double dx = grid.x.step(), dt = grid.t.step();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (double& r : grid.residual) r = nan;

    std::vector<double> u(sys.n);
    for (int it = 1; it < nt; ++it) {
        for (int ix = 1; ix < nx; ++ix) {
            const std::size_t c = grid.flat(ix, it);
            const bool stencil_ok = grid.converged[c] && grid.converged[grid.flat(ix - 1, it)] &&
                                    grid.converged[grid.flat(ix + 1, it)] &&
                                    grid.converged[grid.flat(ix, it - 1)] &&
                                    grid.converged[grid.flat(ix, it + 1)];
            if (!stencil_ok) {
                ++report.skipped;
                continue;
            }
            for (int comp = 0; comp < sys.n; ++comp) u[comp] = grid.u[comp][c];
            double node_worst = 0.0;
            bool usable = true;
            for (int comp = 0; comp < sys.n && usable; ++comp) {
                const double ut =
                    (grid.u[comp][grid.flat(ix, it + 1)] - grid.u[comp][grid.flat(ix, it - 1)]) /
                    (2.0 * dt);
                const double ux =
                    (grid.u[comp][grid.flat(ix + 1, it)] - grid.u[comp][grid.flat(ix - 1, it)]) /
                    (2.0 * dx);
                double speed;
                try {
                    speed = eval(sys.lambda[comp], u);
                } catch (const EvalError&) {
                    usable = false;
                    break;
                }
                const double r =
                    std::fabs(ut - speed * ux) / (1.0 + std::fabs(ut) + std::fabs(speed * ux));
                node_worst = std::max(node_worst, r);
                if (r > report.max_residual) {
                    report.max_residual = r;
                    report.worst_point = {grid.x.coord(ix), grid.t.coord(it)};
                    report.worst_component = comp + 1;
                }
            }
            if (!usable) {
                ++report.skipped;
                continue;
            }
            grid.residual[c] = node_worst;
            ++report.checked;
        }
    }
    return report;
}

}  // namespace ht
