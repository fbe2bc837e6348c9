#include "hydrotype/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ht {
namespace {

constexpr double kBlowUpLimit = 1e12;

double eval_phi(const Expr& phi, double ui) {
    const std::vector<double> arg{ui};
    return eval(phi, arg);
}

/* Composite Simpson over [s0, s1]; substeps is rounded up to an even count. */
template <class F>
double simpson_leg(double s0, double s1, int substeps, F&& f) {
    int m = std::max(2, substeps);
    if (m % 2) ++m;
    const double h = (s1 - s0) / m;
    double acc = f(s0) + f(s1);
    for (int k = 1; k < m; ++k) acc += f(s0 + k * h) * (k % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

/* Classical RK4 for y' = f(s, y) from s0 to s1; y updated in place. */
template <class F>
void rk4_leg(double s0, double s1, int substeps, std::vector<double>& y, F&& f) {
    const int m = std::max(1, substeps);
    const double h = (s1 - s0) / m;
    const std::size_t dim = y.size();
    std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), probe(dim);
    for (int step = 0; step < m; ++step) {
        const double s = s0 + step * h;
        f(s, y, k1);
        for (std::size_t c = 0; c < dim; ++c) probe[c] = y[c] + 0.5 * h * k1[c];
        f(s + 0.5 * h, probe, k2);
        for (std::size_t c = 0; c < dim; ++c) probe[c] = y[c] + 0.5 * h * k2[c];
        f(s + 0.5 * h, probe, k3);
        for (std::size_t c = 0; c < dim; ++c) probe[c] = y[c] + h * k3[c];
        f(s + h, probe, k4);
        for (std::size_t c = 0; c < dim; ++c)
            y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
    }
}

bool finite_all(const std::vector<double>& y) {
    for (double v : y)
        if (!std::isfinite(v) || std::fabs(v) > kBlowUpLimit) return false;
    return true;
}

}  // namespace

double lame_value(const CoeffTable& table, int i, const std::vector<double>& base,
                  const std::vector<double>& u, int substeps) {
    const int n = table.n;
    std::vector<double> point = base;
    point[i - 1] = u[i - 1];
    double ln_h = 0.0;
    for (int k = 1; k <= n; ++k) {
        if (k == i) continue;
        if (!table.Azero(i, k)) {
            const Expr& aik = table.A(i, k);
            std::vector<double> probe = point;
            ln_h += simpson_leg(base[k - 1], u[k - 1], substeps, [&](double s) {
                probe[k - 1] = s;
                return eval(aik, probe);
            });
        }
        point[k - 1] = u[k - 1];
    }
    return std::exp(ln_h);
}

ScalarFieldGrid lame_coefficients(const CoeffTable& table, int i,
                                  const std::vector<double>& base, const GridSpec& spec,
                                  int substeps) {
    ScalarFieldGrid out;
    out.spec = spec;
    out.base = base;
    out.values.assign(spec.node_count(), 0.0);
    out.mask.assign(spec.node_count(), 1);

    const std::size_t total = spec.node_count();
    bool any_masked = false;
    for (std::size_t f = 0; f < total; ++f) {
        const std::vector<int> idx = spec.unflat(f);
        const std::vector<double> u = spec.point(idx);
        double h;
        try {
            h = lame_value(table, i, base, u, substeps);
        } catch (const EvalError&) {
            h = std::numeric_limits<double>::quiet_NaN();
        }
        if (std::isfinite(h) && std::fabs(h) <= kBlowUpLimit) {
            out.values[f] = h;
        } else {
            out.mask[f] = 0;
            any_masked = true;
        }
    }
    if (!any_masked) out.mask.clear();

    // closedness of the quadrature form, one cell face at a time
    const int n = table.n;
    for (int k = 1; k <= n; ++k) {
        if (k == i) continue;
        for (int l = k + 1; l <= n; ++l) {
            if (l == i) continue;
            if (table.Azero(i, k) && table.Azero(i, l)) continue;
            const Expr ak = table.Azero(i, k) ? Expr::constant(0.0) : table.A(i, k);
            const Expr a_l = table.Azero(i, l) ? Expr::constant(0.0) : table.A(i, l);
            std::vector<int> idx(n, 0);
            // walk every cell of every (k,l) plane section
            for (std::size_t f = 0; f < total; ++f) {
                idx = spec.unflat(f);
                if (idx[k - 1] >= spec.axes[k - 1].cells) continue;
                if (idx[l - 1] >= spec.axes[l - 1].cells) continue;
                std::vector<double> corner = spec.point(idx);
                const double k0 = corner[k - 1], l0 = corner[l - 1];
                const double k1 = spec.axes[k - 1].coord(idx[k - 1] + 1);
                const double l1 = spec.axes[l - 1].coord(idx[l - 1] + 1);
                std::vector<double> probe = corner;
                double loop = 0.0;
                try {
                    probe[l - 1] = l0;
                    loop += simpson_leg(k0, k1, substeps, [&](double s) {
                        probe[k - 1] = s;
                        return eval(ak, probe);
                    });
                    probe[k - 1] = k1;
                    loop += simpson_leg(l0, l1, substeps, [&](double s) {
                        probe[l - 1] = s;
                        return eval(a_l, probe);
                    });
                    probe[l - 1] = l1;
                    loop -= simpson_leg(k0, k1, substeps, [&](double s) {
                        probe[k - 1] = s;
                        return eval(ak, probe);
                    });
                    probe[k - 1] = k0;
                    loop -= simpson_leg(l0, l1, substeps, [&](double s) {
                        probe[l - 1] = s;
                        return eval(a_l, probe);
                    });
                } catch (const EvalError&) {
                    continue;
                }
                out.defect = std::max(out.defect, std::fabs(loop));
            }
        }
    }
    return out;
}

PfaffianSpec pfaffian_from_table(const DiagonalSystem& sys, const CoeffTable& table,
                                 const SamplePlan& plan, const std::vector<Expr>& phi) {
    if (static_cast<int>(phi.size()) != sys.n)
        throw Error("phi count does not match the system dimension");
    PfaffianSpec spec;
    spec.n = sys.n;
    spec.tol = sys.tol;
    spec.phi = phi;
    spec.a.assign(sys.n, std::vector<Expr>(sys.n));
    spec.b.resize(sys.n);
    spec.j.assign(sys.n, 0);
    spec.fixed_mu.resize(sys.n);
    for (int i = 1; i <= sys.n; ++i) {
        for (int k = 1; k <= sys.n; ++k)
            if (k != i && !table.Azero(i, k)) spec.a[i - 1][k - 1] = table.A(i, k);
        Order1Result row = check_darboux_order1(sys, table, plan, i);
        if (row.applicable && row.witness_j != 0) {
            spec.j[i - 1] = row.witness_j;
            spec.b[i - 1] = table.B(i, row.witness_j);
        }
    }
    return spec;
}

namespace {

struct MuFill {
    std::vector<std::vector<double>> values;  // per component
    std::vector<char> mask;
    int blowups = 0;
};

/* Staircase sweep over the whole grid, stage axes taken in `axes` order.
 * Stage s extends the filled region of the first s-1 axes along axis s,
 * marching cell by cell from the base index in both directions. */
MuFill frobenius_sweep(const PfaffianSpec& spec, const GridSpec& grid,
                       const std::vector<int>& base_idx, const std::vector<double>& mu0,
                       int substeps, const std::vector<int>& axes) {
    const int n = spec.n;
    const std::size_t total = grid.node_count();
    MuFill fill;
    fill.values.assign(n, std::vector<double>(total, 0.0));
    fill.mask.assign(total, 0);

    auto clamp_fixed = [&](std::vector<double>& mu, const std::vector<double>& u) {
        for (int c = 0; c < n; ++c)
            if (!spec.fixed_mu[c].empty()) mu[c] = eval_phi(spec.fixed_mu[c], u[c]);
    };

    std::vector<double> base_mu = mu0;
    clamp_fixed(base_mu, grid.point(base_idx));
    if (!finite_all(base_mu)) throw BlowUp("mu is not computable at the base node");
    const std::size_t base_flat = grid.flat(base_idx);
    for (int c = 0; c < n; ++c) fill.values[c][base_flat] = base_mu[c];
    fill.mask[base_flat] = 1;

    std::vector<double> u_line(n);
    auto rhs = [&](int axis, double s, const std::vector<double>& mu, std::vector<double>& d) {
        u_line[axis - 1] = s;
        std::vector<double> mu_eff = mu;
        clamp_fixed(mu_eff, u_line);
        for (int c = 1; c <= n; ++c) {
            if (!spec.fixed_mu[c - 1].empty()) {
                d[c - 1] = 0.0;
            } else if (c == axis) {
                const Expr& b = spec.b[c - 1];
                d[c - 1] = b.empty() ? 0.0
                                     : eval(b, u_line) *
                                           (mu_eff[c - 1] - eval_phi(spec.phi[c - 1], s));
            } else {
                const Expr& a = spec.a[c - 1][axis - 1];
                d[c - 1] = a.empty() ? 0.0
                                     : eval(a, u_line) * (mu_eff[axis - 1] - mu_eff[c - 1]);
            }
        }
    };

    // stage s: lines along axes[s-1] seeded from every node filled so far
    for (std::size_t stage = 0; stage < axes.size(); ++stage) {
        const int axis = axes[stage];
        const GridAxis& ax = grid.axes[axis - 1];
        // enumerate seeds: free indices on earlier stage axes, base elsewhere
        std::vector<int> idx = base_idx;
        std::vector<int> cursor(stage, 0);
        while (true) {
            for (std::size_t p = 0; p < stage; ++p) idx[axes[p] - 1] = cursor[p];
            idx[axis - 1] = base_idx[axis - 1];
            const std::size_t seed_flat = grid.flat(idx);
            if (fill.mask[seed_flat]) {
                std::vector<double> mu_seed(n);
                for (int c = 0; c < n; ++c) mu_seed[c] = fill.values[c][seed_flat];
                for (int dir : {+1, -1}) {
                    std::vector<double> mu = mu_seed;
                    std::vector<int> node = idx;
                    bool alive = true;
                    for (int k = base_idx[axis - 1] + dir;
                         k >= 0 && k <= ax.cells; k += dir) {
                        if (alive) {
                            u_line = grid.point(node);
                            try {
                                rk4_leg(ax.coord(k - dir), ax.coord(k), substeps, mu,
                                        [&](double s, const std::vector<double>& y,
                                            std::vector<double>& d) { rhs(axis, s, y, d); });
                            } catch (const EvalError&) {
                                alive = false;
                            }
                            if (alive && !finite_all(mu)) alive = false;
                        }
                        node[axis - 1] = k;
                        if (alive) {
                            u_line = grid.point(node);
                            clamp_fixed(mu, u_line);
                            const std::size_t f = grid.flat(node);
                            for (int c = 0; c < n; ++c) fill.values[c][f] = mu[c];
                            fill.mask[f] = 1;
                        } else {
                            ++fill.blowups;
                        }
                    }
                }
            }
            // odometer over the earlier stage axes
            std::size_t p = 0;
            for (; p < stage; ++p) {
                if (++cursor[p] <= grid.axes[axes[p] - 1].cells) break;
                cursor[p] = 0;
            }
            if (p == stage) break;
        }
    }
    return fill;
}

}  // namespace

FrobeniusResult integrate_frobenius_mu(const PfaffianSpec& spec, const GridSpec& grid,
                                       const std::vector<double>& base,
                                       const std::vector<double>& mu0, int substeps) {
    const int n = spec.n;
    if (grid.dim() != n || static_cast<int>(mu0.size()) != n)
        throw Error("grid dimension or mu0 size does not match the Pfaffian spec");
    const std::vector<int> base_idx = grid.nearest(base);
    const std::vector<double> base_u = grid.point(base_idx);

    std::vector<int> ascending(n), descending(n);
    for (int k = 0; k < n; ++k) {
        ascending[k] = k + 1;
        descending[k] = n - k;
    }
    MuFill fwd = frobenius_sweep(spec, grid, base_idx, mu0, substeps, ascending);
    MuFill rev = frobenius_sweep(spec, grid, base_idx, mu0, substeps, descending);

    FrobeniusResult out;
    out.blowups = fwd.blowups;
    out.mu.resize(n);
    const std::size_t total = grid.node_count();
    bool any_masked = false;
    for (std::size_t f = 0; f < total; ++f)
        if (!fwd.mask[f]) any_masked = true;
    for (int c = 0; c < n; ++c) {
        out.mu[c].spec = grid;
        out.mu[c].base = base_u;
        out.mu[c].values = std::move(fwd.values[c]);
        if (any_masked) out.mu[c].mask = fwd.mask;
    }
    for (std::size_t f = 0; f < total; ++f) {
        if (!fwd.mask[f] || !rev.mask[f]) continue;
        for (int c = 0; c < n; ++c) {
            const double a = out.mu[c].values[f], b = rev.values[c][f];
            const double d = std::fabs(a - b) / (1.0 + std::fabs(a));
            out.reversed_defect = std::max(out.reversed_defect, d);
            out.mu[c].defect = std::max(out.mu[c].defect, d);
        }
    }

    // commuting-flow equations by centered differences on the filled grid
    auto value = [&](int c, const std::vector<int>& idx) {
        return out.mu[c].values[grid.flat(idx)];
    };
    auto node_ok = [&](std::vector<int> idx, int k, int off) {
        idx[k - 1] += off;
        if (idx[k - 1] < 0 || idx[k - 1] > grid.axes[k - 1].cells) return false;
        return !any_masked || static_cast<bool>(out.mu[0].mask[grid.flat(idx)]);
    };
    auto shifted = [&](std::vector<int> idx, int k, int off) {
        idx[k - 1] += off;
        return idx;
    };
    for (std::size_t f = 0; f < total; ++f) {
        if (any_masked && !out.mu[0].mask[f]) continue;
        const std::vector<int> idx = grid.unflat(f);
        const std::vector<double> u = grid.point(idx);
        for (int i = 1; i <= n; ++i) {
            for (int k = 1; k <= n; ++k) {
                if (k == i) continue;
                const double h = grid.axes[k - 1].step();
                double fd;
                if (node_ok(idx, k, -2) && node_ok(idx, k, -1) && node_ok(idx, k, 1) &&
                    node_ok(idx, k, 2)) {
                    fd = (-value(i - 1, shifted(idx, k, 2)) +
                          8.0 * value(i - 1, shifted(idx, k, 1)) -
                          8.0 * value(i - 1, shifted(idx, k, -1)) +
                          value(i - 1, shifted(idx, k, -2))) /
                         (12.0 * h);
                } else if (node_ok(idx, k, -1) && node_ok(idx, k, 1)) {
                    fd = (value(i - 1, shifted(idx, k, 1)) -
                          value(i - 1, shifted(idx, k, -1))) /
                         (2.0 * h);
                } else {
                    continue;
                }
                const Expr& a = spec.a[i - 1][k - 1];
                double rhs_v = 0.0;
                if (!a.empty()) {
                    try {
                        rhs_v = eval(a, u) *
                                (out.mu[k - 1].values[f] - out.mu[i - 1].values[f]);
                    } catch (const EvalError&) {
                        continue;
                    }
                }
                const double r = std::fabs(fd - rhs_v) / (1.0 + std::fabs(fd) + std::fabs(rhs_v));
                out.commuting_residual = std::max(out.commuting_residual, r);
            }
        }
    }
    out.integrable_warning = out.reversed_defect > 100.0 * spec.tol;
    return out;
}

namespace {

/* The closed form relies on b_ik = 0; a nonvanishing b at the base point is
 * a caller error, not a breakdown. */
void guard_b_vanishes(const CoeffTable& table, int i, const std::vector<double>& base) {
    for (int k = 1; k <= table.n; ++k) {
        if (k == i || table.Azero(i, k)) continue;
        const Expr& b = table.B(i, k);
        if (b.empty()) continue;
        try {
            if (std::fabs(eval(b, base)) > 1e-6)
                throw Error("b coefficients do not vanish; the closed-form P does not apply");
        } catch (const EvalError&) {
            // inconclusive at this point; leave enforcement to the defect reports
        }
    }
}

/* Shared quotient for the b = 0 closed form. Throws EvalError on the
 * breakdown locus so grid fills can mask instead of aborting. */
double p_quotient(const FieldFn& H, const Expr& phi, const Expr& dlam_ii,
                  const std::vector<double>& u, int i, double t) {
    const double hv = H(u);
    const double drive = eval_phi(phi, u[i - 1]);
    const double den = drive - t * eval(dlam_ii, u) * hv;
    const double scale = 1.0 + std::fabs(drive) + std::fabs(t * hv);
    if (!std::isfinite(den) || std::fabs(den) <= 1e-12 * scale)
        throw EvalError("P denominator vanishes (breakdown locus)", "");
    return hv / den;
}

}  // namespace

FieldFn p_for_b_zero(const DiagonalSystem& sys, const CoeffTable& table, int i, FieldFn H_i,
                     const Expr& phi_i, double t, const std::vector<double>& base) {
    guard_b_vanishes(table, i, base);
    Expr dlam = simplify(diff(sys.lambda[i - 1], i));
    p_quotient(H_i, phi_i, dlam, base, i, t);  // construction-time base check
    return [H = std::move(H_i), phi = phi_i, dlam, i, t](const std::vector<double>& u) {
        return p_quotient(H, phi, dlam, u, i, t);
    };
}

OrbitFn p_for_b_zero(const DiagonalSystem& sys, const CoeffTable& table, int i, FieldFn H_i,
                     const Expr& phi_i, const std::vector<double>& base) {
    guard_b_vanishes(table, i, base);
    Expr dlam = simplify(diff(sys.lambda[i - 1], i));
    H_i(base);                 // evaluability at the base point
    eval_phi(phi_i, base[i - 1]);
    return [H = std::move(H_i), phi = phi_i, dlam, i](const std::vector<double>& u, double,
                                                      double t) {
        return p_quotient(H, phi, dlam, u, i, t);
    };
}

namespace {

struct OrbitFill {
    std::vector<std::vector<double>> u;
    std::vector<char> ok;
};

/* One staircase sweep over the (x,t) lattice. x_major: the seed row along x
 * first, then t-columns; otherwise the transpose. */
OrbitFill orbit_sweep(const DiagonalSystem& sys, const std::vector<OrbitFn>& P,
                      const GridAxis& xa, const GridAxis& ta, int ix0, int it0,
                      const std::vector<double>& u0, int substeps, bool x_major) {
    const int n = sys.n;
    const std::size_t total = static_cast<std::size_t>(xa.cells + 1) * (ta.cells + 1);
    auto flat = [&](int ix, int it) {
        return static_cast<std::size_t>(it) * (xa.cells + 1) + ix;
    };
    OrbitFill fill;
    fill.u.assign(n, std::vector<double>(total, 0.0));
    fill.ok.assign(total, 0);
    for (int c = 0; c < n; ++c) fill.u[c][flat(ix0, it0)] = u0[c];
    fill.ok[flat(ix0, it0)] = 1;

    auto rhs_x = [&](double x, double t, const std::vector<double>& u, std::vector<double>& d) {
        for (int c = 0; c < n; ++c) d[c] = P[c](u, x, t);
    };
    auto rhs_t = [&](double x, double t, const std::vector<double>& u, std::vector<double>& d) {
        for (int c = 0; c < n; ++c) d[c] = eval(sys.lambda[c], u) * P[c](u, x, t);
    };

    // marches from (fx, ft) along one axis, writing nodes until a fault
    auto march = [&](int fx, int ft, bool along_x, int dir) {
        const GridAxis& ax = along_x ? xa : ta;
        int k0 = along_x ? fx : ft;
        std::vector<double> u(n);
        for (int c = 0; c < n; ++c) u[c] = fill.u[c][flat(fx, ft)];
        bool alive = fill.ok[flat(fx, ft)] != 0;
        for (int k = k0 + dir; k >= 0 && k <= ax.cells; k += dir) {
            if (alive) {
                try {
                    if (along_x) {
                        const double t_here = ta.coord(ft);
                        rk4_leg(ax.coord(k - dir), ax.coord(k), substeps, u,
                                [&](double s, const std::vector<double>& y,
                                    std::vector<double>& d) { rhs_x(s, t_here, y, d); });
                    } else {
                        const double x_here = xa.coord(fx);
                        rk4_leg(ax.coord(k - dir), ax.coord(k), substeps, u,
                                [&](double s, const std::vector<double>& y,
                                    std::vector<double>& d) { rhs_t(x_here, s, y, d); });
                    }
                } catch (const EvalError&) {
                    alive = false;
                }
                if (alive && !finite_all(u)) alive = false;
            }
            if (!alive) break;
            const std::size_t f = along_x ? flat(k, ft) : flat(fx, k);
            for (int c = 0; c < n; ++c) fill.u[c][f] = u[c];
            fill.ok[f] = 1;
        }
    };

    if (x_major) {
        march(ix0, it0, true, +1);
        march(ix0, it0, true, -1);
        for (int ix = 0; ix <= xa.cells; ++ix) {
            if (!fill.ok[flat(ix, it0)]) continue;
            march(ix, it0, false, +1);
            march(ix, it0, false, -1);
        }
    } else {
        march(ix0, it0, false, +1);
        march(ix0, it0, false, -1);
        for (int it = 0; it <= ta.cells; ++it) {
            if (!fill.ok[flat(ix0, it)]) continue;
            march(ix0, it, true, +1);
            march(ix0, it, true, -1);
        }
    }
    return fill;
}

}  // namespace

OrbitResult integrate_orbit_solution(const DiagonalSystem& sys, const std::vector<OrbitFn>& P,
                                     double x0, double t0, const std::vector<double>& u0,
                                     const GridAxis& x_axis, const GridAxis& t_axis,
                                     int substeps) {
    if (static_cast<int>(P.size()) != sys.n)
        throw Error("P count does not match the system dimension");
    if (static_cast<int>(u0.size()) != sys.n)
        throw Error("u0 size does not match the system dimension");
    const int ix0 = x_axis.nearest(x0), it0 = t_axis.nearest(t0);

    OrbitFill main = orbit_sweep(sys, P, x_axis, t_axis, ix0, it0, u0, substeps, true);
    OrbitFill alt = orbit_sweep(sys, P, x_axis, t_axis, ix0, it0, u0, substeps, false);

    OrbitResult out;
    out.grid.x = x_axis;
    out.grid.t = t_axis;
    out.grid.allocate(sys.n);
    const std::size_t total = out.grid.node_count();
    for (std::size_t f = 0; f < total; ++f) {
        out.grid.converged[f] = main.ok[f];
        if (!main.ok[f]) {
            ++out.masked;
            continue;
        }
        for (int c = 0; c < sys.n; ++c) out.grid.u[c][f] = main.u[c][f];
        if (alt.ok[f]) {
            for (int c = 0; c < sys.n; ++c) {
                const double d = std::fabs(main.u[c][f] - alt.u[c][f]) /
                                 (1.0 + std::fabs(main.u[c][f]));
                out.cross_defect = std::max(out.cross_defect, d);
            }
        }
    }
    out.verify = verify_solution(sys, out.grid);
    return out;
}

N2QuadratureResult solve_n2_quadrature(const DiagonalSystem& sys, const CoeffTable& table,
                                       FieldFn H_1, FieldFn H_2, const Expr& phi_1,
                                       const Expr& phi_2, const std::vector<double>& base,
                                       const GridSpec& uspec, int substeps) {
    if (sys.n != 2) throw Error("the quadrature solution requires n == 2");
    if (uspec.dim() != 2) throw Error("the u-grid must be two-dimensional");
    guard_b_vanishes(table, 1, base);
    guard_b_vanishes(table, 2, base);

    const Expr dl1 = simplify(diff(sys.lambda[0], 1));
    const Expr dl2 = simplify(diff(sys.lambda[1], 2));
    const std::vector<int> base_idx = uspec.nearest(base);
    const std::size_t total = uspec.node_count();

    const FieldFn* H[2] = {&H_1, &H_2};
    const Expr* phi[2] = {&phi_1, &phi_2};
    const Expr* dl[2] = {&dl1, &dl2};

    // state y = (t, x); along the axis-m leg dx/ds = -lambda^other dt/ds
    auto fill = [&](const std::vector<int>& axes) {
        struct Maps {
            std::vector<double> t, x;
            std::vector<char> ok;
        } maps;
        maps.t.assign(total, 0.0);
        maps.x.assign(total, 0.0);
        maps.ok.assign(total, 0);
        maps.ok[uspec.flat(base_idx)] = 1;

        std::vector<double> u_line(2);
        auto rhs = [&](int m, double s, const std::vector<double>& y, std::vector<double>& d) {
            u_line[m - 1] = s;
            const int o = 3 - m;
            const double lam_m = eval(sys.lambda[m - 1], u_line);
            const double lam_o = eval(sys.lambda[o - 1], u_line);
            const double hv = (*H[m - 1])(u_line);
            const double gap = lam_m - lam_o;
            if (!std::isfinite(hv) || hv == 0.0 || gap == 0.0)
                throw EvalError("quadrature integrand breakdown", "");
            const double dt =
                eval_phi(*phi[m - 1], s) / (hv * gap) - y[0] * eval(*dl[m - 1], u_line) / gap;
            d[0] = dt;
            d[1] = -lam_o * dt;
        };

        for (std::size_t stage = 0; stage < axes.size(); ++stage) {
            const int axis = axes[stage];
            const int other = axes[0];  // valid for stage 1 only; stage 0 uses base
            const GridAxis& ax = uspec.axes[axis - 1];
            const int seeds = stage == 0 ? 1 : uspec.axes[other - 1].cells + 1;
            for (int sidx = 0; sidx < seeds; ++sidx) {
                std::vector<int> idx = base_idx;
                if (stage == 1) idx[other - 1] = sidx;
                const std::size_t seed_flat = uspec.flat(idx);
                if (!maps.ok[seed_flat]) continue;
                for (int dir : {+1, -1}) {
                    std::vector<double> y{maps.t[seed_flat], maps.x[seed_flat]};
                    std::vector<int> node = idx;
                    bool alive = true;
                    for (int k = base_idx[axis - 1] + dir; k >= 0 && k <= ax.cells;
                         k += dir) {
                        if (alive) {
                            u_line = uspec.point(node);
                            try {
                                rk4_leg(ax.coord(k - dir), ax.coord(k), substeps, y,
                                        [&](double s, const std::vector<double>& v,
                                            std::vector<double>& d) { rhs(axis, s, v, d); });
                            } catch (const EvalError&) {
                                alive = false;
                            }
                            if (alive && !finite_all(y)) alive = false;
                        }
                        if (!alive) break;
                        node[axis - 1] = k;
                        const std::size_t f = uspec.flat(node);
                        maps.t[f] = y[0];
                        maps.x[f] = y[1];
                        maps.ok[f] = 1;
                    }
                }
            }
        }
        return maps;
    };

    auto fwd = fill({1, 2});
    auto rev = fill({2, 1});

    N2QuadratureResult out;
    const std::vector<double> base_u = uspec.point(base_idx);
    for (ScalarFieldGrid* g : {&out.t_map, &out.x_map}) {
        g->spec = uspec;
        g->base = base_u;
        g->values.assign(total, 0.0);
    }
    bool any_masked = false;
    for (std::size_t f = 0; f < total; ++f) {
        if (!fwd.ok[f]) {
            any_masked = true;
            continue;
        }
        out.t_map.values[f] = fwd.t[f];
        out.x_map.values[f] = fwd.x[f];
        if (rev.ok[f]) {
            out.reversed_defect = std::max(
                out.reversed_defect, std::fabs(fwd.t[f] - rev.t[f]) / (1.0 + std::fabs(fwd.t[f])));
            out.reversed_defect = std::max(
                out.reversed_defect, std::fabs(fwd.x[f] - rev.x[f]) / (1.0 + std::fabs(fwd.x[f])));
        }
    }
    if (any_masked) {
        out.t_map.mask.assign(fwd.ok.begin(), fwd.ok.end());
        out.x_map.mask = out.t_map.mask;
    }

    // closedness of the rotation form over every cell
    const GridAxis& a1 = uspec.axes[0];
    const GridAxis& a2 = uspec.axes[1];
    for (int i1 = 0; i1 < a1.cells; ++i1) {
        for (int i2 = 0; i2 < a2.cells; ++i2) {
            const double p0 = a1.coord(i1), p1 = a1.coord(i1 + 1);
            const double q0 = a2.coord(i2), q1 = a2.coord(i2 + 1);
            std::vector<double> probe(2);
            auto w1 = [&](double s) {
                probe[0] = s;
                const double gap = eval(sys.lambda[1], probe) - eval(sys.lambda[0], probe);
                return eval(dl1, probe) / gap;
            };
            auto w2 = [&](double s) {
                probe[1] = s;
                const double gap = eval(sys.lambda[0], probe) - eval(sys.lambda[1], probe);
                return eval(dl2, probe) / gap;
            };
            double loop = 0.0;
            try {
                probe[1] = q0;
                loop += simpson_leg(p0, p1, substeps, w1);
                probe[0] = p1;
                loop += simpson_leg(q0, q1, substeps, w2);
                probe[1] = q1;
                loop -= simpson_leg(p0, p1, substeps, w1);
                probe[0] = p0;
                loop -= simpson_leg(q0, q1, substeps, w2);
            } catch (const EvalError&) {
                continue;
            }
            out.omega_defect = std::max(out.omega_defect, std::fabs(loop));
        }
    }

    // PDE residual through the inverse map, fourth-order differences two
    // cells inside the boundary so the truncation error stays below the
    // quadrature tolerances
    const double h1 = a1.step(), h2 = a2.step();
    double worst = 0.0;
    bool any_inverted = false;
    auto ok_at = [&](int i1, int i2) { return fwd.ok[uspec.flat({i1, i2})] != 0; };
    for (int i1 = 2; i1 + 2 <= a1.cells; ++i1) {
        for (int i2 = 2; i2 + 2 <= a2.cells; ++i2) {
            bool stencil_ok = ok_at(i1, i2);
            for (int off = 1; off <= 2 && stencil_ok; ++off)
                stencil_ok = ok_at(i1 - off, i2) && ok_at(i1 + off, i2) &&
                             ok_at(i1, i2 - off) && ok_at(i1, i2 + off);
            if (!stencil_ok) continue;
            auto tv = [&](int a, int b) { return fwd.t[uspec.flat({a, b})]; };
            auto xv = [&](int a, int b) { return fwd.x[uspec.flat({a, b})]; };
            auto d1 = [&](auto&& g, int a, int b, double h) {
                return (-g(a + 2, b) + 8.0 * g(a + 1, b) - 8.0 * g(a - 1, b) + g(a - 2, b)) /
                       (12.0 * h);
            };
            auto d2 = [&](auto&& g, int a, int b, double h) {
                return (-g(a, b + 2) + 8.0 * g(a, b + 1) - 8.0 * g(a, b - 1) + g(a, b - 2)) /
                       (12.0 * h);
            };
            const double t1 = d1(tv, i1, i2, h1);
            const double t2 = d2(tv, i1, i2, h2);
            const double x1 = d1(xv, i1, i2, h1);
            const double x2 = d2(xv, i1, i2, h2);
            const double det = t1 * x2 - t2 * x1;
            const double det_scale =
                (std::fabs(t1) + std::fabs(t2)) * (std::fabs(x1) + std::fabs(x2));
            if (std::fabs(det) <= 1e-10 * (1.0 + det_scale)) {
                ++out.singular_nodes;
                continue;
            }
            const std::vector<double> u = uspec.point({i1, i2});
            double lam1, lam2;
            try {
                lam1 = eval(sys.lambda[0], u);
                lam2 = eval(sys.lambda[1], u);
            } catch (const EvalError&) {
                continue;
            }
            const double u1_t = x2 / det, u1_x = -t2 / det;
            const double u2_t = -x1 / det, u2_x = t1 / det;
            const double r1 = std::fabs((x2 + lam1 * t2) / det) /
                              (1.0 + std::fabs(u1_t) + std::fabs(lam1 * u1_x));
            const double r2 = std::fabs((x1 + lam2 * t1) / det) /
                              (1.0 + std::fabs(u2_t) + std::fabs(lam2 * u2_x));
            worst = std::max(worst, std::max(r1, r2));
            any_inverted = true;
        }
    }
    out.pde_residual = any_inverted ? worst : std::numeric_limits<double>::quiet_NaN();
    return out;
}

}  // namespace ht
