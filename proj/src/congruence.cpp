#include "hydrotype/congruence.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "hydrotype/integrate.hpp"

namespace ht {
namespace {

constexpr double kBlowUpLimit = 1e12;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string pair_label(int i, int j) {
    return "(" + std::to_string(i) + ", " + std::to_string(j) + ")";
}

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

double relative(double lhs, double rhs) {
    return std::fabs(lhs - rhs) / (1.0 + std::fabs(lhs) + std::fabs(rhs));
}

double eval_one(const Expr& e, double s) { return eval(e, {s}); }

bool same_axes(const GridSpec& a, const GridSpec& b) {
    if (a.dim() != b.dim()) return false;
    for (int k = 0; k < a.dim(); ++k)
        if (a.axes[k].lo != b.axes[k].lo || a.axes[k].hi != b.axes[k].hi ||
            a.axes[k].cells != b.axes[k].cells)
            return false;
    return true;
}

/* Node-by-node evaluation; faults and non-finite values mask the node. */
ScalarFieldGrid sample_field(const Expr& e, const GridSpec& spec) {
    ScalarFieldGrid out;
    out.spec = spec;
    out.values.assign(spec.node_count(), 0.0);
    std::vector<char> mask(spec.node_count(), 1);
    bool faulted = false;
    for (std::size_t f = 0; f < spec.node_count(); ++f) {
        const std::vector<double> p = spec.point(spec.unflat(f));
        bool ok = true;
        double v = 0.0;
        try {
            v = eval(e, p);
        } catch (const EvalError&) {
            ok = false;
        }
        if (!ok || !std::isfinite(v)) {
            mask[f] = 0;
            faulted = true;
            continue;
        }
        out.values[f] = v;
    }
    if (faulted) out.mask = std::move(mask);
    return out;
}

/* Worst residual of N_ij = a_ij N_i + a_ji N_j against the stored first
 * derivatives. The cross derivative comes from a tensor fourth-order stencil,
 * so only the deep interior (two cells inside along both axes) is audited. */
double grid_mixed_defect(const CoeffTable& table, const ScalarFieldGrid& Ng,
                         const std::vector<ScalarFieldGrid>& g) {
    const GridSpec& spec = Ng.spec;
    const int n = spec.dim();
    static const double w[5] = {1.0 / 12, -8.0 / 12, 0.0, 8.0 / 12, -1.0 / 12};
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const double hi = spec.axes[i].step(), hj = spec.axes[j].step();
            for (std::size_t f = 0; f < spec.node_count(); ++f) {
                std::vector<int> idx = spec.unflat(f);
                if (idx[i] < 2 || idx[i] > spec.axes[i].cells - 2) continue;
                if (idx[j] < 2 || idx[j] > spec.axes[j].cells - 2) continue;
                if (!Ng.valid(f) || !g[i].valid(f) || !g[j].valid(f)) continue;

                double cross = 0.0;
                bool usable = true;
                for (int si = -2; si <= 2 && usable; ++si) {
                    if (w[si + 2] == 0.0) continue;
                    for (int sj = -2; sj <= 2; ++sj) {
                        if (w[sj + 2] == 0.0) continue;
                        std::vector<int> q = idx;
                        q[i] += si;
                        q[j] += sj;
                        const std::size_t qf = spec.flat(q);
                        if (!Ng.valid(qf)) {
                            usable = false;
                            break;
                        }
                        cross += w[si + 2] * w[sj + 2] * Ng.values[qf];
                    }
                }
                if (!usable) continue;
                cross /= hi * hj;

                const std::vector<double> p = spec.point(idx);
                double rhs = 0.0;
                try {
                    if (!table.Azero(i + 1, j + 1))
                        rhs += eval(table.A(i + 1, j + 1), p) * g[i].values[f];
                    if (!table.Azero(j + 1, i + 1))
                        rhs += eval(table.A(j + 1, i + 1), p) * g[j].values[f];
                } catch (const EvalError&) {
                    continue;
                }
                worst = std::max(worst, relative(cross, rhs));
            }
        }
    }
    return worst;
}

/* Row-normalized determinant; 0 signals a dependent or vanishing row. */
double unit_det(std::vector<double> m, int n) {
    for (int r = 0; r < n; ++r) {
        double s = 0.0;
        for (int c = 0; c < n; ++c) s = std::max(s, std::fabs(m[r * n + c]));
        if (s == 0.0) return 0.0;
        for (int c = 0; c < n; ++c) m[r * n + c] /= s;
    }
    double det = 1.0;
    for (int c = 0; c < n; ++c) {
        int piv = c;
        for (int r = c + 1; r < n; ++r)
            if (std::fabs(m[r * n + c]) > std::fabs(m[piv * n + c])) piv = r;
        if (piv != c) {
            for (int k = 0; k < n; ++k) std::swap(m[c * n + k], m[piv * n + k]);
            det = -det;
        }
        const double p = m[c * n + c];
        if (p == 0.0) return 0.0;
        det *= p;
        for (int r = c + 1; r < n; ++r) {
            const double q = m[r * n + c] / p;
            for (int k = c; k < n; ++k) m[r * n + k] -= q * m[c * n + k];
        }
    }
    return det;
}

int even_substeps(int requested) {
    int m = std::max(2, requested);
    if (m % 2) ++m;
    return m;
}

}  // namespace

ConservationPair pair_from_exprs(const DiagonalSystem& sys, const CoeffTable& table,
                                 const SamplePlan& plan, const Expr& N, const Expr& M,
                                 const GridSpec& spec) {
    const int n = sys.n;
    if (N.empty() || M.empty()) throw Error("closed-form pair needs non-empty N and M");
    if (spec.dim() != n) throw Error("grid dimension does not match the system");

    std::vector<Expr> dN(n), dM(n);
    for (int k = 0; k < n; ++k) {
        dN[k] = simplify(diff(N, k + 1));
        dM[k] = simplify(diff(M, k + 1));
    }
    std::vector<std::vector<Expr>> ddN(n, std::vector<Expr>(n));
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) ddN[i][j] = simplify(diff(dN[i], j + 1));

    double worst_flux = 0.0, worst_density = 0.0;
    int usable = 0;
    for (const std::vector<double>& p : plan.points) {
        try {
            for (int i = 0; i < n; ++i) {
                const double lam = eval(sys.lambda[i], p);
                worst_flux = std::max(worst_flux, relative(eval(dM[i], p), lam * eval(dN[i], p)));
            }
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) {
                    double rhs = 0.0;
                    if (!table.Azero(i + 1, j + 1))
                        rhs += eval(table.A(i + 1, j + 1), p) * eval(dN[i], p);
                    if (!table.Azero(j + 1, i + 1))
                        rhs += eval(table.A(j + 1, i + 1), p) * eval(dN[j], p);
                    worst_density = std::max(worst_density, relative(eval(ddN[i][j], p), rhs));
                }
            ++usable;
        } catch (const EvalError&) {
            continue;
        }
    }
    if (usable == 0) throw Error("pair validation failed: no sample point was evaluable");
    if (worst_flux > sys.tol)
        throw Error("not a conservation law: flux identity residual " + fmt(worst_flux) +
                    " at the samples");
    if (worst_density > sys.tol)
        throw Error("density equation fails: residual " + fmt(worst_density) + " at the samples");

    ConservationPair pair;
    pair.N = simplify(N);
    pair.M = simplify(M);
    pair.Ng = sample_field(pair.N, spec);
    pair.Mg = sample_field(pair.M, spec);
    pair.g.reserve(n);
    for (int k = 0; k < n; ++k) pair.g.push_back(sample_field(dN[k], spec));

    // defect from exact second partials at the nodes
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            for (std::size_t f = 0; f < spec.node_count(); ++f) {
                const std::vector<double> p = spec.point(spec.unflat(f));
                try {
                    double rhs = 0.0;
                    if (!table.Azero(i + 1, j + 1))
                        rhs += eval(table.A(i + 1, j + 1), p) * eval(dN[i], p);
                    if (!table.Azero(j + 1, i + 1))
                        rhs += eval(table.A(j + 1, i + 1), p) * eval(dN[j], p);
                    pair.mixed_defect =
                        std::max(pair.mixed_defect, relative(eval(ddN[i][j], p), rhs));
                } catch (const EvalError&) {
                    continue;
                }
            }
    return pair;
}

ConservationPair solve_density(const DiagonalSystem& sys, const CoeffTable& table,
                               const AxisData& axis, const GridSpec& spec,
                               const DensityOptions& opt) {
    const int n = sys.n;
    if (static_cast<int>(axis.f.size()) != n)
        throw Error("axis data count does not match the system dimension");
    for (const Expr& f : axis.f)
        if (f.empty()) throw Error("axis data entries must be non-empty expressions");
    if (static_cast<int>(axis.base.size()) != n) throw Error("axis base has the wrong dimension");
    if (spec.dim() != n) throw Error("grid dimension does not match the system");

    const std::vector<int> base_idx = spec.nearest(axis.base);
    const std::vector<double> base = spec.point(base_idx);

    std::vector<Expr> df(n);
    for (int i = 0; i < n; ++i) df[i] = simplify(diff(axis.f[i], 1));

    // coefficient values cached on the lattice; a singular entry is fatal
    // because every sweep crosses the whole box
    std::vector<std::vector<ScalarFieldGrid>> aval(n, std::vector<ScalarFieldGrid>(n));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            if (i == k || table.Azero(i + 1, k + 1)) continue;
            aval[i][k] = sample_field(table.A(i + 1, k + 1), spec);
            if (!aval[i][k].mask.empty())
                throw Error("a" + pair_label(i + 1, k + 1) +
                            " is not evaluable everywhere on the lattice");
        }
    auto a_at = [&](int i, int k, const std::vector<double>& q) {
        if (aval[i][k].values.empty()) return 0.0;
        return aval[i][k].interpolate_cubic(q);
    };

    std::vector<ScalarFieldGrid> g(n);
    for (int i = 0; i < n; ++i) {
        g[i].spec = spec;
        g[i].base = base;
        g[i].values.assign(spec.node_count(), 0.0);
        for (std::size_t f = 0; f < spec.node_count(); ++f) {
            const std::vector<double> p = spec.point(spec.unflat(f));
            try {
                g[i].values[f] = eval_one(df[i], p[i]);
            } catch (const EvalError&) {
                throw Error("axis profile " + std::to_string(i + 1) +
                            " is not evaluable at u = " + fmt(p[i]));
            }
        }
    }

    const int substeps = std::max(1, opt.substeps);
    bool settled = false;
    double change = 0.0;
    for (int sweep = 0; sweep < opt.max_sweeps && !settled; ++sweep) {
        change = 0.0;
        for (int i = 0; i < n; ++i) {
            std::vector<int> stages;
            for (int k = 0; k < n; ++k)
                if (k != i) stages.push_back(k);

            for (std::size_t s = 0; s < stages.size(); ++s) {
                const int ax = stages[s];
                const GridAxis& axis_s = spec.axes[ax];
                // free axes: the profile axis plus every stage already swept
                std::vector<int> free_axes{i};
                for (std::size_t e = 0; e < s; ++e) free_axes.push_back(stages[e]);

                std::vector<int> idx = base_idx;
                std::vector<int> counter(free_axes.size(), 0);
                bool lines_left = true;
                while (lines_left) {
                    for (std::size_t c = 0; c < free_axes.size(); ++c)
                        idx[free_axes[c]] = counter[c];

                    for (int dir : {+1, -1}) {
                        std::vector<int> cur = idx;
                        cur[ax] = base_idx[ax];
                        double y = g[i].values[spec.flat(cur)];
                        std::vector<double> q = spec.point(cur);
                        while (dir > 0 ? cur[ax] < axis_s.cells : cur[ax] > 0) {
                            const double s0 = axis_s.coord(cur[ax]);
                            const double s1 = axis_s.coord(cur[ax] + dir);
                            const double h = (s1 - s0) / substeps;
                            for (int m = 0; m < substeps; ++m) {
                                const double t0 = s0 + m * h;
                                auto rhs = [&](double sv, double yv) {
                                    q[ax] = sv;
                                    return a_at(i, ax, q) * yv +
                                           a_at(ax, i, q) * g[ax].interpolate_cubic(q);
                                };
                                const double k1 = rhs(t0, y);
                                const double k2 = rhs(t0 + h / 2, y + h / 2 * k1);
                                const double k3 = rhs(t0 + h / 2, y + h / 2 * k2);
                                const double k4 = rhs(t0 + h, y + h * k3);
                                y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
                            }
                            if (!std::isfinite(y) || std::fabs(y) > kBlowUpLimit)
                                throw BlowUp("density derivative g_" + std::to_string(i + 1) +
                                             " exceeded 1e12 while sweeping");
                            cur[ax] += dir;
                            const std::size_t f = spec.flat(cur);
                            change = std::max(change, std::fabs(y - g[i].values[f]));
                            g[i].values[f] = y;
                        }
                    }

                    // odometer over the free axes
                    std::size_t c = 0;
                    for (; c < free_axes.size(); ++c) {
                        if (++counter[c] <= spec.axes[free_axes[c]].cells) break;
                        counter[c] = 0;
                    }
                    lines_left = c < free_axes.size();
                }
            }
        }
        settled = change <= opt.tol;
    }
    if (!settled)
        throw Error("density fixpoint stalled after " + std::to_string(opt.max_sweeps) +
                    " sweeps (last change " + fmt(change) + ")");

    // N and M by cumulative Simpson quadrature along the staircase from the base
    const int quad = even_substeps(opt.substeps);
    auto quadrature_fill = [&](ScalarFieldGrid& out,
                               const std::function<double(int, const std::vector<double>&)>&
                                   integrand,
                               double anchor) {
        out.spec = spec;
        out.base = base;
        out.values.assign(spec.node_count(), 0.0);
        out.values[spec.flat(base_idx)] = anchor;
        for (int ax = 0; ax < n; ++ax) {
            const GridAxis& axis_s = spec.axes[ax];
            std::vector<int> free_axes;
            for (int e = 0; e < ax; ++e) free_axes.push_back(e);

            std::vector<int> idx = base_idx;
            std::vector<int> counter(free_axes.size(), 0);
            bool lines_left = true;
            while (lines_left) {
                for (std::size_t c = 0; c < free_axes.size(); ++c)
                    idx[free_axes[c]] = counter[c];

                for (int dir : {+1, -1}) {
                    std::vector<int> cur = idx;
                    cur[ax] = base_idx[ax];
                    double acc = out.values[spec.flat(cur)];
                    std::vector<double> q = spec.point(cur);
                    while (dir > 0 ? cur[ax] < axis_s.cells : cur[ax] > 0) {
                        const double s0 = axis_s.coord(cur[ax]);
                        const double h = (axis_s.coord(cur[ax] + dir) - s0) / quad;
                        double sum = 0.0;
                        for (int m = 0; m <= quad; ++m) {
                            q[ax] = s0 + m * h;
                            const double w = (m == 0 || m == quad) ? 1.0 : (m % 2 ? 4.0 : 2.0);
                            sum += w * integrand(ax, q);
                        }
                        acc += sum * h / 3.0;
                        if (!std::isfinite(acc) || std::fabs(acc) > kBlowUpLimit)
                            throw BlowUp("density quadrature exceeded 1e12");
                        cur[ax] += dir;
                        out.values[spec.flat(cur)] = acc;
                    }
                }

                std::size_t c = 0;
                for (; c < free_axes.size(); ++c) {
                    if (++counter[c] <= spec.axes[free_axes[c]].cells) break;
                    counter[c] = 0;
                }
                lines_left = c < free_axes.size();
            }
        }
    };

    ConservationPair pair;
    double anchor;
    try {
        anchor = eval_one(axis.f[0], base[0]);
    } catch (const EvalError&) {
        throw Error("axis profile 1 is not evaluable at the base");
    }
    quadrature_fill(pair.Ng, [&](int ax, const std::vector<double>& q) {
        return g[ax].interpolate_cubic(q);
    }, anchor);
    quadrature_fill(pair.Mg, [&](int ax, const std::vector<double>& q) {
        double lam;
        try {
            lam = eval(sys.lambda[ax], q);
        } catch (const EvalError&) {
            throw Error("speed " + std::to_string(ax + 1) + " is not evaluable on the lattice");
        }
        return lam * g[ax].interpolate_cubic(q);
    }, 0.0);

    pair.g = std::move(g);
    pair.mixed_defect = grid_mixed_defect(table, pair.Ng, pair.g);
    return pair;
}

FocalChart focal_chart(const DiagonalSystem& sys, const std::vector<ConservationPair>& pairs,
                       int i) {
    const int n = sys.n;
    if (static_cast<int>(pairs.size()) != n)
        throw Error("focal chart needs exactly " + std::to_string(n) + " pairs");
    if (i < 1 || i > n) throw Error("component index " + std::to_string(i) + " out of range");
    for (const ConservationPair& p : pairs) {
        if (static_cast<int>(p.g.size()) != n) throw Error("pair lacks derivative grids");
        if (!same_axes(p.Ng.spec, pairs[0].Ng.spec))
            throw Error("pairs must share one lattice");
    }
    const GridSpec& spec = pairs[0].Ng.spec;
    const std::size_t count = spec.node_count();

    // density independence probe over usable nodes
    std::size_t probed = 0, singular = 0;
    std::vector<double> J(static_cast<std::size_t>(n) * n);
    for (std::size_t f = 0; f < count; ++f) {
        bool usable = true;
        for (int p = 0; p < n && usable; ++p)
            for (int k = 0; k < n; ++k)
                if (!pairs[p].g[k].valid(f)) {
                    usable = false;
                    break;
                }
        if (!usable) continue;
        for (int p = 0; p < n; ++p)
            for (int k = 0; k < n; ++k) J[p * n + k] = pairs[p].g[k].values[f];
        ++probed;
        if (std::fabs(unit_det(J, n)) <= 1e-8) ++singular;
    }
    if (probed == 0) throw DependentDensities("no usable nodes to probe density independence");
    if (singular * 2 > probed)
        throw DependentDensities("density Jacobian is singular at " + std::to_string(singular) +
                                 " of " + std::to_string(probed) + " probed nodes");

    FocalChart chart;
    chart.i = i;
    chart.spec = spec;
    chart.y.assign(n + 1, std::vector<double>(count, kNan));
    chart.mask.assign(count, 1);
    for (std::size_t f = 0; f < count; ++f) {
        bool usable = true;
        for (const ConservationPair& p : pairs)
            if (!p.Ng.valid(f) || !p.Mg.valid(f)) usable = false;
        double y0 = 0.0;
        if (usable) {
            try {
                y0 = eval(sys.lambda[i - 1], spec.point(spec.unflat(f)));
            } catch (const EvalError&) {
                usable = false;
            }
        }
        if (!usable || !std::isfinite(y0)) {
            chart.mask[f] = 0;
            continue;
        }
        chart.y[0][f] = y0;
        for (int k = 1; k <= n; ++k)
            chart.y[k][f] = y0 * pairs[k - 1].Ng.values[f] - pairs[k - 1].Mg.values[f];
    }

    // incidence guard: the stored point must satisfy the line equations
    for (std::size_t f = 0; f < count; ++f) {
        if (!chart.mask[f]) continue;
        for (int k = 1; k <= n; ++k) {
            const double line =
                pairs[k - 1].Ng.values[f] * chart.y[0][f] - pairs[k - 1].Mg.values[f];
            chart.incidence_residual =
                std::max(chart.incidence_residual, relative(chart.y[k][f], line));
        }
    }

    // drift of y^0 along every lattice line in the directions k != i
    for (int k = 0; k < n; ++k) {
        if (k == i - 1) continue;
        for (std::size_t f = 0; f < count; ++f) {
            std::vector<int> idx = spec.unflat(f);
            if (idx[k] != 0) continue;
            double baseline = kNan;
            for (int c = 0; c <= spec.axes[k].cells; ++c) {
                idx[k] = c;
                const std::size_t qf = spec.flat(idx);
                if (!chart.mask[qf]) continue;
                if (!std::isfinite(baseline)) {
                    baseline = chart.y[0][qf];
                    continue;
                }
                chart.pencil_variance =
                    std::max(chart.pencil_variance, std::fabs(chart.y[0][qf] - baseline));
            }
        }
    }
    return chart;
}

std::vector<ConservationPair> laplace_transform_congruence(
    const DiagonalSystem& sys, const CoeffTable& table,
    const std::vector<ConservationPair>& pairs, int i, int j) {
    const int n = sys.n;
    if (i < 1 || i > n || j < 1 || j > n || i == j)
        throw PrereqViolated("invalid component pair " + pair_label(i, j) +
                             " for n = " + std::to_string(n));
    if (table.Azero(i, j))
        throw PrereqViolated("a" + pair_label(i, j) +
                             " is identically zero, so the congruence transform is undefined");

    std::vector<ConservationPair> out;
    out.reserve(pairs.size());
    for (const ConservationPair& pair : pairs) {
        if (static_cast<int>(pair.g.size()) != n) throw Error("pair lacks derivative grids");
        const GridSpec& spec = pair.Ng.spec;
        ConservationPair bar;

        if (pair.closed_form()) {
            const Expr dNj = simplify(diff(pair.N, j));
            bar.N = simplify(pair.N - dNj / table.A(i, j));
            bar.M = simplify(pair.M - sys.lambda[i - 1] * dNj / table.A(i, j));
            bar.Ng = sample_field(bar.N, spec);
            bar.Mg = sample_field(bar.M, spec);
            bar.g.reserve(n);
            for (int k = 0; k < n; ++k)
                bar.g.push_back(sample_field(simplify(diff(bar.N, k + 1)), spec));
            out.push_back(std::move(bar));
            continue;
        }

        const std::size_t count = spec.node_count();
        bar.Ng.spec = spec;
        bar.Mg.spec = spec;
        bar.Ng.values.assign(count, 0.0);
        bar.Mg.values.assign(count, 0.0);
        std::vector<char> mask(count, 1);
        bool faulted = false;
        for (std::size_t f = 0; f < count; ++f) {
            bool ok = pair.Ng.valid(f) && pair.Mg.valid(f) && pair.g[j - 1].valid(f);
            double nv = 0.0, mv = 0.0;
            if (ok) {
                const std::vector<double> p = spec.point(spec.unflat(f));
                try {
                    const double a = eval(table.A(i, j), p);
                    const double lam = eval(sys.lambda[i - 1], p);
                    const double gj = pair.g[j - 1].values[f];
                    nv = pair.Ng.values[f] - gj / a;
                    mv = pair.Mg.values[f] - lam * gj / a;
                    ok = std::isfinite(nv) && std::isfinite(mv);
                } catch (const EvalError&) {
                    ok = false;
                }
            }
            if (!ok) {
                mask[f] = 0;
                faulted = true;
                continue;
            }
            bar.Ng.values[f] = nv;
            bar.Mg.values[f] = mv;
        }
        if (faulted) {
            bar.Ng.mask = mask;
            bar.Mg.mask = mask;
        }

        // derivatives by centered differences; the boundary ring is masked
        bar.g.assign(n, ScalarFieldGrid{});
        for (int k = 0; k < n; ++k) {
            bar.g[k].spec = spec;
            bar.g[k].values.assign(count, kNan);
            bar.g[k].mask.assign(count, 0);
            const double h = spec.axes[k].step();
            for (std::size_t f = 0; f < count; ++f) {
                std::vector<int> idx = spec.unflat(f);
                if (idx[k] < 1 || idx[k] >= spec.axes[k].cells) continue;
                std::vector<int> lo = idx, hi = idx;
                --lo[k];
                ++hi[k];
                const std::size_t lf = spec.flat(lo), hf = spec.flat(hi);
                if (!bar.Ng.valid(lf) || !bar.Ng.valid(hf) || !bar.Ng.valid(f)) continue;
                bar.g[k].values[f] = (bar.Ng.values[hf] - bar.Ng.values[lf]) / (2.0 * h);
                bar.g[k].mask[f] = 1;
            }
        }
        out.push_back(std::move(bar));
    }
    return out;
}

SpeedInvarianceReport verify_speed_invariance(const DiagonalSystem& sys, const CoeffTable& table,
                                              const SamplePlan& plan,
                                              const std::vector<ConservationPair>& pairs, int i,
                                              int j) {
    if (pairs.empty()) throw Error("speed invariance needs at least one pair");
    for (const ConservationPair& p : pairs)
        if (!same_axes(p.Ng.spec, pairs[0].Ng.spec))
            throw Error("pairs must share one lattice");

    SpeedInvarianceReport report;
    report.i = i;
    report.j = j;
    std::vector<ConservationPair> barred = laplace_transform_congruence(sys, table, pairs, i, j);
    const GridSpec& spec = pairs[0].Ng.spec;
    const int n = sys.n;
    const std::size_t count = spec.node_count();

    std::vector<Expr> lifted;
    bool have_lift = false;
    try {
        lifted = laplace_transform(sys, table, plan, i, j).transformed.lambda;
        have_lift = true;
    } catch (const Error& e) {
        report.degenerate.push_back(std::string("mu lift unavailable: ") + e.what());
        report.cross_residual = kNan;
    }

    const Expr dlam_ii = simplify(diff(sys.lambda[i - 1], i));

    report.speeds.assign(n, ScalarFieldGrid{});
    for (int k = 0; k < n; ++k) {
        report.speeds[k].spec = spec;
        report.speeds[k].values.assign(count, kNan);
        report.speeds[k].mask.assign(count, 0);
    }

    for (int k = 1; k <= n; ++k) {
        const double h = spec.axes[k - 1].step();
        std::size_t candidates = 0, formula_nodes = 0;
        for (std::size_t f = 0; f < count; ++f) {
            std::vector<int> idx = spec.unflat(f);
            if (idx[k - 1] < 2 || idx[k - 1] > spec.axes[k - 1].cells - 2) continue;

            // fourth-order differences per pair; remember the best-conditioned one
            double best_dn = 0.0, best_ds = kNan;
            std::vector<double> dMs, dNs;
            for (const ConservationPair& bar : barred) {
                double Mv[5], Nv[5];
                bool ok = true;
                for (int o = -2; o <= 2 && ok; ++o) {
                    std::vector<int> q = idx;
                    q[k - 1] += o;
                    const std::size_t qf = spec.flat(q);
                    if (!bar.Ng.valid(qf) || !bar.Mg.valid(qf)) {
                        ok = false;
                        break;
                    }
                    Mv[o + 2] = bar.Mg.values[qf];
                    Nv[o + 2] = bar.Ng.values[qf];
                }
                if (!ok) continue;
                const double dM = (-Mv[4] + 8 * Mv[3] - 8 * Mv[1] + Mv[0]) / (12.0 * h);
                const double dN = (-Nv[4] + 8 * Nv[3] - 8 * Nv[1] + Nv[0]) / (12.0 * h);
                dMs.push_back(dM);
                dNs.push_back(dN);
                if (std::fabs(dN) > std::fabs(best_dn) &&
                    std::fabs(dN) > 1e-9 * (1.0 + std::fabs(dM))) {
                    best_dn = dN;
                    best_ds = dM / dN;
                }
            }
            if (dMs.empty()) continue;
            ++candidates;

            const std::vector<double> p = spec.point(idx);
            bool have_formula = false;
            double s = 0.0;
            try {
                if (k == j) {
                    s = eval(sys.lambda[i - 1], p);
                    have_formula = true;
                } else if (k == i) {
                    const double dv = eval(dlam_ii, p);
                    double bv = 0.0;
                    if (!table.B(i, j).empty()) bv = eval(table.B(i, j), p);
                    if (std::fabs(bv) > 1e-9 * (1.0 + std::fabs(dv))) {
                        s = eval(sys.lambda[i - 1], p) - dv / bv;
                        have_formula = true;
                    }
                } else {
                    const double av = eval(table.A(i, j), p);
                    const double akj = table.Azero(k, j) ? 0.0 : eval(table.A(k, j), p);
                    const double den = av - akj;
                    if (std::fabs(den) > 1e-10 * (1.0 + std::fabs(av) + std::fabs(akj))) {
                        s = (av * eval(sys.lambda[k - 1], p) - akj * eval(sys.lambda[i - 1], p)) /
                            den;
                        have_formula = true;
                    }
                }
            } catch (const EvalError&) {
                have_formula = false;
            }

            if (have_formula) {
                ++formula_nodes;
                for (std::size_t q = 0; q < dMs.size(); ++q) {
                    report.relation_residual =
                        std::max(report.relation_residual, relative(dMs[q], s * dNs[q]));
                    ++report.checked;
                }
            }

            if (std::isfinite(best_ds)) {
                report.speeds[k - 1].values[f] = best_ds;
                report.speeds[k - 1].mask[f] = 1;
                if (have_lift) {
                    try {
                        const double lift = eval(lifted[k - 1], p);
                        report.cross_residual =
                            std::max(report.cross_residual, relative(best_ds, lift));
                    } catch (const EvalError&) {
                    }
                }
            }
        }
        if (candidates > 0 && formula_nodes == 0)
            report.degenerate.push_back("direction " + std::to_string(k) +
                                        ": relation denominator vanished at every probe; "
                                        "relation skipped");
    }
    return report;
}

DiagonalSystem reciprocal_speeds(const DiagonalSystem& sys, const SamplePlan& plan, const Expr& B,
                                 const Expr& A, const Expr& N, const Expr& M) {
    const int n = sys.n;
    if (B.empty() || A.empty() || N.empty() || M.empty())
        throw Error("reciprocal transform needs four non-empty expressions");

    std::vector<Expr> dB(n), dA(n), dN(n), dM(n);
    for (int k = 0; k < n; ++k) {
        dB[k] = simplify(diff(B, k + 1));
        dA[k] = simplify(diff(A, k + 1));
        dN[k] = simplify(diff(N, k + 1));
        dM[k] = simplify(diff(M, k + 1));
    }

    double worst_first = 0.0, worst_second = 0.0, min_den = std::numeric_limits<double>::infinity();
    int usable = 0;
    for (const std::vector<double>& p : plan.points) {
        try {
            for (int k = 0; k < n; ++k) {
                const double lam = eval(sys.lambda[k], p);
                worst_first =
                    std::max(worst_first, relative(eval(dA[k], p), lam * eval(dB[k], p)));
                worst_second =
                    std::max(worst_second, relative(eval(dM[k], p), lam * eval(dN[k], p)));
                const double mv = eval(M, p), nl = eval(N, p) * lam;
                min_den = std::min(min_den,
                                   std::fabs(mv - nl) / (1.0 + std::fabs(mv) + std::fabs(nl)));
            }
            ++usable;
        } catch (const EvalError&) {
            continue;
        }
    }
    if (usable == 0) throw Error("reciprocal validation failed: no sample point was evaluable");
    if (worst_first > sys.tol)
        throw Error("(B, A) is not a conservation law of the system: residual " +
                    fmt(worst_first));
    if (worst_second > sys.tol)
        throw Error("(N, M) is not a conservation law of the system: residual " +
                    fmt(worst_second));
    if (min_den <= 1e-8)
        throw Error("reciprocal denominator M - N lambda^i vanishes near a sample (min " +
                    fmt(min_den) + ")");

    DiagonalSystem out = sys;
    out.name = sys.name.empty() ? std::string("reciprocal") : sys.name + "-reciprocal";
    for (int k = 0; k < n; ++k)
        out.lambda[k] = simplify((B * sys.lambda[k] - A) / (M - N * sys.lambda[k]));
    return out;
}

}  // namespace ht
