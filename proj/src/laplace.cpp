#include "hydrotype/laplace.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ht {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string point_label(const std::vector<double>& p) {
    std::string s = "(";
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (k) s += ", ";
        s += format_double(p[k]);
    }
    return s + ")";
}

std::string pair_label(int i, int j) {
    return "(" + std::to_string(i) + ", " + std::to_string(j) + ")";
}

void require_pair(const DiagonalSystem& sys, int i, int j) {
    if (i < 1 || i > sys.n || j < 1 || j > sys.n || i == j)
        throw PrereqViolated("invalid component pair " + pair_label(i, j) +
                             " for n = " + std::to_string(sys.n));
}

struct Denominator {
    Expr expr;
    double min_abs = kInf;
    std::vector<double> argmin;
};

// D = a_ji - d_i a_ij / a_ij. Zero syntactically, or smaller than tol at a
// sample, kills the step. Evaluation failures point at a_ij vanishing inside
// the box, which the pair hypotheses exclude.
Denominator step_denominator(const DiagonalSystem& sys, const CoeffTable& table,
                             const SamplePlan& plan, int i, int j) {
    require_pair(sys, i, j);
    if (table.Azero(i, j))
        throw PrereqViolated("a" + pair_label(i, j) +
                             " is identically zero, so the pair admits no elimination step");
    Denominator d;
    d.expr = simplify(table.A(j, i) - table.dA(i, j, i) / table.A(i, j));
    if (d.expr.is_const(0.0))
        throw DegenerateLaplace("step denominator for pair " + pair_label(i, j) +
                                " is identically zero");
    int failed = 0;
    std::vector<double> first_failure;
    for (const auto& p : plan.points) {
        try {
            double v = std::abs(eval(d.expr, p));
            if (v < d.min_abs) {
                d.min_abs = v;
                d.argmin = p;
            }
        } catch (const EvalError&) {
            if (failed++ == 0) first_failure = p;
        }
    }
    if (failed > static_cast<int>(plan.points.size()) / 2)
        throw PrereqViolated("step denominator for pair " + pair_label(i, j) +
                             " failed to evaluate at " + std::to_string(failed) +
                             " samples, first at " + point_label(first_failure));
    if (d.min_abs < sys.tol)
        throw DegenerateLaplace("step denominator for pair " + pair_label(i, j) +
                                " reaches |D| = " + format_double(d.min_abs) + " at " +
                                point_label(d.argmin));
    return d;
}

struct ResidualTracker {
    double worst = 0.0;
    std::vector<double> witness;

    void add(double r, double scale, const std::vector<double>& p) {
        double v = std::abs(r) / scale;
        if (v > worst) {
            worst = v;
            witness = p;
        }
    }
};

}  // namespace

LaplaceStep laplace_transform(const DiagonalSystem& sys, const CoeffTable& table,
                              const SamplePlan& plan, int i, int j) {
    Denominator den = step_denominator(sys, table, plan, i, j);

    LaplaceStep step;
    step.i = i;
    step.j = j;
    step.denominator = den.expr;
    step.min_abs_denominator = den.min_abs;

    std::vector<Expr> bar(sys.n);
    bar[j - 1] = sys.lambda[i - 1];  // shared handle, exact by construction
    bar[i - 1] = simplify(diff(sys.lambda[i - 1], i) / den.expr + sys.lambda[i - 1]);
    for (int k = 1; k <= sys.n; ++k) {
        if (k == i || k == j) continue;
        Expr gap = simplify(table.A(i, j) - table.A(k, j));
        if (gap.is_const(0.0))
            throw CollidingCoefficients("a" + pair_label(i, j) + " and a" + pair_label(k, j) +
                                        " coincide identically");
        double lo = kInf;
        std::vector<double> at;
        for (const auto& p : plan.points) {
            try {
                double v = std::abs(eval(gap, p));
                if (v < lo) {
                    lo = v;
                    at = p;
                }
            } catch (const EvalError&) {
            }
        }
        if (lo < sys.tol)
            throw CollidingCoefficients("a" + pair_label(i, j) + " - a" + pair_label(k, j) +
                                        " reaches " + format_double(lo) + " at " +
                                        point_label(at));
        bar[k - 1] = simplify(
            (table.A(i, j) * sys.lambda[k - 1] - table.A(k, j) * sys.lambda[i - 1]) / gap);
    }

    step.transformed = sys;
    step.transformed.lambda = std::move(bar);
    if (!sys.name.empty())
        step.transformed.name = sys.name + ":L" + std::to_string(i) + std::to_string(j);

    SamplePlan tplan = sample_plan(step.transformed);
    if (!tplan.hyperbolic_ok)
        throw DegenerateLaplace("transformed system for pair " + pair_label(i, j) +
                                " is not strictly hyperbolic: " + tplan.failure_reason);

    // Row i of the transformed a-table two ways: straight from the new speeds
    // and through the additive shift a_im + d_m D / D of the old row. They
    // must agree wherever both evaluate.
    ResidualTracker acc;
    const std::vector<Expr>& tl = step.transformed.lambda;
    for (int m = 1; m <= sys.n; ++m) {
        if (m == i) continue;
        Expr direct = simplify(diff(tl[i - 1], m) / (tl[m - 1] - tl[i - 1]));
        Expr additive = simplify(table.A(i, m) + diff(den.expr, m) / den.expr);
        Expr R = simplify(direct - additive);
        if (R.is_const(0.0)) continue;
        for (const auto& p : plan.points) {
            try {
                double dv = eval(direct, p);
                double av = eval(additive, p);
                acc.add(dv - av, 1.0 + std::max(std::abs(dv), std::abs(av)), p);
            } catch (const EvalError&) {
            }
        }
    }
    step.cross_residual = acc.worst;
    return step;
}

TransformedRow transformed_a(const DiagonalSystem& sys, const CoeffTable& table,
                             const SamplePlan& plan, int i, int j) {
    Denominator den = step_denominator(sys, table, plan, i, j);

    TransformedRow row;
    row.additive.assign(sys.n, Expr{});
    row.product.assign(sys.n, Expr{});
    for (int m = 1; m <= sys.n; ++m) {
        if (m == i) continue;
        row.additive[m - 1] = simplify(table.A(i, m) + diff(den.expr, m) / den.expr);
    }
    // b_ij = -D, so the product form reads a_im (1 - a_mj/a_ij)(1 - b_im/b_ij).
    for (int m = 1; m <= sys.n; ++m) {
        if (m == i || m == j || table.Azero(i, m)) continue;
        Expr f1 = simplify(Expr::constant(1) - table.A(m, j) / table.A(i, j));
        Expr f2 = simplify(Expr::constant(1) - table.B(i, m) / (-den.expr));
        row.product[m - 1] = simplify(table.A(i, m) * f1 * f2);
    }

    ResidualTracker acc;
    for (int m = 1; m <= sys.n; ++m) {
        if (row.product[m - 1].empty()) continue;
        for (const auto& p : plan.points) {
            try {
                double av = eval(row.additive[m - 1], p);
                double pv = eval(row.product[m - 1], p);
                acc.add(av - pv, 1.0 + std::max(std::abs(av), std::abs(pv)), p);
            } catch (const EvalError&) {
            }
        }
    }
    row.cross_residual = acc.worst;
    row.witness = std::move(acc.witness);
    return row;
}

SequenceResult sequence_terminates(const DiagonalSystem& sys, int i, int max_depth) {
    if (i < 1 || i > sys.n)
        throw PrereqViolated("component index " + std::to_string(i) + " out of range for n = " +
                             std::to_string(sys.n));

    struct Node {
        DiagonalSystem sys;
        std::vector<SequenceStep> path;  // ancestors' entries, oldest first
        int via_j = 0;
        int depth = 0;
    };

    auto key_of = [](const DiagonalSystem& s) {
        std::string k;
        for (const auto& l : s.lambda) {
            k += print_expr(simplify(l));
            k += ';';
        }
        return k;
    };

    SequenceResult res;
    std::deque<Node> queue;
    std::set<std::string> seen;

    Node root;
    root.sys = sys;
    // Search nodes are re-sampled at each depth; capping the plan keeps the
    // cost of deep, structurally grown speed trees bounded.
    root.sys.samples = std::min(root.sys.samples, 64);
    seen.insert(key_of(root.sys));
    queue.push_back(std::move(root));

    bool any_child = false;
    int root_degenerate = 0;

    while (!queue.empty()) {
        Node node = std::move(queue.front());
        queue.pop_front();
        ++res.explored;

        SamplePlan plan = sample_plan(node.sys);
        if (!plan.hyperbolic_ok) {
            res.branch_notes.push_back("depth " + std::to_string(node.depth) +
                                       ": lost strict hyperbolicity (" + plan.failure_reason +
                                       ")");
            continue;
        }
        CoeffTable table = coefficient_table(node.sys, plan);

        SequenceStep entry;
        entry.j = node.via_j;
        for (const auto& l : node.sys.lambda) entry.lambda_printed.push_back(print_expr(l));
        CheckResult sh = check_semihamiltonian(node.sys, table, plan);
        entry.semiham_residual = sh.residual;
        entry.semiham_ok = sh.flag;

        std::vector<SequenceStep> path = node.path;
        path.push_back(std::move(entry));

        Order0Result term = check_darboux_order0(node.sys, plan, i);
        if (term.flag) {
            res.outcome = SequenceResult::Outcome::terminated;
            res.steps = node.depth;
            res.numeric_only = term.numeric_only;
            res.path = std::move(path);
            return res;
        }
        if (node.depth == max_depth) continue;

        for (int j = 1; j <= sys.n; ++j) {
            if (j == i) continue;
            try {
                LaplaceStep step = laplace_transform(node.sys, table, plan, i, j);
                if (!seen.insert(key_of(step.transformed)).second) continue;
                Node child;
                child.sys = std::move(step.transformed);
                child.path = path;
                child.via_j = j;
                child.depth = node.depth + 1;
                queue.push_back(std::move(child));
                any_child = true;
            } catch (const DegenerateLaplace& e) {
                if (node.depth == 0) ++root_degenerate;
                res.branch_notes.push_back("depth " + std::to_string(node.depth) +
                                           ", j = " + std::to_string(j) + ": " + e.what());
            } catch (const CollidingCoefficients& e) {
                if (node.depth == 0) ++root_degenerate;
                res.branch_notes.push_back("depth " + std::to_string(node.depth) +
                                           ", j = " + std::to_string(j) + ": " + e.what());
            } catch (const PrereqViolated& e) {
                res.branch_notes.push_back("depth " + std::to_string(node.depth) +
                                           ", j = " + std::to_string(j) + ": " + e.what());
            }
        }
    }

    // No termination found. When the root could not take a single step the
    // failure mode names the outcome; otherwise the depth budget ran out.
    if (!any_child)
        res.outcome = root_degenerate > 0 ? SequenceResult::Outcome::degenerate
                                          : SequenceResult::Outcome::prereq_violated;
    else
        res.outcome = SequenceResult::Outcome::not_terminated;
    return res;
}

namespace {

// Polynomial in the slope variable w = u^i_x with expression coefficients;
// coeffs[p] multiplies w^p, and empty handles count as zero.
using WPoly = std::vector<Expr>;

bool coeff_zero(const Expr& e) { return e.empty() || e.is_const(0.0); }

bool wp_zero(const WPoly& p) {
    for (const auto& c : p)
        if (!coeff_zero(c)) return false;
    return true;
}

WPoly wp_add(const WPoly& a, const WPoly& b) {
    WPoly r(std::max(a.size(), b.size()));
    for (std::size_t k = 0; k < r.size(); ++k) {
        const Expr* x = k < a.size() && !coeff_zero(a[k]) ? &a[k] : nullptr;
        const Expr* y = k < b.size() && !coeff_zero(b[k]) ? &b[k] : nullptr;
        if (x && y)
            r[k] = simplify(*x + *y);
        else if (x)
            r[k] = *x;
        else if (y)
            r[k] = *y;
    }
    return r;
}

WPoly wp_neg(const WPoly& a) {
    WPoly r(a.size());
    for (std::size_t k = 0; k < a.size(); ++k)
        if (!coeff_zero(a[k])) r[k] = simplify(-a[k]);
    return r;
}

WPoly wp_mul(const WPoly& a, const WPoly& b) {
    if (wp_zero(a) || wp_zero(b)) return {};
    WPoly r(a.size() + b.size() - 1);
    for (std::size_t p = 0; p < a.size(); ++p) {
        if (coeff_zero(a[p])) continue;
        for (std::size_t q = 0; q < b.size(); ++q) {
            if (coeff_zero(b[q])) continue;
            Expr term = simplify(a[p] * b[q]);
            r[p + q] = coeff_zero(r[p + q]) ? term : simplify(r[p + q] + term);
        }
    }
    return r;
}

WPoly wp_diff_u(const WPoly& a, int var) {
    WPoly r(a.size());
    for (std::size_t k = 0; k < a.size(); ++k)
        if (!coeff_zero(a[k])) r[k] = simplify(diff(a[k], var));
    return r;
}

WPoly wp_diff_w(const WPoly& a) {
    if (a.size() < 2) return {};
    WPoly r(a.size() - 1);
    for (std::size_t k = 1; k < a.size(); ++k)
        if (!coeff_zero(a[k]))
            r[k - 1] = simplify(Expr::constant(static_cast<double>(k)) * a[k]);
    return r;
}

double wp_eval(const WPoly& p, const std::vector<double>& u, double w) {
    double r = 0.0, wk = 1.0;
    for (const auto& c : p) {
        if (!coeff_zero(c)) r += eval(c, u) * wk;
        wk *= w;
    }
    return r;
}

// A vector field on (x, t, u^1..u^n, w); components are w-polynomials whose
// coefficients depend on u only. Component layout: 0 = x, 1 = t, 2..n+1 = u,
// n+2 = w.
using Field = std::vector<WPoly>;

Field commutator(const Field& X, const Field& Y, int n) {
    Field C(n + 3);
    for (int c = 0; c < n + 3; ++c) {
        WPoly acc;
        // x and t never appear in the coefficients, so those derivative
        // directions contribute nothing.
        for (int b = 2; b < n + 3; ++b) {
            if (!wp_zero(X[b]) && !wp_zero(Y[c])) {
                WPoly dYc = b == n + 2 ? wp_diff_w(Y[c]) : wp_diff_u(Y[c], b - 1);
                acc = wp_add(acc, wp_mul(X[b], dYc));
            }
            if (!wp_zero(Y[b]) && !wp_zero(X[c])) {
                WPoly dXc = b == n + 2 ? wp_diff_w(X[c]) : wp_diff_u(X[c], b - 1);
                acc = wp_add(acc, wp_neg(wp_mul(Y[b], dXc)));
            }
        }
        C[c] = std::move(acc);
    }
    return C;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

// Distance from v to the span of the columns, by modified Gram-Schmidt.
double span_residual(const std::vector<std::vector<double>>& cols, std::vector<double> v) {
    std::vector<std::vector<double>> q;
    for (auto c : cols) {
        for (const auto& u : q) {
            double d = dot(u, c);
            for (std::size_t k = 0; k < c.size(); ++k) c[k] -= d * u[k];
        }
        double nr = norm(c);
        if (nr > 1e-12) {
            for (auto& x : c) x /= nr;
            q.push_back(std::move(c));
        }
    }
    for (const auto& u : q) {
        double d = dot(u, v);
        for (std::size_t k = 0; k < v.size(); ++k) v[k] -= d * u[k];
    }
    return norm(v);
}

}  // namespace

InvolutivityResult order1_oracle(const DiagonalSystem& sys, const CoeffTable& table,
                                 const SamplePlan& plan, int i) {
    if (i < 1 || i > sys.n)
        throw PrereqViolated("component index " + std::to_string(i) + " out of range for n = " +
                             std::to_string(sys.n));
    InvolutivityResult res;

    int j0 = 0;  // first coupled direction, matching the order-1 check
    for (int k = 1; k <= sys.n; ++k)
        if (k != i && !table.Azero(i, k)) {
            j0 = k;
            break;
        }
    if (j0 == 0) return res;  // component already decoupled, nothing to probe
    res.applicable = true;

    const int n = sys.n;
    const int dim = n + 3;
    std::vector<Field> fields;

    // Characteristic direction along the i-th family, lifted to the slope:
    // d_t - lambda^i d_x + (d_i lambda^i) w^2 d_w.
    Field xi(dim);
    xi[0] = WPoly{simplify(-sys.lambda[i - 1])};
    xi[1] = WPoly{Expr::constant(1)};
    Expr lam_ii = simplify(diff(sys.lambda[i - 1], i));
    if (!coeff_zero(lam_ii)) xi[n + 2] = WPoly{Expr{}, Expr{}, lam_ii};
    fields.push_back(std::move(xi));

    // Transverse directions d_k + a_ik w d_w for every k != i.
    for (int k = 1; k <= n; ++k) {
        if (k == i) continue;
        Field eta(dim);
        eta[k + 1] = WPoly{Expr::constant(1)};
        if (!table.Azero(i, k)) eta[n + 2] = WPoly{Expr{}, table.A(i, k)};
        fields.push_back(std::move(eta));
    }

    // First-derivative direction -d_x + b_ij w^2 d_w for the chosen pair.
    Field zeta(dim);
    zeta[0] = WPoly{Expr::constant(-1)};
    if (!coeff_zero(table.B(i, j0))) zeta[n + 2] = WPoly{Expr{}, Expr{}, table.B(i, j0)};
    fields.push_back(std::move(zeta));

    std::vector<Field> brackets;
    for (std::size_t p = 0; p < fields.size(); ++p)
        for (std::size_t q = p + 1; q < fields.size(); ++q) {
            Field c = commutator(fields[p], fields[q], n);
            bool all_zero = true;
            for (const auto& comp : c)
                if (!wp_zero(comp)) {
                    all_zero = false;
                    break;
                }
            if (!all_zero) brackets.push_back(std::move(c));
        }
    if (brackets.empty()) {
        res.involutive = true;
        return res;
    }

    std::vector<double> slopes = {-1.0, 0.5, 2.0};
    std::mt19937_64 rng(sys.seed + 0x1f3d5b79u);
    std::uniform_real_distribution<double> draw(0.25, 2.0);
    slopes.push_back(draw(rng));
    slopes.push_back(-draw(rng));

    std::size_t n_points = std::min<std::size_t>(plan.points.size(), 40);
    for (std::size_t pi = 0; pi < n_points; ++pi) {
        const auto& u = plan.points[pi];
        for (double w : slopes) {
            try {
                std::vector<std::vector<double>> cols;
                cols.reserve(fields.size());
                for (const auto& f : fields) {
                    std::vector<double> col(dim, 0.0);
                    for (int c = 0; c < dim; ++c)
                        if (!wp_zero(f[c])) col[c] = wp_eval(f[c], u, w);
                    cols.push_back(std::move(col));
                }
                for (const auto& br : brackets) {
                    std::vector<double> v(dim, 0.0);
                    for (int c = 0; c < dim; ++c)
                        if (!wp_zero(br[c])) v[c] = wp_eval(br[c], u, w);
                    double r = span_residual(cols, v) / (1.0 + norm(v));
                    if (r > res.defect) {
                        res.defect = r;
                        res.witness_u = u;
                        res.witness_w = w;
                    }
                }
            } catch (const EvalError&) {
            }
        }
    }
    res.involutive = res.defect <= sys.tol;
    return res;
}

}  // namespace ht
