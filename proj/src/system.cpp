#include "hydrotype/system.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ht {

double speed_gap(const DiagonalSystem& sys, const std::vector<double>& point) {
    std::vector<double> values(sys.n);
    for (int i = 0; i < sys.n; ++i) values[i] = eval(sys.lambda[i], point);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < sys.n; ++i)
        for (int j = i + 1; j < sys.n; ++j)
            best = std::min(best, std::abs(values[j] - values[i]));
    return best;
}

SamplePlan sample_plan(const DiagonalSystem& sys) {
    SamplePlan plan;
    const int n = sys.n;
    const int m = sys.samples;
    std::mt19937_64 rng(sys.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto coord = [&](int axis, double t) {
        const Interval& iv = sys.domain[axis];
        return iv.lo + t * (iv.hi - iv.lo);
    };

    // Returns true and records gap bookkeeping when the point is usable.
    auto admit = [&](const std::vector<double>& p) {
        double gap;
        try {
            gap = speed_gap(sys, p);
        } catch (const EvalError&) {
            return false;
        }
        if (gap < sys.eps_hyp) return false;
        if (gap < plan.worst_gap) {
            plan.worst_gap = gap;
            plan.worst_gap_point = p;
        }
        return true;
    };

    // Stratified (Latin hypercube) interior candidates: one stratum per point
    // and axis, independently permuted, jittered within the stratum.
    std::vector<std::vector<int>> perm(n, std::vector<int>(m));
    for (int d = 0; d < n; ++d) {
        for (int j = 0; j < m; ++j) perm[d][j] = j;
        std::shuffle(perm[d].begin(), perm[d].end(), rng);
    }

    int corners = n <= 12 ? (1 << n) : 0;
    plan.attempted = m + corners;
    const double budget = 0.10 * plan.attempted;

    auto note_rejection = [&](const std::vector<double>& p) {
        ++plan.rejected;
        if (plan.witness.empty()) plan.witness = p;
    };

    for (int j = 0; j < m && plan.rejected <= budget; ++j) {
        std::vector<double> p(n);
        for (int d = 0; d < n; ++d) p[d] = coord(d, (perm[d][j] + unit(rng)) / m);
        if (admit(p)) {
            plan.points.push_back(std::move(p));
            continue;
        }
        note_rejection(p);
        // Replacement draws are plain uniform; each miss burns budget too.
        for (int attempt = 0; attempt < 64 && plan.rejected <= budget; ++attempt) {
            for (int d = 0; d < n; ++d) p[d] = coord(d, unit(rng));
            if (admit(p)) {
                plan.points.push_back(std::move(p));
                break;
            }
            note_rejection(p);
        }
    }

    for (int c = 0; c < corners && plan.rejected <= budget; ++c) {
        std::vector<double> p(n);
        for (int d = 0; d < n; ++d) p[d] = (c >> d) & 1 ? sys.domain[d].hi : sys.domain[d].lo;
        if (admit(p)) plan.points.push_back(std::move(p));
        else note_rejection(p);
    }

    if (plan.rejected > budget) {
        plan.hyperbolic_ok = false;
        plan.failure_reason = "more than 10% of sample candidates rejected (speed gap below " +
                              format_double(sys.eps_hyp) + " or speeds not evaluable)";
    }
    return plan;
}

CoeffTable coefficient_table(const DiagonalSystem& sys, const SamplePlan& plan) {
    if (!plan.hyperbolic_ok)
        throw NotStrictlyHyperbolic("coefficient table unavailable: " + plan.failure_reason);
    const int n = sys.n;
    CoeffTable t;
    t.n = n;
    t.a.assign(n, std::vector<Expr>(n));
    t.a_zero.assign(n, std::vector<char>(n, 1));
    t.b.assign(n, std::vector<Expr>(n));
    t.da.assign(n, std::vector<std::vector<Expr>>(n, std::vector<Expr>(n)));

    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            Expr num = simplify(diff(sys.lambda[i], j + 1));
            t.a_zero[i][j] = num.is_const(0.0) ? 1 : 0;
            t.a[i][j] = simplify(num / (sys.lambda[j] - sys.lambda[i]));
        }
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            for (int k = 0; k < n; ++k)
                t.da[i][j][k] = simplify(diff(t.a[i][j], k + 1));
            if (!t.a_zero[i][j])
                t.b[i][j] = simplify(t.da[i][j][i] / t.a[i][j] - t.a[j][i]);
        }
    }
    return t;
}

namespace {

// Shared accumulation for identity checks: residual r against terms whose
// largest magnitude sets the scale, worst normalized value wins.
struct ResidualTracker {
    double worst = 0.0;
    std::vector<double> witness;
    int skipped = 0;

    void add(double r, double scale, const std::vector<double>& p) {
        double v = std::abs(r) / scale;
        if (v > worst) {
            worst = v;
            witness = p;
        }
    }
};

// Evaluates residual expression `R` against scale terms at every sample.
void scan(const Expr& R, const std::vector<Expr>& terms,
          const SamplePlan& plan, ResidualTracker& acc) {
    if (R.is_const(0.0)) return;  // proved symbolically
    for (const auto& p : plan.points) {
        try {
            double scale = 1.0;
            for (const Expr& t : terms) scale = std::max(scale, 1.0 + std::abs(eval(t, p)));
            acc.add(eval(R, p), scale, p);
        } catch (const EvalError&) {
            ++acc.skipped;
        }
    }
}

}  // namespace

CheckResult check_semihamiltonian(const DiagonalSystem& sys, const CoeffTable& table,
                                  const SamplePlan& plan) {
    if (sys.n == 2) {
        CheckResult r;
        r.flag = true;
        r.note = "vacuous for n = 2";
        return r;
    }
    ResidualTracker acc;
    for (int i = 1; i <= sys.n; ++i)
        for (int j = 1; j <= sys.n; ++j)
            for (int k = j + 1; k <= sys.n; ++k) {
                if (j == i || k == i) continue;
                Expr R = simplify(table.dA(i, k, j) - table.dA(i, j, k));
                scan(R, {table.dA(i, k, j), table.dA(i, j, k)}, plan, acc);
            }
    CheckResult r;
    r.residual = acc.worst;
    r.witness = std::move(acc.witness);
    r.flag = acc.worst <= sys.tol && acc.skipped <= static_cast<int>(plan.points.size()) / 2;
    if (acc.skipped > 0)
        r.note = std::to_string(acc.skipped) + " sample evaluations skipped (coefficient singular)";
    return r;
}

CheckResult check_commuting_compatibility(const DiagonalSystem& sys, const CoeffTable& table,
                                          const SamplePlan& plan) {
    if (sys.n == 2) {
        CheckResult r;
        r.flag = true;
        r.note = "vacuous for n = 2";
        return r;
    }
    ResidualTracker acc;
    for (int k = 1; k <= sys.n; ++k)
        for (int i = 1; i <= sys.n; ++i)
            for (int j = 1; j <= sys.n; ++j) {
                if (k == i || k == j || i == j) continue;
                Expr t1 = simplify(table.A(k, i) * table.A(i, j));
                Expr t2 = simplify(table.A(k, j) * table.A(j, i));
                Expr t3 = simplify(table.A(k, i) * table.A(k, j));
                Expr R = simplify(table.dA(k, i, j) - (t1 + t2 - t3));
                scan(R, {table.dA(k, i, j), t1, t2, t3}, plan, acc);
            }
    CheckResult r;
    r.residual = acc.worst;
    r.witness = std::move(acc.witness);
    r.flag = acc.worst <= sys.tol && acc.skipped <= static_cast<int>(plan.points.size()) / 2;
    if (acc.skipped > 0)
        r.note = std::to_string(acc.skipped) + " sample evaluations skipped (coefficient singular)";
    return r;
}

Order0Result check_darboux_order0(const DiagonalSystem& sys, const SamplePlan& plan, int i) {
    Order0Result r;
    bool symbolic = true;
    std::vector<Expr> partials;
    for (int k = 1; k <= sys.n; ++k) {
        if (k == i) continue;
        Expr d = simplify(diff(sys.lambda[i - 1], k));
        if (!d.is_const(0.0)) {
            symbolic = false;
            partials.push_back(d);
        }
    }
    if (symbolic) {
        r.flag = true;
        return r;
    }
    for (const Expr& d : partials) {
        for (const auto& p : plan.points) {
            double v;
            try {
                v = std::abs(eval(d, p));
            } catch (const EvalError&) {
                continue;
            }
            if (v > r.residual) {
                r.residual = v;
                r.witness = p;
            }
        }
    }
    if (r.residual <= sys.tol) {
        r.flag = true;
        r.numeric_only = true;
    }
    return r;
}

Order1Result check_darboux_order1(const DiagonalSystem& sys, const CoeffTable& table,
                                  const SamplePlan& plan, int i) {
    Order1Result r;
    std::vector<int> coupled;
    for (int k = 1; k <= sys.n; ++k) {
        if (k == i) continue;
        if (table.Azero(i, k)) r.skipped.push_back(k);
        else coupled.push_back(k);
    }
    if (coupled.empty()) return r;  // order 0; the first-order test does not apply
    r.applicable = true;
    r.witness_j = coupled.front();

    ResidualTracker acc;
    // Row-i symmetry d_j a_ik == d_k a_ij must hold even when the full
    // system is not semihamiltonian.
    for (int j = 1; j <= sys.n; ++j)
        for (int k = j + 1; k <= sys.n; ++k) {
            if (j == i || k == i) continue;
            Expr R = simplify(table.dA(i, k, j) - table.dA(i, j, k));
            scan(R, {table.dA(i, k, j), table.dA(i, j, k)}, plan, acc);
        }

    const int j0 = r.witness_j;
    const Expr& bj = table.B(i, j0);
    for (int k : coupled) {
        const Expr& bk = table.B(i, k);
        if (k != j0) {
            Expr Req = simplify(bk - bj);
            scan(Req, {bk, bj}, plan, acc);
        }
        Expr Rdecay = simplify(diff(bk, k) + table.A(i, k) * bk);
        scan(Rdecay, {simplify(diff(bk, k)), simplify(table.A(i, k) * bk)}, plan, acc);
    }

    r.residual = acc.worst;
    r.witness = std::move(acc.witness);
    r.flag = acc.worst <= sys.tol && acc.skipped <= static_cast<int>(plan.points.size()) / 2;
    if (acc.skipped > 0)
        r.note = std::to_string(acc.skipped) + " sample evaluations skipped (coefficient singular)";
    return r;
}

std::vector<bool> check_linear_degeneracy(const DiagonalSystem& sys) {
    std::vector<bool> flags(sys.n);
    for (int i = 1; i <= sys.n; ++i) flags[i - 1] = is_zero(diff(sys.lambda[i - 1], i));
    return flags;
}

DiagnosticsReport full_report(const DiagonalSystem& sys) {
    DiagnosticsReport rep;
    rep.sys = sys;
    SamplePlan plan = sample_plan(sys);
    rep.hyperbolic.flag = plan.hyperbolic_ok;
    rep.hyperbolic.worst_gap = plan.worst_gap;
    rep.hyperbolic.worst_gap_point = plan.worst_gap_point;
    rep.hyperbolic.rejected = plan.rejected;
    rep.hyperbolic.attempted = plan.attempted;
    rep.hyperbolic.witness = plan.witness;
    rep.hyperbolic.failure_reason = plan.failure_reason;
    rep.linearly_degenerate = check_linear_degeneracy(sys);
    if (!plan.hyperbolic_ok) return rep;  // coefficient sections stay absent

    CoeffTable table = coefficient_table(sys, plan);
    rep.semihamiltonian = check_semihamiltonian(sys, table, plan);
    rep.commuting = check_commuting_compatibility(sys, table, plan);
    bool all = true;
    for (int i = 1; i <= sys.n; ++i) {
        rep.order0.push_back(check_darboux_order0(sys, plan, i));
        rep.order1.push_back(check_darboux_order1(sys, table, plan, i));
        all = all && (rep.order0.back().flag || rep.order1.back().flag);
    }
    rep.darboux_order_le1 = all;
    return rep;
}

}  // namespace ht
