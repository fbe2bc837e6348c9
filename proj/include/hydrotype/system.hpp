#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hydrotype/expr.hpp"

namespace ht {

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

/** Raised when the strict-hyperbolicity gate fails or a coefficient operation
 *  is attempted on a system that failed it. */
struct NotStrictlyHyperbolic : Error {
    using Error::Error;
};

/** A diagonal system u^i_t = lambda^i(u) u^i_x on a box domain.
 *
 * All diagnostics sample the box with the same seeded plan, so two runs with
 * identical configuration see identical points.
 */
struct DiagonalSystem {
    int n = 0;
    std::vector<Expr> lambda;      // lambda[i] is the speed of component i+1
    std::vector<Interval> domain;  // per-variable bounds
    double eps_hyp = 1e-8;         // minimal admissible speed gap at a sample
    double tol = 1e-9;             // residual tolerance for numeric identities
    int samples = 200;             // Latin-hypercube sample count
    std::uint64_t seed = 0;
    std::string name;              // label echoed into reports
};

/** Deterministic sample set: stratified interior points plus the box corners.
 *
 * Candidates closer than eps_hyp to a speed collision (or where a speed fails
 * to evaluate) are rejected, counted, and replaced; spending more than 10% of
 * the budget on rejections fails the hyperbolicity gate.
 */
struct SamplePlan {
    std::vector<std::vector<double>> points;
    int attempted = 0;
    int rejected = 0;
    bool hyperbolic_ok = true;
    double worst_gap = std::numeric_limits<double>::infinity();
    std::vector<double> worst_gap_point;
    std::vector<double> witness;  // a rejected point, set when the gate fails
    std::string failure_reason;
};

SamplePlan sample_plan(const DiagonalSystem& sys);

/** Smallest pairwise speed gap at one point. Throws EvalError. */
double speed_gap(const DiagonalSystem& sys, const std::vector<double>& point);

/** Off-diagonal interaction coefficients of the diagonal system:
 *
 *   a_ij = (d_j lambda^i) / (lambda^j - lambda^i)
 *   b_ij = (d_i a_ij) / a_ij - a_ji        (only where a_ij is not
 *                                           identically zero)
 *
 * a_zero marks rows proved zero syntactically, which by construction is
 * exactly "d_j lambda^i simplifies to 0". da[i][j][k] caches d_k a_ij.
 * Indices are 0-based internally; diagonal slots hold empty handles.
 */
struct CoeffTable {
    int n = 0;
    std::vector<std::vector<Expr>> a;
    std::vector<std::vector<char>> a_zero;
    std::vector<std::vector<Expr>> b;
    std::vector<std::vector<std::vector<Expr>>> da;

    const Expr& A(int i, int j) const { return a[i - 1][j - 1]; }
    bool Azero(int i, int j) const { return a_zero[i - 1][j - 1] != 0; }
    const Expr& B(int i, int j) const { return b[i - 1][j - 1]; }
    const Expr& dA(int i, int j, int k) const { return da[i - 1][j - 1][k - 1]; }
};

/** Builds the coefficient table. Requires a passing sample plan; throws
 *  NotStrictlyHyperbolic otherwise. */
CoeffTable coefficient_table(const DiagonalSystem& sys, const SamplePlan& plan);

/** Outcome of one numeric identity check over the sample plan. Residuals are
 *  normalized by scale = 1 + (largest magnitude among the identity's terms at
 *  the point). */
struct CheckResult {
    bool flag = false;
    double residual = 0.0;  // worst normalized residual observed
    std::vector<double> witness;
    std::string note;
};

/** d_j a_ik == d_k a_ij over all distinct triples. Vacuously true for n = 2. */
CheckResult check_semihamiltonian(const DiagonalSystem& sys, const CoeffTable& table,
                                  const SamplePlan& plan);

/** d_j a_ki == a_ki a_ij + a_kj a_ji - a_ki a_kj over all distinct triples;
 *  the closure condition for the commuting-flow equations. */
CheckResult check_commuting_compatibility(const DiagonalSystem& sys, const CoeffTable& table,
                                          const SamplePlan& plan);

struct Order0Result {
    bool flag = false;
    bool numeric_only = false;  // zero only up to tol at the samples
    double residual = 0.0;
    std::vector<double> witness;
};

/** Component i decouples completely: d_k lambda^i == 0 for every k != i. */
Order0Result check_darboux_order0(const DiagonalSystem& sys, const SamplePlan& plan, int i);

struct Order1Result {
    bool applicable = false;  // false when component i is already order 0
    bool flag = false;
    int witness_j = 0;          // coupled direction used for the b-conditions
    std::vector<int> skipped;   // directions with a_ik identically zero
    double residual = 0.0;
    std::vector<double> witness;
    std::string note;
};

/** First-order decoupling test for component i:
 *    - d_j a_ik == d_k a_ij for all j,k != i,
 *    - some coupled j has d_j b_ij + a_ij b_ij == 0,
 *    - every coupled k has b_ik == b_ij and d_k b_ik + a_ik b_ik == 0.
 *  Directions with a_ik identically zero are exempt and reported in
 *  `skipped`. */
Order1Result check_darboux_order1(const DiagonalSystem& sys, const CoeffTable& table,
                                  const SamplePlan& plan, int i);

/** d_i lambda^i identically zero, per component. Purely syntactic; does not
 *  need hyperbolicity. */
std::vector<bool> check_linear_degeneracy(const DiagonalSystem& sys);

struct HyperbolicityResult {
    bool flag = false;
    double worst_gap = 0.0;
    std::vector<double> worst_gap_point;
    int rejected = 0;
    int attempted = 0;
    std::vector<double> witness;
    std::string failure_reason;
};

/** Everything the diagnose command reports. Coefficient-based sections are
 *  absent when the hyperbolicity gate fails. */
struct DiagnosticsReport {
    DiagonalSystem sys;
    HyperbolicityResult hyperbolic;
    std::vector<bool> linearly_degenerate;
    std::optional<CheckResult> semihamiltonian;
    std::optional<CheckResult> commuting;
    std::vector<Order0Result> order0;
    std::vector<Order1Result> order1;
    std::optional<bool> darboux_order_le1;
};

DiagnosticsReport full_report(const DiagonalSystem& sys);

}  // namespace ht
