#pragma once

#include <string>
#include <vector>

#include "hydrotype/grid.hpp"
#include "hydrotype/laplace.hpp"
#include "hydrotype/system.hpp"

namespace ht {

/** The density Jacobian (rows d_k N^p) is singular at most probe nodes, so the
 *  pairs do not span a congruence. */
struct DependentDensities : Error {
    using Error::Error;
};

/** One conservation law N dx + M dt of the system.
 *
 * Grids are the primary representation; N and M hold closed forms only when
 * the pair was built from expressions. g[k-1] samples d_k N on the same
 * lattice. mixed_defect is the worst normalized residual of the density
 * equation N_ij = a_ij N_i + a_ji N_j: second partials are exact (symbolic)
 * for closed-form pairs; solved pairs use fourth-order cross differences and
 * audit only the deep interior, two cells inside along both axes.
 */
struct ConservationPair {
    Expr N, M;
    ScalarFieldGrid Ng, Mg;
    std::vector<ScalarFieldGrid> g;
    double mixed_defect = 0.0;

    bool closed_form() const { return !N.empty() && !M.empty(); }
};

/** Validates a closed-form pair against the flux identities d_i M = λ^i d_i N
 *  and the density equation at the plan samples, then samples everything onto
 *  the grid. Throws Error with the worst residual when an identity fails. */
ConservationPair pair_from_exprs(const DiagonalSystem& sys, const CoeffTable& table,
                                 const SamplePlan& plan, const Expr& N, const Expr& M,
                                 const GridSpec& spec);

/** Density data on the coordinate axes through `base`: f[i-1] is N restricted
 *  to the i-th axis, written in u1 and evaluated at u^i. Only f[0] anchors the
 *  value of N; for i > 1 the variation f_i(u^i) - f_i(base_i) enters, so the
 *  restrictions need not agree at the crossing point. */
struct AxisData {
    std::vector<Expr> f;
    std::vector<double> base;
};

struct DensityOptions {
    int substeps = 4;     // RK4 / Simpson substeps per grid cell
    int max_sweeps = 40;  // fixpoint iterations over the g system
    double tol = 1e-10;   // sup-norm change that counts as converged
};

/** Integrates the first-order system d_j g_i = a_ij g_i + a_ji g_j (j ≠ i)
 *  outward from the axis data by staircase sweeps, iterated to a fixpoint
 *  because each sweep needs the other components along its line. N and M are
 *  then reconstructed by quadrature (M anchored to 0 at the base). The base
 *  point is snapped to the nearest lattice node.
 *  Throws BlowUp past 1e12, Error on evaluation faults or a stalled fixpoint.
 */
ConservationPair solve_density(const DiagonalSystem& sys, const CoeffTable& table,
                               const AxisData& axis, const GridSpec& spec,
                               const DensityOptions& opt = {});

/** Affine chart of the i-th focal submanifold over the u-lattice:
 *  y^0 = λ^i, y^k = λ^i N^k - M^k for the supplied basis of pairs. */
struct FocalChart {
    int i = 0;
    GridSpec spec;
    std::vector<std::vector<double>> y;  // y[m][flat], m = 0..n
    std::vector<char> mask;              // 0 marks nodes with unusable inputs
    double incidence_residual = 0.0;     // focal point vs the line equations
    double pencil_variance = 0.0;        // worst drift of y^0 along u^k lines, k ≠ i
};

/** Requires exactly n pairs on one common lattice with independent densities
 *  (throws DependentDensities when the Jacobian is singular at most nodes). */
FocalChart focal_chart(const DiagonalSystem& sys, const std::vector<ConservationPair>& pairs,
                       int i);

/** Congruence Laplace transform for the pair (i, j):
 *    barN^k = N^k - d_j N^k / a_ij,   barM^k = M^k - λ^i d_j N^k / a_ij.
 *  Closed-form pairs transform symbolically; grid pairs use their stored g.
 *  The result's g grids come from centered differences (boundary masked), and
 *  mixed_defect is left 0: the transformed pair solves the transformed
 *  system, not the one `table` describes. */
std::vector<ConservationPair> laplace_transform_congruence(const DiagonalSystem& sys,
                                                           const CoeffTable& table,
                                                           const std::vector<ConservationPair>& pairs,
                                                           int i, int j);

/** Finite-difference audit of the transformed flux relations
 *    d_k barM = ((a_ij λ^k - a_kj λ^i)/(a_ij - a_kj)) d_k barN   (k ≠ i, j)
 *    d_i barM = (λ^i - λ^i_i / b_ij) d_i barN
 *    d_j barM = λ^i d_j barN
 *  on the deep interior (fourth-order stencils two cells inside). speeds[k-1]
 *  holds the extracted quotient d_k barM / d_k barN, taken per node from the
 *  best-conditioned pair; it must not depend on the density basis.
 *  cross_residual compares the extraction against the lifted speeds of
 *  laplace_transform and is NaN when the lift itself is degenerate. */
struct SpeedInvarianceReport {
    int i = 0, j = 0;
    double relation_residual = 0.0;
    double cross_residual = 0.0;
    std::vector<ScalarFieldGrid> speeds;
    std::vector<std::string> degenerate;  // relations or lifts skipped, with reasons
    int checked = 0;                      // finite-difference probes taken
};

SpeedInvarianceReport verify_speed_invariance(const DiagonalSystem& sys, const CoeffTable& table,
                                              const SamplePlan& plan,
                                              const std::vector<ConservationPair>& pairs, int i,
                                              int j);

/** Reciprocal change of independent variables dX = B dx + A dt,
 *  dT = N dx + M dt: returns the system with speeds
 *  (B λ^i - A)/(M - N λ^i) on the same box. Both (B, A) and (N, M) must be
 *  conservation laws at the samples and every denominator must stay away
 *  from zero; violations throw Error with the offending residual. */
DiagonalSystem reciprocal_speeds(const DiagonalSystem& sys, const SamplePlan& plan, const Expr& B,
                                 const Expr& A, const Expr& N, const Expr& M);

}  // namespace ht
