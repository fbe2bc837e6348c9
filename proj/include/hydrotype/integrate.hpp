#pragma once

#include <functional>
#include <vector>

#include "hydrotype/grid.hpp"
#include "hydrotype/hodograph.hpp"
#include "hydrotype/system.hpp"

namespace ht {

/** Scalar field sampled at a u-point. */
using FieldFn = std::function<double(const std::vector<double>&)>;

/** Orbit-system coefficient: evaluated at (u, x, t). */
using OrbitFn = std::function<double(const std::vector<double>&, double, double)>;

/** A staircase integration could not produce even the base value. */
struct BlowUp : Error {
    using Error::Error;
};

/** exp of the staircase quadrature of Σ_{k≠i} a_ik du^k from the i-axis
 *  point (u^i, base elsewhere) to u, legs in ascending axis order, composite
 *  Simpson with `substeps` subintervals per leg. Normalization H_i = 1 on
 *  the i-axis through base. */
double lame_value(const CoeffTable& table, int i, const std::vector<double>& base,
                  const std::vector<double>& u, int substeps = 16);

/** H_i on every node of `spec`; grid.defect is the worst loop integral of
 *  Σ a_ik du^k around a cell face in the (k,l) planes, k,l ≠ i (exactly 0
 *  when fewer than two off-axes exist). Nodes where the quadrature faults
 *  or leaves the representable range are masked, not fatal. */
ScalarFieldGrid lame_coefficients(const CoeffTable& table, int i,
                                  const std::vector<double>& base, const GridSpec& spec,
                                  int substeps = 16);

/** Closed Pfaffian system for the commuting-flow potentials:
 *
 *    dμ^i = b_i (μ^i − φ_i(u^i)) du^i + Σ_{k≠i} a_ik (μ^k − μ^i) du^k
 *
 * Empty b entries contribute nothing ("no coupled column" rows keep μ^i
 * constant). φ and fixed_mu follow the one-variable convention: written in
 * u1, evaluated at u^i. A non-empty fixed_mu entry replaces the ODE for
 * that component with the closed form μ^i = fixed_mu_i(u^i). */
struct PfaffianSpec {
    int n = 0;
    std::vector<std::vector<Expr>> a;  // a[i-1][k-1], diagonal and vanishing entries empty
    std::vector<Expr> b;               // b[i-1] = b_{i j_i}
    std::vector<Expr> phi;
    std::vector<int> j;                // chosen column per row, 0 when none
    std::vector<Expr> fixed_mu;
    double tol = 1e-9;
};

/** Rows with a coupled column take j from the order-1 witness and b from the
 *  table; rows without one get an empty b and j = 0. fixed_mu is left empty:
 *  callers opt in to closed-form components. */
PfaffianSpec pfaffian_from_table(const DiagonalSystem& sys, const CoeffTable& table,
                                 const SamplePlan& plan, const std::vector<Expr>& phi);

struct FrobeniusResult {
    std::vector<ScalarFieldGrid> mu;  // per component, masks aligned
    double reversed_defect = 0.0;     // ascending vs descending axis sweeps
    double commuting_residual = 0.0;  // FD check of ∂_k μ^i = a_ik (μ^k − μ^i)
    int blowups = 0;                  // masked nodes in the ascending sweep
    bool integrable_warning = false;  // reversed_defect > 100·tol
};

/** Fills μ on the grid by RK4 staircase sweeps from the node nearest `base`,
 *  starting values μ0. Throws BlowUp when the base node itself is not
 *  computable; later faults mask the rest of the affected line. */
FrobeniusResult integrate_frobenius_mu(const PfaffianSpec& spec, const GridSpec& grid,
                                       const std::vector<double>& base,
                                       const std::vector<double>& mu0, int substeps = 16);

/** P^i = H_i / (φ_i(u^i) − t λ^i_i H_i) at fixed t. Throws EvalError at
 *  construction when the denominator vanishes at `base`, and at evaluation
 *  on the breakdown locus. Callers guarantee b_ik ≡ 0 for k ≠ i. */
FieldFn p_for_b_zero(const DiagonalSystem& sys, const CoeffTable& table, int i, FieldFn H_i,
                     const Expr& phi_i, double t, const std::vector<double>& base);

/** Same quotient with t supplied per call, for orbit integration. */
OrbitFn p_for_b_zero(const DiagonalSystem& sys, const CoeffTable& table, int i, FieldFn H_i,
                     const Expr& phi_i, const std::vector<double>& base);

struct OrbitResult {
    SolutionGrid grid;
    VerifyReport verify;
    double cross_defect = 0.0;  // x-then-t sweep vs t-then-x sweep
    int masked = 0;             // lattice nodes never reached
};

/** Integrates du^i = P^i (dx + λ^i dt) over the (x,t) lattice by RK4 along
 *  staircase paths from the node nearest (x0, t0), where u = u0. Faulting
 *  cells end their line; the remaining nodes stay unconverged. */
OrbitResult integrate_orbit_solution(const DiagonalSystem& sys, const std::vector<OrbitFn>& P,
                                     double x0, double t0, const std::vector<double>& u0,
                                     const GridAxis& x_axis, const GridAxis& t_axis,
                                     int substeps = 16);

struct N2QuadratureResult {
    ScalarFieldGrid t_map;
    ScalarFieldGrid x_map;
    double omega_defect = 0.0;     // worst cell loop of the rotation form ω
    double reversed_defect = 0.0;  // axis-order disagreement of the sweeps
    double pde_residual = 0.0;     // via inversion; NaN when nothing inverts
    int singular_nodes = 0;        // interior nodes with a singular Jacobian
};

/** Two-component quadrature solution: integrates the closed forms
 *
 *    dt = Σ_i φ_i du^i/(H_i(λ^i − λ^other)) + t ω,   dx^i-leg = −λ^other dt-leg
 *
 * jointly as linear ODEs along staircase legs with t = x = 0 at the node
 * nearest `base`. The PDE residual inverts (t,x) by fourth-order centered
 * differences at nodes two cells inside the boundary whose Jacobian is
 * nonsingular. */
N2QuadratureResult solve_n2_quadrature(const DiagonalSystem& sys, const CoeffTable& table,
                                       FieldFn H_1, FieldFn H_2, const Expr& phi_1,
                                       const Expr& phi_2, const std::vector<double>& base,
                                       const GridSpec& uspec, int substeps = 16);

}  // namespace ht
