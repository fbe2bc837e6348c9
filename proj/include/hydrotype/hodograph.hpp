#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hydrotype/grid.hpp"
#include "hydrotype/system.hpp"

namespace ht {

/** μ^i given as a plain callable; partial derivatives fall back to centered
 *  differences with step `fd_step` (pick the cell scale for grid-backed μ). */
struct MuCallable {
    std::function<double(const std::vector<double>&)> value;
    double fd_step = 1e-6;
};

struct TsarevOptions {
    double newton_tol = 1e-12;  // on |F|_inf
    int max_iterations = 25;
    int max_halvings = 8;       // step damping when |F| grows
};

/** Solves μ^i(u) = λ^i(u) t + x per lattice node by safeguarded Newton.
 *
 * The sweep starts at the lattice node nearest (x_seed, t_seed) with the
 * given u seed and continues outward, warm-starting each node from its
 * solved neighbor. Non-convergence and singular Jacobians mark the node
 * unconverged; they are findings, not errors.
 */
SolutionGrid solve_tsarev(const DiagonalSystem& sys, const std::vector<Expr>& mu,
                          const GridAxis& x_axis, const GridAxis& t_axis,
                          const std::vector<double>& u_seed, double x_seed, double t_seed,
                          const TsarevOptions& opt = {});

SolutionGrid solve_tsarev(const DiagonalSystem& sys, const std::vector<MuCallable>& mu,
                          const GridAxis& x_axis, const GridAxis& t_axis,
                          const std::vector<double>& u_seed, double x_seed, double t_seed,
                          const TsarevOptions& opt = {});

/** Residual of u^i_t = λ^i u^i_x by centered differences at interior nodes
 *  whose full stencil converged, normalized by 1 + |u_t| + |λ u_x|. The
 *  per-node field is written back into grid.residual. */
struct VerifyReport {
    double max_residual = 0.0;
    int checked = 0;
    int skipped = 0;  // interior nodes lacking a converged stencil
    std::vector<double> worst_point;  // (x, t)
    int worst_component = 0;
};

VerifyReport verify_solution(const DiagonalSystem& sys, SolutionGrid& grid);

/** End-to-end refusal: the system is not Darboux-integrable at order ≤ 1 and
 *  --force was not given. */
struct PipelineRefused : Error {
    using Error::Error;
};

struct PipelineOptions {
    int u_cells = 24;       // μ / Lamé grid resolution per axis
    int substeps = 16;      // RK4 / Simpson substeps per cell
    bool force = false;     // run the generic route despite failed diagnostics
};

struct PipelineResult {
    std::string route;  // "tsarev-symbolic", "orbit", or "frobenius-tsarev"
    SolutionGrid grid;
    VerifyReport verify;
    double path_defect = 0.0;          // staircase or μ reversed-order defect
    double commuting_residual = 0.0;   // frobenius route only
    std::vector<std::string> notes;
};

/** Chooses a construction route from the diagnostics:
 *    - every component order 0: μ^i = φ_i(u^i) symbolically, then solve_tsarev;
 *    - all b_ik vanish numerically: closed-form P and orbit integration;
 *    - otherwise: Frobenius μ on a u-grid, interpolated into solve_tsarev.
 *  Refuses (PipelineRefused) when the order ≤ 1 gate fails, unless forced. */
PipelineResult pipeline_solve(const DiagonalSystem& sys, const std::vector<Expr>& phi,
                              const std::vector<double>& u0, double x0, double t0,
                              const GridAxis& x_axis, const GridAxis& t_axis,
                              const PipelineOptions& opt = {});

}  // namespace ht
