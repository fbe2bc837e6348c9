#pragma once

#include "hydrotype/system.hpp"

namespace ht {

/** Pair prerequisites unmet: a_ij identically zero, or a coefficient the
 *  formulas divide by vanishes at a sample point. */
struct PrereqViolated : Error {
    using Error::Error;
};

/** The step denominator D = a_ji - d_i a_ij / a_ij (= -b_ij) vanishes. */
struct DegenerateLaplace : Error {
    using Error::Error;
};

/** a_ij == a_kj somewhere, so the bystander speed formula breaks down. */
struct CollidingCoefficients : Error {
    using Error::Error;
};

/** One elimination step on the pair (i, j).
 *
 * New speeds: bar lambda^j = lambda^i,
 *             bar lambda^i = d_i lambda^i / D + lambda^i,
 *             bar lambda^k = (a_ij lambda^k - a_kj lambda^i) / (a_ij - a_kj).
 *
 * The step is only emitted when the transformed system is itself strictly
 * hyperbolic on the sample plan.
 */
struct LaplaceStep {
    int i = 0, j = 0;
    DiagonalSystem transformed;
    Expr denominator;                  // D as an expression
    double min_abs_denominator = 0.0;  // over the samples
    double cross_residual = 0.0;       // row-i a's: derived vs additive form
};

LaplaceStep laplace_transform(const DiagonalSystem& sys, const CoeffTable& table,
                              const SamplePlan& plan, int i, int j);

/** Row i of the transformed a-table, two independent ways:
 *    additive: bar a_im = a_im + d_m D / D            (every m != i)
 *    product:  bar a_im = a_im (1 - a_mj/a_ij)(1 - b_im/b_ij)   (m != i, j,
 *              and only where a_im is not identically zero)
 *  cross_residual is their worst normalized disagreement at the samples. */
struct TransformedRow {
    std::vector<Expr> additive;  // additive[m-1]; empty handle at m = i
    std::vector<Expr> product;   // product[m-1]; empty where not applicable
    double cross_residual = 0.0;
    std::vector<double> witness;
};

TransformedRow transformed_a(const DiagonalSystem& sys, const CoeffTable& table,
                             const SamplePlan& plan, int i, int j);

/** One node of the elimination search. j = 0 marks the starting system. */
struct SequenceStep {
    int j = 0;
    std::vector<std::string> lambda_printed;
    double semiham_residual = 0.0;
    bool semiham_ok = true;
};

struct SequenceResult {
    enum class Outcome { terminated, not_terminated, degenerate, prereq_violated };
    Outcome outcome = Outcome::not_terminated;
    int steps = 0;               // depth of the terminating system
    std::vector<SequenceStep> path;  // root first, then each applied step
    bool numeric_only = false;   // row vanished only up to tol at the samples
    int explored = 0;            // distinct systems visited
    std::vector<std::string> branch_notes;
};

/** Breadth-first search over pair choices (i fixed, all j) up to max_depth,
 *  memoized on the printed speed vector; returns the shortest terminating
 *  path. Terminated means every a_im of the current system vanishes. Search
 *  nodes cap the sample budget at 64 points per system to keep deep trees,
 *  whose speeds grow structurally with every step, affordable. */
SequenceResult sequence_terminates(const DiagonalSystem& sys, int i, int max_depth = 3);

/** Numeric involutivity probe for the characteristic distribution of
 *  component i, extended by the first-derivative direction. Commutators are
 *  assembled symbolically and tested for membership in the span at sample
 *  points (u from the plan, u^i_x from a fixed slate plus seeded draws). */
struct InvolutivityResult {
    bool applicable = false;  // false when the component is already order 0
    bool involutive = false;
    double defect = 0.0;  // worst normalized out-of-span residual
    std::vector<double> witness_u;
    double witness_w = 0.0;
};

InvolutivityResult order1_oracle(const DiagonalSystem& sys, const CoeffTable& table,
                                 const SamplePlan& plan, int i);

}  // namespace ht
