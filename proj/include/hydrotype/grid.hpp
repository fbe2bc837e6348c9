#pragma once

#include <cstddef>
#include <vector>

#include "hydrotype/expr.hpp"
#include "hydrotype/system.hpp"

namespace ht {

/** Uniform subdivision of [lo, hi] into `cells` intervals (cells+1 nodes). */
struct GridAxis {
    double lo = 0.0;
    double hi = 1.0;
    int cells = 1;

    double step() const { return (hi - lo) / cells; }
    double coord(int k) const { return lo + k * step(); }
    /** Index of the node closest to v, clamped to the axis. */
    int nearest(double v) const;
};

struct GridSpec {
    std::vector<GridAxis> axes;

    int dim() const { return static_cast<int>(axes.size()); }
    std::size_t node_count() const;
    std::size_t flat(const std::vector<int>& idx) const;
    std::vector<int> unflat(std::size_t flat_index) const;
    std::vector<double> point(const std::vector<int>& idx) const;
    std::vector<int> nearest(const std::vector<double>& p) const;
};

/** Grid spec covering a box with the same cell count on every axis. */
GridSpec box_grid(const std::vector<Interval>& box, int cells_per_axis);

/** Scalar samples on a grid, plus the bookkeeping the integrators attach.
 *
 * `mask` is empty when every node is valid; otherwise mask[k] == 0 marks a
 * node the construction could not reach (blow-up or breakdown locus).
 * `defect` is the worst path-independence defect observed while filling.
 */
struct ScalarFieldGrid {
    GridSpec spec;
    std::vector<double> values;
    std::vector<char> mask;
    double defect = 0.0;
    std::vector<double> base;

    double at(const std::vector<int>& idx) const { return values[spec.flat(idx)]; }
    bool valid(std::size_t flat_index) const { return mask.empty() || mask[flat_index]; }

    /** Multilinear interpolation; the query is clamped into the box.
     *  Throws EvalError when a supporting node is masked. */
    double interpolate(const std::vector<double>& p) const;

    /** Tensor-product 4-point Lagrange interpolation (stencils shifted at the
     *  boundary). Same clamping and masking behavior. */
    double interpolate_cubic(const std::vector<double>& p) const;
};

/** u(x, t) samples on a rectangular lattice with per-node solver state. */
struct SolutionGrid {
    GridAxis x, t;
    int n = 0;
    std::vector<std::vector<double>> u;  // u[comp][flat(ix, it)]
    std::vector<char> converged;
    std::vector<int> iterations;
    std::vector<double> residual;  // filled by verify_solution

    std::size_t node_count() const {
        return static_cast<std::size_t>(x.cells + 1) * (t.cells + 1);
    }
    std::size_t flat(int ix, int it) const {
        return static_cast<std::size_t>(it) * (x.cells + 1) + ix;
    }
    void allocate(int n_comps);
};

}  // namespace ht
