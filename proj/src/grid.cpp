#include "hydrotype/grid.hpp"

#include <algorithm>
#include <cmath>

namespace ht {

int GridAxis::nearest(double v) const {
    int k = static_cast<int>(std::lround((v - lo) / step()));
    return std::clamp(k, 0, cells);
}

std::size_t GridSpec::node_count() const {
    std::size_t total = 1;
    for (const auto& ax : axes) total *= static_cast<std::size_t>(ax.cells + 1);
    return total;
}

std::size_t GridSpec::flat(const std::vector<int>& idx) const {
    // Axis 0 is the fastest-varying index.
    std::size_t f = 0;
    for (int a = dim() - 1; a >= 0; --a) f = f * (axes[a].cells + 1) + idx[a];
    return f;
}

std::vector<int> GridSpec::unflat(std::size_t flat_index) const {
    std::vector<int> idx(dim());
    for (int a = 0; a < dim(); ++a) {
        idx[a] = static_cast<int>(flat_index % (axes[a].cells + 1));
        flat_index /= axes[a].cells + 1;
    }
    return idx;
}

std::vector<double> GridSpec::point(const std::vector<int>& idx) const {
    std::vector<double> p(dim());
    for (int a = 0; a < dim(); ++a) p[a] = axes[a].coord(idx[a]);
    return p;
}

std::vector<int> GridSpec::nearest(const std::vector<double>& p) const {
    std::vector<int> idx(dim());
    for (int a = 0; a < dim(); ++a) idx[a] = axes[a].nearest(p[a]);
    return idx;
}

GridSpec box_grid(const std::vector<Interval>& box, int cells_per_axis) {
    GridSpec spec;
    spec.axes.reserve(box.size());
    for (const auto& iv : box) spec.axes.push_back({iv.lo, iv.hi, cells_per_axis});
    return spec;
}

namespace {

// Lowest node of the interpolation cell and the fractional offset in it.
void locate(const GridAxis& ax, double v, int& k0, double& frac) {
    double s = (v - ax.lo) / ax.step();
    s = std::clamp(s, 0.0, static_cast<double>(ax.cells));
    k0 = std::min(static_cast<int>(s), ax.cells - 1);
    frac = s - k0;
}

[[noreturn]] void masked_fail() {
    throw EvalError("interpolation touches a masked grid node", "");
}

}  // namespace

double ScalarFieldGrid::interpolate(const std::vector<double>& p) const {
    const int d = spec.dim();
    std::vector<int> k0(d);
    std::vector<double> frac(d);
    for (int a = 0; a < d; ++a) locate(spec.axes[a], p[a], k0[a], frac[a]);

    double acc = 0.0;
    std::vector<int> idx(d);
    for (int corner = 0; corner < (1 << d); ++corner) {
        double w = 1.0;
        for (int a = 0; a < d; ++a) {
            bool hi = corner & (1 << a);
            idx[a] = k0[a] + (hi ? 1 : 0);
            w *= hi ? frac[a] : 1.0 - frac[a];
        }
        std::size_t f = spec.flat(idx);
        if (!valid(f)) masked_fail();
        acc += w * values[f];
    }
    return acc;
}

double ScalarFieldGrid::interpolate_cubic(const std::vector<double>& p) const {
    const int d = spec.dim();
    std::vector<int> start(d);
    std::vector<std::vector<double>> w(d, std::vector<double>(4));
    for (int a = 0; a < d; ++a) {
        const GridAxis& ax = spec.axes[a];
        int k0;
        double frac;
        locate(ax, p[a], k0, frac);
        // 4-node stencil around the cell, shifted to stay on the grid.
        int s = std::clamp(k0 - 1, 0, std::max(0, ax.cells - 3));
        double x = (p[a] - ax.coord(s)) / ax.step();  // in stencil units
        int nodes = std::min(4, ax.cells + 1);
        for (int m = 0; m < nodes; ++m) {
            double wm = 1.0;
            for (int q = 0; q < nodes; ++q)
                if (q != m) wm *= (x - q) / (m - q);
            w[a][m] = wm;
        }
        for (int m = nodes; m < 4; ++m) w[a][m] = 0.0;
        start[a] = s;
    }

    double acc = 0.0;
    std::vector<int> offset(d, 0), idx(d);
    while (true) {
        double wt = 1.0;
        for (int a = 0; a < d; ++a) {
            wt *= w[a][offset[a]];
            idx[a] = std::min(start[a] + offset[a], spec.axes[a].cells);
        }
        if (wt != 0.0) {
            std::size_t f = spec.flat(idx);
            if (!valid(f)) masked_fail();
            acc += wt * values[f];
        }
        int a = 0;
        for (; a < d; ++a) {
            if (++offset[a] < 4) break;
            offset[a] = 0;
        }
        if (a == d) break;
    }
    return acc;
}

void SolutionGrid::allocate(int n_comps) {
    n = n_comps;
    u.assign(n_comps, std::vector<double>(node_count(), 0.0));
    converged.assign(node_count(), 0);
    iterations.assign(node_count(), 0);
    residual.assign(node_count(), 0.0);
}

}  // namespace ht
