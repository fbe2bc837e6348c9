#pragma once

#include <cmath>
#include <vector>

namespace ht::detail {

/** Solves A x = rhs in place for small dense n×n systems (row-major A) by
 *  Gaussian elimination with partial pivoting. Returns false when the matrix
 *  is numerically singular (pivot below `tol` times the row scale). */
inline bool solve_dense(std::vector<double>& A, std::vector<double>& rhs, int n,
                        double tol = 1e-13) {
    double scale = 0.0;
    for (double v : A) scale = std::max(scale, std::fabs(v));
    if (scale == 0.0) return false;

    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(A[r * n + col]) > std::fabs(A[pivot * n + col])) pivot = r;
        if (std::fabs(A[pivot * n + col]) <= tol * scale) return false;
        if (pivot != col) {
            for (int c = col; c < n; ++c) std::swap(A[col * n + c], A[pivot * n + c]);
            std::swap(rhs[col], rhs[pivot]);
        }
        const double inv = 1.0 / A[col * n + col];
        for (int r = col + 1; r < n; ++r) {
            const double f = A[r * n + col] * inv;
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c) A[r * n + c] -= f * A[col * n + c];
            rhs[r] -= f * rhs[col];
        }
    }
    for (int col = n - 1; col >= 0; --col) {
        double s = rhs[col];
        for (int c = col + 1; c < n; ++c) s -= A[col * n + c] * rhs[c];
        rhs[col] = s / A[col * n + col];
    }
    return true;
}

}  // namespace ht::detail
