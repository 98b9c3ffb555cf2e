#pragma once

#include <vector>

#include "spool/tensor.hpp"

namespace spool {

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order.
/// Column k of `vectors` pairs with `values[k]`.
struct SymmetricEigen {
    std::vector<double> values;
    Matrix vectors;
    int sweeps = 0;
};

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// tol·max(1, ‖S‖_F). NumericError after max_sweeps.
SymmetricEigen jacobi_eigen(const Matrix& symmetric, double tol = 1e-12, int max_sweeps = 100);

/// Largest singular value, from the Jacobi decomposition of WᵀW.
double spectral_norm(const Matrix& w);

} // namespace spool
