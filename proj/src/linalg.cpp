#include "spool/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace spool {

namespace {

double off_diagonal_norm(const Matrix& a) {
    double acc = 0.0;
    for (std::size_t p = 0; p < a.rows(); ++p)
        for (std::size_t q = p + 1; q < a.cols(); ++q) acc += 2.0 * a(p, q) * a(p, q);
    return std::sqrt(acc);
}

} // namespace

SymmetricEigen jacobi_eigen(const Matrix& symmetric, double tol, int max_sweeps) {
    if (symmetric.rows() != symmetric.cols()) throw DimensionError("jacobi_eigen: matrix must be square");
    if (!symmetric.all_finite()) throw NumericError("jacobi_eigen: non-finite input");
    const std::size_t n = symmetric.rows();
    Matrix a = symmetric;
    Matrix v = Matrix::identity(n);
    const double threshold = tol * std::max(1.0, symmetric.frobenius_norm());

    int sweep = 0;
    while (off_diagonal_norm(a) >= threshold) {
        if (sweep == max_sweeps) {
            throw NumericError("jacobi_eigen: no convergence after " + std::to_string(max_sweeps) +
                               " sweeps");
        }
        ++sweep;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = a(p, k) = c * akp - s * akq;
                    a(k, q) = a(q, k) = s * akp + c * akq;
                }
                a(p, p) -= t * apq;
                a(q, q) += t * apq;
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
    SymmetricEigen out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    out.sweeps = sweep;
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
    }
    return out;
}

double spectral_norm(const Matrix& w) {
    if (w.empty()) throw ContractError("spectral_norm: empty matrix");
    const SymmetricEigen eig = jacobi_eigen(matmul_tn(w, w));
    return std::sqrt(std::max(0.0, eig.values.front()));
}

} // namespace spool
