#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include <unistd.h>

#include "spool/graph.hpp"
#include "spool/random.hpp"
#include "spool/tensor.hpp"

namespace testing {

using spool::Matrix;

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / ("spool_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    void write(const std::string& name, const std::string& body) const { std::ofstream(path / name) << body; }
};

/// Central differences of a plain scalar function; independent of the tape.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double step) {
    Matrix g(x.rows(), x.cols());
    Matrix probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double up = f(probe);
        probe[i] = orig - step;
        const double down = f(probe);
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

inline double max_rel_error(const Matrix& got, const Matrix& want) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
        worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(1.0, std::abs(want[i])));
    return worst;
}

inline spool::Graph random_graph(std::size_t n, std::size_t d, double p, spool::Rng& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = u + 1; v < n; ++v)
            if (coin(rng) < p) edges.emplace_back(u, v);
    return spool::make_graph(n, edges, spool::random_normal(n, d, rng));
}

/// Â computed entry by entry from the definition.
inline Matrix reference_a_hat(const spool::Graph& g) {
    const std::size_t n = g.num_nodes();
    Matrix out(n, n);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v)
            if (u == v || g.adjacency(u, v) != 0.0)
                out(u, v) = 1.0 / std::sqrt((1.0 + g.degree(u)) * (1.0 + g.degree(v)));
    return out;
}

} // namespace testing

namespace testing {

/// Random orthonormal columns (n×k, k ≤ n) by Gram-Schmidt on Gaussian draws.
inline Matrix random_orthonormal(std::size_t n, std::size_t k, spool::Rng& rng) {
    Matrix q = spool::random_normal(n, k, rng);
    for (std::size_t j = 0; j < k; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t p = 0; p < j; ++p) {
                double d = 0.0;
                for (std::size_t i = 0; i < n; ++i) d += q(i, j) * q(i, p);
                for (std::size_t i = 0; i < n; ++i) q(i, j) -= d * q(i, p);
            }
        }
        double nrm = 0.0;
        for (std::size_t i = 0; i < n; ++i) nrm += q(i, j) * q(i, j);
        nrm = std::sqrt(nrm);
        for (std::size_t i = 0; i < n; ++i) q(i, j) /= nrm;
    }
    return q;
}

/// H = U·diag(s)·Vᵀ with s sorted descending by the caller; also returns V.
struct Planted {
    Matrix h;
    Matrix v; // d×r, column 0 is the top right singular vector
};

inline Planted planted_matrix(std::size_t n, std::size_t d, const std::vector<double>& s, spool::Rng& rng) {
    const std::size_t r = s.size();
    const Matrix u = random_orthonormal(n, r, rng);
    const Matrix v = random_orthonormal(d, r, rng);
    Matrix h(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t k = 0; k < r; ++k) h(i, j) += u(i, k) * s[k] * v(j, k);
    return {h, v};
}

/// sin of the angle between two unit vectors, via the orthogonal residual.
inline double sin_angle(const Matrix& a, const Matrix& b) {
    double c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) c += a[i] * b[i];
    double r = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) r += (a[i] - c * b[i]) * (a[i] - c * b[i]);
    return std::sqrt(r);
}

/// tan of the angle between two unit vectors.
inline double tan_angle(const Matrix& a, const Matrix& b) {
    double c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) c += a[i] * b[i];
    return sin_angle(a, b) / std::abs(c);
}

} // namespace testing
