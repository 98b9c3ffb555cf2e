#include "spool/random.hpp"

#include <cstdlib>
#include <numeric>
#include <string>

namespace spool {

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (double& x : m.data()) x = dist(rng);
    return m;
}

Matrix random_uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (double& x : m.data()) x = dist(rng);
    return m;
}

Matrix random_sphere(std::size_t rows, std::size_t cols, double radius, Rng& rng) {
    Matrix m = random_normal(rows, cols, rng);
    double nrm = m.frobenius_norm();
    while (nrm == 0.0) {
        m = random_normal(rows, cols, rng);
        nrm = m.frobenius_norm();
    }
    return m * (radius / nrm);
}

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    // Fisher-Yates with an explicit uniform draw keeps results identical
    // across standard library implementations.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

std::size_t worker_threads() {
    if (const char* env = std::getenv("SP_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

} // namespace spool
