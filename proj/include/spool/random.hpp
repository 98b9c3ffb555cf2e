#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "spool/tensor.hpp"

namespace spool {

using Rng = std::mt19937_64;

/// splitmix64 finaliser; derives independent stream seeds from (root, index).
constexpr std::uint64_t mix_seed(std::uint64_t root, std::uint64_t index) noexcept {
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng);
Matrix random_uniform(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng);
/// Uniform on the Frobenius sphere of the given radius.
Matrix random_sphere(std::size_t rows, std::size_t cols, double radius, Rng& rng);
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Results must be
/// written to per-index slots so reduction order stays deterministic.
/// Calls made from inside a worker run inline.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn);

/// Worker cap from SP_THREADS, defaulting to hardware concurrency.
std::size_t worker_threads();

} // namespace spool

#include "spool/detail/parallel.ipp"
