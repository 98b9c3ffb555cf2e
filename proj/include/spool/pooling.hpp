#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "spool/tensor.hpp"

namespace spool {

enum class PoolingVariant { sum, average, max, rs_pool };
enum class TauMode { fixed, scaled };
enum class RsOutput { right_singular, projected };

struct PoolingKind {
    PoolingVariant variant = PoolingVariant::sum;
    // RS-Pool only.
    int iterations = 2;
    TauMode tau_mode = TauMode::scaled;
    double tau = 1.0;   // fixed mode
    double alpha = 1.0; // scaled mode: τ = σ₁/α
    RsOutput output = RsOutput::right_singular;
    std::uint64_t start_seed = 0;

    static PoolingKind sum() { return {PoolingVariant::sum}; }
    static PoolingKind average() { return {PoolingVariant::average}; }
    static PoolingKind max() { return {PoolingVariant::max}; }
    static PoolingKind rs_fixed(int k, double tau);
    static PoolingKind rs_scaled(int k, double alpha);

    bool is_rs() const noexcept { return variant == PoolingVariant::rs_pool; }
    void validate() const;
    /// "sum", "average", "max", "rs_pool".
    std::string name() const;
};

PoolingVariant parse_pooling_variant(const std::string& s);
void to_json(nlohmann::json& j, const PoolingKind& p);
void from_json(const nlohmann::json& j, PoolingKind& p);

/// Top of the singular spectrum of H.
struct SpectralInfo {
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    double gap = 0.0;
    Matrix v1; // d×1, unit, sign-normalized
};

struct PowerResult {
    Matrix v; // d×1, unit (not sign-normalized)
    double rayleigh = 0.0;
    bool restarted = false;
};

/// Column, row-sum, or column-max of H as a 1×d row.
Var pool_flat(const Var& h, PoolingVariant kind);

/// Seeded unit vector in R^d; identical for every H with d columns.
Matrix start_vector(std::size_t d, std::uint64_t seed);

/// K rounds of v ← HᵀHv / ‖HᵀHv‖ from the seeded start vector.
/// Restarts once from a fresh vector if ‖HᵀHv‖ underflows.
PowerResult power_iteration(const Matrix& h, int k, std::uint64_t seed);
/// Same iteration recorded on the tape; returns v (d×1).
Var power_iteration(const Var& h, int k, std::uint64_t seed, bool* restarted = nullptr);

/// +1 or −1 making the first entry with |x| > 1e-9 positive.
double sign_factor(std::span<const double> v);
Matrix sign_normalize(const Matrix& v);

/// τ·sign_normalize(v₁) as a 1×d row, or τ·H·v as an n×1 column in projected mode.
Var rs_pool(const Var& h, const PoolingKind& kind);

struct RsPoolValue {
    Matrix output;
    double tau = 0.0;
    double rayleigh = 0.0;
    /// σ₁ − σ₂ below 1e-9·σ₁: any unit vector is a valid v₁.
    bool zero_gap = false;
};
RsPoolValue rs_pool(const Matrix& h, const PoolingKind& kind);

/// Dispatch over every variant. Output is 1×d except for projected RS-Pool.
Var pool(const Var& h, const PoolingKind& kind);
Matrix pool(const Matrix& h, const PoolingKind& kind);

/// Full spectrum via Jacobi on HᵀH.
SpectralInfo svd_oracle(const Matrix& h);

/// Degenerate-gap threshold relative to σ₁.
inline constexpr double kGapTolerance = 1e-9;

} // namespace spool
