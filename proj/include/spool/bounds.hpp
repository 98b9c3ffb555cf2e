#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "spool/gnn.hpp"
#include "spool/graph.hpp"
#include "spool/pooling.hpp"

namespace spool {

/// Certified (ε, γ) pair with its factors.
///
/// Flat GCN:  gamma = weight_norm_product · walk_term · epsilon, where walk_term
///            already carries 1/n (average) or √min(n, d_L)·max ŵ (max).
/// GIN:       gamma = weight_norm_product · walk_term (walk_term includes ε).
/// RS-Pool:   gamma_unclamped = τ√2·ε/gap · weight_norm_product · walk_term with
///            walk_term = Σ ŵ_u², gamma = min(gamma_unclamped, 2τ).
struct BoundReport {
    Arch arch = Arch::gcn;
    PoolingVariant pooling = PoolingVariant::sum;
    double epsilon = 0.0;
    double weight_norm_product = 0.0;
    double walk_term = 0.0;
    double gamma_unclamped = 0.0;
    double gamma = 0.0;

    // RS-Pool only.
    double tau = 0.0;
    double sigma1 = 0.0;
    double sigma2 = 0.0;
    double spectral_gap = 0.0;
    bool clamped_by_2tau = false;
    bool degenerate_gap = false;

    // GIN only.
    double feature_bound = 0.0;
    std::string feature_bound_source;

    /// Recomputes gamma from the stored factors.
    double recompose() const;
};

void to_json(nlohmann::json& j, const BoundReport& r);

/// ŵ_u = Σ_v (Â^{L−1})_{uv}.
std::vector<double> walk_weights(const Graph& g, std::size_t layers);

/// Largest singular value.
double operator_norm(const Matrix& w);
double weight_norm_product(const std::vector<const Matrix*>& weights);

BoundReport bound_gcn(const GcnModel& model, const Graph& g, double epsilon, PoolingVariant pooling);

/// `feature_bound` is B with ‖X‖₂ ≤ B; `source` records where it came from.
BoundReport bound_gin(const GinModel& model, const Graph& g, double epsilon, PoolingVariant pooling,
                      double feature_bound, const std::string& source = "user");

/// `h` is the clean embedding; the gap is measured on it.
BoundReport bound_rs_pool(const GcnModel& model, const Graph& g, double epsilon, double tau, const Matrix& h);

/// Dispatch on the classifier's backbone and pooling. For scaled RS-Pool,
/// τ = σ₁(H)/α on the clean embedding. GIN with RS-Pool has no closed-form
/// expression; only the 2τ clamp is reported.
BoundReport bound_for(const Classifier& c, const Graph& g, double epsilon, double feature_bound,
                      const std::string& source = "dataset-max");

struct EmpiricalRisk {
    double mean = 0.0;
    double max = 0.0;
    std::vector<double> distances; // per sample, in sample order
};

/// Monte-Carlo mean of ‖pool(H(X)) − pool(H(X+Δ))‖₂ over Δ uniform on the
/// Frobenius sphere of radius ε. Sample i draws from mix_seed(seed, i).
EmpiricalRisk empirical_risk(const Classifier& c, const Graph& g, double epsilon, std::size_t samples,
                             std::uint64_t seed);

} // namespace spool
