#include "spool/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace spool {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_epsilon(double eps) {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw ContractError("bound: epsilon must be finite and non-negative");
}

} // namespace

double BoundReport::recompose() const {
    if (pooling == PoolingVariant::rs_pool) {
        if (degenerate_gap || arch == Arch::gin) return 2.0 * tau;
        const double raw = tau * std::sqrt(2.0) * epsilon / spectral_gap * weight_norm_product * walk_term;
        return std::min(raw, 2.0 * tau);
    }
    if (arch == Arch::gin) return weight_norm_product * walk_term;
    return weight_norm_product * walk_term * epsilon;
}

void to_json(nlohmann::json& j, const BoundReport& r) {
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json("inf"); };
    j = nlohmann::json{{"arch", to_string(r.arch)},
                       {"pooling", PoolingKind{r.pooling}.name()},
                       {"epsilon", r.epsilon},
                       {"weight_norm_product", r.weight_norm_product},
                       {"walk_term", r.walk_term},
                       {"gamma", num(r.gamma)}};
    if (r.pooling == PoolingVariant::rs_pool) {
        j["gamma_unclamped"] = num(r.gamma_unclamped);
        j["tau"] = r.tau;
        j["sigma1"] = r.sigma1;
        j["sigma2"] = r.sigma2;
        j["spectral_gap"] = r.spectral_gap;
        j["clamped_by_2tau"] = r.clamped_by_2tau;
        j["degenerate_gap"] = r.degenerate_gap;
    }
    if (r.arch == Arch::gin) {
        j["feature_bound"] = r.feature_bound;
        j["feature_bound_source"] = r.feature_bound_source;
    }
}

std::vector<double> walk_weights(const Graph& g, std::size_t layers) {
    if (layers == 0) throw ContractError("walk_weights: need at least one layer");
    const Matrix a_hat = normalized_adjacency(g);
    Matrix w(g.num_nodes(), 1, 1.0);
    for (std::size_t l = 1; l < layers; ++l) w = matmul(a_hat, w);
    return {w.data().begin(), w.data().end()};
}

double operator_norm(const Matrix& w) {
    if (w.empty()) throw ContractError("operator_norm: empty matrix");
    return svd_oracle(w).sigma1;
}

double weight_norm_product(const std::vector<const Matrix*>& weights) {
    double p = 1.0;
    for (const Matrix* w : weights) p *= operator_norm(*w);
    return p;
}

BoundReport bound_gcn(const GcnModel& model, const Graph& g, double epsilon, PoolingVariant pooling) {
    model.validate();
    check_epsilon(epsilon);
    if (pooling == PoolingVariant::rs_pool) throw ContractError("bound_gcn: use bound_rs_pool for RS-Pool");
    BoundReport r;
    r.arch = Arch::gcn;
    r.pooling = pooling;
    r.epsilon = epsilon;
    std::vector<const Matrix*> ws;
    for (const auto& l : model.layers) ws.push_back(&l.weight);
    r.weight_norm_product = weight_norm_product(ws);

    const auto w = walk_weights(g, model.layers.size());
    const double n = static_cast<double>(g.num_nodes());
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    switch (pooling) {
    case PoolingVariant::sum: r.walk_term = total; break;
    case PoolingVariant::average: r.walk_term = total / n; break;
    case PoolingVariant::max: {
        const double d_l = static_cast<double>(model.output_dim());
        r.walk_term = std::sqrt(std::min(n, d_l)) * *std::max_element(w.begin(), w.end());
        break;
    }
    case PoolingVariant::rs_pool: break;
    }
    r.gamma_unclamped = r.gamma = r.weight_norm_product * r.walk_term * epsilon;
    return r;
}

BoundReport bound_gin(const GinModel& model, const Graph& g, double epsilon, PoolingVariant pooling,
                      double feature_bound, const std::string& source) {
    model.validate();
    check_epsilon(epsilon);
    if (!(feature_bound > 0.0)) throw ContractError("bound_gin: feature bound B must be positive");
    if (pooling == PoolingVariant::rs_pool) throw ContractError("bound_gin: no RS-Pool bound for GIN");
    BoundReport r;
    r.arch = Arch::gin;
    r.pooling = pooling;
    r.epsilon = epsilon;
    r.feature_bound = feature_bound;
    r.feature_bound_source = source;
    std::vector<const Matrix*> ws;
    for (const auto& l : model.layers) {
        ws.push_back(&l.first.weight);
        ws.push_back(&l.second.weight);
    }
    r.weight_norm_product = weight_norm_product(ws);

    const double b = feature_bound;
    const double layers = static_cast<double>(model.layers.size());
    const double n = static_cast<double>(g.num_nodes());
    const double edges = static_cast<double>(g.num_edges());
    switch (pooling) {
    case PoolingVariant::max: r.walk_term = b * layers * static_cast<double>(g.max_degree()) + epsilon; break;
    case PoolingVariant::sum: r.walk_term = 2.0 * b * layers * edges + n * epsilon; break;
    case PoolingVariant::average: {
        const double d_l = static_cast<double>(model.output_dim());
        r.walk_term = std::sqrt(n * d_l) * (2.0 * b * layers * edges / n + epsilon);
        break;
    }
    case PoolingVariant::rs_pool: break;
    }
    r.gamma_unclamped = r.gamma = r.weight_norm_product * r.walk_term;
    return r;
}

BoundReport bound_rs_pool(const GcnModel& model, const Graph& g, double epsilon, double tau, const Matrix& h) {
    model.validate();
    check_epsilon(epsilon);
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ContractError("bound_rs_pool: tau must be positive");
    if (h.rows() != g.num_nodes()) throw ContractError("bound_rs_pool: embedding rows do not match the graph");
    BoundReport r;
    r.arch = Arch::gcn;
    r.pooling = PoolingVariant::rs_pool;
    r.epsilon = epsilon;
    r.tau = tau;
    std::vector<const Matrix*> ws;
    for (const auto& l : model.layers) ws.push_back(&l.weight);
    r.weight_norm_product = weight_norm_product(ws);
    const auto w = walk_weights(g, model.layers.size());
    r.walk_term = std::inner_product(w.begin(), w.end(), w.begin(), 0.0);

    const SpectralInfo info = svd_oracle(h);
    r.sigma1 = info.sigma1;
    r.sigma2 = info.sigma2;
    r.spectral_gap = info.gap;
    r.degenerate_gap = !(info.gap > kGapTolerance * info.sigma1);
    r.gamma_unclamped =
        r.degenerate_gap ? kInf : tau * std::sqrt(2.0) * epsilon / info.gap * r.weight_norm_product * r.walk_term;
    r.clamped_by_2tau = r.gamma_unclamped > 2.0 * tau;
    r.gamma = std::min(r.gamma_unclamped, 2.0 * tau);
    return r;
}

BoundReport bound_for(const Classifier& c, const Graph& g, double epsilon, double feature_bound,
                      const std::string& source) {
    const PoolingKind& p = c.pooling;
    if (!p.is_rs()) {
        if (c.arch() == Arch::gcn) return bound_gcn(c.gcn(), g, epsilon, p.variant);
        return bound_gin(c.gin(), g, epsilon, p.variant, feature_bound, source);
    }
    const Matrix h = embed(c, g);
    double tau = p.tau;
    if (p.tau_mode == TauMode::scaled) tau = svd_oracle(h).sigma1 / p.alpha;
    if (c.arch() == Arch::gcn) {
        if (!(tau > 0.0)) {
            // Zero embedding: the classifier pools it to zero, so the output cannot move by more than 2τ = 0.
            BoundReport r;
            r.pooling = PoolingVariant::rs_pool;
            r.epsilon = epsilon;
            r.degenerate_gap = true;
            r.gamma_unclamped = kInf;
            return r;
        }
        return bound_rs_pool(c.gcn(), g, epsilon, tau, h);
    }
    BoundReport r;
    r.arch = Arch::gin;
    r.pooling = PoolingVariant::rs_pool;
    r.epsilon = epsilon;
    r.tau = tau;
    r.feature_bound = feature_bound;
    r.feature_bound_source = source;
    r.gamma_unclamped = kInf;
    r.clamped_by_2tau = true;
    r.gamma = 2.0 * tau;
    return r;
}

EmpiricalRisk empirical_risk(const Classifier& c, const Graph& g, double epsilon, std::size_t samples,
                             std::uint64_t seed) {
    if (samples == 0) throw ContractError("empirical_risk: need at least one sample");
    check_epsilon(epsilon);
    const Matrix clean = pooled(c, embed(c, g));
    EmpiricalRisk out;
    out.distances.assign(samples, 0.0);
    parallel_for(samples, worker_threads(), [&](std::size_t i) {
        Rng rng(mix_seed(seed, i));
        const Matrix delta = random_sphere(g.num_nodes(), g.feature_dim(), epsilon, rng);
        const Matrix moved = pooled(c, embed(c, g.adjacency, g.features + delta));
        out.distances[i] = (moved - clean).frobenius_norm();
    });
    for (double d : out.distances) {
        out.mean += d;
        out.max = std::max(out.max, d);
    }
    out.mean /= static_cast<double>(samples);
    return out;
}

} // namespace spool
