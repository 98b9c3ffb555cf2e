#include "spool/pooling.hpp"

#include <cmath>
#include <set>

#include "spool/linalg.hpp"
#include "spool/random.hpp"

namespace spool {

PoolingKind PoolingKind::rs_fixed(int k, double tau) {
    PoolingKind p{PoolingVariant::rs_pool};
    p.iterations = k;
    p.tau_mode = TauMode::fixed;
    p.tau = tau;
    p.validate();
    return p;
}

PoolingKind PoolingKind::rs_scaled(int k, double alpha) {
    PoolingKind p{PoolingVariant::rs_pool};
    p.iterations = k;
    p.tau_mode = TauMode::scaled;
    p.alpha = alpha;
    p.validate();
    return p;
}

void PoolingKind::validate() const {
    if (!is_rs()) return;
    if (iterations < 1) throw ContractError("rs_pool: K must be at least 1");
    if (tau_mode == TauMode::fixed && !(tau > 0.0 && std::isfinite(tau)))
        throw ContractError("rs_pool: tau must be positive");
    if (tau_mode == TauMode::scaled && !(alpha > 0.0 && std::isfinite(alpha)))
        throw ContractError("rs_pool: alpha must be positive");
}

std::string PoolingKind::name() const {
    switch (variant) {
    case PoolingVariant::sum: return "sum";
    case PoolingVariant::average: return "average";
    case PoolingVariant::max: return "max";
    case PoolingVariant::rs_pool: return "rs_pool";
    }
    return "?";
}

PoolingVariant parse_pooling_variant(const std::string& s) {
    if (s == "sum") return PoolingVariant::sum;
    if (s == "average" || s == "mean") return PoolingVariant::average;
    if (s == "max") return PoolingVariant::max;
    if (s == "rs_pool" || s == "rs-pool") return PoolingVariant::rs_pool;
    throw ValidationError("unknown pooling '" + s + "'");
}

void to_json(nlohmann::json& j, const PoolingKind& p) {
    j = nlohmann::json{{"kind", p.name()}};
    if (!p.is_rs()) return;
    j["K"] = p.iterations;
    j["tau_mode"] = p.tau_mode == TauMode::fixed ? "fixed" : "scaled";
    if (p.tau_mode == TauMode::fixed) j["tau"] = p.tau;
    else j["alpha"] = p.alpha;
    j["output"] = p.output == RsOutput::projected ? "projected" : "right_singular";
    j["start_seed"] = p.start_seed;
}

void from_json(const nlohmann::json& j, PoolingKind& p) {
    if (j.is_string()) {
        p = PoolingKind{parse_pooling_variant(j.get<std::string>())};
        return;
    }
    if (!j.is_object() || !j.contains("kind")) throw ValidationError("pooling: expected an object with \"kind\"");
    static const std::set<std::string> allowed{"kind", "K", "tau_mode", "tau", "alpha", "output", "start_seed"};
    for (const auto& [key, _] : j.items())
        if (!allowed.contains(key)) throw ValidationError("pooling: unknown field '" + key + "'");
    p = PoolingKind{parse_pooling_variant(j.at("kind").get<std::string>())};
    if (j.contains("K")) p.iterations = j.at("K").get<int>();
    if (j.contains("tau_mode")) {
        const auto m = j.at("tau_mode").get<std::string>();
        if (m == "fixed") p.tau_mode = TauMode::fixed;
        else if (m == "scaled") p.tau_mode = TauMode::scaled;
        else throw ValidationError("pooling: tau_mode must be fixed or scaled");
    }
    if (j.contains("tau")) p.tau = j.at("tau").get<double>();
    if (j.contains("alpha")) p.alpha = j.at("alpha").get<double>();
    if (j.contains("output")) {
        const auto o = j.at("output").get<std::string>();
        if (o == "projected") p.output = RsOutput::projected;
        else if (o == "right_singular") p.output = RsOutput::right_singular;
        else throw ValidationError("pooling: output must be right_singular or projected");
    }
    if (j.contains("start_seed")) p.start_seed = j.at("start_seed").get<std::uint64_t>();
    try {
        p.validate();
    } catch (const ContractError& e) {
        throw ValidationError(e.what());
    }
}

// ---------------------------------------------------------------------------

Var pool_flat(const Var& h, PoolingVariant kind) {
    if (h.rows() == 0) throw ContractError("pool_flat: empty node set");
    switch (kind) {
    case PoolingVariant::sum: return sum_rows(h);
    case PoolingVariant::average: return mean_rows(h);
    case PoolingVariant::max: return max_rows(h);
    case PoolingVariant::rs_pool: break;
    }
    throw ContractError("pool_flat: rs_pool is not a flat pooling");
}

Matrix start_vector(std::size_t d, std::uint64_t seed) {
    Rng rng(mix_seed(seed, d));
    for (;;) {
        Matrix v = random_normal(d, 1, rng);
        const double nrm = v.frobenius_norm();
        if (nrm > 0.0) return v * (1.0 / nrm);
    }
}

namespace {

// ‖HᵀHv‖ this small relative to ‖H‖_F² means v is numerically orthogonal
// to the row space.
constexpr double kUnderflow = 1e-13;

bool underflows(double snorm, double hnorm2) { return !(snorm > kUnderflow * hnorm2); }

} // namespace

PowerResult power_iteration(const Matrix& h, int k, std::uint64_t seed) {
    if (k < 1) throw ContractError("power_iteration: K must be at least 1");
    const double hn2 = h.frobenius_norm() * h.frobenius_norm();
    if (hn2 == 0.0) throw DegenerateError("power_iteration: H is zero");
    PowerResult res;
    for (int attempt = 0; attempt < 2; ++attempt) {
        Matrix v = start_vector(h.cols(), attempt == 0 ? seed : mix_seed(seed, 0xdead));
        bool ok = true;
        for (int it = 0; it < k; ++it) {
            Matrix s = matmul_tn(h, matmul(h, v));
            const double sn = s.frobenius_norm();
            if (underflows(sn, hn2)) {
                ok = false;
                break;
            }
            v = s * (1.0 / sn);
        }
        if (ok) {
            const double hv = matmul(h, v).frobenius_norm();
            res.v = std::move(v);
            res.rayleigh = hv * hv;
            return res;
        }
        res.restarted = true;
    }
    throw DegenerateError("power_iteration: iterate underflowed twice");
}

Var power_iteration(const Var& h, int k, std::uint64_t seed, bool* restarted) {
    if (k < 1) throw ContractError("power_iteration: K must be at least 1");
    const double hn2 = h.value().frobenius_norm() * h.value().frobenius_norm();
    if (hn2 == 0.0) throw DegenerateError("power_iteration: H is zero");
    Tape& t = h.tape();
    const Var ht = transpose(h);
    for (int attempt = 0; attempt < 2; ++attempt) {
        Var v = t.constant(start_vector(h.cols(), attempt == 0 ? seed : mix_seed(seed, 0xdead)));
        bool ok = true;
        for (int it = 0; it < k; ++it) {
            const Var s = matmul(ht, matmul(h, v));
            if (underflows(s.value().frobenius_norm(), hn2)) {
                ok = false;
                break;
            }
            v = normalize(s);
        }
        if (restarted) *restarted = attempt > 0;
        if (ok) return v;
    }
    throw DegenerateError("power_iteration: iterate underflowed twice");
}

double sign_factor(std::span<const double> v) {
    for (double x : v) {
        if (std::abs(x) > 1e-9) return x > 0.0 ? 1.0 : -1.0;
    }
    throw DegenerateError("sign_normalize: every entry is below 1e-9");
}

Matrix sign_normalize(const Matrix& v) { return v * sign_factor(v.data()); }

Var rs_pool(const Var& h, const PoolingKind& kind) {
    kind.validate();
    if (!kind.is_rs()) throw ContractError("rs_pool: pooling kind is not rs_pool");
    const Var v = power_iteration(h, kind.iterations, kind.start_seed);
    const Var hv = matmul(h, v);
    if (kind.output == RsOutput::projected) {
        if (kind.tau_mode == TauMode::fixed) return scale(hv, kind.tau);
        return mul_scalar(hv, scale(l2_norm(hv), 1.0 / kind.alpha));
    }
    const Var row = scale(transpose(v), sign_factor(v.value().data()));
    if (kind.tau_mode == TauMode::fixed) return scale(row, kind.tau);
    return mul_scalar(row, scale(l2_norm(hv), 1.0 / kind.alpha));
}

RsPoolValue rs_pool(const Matrix& h, const PoolingKind& kind) {
    kind.validate();
    if (!kind.is_rs()) throw ContractError("rs_pool: pooling kind is not rs_pool");
    const PowerResult pr = power_iteration(h, kind.iterations, kind.start_seed);
    RsPoolValue out;
    out.rayleigh = pr.rayleigh;
    out.tau = kind.tau_mode == TauMode::fixed ? kind.tau : std::sqrt(pr.rayleigh) / kind.alpha;
    if (kind.output == RsOutput::projected) {
        out.output = matmul(h, pr.v) * out.tau;
    } else {
        out.output = sign_normalize(pr.v).transposed() * out.tau;
    }
    const SpectralInfo info = svd_oracle(h);
    out.zero_gap = info.gap <= kGapTolerance * info.sigma1;
    return out;
}

Var pool(const Var& h, const PoolingKind& kind) {
    if (kind.is_rs()) return rs_pool(h, kind);
    return pool_flat(h, kind.variant);
}

Matrix pool(const Matrix& h, const PoolingKind& kind) {
    Tape t;
    return pool(t.constant(h), kind).value();
}

SpectralInfo svd_oracle(const Matrix& h) {
    if (!h.all_finite()) throw NumericError("svd_oracle: non-finite input");
    if (h.cols() == 0) throw ContractError("svd_oracle: empty matrix");
    const SymmetricEigen eig = jacobi_eigen(matmul_tn(h, h));
    SpectralInfo info;
    info.sigma1 = std::sqrt(std::max(0.0, eig.values[0]));
    info.sigma2 = eig.values.size() > 1 ? std::sqrt(std::max(0.0, eig.values[1])) : 0.0;
    info.gap = info.sigma1 - info.sigma2;
    Matrix v(h.cols(), 1);
    for (std::size_t i = 0; i < h.cols(); ++i) v[i] = eig.vectors(i, 0);
    info.v1 = info.sigma1 > 0.0 ? sign_normalize(v) : v;
    return info;
}

} // namespace spool
