// Acceptance checks. One line per criterion: PASS, FAIL or BLOCKED.
//
//   acceptance [--criterion N] [--data-dir DIR] [--work-dir DIR] [--smoke]
//
// Criteria 9-14 need PROTEINS and MSRC_9 in TU format under the data
// directory (SP_DATA_DIR, default <source>/data). Without them they report
// BLOCKED and exit 77. --smoke runs their code paths on generated stand-ins
// with tiny budgets and only checks that the pipeline completes.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "helpers.hpp"
#include "spool/attacks.hpp"
#include "spool/bounds.hpp"
#include "spool/experiment.hpp"
#include "walk_oracle.hpp"

using namespace spool;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Verdict { pass, fail, blocked };

struct Outcome {
    Verdict verdict = Verdict::fail;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double x, int prec = 3) {
    std::ostringstream ss;
    ss.precision(prec);
    ss << x;
    return ss.str();
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Verdict::pass : Verdict::fail, std::move(detail)}; }

Outcome within_time(Outcome o, double seconds, double limit) {
    o.detail += ", " + num(seconds, 2) + " s";
    if (seconds > limit) {
        o.verdict = Verdict::fail;
        o.detail += " (limit " + num(limit) + " s)";
    }
    return o;
}

Classifier random_model(Arch arch, std::size_t d, const PoolingKind& p, std::uint64_t seed, std::size_t hidden = 8) {
    ModelShape s;
    s.arch = arch;
    s.input_dim = d;
    s.hidden_dim = hidden;
    s.readout_hidden = hidden;
    s.num_classes = 3;
    Classifier c = make_classifier(s, p, seed);
    Rng rng(mix_seed(seed, 77));
    for (Matrix* m : c.parameters())
        if (m->rows() == 1) *m = random_normal(1, m->cols(), rng) * 0.1;
    return c;
}

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// ---------------------------------------------------------------------------
// Property criteria

Outcome permutation_invariance() {
    const auto t0 = Clock::now();
    Rng rng(1001);
    double worst = 0.0;
    const std::vector<PoolingKind> kinds{PoolingKind::sum(), PoolingKind::average(), PoolingKind::max(),
                                         PoolingKind::rs_scaled(2, 1.0)};
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = uniform(rng, 1, 12);
        const auto g = testing::random_graph(n, 4, 0.35, rng);
        const auto pg = permute_nodes(g, random_permutation(n, rng));
        for (const auto& p : kinds) {
            const auto c = random_model(i % 2 ? Arch::gin : Arch::gcn, 4, p, 2000 + i);
            worst = std::max(worst, max_abs_diff(pooled(c, embed(c, g)), pooled(c, embed(c, pg))));
        }
    }
    return within_time(verdict(worst <= 1e-8, "worst deviation " + num(worst) + " over 200 pairs x 4 poolings"),
                       elapsed(t0), 60);
}

Outcome oracle_equivalence() {
    const auto t0 = Clock::now();
    Rng rng(1002);
    int tested = 0, violations = 0;
    double worst_ratio = 0.0;
    while (tested < 200) {
        const std::size_t n = uniform(rng, 2, 20), d = uniform(rng, 2, 20);
        const Matrix h = random_normal(n, d, rng);
        const SpectralInfo info = svd_oracle(h);
        const double ratio = info.sigma2 / info.sigma1;
        if (ratio > 0.95) continue;
        ++tested;
        const std::uint64_t seed = static_cast<std::uint64_t>(tested);
        const double tan0 = testing::tan_angle(start_vector(d, seed), info.v1);
        for (int k : {1, 5, 50}) {
            const double allowed = std::max(1e-6, std::pow(ratio, 2 * k) * tan0 * 1.5);
            const double got = testing::sin_angle(power_iteration(h, k, seed).v, info.v1);
            worst_ratio = std::max(worst_ratio, got / allowed);
            if (got > allowed) ++violations;
        }
    }
    return within_time(verdict(violations == 0, std::to_string(violations) + " violations over 200 matrices x K in {1,5,50}, "
                                                "worst sin/allowed " + num(worst_ratio)),
                       elapsed(t0), 60);
}

Outcome gradient_fidelity() {
    const auto t0 = Clock::now();
    Rng rng(1003);
    double worst_flat = 0.0, worst_rs = 0.0;
    const std::vector<PoolingKind> kinds{PoolingKind::sum(), PoolingKind::average(), PoolingKind::max(),
                                         PoolingKind::rs_scaled(3, 1.0)};
    for (int i = 0; i < 100; ++i) {
        const auto& p = kinds[static_cast<std::size_t>(i) % 4];
        const auto g = testing::random_graph(uniform(rng, 2, 8), 3, 0.5, rng);
        const auto c = random_model(Arch::gcn, 3, p, 3000 + i, 4);
        const std::size_t label = static_cast<std::size_t>(i) % 3;

        Tape t;
        const Var x = t.variable(g.features);
        const auto fp = forward(t, c, t.constant(g.adjacency), x, true);
        t.backward(softmax_cross_entropy(fp.logits, label));

        double err = testing::max_rel_error(
            x.grad(), testing::fd_gradient([&](const Matrix& m) { return loss_on(c, g.adjacency, m, label); },
                                           g.features, 1e-5));
        const auto params = c.parameters();
        for (std::size_t k = 0; k < params.size(); ++k) {
            const auto fd = testing::fd_gradient(
                [&](const Matrix& m) {
                    Classifier moved = c;
                    *moved.parameters()[k] = m;
                    return loss_on(moved, g.adjacency, g.features, label);
                },
                *params[k], 1e-5);
            err = std::max(err, testing::max_rel_error(fp.params[k].grad(), fd));
        }
        (p.is_rs() ? worst_rs : worst_flat) = std::max(p.is_rs() ? worst_rs : worst_flat, err);
    }
    return within_time(verdict(worst_flat <= 1e-4 && worst_rs <= 1e-3,
                               "max relative error " + num(worst_flat) + " (flat), " + num(worst_rs) +
                                   " (RS-Pool K=3) over 100 instances, features and all weights"),
                       elapsed(t0), 120);
}

Outcome bound_soundness(Arch arch) {
    const auto t0 = Clock::now();
    Rng rng(arch == Arch::gcn ? 1004 : 1005);
    const double eps = 0.1;
    std::vector<Graph> graphs;
    for (int i = 0; i < 20; ++i) graphs.push_back(testing::random_graph(uniform(rng, 1, 10), 3, 0.4, rng));
    double b = 0.0;
    for (const auto& g : graphs) b = std::max(b, svd_oracle(g.features).sigma1);

    std::size_t violations = 0;
    double worst = 0.0, avg_identity = 0.0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const Graph& g = graphs[i];
        const auto c = random_model(arch, 3, PoolingKind::sum(), 4000 + i);
        std::vector<BoundReport> reps;
        for (auto v : {PoolingVariant::sum, PoolingVariant::average, PoolingVariant::max})
            reps.push_back(arch == Arch::gcn ? bound_gcn(c.gcn(), g, eps, v) : bound_gin(c.gin(), g, eps, v, b));
        if (arch == Arch::gcn)
            avg_identity = std::max(avg_identity, std::abs(reps[1].gamma * static_cast<double>(g.num_nodes()) - reps[0].gamma) /
                                                      std::max(1.0, reps[0].gamma));
        const Matrix h = embed(c, g);
        Rng noise(mix_seed(5000, i));
        for (int s = 0; s < 1000; ++s) {
            const Matrix moved = embed(c, g.adjacency, g.features + random_sphere(g.num_nodes(), 3, eps, noise));
            std::size_t k = 0;
            for (auto v : {PoolingVariant::sum, PoolingVariant::average, PoolingVariant::max}) {
                Tape t;
                const Matrix a = pool_flat(t.constant(moved), v).value();
                const double dist = (a - pool_flat(t.constant(h), v).value()).frobenius_norm();
                worst = std::max(worst, dist / reps[k].gamma);
                if (dist > reps[k].gamma) ++violations;
                ++k;
            }
        }
    }
    std::string detail = std::to_string(violations) + " violations over 20 graphs x 1000 perturbations x 3 poolings, "
                         "worst distance/gamma " + num(worst);
    bool ok = violations == 0;
    if (arch == Arch::gcn) {
        detail += ", |gamma_avg*n - gamma_sum| " + num(avg_identity);
        ok = ok && avg_identity <= 1e-12;
    }
    return within_time(verdict(ok, detail), elapsed(t0), 300);
}

Outcome wedin_local() {
    const auto t0 = Clock::now();
    Rng rng(1006);
    int trials = 0, violations = 0;
    double worst = 0.0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    while (trials < 1000) {
        const Matrix h = random_normal(uniform(rng, 2, 10), uniform(rng, 2, 10), rng);
        const SpectralInfo a = svd_oracle(h);
        if (!(a.gap > 1e-6 * a.sigma1)) continue;
        ++trials;
        const double radius = 0.01 * a.gap * unit(rng);
        const Matrix delta = random_sphere(h.rows(), h.cols(), radius, rng);
        Matrix v = svd_oracle(h + delta).v1;
        if (dot(v, a.v1) < 0.0) v = v * -1.0;
        const double moved = (v - a.v1).frobenius_norm();
        const double allowed = std::sqrt(2.0) * radius / a.gap;
        worst = std::max(worst, moved / allowed);
        if (moved > allowed) ++violations;
    }
    return within_time(verdict(violations == 0, std::to_string(violations) + " violations over 1000 trials, worst ratio " +
                                                    num(worst)),
                       elapsed(t0), 60);
}

Outcome tau_clamp() {
    const auto t0 = Clock::now();
    Rng rng(1007);
    int violations = 0;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t d = uniform(rng, 1, 8);
        const double tau = std::exp(std::uniform_real_distribution<double>(-3.0, 3.0)(rng));
        const auto kind = PoolingKind::rs_fixed(1 + i % 6, tau);
        const double scale = std::exp(std::uniform_real_distribution<double>(-4.0, 4.0)(rng));
        const Matrix h = random_normal(uniform(rng, 1, 12), d, rng);
        const Matrix h2 = random_normal(uniform(rng, 1, 12), d, rng) * scale;
        const double dist = (pool(h, kind) - pool(h2, kind)).frobenius_norm();
        worst = std::max(worst, dist / (2 * tau));
        if (dist > 2 * tau + 1e-10) ++violations;
    }
    return within_time(verdict(violations == 0, std::to_string(violations) + " violations over 1000 pairs, worst distance/2tau " +
                                                    num(worst)),
                       elapsed(t0), 60);
}

Outcome walk_brute_force() {
    const auto t0 = Clock::now();
    Rng rng(1008);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const auto g = testing::random_graph(uniform(rng, 1, 6), 1, std::uniform_real_distribution<double>(0, 1)(rng), rng);
        for (std::size_t l : {2u, 3u}) {
            const auto w = walk_weights(g, l);
            const auto brute = testing::brute_force_walks(g, l - 1);
            for (std::size_t u = 0; u < w.size(); ++u) worst = std::max(worst, std::abs(w[u] - brute[u]));
        }
    }
    return within_time(verdict(worst <= 1e-10, "worst |row sum - enumeration| " + num(worst) + " over 200 graphs x L in {2,3}"),
                       elapsed(t0), 60);
}

// ---------------------------------------------------------------------------
// Dataset criteria

struct DataEnv {
    fs::path data;
    fs::path work;
    bool smoke = false;
};

bool has_dataset(const DataEnv& env, const std::string& name) {
    return fs::exists(env.data / name / (name + "_A.txt"));
}

ExperimentConfig dataset_config(const DataEnv& env, const std::string& name, const PoolingKind& p, const std::string& tag) {
    ExperimentConfig c;
    c.dataset.directory = env.data / name;
    c.dataset.name = name;
    if (fs::exists(env.data / name / "splits.json")) c.dataset.splits = env.data / name / "splits.json";
    c.pooling = p;
    c.output = env.work / (name + "-" + tag);
    if (env.smoke) {
        c.seeds = {0, 1};
        c.train.epochs = 3;
        c.bounds.samples = 5;
    }
    return c;
}

std::optional<json> find_fragment(const ExperimentConfig& c, const std::string& kind) {
    const fs::path dir = c.output / "fragments";
    if (!fs::is_directory(dir)) return std::nullopt;
    const std::string prefix = kind + "-" + config_hash(c).substr(0, 12);
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename().string().starts_with(prefix)) {
            std::ifstream in(e.path());
            return json::parse(in);
        }
    return std::nullopt;
}

json fragment(const ExperimentConfig& c, const std::string& kind, const std::function<json()>& run) {
    if (auto f = find_fragment(c, kind)) return *f;
    return run();
}

double mean_metric(const json& frag, const std::string& key, const std::string& field = "metrics") {
    double s = 0.0;
    for (const auto& r : frag.at("per_seed")) s += r.at(field).at(key).get<double>();
    return s / static_cast<double>(frag.at("per_seed").size());
}

const PoolingKind kRs = PoolingKind::rs_scaled(2, 1.0);

ExperimentConfig trained(const DataEnv& env, const std::string& name, const PoolingKind& p, const std::string& tag) {
    auto c = dataset_config(env, name, p, tag);
    fragment(c, "train", [&] { return cmd_train(c); });
    return c;
}

Outcome blocked(const std::vector<std::string>& names, const DataEnv& env) {
    std::string missing;
    for (const auto& n : names)
        if (!has_dataset(env, n)) missing += (missing.empty() ? "" : ", ") + n;
    if (missing.empty()) return {Verdict::pass, ""};
    return {Verdict::blocked, missing + " not found under " + env.data.string()};
}

Outcome clean_accuracy_proteins(const DataEnv& env) {
    if (auto b = blocked({"PROTEINS"}, env); b.verdict == Verdict::blocked) return b;
    const auto t0 = Clock::now();
    const double rs = 100 * mean_metric(*find_fragment(trained(env, "PROTEINS", kRs, "rs"), "train"), "clean_accuracy");
    const double sum =
        100 * mean_metric(*find_fragment(trained(env, "PROTEINS", PoolingKind::sum(), "sum"), "train"), "clean_accuracy");
    return within_time(verdict(rs >= 68 && rs <= 78 && sum >= 69 && sum <= 79,
                               "RS-Pool " + num(rs, 4) + " in [68,78], sum " + num(sum, 4) + " in [69,79]"),
                       elapsed(t0), 45 * 60);
}

Outcome clean_accuracy_msrc(const DataEnv& env) {
    if (auto b = blocked({"MSRC_9"}, env); b.verdict == Verdict::blocked) return b;
    const auto t0 = Clock::now();
    const double rs = 100 * mean_metric(*find_fragment(trained(env, "MSRC_9", kRs, "rs"), "train"), "clean_accuracy");
    return within_time(verdict(rs >= 84 && rs <= 95, "RS-Pool " + num(rs, 4) + " in [84,95]"), elapsed(t0), 10 * 60);
}

Outcome directional_robustness(const DataEnv& env) {
    if (auto b = blocked({"PROTEINS"}, env); b.verdict == Verdict::blocked) return b;
    const auto t0 = Clock::now();
    AttackSpec spec;
    spec.kind = AttackKind::pgd;
    spec.target = AttackTarget::structure;
    spec.epsilon = 0.3;
    double acc[2];
    int i = 0;
    for (const auto& [p, tag] : {std::pair{kRs, "rs"}, std::pair{PoolingKind::average(), "average"}}) {
        auto c = trained(env, "PROTEINS", p, tag);
        c.attack = spec;
        acc[i++] = 100 * mean_metric(fragment(c, "attack", [&] { return cmd_attack(c); }), "attacked_accuracy");
    }
    return within_time(verdict(acc[0] - acc[1] >= 5, "attacked accuracy RS-Pool " + num(acc[0], 4) + " vs average " +
                                                         num(acc[1], 4) + ", gap " + num(acc[0] - acc[1], 3) + " (need >= 5)"),
                       elapsed(t0), 90 * 60);
}

Outcome drift_ordering(const DataEnv& env) {
    if (auto b = blocked({"PROTEINS"}, env); b.verdict == Verdict::blocked) return b;
    const auto t0 = Clock::now();
    auto c = trained(env, "PROTEINS", kRs, "rs");
    c.bounds.epsilon = 0.1;
    fragment(c, "bounds", [&] { return cmd_bounds(c); });
    std::ifstream in(c.output / ("bounds-" + config_hash(c).substr(0, 12) + ".csv"));
    std::string line;
    std::getline(in, line);
    double sum = 0, avg = 0, rs = 0;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
        sum += std::stod(cells[8]);
        avg += std::stod(cells[9]);
        rs += std::stod(cells[11]);
        ++rows;
    }
    sum /= static_cast<double>(rows);
    avg /= static_cast<double>(rows);
    rs /= static_cast<double>(rows);
    return within_time(verdict(rs < avg && avg < sum && (rows >= 200 || env.smoke),
                               "mean drift RS-Pool " + num(rs) + " < average " + num(avg) + " < sum " + num(sum) + " over " +
                                   std::to_string(rows) + " graph rows"),
                       elapsed(t0), 5 * 60);
}

Outcome convergence_table(const DataEnv& env) {
    if (auto b = blocked({"PROTEINS"}, env); b.verdict == Verdict::blocked) return b;
    const auto t0 = Clock::now();
    auto c = trained(env, "PROTEINS", kRs, "rs");
    const json f = fragment(c, "convergence", [&] { return cmd_convergence(c); });
    const double k1 = mean_metric(f, "median_distance_k1"), k5 = mean_metric(f, "median_distance_k5");
    const double delta = 100 * std::abs(mean_metric(f, "accuracy_k2") - mean_metric(f, "accuracy_k10"));
    return within_time(verdict(k5 <= 0.5 * k1 && delta <= 1.5, "median distance K=5 " + num(k5) + " vs K=1 " + num(k1) +
                                                                    ", accuracy delta K=2 vs K=10 " + num(delta) + " points"),
                       elapsed(t0), 15 * 60);
}

Outcome timing_shape(const DataEnv& env) {
    if (auto b = blocked({"PROTEINS"}, env); b.verdict == Verdict::blocked) return b;
    const double rs = mean_metric(*find_fragment(trained(env, "PROTEINS", kRs, "rs"), "train"), "train_seconds", "timings");
    const double sum =
        mean_metric(*find_fragment(trained(env, "PROTEINS", PoolingKind::sum(), "sum"), "train"), "train_seconds", "timings");
    const double ratio = rs / sum;
    return verdict(ratio <= 6, "RS-Pool/sum training time " + num(ratio) + (ratio <= 4 ? " (<= 4)" : " (> 4, <= 6 tolerated)"));
}

/// Writes generated stand-ins named like the real datasets.
void write_standins(const fs::path& dir) {
    auto p = synth_dataset(SynthKind::density_pair, 40, 10, 1);
    p.name = "PROTEINS";
    write_tudataset(p, dir / "PROTEINS");
    auto m = synth_dataset(SynthKind::cycle_vs_path, 40, 8, 2);
    m.name = "MSRC_9";
    write_tudataset(m, dir / "MSRC_9");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    int only = 0;
    bool smoke = false;
    std::string data_dir, work_dir;
    app.add_option("--criterion", only, "run a single criterion (1-14)")->check(CLI::Range(0, 14));
    app.add_option("--data-dir", data_dir, "directory holding PROTEINS/ and MSRC_9/");
    app.add_option("--work-dir", work_dir, "where runs are cached");
    app.add_flag("--smoke", smoke, "run criteria 9-14 on generated stand-ins");
    CLI11_PARSE(app, argc, argv);

    DataEnv env;
    env.smoke = smoke;
    if (data_dir.empty()) {
        const char* e = std::getenv("SP_DATA_DIR");
        data_dir = e ? e : (fs::path(SP_SOURCE_DIR) / "data").string();
    }
    env.data = data_dir;
    env.work = work_dir.empty() ? fs::path(SP_BINARY_DIR) / "acceptance_runs" : fs::path(work_dir);
    if (smoke) {
        env.work = env.work / "smoke";
        env.data = env.work / "data";
        fs::remove_all(env.work);
        write_standins(env.data);
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"permutation invariance", permutation_invariance},
        {"power iteration vs oracle", oracle_equivalence},
        {"gradient fidelity", gradient_fidelity},
        {"GCN bound soundness", [] { return bound_soundness(Arch::gcn); }},
        {"GIN bound soundness", [] { return bound_soundness(Arch::gin); }},
        {"Wedin local soundness", wedin_local},
        {"2tau clamp", tau_clamp},
        {"walk weights vs enumeration", walk_brute_force},
        {"clean accuracy PROTEINS", [&] { return clean_accuracy_proteins(env); }},
        {"clean accuracy MSRC_9", [&] { return clean_accuracy_msrc(env); }},
        {"PGD robustness RS-Pool vs average", [&] { return directional_robustness(env); }},
        {"drift ordering RS < average < sum", [&] { return drift_ordering(env); }},
        {"convergence table", [&] { return convergence_table(env); }},
        {"timing shape", [&] { return timing_shape(env); }},
    };

    bool any_fail = false, all_blocked = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (only != 0 && id != only) continue;
        if (smoke && id < 9) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {Verdict::fail, std::string("error: ") + e.what()};
        }
        const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "BLOCKED";
        if (smoke) {
            // Thresholds are meaningless on stand-ins; only completion counts.
            const bool ran = o.detail.rfind("error:", 0) != 0;
            std::cout << "criterion " << id << " [smoke] " << (ran ? "RAN" : "FAIL") << " " << criteria[i].first << ": "
                      << o.detail << " (threshold " << tag << ")" << std::endl;
            any_fail = any_fail || !ran;
            all_blocked = false;
            continue;
        }
        std::cout << "criterion " << id << " " << tag << " " << criteria[i].first << ": " << o.detail << std::endl;
        any_fail = any_fail || o.verdict == Verdict::fail;
        all_blocked = all_blocked && o.verdict == Verdict::blocked;
    }
    if (any_fail) return 1;
    if (all_blocked) return 77;
    return 0;
}
