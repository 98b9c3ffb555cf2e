#include "spool/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include "spool/random.hpp"

namespace spool {

namespace {

std::vector<NodePair> all_pairs(std::size_t n) {
    std::vector<NodePair> out;
    out.reserve(n * (n - 1) / 2);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = u + 1; v < n; ++v) out.emplace_back(u, v);
    return out;
}

/// `count` distinct pair indices out of `total`, in draw order.
std::vector<std::size_t> sample_pairs(std::size_t total, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, total - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    return idx;
}

Matrix flipped(const Matrix& a, const std::vector<NodePair>& pairs, const std::vector<std::size_t>& chosen) {
    Matrix out = a;
    for (std::size_t p : chosen) {
        const auto [u, v] = pairs[p];
        out(u, v) = out(v, u) = 1.0 - out(u, v);
    }
    return out;
}

std::vector<NodePair> to_flips(const std::vector<NodePair>& pairs, const std::vector<std::size_t>& chosen) {
    std::vector<NodePair> out;
    out.reserve(chosen.size());
    for (std::size_t p : chosen) out.push_back(pairs[p]);
    return out;
}

AttackResult start(const Classifier& c, const Graph& g, const AttackSpec& spec) {
    c.validate();
    g.validate();
    spec.validate();
    if (g.label >= c.head.num_classes()) throw ContractError("attack: graph label outside the model's classes");
    AttackResult r;
    r.perturbed = g;
    r.clean_prediction = argmax_class(predict(c, g));
    r.clean_loss = loss_on(c, g.adjacency, g.features, g.label);
    return r;
}

AttackResult& finish(AttackResult& r, const Classifier& c, const Graph& g) {
    r.attacked_prediction = argmax_class(predict(c, r.perturbed));
    r.attacked_loss = loss_on(c, r.perturbed.adjacency, r.perturbed.features, g.label);
    r.delta_norm = (r.perturbed.features - g.features).frobenius_norm();
    r.success = r.clean_prediction == g.label && r.attacked_prediction != g.label;
    return r;
}

std::size_t first_max(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

AttackResult random_impl(const Classifier& c, const Graph& g, const AttackSpec& spec, std::size_t threads) {
    AttackResult r = start(c, g, spec);
    const std::size_t k = spec.samples;
    std::vector<double> losses(k);
    if (spec.target == AttackTarget::structure) {
        const std::size_t budget = spec.flip_budget(g);
        if (budget == 0) {
            r.empty_budget = true;
            return finish(r, c, g);
        }
        const auto pairs = all_pairs(g.num_nodes());
        std::vector<std::vector<std::size_t>> chosen(k);
        parallel_for(k, threads, [&](std::size_t i) {
            Rng rng(mix_seed(spec.seed, i));
            chosen[i] = sample_pairs(pairs.size(), budget, rng);
            losses[i] = loss_on(c, flipped(g.adjacency, pairs, chosen[i]), g.features, g.label);
        });
        const std::size_t best = first_max(losses);
        r.perturbed.adjacency = flipped(g.adjacency, pairs, chosen[best]);
        r.flips = to_flips(pairs, chosen[best]);
    } else {
        std::vector<Matrix> deltas(k);
        parallel_for(k, threads, [&](std::size_t i) {
            Rng rng(mix_seed(spec.seed, i));
            deltas[i] = random_sphere(g.num_nodes(), g.feature_dim(), spec.epsilon, rng);
            losses[i] = loss_on(c, g.adjacency, g.features + deltas[i], g.label);
        });
        r.perturbed.features = g.features + deltas[first_max(losses)];
    }
    r.loss_trace = losses;
    return finish(r, c, g);
}

AttackResult pgd_structure(const Classifier& c, const Graph& g, const AttackSpec& spec, std::size_t threads) {
    AttackResult r = start(c, g, spec);
    const std::size_t budget = spec.flip_budget(g);
    if (budget == 0) {
        r.empty_budget = true;
        return finish(r, c, g);
    }
    const auto pairs = all_pairs(g.num_nodes());
    std::vector<char> used(pairs.size(), 0);
    std::vector<std::size_t> chosen;
    Matrix a = g.adjacency;
    double current = r.clean_loss;

    for (std::size_t step = 0; step < budget; ++step) {
        Tape t;
        const Var av = t.variable(a);
        const auto fp = forward(t, c, av, t.constant(g.features), false);
        const Var loss = softmax_cross_entropy(fp.logits, g.label);
        t.backward(loss);
        const Matrix& grad = av.grad();

        bool any = false;
        for (double x : grad.data()) any = any || x != 0.0;
        if (!any) {
            if (step == 0) r.flat_landscape = true;
            break;
        }

        std::vector<std::size_t> open;
        std::vector<double> score(pairs.size(), 0.0);
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            if (used[p]) continue;
            const auto [u, v] = pairs[p];
            score[p] = (grad(u, v) + grad(v, u)) * (1.0 - 2.0 * a(u, v));
            open.push_back(p);
        }
        if (open.empty()) break;
        const std::size_t take = std::min(spec.candidates, open.size());
        std::partial_sort(open.begin(), open.begin() + static_cast<std::ptrdiff_t>(take), open.end(),
                          [&](std::size_t x, std::size_t y) { return score[x] > score[y] || (score[x] == score[y] && x < y); });
        open.resize(take);

        std::vector<double> exact(take);
        parallel_for(take, threads, [&](std::size_t i) {
            exact[i] = loss_on(c, flipped(a, pairs, {open[i]}), g.features, g.label);
        });
        const std::size_t best = first_max(exact);
        if (!(exact[best] > current)) break;
        current = exact[best];
        used[open[best]] = 1;
        chosen.push_back(open[best]);
        a = flipped(a, pairs, {open[best]});
        r.loss_trace.push_back(current);
    }
    r.perturbed.adjacency = a;
    r.flips = to_flips(pairs, chosen);
    return finish(r, c, g);
}

AttackResult pgd_features(const Classifier& c, const Graph& g, const AttackSpec& spec) {
    AttackResult r = start(c, g, spec);
    const ScalarFn objective = [&](Tape& t, const Var& x) {
        return softmax_cross_entropy(forward(t, c, t.constant(g.adjacency), x, false).logits, g.label);
    };
    const double eta = spec.step_size > 0.0 ? spec.step_size : spec.epsilon / static_cast<double>(spec.steps);
    const AscentResult a = feature_ascent(objective, g.features, spec.epsilon, spec.steps, eta);
    r.flat_landscape = a.flat;
    r.loss_trace = a.trace;
    r.perturbed.features = g.features + a.delta;
    return finish(r, c, g);
}

struct Individual {
    std::vector<std::size_t> edits;
    double fitness = 0.0;
};

AttackResult genetic_impl(const Classifier& c, const Graph& g, const AttackSpec& spec, std::size_t threads) {
    if (spec.target != AttackTarget::structure) throw ContractError("genetic attack: only the structure target is supported");
    AttackResult r = start(c, g, spec);
    const std::size_t budget = spec.flip_budget(g);
    if (budget == 0) {
        r.empty_budget = true;
        return finish(r, c, g);
    }
    const auto pairs = all_pairs(g.num_nodes());
    const std::size_t size = spec.population;
    auto score = [&](std::vector<Individual>& pop, std::size_t from) {
        parallel_for(pop.size() - from, threads, [&](std::size_t i) {
            auto& ind = pop[from + i];
            ind.fitness = loss_on(c, flipped(g.adjacency, pairs, ind.edits), g.features, g.label);
        });
    };

    std::vector<Individual> pop(size);
    for (std::size_t k = 0; k < size; ++k) {
        Rng rng(mix_seed(spec.seed, k));
        pop[k].edits = sample_pairs(pairs.size(), budget, rng);
    }
    score(pop, 0);
    auto fittest = [](const std::vector<Individual>& p) {
        std::size_t b = 0;
        for (std::size_t i = 1; i < p.size(); ++i)
            if (p[i].fitness > p[b].fitness) b = i;
        return b;
    };
    Individual best = pop[fittest(pop)];
    r.loss_trace.push_back(best.fitness);

    Rng rng(mix_seed(spec.seed, 0x6e6e7c));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> any_member(0, size - 1), any_pair(0, pairs.size() - 1);
    const std::size_t elite =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(spec.elite * static_cast<double>(size) + 1e-9)), 1, size);

    for (std::size_t gen = 0; gen < spec.generations; ++gen) {
        std::vector<std::size_t> order(size);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return pop[x].fitness > pop[y].fitness; });
        std::vector<Individual> next;
        next.reserve(size);
        for (std::size_t i = 0; i < elite; ++i) next.push_back(pop[order[i]]);

        auto tournament = [&]() -> const Individual& {
            const std::size_t x = any_member(rng), y = any_member(rng);
            if (pop[x].fitness > pop[y].fitness || (pop[x].fitness == pop[y].fitness && x < y)) return pop[x];
            return pop[y];
        };
        while (next.size() < size) {
            const Individual& pa = tournament();
            const Individual& pb = tournament();
            const std::size_t longest = std::max(pa.edits.size(), pb.edits.size());
            const std::size_t cut = std::uniform_int_distribution<std::size_t>(0, longest)(rng);
            Individual child;
            std::unordered_set<std::size_t> seen;
            auto take = [&](std::size_t p) {
                if (child.edits.size() < budget && seen.insert(p).second) child.edits.push_back(p);
            };
            for (std::size_t i = 0; i < std::min(cut, pa.edits.size()); ++i) take(pa.edits[i]);
            for (std::size_t i = std::min(cut, pb.edits.size()); i < pb.edits.size(); ++i) take(pb.edits[i]);
            for (auto& e : child.edits) {
                if (unit(rng) >= spec.mutation || seen.size() == pairs.size()) continue;
                std::size_t p = any_pair(rng);
                while (seen.contains(p)) p = any_pair(rng);
                seen.erase(e);
                seen.insert(p);
                e = p;
            }
            next.push_back(std::move(child));
        }
        pop = std::move(next);
        score(pop, elite);
        const std::size_t b = fittest(pop);
        if (pop[b].fitness > best.fitness) best = pop[b];
        r.loss_trace.push_back(best.fitness);
    }
    r.perturbed.adjacency = flipped(g.adjacency, pairs, best.edits);
    r.flips = to_flips(pairs, best.edits);
    return finish(r, c, g);
}

AttackResult dispatch(const Classifier& c, const Graph& g, const AttackSpec& spec, std::size_t threads) {
    switch (spec.kind) {
    case AttackKind::random: return random_impl(c, g, spec, threads);
    case AttackKind::pgd:
        return spec.target == AttackTarget::structure ? pgd_structure(c, g, spec, threads) : pgd_features(c, g, spec);
    case AttackKind::genetic: return genetic_impl(c, g, spec, threads);
    }
    throw ContractError("attack: unknown kind");
}

void require_kind(const AttackSpec& spec, AttackKind k) {
    if (spec.kind != k) throw ContractError("attack: spec.kind is " + to_string(spec.kind) + ", expected " + to_string(k));
}

} // namespace

AttackKind parse_attack_kind(const std::string& s) {
    if (s == "random") return AttackKind::random;
    if (s == "pgd") return AttackKind::pgd;
    if (s == "genetic") return AttackKind::genetic;
    throw ValidationError("attack: unknown kind '" + s + "'");
}

AttackTarget parse_attack_target(const std::string& s) {
    if (s == "structure") return AttackTarget::structure;
    if (s == "features") return AttackTarget::features;
    throw ValidationError("attack: unknown target '" + s + "'");
}

std::string to_string(AttackKind k) {
    switch (k) {
    case AttackKind::random: return "random";
    case AttackKind::pgd: return "pgd";
    case AttackKind::genetic: return "genetic";
    }
    return "?";
}

std::string to_string(AttackTarget t) { return t == AttackTarget::structure ? "structure" : "features"; }

void AttackSpec::validate() const {
    if (!std::isfinite(epsilon)) throw ValidationError("attack: epsilon must be finite");
    if (target == AttackTarget::structure && !(epsilon >= 0.0 && epsilon <= 1.0))
        throw ValidationError("attack: structure epsilon must lie in [0, 1]");
    if (target == AttackTarget::features && !(epsilon > 0.0))
        throw ValidationError("attack: feature epsilon must be positive");
    if (samples == 0 || steps == 0 || candidates == 0 || population == 0)
        throw ValidationError("attack: samples, steps, candidates and population must be at least 1");
    if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ValidationError("attack: step_size must be non-negative");
    if (!(mutation >= 0.0 && mutation <= 1.0)) throw ValidationError("attack: mutation must lie in [0, 1]");
    if (!(elite >= 0.0 && elite <= 1.0)) throw ValidationError("attack: elite must lie in [0, 1]");
    if (kind == AttackKind::genetic && target != AttackTarget::structure)
        throw ValidationError("attack: genetic attack supports the structure target only");
}

std::size_t AttackSpec::flip_budget(const Graph& g) const {
    const std::size_t n = g.num_nodes();
    const auto budget = static_cast<std::size_t>(std::floor(epsilon * static_cast<double>(g.num_edges()) + 1e-9));
    return std::min(budget, n * (n - 1) / 2);
}

void to_json(nlohmann::json& j, const AttackSpec& s) {
    j = nlohmann::json{{"kind", to_string(s.kind)},     {"target", to_string(s.target)},
                       {"epsilon", s.epsilon},          {"samples", s.samples},
                       {"steps", s.steps},              {"step_size", s.step_size},
                       {"candidates", s.candidates},    {"population", s.population},
                       {"generations", s.generations},  {"mutation", s.mutation},
                       {"elite", s.elite},              {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, AttackSpec& s) {
    if (!j.is_object()) throw ValidationError("attack: expected an object");
    static const std::set<std::string> allowed{"kind",       "target",     "epsilon",     "samples",
                                               "steps",      "step_size",  "candidates",  "population",
                                               "generations", "mutation",  "elite",       "seed"};
    for (const auto& [key, _] : j.items())
        if (!allowed.contains(key)) throw ValidationError("attack: unknown field '" + key + "'");
    s = AttackSpec{};
    try {
        if (j.contains("kind")) s.kind = parse_attack_kind(j.at("kind").get<std::string>());
        if (j.contains("target")) s.target = parse_attack_target(j.at("target").get<std::string>());
        if (j.contains("epsilon")) s.epsilon = j.at("epsilon").get<double>();
        if (j.contains("samples")) s.samples = j.at("samples").get<std::size_t>();
        if (j.contains("steps")) s.steps = j.at("steps").get<std::size_t>();
        if (j.contains("step_size")) s.step_size = j.at("step_size").get<double>();
        if (j.contains("candidates")) s.candidates = j.at("candidates").get<std::size_t>();
        if (j.contains("population")) s.population = j.at("population").get<std::size_t>();
        if (j.contains("generations")) s.generations = j.at("generations").get<std::size_t>();
        if (j.contains("mutation")) s.mutation = j.at("mutation").get<double>();
        if (j.contains("elite")) s.elite = j.at("elite").get<double>();
        if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("attack: ") + e.what());
    }
    s.validate();
}

void to_json(nlohmann::json& j, const AttackResult& r) {
    nlohmann::json flips = nlohmann::json::array();
    for (const auto& [u, v] : r.flips) flips.push_back({u, v});
    j = nlohmann::json{{"graph", r.perturbed.id},
                       {"clean_prediction", r.clean_prediction},
                       {"attacked_prediction", r.attacked_prediction},
                       {"success", r.success},
                       {"flips", flips},
                       {"delta_norm", r.delta_norm},
                       {"clean_loss", r.clean_loss},
                       {"attacked_loss", r.attacked_loss},
                       {"loss_trace", r.loss_trace},
                       {"empty_budget", r.empty_budget},
                       {"flat_landscape", r.flat_landscape}};
}

void check_attack_result(const Graph& g, const AttackSpec& spec, const AttackResult& r) {
    r.perturbed.validate();
    if (r.perturbed.num_nodes() != g.num_nodes() || r.perturbed.feature_dim() != g.feature_dim())
        throw ContractError("attack result: shape changed");
    if (spec.target == AttackTarget::structure) {
        if (r.flips.size() > spec.flip_budget(g)) throw ContractError("attack result: flips exceed the budget");
        if (r.perturbed.features != g.features) throw ContractError("attack result: structure attack moved features");
        Matrix expect = g.adjacency;
        std::set<NodePair> seen;
        for (const auto& [u, v] : r.flips) {
            if (!(u < v && v < g.num_nodes()) || !seen.insert({u, v}).second)
                throw ContractError("attack result: invalid or repeated flip");
            expect(u, v) = expect(v, u) = 1.0 - expect(u, v);
        }
        if (expect != r.perturbed.adjacency) throw ContractError("attack result: adjacency differs from the listed flips");
    } else {
        if (r.perturbed.adjacency != g.adjacency) throw ContractError("attack result: feature attack moved edges");
        if ((r.perturbed.features - g.features).frobenius_norm() > spec.epsilon * (1.0 + 1e-12))
            throw ContractError("attack result: feature perturbation exceeds epsilon");
    }
}

AttackResult random_attack(const Classifier& c, const Graph& g, const AttackSpec& spec) {
    require_kind(spec, AttackKind::random);
    return random_impl(c, g, spec, worker_threads());
}

AttackResult pgd_attack(const Classifier& c, const Graph& g, const AttackSpec& spec) {
    require_kind(spec, AttackKind::pgd);
    return dispatch(c, g, spec, worker_threads());
}

AttackResult genetic_attack(const Classifier& c, const Graph& g, const AttackSpec& spec) {
    require_kind(spec, AttackKind::genetic);
    return genetic_impl(c, g, spec, worker_threads());
}

AttackResult run_attack(const Classifier& c, const Graph& g, const AttackSpec& spec) {
    return dispatch(c, g, spec, worker_threads());
}

AscentResult feature_ascent(const ScalarFn& objective, const Matrix& x, double radius, std::size_t steps,
                            double step_size) {
    if (!(radius >= 0.0) || !(step_size > 0.0)) throw ContractError("feature_ascent: radius and step must be positive");
    auto value_at = [&](const Matrix& p) {
        Tape t;
        return objective(t, t.constant(p)).value()[0];
    };
    AscentResult out;
    out.delta = Matrix(x.rows(), x.cols());
    out.best = value_at(x);
    Matrix delta = out.delta;
    for (std::size_t s = 0; s < steps; ++s) {
        Tape t;
        const Var xv = t.variable(x + delta);
        t.backward(objective(t, xv));
        const Matrix& grad = xv.grad();
        const double norm = grad.frobenius_norm();
        if (norm == 0.0) {
            if (s == 0) out.flat = true;
            break;
        }
        delta = delta + grad * (step_size / norm);
        const double size = delta.frobenius_norm();
        if (size > radius) delta = delta * (radius / size);
        const double v = value_at(x + delta);
        out.trace.push_back(v);
        if (v > out.best) {
            out.best = v;
            out.delta = delta;
        }
    }
    return out;
}

AttackSummary evaluate_attack(const Classifier& c, const std::vector<const Graph*>& graphs, const AttackSpec& spec) {
    if (graphs.empty()) throw ContractError("evaluate_attack: empty graph set");
    AttackSummary s;
    s.results.resize(graphs.size());
    parallel_for(graphs.size(), worker_threads(), [&](std::size_t i) {
        AttackSpec local = spec;
        local.seed = mix_seed(spec.seed, i);
        s.results[i] = dispatch(c, *graphs[i], local, 1);
    });
    std::size_t clean_ok = 0, attacked_ok = 0, flipped_ok = 0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        const auto& r = s.results[i];
        const std::size_t label = graphs[i]->label;
        if (r.clean_prediction == label) {
            ++clean_ok;
            if (r.attacked_prediction != label) ++flipped_ok;
        }
        if (r.attacked_prediction == label) ++attacked_ok;
    }
    const double total = static_cast<double>(graphs.size());
    s.initially_correct = clean_ok;
    s.clean_accuracy = static_cast<double>(clean_ok) / total;
    s.attacked_accuracy = static_cast<double>(attacked_ok) / total;
    s.success_rate = clean_ok == 0 ? 0.0 : static_cast<double>(flipped_ok) / static_cast<double>(clean_ok);
    return s;
}

} // namespace spool
