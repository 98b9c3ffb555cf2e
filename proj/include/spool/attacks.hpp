#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spool/gnn.hpp"
#include "spool/graph.hpp"

namespace spool {

enum class AttackKind { random, pgd, genetic };
enum class AttackTarget { structure, features };

AttackKind parse_attack_kind(const std::string& s);
AttackTarget parse_attack_target(const std::string& s);
std::string to_string(AttackKind k);
std::string to_string(AttackTarget t);

/// Budget: fraction of edges for structure, Frobenius radius for features.
struct AttackSpec {
    AttackKind kind = AttackKind::random;
    AttackTarget target = AttackTarget::structure;
    double epsilon = 0.3;

    std::size_t samples = 20;    // random: K
    std::size_t steps = 10;      // pgd features
    double step_size = 0.0;      // pgd features; 0 means ε/steps
    std::size_t candidates = 8;  // pgd structure: flips re-scored by exact loss per step
    std::size_t population = 20; // genetic
    std::size_t generations = 10;
    double mutation = 0.1;
    double elite = 0.1;
    std::uint64_t seed = 0;

    /// Throws ValidationError.
    void validate() const;
    /// ⌊ε·m⌋, capped by the number of node pairs. Structure only.
    std::size_t flip_budget(const Graph& g) const;
};

void to_json(nlohmann::json& j, const AttackSpec& s);
/// Strict: unknown keys raise ValidationError.
void from_json(const nlohmann::json& j, AttackSpec& s);

using NodePair = std::pair<std::size_t, std::size_t>; // u < v

struct AttackResult {
    Graph perturbed;
    std::size_t clean_prediction = 0;
    std::size_t attacked_prediction = 0;
    /// Clean prediction was correct and the attacked one is not.
    bool success = false;
    std::vector<NodePair> flips; // structure
    double delta_norm = 0.0;     // features, ‖ΔX‖_F
    double clean_loss = 0.0;
    double attacked_loss = 0.0;
    /// Loss after each accepted step (pgd), per candidate (random) or best per generation (genetic).
    std::vector<double> loss_trace;
    bool empty_budget = false;
    bool flat_landscape = false;
};

void to_json(nlohmann::json& j, const AttackResult& r);

/// Throws ContractError if `r` breaks the budget or Graph invariants for `g`.
void check_attack_result(const Graph& g, const AttackSpec& spec, const AttackResult& r);

/// Worst-of-K by cross-entropy on the true label. Candidate k draws from
/// mix_seed(seed, k), so smaller K sees a prefix of the same candidates.
AttackResult random_attack(const Classifier& c, const Graph& g, const AttackSpec& spec);

/// Structure: greedy flips ranked by (∂L/∂A_ij + ∂L/∂A_ji)(1 − 2A_ij), the top
/// `candidates` re-scored by exact loss, a flip kept only if it raises the loss.
/// Features: normalized-gradient ascent projected onto the ε-ball; the best
/// iterate is returned.
AttackResult pgd_attack(const Classifier& c, const Graph& g, const AttackSpec& spec);

/// Edit-set GA over symmetric flips. Structure only.
AttackResult genetic_attack(const Classifier& c, const Graph& g, const AttackSpec& spec);

/// Dispatch on spec.kind.
AttackResult run_attack(const Classifier& c, const Graph& g, const AttackSpec& spec);

/// Ascent on a scalar objective of X: Δ ← Π(Δ + η·∇/‖∇‖) with ‖Δ‖_F ≤ radius.
/// Returns the Δ with the largest objective (zero if no step helps) and
/// fills `trace` with the objective after every step.
struct AscentResult {
    Matrix delta;
    double best = 0.0;
    std::vector<double> trace;
    bool flat = false;
};
AscentResult feature_ascent(const ScalarFn& objective, const Matrix& x, double radius, std::size_t steps,
                            double step_size);

struct AttackSummary {
    double clean_accuracy = 0.0;
    double attacked_accuracy = 0.0;
    /// Among initially-correct graphs, the fraction flipped. 0 when none were correct.
    double success_rate = 0.0;
    std::size_t initially_correct = 0;
    std::vector<AttackResult> results;
};

/// Graph i is attacked with seed mix_seed(spec.seed, i).
AttackSummary evaluate_attack(const Classifier& c, const std::vector<const Graph*>& graphs, const AttackSpec& spec);

} // namespace spool
