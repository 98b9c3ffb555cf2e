#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spool/tensor.hpp"

namespace spool {

/// Undirected simple graph with dense node features.
///
/// Invariants: adjacency is n×n, symmetric, binary with a zero diagonal;
/// features are n×d and finite; n ≥ 1.
struct Graph {
    Matrix adjacency;
    Matrix features;
    std::size_t label = 0;
    std::size_t id = 0;

    std::size_t num_nodes() const noexcept { return adjacency.rows(); }
    std::size_t feature_dim() const noexcept { return features.cols(); }
    std::size_t num_edges() const;
    std::size_t degree(std::size_t u) const;
    std::size_t max_degree() const;

    /// Throws ContractError describing the first violated invariant.
    void validate() const;
    bool is_valid() const noexcept;
};

/// Builds a graph from an undirected edge list (0-based); duplicates and
/// both directions collapse to one edge, self-loops are dropped.
Graph make_graph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                 Matrix features, std::size_t label = 0);

/// Relabels nodes: node u of g becomes node perm[u] of the result.
Graph permute_nodes(const Graph& g, const std::vector<std::size_t>& perm);

struct Dataset {
    std::string name;
    std::vector<Graph> graphs;
    std::size_t num_classes = 0;
    std::size_t feature_dim = 0;
    /// Original label values, indexed by the remapped class.
    std::vector<long long> label_values;

    void validate() const;
    /// Largest spectral norm ‖X‖₂ over all feature matrices.
    double max_feature_norm() const;
};

/// Fold assignment for k-fold cross-validation.
struct SplitSpec {
    std::vector<std::size_t> fold_of;
    std::size_t folds = 10;
    std::uint64_t seed = 0;

    std::vector<std::size_t> test_indices(std::size_t fold) const;
    std::vector<std::size_t> train_indices(std::size_t fold) const;
};

struct TuDatasetOptions {
    /// Concatenate NAME_node_attributes.txt after the one-hot node labels
    /// when both files exist. Attributes are always used when labels are absent.
    bool use_node_attributes = false;
};

/// Reads the TUDataset flat-file layout from `directory`.
Dataset load_tudataset(const std::filesystem::path& directory, const std::string& name,
                       const TuDatasetOptions& options = {});

/// D̃^{-1/2}(A+I)D̃^{-1/2}.
Matrix normalized_adjacency(const Graph& g);

/// Class-stratified, seed-deterministic fold assignment.
SplitSpec make_splits(const Dataset& ds, std::size_t folds, std::uint64_t seed);

/// Reads `{"folds": [[test indices]...]}` and checks it partitions [0, num_graphs).
SplitSpec load_splits(const std::filesystem::path& file, std::size_t num_graphs);

enum class SynthKind { density_pair, cycle_vs_path };

SynthKind parse_synth_kind(const std::string& s);
std::string to_string(SynthKind kind);

/// Two structurally separable classes with normalized-degree features.
Dataset synth_dataset(SynthKind kind, std::size_t n_graphs, std::size_t n_nodes, std::uint64_t seed);

/// Writes `ds` in TUDataset layout (node labels omitted, features as attributes).
void write_tudataset(const Dataset& ds, const std::filesystem::path& directory);

} // namespace spool
