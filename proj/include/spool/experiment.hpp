#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spool/attacks.hpp"
#include "spool/gnn.hpp"
#include "spool/graph.hpp"
#include "spool/pooling.hpp"

namespace spool {

inline constexpr int kSchemaVersion = 1;

/// Either a TU-format directory or a generated dataset.
struct DatasetSource {
    bool synthetic = false;
    // directory
    std::filesystem::path directory;
    std::string name;
    bool use_node_attributes = false;
    std::optional<std::filesystem::path> splits; // {"folds": [[...], ...]}
    // synthetic
    SynthKind synth = SynthKind::cycle_vs_path;
    std::size_t graphs = 100;
    std::size_t nodes = 10;
    std::uint64_t synth_seed = 0;
    // generated folds when no split file is given
    std::size_t folds = 10;
    std::uint64_t split_seed = 0;
};

struct BoundsConfig {
    bool enabled = true;
    double epsilon = 0.1;
    std::size_t samples = 100;
    /// B for the GIN bounds; defaults to the dataset's largest ‖X‖₂.
    std::optional<double> feature_bound;
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    DatasetSource dataset;
    Arch arch = Arch::gcn;
    std::size_t layers = 2;
    std::size_t hidden = 32;
    std::size_t readout_hidden = 32;
    PoolingKind pooling = PoolingKind::rs_scaled(2, 1.0);
    TrainConfig train;
    std::optional<AttackSpec> attack;
    BoundsConfig bounds;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::filesystem::path output = "runs";

    /// Throws ValidationError naming every offending field.
    void validate() const;
};

/// Strict: unknown keys anywhere raise ValidationError.
void from_json(const nlohmann::json& j, ExperimentConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);

/// Relative dataset paths resolve against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& file);

/// Hex SHA-1 of `data`.
std::string sha1_hex(std::string_view data);
/// SHA-1 of "blob <size>\0" + data, as git hashes file contents.
std::string git_blob_hash(std::string_view data);

/// The config with seeds and output removed; what fragments are merged on.
nlohmann::json config_identity(const ExperimentConfig& c);
/// git_blob_hash over the identity plus the dataset contents.
std::string config_hash(const ExperimentConfig& c);

Dataset load_dataset(const ExperimentConfig& c);
SplitSpec load_split(const ExperimentConfig& c, const Dataset& ds);

/// Fold used by a seed: seed mod folds.
std::size_t fold_for_seed(const SplitSpec& split, std::uint64_t seed);

/// Writes via a temporary file and rename.
void write_atomic(const std::filesystem::path& file, std::string_view content);

/// Each command returns the fragment it persisted under <output>/fragments.
nlohmann::json cmd_ingest(const ExperimentConfig& c);
nlohmann::json cmd_train(const ExperimentConfig& c);
/// Trains first when a seed has no checkpoint.
nlohmann::json cmd_attack(const ExperimentConfig& c);
/// Also writes <output>/bounds-<hash>.csv.
nlohmann::json cmd_bounds(const ExperimentConfig& c);
/// Also writes <output>/convergence-<hash>.csv.
nlohmann::json cmd_convergence(const ExperimentConfig& c);
/// Merges every fragment under <dir>/fragments into summary.json and summary.csv.
nlohmann::json cmd_report(const std::filesystem::path& dir);

/// Checkpointed model for one seed, training it if absent.
Classifier trained_model(const ExperimentConfig& c, const Dataset& ds, const SplitSpec& split, std::uint64_t seed);

} // namespace spool
