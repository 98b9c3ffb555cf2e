#include "spool/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "spool/bounds.hpp"
#include "spool/random.hpp"

namespace spool {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

/// Collects field errors so validation reports all of them at once.
struct Problems {
    std::vector<std::string> list;

    void unknown_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
        for (const auto& [key, _] : j.items())
            if (!allowed.contains(key)) list.push_back(where + key + ": unknown field");
    }

    template <typename T>
    void read(const json& j, const std::string& key, const std::string& where, T& out) {
        if (!j.contains(key)) return;
        try {
            out = j.at(key).get<T>();
        } catch (const std::exception& e) {
            list.push_back(where + key + ": " + e.what());
        }
    }

    void raise() const {
        if (!list.empty()) throw ValidationError("invalid config: " + join(list, "; "));
    }
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IngestError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string dataset_digest(const ExperimentConfig& c) {
    if (c.dataset.synthetic) return "";
    std::vector<fs::path> files;
    const std::string prefix = c.dataset.name + "_";
    if (!fs::is_directory(c.dataset.directory))
        throw IngestError("dataset directory " + c.dataset.directory.string() + " does not exist");
    for (const auto& e : fs::directory_iterator(c.dataset.directory))
        if (e.is_regular_file() && e.path().filename().string().starts_with(prefix)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) acc += f.filename().string() + " " + git_blob_hash(read_file(f)) + "\n";
    if (c.dataset.splits) acc += "splits " + git_blob_hash(read_file(*c.dataset.splits)) + "\n";
    return acc;
}

std::string short_hash(const std::string& h) { return h.substr(0, 12); }

std::string model_hash(const ExperimentConfig& c) {
    json id = config_identity(c);
    id.erase("attack");
    id.erase("bounds");
    return short_hash(git_blob_hash(id.dump() + "\n" + dataset_digest(c)));
}

fs::path checkpoint_path(const ExperimentConfig& c, std::uint64_t seed) {
    return c.output / "checkpoints" / model_hash(c) / ("seed-" + std::to_string(seed) + ".json");
}

struct SeedRecord {
    std::uint64_t seed = 0;
    std::size_t fold = 0;
    json metrics = json::object();
    json timings = json::object();
};

json make_fragment(const ExperimentConfig& c, const std::string& kind, const std::vector<SeedRecord>& recs) {
    json per_seed = json::array();
    for (const auto& r : recs)
        per_seed.push_back({{"seed", r.seed}, {"fold", r.fold}, {"metrics", r.metrics}, {"timings", r.timings}});
    return json{{"kind", kind},
                {"schema_version", kSchemaVersion},
                {"config_hash", config_hash(c)},
                {"config", config_identity(c)},
                {"pooling", c.pooling.name()},
                {"seeds", c.seeds},
                {"per_seed", per_seed}};
}

json persist(const ExperimentConfig& c, const json& fragment) {
    const std::string seeds = short_hash(sha1_hex(json(c.seeds).dump())).substr(0, 8);
    const fs::path file = c.output / "fragments" /
                          (fragment.at("kind").get<std::string>() + "-" + short_hash(fragment.at("config_hash")) + "-" +
                           seeds + ".json");
    write_atomic(file, fragment.dump(2) + "\n");
    return fragment;
}

std::string fmt(double x) {
    std::ostringstream ss;
    ss << std::setprecision(17) << x;
    return ss.str();
}

struct Context {
    Dataset ds;
    SplitSpec split;
};

Context prepare(const ExperimentConfig& c) {
    c.validate();
    Context ctx{load_dataset(c), {}};
    ctx.split = load_split(c, ctx.ds);
    return ctx;
}

std::vector<const Graph*> graphs_at(const Dataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<const Graph*> out;
    for (auto i : idx) out.push_back(&ds.graphs.at(i));
    return out;
}

/// fn(record, index into c.seeds)
template <typename Fn>
std::vector<SeedRecord> per_seed(const ExperimentConfig& c, const SplitSpec& split, Fn&& fn) {
    std::vector<SeedRecord> recs(c.seeds.size());
    parallel_for(c.seeds.size(), worker_threads(), [&](std::size_t i) {
        recs[i].seed = c.seeds[i];
        recs[i].fold = fold_for_seed(split, c.seeds[i]);
        fn(recs[i], i);
    });
    return recs;
}

ModelShape shape_of(const ExperimentConfig& c, const Dataset& ds) {
    ModelShape s;
    s.arch = c.arch;
    s.input_dim = ds.feature_dim;
    s.hidden_dim = c.hidden;
    s.layers = c.layers;
    s.readout_hidden = c.readout_hidden;
    s.num_classes = ds.num_classes;
    return s;
}

TrainResult train_seed(const ExperimentConfig& c, const Dataset& ds, const SplitSpec& split, std::uint64_t seed) {
    TrainConfig tc = c.train;
    tc.seed = seed;
    const Classifier init = make_classifier(shape_of(c, ds), c.pooling, mix_seed(seed, 1));
    TrainResult r = train(init, ds, split, fold_for_seed(split, seed), tc);
    const json ck{{"model", r.model},
                  {"train_accuracy", r.train_accuracy},
                  {"test_accuracy", r.test_accuracy},
                  {"seconds", r.seconds}};
    write_atomic(checkpoint_path(c, seed), ck.dump() + "\n");
    return r;
}

double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Flattens a JSON value into path → leaf for the mismatch diff.
void flatten(const json& j, const std::string& prefix, std::map<std::string, std::string>& out) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    } else {
        out[prefix] = j.dump();
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
    std::vector<std::string> p;
    if (schema_version != kSchemaVersion)
        p.push_back("schema_version: expected " + std::to_string(kSchemaVersion) + ", got " + std::to_string(schema_version));
    if (dataset.synthetic) {
        if (dataset.graphs < 2) p.push_back("dataset.graphs: need at least 2");
        if (dataset.nodes < 2) p.push_back("dataset.nodes: need at least 2");
    } else {
        if (dataset.directory.empty()) p.push_back("dataset.directory: required");
        if (dataset.name.empty()) p.push_back("dataset.name: required");
        if (!dataset.directory.empty() && !fs::is_directory(dataset.directory))
            p.push_back("dataset.directory: " + dataset.directory.string() + " does not exist");
        if (dataset.splits && !fs::is_regular_file(*dataset.splits))
            p.push_back("dataset.splits: " + dataset.splits->string() + " does not exist");
    }
    if (dataset.folds < 2) p.push_back("dataset.folds: need at least 2");
    if (layers == 0) p.push_back("model.layers: need at least 1");
    if (hidden == 0) p.push_back("model.hidden: need at least 1");
    if (readout_hidden == 0) p.push_back("model.readout_hidden: need at least 1");
    try {
        pooling.validate();
        if (pooling.is_rs() && pooling.output == RsOutput::projected)
            p.push_back("pooling.output: the classifier needs the right_singular output");
    } catch (const Error& e) {
        p.push_back(std::string("pooling: ") + e.what());
    }
    try {
        train.validate();
    } catch (const Error& e) {
        p.push_back(std::string("train: ") + e.what());
    }
    if (attack) {
        try {
            attack->validate();
        } catch (const Error& e) {
            p.push_back(std::string("attack: ") + e.what());
        }
    }
    if (!(bounds.epsilon >= 0.0) || !std::isfinite(bounds.epsilon)) p.push_back("bounds.epsilon: must be non-negative");
    if (bounds.samples == 0) p.push_back("bounds.samples: need at least 1");
    if (bounds.feature_bound && !(*bounds.feature_bound > 0.0)) p.push_back("bounds.feature_bound: must be positive");
    if (seeds.empty()) p.push_back("seeds: must be non-empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) p.push_back("seeds: duplicates");
    if (!p.empty()) throw ValidationError("invalid config: " + join(p, "; "));
}

void from_json(const json& j, ExperimentConfig& c) {
    Problems p;
    if (!j.is_object()) throw ValidationError("invalid config: expected a JSON object");
    c = ExperimentConfig{};
    p.unknown_keys(j, "", {"schema_version", "dataset", "model", "pooling", "train", "attack", "bounds", "seeds", "output"});
    if (!j.contains("schema_version")) p.list.push_back("schema_version: required");
    p.read(j, "schema_version", "", c.schema_version);

    if (!j.contains("dataset") || !j.at("dataset").is_object()) {
        p.list.push_back("dataset: required object");
    } else {
        const json& d = j.at("dataset");
        auto& s = c.dataset;
        s.synthetic = d.contains("synthetic");
        if (s.synthetic) {
            p.unknown_keys(d, "dataset.", {"synthetic", "graphs", "nodes", "seed", "folds", "split_seed"});
            std::string kind;
            p.read(d, "synthetic", "dataset.", kind);
            try {
                s.synth = parse_synth_kind(kind);
            } catch (const Error& e) {
                p.list.push_back(std::string("dataset.synthetic: ") + e.what());
            }
            p.read(d, "graphs", "dataset.", s.graphs);
            p.read(d, "nodes", "dataset.", s.nodes);
            p.read(d, "seed", "dataset.", s.synth_seed);
        } else {
            p.unknown_keys(d, "dataset.", {"directory", "name", "use_node_attributes", "splits", "folds", "split_seed"});
            std::string dir, splits;
            p.read(d, "directory", "dataset.", dir);
            s.directory = dir;
            p.read(d, "name", "dataset.", s.name);
            p.read(d, "use_node_attributes", "dataset.", s.use_node_attributes);
            if (d.contains("splits")) {
                p.read(d, "splits", "dataset.", splits);
                s.splits = splits;
            }
        }
        p.read(d, "folds", "dataset.", s.folds);
        p.read(d, "split_seed", "dataset.", s.split_seed);
    }

    if (j.contains("model")) {
        const json& m = j.at("model");
        p.unknown_keys(m, "model.", {"arch", "layers", "hidden", "readout_hidden"});
        std::string arch = "gcn";
        p.read(m, "arch", "model.", arch);
        try {
            c.arch = parse_arch(arch);
        } catch (const Error& e) {
            p.list.push_back(std::string("model.arch: ") + e.what());
        }
        p.read(m, "layers", "model.", c.layers);
        p.read(m, "hidden", "model.", c.hidden);
        p.read(m, "readout_hidden", "model.", c.readout_hidden);
    }
    p.read(j, "pooling", "", c.pooling);
    if (j.contains("train")) {
        const json& t = j.at("train");
        p.unknown_keys(t, "train.", {"epochs", "learning_rate", "beta1", "beta2", "adam_eps"});
        p.read(t, "epochs", "train.", c.train.epochs);
        p.read(t, "learning_rate", "train.", c.train.learning_rate);
        p.read(t, "beta1", "train.", c.train.beta1);
        p.read(t, "beta2", "train.", c.train.beta2);
        p.read(t, "adam_eps", "train.", c.train.adam_eps);
    }
    if (j.contains("attack") && !j.at("attack").is_null()) {
        AttackSpec a;
        p.read(j, "attack", "", a);
        c.attack = a;
    }
    if (j.contains("bounds")) {
        const json& b = j.at("bounds");
        p.unknown_keys(b, "bounds.", {"enabled", "epsilon", "samples", "feature_bound"});
        p.read(b, "enabled", "bounds.", c.bounds.enabled);
        p.read(b, "epsilon", "bounds.", c.bounds.epsilon);
        p.read(b, "samples", "bounds.", c.bounds.samples);
        if (b.contains("feature_bound")) {
            double v = 0.0;
            p.read(b, "feature_bound", "bounds.", v);
            c.bounds.feature_bound = v;
        }
    }
    p.read(j, "seeds", "", c.seeds);
    std::string out = c.output.string();
    p.read(j, "output", "", out);
    c.output = out;
    p.raise();
}

void to_json(json& j, const ExperimentConfig& c) {
    json d;
    if (c.dataset.synthetic) {
        d = {{"synthetic", to_string(c.dataset.synth)},
             {"graphs", c.dataset.graphs},
             {"nodes", c.dataset.nodes},
             {"seed", c.dataset.synth_seed}};
    } else {
        d = {{"directory", c.dataset.directory.string()},
             {"name", c.dataset.name},
             {"use_node_attributes", c.dataset.use_node_attributes}};
        if (c.dataset.splits) d["splits"] = c.dataset.splits->string();
    }
    d["folds"] = c.dataset.folds;
    d["split_seed"] = c.dataset.split_seed;
    json b{{"enabled", c.bounds.enabled}, {"epsilon", c.bounds.epsilon}, {"samples", c.bounds.samples}};
    if (c.bounds.feature_bound) b["feature_bound"] = *c.bounds.feature_bound;
    j = json{{"schema_version", c.schema_version},
             {"dataset", d},
             {"model", {{"arch", to_string(c.arch)}, {"layers", c.layers}, {"hidden", c.hidden},
                        {"readout_hidden", c.readout_hidden}}},
             {"pooling", c.pooling},
             {"train", {{"epochs", c.train.epochs}, {"learning_rate", c.train.learning_rate},
                        {"beta1", c.train.beta1}, {"beta2", c.train.beta2}, {"adam_eps", c.train.adam_eps}}},
             {"attack", c.attack ? json(*c.attack) : json(nullptr)},
             {"bounds", b},
             {"seeds", c.seeds},
             {"output", c.output.string()}};
}

ExperimentConfig load_config(const fs::path& file) {
    json j;
    try {
        j = json::parse(read_file(file));
    } catch (const json::parse_error& e) {
        throw ValidationError("config " + file.string() + ": " + e.what());
    } catch (const IngestError& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    ExperimentConfig c = j.get<ExperimentConfig>();
    const fs::path base = file.parent_path();
    if (!c.dataset.synthetic && c.dataset.directory.is_relative()) c.dataset.directory = base / c.dataset.directory;
    if (c.dataset.splits && c.dataset.splits->is_relative()) c.dataset.splits = base / *c.dataset.splits;
    c.validate();
    return c;
}

std::string sha1_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1)
        throw Error("sha1: digest failed");
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return ss.str();
}

std::string git_blob_hash(std::string_view data) {
    std::string blob = "blob " + std::to_string(data.size());
    blob.push_back('\0');
    blob.append(data);
    return sha1_hex(blob);
}

json config_identity(const ExperimentConfig& c) {
    json j = c;
    j.erase("seeds");
    j.erase("output");
    // Paths differ between machines; the dataset digest covers the content.
    j["dataset"].erase("directory");
    j["dataset"].erase("splits");
    return j;
}

std::string config_hash(const ExperimentConfig& c) {
    return git_blob_hash(config_identity(c).dump() + "\n" + dataset_digest(c));
}

Dataset load_dataset(const ExperimentConfig& c) {
    if (c.dataset.synthetic)
        return synth_dataset(c.dataset.synth, c.dataset.graphs, c.dataset.nodes, c.dataset.synth_seed);
    TuDatasetOptions o;
    o.use_node_attributes = c.dataset.use_node_attributes;
    return load_tudataset(c.dataset.directory, c.dataset.name, o);
}

SplitSpec load_split(const ExperimentConfig& c, const Dataset& ds) {
    if (c.dataset.splits) return load_splits(*c.dataset.splits, ds.graphs.size());
    return make_splits(ds, c.dataset.folds, c.dataset.split_seed);
}

std::size_t fold_for_seed(const SplitSpec& split, std::uint64_t seed) {
    return static_cast<std::size_t>(seed % split.folds);
}

void write_atomic(const fs::path& file, std::string_view content) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    const fs::path tmp =
        file.string() + ".tmp-" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        if (!out.flush()) throw Error("cannot write " + tmp.string());
    }
    fs::rename(tmp, file);
}

Classifier trained_model(const ExperimentConfig& c, const Dataset& ds, const SplitSpec& split, std::uint64_t seed) {
    const fs::path ck = checkpoint_path(c, seed);
    if (fs::exists(ck)) {
        try {
            return json::parse(read_file(ck)).at("model").get<Classifier>();
        } catch (const json::exception& e) {
            throw ValidationError("checkpoint " + ck.string() + ": " + e.what());
        }
    }
    return train_seed(c, ds, split, seed).model;
}

// ---------------------------------------------------------------------------
// Commands

json cmd_ingest(const ExperimentConfig& c) {
    c.validate();
    const auto t0 = Clock::now();
    const Context ctx = prepare(c);
    const Dataset& ds = ctx.ds;
    std::vector<std::size_t> per_class(ds.num_classes, 0);
    double nodes = 0.0, edges = 0.0;
    for (const auto& g : ds.graphs) {
        ++per_class[g.label];
        nodes += static_cast<double>(g.num_nodes());
        edges += static_cast<double>(g.num_edges());
    }
    const double count = static_cast<double>(ds.graphs.size());
    json frag{{"kind", "ingest"},
              {"schema_version", kSchemaVersion},
              {"config_hash", config_hash(c)},
              {"config", config_identity(c)},
              {"dataset",
               {{"name", ds.name},
                {"graphs", ds.graphs.size()},
                {"classes", ds.num_classes},
                {"feature_dim", ds.feature_dim},
                {"class_counts", per_class},
                {"mean_nodes", nodes / count},
                {"mean_edges", edges / count},
                {"max_feature_norm", ds.max_feature_norm()},
                {"folds", ctx.split.folds}}},
              {"timings", {{"ingest_seconds", seconds_since(t0)}}}};
    const fs::path file = c.output / "fragments" / ("ingest-" + short_hash(frag.at("config_hash")) + ".json");
    write_atomic(file, frag.dump(2) + "\n");
    return frag;
}

json cmd_train(const ExperimentConfig& c) {
    const Context ctx = prepare(c);
    auto recs = per_seed(c, ctx.split, [&](SeedRecord& r, std::size_t) {
        const TrainResult t = train_seed(c, ctx.ds, ctx.split, r.seed);
        r.metrics = {{"clean_accuracy", t.test_accuracy},
                     {"train_accuracy", t.train_accuracy},
                     {"final_loss", t.curve.empty() ? 0.0 : t.curve.back().mean_loss}};
        r.timings = {{"train_seconds", t.seconds}};
    });
    return persist(c, make_fragment(c, "train", recs));
}

json cmd_attack(const ExperimentConfig& c) {
    const Context ctx = prepare(c);
    if (!c.attack) throw ValidationError("invalid config: attack: required for the attack command");
    auto recs = per_seed(c, ctx.split, [&](SeedRecord& r, std::size_t) {
        const Classifier m = trained_model(c, ctx.ds, ctx.split, r.seed);
        const auto t0 = Clock::now();
        AttackSpec spec = *c.attack;
        spec.seed = mix_seed(c.attack->seed, r.seed);
        const auto test = graphs_at(ctx.ds, ctx.split.test_indices(r.fold));
        const AttackSummary s = evaluate_attack(m, test, spec);
        std::size_t empty = 0, flat = 0;
        for (const auto& a : s.results) {
            check_attack_result(*test[&a - s.results.data()], spec, a);
            empty += a.empty_budget ? 1 : 0;
            flat += a.flat_landscape ? 1 : 0;
        }
        r.metrics = {{"clean_accuracy", s.clean_accuracy},
                     {"attacked_accuracy", s.attacked_accuracy},
                     {"success_rate", s.success_rate},
                     {"empty_budget_graphs", empty},
                     {"flat_landscape_graphs", flat}};
        r.timings = {{"attack_seconds", seconds_since(t0)}};
    });
    json frag = make_fragment(c, "attack", recs);
    frag["attack"] = *c.attack;
    return persist(c, frag);
}

json cmd_bounds(const ExperimentConfig& c) {
    const Context ctx = prepare(c);
    const std::vector<PoolingKind> kinds{PoolingKind::sum(), PoolingKind::average(), PoolingKind::max(),
                                         c.pooling.is_rs() ? c.pooling : PoolingKind::rs_scaled(2, 1.0)};
    const std::vector<std::string> names{"sum", "average", "max", "rs"};
    const double b = c.bounds.feature_bound.value_or(ctx.ds.max_feature_norm());
    const std::string source = c.bounds.feature_bound ? "user" : "dataset-max";
    std::vector<std::string> rows_of(c.seeds.size());

    auto recs = per_seed(c, ctx.split, [&](SeedRecord& r, std::size_t idx) {
        const Classifier m = trained_model(c, ctx.ds, ctx.split, r.seed);
        const auto t0 = Clock::now();
        const auto test = ctx.split.test_indices(r.fold);
        std::vector<std::vector<double>> gamma(4), emp(4);
        std::size_t violations[3] = {0, 0, 0};
        std::ostringstream rows;
        for (std::size_t gi : test) {
            const Graph& g = ctx.ds.graphs[gi];
            double rs_unclamped = 0.0;
            std::vector<double> gm(4), em(4);
            for (std::size_t k = 0; k < 4; ++k) {
                Classifier cp = m;
                cp.pooling = kinds[k];
                const BoundReport rep = bound_for(cp, g, c.bounds.epsilon, b, source);
                gm[k] = rep.gamma;
                if (k == 3) rs_unclamped = rep.gamma_unclamped;
                em[k] = empirical_risk(cp, g, c.bounds.epsilon, c.bounds.samples, mix_seed(r.seed, gi)).mean;
                gamma[k].push_back(gm[k]);
                emp[k].push_back(em[k]);
                if (k < 3 && em[k] > gm[k]) ++violations[k];
            }
            rows << r.seed << ',' << gi << ',' << g.num_nodes();
            for (double x : gm) rows << ',' << fmt(x);
            rows << ',' << (std::isfinite(rs_unclamped) ? fmt(rs_unclamped) : "inf");
            for (double x : em) rows << ',' << fmt(x);
            rows << '\n';
        }
        rows_of[idx] = rows.str();
        for (std::size_t k = 0; k < 4; ++k) {
            r.metrics["gamma_mean_" + names[k]] = mean_of(gamma[k]);
            r.metrics["empirical_mean_" + names[k]] = mean_of(emp[k]);
        }
        for (std::size_t k = 0; k < 3; ++k) r.metrics["violations_" + names[k]] = violations[k];
        r.metrics["graphs"] = test.size();
        r.timings = {{"bounds_seconds", seconds_since(t0)}};
    });

    std::string csv = "seed,graph,n,gamma_sum,gamma_average,gamma_max,gamma_rs,gamma_rs_unclamped,"
                      "empirical_sum,empirical_average,empirical_max,empirical_rs\n";
    for (const auto& rows : rows_of) csv += rows;
    write_atomic(c.output / ("bounds-" + short_hash(config_hash(c)) + ".csv"), csv);
    json frag = make_fragment(c, "bounds", recs);
    frag["feature_bound"] = {{"value", b}, {"source", source}};
    return persist(c, frag);
}

json cmd_convergence(const ExperimentConfig& c) {
    constexpr int kMaxK = 10;
    const Context ctx = prepare(c);
    std::vector<std::string> rows_of(c.seeds.size());
    auto recs = per_seed(c, ctx.split, [&](SeedRecord& r, std::size_t idx) {
        const Classifier m = trained_model(c, ctx.ds, ctx.split, r.seed);
        const auto t0 = Clock::now();
        const auto test = ctx.split.test_indices(r.fold);
        std::vector<std::vector<double>> dist(kMaxK);
        std::size_t skipped = 0;
        std::ostringstream rows;
        for (std::size_t gi : test) {
            const Matrix h = embed(m, ctx.ds.graphs[gi]);
            if (h.frobenius_norm() == 0.0) {
                ++skipped;
                continue;
            }
            const SpectralInfo info = svd_oracle(h);
            try {
                std::vector<double> d(kMaxK);
                for (int k = 1; k <= kMaxK; ++k) {
                    const Matrix v = power_iteration(h, k, c.pooling.start_seed).v;
                    d[k - 1] = std::min((v - info.v1).frobenius_norm(), (v + info.v1).frobenius_norm());
                }
                const double ratio = info.sigma1 > 0.0 ? info.sigma2 / info.sigma1 : 0.0;
                for (int k = 1; k <= kMaxK; ++k) {
                    dist[k - 1].push_back(d[k - 1]);
                    rows << r.seed << ',' << gi << ',' << k << ',' << fmt(d[k - 1]) << ',' << fmt(ratio) << '\n';
                }
            } catch (const DegenerateError&) {
                ++skipped;
            }
        }
        rows_of[idx] = rows.str();
        for (int k = 1; k <= kMaxK; ++k) r.metrics["median_distance_k" + std::to_string(k)] = median(dist[k - 1]);
        r.metrics["skipped_graphs"] = skipped;
        if (c.pooling.is_rs()) {
            const auto graphs = graphs_at(ctx.ds, test);
            for (int k = 1; k <= kMaxK; ++k) {
                Classifier cp = m;
                cp.pooling.iterations = k;
                r.metrics["accuracy_k" + std::to_string(k)] = evaluate(cp, graphs);
            }
        }
        r.timings = {{"convergence_seconds", seconds_since(t0)}};
    });
    std::string csv = "seed,graph,K,distance,gap_ratio\n";
    for (const auto& rows : rows_of) csv += rows;
    write_atomic(c.output / ("convergence-" + short_hash(config_hash(c)) + ".csv"), csv);
    return persist(c, make_fragment(c, "convergence", recs));
}

json cmd_report(const fs::path& dir) {
    const fs::path frag_dir = dir / "fragments";
    std::vector<fs::path> files;
    if (fs::is_directory(frag_dir))
        for (const auto& e : fs::directory_iterator(frag_dir))
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    if (files.empty()) throw ValidationError("no run fragments in " + dir.string());
    std::sort(files.begin(), files.end());

    std::vector<json> frags;
    for (const auto& f : files) {
        try {
            frags.push_back(json::parse(read_file(f)));
        } catch (const json::exception& e) {
            throw ValidationError("fragment " + f.string() + ": " + e.what());
        }
    }
    const json& first = frags.front();
    for (std::size_t i = 1; i < frags.size(); ++i) {
        if (frags[i].at("config_hash") == first.at("config_hash")) continue;
        std::map<std::string, std::string> a, b;
        flatten(first.at("config"), "", a);
        flatten(frags[i].at("config"), "", b);
        std::vector<std::string> diff;
        for (const auto& [k, v] : a)
            if (!b.contains(k) || b[k] != v) diff.push_back(k + ": " + v + " vs " + (b.contains(k) ? b[k] : "(absent)"));
        for (const auto& [k, v] : b)
            if (!a.contains(k)) diff.push_back(k + ": (absent) vs " + v);
        if (diff.empty()) diff.push_back("dataset contents");
        throw ValidationError("refusing to merge " + files.front().filename().string() + " and " +
                              files[i].filename().string() + ", config differs in " + join(diff, "; "));
    }

    // kind → seed → record
    std::map<std::string, std::map<std::uint64_t, json>> by_kind;
    json summary{{"config_hash", first.at("config_hash")}, {"config", first.at("config")}, {"fragments", json::array()}};
    for (std::size_t i = 0; i < frags.size(); ++i) {
        const json& f = frags[i];
        summary["fragments"].push_back(files[i].filename().string());
        const std::string kind = f.at("kind");
        if (kind == "ingest") {
            summary["dataset"] = f.at("dataset");
            continue;
        }
        for (const auto& rec : f.at("per_seed")) {
            const auto seed = rec.at("seed").get<std::uint64_t>();
            if (!by_kind[kind].emplace(seed, rec).second)
                throw ValidationError("seed " + std::to_string(seed) + " of " + kind + " appears in two fragments");
        }
        if (f.contains("pooling")) summary["pooling"] = f.at("pooling");
    }

    const std::string pooling = summary.value("pooling", std::string("?"));
    std::ostringstream csv;
    csv << "pooling,kind,metric,mean,std,count\n";
    json cells = json::array(), timings = json::array();
    for (const auto& [kind, seeds] : by_kind) {
        std::vector<std::uint64_t> seed_list;
        std::map<std::string, std::vector<double>> metric, timing;
        for (const auto& [seed, rec] : seeds) {
            seed_list.push_back(seed);
            for (const auto& [k, v] : rec.at("metrics").items())
                if (v.is_number()) metric[k].push_back(v.get<double>());
            for (const auto& [k, v] : rec.at("timings").items()) timing[k].push_back(v.get<double>());
        }
        summary["seeds"][kind] = seed_list;
        auto stats = [&](const std::string& name, const std::vector<double>& v) {
            const double m = mean_of(v);
            double ss = 0.0;
            for (double x : v) ss += (x - m) * (x - m);
            const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
            return json{{"kind", kind}, {"metric", name}, {"mean", m}, {"std", sd}, {"count", v.size()}};
        };
        for (const auto& [name, v] : metric) {
            const json cell = stats(name, v);
            cells.push_back(cell);
            csv << pooling << ',' << kind << ',' << name << ',' << fmt(cell["mean"]) << ',' << fmt(cell["std"]) << ','
                << v.size() << '\n';
        }
        for (const auto& [name, v] : timing) timings.push_back(stats(name, v));
    }
    summary["cells"] = cells;
    summary["timings"] = timings;
    write_atomic(dir / "summary.json", summary.dump(2) + "\n");
    write_atomic(dir / "summary.csv", csv.str());
    return summary;
}

} // namespace spool
