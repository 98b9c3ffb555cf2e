#include "spool/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "spool/linalg.hpp"
#include "spool/random.hpp"

namespace spool {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Graph

std::size_t Graph::num_edges() const {
    std::size_t twice = 0;
    for (double x : adjacency.data()) twice += x != 0.0 ? 1 : 0;
    return twice / 2;
}

std::size_t Graph::degree(std::size_t u) const {
    std::size_t d = 0;
    for (double x : adjacency.row(u)) d += x != 0.0 ? 1 : 0;
    return d;
}

std::size_t Graph::max_degree() const {
    std::size_t best = 0;
    for (std::size_t u = 0; u < num_nodes(); ++u) best = std::max(best, degree(u));
    return best;
}

void Graph::validate() const {
    const std::size_t n = adjacency.rows();
    if (n == 0) throw ContractError("graph: must have at least one node");
    if (adjacency.cols() != n) throw ContractError("graph: adjacency is not square");
    if (features.rows() != n) throw ContractError("graph: feature rows do not match node count");
    if (!features.all_finite()) throw ContractError("graph: non-finite features");
    for (std::size_t u = 0; u < n; ++u) {
        if (adjacency(u, u) != 0.0) throw ContractError("graph: non-zero diagonal");
        for (std::size_t v = u + 1; v < n; ++v) {
            const double a = adjacency(u, v);
            if (a != 0.0 && a != 1.0) throw ContractError("graph: adjacency is not binary");
            if (a != adjacency(v, u)) throw ContractError("graph: adjacency is not symmetric");
        }
    }
}

bool Graph::is_valid() const noexcept {
    try {
        validate();
        return true;
    } catch (const Error&) {
        return false;
    }
}

Graph make_graph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                 Matrix features, std::size_t label) {
    Graph g;
    g.adjacency = Matrix(n, n);
    for (auto [u, v] : edges) {
        if (u >= n || v >= n) throw ContractError("make_graph: edge endpoint out of range");
        if (u == v) continue;
        g.adjacency(u, v) = 1.0;
        g.adjacency(v, u) = 1.0;
    }
    g.features = std::move(features);
    g.label = label;
    g.validate();
    return g;
}

Graph permute_nodes(const Graph& g, const std::vector<std::size_t>& perm) {
    const std::size_t n = g.num_nodes();
    if (perm.size() != n) throw ContractError("permute_nodes: permutation length mismatch");
    Graph out = g;
    for (std::size_t u = 0; u < n; ++u) {
        for (std::size_t v = 0; v < n; ++v) out.adjacency(perm[u], perm[v]) = g.adjacency(u, v);
        for (std::size_t c = 0; c < g.feature_dim(); ++c) out.features(perm[u], c) = g.features(u, c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset / splits

void Dataset::validate() const {
    for (const Graph& g : graphs) {
        g.validate();
        if (g.feature_dim() != feature_dim) throw ContractError("dataset: inconsistent feature dimension");
        if (g.label >= num_classes) throw ContractError("dataset: label out of range");
    }
}

double Dataset::max_feature_norm() const {
    double best = 0.0;
    for (const Graph& g : graphs) best = std::max(best, spectral_norm(g.features));
    return best;
}

std::vector<std::size_t> SplitSpec::test_indices(std::size_t fold) const {
    if (fold >= folds) throw ContractError("SplitSpec: fold out of range");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] == fold) out.push_back(i);
    return out;
}

std::vector<std::size_t> SplitSpec::train_indices(std::size_t fold) const {
    if (fold >= folds) throw ContractError("SplitSpec: fold out of range");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] != fold) out.push_back(i);
    return out;
}

SplitSpec make_splits(const Dataset& ds, std::size_t folds, std::uint64_t seed) {
    if (folds < 2) throw ContractError("make_splits: need at least 2 folds");
    if (folds > ds.graphs.size()) throw ContractError("make_splits: more folds than graphs");
    SplitSpec spec;
    spec.folds = folds;
    spec.seed = seed;
    spec.fold_of.assign(ds.graphs.size(), 0);

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.graphs.size(); ++i) by_class[ds.graphs[i].label].push_back(i);

    Rng rng(seed);
    std::size_t cursor = 0;
    for (auto& members : by_class) {
        const auto perm = random_permutation(members.size(), rng);
        for (std::size_t k = 0; k < members.size(); ++k) {
            spec.fold_of[members[perm[k]]] = cursor % folds;
            ++cursor;
        }
    }
    return spec;
}

SplitSpec load_splits(const fs::path& file, std::size_t num_graphs) {
    std::ifstream in(file);
    if (!in) throw IngestError("cannot open fold file " + file.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("fold file " + file.string() + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("folds") || !doc["folds"].is_array()) {
        throw ValidationError("fold file " + file.string() + ": expected {\"folds\": [[...], ...]}");
    }
    const auto& folds = doc["folds"];
    SplitSpec spec;
    spec.folds = folds.size();
    if (spec.folds < 2) throw ValidationError("fold file: need at least 2 folds");
    constexpr std::size_t unassigned = static_cast<std::size_t>(-1);
    spec.fold_of.assign(num_graphs, unassigned);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        if (!folds[f].is_array()) throw ValidationError("fold file: fold " + std::to_string(f) + " is not a list");
        for (const auto& item : folds[f]) {
            if (!item.is_number_integer()) throw ValidationError("fold file: non-integer index in fold " + std::to_string(f));
            const long long idx = item.get<long long>();
            if (idx < 0 || static_cast<std::size_t>(idx) >= num_graphs) {
                throw ValidationError("fold file: index " + std::to_string(idx) + " out of range [0, " +
                                      std::to_string(num_graphs) + ")");
            }
            auto& slot = spec.fold_of[static_cast<std::size_t>(idx)];
            if (slot != unassigned) throw ValidationError("fold file: index " + std::to_string(idx) + " appears twice");
            slot = f;
        }
    }
    for (std::size_t i = 0; i < num_graphs; ++i) {
        if (spec.fold_of[i] == unassigned) throw ValidationError("fold file: index " + std::to_string(i) + " not covered");
    }
    return spec;
}

// ---------------------------------------------------------------------------
// TUDataset ingestion

namespace {

struct Lines {
    std::string file;
    std::vector<std::string> lines; // 1-based line k is lines[k-1]
};

Lines read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("missing required file " + path.filename().string() + " in " +
                               path.parent_path().string());
    Lines out{path.filename().string(), {}};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        out.lines.push_back(line);
    }
    while (!out.lines.empty() &&
           out.lines.back().find_first_not_of(" \t") == std::string::npos) {
        out.lines.pop_back();
    }
    return out;
}

[[noreturn]] void parse_fail(const Lines& f, std::size_t line_no, const std::string& what) {
    throw ParseError(f.file + ":" + std::to_string(line_no) + ": " + what);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t");
        out.push_back(b == std::string::npos ? std::string{} : cur.substr(b, e - b + 1));
    }
    return out;
}

long long parse_int(const Lines& f, std::size_t line_no, const std::string& s) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) parse_fail(f, line_no, "trailing characters in '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        parse_fail(f, line_no, "expected an integer, got '" + s + "'");
    }
}

double parse_real(const Lines& f, std::size_t line_no, const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) parse_fail(f, line_no, "bad real '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        parse_fail(f, line_no, "expected a real, got '" + s + "'");
    }
}

} // namespace

Dataset load_tudataset(const fs::path& directory, const std::string& name, const TuDatasetOptions& options) {
    const Lines edges = read_lines(directory / (name + "_A.txt"));
    const Lines indicator = read_lines(directory / (name + "_graph_indicator.txt"));
    const Lines glabels = read_lines(directory / (name + "_graph_labels.txt"));
    const fs::path node_labels_path = directory / (name + "_node_labels.txt");
    const fs::path node_attr_path = directory / (name + "_node_attributes.txt");

    const std::size_t num_graphs = glabels.lines.size();
    const std::size_t num_nodes = indicator.lines.size();
    if (num_graphs == 0) throw ParseError(glabels.file + ": no graphs");

    // Graph membership and local node index.
    std::vector<std::size_t> graph_of(num_nodes);
    std::vector<std::size_t> local_of(num_nodes);
    std::vector<std::size_t> sizes(num_graphs, 0);
    for (std::size_t i = 0; i < num_nodes; ++i) {
        const long long gid = parse_int(indicator, i + 1, split_fields(indicator.lines[i]).at(0));
        if (gid < 1 || static_cast<std::size_t>(gid) > num_graphs) {
            parse_fail(indicator, i + 1, "graph id " + std::to_string(gid) + " out of range [1, " +
                                             std::to_string(num_graphs) + "]");
        }
        graph_of[i] = static_cast<std::size_t>(gid - 1);
        local_of[i] = sizes[graph_of[i]]++;
    }
    for (std::size_t g = 0; g < num_graphs; ++g) {
        if (sizes[g] == 0) throw ParseError(indicator.file + ": graph " + std::to_string(g + 1) + " has no nodes");
    }

    // Labels remapped to contiguous classes in ascending raw order.
    std::vector<long long> raw_labels(num_graphs);
    for (std::size_t g = 0; g < num_graphs; ++g) {
        raw_labels[g] = parse_int(glabels, g + 1, split_fields(glabels.lines[g]).at(0));
    }
    std::set<long long> label_set(raw_labels.begin(), raw_labels.end());
    Dataset ds;
    ds.name = name;
    ds.label_values.assign(label_set.begin(), label_set.end());
    ds.num_classes = ds.label_values.size();

    // Node features.
    std::vector<std::vector<double>> feats(num_nodes);
    const bool has_labels = fs::exists(node_labels_path);
    const bool has_attrs = fs::exists(node_attr_path);
    if (has_labels) {
        const Lines nl = read_lines(node_labels_path);
        if (nl.lines.size() != num_nodes) {
            throw ParseError(nl.file + ": expected " + std::to_string(num_nodes) + " lines, found " +
                             std::to_string(nl.lines.size()));
        }
        std::vector<long long> raw(num_nodes);
        for (std::size_t i = 0; i < num_nodes; ++i) raw[i] = parse_int(nl, i + 1, split_fields(nl.lines[i]).at(0));
        std::set<long long> values(raw.begin(), raw.end());
        std::map<long long, std::size_t> slot;
        for (long long v : values) slot.emplace(v, slot.size());
        for (std::size_t i = 0; i < num_nodes; ++i) {
            feats[i].assign(values.size(), 0.0);
            feats[i][slot.at(raw[i])] = 1.0;
        }
    }
    if (has_attrs && (!has_labels || options.use_node_attributes)) {
        const Lines na = read_lines(node_attr_path);
        if (na.lines.size() != num_nodes) {
            throw ParseError(na.file + ": expected " + std::to_string(num_nodes) + " lines, found " +
                             std::to_string(na.lines.size()));
        }
        std::size_t width = 0;
        for (std::size_t i = 0; i < num_nodes; ++i) {
            const auto fields = split_fields(na.lines[i]);
            if (i == 0) width = fields.size();
            if (fields.size() != width) parse_fail(na, i + 1, "inconsistent attribute count");
            for (const auto& f : fields) feats[i].push_back(parse_real(na, i + 1, f));
        }
    }
    if (!has_labels && !has_attrs) {
        for (auto& f : feats) f.assign(1, 1.0);
    }
    ds.feature_dim = feats.empty() ? 0 : feats.front().size();

    ds.graphs.resize(num_graphs);
    for (std::size_t g = 0; g < num_graphs; ++g) {
        Graph& gr = ds.graphs[g];
        gr.adjacency = Matrix(sizes[g], sizes[g]);
        gr.features = Matrix(sizes[g], ds.feature_dim);
        gr.id = g;
        const auto it = std::lower_bound(ds.label_values.begin(), ds.label_values.end(), raw_labels[g]);
        gr.label = static_cast<std::size_t>(it - ds.label_values.begin());
    }
    for (std::size_t i = 0; i < num_nodes; ++i) {
        Graph& gr = ds.graphs[graph_of[i]];
        std::copy(feats[i].begin(), feats[i].end(), gr.features.row(local_of[i]).begin());
    }

    for (std::size_t k = 0; k < edges.lines.size(); ++k) {
        const std::size_t line_no = k + 1;
        const auto fields = split_fields(edges.lines[k]);
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() != 2) parse_fail(edges, line_no, "expected 'u, v'");
        const long long u = parse_int(edges, line_no, fields[0]);
        const long long v = parse_int(edges, line_no, fields[1]);
        for (long long x : {u, v}) {
            if (x < 1 || static_cast<std::size_t>(x) > num_nodes) {
                parse_fail(edges, line_no, "node index " + std::to_string(x) + " out of range [1, " +
                                               std::to_string(num_nodes) + "]");
            }
        }
        const std::size_t iu = static_cast<std::size_t>(u - 1);
        const std::size_t iv = static_cast<std::size_t>(v - 1);
        if (graph_of[iu] != graph_of[iv]) parse_fail(edges, line_no, "edge joins two different graphs");
        if (iu == iv) continue; // self-loops dropped
        Graph& gr = ds.graphs[graph_of[iu]];
        gr.adjacency(local_of[iu], local_of[iv]) = 1.0;
        gr.adjacency(local_of[iv], local_of[iu]) = 1.0;
    }

    ds.validate();
    return ds;
}

void write_tudataset(const Dataset& ds, const fs::path& directory) {
    fs::create_directories(directory);
    std::ofstream a(directory / (ds.name + "_A.txt"));
    std::ofstream ind(directory / (ds.name + "_graph_indicator.txt"));
    std::ofstream lab(directory / (ds.name + "_graph_labels.txt"));
    std::ofstream attr(directory / (ds.name + "_node_attributes.txt"));
    attr.precision(17);
    std::size_t offset = 0;
    for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
        const Graph& gr = ds.graphs[g];
        const std::size_t n = gr.num_nodes();
        for (std::size_t u = 0; u < n; ++u) {
            ind << (g + 1) << '\n';
            for (std::size_t c = 0; c < gr.feature_dim(); ++c) attr << (c ? ", " : "") << gr.features(u, c);
            attr << '\n';
            for (std::size_t v = 0; v < n; ++v)
                if (gr.adjacency(u, v) != 0.0) a << (offset + u + 1) << ", " << (offset + v + 1) << '\n';
        }
        const long long raw = ds.label_values.empty() ? static_cast<long long>(gr.label) : ds.label_values[gr.label];
        lab << raw << '\n';
        offset += n;
    }
}

// ---------------------------------------------------------------------------
// Propagation matrix

Matrix normalized_adjacency(const Graph& g) {
    const std::size_t n = g.num_nodes();
    std::vector<double> dt(n);
    for (std::size_t u = 0; u < n; ++u) dt[u] = 1.0 + static_cast<double>(g.degree(u));
    Matrix out(n, n);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v) {
            const double m = g.adjacency(u, v) + (u == v ? 1.0 : 0.0);
            if (m != 0.0) out(u, v) = m / std::sqrt(dt[u] * dt[v]);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

SynthKind parse_synth_kind(const std::string& s) {
    if (s == "density-pair") return SynthKind::density_pair;
    if (s == "cycle-vs-path") return SynthKind::cycle_vs_path;
    throw ValidationError("unknown synthetic dataset kind '" + s + "'");
}

std::string to_string(SynthKind kind) {
    return kind == SynthKind::density_pair ? "density-pair" : "cycle-vs-path";
}

namespace {

Matrix degree_features(const Matrix& adjacency) {
    const std::size_t n = adjacency.rows();
    Matrix f(n, 1);
    for (std::size_t u = 0; u < n; ++u) {
        double d = 0.0;
        for (double x : adjacency.row(u)) d += x;
        f(u, 0) = d / static_cast<double>(n - 1);
    }
    return f;
}

} // namespace

Dataset synth_dataset(SynthKind kind, std::size_t n_graphs, std::size_t n_nodes, std::uint64_t seed) {
    if (n_graphs == 0 || n_graphs % 2 != 0) throw ContractError("synth_dataset: n_graphs must be even and positive");
    if (n_nodes < 4) throw ContractError("synth_dataset: n_nodes must be at least 4");
    Dataset ds;
    ds.name = to_string(kind);
    ds.num_classes = 2;
    ds.feature_dim = 1;
    ds.label_values = {0, 1};
    Rng rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (std::size_t i = 0; i < n_graphs; ++i) {
        const std::size_t label = i % 2;
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        if (kind == SynthKind::density_pair) {
            const double p = label == 0 ? 0.2 : 0.6;
            for (std::size_t u = 0; u < n_nodes; ++u)
                for (std::size_t v = u + 1; v < n_nodes; ++v)
                    if (coin(rng) < p) edges.emplace_back(u, v);
        } else {
            const auto order = random_permutation(n_nodes, rng);
            for (std::size_t k = 0; k + 1 < n_nodes; ++k) edges.emplace_back(order[k], order[k + 1]);
            if (label == 0) edges.emplace_back(order[n_nodes - 1], order[0]);
        }
        Graph g = make_graph(n_nodes, edges, Matrix(n_nodes, 1), label);
        g.features = degree_features(g.adjacency);
        g.id = i;
        ds.graphs.push_back(std::move(g));
    }
    return ds;
}

} // namespace spool
