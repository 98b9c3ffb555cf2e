#include "spool/gnn.hpp"

#include <chrono>
#include <cmath>

namespace spool {

DenseLayer glorot_layer(std::size_t in, std::size_t out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    return {random_uniform(in, out, -limit, limit, rng), Matrix(1, out)};
}

namespace {

void check_layer(const DenseLayer& l, std::size_t expected_in, const char* what) {
    if (l.in_dim() != expected_in) throw ContractError(std::string(what) + ": layer dimensions do not chain");
    if (l.bias.rows() != 1 || l.bias.cols() != l.out_dim())
        throw ContractError(std::string(what) + ": bias shape mismatch");
    if (!l.weight.all_finite() || !l.bias.all_finite())
        throw ContractError(std::string(what) + ": non-finite parameters");
}

} // namespace

void GcnModel::validate() const {
    if (layers.empty()) throw ContractError("GcnModel: needs at least one layer");
    std::size_t d = layers.front().in_dim();
    for (const auto& l : layers) {
        check_layer(l, d, "GcnModel");
        d = l.out_dim();
    }
}

void GinModel::validate() const {
    if (layers.empty()) throw ContractError("GinModel: needs at least one layer");
    if (zeta != 0.0) throw ContractError("GinModel: zeta must be 0");
    std::size_t d = layers.front().first.in_dim();
    for (const auto& l : layers) {
        check_layer(l.first, d, "GinModel");
        check_layer(l.second, l.first.out_dim(), "GinModel");
        d = l.second.out_dim();
    }
}

Arch parse_arch(const std::string& s) {
    if (s == "gcn") return Arch::gcn;
    if (s == "gin") return Arch::gin;
    throw ValidationError("unknown model '" + s + "' (expected gcn or gin)");
}

std::string to_string(Arch a) { return a == Arch::gcn ? "gcn" : "gin"; }

std::size_t Classifier::input_dim() const {
    return arch() == Arch::gcn ? gcn().input_dim() : gin().input_dim();
}

std::size_t Classifier::embedding_dim() const {
    return arch() == Arch::gcn ? gcn().output_dim() : gin().output_dim();
}

std::vector<const Matrix*> Classifier::backbone_weights() const {
    std::vector<const Matrix*> out;
    if (arch() == Arch::gcn) {
        for (const auto& l : gcn().layers) out.push_back(&l.weight);
    } else {
        for (const auto& l : gin().layers) {
            out.push_back(&l.first.weight);
            out.push_back(&l.second.weight);
        }
    }
    return out;
}

std::vector<Matrix*> Classifier::parameters() {
    std::vector<Matrix*> out;
    auto add = [&](DenseLayer& l) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    };
    if (auto* g = std::get_if<GcnModel>(&backbone)) {
        for (auto& l : g->layers) add(l);
    } else {
        for (auto& l : std::get<GinModel>(backbone).layers) {
            add(l.first);
            add(l.second);
        }
    }
    add(head.hidden);
    add(head.output);
    return out;
}

std::vector<const Matrix*> Classifier::parameters() const {
    auto mut = const_cast<Classifier*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

void Classifier::validate() const {
    if (arch() == Arch::gcn) gcn().validate();
    else gin().validate();
    pooling.validate();
    if (pooling.is_rs() && pooling.output == RsOutput::projected)
        throw ContractError("Classifier: projected RS-Pool output cannot feed a fixed-width head");
    check_layer(head.hidden, embedding_dim(), "ReadoutHead");
    check_layer(head.output, head.hidden.out_dim(), "ReadoutHead");
}

Classifier make_classifier(const ModelShape& s, const PoolingKind& pooling, std::uint64_t seed) {
    if (s.layers == 0 || s.hidden_dim == 0 || s.input_dim == 0 || s.readout_hidden == 0 || s.num_classes == 0)
        throw ContractError("make_classifier: every dimension must be positive");
    Rng rng(seed);
    Classifier c;
    if (s.arch == Arch::gcn) {
        GcnModel m;
        std::size_t d = s.input_dim;
        for (std::size_t l = 0; l < s.layers; ++l) {
            m.layers.push_back(glorot_layer(d, s.hidden_dim, rng));
            d = s.hidden_dim;
        }
        c.backbone = std::move(m);
    } else {
        GinModel m;
        std::size_t d = s.input_dim;
        for (std::size_t l = 0; l < s.layers; ++l) {
            GinLayer layer{glorot_layer(d, s.hidden_dim, rng), {}};
            layer.second = glorot_layer(s.hidden_dim, s.hidden_dim, rng);
            m.layers.push_back(std::move(layer));
            d = s.hidden_dim;
        }
        c.backbone = std::move(m);
    }
    c.head.hidden = glorot_layer(s.hidden_dim, s.readout_hidden, rng);
    c.head.output = glorot_layer(s.readout_hidden, s.num_classes, rng);
    c.pooling = pooling;
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

struct LayerVars {
    Var w, b;
};

LayerVars bind(Tape& t, const DenseLayer& l, bool trainable, std::vector<Var>& params) {
    LayerVars v{trainable ? t.variable(l.weight) : t.constant(l.weight),
                trainable ? t.variable(l.bias) : t.constant(l.bias)};
    params.push_back(v.w);
    params.push_back(v.b);
    return v;
}

Var affine(const Var& x, const LayerVars& l) { return add_row(matmul(x, l.w), l.b); }

} // namespace

ForwardPass forward(Tape& t, const Classifier& c, const Var& adjacency, const Var& features, bool trainable) {
    if (features.cols() != c.input_dim())
        throw ContractError("forward: feature dimension " + std::to_string(features.cols()) +
                            " does not match model input " + std::to_string(c.input_dim()));
    if (adjacency.rows() != features.rows() || adjacency.cols() != features.rows())
        throw ContractError("forward: adjacency and features disagree on node count");
    ForwardPass out;
    Var h = features;
    if (c.arch() == Arch::gcn) {
        const Var a_hat = gcn_normalize(adjacency);
        for (const auto& l : c.gcn().layers) {
            const LayerVars lv = bind(t, l, trainable, out.params);
            h = relu(add_row(matmul(a_hat, matmul(h, lv.w)), lv.b));
        }
    } else {
        for (const auto& l : c.gin().layers) {
            const LayerVars first = bind(t, l.first, trainable, out.params);
            const LayerVars second = bind(t, l.second, trainable, out.params);
            const Var agg = add(matmul(adjacency, h), h); // (A + (1+ζ)I)H with ζ = 0
            h = affine(relu(affine(agg, first)), second);
        }
    }
    out.embedding = h;
    if (c.pooling.is_rs() && h.value().frobenius_norm() == 0.0) {
        // All-zero embedding has no singular direction; pool to the zero vector.
        out.pooled = t.constant(Matrix(1, h.cols()));
    } else {
        out.pooled = pool(h, c.pooling);
    }
    const LayerVars hid = bind(t, c.head.hidden, trainable, out.params);
    const LayerVars outl = bind(t, c.head.output, trainable, out.params);
    out.logits = affine(relu(affine(out.pooled, hid)), outl);
    return out;
}

Matrix embed(const Classifier& c, const Matrix& adjacency, const Matrix& features) {
    Tape t;
    return forward(t, c, t.constant(adjacency), t.constant(features), false).embedding.value();
}

Matrix embed(const Classifier& c, const Graph& g) { return embed(c, g.adjacency, g.features); }

Matrix pooled(const Classifier& c, const Matrix& embedding) {
    if (c.pooling.is_rs() && embedding.frobenius_norm() == 0.0) return Matrix(1, embedding.cols());
    return pool(embedding, c.pooling);
}

Matrix predict(const Classifier& c, const Graph& g) {
    Tape t;
    return forward(t, c, t.constant(g.adjacency), t.constant(g.features), false).logits.value();
}

std::size_t argmax_class(const Matrix& logits) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.size(); ++k)
        if (logits[k] > logits[best]) best = k;
    return best;
}

double loss_on(const Classifier& c, const Matrix& adjacency, const Matrix& features, std::size_t label) {
    Tape t;
    const auto fp = forward(t, c, t.constant(adjacency), t.constant(features), false);
    return softmax_cross_entropy(fp.logits, label).value()[0];
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("train: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw ValidationError("train: Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ValidationError("train: Adam epsilon must be positive");
}

TrainResult train(Classifier init, const Dataset& ds, const SplitSpec& split, std::size_t fold,
                  const TrainConfig& config) {
    config.validate();
    init.validate();
    const auto start = std::chrono::steady_clock::now();
    const auto train_idx = split.train_indices(fold);
    const auto test_idx = split.test_indices(fold);
    if (train_idx.empty()) throw ContractError("train: empty training fold");

    TrainResult res;
    res.model = std::move(init);
    auto params = res.model.parameters();
    std::vector<Matrix> m1, m2;
    for (const Matrix* p : params) {
        m1.emplace_back(p->rows(), p->cols());
        m2.emplace_back(p->rows(), p->cols());
    }
    Rng rng(mix_seed(config.seed, 0x7a11));
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = random_permutation(train_idx.size(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t k : order) {
            const Graph& g = ds.graphs[train_idx[k]];
            Tape t;
            ForwardPass fp;
            Var loss;
            try {
                fp = forward(t, res.model, t.constant(g.adjacency), t.constant(g.features), true);
                loss = softmax_cross_entropy(fp.logits, g.label);
            } catch (const NumericError& e) {
                throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
            }
            const double lv = loss.value()[0];
            if (!std::isfinite(lv))
                throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
            loss_sum += lv;
            correct += argmax_class(fp.logits.value()) == g.label ? 1 : 0;
            t.backward(loss);

            ++step;
            const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            for (std::size_t p = 0; p < params.size(); ++p) {
                const Matrix& grad = fp.params[p].grad();
                Matrix& w = *params[p];
                for (std::size_t i = 0; i < w.size(); ++i) {
                    m1[p][i] = config.beta1 * m1[p][i] + (1.0 - config.beta1) * grad[i];
                    m2[p][i] = config.beta2 * m2[p][i] + (1.0 - config.beta2) * grad[i] * grad[i];
                    const double mh = m1[p][i] / bc1;
                    const double vh = m2[p][i] / bc2;
                    w[i] -= config.learning_rate * mh / (std::sqrt(vh) + config.adam_eps);
                }
                if (!w.all_finite())
                    throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ": non-finite weights");
            }
        }
        res.curve.push_back({epoch, loss_sum / static_cast<double>(train_idx.size()),
                             static_cast<double>(correct) / static_cast<double>(train_idx.size())});
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.train_accuracy = evaluate(res.model, ds, train_idx);
    res.test_accuracy = test_idx.empty() ? 0.0 : evaluate(res.model, ds, test_idx);
    return res;
}

double evaluate(const Classifier& c, const std::vector<const Graph*>& graphs) {
    if (graphs.empty()) throw ContractError("evaluate: empty graph set");
    std::vector<char> ok(graphs.size(), 0);
    parallel_for(graphs.size(), worker_threads(), [&](std::size_t i) {
        ok[i] = argmax_class(predict(c, *graphs[i])) == graphs[i]->label ? 1 : 0;
    });
    std::size_t hits = 0;
    for (char x : ok) hits += static_cast<std::size_t>(x);
    return static_cast<double>(hits) / static_cast<double>(graphs.size());
}

double evaluate(const Classifier& c, const Dataset& ds, const std::vector<std::size_t>& indices) {
    std::vector<const Graph*> gs;
    gs.reserve(indices.size());
    for (auto i : indices) gs.push_back(&ds.graphs.at(i));
    return evaluate(c, gs);
}

// ---------------------------------------------------------------------------
// Serialization

void to_json(nlohmann::json& j, const Matrix& m) {
    j = nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()},
                       {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

void from_json(const nlohmann::json& j, Matrix& m) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols) throw ValidationError("matrix: data length does not match shape");
    m = Matrix(rows, cols, std::move(data));
}

namespace {

nlohmann::json layer_json(const DenseLayer& l) { return {{"weight", l.weight}, {"bias", l.bias}}; }

DenseLayer layer_from(const nlohmann::json& j) {
    return {j.at("weight").get<Matrix>(), j.at("bias").get<Matrix>()};
}

} // namespace

void to_json(nlohmann::json& j, const Classifier& c) {
    j = nlohmann::json{{"arch", to_string(c.arch())}, {"pooling", c.pooling}};
    auto layers = nlohmann::json::array();
    if (c.arch() == Arch::gcn) {
        for (const auto& l : c.gcn().layers) layers.push_back(layer_json(l));
    } else {
        j["zeta"] = c.gin().zeta;
        for (const auto& l : c.gin().layers)
            layers.push_back({{"first", layer_json(l.first)}, {"second", layer_json(l.second)}});
    }
    j["layers"] = std::move(layers);
    j["head"] = {{"hidden", layer_json(c.head.hidden)}, {"output", layer_json(c.head.output)}};
}

void from_json(const nlohmann::json& j, Classifier& c) {
    try {
        const Arch arch = parse_arch(j.at("arch").get<std::string>());
        if (arch == Arch::gcn) {
            GcnModel m;
            for (const auto& l : j.at("layers")) m.layers.push_back(layer_from(l));
            c.backbone = std::move(m);
        } else {
            GinModel m;
            m.zeta = j.value("zeta", 0.0);
            for (const auto& l : j.at("layers"))
                m.layers.push_back({layer_from(l.at("first")), layer_from(l.at("second"))});
            c.backbone = std::move(m);
        }
        c.head.hidden = layer_from(j.at("head").at("hidden"));
        c.head.output = layer_from(j.at("head").at("output"));
        c.pooling = j.at("pooling").get<PoolingKind>();
        c.validate();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("checkpoint: ") + e.what());
    } catch (const ContractError& e) {
        throw ValidationError(std::string("checkpoint: ") + e.what());
    }
}

} // namespace spool
