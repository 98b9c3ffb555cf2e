#include "spool/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

namespace spool {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
    }
}

std::atomic<std::uint64_t> next_tape_id{1};

} // namespace

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                             " does not match " + std::to_string(rows_) + "x" +
                             std::to_string(cols_));
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::column(std::span<const double> values) {
    return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double Matrix::frobenius_norm() const noexcept {
    // Scaled accumulation keeps tiny and huge entries from under/overflowing.
    double scale = 0.0;
    for (double x : data_) scale = std::max(scale, std::abs(x));
    if (scale == 0.0 || !std::isfinite(scale)) return scale;
    double acc = 0.0;
    for (double x : data_) {
        const double y = x / scale;
        acc += y * y;
    }
    return scale * std::sqrt(acc);
}

double Matrix::sum() const noexcept {
    double acc = 0.0;
    for (double x : data_) acc += x;
    return acc;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "sub");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) noexcept {
    for (double& x : data_) x *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + shape_str(a) + " times " + shape_str(b));
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* o = out.data().data() + i * n;
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data().data() + k * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: " + shape_str(a) + "ᵀ times " + shape_str(b));
    }
    Matrix out(a.cols(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* brow = b.data().data() + k * n;
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            double* o = out.data().data() + i * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: " + shape_str(a) + " times " + shape_str(b) + "ᵀ");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ar = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const auto br = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < ar.size(); ++k) acc += ar[k] * br[k];
            out(i, j) = acc;
        }
    }
    return out;
}

double dot(const Matrix& a, const Matrix& b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const { return tape().value(id_); }
const Matrix& Var::grad() const { return tape().grad(id_); }
bool Var::requires_grad() const { return tape().requires_grad(id_); }

Tape& Var::tape() const {
    if (tape_ == nullptr) throw ContractError("Var: handle is not bound to a tape");
    return *tape_;
}

Tape::Tape() : tape_id_(next_tape_id.fetch_add(1)) {}

Var Tape::constant(Matrix value) {
    if (!value.all_finite()) throw NumericError("Tape::constant: non-finite input");
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Matrix value) {
    if (!value.all_finite()) throw NumericError("Tape::variable: non-finite input");
    Node node{std::move(value), {}, true, {}};
    node.grad = Matrix(node.value.rows(), node.value.cols());
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const Var& in : inputs) {
        if (&in.tape() != this) throw ContractError("Tape::record: operand from another tape");
        needs = needs || nodes_[in.id()].requires_grad;
    }
    if (!value.all_finite()) throw NumericError("Tape::record: operation produced non-finite values");
    Node node{std::move(value), {}, needs, {}};
    if (needs) {
        node.grad = Matrix(node.value.rows(), node.value.cols());
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::grad(std::size_t id) const {
    if (!nodes_[id].requires_grad) throw ContractError("grad: value does not require gradients");
    return nodes_[id].grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    node.grad += g;
}

void Tape::backward(const Var& loss) {
    if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    const Matrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ContractError("backward: loss must be 1x1, got " + shape_str(lv));
    }
    if (backward_done_) {
        throw ContractError("backward: gradients already accumulated; call zero_grad first");
    }
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad(0, 0) += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (node.requires_grad && node.backward) node.backward(*this, i);
    }
}

void Tape::zero_grad() {
    for (Node& node : nodes_) {
        if (node.requires_grad) node.grad *= 0.0;
    }
    backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

Tape& same_tape(const Var& a, const Var& b) {
    Tape& t = a.tape();
    if (&b.tape() != &t) throw ContractError("operands live on different tapes");
    return t;
}

} // namespace

Var matmul(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(matmul(a.value(), b.value()), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) tp.accumulate(ia, matmul_nt(g, tp.value(ib)));
        if (tp.requires_grad(ib)) tp.accumulate(ib, matmul_tn(tp.value(ia), g));
    });
}

Var add(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "add");
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.grad(self));
        tp.accumulate(ib, tp.grad(self));
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.grad(self));
        if (tp.requires_grad(ib)) tp.accumulate(ib, tp.grad(self) * -1.0);
    });
}

Var mul(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    const std::size_t ia = a.id(), ib = b.id();
    return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        if (tp.requires_grad(ia)) {
            Matrix ga = g;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= tp.value(ib)[i];
            tp.accumulate(ia, ga);
        }
        if (tp.requires_grad(ib)) {
            Matrix gb = g;
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= tp.value(ia)[i];
            tp.accumulate(ib, gb);
        }
    });
}

Var scale(const Var& a, double s) {
    Tape& t = a.tape();
    const std::size_t ia = a.id();
    return t.record(a.value() * s, {a}, [ia, s](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.grad(self) * s);
    });
}

Var add_row(const Var& a, const Var& row) {
    Tape& t = same_tape(a, row);
    const Matrix& av = a.value();
    const Matrix& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols()) {
        throw DimensionError("add_row: " + shape_str(av) + " plus row " + shape_str(rv));
    }
    Matrix out = av;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
    const std::size_t ia = a.id(), ir = row.id();
    return t.record(std::move(out), {a, row}, [ia, ir](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        tp.accumulate(ia, g);
        if (tp.requires_grad(ir)) {
            Matrix gr(1, g.cols());
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
            tp.accumulate(ir, gr);
        }
    });
}

Var mul_scalar(const Var& a, const Var& s) {
    Tape& t = same_tape(a, s);
    if (s.value().size() != 1) throw DimensionError("mul_scalar: scale must be 1x1");
    const double sv = s.value()[0];
    const std::size_t ia = a.id(), is = s.id();
    return t.record(a.value() * sv, {a, s}, [ia, is](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const double s0 = tp.value(is)[0];
        if (tp.requires_grad(ia)) tp.accumulate(ia, g * s0);
        if (tp.requires_grad(is)) tp.accumulate(is, Matrix(1, 1, dot(g, tp.value(ia))));
    });
}

Var relu(const Var& a) {
    Tape& t = a.tape();
    Matrix out = a.value();
    for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
    const std::size_t ia = a.id();
    return t.record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
        Matrix g = tp.grad(self);
        const Matrix& in = tp.value(ia);
        // Subgradient at exactly 0 is 0.
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(in[i] > 0.0)) g[i] = 0.0;
        tp.accumulate(ia, g);
    });
}

Var transpose(const Var& a) {
    Tape& t = a.tape();
    const std::size_t ia = a.id();
    return t.record(a.value().transposed(), {a}, [ia](Tape& tp, std::size_t self) {
        tp.accumulate(ia, tp.grad(self).transposed());
    });
}

Var sum_rows(const Var& a) {
    Tape& t = a.tape();
    const Matrix& av = a.value();
    Matrix out(1, av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out[c] += av(r, c);
    const std::size_t ia = a.id();
    const std::size_t n = av.rows();
    return t.record(std::move(out), {a}, [ia, n](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        Matrix ga(n, g.cols());
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = g[c];
        tp.accumulate(ia, ga);
    });
}

Var mean_rows(const Var& a) {
    if (a.rows() == 0) throw ContractError("mean_rows: empty input");
    return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

std::vector<std::size_t> column_argmax(const Matrix& a) {
    if (a.rows() == 0) throw ContractError("column_argmax: empty input");
    std::vector<std::size_t> idx(a.cols(), 0);
    for (std::size_t c = 0; c < a.cols(); ++c) {
        for (std::size_t r = 1; r < a.rows(); ++r) {
            if (a(r, c) > a(idx[c], c)) idx[c] = r;
        }
    }
    return idx;
}

Var max_rows(const Var& a) {
    Tape& t = a.tape();
    const Matrix& av = a.value();
    std::vector<std::size_t> arg = column_argmax(av);
    Matrix out(1, av.cols());
    for (std::size_t c = 0; c < av.cols(); ++c) out[c] = av(arg[c], c);
    const std::size_t ia = a.id();
    const std::size_t n = av.rows();
    return t.record(std::move(out), {a}, [ia, n, arg = std::move(arg)](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        Matrix ga(n, g.cols());
        for (std::size_t c = 0; c < g.cols(); ++c) ga(arg[c], c) = g[c];
        tp.accumulate(ia, ga);
    });
}

Var sum_all(const Var& a) {
    Tape& t = a.tape();
    const std::size_t ia = a.id();
    const std::size_t r = a.rows(), c = a.cols();
    return t.record(Matrix(1, 1, a.value().sum()), {a}, [ia, r, c](Tape& tp, std::size_t self) {
        tp.accumulate(ia, Matrix(r, c, tp.grad(self)[0]));
    });
}

Var l2_norm(const Var& a) {
    Tape& t = a.tape();
    const double nrm = a.value().frobenius_norm();
    const std::size_t ia = a.id();
    return t.record(Matrix(1, 1, nrm), {a}, [ia, nrm](Tape& tp, std::size_t self) {
        if (nrm == 0.0) return; // subgradient 0 at the origin
        tp.accumulate(ia, tp.value(ia) * (tp.grad(self)[0] / nrm));
    });
}

Var normalize(const Var& a) {
    Tape& t = a.tape();
    const double nrm = a.value().frobenius_norm();
    if (nrm == 0.0) throw DegenerateError("normalize: zero vector");
    Matrix out = a.value() * (1.0 / nrm);
    const std::size_t ia = a.id();
    return t.record(std::move(out), {a}, [ia, nrm](Tape& tp, std::size_t self) {
        // d(x/|x|) = (g − u·(uᵀg)) / |x| with u = x/|x|
        const Matrix& g = tp.grad(self);
        const Matrix& u = tp.value(self);
        const double ug = dot(u, g);
        Matrix ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = (g[i] - u[i] * ug) / nrm;
        tp.accumulate(ia, ga);
    });
}

Var softmax_cross_entropy(const Var& logits, std::size_t target) {
    Tape& t = logits.tape();
    const Matrix& z = logits.value();
    if (z.rows() != 1) throw DimensionError("softmax_cross_entropy: logits must be 1xC");
    if (target >= z.cols()) throw ContractError("softmax_cross_entropy: class index out of range");
    const double zmax = *std::max_element(z.data().begin(), z.data().end());
    Matrix p(1, z.cols());
    double denom = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) {
        p[c] = std::exp(z[c] - zmax);
        denom += p[c];
    }
    for (double& x : p.data()) x /= denom;
    const double loss = -(z[target] - zmax - std::log(denom));
    const std::size_t il = logits.id();
    return t.record(Matrix(1, 1, loss), {logits},
                    [il, target, p = std::move(p)](Tape& tp, std::size_t self) {
                        Matrix g = p;
                        g[target] -= 1.0;
                        tp.accumulate(il, g * tp.grad(self)[0]);
                    });
}

Var gcn_normalize(const Var& adjacency) {
    Tape& t = adjacency.tape();
    const Matrix& a = adjacency.value();
    if (a.rows() != a.cols()) throw DimensionError("gcn_normalize: adjacency must be square");
    const std::size_t n = a.rows();
    std::vector<double> s(n), dt(n);
    for (std::size_t u = 0; u < n; ++u) {
        double deg = 0.0;
        for (std::size_t v = 0; v < n; ++v) deg += a(u, v);
        if (1.0 + deg <= 0.0) throw NumericError("gcn_normalize: non-positive degree");
        dt[u] = 1.0 + deg;
        s[u] = 1.0 / std::sqrt(dt[u]);
    }
    Matrix out(n, n);
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v) {
            const double m = a(u, v) + (u == v ? 1.0 : 0.0);
            if (m != 0.0) out(u, v) = m / std::sqrt(dt[u] * dt[v]);
        }
    const std::size_t ia = adjacency.id();
    return t.record(std::move(out), {adjacency}, [ia, n, s = std::move(s)](Tape& tp, std::size_t self) {
        // Â_ij = M_ij s_i s_j with M = A + I and s_k = (1 + Σ_j A_kj)^{-1/2}.
        const Matrix& g = tp.grad(self);
        const Matrix& a0 = tp.value(ia);
        std::vector<double> dl_ds(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double m = a0(i, j) + (i == j ? 1.0 : 0.0);
                dl_ds[i] += g(i, j) * m * s[j];
                dl_ds[j] += g(i, j) * m * s[i];
            }
        }
        Matrix ga(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            const double row_term = -0.5 * s[i] * s[i] * s[i] * dl_ds[i];
            for (std::size_t j = 0; j < n; ++j) ga(i, j) = g(i, j) * s[i] * s[j] + row_term;
        }
        tp.accumulate(ia, ga);
    });
}

double grad_check(const ScalarFn& f, const Matrix& point, double step) {
    if (!(step > 0.0)) throw ContractError("grad_check: step must be positive");
    if (!point.all_finite()) throw NumericError("grad_check: non-finite point");

    Matrix analytic;
    {
        Tape tape;
        Var x = tape.variable(point);
        Var y = f(tape, x);
        if (y.value().size() != 1) throw ContractError("grad_check: function must be scalar-valued");
        tape.backward(y);
        analytic = x.grad();
    }

    auto eval = [&](const Matrix& p) {
        Tape tape;
        Var x = tape.constant(p);
        return f(tape, x).value()[0];
    };

    double worst = 0.0;
    Matrix probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = eval(probe);
        probe[i] = orig - step;
        const double fm = eval(probe);
        probe[i] = orig;
        const double central = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace spool
