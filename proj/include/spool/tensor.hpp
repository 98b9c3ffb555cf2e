#pragma once

// Dense row-major matrices and a scoped reverse-mode tape.
//
// A Tape owns every value recorded during one forward pass. Vars are cheap
// handles into a Tape; the Tape must outlive them. Nothing here is global, so
// independent tapes may run on different threads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "spool/errors.hpp"

namespace spool {

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);
    static Matrix column(std::span<const double> values);
    static Matrix row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    bool all_finite() const noexcept;
    double frobenius_norm() const noexcept;
    double sum() const noexcept;
    Matrix transposed() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s) noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materialising the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
double dot(const Matrix& a, const Matrix& b);
double max_abs_diff(const Matrix& a, const Matrix& b);

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    /// Gradient accumulated by Tape::backward. Contract error when the value
    /// does not require gradients.
    const Matrix& grad() const;
    bool requires_grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    Tape& tape() const;
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    /// Receives the tape and the id of the node whose output gradient is ready.
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var variable(Matrix value);

    /// Records an operation. The backward rule is kept only if some input
    /// requires gradients.
    Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);

    /// Seeds d(loss)/d(loss) = 1 and propagates in reverse recording order.
    void backward(const Var& loss);
    /// Clears every accumulator so backward may run again.
    void zero_grad();

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& grad(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    /// Adds g into the accumulator of node id; no-op for constants.
    void accumulate(std::size_t id, const Matrix& g);
    std::size_t size() const noexcept { return nodes_.size(); }
    std::uint64_t id() const noexcept { return tape_id_; }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
    std::uint64_t tape_id_;
    bool backward_done_ = false;
};

// Differentiable primitives. Every operand must live on the same tape.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a (n×d) plus a broadcast 1×d row.
Var add_row(const Var& a, const Var& row);
/// a times a 1×1 scalar value.
Var mul_scalar(const Var& a, const Var& s);
Var relu(const Var& a);
Var transpose(const Var& a);
/// Column sums, 1×d.
Var sum_rows(const Var& a);
/// Column means, 1×d.
Var mean_rows(const Var& a);
/// Column maxima, 1×d. Ties go to the lowest row; backward routes only there.
Var max_rows(const Var& a);
/// Sum of every entry, 1×1.
Var sum_all(const Var& a);
/// Frobenius norm, 1×1.
Var l2_norm(const Var& a);
Var normalize(const Var& a);
/// logits 1×C, returns 1×1 loss.
Var softmax_cross_entropy(const Var& logits, std::size_t target);
/// D^{-1/2}(A+I)D^{-1/2} with D = diag(1 + row sums of A).
Var gcn_normalize(const Var& adjacency);

/// Argmax record produced by max_rows, exposed for tests.
std::vector<std::size_t> column_argmax(const Matrix& a);

using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Max over coordinates of |autodiff − central difference| / max(1, |central difference|).
double grad_check(const ScalarFn& f, const Matrix& point, double step);

} // namespace spool
