#pragma once

// Define-by-run reverse-mode differentiation over dense float64 tensors.
//
// A Tape records every operation in creation order, so the node list is
// already topologically sorted; backward() walks it in reverse. Tapes are
// cheap and meant to be rebuilt for every mini-batch.

#include <cstddef>
#include <functional>
#include <vector>

#include "dap/tensor.hpp"

namespace dap::ad {

// Guard added to divisors, log arguments and the sqrt derivative.
inline constexpr double kEps = 1e-12;

enum class OpKind {
    variable,
    constant,
    matmul,
    add,
    sub,
    mul,
    div,
    relu,
    sigmoid,
    log,
    neg,
    scale,
    sqrt,
    softmax_rows,
    sum,
    mean,
    sum_axis0,
};

const char* op_name(OpKind kind) noexcept;

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    const Tensor& value() const;
    const Tensor& grad() const;
    double item() const { return value().item(); }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf whose gradient is tracked.
    Var variable(Tensor value);
    // Leaf with no gradient (inputs, labels, masks).
    Var constant(Tensor value);
    Var constant(double v) { return constant(Tensor::scalar(v)); }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
    OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Zeroes every accumulator, seeds d(root)/d(root) = 1 and propagates.
    // Afterwards grad(n) holds d(root)/d(node n) for every node that depends
    // on a variable; other nodes keep a zero accumulator.
    void backward(Var root);

    // Interface for op implementations.
    Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn);
    void accumulate(std::size_t id, const Tensor& g);

private:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

// Matrix product a[m x k] * b[k x n].
Var matmul(Var a, Var b);

// Element-wise binary ops. Shapes must match, or one side must be 1x1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a / (b + eps)
Var div(Var a, Var b);

Var relu(Var x);
Var sigmoid(Var x);
// log(x + eps)
Var log(Var x);
Var neg(Var x);
Var scale(Var x, double factor);
// sqrt(max(x, 0)); derivative 1 / (2 sqrt(x) + eps).
Var sqrt(Var x);

// Row-wise softmax with max subtraction. Requires at least two columns.
Var softmax_rows(Var x);

Var sum(Var x);
Var mean(Var x);
// Column sums: [m x n] -> [1 x n].
Var sum_axis0(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double k, Var a) { return scale(a, k); }
inline Var operator*(Var a, double k) { return scale(a, k); }
inline Var operator+(Var a, double k) { return add(a, a.tape().constant(k)); }
inline Var operator+(double k, Var a) { return add(a.tape().constant(k), a); }
inline Var operator-(double k, Var a) { return sub(a.tape().constant(k), a); }
inline Var operator-(Var a, double k) { return sub(a, a.tape().constant(k)); }

}  // namespace dap::ad
