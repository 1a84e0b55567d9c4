#include "dap/graddiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dap/errors.hpp"

namespace dap::ad {

const char* op_name(OpKind kind) noexcept {
    switch (kind) {
        case OpKind::variable: return "variable";
        case OpKind::constant: return "constant";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::div: return "div";
        case OpKind::relu: return "relu";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::log: return "log";
        case OpKind::neg: return "neg";
        case OpKind::scale: return "scale";
        case OpKind::sqrt: return "sqrt";
        case OpKind::softmax_rows: return "softmax_rows";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
        case OpKind::sum_axis0: return "sum_axis0";
    }
    return "?";
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::variable(Tensor value) {
    Var v = record(OpKind::variable, {}, std::move(value), nullptr);
    nodes_.back().requires_grad = true;
    return v;
}

Var Tape::constant(Tensor value) {
    return record(OpKind::constant, {}, std::move(value), nullptr);
}

Var Tape::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
    bool needs = false;
    for (std::size_t in : inputs) {
        if (in >= nodes_.size()) throw ContractError("tape input refers to a later node");
        needs = needs || nodes_[in].requires_grad;
    }
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), Tensor{},
                          needs ? std::move(fn) : BackwardFn{}, needs});
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.grad.same_shape(g)) {
        throw DimensionError(std::string("gradient shape ") + shape_string(g.shape()) +
                             " does not match node shape " + shape_string(n.value.shape()));
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var root) {
    if (root.valid() && &root.tape() != this) throw ContractError("backward root belongs to another tape");
    const std::size_t r = root.id();
    if (r >= nodes_.size()) throw ContractError("backward root is not on this tape");
    if (!nodes_[r].value.is_scalar()) {
        throw ContractError("backward root must be scalar, got shape " +
                            shape_string(nodes_[r].value.shape()));
    }
    for (Node& n : nodes_) {
        n.grad = n.requires_grad ? Tensor(n.value.rows(), n.value.cols(), 0.0) : Tensor{};
    }
    if (!nodes_[r].requires_grad) return;
    nodes_[r].grad[0] = 1.0;
    for (std::size_t i = r + 1; i-- > 0;) {
        if (nodes_[i].requires_grad && nodes_[i].backward) nodes_[i].backward(*this, i);
    }
}

namespace {

void check_same_tape(Var a, Var b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

// Element-wise binary op with same-shape or scalar broadcasting.
template <class F, class DA, class DB>
Var binary(OpKind kind, Var a, Var b, F f, DA da, DB db) {
    check_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    const bool xs = x.is_scalar() && !y.is_scalar();
    const bool ys = y.is_scalar() && !x.is_scalar();
    if (!xs && !ys && !x.same_shape(y)) {
        throw DimensionError(std::string(op_name(kind)) + ": incompatible shapes " +
                             shape_string(x.shape()) + " and " + shape_string(y.shape()));
    }
    const Tensor& shape_src = xs ? y : x;
    Tensor out(shape_src.rows(), shape_src.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[xs ? 0 : i], y[ys ? 0 : i]);

    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(kind, {ia, ib}, std::move(out),
                           [ia, ib, xs, ys, da, db](Tape& t, std::size_t self) {
                               const Tensor& g = t.grad(self);
                               const Tensor& x = t.value(ia);
                               const Tensor& y = t.value(ib);
                               if (t.requires_grad(ia)) {
                                   Tensor ga(x.rows(), x.cols());
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       ga[xs ? 0 : i] += g[i] * da(x[xs ? 0 : i], y[ys ? 0 : i]);
                                   t.accumulate(ia, ga);
                               }
                               if (t.requires_grad(ib)) {
                                   Tensor gb(y.rows(), y.cols());
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       gb[ys ? 0 : i] += g[i] * db(x[xs ? 0 : i], y[ys ? 0 : i]);
                                   t.accumulate(ib, gb);
                               }
                           });
}

// Element-wise unary op whose derivative is a function of input and output.
template <class F, class D>
Var unary(OpKind kind, Var a, F f, D d) {
    const Tensor& x = a.value();
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    const std::size_t ia = a.id();
    return a.tape().record(kind, {ia}, std::move(out), [ia, d](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(self);
        Tensor gx(x.rows(), x.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * d(x[i], y[i]);
        t.accumulate(ia, gx);
    });
}

void gemm_acc(const Tensor& a, bool ta, const Tensor& b, bool tb, Tensor& out) {
    // out += op(a) * op(b); loops ordered for row-major access on the common cases.
    const std::size_t m = out.rows(), n = out.cols();
    const std::size_t k = ta ? a.rows() : a.cols();
    auto A = [&](std::size_t i, std::size_t p) { return ta ? a(p, i) : a(i, p); };
    if (!tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* orow = &out(i, 0);
            for (std::size_t p = 0; p < k; ++p) {
                const double av = A(i, p);
                if (av == 0.0) continue;
                const double* brow = b.row_span(p).data();
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = b.row_span(j).data();
                double s = 0.0;
                if (!ta) {
                    const double* arow = a.row_span(i).data();
                    for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
                } else {
                    for (std::size_t p = 0; p < k; ++p) s += a(p, i) * brow[p];
                }
                out(i, j) += s;
            }
        }
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.cols() != y.rows()) {
        throw DimensionError("matmul: inner dimensions differ for " + shape_string(x.shape()) +
                             " and " + shape_string(y.shape()));
    }
    Tensor out(x.rows(), y.cols());
    gemm_acc(x, false, y, false, out);
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record(OpKind::matmul, {ia, ib}, std::move(out), [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        if (t.requires_grad(ia)) {
            Tensor ga(x.rows(), x.cols());
            gemm_acc(g, false, y, true, ga);  // g * y^T
            t.accumulate(ia, ga);
        }
        if (t.requires_grad(ib)) {
            Tensor gb(y.rows(), y.cols());
            gemm_acc(x, true, g, false, gb);  // x^T * g
            t.accumulate(ib, gb);
        }
    });
}

Var add(Var a, Var b) {
    return binary(OpKind::add, a, b, [](double x, double y) { return x + y; },
                  [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary(OpKind::sub, a, b, [](double x, double y) { return x - y; },
                  [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary(OpKind::mul, a, b, [](double x, double y) { return x * y; },
                  [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
    return binary(
        OpKind::div, a, b, [](double x, double y) { return x / (y + kEps); },
        [](double, double y) { return 1.0 / (y + kEps); },
        [](double x, double y) { return -x / ((y + kEps) * (y + kEps)); });
}

Var relu(Var x) {
    return unary(OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
    return unary(
        OpKind::sigmoid, x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var log(Var x) {
    return unary(OpKind::log, x, [](double v) { return std::log(v + kEps); },
                 [](double v, double) { return 1.0 / (v + kEps); });
}

Var neg(Var x) {
    return unary(OpKind::neg, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(Var x, double factor) {
    return unary(OpKind::scale, x, [factor](double v) { return factor * v; },
                 [factor](double, double) { return factor; });
}

Var sqrt(Var x) {
    return unary(OpKind::sqrt, x, [](double v) { return std::sqrt(std::max(v, 0.0)); },
                 [](double, double y) { return 1.0 / (2.0 * y + kEps); });
}

Var softmax_rows(Var x) {
    const Tensor& in = x.value();
    if (in.cols() < 2) throw DimensionError("softmax_rows needs at least 2 columns, got " + shape_string(in.shape()));
    Tensor out(in.rows(), in.cols());
    for (std::size_t r = 0; r < in.rows(); ++r) {
        double mx = in(r, 0);
        for (std::size_t c = 1; c < in.cols(); ++c) mx = std::max(mx, in(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < in.cols(); ++c) {
            out(r, c) = std::exp(in(r, c) - mx);
            z += out(r, c);
        }
        for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) /= z;
    }
    const std::size_t ix = x.id();
    return x.tape().record(OpKind::softmax_rows, {ix}, std::move(out), [ix](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor gx(y.rows(), y.cols());
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
            for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) = y(r, c) * (g(r, c) - dot);
        }
        t.accumulate(ix, gx);
    });
}

Var sum(Var x) {
    const Tensor& in = x.value();
    if (in.empty()) throw EmptyInputError("sum of an empty tensor");
    double s = 0.0;
    for (double v : in.data()) s += v;
    const std::size_t ix = x.id();
    return x.tape().record(OpKind::sum, {ix}, Tensor::scalar(s), [ix](Tape& t, std::size_t self) {
        const Tensor& in = t.value(ix);
        t.accumulate(ix, Tensor(in.rows(), in.cols(), t.grad(self).item()));
    });
}

Var mean(Var x) {
    const Tensor& in = x.value();
    if (in.empty()) throw EmptyInputError("mean of an empty tensor");
    double s = 0.0;
    for (double v : in.data()) s += v;
    const double n = static_cast<double>(in.size());
    const std::size_t ix = x.id();
    return x.tape().record(OpKind::mean, {ix}, Tensor::scalar(s / n), [ix, n](Tape& t, std::size_t self) {
        const Tensor& in = t.value(ix);
        t.accumulate(ix, Tensor(in.rows(), in.cols(), t.grad(self).item() / n));
    });
}

Var sum_axis0(Var x) {
    const Tensor& in = x.value();
    if (in.empty()) throw EmptyInputError("sum_axis0 of an empty tensor");
    Tensor out(1, in.cols());
    for (std::size_t r = 0; r < in.rows(); ++r)
        for (std::size_t c = 0; c < in.cols(); ++c) out[c] += in(r, c);
    const std::size_t ix = x.id();
    return x.tape().record(OpKind::sum_axis0, {ix}, std::move(out), [ix](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& in = t.value(ix);
        Tensor gx(in.rows(), in.cols());
        for (std::size_t r = 0; r < in.rows(); ++r)
            for (std::size_t c = 0; c < in.cols(); ++c) gx(r, c) = g[c];
        t.accumulate(ix, gx);
    });
}

}  // namespace dap::ad
