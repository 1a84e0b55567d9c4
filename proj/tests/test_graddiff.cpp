#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dap/errors.hpp"
#include "dap/graddiff.hpp"

using namespace dap;
using namespace dap::ad;

namespace {

// Central-difference gradient of f at x.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, Tensor x) {
    Tensor g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        const double h = 1e-6 * std::max(1.0, std::abs(saved));
        x[i] = saved + h;
        const double up = f(x);
        x[i] = saved - h;
        const double down = f(x);
        x[i] = saved;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(r, c);
    for (double& v : t.data()) v = u(rng);
    return t;
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

}  // namespace

TEST(Matmul, IdentityLeavesInputUnchanged) {
    Tape t;
    const Tensor x = random_tensor(2, 3, 1);
    const Var y = matmul(t.constant(Tensor::identity(2)), t.constant(x));
    EXPECT_EQ(y.value(), x);
}

TEST(Matmul, HandSum) {
    Tape t;
    const Var y = matmul(t.constant(Tensor::from_rows({{1, 2}, {3, 4}})), t.constant(Tensor::from_rows({{1}, {1}})));
    EXPECT_EQ(y.value(), Tensor::from_rows({{3}, {7}}));
}

TEST(Matmul, ShapeMismatchThrows) {
    Tape t;
    EXPECT_THROW(matmul(t.constant(Tensor(2, 3)), t.constant(Tensor(2, 3))), DimensionError);
}

TEST(Elementwise, ReluAndSigmoidValues) {
    Tape t;
    EXPECT_EQ(relu(t.constant(-1.0)).item(), 0.0);
    EXPECT_EQ(relu(t.constant(2.5)).item(), 2.5);
    EXPECT_EQ(sigmoid(t.constant(0.0)).item(), 0.5);
}

TEST(Elementwise, DivAndLogCarryGuard) {
    Tape t;
    EXPECT_DOUBLE_EQ(div(t.constant(1.0), t.constant(0.0)).item(), 1.0 / kEps);
    EXPECT_DOUBLE_EQ(log(t.constant(0.0)).item(), std::log(kEps));
}

TEST(Softmax, SymmetricRow) {
    Tape t;
    const Var p = softmax_rows(t.constant(Tensor::from_rows({{0, 0}})));
    EXPECT_EQ(p.value(), Tensor::from_rows({{0.5, 0.5}}));
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
    Tape t;
    const Var p = softmax_rows(t.constant(Tensor::from_rows({{1000, 0}})));
    EXPECT_TRUE(p.value().all_finite());
    EXPECT_NEAR(p.value()(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(p.value()(0, 1), 0.0, 1e-12);
}

TEST(Reduce, SumMeanAxis0) {
    Tape t;
    EXPECT_EQ(sum(t.constant(Tensor::row({1, 2, 3}))).item(), 6.0);
    EXPECT_EQ(mean(t.constant(Tensor(3, 4, 2.5))).item(), 2.5);
    EXPECT_EQ(sum_axis0(t.constant(Tensor(2, 3, 1.0))).value(), Tensor::row({2, 2, 2}));
}

TEST(Backward, SumGivesOnes) {
    Tape t;
    const Var w = t.variable(random_tensor(2, 3, 4));
    t.backward(sum(w));
    EXPECT_EQ(w.grad(), Tensor(2, 3, 1.0));
}

TEST(Backward, SumOfSquaresGivesTwiceInput) {
    Tape t;
    const Tensor x = random_tensor(3, 2, 5);
    const Var w = t.variable(x);
    t.backward(sum(w * w));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 2 * x[i]);
}

TEST(Backward, ConstantsReceiveNoGradient) {
    Tape t;
    const Var c = t.constant(Tensor(2, 2, 3.0));
    const Var w = t.variable(Tensor(2, 2, 1.0));
    t.backward(sum(c * w));
    EXPECT_FALSE(t.requires_grad(c.id()));
    EXPECT_EQ(w.grad(), Tensor(2, 2, 3.0));
}

TEST(Backward, RepeatedBackwardIsIdempotent) {
    Tape t;
    const Var w = t.variable(random_tensor(2, 2, 6));
    const Var loss = sum(w * w * w);
    t.backward(loss);
    const Tensor first = w.grad();
    t.backward(loss);
    EXPECT_EQ(w.grad(), first);
}

// Each op's backward against central differences.
struct OpCase {
    const char* name;
    std::function<Var(Var)> op;
    double lo, hi;
};

void PrintTo(const OpCase& c, std::ostream* os) { *os << c.name; }

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
    const OpCase& c = GetParam();
    const Tensor x0 = random_tensor(3, 4, 11, c.lo, c.hi);
    const Tensor probe = random_tensor(3, 4, 12);
    // Contract with a fixed random tensor so every output element matters.
    auto f = [&](const Tensor& x) {
        Tape t;
        const Var y = c.op(t.constant(x));
        return sum(y * t.constant(y.value().same_shape(probe) ? probe : Tensor(y.value().rows(), y.value().cols(), 1.0)))
            .item();
    };
    Tape t;
    const Var x = t.variable(x0);
    const Var y = c.op(x);
    t.backward(sum(y * t.constant(y.value().same_shape(probe) ? probe : Tensor(y.value().rows(), y.value().cols(), 1.0))));
    expect_close(x.grad(), numeric_grad(f, x0), 1e-6);
}

const Tensor kOther = random_tensor(3, 4, 13, 0.5, 2.0);
const Tensor kRight = random_tensor(4, 2, 14);

INSTANTIATE_TEST_SUITE_P(
    Ops, OpGradient,
    ::testing::Values(
        OpCase{"add", [](Var x) { return x + x.tape().constant(kOther); }, -1, 1},
        OpCase{"sub", [](Var x) { return x.tape().constant(kOther) - x; }, -1, 1},
        OpCase{"mul", [](Var x) { return x * x.tape().constant(kOther); }, -1, 1},
        OpCase{"div_num", [](Var x) { return x / x.tape().constant(kOther); }, -1, 1},
        OpCase{"div_den", [](Var x) { return x.tape().constant(kOther) / x; }, 0.5, 2},
        OpCase{"relu", [](Var x) { return relu(x); }, -1, 1},
        OpCase{"sigmoid", [](Var x) { return sigmoid(x); }, -3, 3},
        OpCase{"log", [](Var x) { return log(x); }, 0.2, 2},
        OpCase{"neg", [](Var x) { return -x; }, -1, 1},
        OpCase{"scale", [](Var x) { return 2.5 * x; }, -1, 1},
        OpCase{"sqrt", [](Var x) { return sqrt(x); }, 0.2, 2},
        OpCase{"softmax", [](Var x) { return softmax_rows(x); }, -2, 2},
        OpCase{"matmul", [](Var x) { return matmul(x, x.tape().constant(kRight)); }, -1, 1},
        OpCase{"mean", [](Var x) { return mean(x); }, -1, 1},
        OpCase{"sum_axis0", [](Var x) { return sum_axis0(x); }, -1, 1},
        OpCase{"scalar_broadcast", [](Var x) { return x * sum(x); }, -1, 1}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Backward, ComposedNetworkMatchesFiniteDifferences) {
    const Tensor x = random_tensor(5, 3, 20);
    const Tensor w0 = random_tensor(3, 4, 21);
    auto f = [&](const Tensor& w) {
        Tape t;
        const Var h = relu(matmul(t.constant(x), t.constant(w)));
        return mean(log(softmax_rows(h))).item();
    };
    Tape t;
    const Var w = t.variable(w0);
    t.backward(mean(log(softmax_rows(relu(matmul(t.constant(x), w))))));
    expect_close(w.grad(), numeric_grad(f, w0), 1e-6);
}
