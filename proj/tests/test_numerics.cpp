#include <gtest/gtest.h>

#include "wonderland/numerics/attention.hpp"
#include "wonderland/numerics/conv.hpp"
#include "wonderland/numerics/finite_diff.hpp"
#include "wonderland/numerics/ops.hpp"

namespace wl = wonderland;
using wl::Tensor;

namespace {

Tensor leaf(const wl::Shape &shape, wl::Generator &gen) {
    auto t = wl::rand_uniform(shape, gen, -1.0f, 1.0f);
    t.set_requires_grad(true);
    return t;
}

/// Checks d/dx sum(f(x) * w) against central differences for one input slot.
void expect_gradient_matches(const std::string &name, const std::function<Tensor(const std::vector<Tensor> &)> &f,
                             const std::vector<wl::Shape> &shapes, std::uint64_t seed, double tol = 1e-2) {
    wl::Generator gen(seed);
    std::vector<Tensor> inputs;
    for (const auto &s : shapes) inputs.push_back(leaf(s, gen));
    const Tensor probe = f(inputs);
    const Tensor weights = wl::rand_uniform(probe.shape(), gen, -1.0f, 1.0f);
    wl::sum(f(inputs) * weights).backward();
    for (std::size_t slot = 0; slot < inputs.size(); ++slot) {
        auto scalar = [&](const Tensor &x) {
            auto args = inputs;
            args[slot] = x;
            return wl::sum(f(args) * weights);
        };
        const Tensor numeric = wl::finite_diff_grad(scalar, inputs[slot], 1e-3);
        const auto analytic = inputs[slot].grad();
        EXPECT_LT(wl::relative_error(analytic, numeric.data(), 1e-3), tol) << name << " slot " << slot << " seed " << seed;
    }
}

}  // namespace

TEST(Matmul, IdentityTimesIdentity) {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    auto y = wl::matmul(eye, eye);
    EXPECT_EQ(y.shape(), (wl::Shape{2, 2}));
    EXPECT_EQ(std::vector<float>(y.data().begin(), y.data().end()), (std::vector<float>{1, 0, 0, 1}));
}

TEST(Matmul, HandArithmetic) {
    auto y = wl::matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {1, 1}));
    EXPECT_EQ(y.shape(), (wl::Shape{2, 1}));
    EXPECT_FLOAT_EQ(y.at(0), 3.0f);
    EXPECT_FLOAT_EQ(y.at(1), 7.0f);
}

TEST(Matmul, DimensionErrorNamesBothShapes) {
    try {
        wl::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
        FAIL() << "expected ShapeError";
    } catch (const wl::ShapeError &e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos);
        EXPECT_NE(msg.find("[4x5]"), std::string::npos);
    }
}

TEST(Backward, SumGivesOnes) {
    auto x = Tensor({3}, {0.5f, -1.0f, 2.0f}).set_requires_grad(true);
    wl::sum(x).backward();
    EXPECT_EQ(x.grad(), (std::vector<float>{1, 1, 1}));
}

TEST(Backward, SumOfSquares) {
    auto x = Tensor({3}, {1, 2, 3}).set_requires_grad(true);
    wl::sum(wl::square(x)).backward();
    EXPECT_EQ(x.grad(), (std::vector<float>{2, 4, 6}));
}

TEST(Backward, ConstantLossIsNoOp) {
    EXPECT_NO_THROW(Tensor::scalar(3.0f).backward());
}

TEST(Backward, NonScalarLossIsContractError) {
    auto x = Tensor({2}, {1, 2}).set_requires_grad(true);
    EXPECT_THROW((x * x).backward(), wl::ContractError);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
    // y = x*x reused twice: d/dx (y + y) = 4x.
    auto x = Tensor({1}, {1.5f}).set_requires_grad(true);
    auto y = x * x;
    auto loss = wl::sum(y + y);
    wl::GradTape tape(loss);
    std::size_t mul_nodes = 0;
    for (auto *n : tape.order()) mul_nodes += n->op == "mul";
    EXPECT_EQ(mul_nodes, 1u);
    loss.backward();
    EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
}

TEST(FiniteDiff, SquareAtOne) {
    auto g = wl::finite_diff_grad([](const Tensor &x) { return wl::sum(wl::square(x)); }, Tensor({1}, {1.0f}), 1e-3);
    EXPECT_NEAR(g.at(0), 2.0f, 1e-5);
}

TEST(FiniteDiff, ConstantIsZero) {
    auto g = wl::finite_diff_grad([](const Tensor &) { return Tensor::scalar(4.0f); }, Tensor({3}, {1, 2, 3}), 1e-3);
    for (float v : g.data()) EXPECT_EQ(v, 0.0f);
}

TEST(FiniteDiff, LinearIsOnes) {
    wl::Generator gen(3);
    auto x = wl::rand_uniform({5}, gen, -1, 1);
    auto g = wl::finite_diff_grad([](const Tensor &t) { return wl::sum(t); }, x, 1e-3);
    for (float v : g.data()) EXPECT_NEAR(v, 1.0f, 1e-6);
}

TEST(FiniteDiff, NonFiniteOutputIsNumericError) {
    EXPECT_THROW(wl::finite_diff_grad([](const Tensor &t) { return wl::sum(wl::log(t - t)); }, Tensor({1}, {1.0f}), 1e-3),
                 wl::NumericError);
}

// Every differentiable primitive against central differences, 20 seeds each.
class PrimitiveGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
    const auto seed = GetParam();
    using V = std::vector<Tensor>;
    expect_gradient_matches("add", [](const V &a) { return a[0] + a[1]; }, {{3, 4}, {4}}, seed);
    expect_gradient_matches("sub", [](const V &a) { return a[0] - a[1]; }, {{3, 1}, {3, 4}}, seed);
    expect_gradient_matches("mul", [](const V &a) { return a[0] * a[1]; }, {{2, 3, 4}, {3, 1}}, seed);
    expect_gradient_matches("div", [](const V &a) { return a[0] / (wl::square(a[1]) + 1.0f); }, {{3, 4}, {3, 4}}, seed);
    expect_gradient_matches("matmul", [](const V &a) { return wl::matmul(a[0], a[1]); }, {{3, 4}, {4, 2}}, seed);
    expect_gradient_matches("exp", [](const V &a) { return wl::exp(a[0]); }, {{6}}, seed);
    expect_gradient_matches("log", [](const V &a) { return wl::log(wl::square(a[0]) + 0.5f); }, {{6}}, seed);
    expect_gradient_matches("sigmoid", [](const V &a) { return wl::sigmoid(a[0]); }, {{6}}, seed);
    expect_gradient_matches("tanh", [](const V &a) { return wl::tanh(a[0]); }, {{6}}, seed);
    expect_gradient_matches("silu", [](const V &a) { return wl::silu(a[0]); }, {{6}}, seed);
    expect_gradient_matches("gelu", [](const V &a) { return wl::gelu(a[0]); }, {{6}}, seed);
    expect_gradient_matches("sqrt", [](const V &a) { return wl::sqrt(wl::square(a[0]) + 0.5f); }, {{6}}, seed);
    expect_gradient_matches("sum_axis", [](const V &a) { return wl::sum(a[0], 1); }, {{2, 3, 4}}, seed);
    expect_gradient_matches("mean", [](const V &a) { return wl::mean(a[0]); }, {{2, 3}}, seed);
    expect_gradient_matches("reshape", [](const V &a) { return wl::reshape(a[0], {4, 3}); }, {{2, 6}}, seed);
    expect_gradient_matches("permute", [](const V &a) { return wl::permute(a[0], {2, 0, 1}); }, {{2, 3, 4}}, seed);
    expect_gradient_matches("transpose", [](const V &a) { return wl::transpose(a[0]); }, {{2, 5}}, seed);
    expect_gradient_matches("broadcast_to", [](const V &a) { return wl::broadcast_to(a[0], {3, 4}); }, {{1, 4}}, seed);
    expect_gradient_matches("concat", [](const V &a) { return wl::concat({a[0], a[1]}, 1); }, {{2, 3}, {2, 2}}, seed);
    expect_gradient_matches("slice", [](const V &a) { return wl::slice(a[0], 1, 1, 2); }, {{3, 4}}, seed);
    expect_gradient_matches("index_select", [](const V &a) { return wl::index_select(a[0], {2, 0, 2}); }, {{3, 2}}, seed);
    expect_gradient_matches("softmax", [](const V &a) { return wl::softmax(a[0]); }, {{3, 5}}, seed);
    expect_gradient_matches("layer_norm", [](const V &a) { return wl::layer_norm(a[0], a[1], a[2]); }, {{3, 6}, {6}, {6}},
                            seed);
    expect_gradient_matches("normalize_rows", [](const V &a) { return wl::normalize_rows(a[0] + 2.0f); }, {{3, 4}}, seed);
    expect_gradient_matches("attention", [](const V &a) { return wl::attention(a[0], a[1], a[2], 2); },
                            {{3, 4}, {5, 4}, {5, 4}}, seed);
    expect_gradient_matches("conv3d",
                            [](const V &a) { return wl::conv3d(a[0], a[1], a[2], {1, 2, 2}, {0, 1, 1}); },
                            {{3, 4, 5, 2}, {2, 3, 3, 2, 3}, {3}}, seed);
    expect_gradient_matches("conv_transpose3d",
                            [](const V &a) { return wl::conv_transpose3d(a[0], a[1], a[2], {2, 2, 2}, {0, 1, 0}); },
                            {{2, 2, 3, 3}, {3, 2, 3, 2, 2}, {2}}, seed);
    expect_gradient_matches("conv2d", [](const V &a) { return wl::conv2d(a[0], a[1], a[2], {2, 2}, {1, 1}); },
                            {{5, 6, 2}, {3, 3, 2, 3}, {3}}, seed);
    expect_gradient_matches("conv_transpose2d",
                            [](const V &a) { return wl::conv_transpose2d(a[0], a[1], a[2], {2, 2}); },
                            {{3, 2, 2}, {2, 2, 2, 3}, {3}}, seed);
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGradient, ::testing::Range<std::uint64_t>(1, 21));

TEST(Reshape, RoundTripIsIdentity) {
    wl::Generator gen(9);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = wl::randn({2, 3, 4}, gen);
        auto y = wl::reshape(wl::reshape(x, {6, 4}), {2, 3, 4});
        EXPECT_EQ(y.shape(), x.shape());
        EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
    }
}

TEST(Softmax, RowsArePositiveAndSumToOne) {
    wl::Generator gen(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto y = wl::softmax(wl::randn({4, 7}, gen, 3.0f));
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                EXPECT_GT(y.at(r * 7 + j), 0.0f);
                s += y.at(r * 7 + j);
            }
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Generator, SameSeedIsBitIdentical) {
    wl::Generator a(42), b(42);
    auto x = wl::randn({64}, a);
    auto y = wl::randn({64}, b);
    EXPECT_EQ(0, std::memcmp(x.data().data(), y.data().data(), 64 * sizeof(float)));
    wl::Generator c(43);
    auto z = wl::randn({64}, c);
    EXPECT_NE(0, std::memcmp(x.data().data(), z.data().data(), 64 * sizeof(float)));
}

TEST(Broadcast, IncompatibleShapesThrow) {
    EXPECT_THROW(Tensor::zeros({3, 4}) + Tensor::zeros({3}), wl::ShapeError);
}

TEST(Conv, StridedConvMatchesManualSum) {
    // 1x1x4 input, kernel 2, stride 2: each output sums a pair.
    Tensor x({1, 1, 4, 1}, {1, 2, 3, 4});
    Tensor w({1, 1, 2, 1, 1}, {1, 1});
    auto y = wl::conv3d(x, w, Tensor(), {1, 1, 2});
    ASSERT_EQ(y.shape(), (wl::Shape{1, 1, 2, 1}));
    EXPECT_FLOAT_EQ(y.at(0), 3.0f);
    EXPECT_FLOAT_EQ(y.at(1), 7.0f);
}

TEST(Conv, TransposeIsAdjointOfConv) {
    // <conv(x), y> == <x, conv_transpose(y)> with the weight relaid out.
    wl::Generator gen(11);
    auto x = wl::randn({3, 6, 6, 2}, gen);
    auto w = wl::randn({1, 2, 2, 2, 3}, gen);  // [kt,kh,kw,Cin,Cout]
    auto y = wl::randn({3, 3, 3, 3}, gen);
    // Transposed conv maps Cout-channel y back to Cin: weight [Cout,kt,kh,kw,Cin].
    auto wback = wl::permute(w, {4, 0, 1, 2, 3});
    auto lhs = wl::sum(wl::conv3d(x, w, Tensor(), {1, 2, 2}) * y).item();
    auto rhs = wl::sum(x * wl::conv_transpose3d(y, wback, Tensor(), {1, 2, 2})).item();
    EXPECT_NEAR(lhs, rhs, 1e-3 * std::max(1.0f, std::abs(lhs)));
}

TEST(Conv, CausalPadGroupsFrameZeroAlone) {
    Tensor x({5, 1, 1, 1}, {0, 1, 2, 3, 4});
    auto p = wl::causal_pad_frames(x, 4);
    ASSERT_EQ(p.dim(0), 8u);
    EXPECT_EQ(std::vector<float>(p.data().begin(), p.data().end()), (std::vector<float>{0, 0, 0, 0, 1, 2, 3, 4}));
    auto back = wl::causal_unpad_frames(p, 4);
    EXPECT_EQ(std::vector<float>(back.data().begin(), back.data().end()), (std::vector<float>{0, 1, 2, 3, 4}));
    EXPECT_THROW(wl::causal_pad_frames(Tensor::zeros({6, 1, 1, 1}), 4), wl::ShapeError);
}

TEST(NoGrad, GuardSuppressesHistory) {
    auto x = Tensor({2}, {1, 2}).set_requires_grad(true);
    Tensor y;
    {
        wl::NoGradGuard guard;
        y = x * x;
    }
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE((x * x).requires_grad());
}
