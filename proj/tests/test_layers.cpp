#include "test_util.hpp"

#include "bsdgan/layers.hpp"
#include "bsdgan/optim.hpp"

#include <gtest/gtest.h>

using namespace bsdgan;
using namespace testing_util;

namespace {

struct StackCheck {
    double param_error = 0;
    double input_error = 0;
};

// Compares backward() with central differences of the scalar sum(w .* forward(x)).
StackCheck check_stack(const nn::Sequential& stack, int channels, int length, int batch, std::uint64_t seed)
{
    ParamSet params;
    Rng rng(seed);
    stack.init(params, rng);
    for (auto& [name, a] : params)
        a.values += random_matrix(a.values.size(), 1, seed + 5, 0.1);
    const Tensor x(random_matrix(channels, static_cast<Eigen::Index>(batch) * length, seed + 1), length);
    nn::Tape tape;
    const Tensor y = stack.forward(params, x, &tape);
    const Matrix w = random_matrix(y.data.rows(), y.data.cols(), seed + 2);
    GradSet grads;
    const Tensor dx = stack.backward(params, tape, Tensor(w, y.length), &grads);
    auto loss = [&](const ParamSet& p, const Tensor& in) { return stack.forward(p, in).data.cwiseProduct(w).sum(); };
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); };
    const double h = 1e-6;
    StackCheck out;
    for (auto& [name, a] : params) {
        const auto g = grads.find(name);
        for (Eigen::Index i = 0; i < a.values.size(); ++i) {
            const double keep = a.values(i);
            a.values(i) = keep + h;
            const double up = loss(params, x);
            a.values(i) = keep - h;
            const double down = loss(params, x);
            a.values(i) = keep;
            const double an = g == grads.end() ? 0.0 : g->second(i);
            out.param_error = std::max(out.param_error, rel((up - down) / (2 * h), an));
        }
    }
    Tensor xs = x;
    for (Eigen::Index i = 0; i < xs.data.size(); ++i) {
        const double keep = xs.data.data()[i];
        xs.data.data()[i] = keep + h;
        const double up = loss(params, xs);
        xs.data.data()[i] = keep - h;
        const double down = loss(params, xs);
        xs.data.data()[i] = keep;
        out.input_error = std::max(out.input_error, rel((up - down) / (2 * h), dx.data.data()[i]));
    }
    return out;
}

void expect_gradients(const nn::Sequential& stack, int channels, int length, int batch)
{
    for (std::uint64_t seed : {1u, 2u}) {
        const auto r = check_stack(stack, channels, length, batch, seed);
        EXPECT_LT(r.param_error, 1e-6) << "seed " << seed;
        EXPECT_LT(r.input_error, 1e-6) << "seed " << seed;
    }
}

} // namespace

TEST(LayerGradients, Conv1dStridedPadded)
{
    expect_gradients(nn::Sequential({nn::Conv1d{"c", 2, 3, 5, 2, 2}}), 2, 9, 3);
}

TEST(LayerGradients, ConvTranspose1d)
{
    expect_gradients(nn::Sequential({nn::ConvTranspose1d{"t", 3, 2, 5, 2, 2, 1}}), 3, 4, 2);
}

TEST(LayerGradients, DenseAndActivations)
{
    expect_gradients(nn::Sequential({nn::Dense{"d", 6, 4}, nn::LeakyRelu{0.2}, nn::Dense{"e", 4, 3}, nn::Relu{}}), 6, 1, 5);
}

TEST(LayerGradients, Lstm)
{
    expect_gradients(nn::Sequential({nn::Lstm{"l", 2, 4}}), 2, 6, 3);
}

TEST(LayerGradients, PoolAndReshape)
{
    expect_gradients(nn::Sequential({nn::Conv1d{"c", 2, 3, 3, 1, 1}, nn::MaxPool1d{2}, nn::Reshape{12, 1},
                                     nn::Dense{"d", 12, 2}}),
                     2, 9, 2);
}

TEST(LayerShapes, OutputLengths)
{
    EXPECT_EQ(nn::output_length(nn::Conv1d{"c", 1, 1, 5, 2, 2}, 20), 10);
    EXPECT_EQ(nn::output_length(nn::ConvTranspose1d{"t", 1, 1, 5, 2, 2, 1}, 10), 20);
    EXPECT_EQ(nn::output_length(nn::MaxPool1d{2}, 9), 4);
    EXPECT_EQ(nn::output_length(nn::Lstm{"l", 1, 4}, 9), 1);
}

TEST(LayerShapes, GatherScatterAreAdjoint)
{
    const int c = 2, n = 3, lx = 7, kernel = 3, stride = 2, pad = 1;
    const int lc = (lx + 2 * pad - kernel) / stride + 1;
    const Matrix x = random_matrix(c, n * lx, 4);
    const Matrix y = random_matrix(kernel * c, n * lc, 5);
    const double lhs = nn::gather_windows(x, n, lx, lc, kernel, stride, pad).cwiseProduct(y).sum();
    const double rhs = x.cwiseProduct(nn::scatter_windows(y, c, n, lx, lc, kernel, stride, pad)).sum();
    EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Softmax, ColumnsOnSimplexAndStableForLargeLogits)
{
    Matrix logits = random_matrix(4, 6, 1, 3.0);
    logits(0, 0) = 800;
    const Matrix p = nn::softmax(logits);
    EXPECT_TRUE(p.allFinite());
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-12);
        EXPECT_GE(p.col(j).minCoeff(), 0.0);
    }
    EXPECT_NEAR(p(0, 0), 1.0, 1e-12);
}

TEST(Softmax, BackwardMatchesFiniteDifferences)
{
    const Matrix logits = random_matrix(4, 3, 2);
    const Matrix w = random_matrix(4, 3, 3);
    const Matrix g = nn::softmax_backward(nn::softmax(logits), w);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        Matrix a = logits, b = logits;
        a.data()[i] += h;
        b.data()[i] -= h;
        const double fd = (nn::softmax(a).cwiseProduct(w).sum() - nn::softmax(b).cwiseProduct(w).sum()) / (2 * h);
        EXPECT_NEAR(g.data()[i], fd, 1e-8);
    }
}

TEST(AdamOptimizer, FirstStepMovesByLearningRate)
{
    ParamSet params{{"a", ParamArray{{2}, Vector::Constant(2, 1.0)}}, {"b", ParamArray{{1}, Vector::Constant(1, 5.0)}}};
    Adam opt(AdamConfig{0.1, 0.5, 0.9, 1e-12});
    GradSet grads{{"a", (Vector(2) << 3.0, -0.001).finished()}};
    opt.step(params, grads);
    // Bias-corrected first step is lr * sign(g).
    EXPECT_NEAR(params.at("a").values(0), 0.9, 1e-9);
    EXPECT_NEAR(params.at("a").values(1), 1.1, 1e-6);
    EXPECT_EQ(params.at("b").values(0), 5.0);
    EXPECT_EQ(opt.steps(), 1);
    EXPECT_EQ(opt.moments().size(), 1u);
    EXPECT_TRUE(opt.moments().count("a"));
}

TEST(AdamOptimizer, MinimizesQuadratic)
{
    ParamSet params{{"x", ParamArray{{3}, (Vector(3) << 4.0, -2.0, 1.0).finished()}}};
    Adam opt(AdamConfig{0.05, 0.9, 0.999, 1e-8});
    for (int i = 0; i < 2000; ++i)
        opt.step(params, GradSet{{"x", 2.0 * params.at("x").values}});
    EXPECT_LT(params.at("x").values.norm(), 1e-2);
}
