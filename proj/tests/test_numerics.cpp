#include "sparseformer/grad_check.hpp"
#include "sparseformer/ops.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace sparseformer;

namespace {

struct DoubleMode : ::testing::Test {
    PrecisionScope scope{Precision::Double};
};

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal(0.0, scale);
    return Tensor(std::move(shape), std::move(v), grad);
}

// Central differences computed here, independently of grad_check.
std::vector<double> numeric_grad(const std::function<double()>& f, Tensor& x, double h) {
    std::vector<double> g(x.numel());
    auto d = x.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double keep = d[i];
        d[i] = keep + h;
        const double up = f();
        d[i] = keep - h;
        const double down = f();
        d[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

void expect_grad_matches(const std::function<Tensor()>& loss, std::vector<Tensor> inputs, double tol = 1e-4) {
    Tensor l = loss();
    l.backward();
    for (auto& x : inputs) {
        std::vector<double> analytic(x.grad().begin(), x.grad().end());
        auto numeric = numeric_grad(
            [&] {
                NoGradGuard ng;
                return loss().item();
            },
            x, 1e-5);
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            EXPECT_LE(rel_err(analytic[i], numeric[i]), tol) << "index " << i;
        }
    }
}

}  // namespace

TEST(Tensor, ShapeAndDataLengthMustAgree) {
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    EXPECT_THROW(Tensor({0, 3}, {}), DimensionError);
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.at(1, 2), 6.0);
}

TEST(Tensor, SingleModeRoundsToFloat) {
    PrecisionScope scope(Precision::Single);
    Tensor t({1}, {0.1});
    EXPECT_EQ(t.item(), static_cast<double>(0.1f));
    Tensor s = ops::scale(t, 3.0);
    EXPECT_EQ(s.item(), static_cast<double>(static_cast<float>(3.0 * static_cast<double>(0.1f))));
}

TEST_F(DoubleMode, MatmulIdentity) {
    Rng rng(1);
    Tensor a = random_tensor({3, 3}, rng, 1.0, false);
    Tensor r = ops::matmul(Tensor::eye(3), a);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(r.at(i), a.at(i));
}

TEST_F(DoubleMode, MatmulHandExample) {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {0, 1});
    Tensor r = ops::matmul(a, b);
    EXPECT_EQ(r.shape(), (Shape{2, 1}));
    EXPECT_EQ(r.at(0), 2.0);
    EXPECT_EQ(r.at(1), 4.0);
}

TEST_F(DoubleMode, MatmulShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    try {
        ops::matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
    }
}

TEST_F(DoubleMode, MatmulBackwardOfSum) {
    Rng rng(2);
    Tensor a = random_tensor({5, 4}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    ops::sum(ops::matmul(a, b)).backward();
    // grad_a[i][k] = sum_j b[k][j]
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
            double row = 0.0;
            for (std::size_t j = 0; j < 3; ++j) row += b.at(k, j);
            EXPECT_NEAR(a.grad()[i * 4 + k], row, 1e-12);
        }
    }
    auto numeric = numeric_grad(
        [&] {
            NoGradGuard ng;
            return ops::sum(ops::matmul(a, b)).item();
        },
        a, 1e-6);
    for (std::size_t i = 0; i < numeric.size(); ++i) EXPECT_LE(rel_err(a.grad()[i], numeric[i]), 1e-6);
}

TEST_F(DoubleMode, MatmulVariantsGradients) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(10 + seed);
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({5, 4}, rng);
        Tensor w = random_tensor({4, 2}, rng);
        Tensor bias = random_tensor({2}, rng);
        Tensor r = random_tensor({3, 5}, rng, 1.0, false);
        expect_grad_matches([&] { return ops::dot(ops::flatten(ops::matmul_nt(a, b)), ops::flatten(r)); }, {a, b});
        a.zero_grad();
        expect_grad_matches([&] { return ops::sum(ops::apply(ops::linear(a, w, bias), ops::Pointwise::Gelu)); },
                            {a, w, bias});
    }
}

TEST_F(DoubleMode, SoftmaxExamples) {
    Tensor x({3, 3}, {0, 0, 0, 1000, 0, 0, 1, 2, 3});
    Tensor s = ops::softmax_rows(x);
    EXPECT_NEAR(s.at(0, 0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.at(1, 0), 1.0, 1e-12);
    EXPECT_NEAR(s.at(1, 1), 0.0, 1e-12);
    // exp(k) / (e + e^2 + e^3)
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    EXPECT_NEAR(s.at(2, 0), std::exp(1.0) / z, 1e-12);
    EXPECT_NEAR(s.at(2, 1), std::exp(2.0) / z, 1e-12);
    EXPECT_NEAR(s.at(2, 2), std::exp(3.0) / z, 1e-12);
    EXPECT_NEAR(s.at(2, 0), 0.09003, 1e-5);
    EXPECT_NEAR(s.at(2, 1), 0.24473, 1e-5);
    EXPECT_NEAR(s.at(2, 2), 0.66524, 1e-5);

    Tensor pair({1, 2}, {0, 0});
    EXPECT_EQ(ops::softmax_rows(pair).at(0), 0.5);
}

TEST(Softmax, RowsSumToOneAtExtremeMagnitudes) {
    for (Precision p : {Precision::Single, Precision::Double}) {
        PrecisionScope scope(p);
        Rng rng(3);
        Tensor x({6, 7}, std::vector<double>(42));
        auto d = x.mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.uniform(-1e4, 1e4);
        d[0] = 1e4;
        d[1] = -1e4;
        Tensor s = ops::softmax_rows(x);
        for (std::size_t r = 0; r < 6; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 7; ++c) {
                EXPECT_TRUE(std::isfinite(s.at(r, c)));
                EXPECT_GE(s.at(r, c), 0.0);
                sum += s.at(r, c);
            }
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
    }
}

TEST_F(DoubleMode, SoftmaxGradient) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(20 + seed);
        Tensor x = random_tensor({3, 5}, rng, 2.0);
        Tensor r = random_tensor({3, 5}, rng, 1.0, false);
        expect_grad_matches([&] { return ops::dot(ops::flatten(ops::softmax_rows(x)), ops::flatten(r)); }, {x});
    }
}

TEST_F(DoubleMode, LayerNormExamples) {
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    Tensor constant({1, 2}, {4, 4});
    Tensor out = ops::layer_norm(constant, gamma, beta);
    EXPECT_EQ(out.at(0), 0.0);
    EXPECT_EQ(out.at(1), 0.0);

    Tensor pair({1, 2}, {1, 3});
    out = ops::layer_norm(pair, gamma, beta);
    EXPECT_NEAR(out.at(0), -1.0, 1e-3);
    EXPECT_NEAR(out.at(1), 1.0, 1e-3);
}

TEST_F(DoubleMode, LayerNormStandardizesRows) {
    Rng rng(4);
    Tensor x = random_tensor({4, 8}, rng, 3.0, false);
    Tensor out = ops::layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}));
    for (std::size_t r = 0; r < 4; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 8; ++c) mean += out.at(r, c) / 8.0;
        for (std::size_t c = 0; c < 8; ++c) var += (out.at(r, c) - mean) * (out.at(r, c) - mean) / 8.0;
        EXPECT_NEAR(mean, 0.0, 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-5);
    }
}

TEST_F(DoubleMode, LayerNormGradient) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(30 + seed);
        Tensor x = random_tensor({4, 8}, rng);
        Tensor gamma = random_tensor({8}, rng);
        Tensor beta = random_tensor({8}, rng);
        Tensor r = random_tensor({4, 8}, rng, 1.0, false);
        expect_grad_matches([&] { return ops::dot(ops::flatten(ops::layer_norm(x, gamma, beta)), ops::flatten(r)); },
                            {x, gamma, beta});
    }
}

TEST_F(DoubleMode, Elementwise) {
    Tensor x({3}, {-1, 0, 2});
    Tensor r = ops::relu(x);
    EXPECT_EQ(r.at(0), 0.0);
    EXPECT_EQ(r.at(1), 0.0);
    EXPECT_EQ(r.at(2), 2.0);

    Rng rng(5);
    Tensor y = random_tensor({7}, rng);
    Tensor s = ops::scale(y, 1.0);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(s.at(i), y.at(i));

    // erf form: x * Phi(x)
    Tensor g = ops::gelu(Tensor({3}, {-1.0, 0.0, 1.5}));
    EXPECT_NEAR(g.at(0), -1.0 * 0.5 * std::erfc(1.0 / std::sqrt(2.0)), 1e-14);
    EXPECT_EQ(g.at(1), 0.0);
    EXPECT_NEAR(g.at(2), 1.5 * 0.5 * (1.0 + std::erf(1.5 / std::sqrt(2.0))), 1e-14);
}

TEST_F(DoubleMode, GeluGradientAtTwentyPoints) {
    Rng rng(6);
    Tensor x = random_tensor({20}, rng, 2.0);
    ops::sum(ops::gelu(x)).backward();
    for (std::size_t i = 0; i < 20; ++i) {
        const double v = x.at(i);
        const double h = 1e-5;
        auto f = [](double t) { return 0.5 * t * (1.0 + std::erf(t / std::sqrt(2.0))); };
        const double numeric = (f(v + h) - f(v - h)) / (2 * h);
        EXPECT_LE(rel_err(x.grad()[i], numeric), 1e-4);
    }
}

TEST_F(DoubleMode, ElementwiseGradients) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(40 + seed);
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({2, 3}, rng);
        Tensor bias = random_tensor({3}, rng);
        Tensor r = random_tensor({6}, rng, 1.0, false);
        expect_grad_matches(
            [&] { return ops::dot(ops::flatten(ops::add_row(ops::add(ops::scale(a, -1.7), b), bias)), r); },
            {a, b, bias});
        a.zero_grad();
        expect_grad_matches([&] { return ops::mean(ops::relu(a)); }, {a});
    }
}

TEST_F(DoubleMode, ReshapeFamily) {
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor f = ops::flatten(x);
    EXPECT_EQ(f.shape(), (Shape{6}));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(f.at(i), static_cast<double>(i + 1));

    Tensor a = Tensor::zeros({2, 4});
    Tensor b = Tensor::zeros({3, 4});
    std::vector<Tensor> parts{a, b};
    EXPECT_EQ(ops::concat(parts, 0).shape(), (Shape{5, 4}));
    std::vector<Tensor> bad{Tensor::zeros({2, 4}), Tensor::zeros({3, 5})};
    EXPECT_THROW(ops::concat(bad, 0), DimensionError);

    Rng rng(7);
    Tensor m = random_tensor({3, 5}, rng);
    Tensor tt = ops::transpose(ops::transpose(m));
    EXPECT_EQ(tt.shape(), m.shape());
    for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(tt.at(i), m.at(i));

    Tensor s = ops::slice_rows(m, 1, 3);
    EXPECT_EQ(s.shape(), (Shape{2, 5}));
    EXPECT_EQ(s.at(0, 0), m.at(1, 0));
    EXPECT_THROW(ops::slice_rows(m, 2, 4), DimensionError);
}

TEST_F(DoubleMode, ReshapeInversesAreExactOnGradients) {
    Rng rng(8);
    Tensor m = random_tensor({3, 5}, rng);
    Tensor r = random_tensor({15}, rng, 1.0, false);
    ops::dot(ops::flatten(ops::transpose(ops::transpose(m.reshape({5, 3}).reshape({3, 5})))), r).backward();
    for (std::size_t i = 0; i < 15; ++i) EXPECT_EQ(m.grad()[i], r.at(i));
}

TEST_F(DoubleMode, RearrangementGradients) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Rng rng(50 + seed);
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({4, 3}, rng);
        Tensor v = random_tensor({3}, rng);
        Tensor r = random_tensor({3, 6}, rng, 1.0, false);
        const std::vector<std::size_t> idx{3, 0, 3};
        expect_grad_matches(
            [&] {
                std::vector<Tensor> rows{ops::slice_rows(b, 1, 3), a};
                Tensor cat = ops::concat(rows, 0);                    // [4,3]
                Tensor g = ops::gather_rows(cat, idx);                // [3,3]
                std::vector<Tensor> cols{g, ops::broadcast_rows(v, 3)};
                Tensor wide = ops::concat(cols, 1);                   // [3,6]
                std::vector<Tensor> vecs{v, ops::flatten(ops::slice_rows(a, 0, 1))};
                Tensor stacked = ops::stack_rows(vecs);               // [2,3]
                return ops::add(ops::dot(ops::flatten(wide), ops::flatten(r)), ops::sum(ops::transpose(stacked)));
            },
            {a, b, v});
    }
}

TEST_F(DoubleMode, CrossEntropyMatchesClosedForm) {
    Tensor logits({2, 3}, {0, 0, 0, 1, 2, 3}, true);
    const std::vector<std::size_t> targets{1, 2};
    Tensor loss = ops::cross_entropy(logits, targets);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    const double expected = 0.5 * (std::log(3.0) + (std::log(z) - 3.0));
    EXPECT_NEAR(loss.item(), expected, 1e-14);
    expect_grad_matches([&] { return ops::cross_entropy(logits, targets); }, {logits});
}

TEST_F(DoubleMode, DropoutIsIdentityWithoutRng) {
    Rng rng(9);
    Tensor x = random_tensor({4, 4}, rng);
    Tensor y = ops::dropout(x, 0.5, nullptr);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(x.at(i), y.at(i));
    Rng drop(1);
    Tensor z = ops::dropout(x, 0.5, &drop);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_TRUE(z.at(i) == 0.0 || z.at(i) == 2.0 * x.at(i));
}

TEST_F(DoubleMode, BackwardReusesSharedSubgraph) {
    Tensor x({1}, {3.0}, true);
    Tensor y = ops::scale(x, 2.0);
    ops::add(ops::dot(y, y), y).backward();  // 4x^2 + 2x
    EXPECT_NEAR(x.grad()[0], 8.0 * 3.0 + 2.0, 1e-12);
}

TEST(GradCheck, QuadraticIsExact) {
    Rng rng(11);
    Tensor x = random_tensor({6}, rng);
    ParameterList params{{"x", x}};
    auto report = grad_check([&] { return ops::dot(x, x); }, params);
    ASSERT_EQ(report.entries.size(), 1u);
    EXPECT_LE(report.max_rel_error(), 1e-8);
}

TEST(GradCheck, ConstantGivesZeroGradients) {
    Tensor x({3}, {1, 2, 3}, true);
    ParameterList params{{"x", x}};
    auto report = grad_check([&] { return ops::add(ops::scale(ops::sum(x), 0.0), Tensor::scalar(5.0)); }, params);
    EXPECT_EQ(report.entries[0].max_rel_error, 0.0);
    EXPECT_EQ(report.entries[0].analytic, 0.0);
    EXPECT_EQ(report.entries[0].numeric, 0.0);
}

TEST(GradCheck, AbortsOnNonFiniteLoss) {
    Tensor x({2}, {1, 2}, true);
    ParameterList params{{"x", x}};
    EXPECT_THROW(grad_check([&] { return ops::scale(ops::sum(x), std::numeric_limits<double>::infinity()); }, params),
                 GradCheckError);
}

TEST(GradCheck, RunsInDoubleAndRestoresMode) {
    PrecisionScope scope(Precision::Single);
    Tensor x({2}, {0.5, -0.25}, true);
    ParameterList params{{"x", x}};
    bool saw_double = false;
    grad_check(
        [&] {
            saw_double = precision() == Precision::Double;
            return ops::dot(x, x);
        },
        params);
    EXPECT_TRUE(saw_double);
    EXPECT_EQ(precision(), Precision::Single);
}

TEST(Rng, DeterministicStreams) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng u(1);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        EXPECT_GE(v, 0.0);
        EXPECT_LT(v, 1.0);
        EXPECT_LT(u.below(7), 7u);
    }
    EXPECT_NE(mix_seed(1, 2), mix_seed(1, 3));
    EXPECT_NE(mix_seed(1, 2), mix_seed(2, 2));
}
