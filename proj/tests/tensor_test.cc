#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dlmlab/rng.hpp"
#include "dlmlab/tensor.hpp"
#include "gradcheck.hpp"

namespace dlmlab {
namespace {

// fixed non-uniform weights so reductions can't hide permutation bugs
Tensord reduce_rows(const Tensord& t2d) {
    const int64_t m = t2d.dim(0), n = t2d.dim(1);
    std::vector<double> wl(static_cast<size_t>(m)), wr(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) wl[static_cast<size_t>(i)] = 0.3 + 0.17 * static_cast<double>(i);
    for (int64_t j = 0; j < n; ++j) wr[static_cast<size_t>(j)] = 0.2 - 0.11 * static_cast<double>(j);
    auto left = Tensord::from_data({1, m}, wl);
    auto right = Tensord::from_data({n, 1}, wr);
    return matmul(matmul(left, t2d), right);
}

Tensord randn_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
    return Tensord::randn(std::move(shape), rng, stddev);
}

// ----------------------------- analytic values -----------------------------

TEST(Softmax, UniformInputsGiveUniformOutput) {
    auto x = Tensord::from_data({3}, {0.0, 0.0, 0.0});
    auto y = softmax(x);
    for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
    auto x = Tensord::from_data({4}, {0.1, -2.0, 3.0, 0.7});
    auto xs = Tensord::from_data({4}, {100.1, 98.0, 103.0, 100.7});
    auto y = softmax(x);
    auto ys = softmax(xs);
    double sum = 0;
    for (size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(y.data()[i], ys.data()[i], 1e-12);
        sum += y.data()[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Softmax, AxisSelection) {
    // [2,3]: axis 0 normalizes columns, axis 1 (== -1) normalizes rows
    auto x = Tensord::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto rows = softmax(x, -1);
    auto cols = softmax(x, 0);
    for (int r = 0; r < 2; ++r) {
        double s = 0;
        for (int c = 0; c < 3; ++c) s += rows.data()[static_cast<size_t>(r * 3 + c)];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int r = 0; r < 2; ++r) s += cols.data()[static_cast<size_t>(r * 3 + c)];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(CrossEntropy, ZeroAtConfidentCorrectPrediction) {
    auto logits = Tensord::from_data({1, 4}, {100.0, 0.0, 0.0, 0.0});
    auto loss = cross_entropy(logits, {0}, std::vector<double>{1.0});
    EXPECT_NEAR(loss.item(), 0.0, 1e-12);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
    auto logits = Tensord::from_data({1, 8}, std::vector<double>(8, 0.42));
    auto loss = cross_entropy(logits, {3}, std::vector<double>{1.0});
    EXPECT_NEAR(loss.item(), std::log(8.0), 1e-12);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
    auto logits = Tensord::from_data({1, 4}, {0.0, 0.0, 0.0, 0.0}, true);
    auto loss = cross_entropy(logits, {0}, std::vector<double>{1.0});
    backward(loss);
    const auto& g = logits.grad();
    EXPECT_NEAR(g[0], -0.75, 1e-12);
    EXPECT_NEAR(g[1], 0.25, 1e-12);
    EXPECT_NEAR(g[2], 0.25, 1e-12);
    EXPECT_NEAR(g[3], 0.25, 1e-12);
}

TEST(CrossEntropy, WeightsScaleAndExclude) {
    auto logits = Tensord::from_data({2, 3}, {1, 2, 3, 3, 2, 1});
    auto l1 = cross_entropy(logits, {0, 2}, std::vector<double>{0.5, 0.0});
    auto l2 = cross_entropy(logits, {0, 999}, std::vector<double>{0.5, 0.0});  // excluded row: any target
    auto lfull = cross_entropy(logits, {0, 0}, std::vector<double>{1.0, 0.0});
    EXPECT_NEAR(l1.item(), l2.item(), 1e-12);
    EXPECT_NEAR(l1.item() * 2.0, lfull.item(), 1e-12);
}

TEST(Matmul, IdentityAndKnownProduct) {
    auto a = Tensord::from_data({2, 2}, {1, 2, 3, 4});
    auto eye = Tensord::from_data({2, 2}, {1, 0, 0, 1});
    auto c = matmul(a, eye);
    for (size_t i = 0; i < 4; ++i) EXPECT_EQ(c.data()[i], a.data()[i]);
    auto d = matmul(a, a);  // [[7,10],[15,22]]
    EXPECT_EQ(d.data()[0], 7);
    EXPECT_EQ(d.data()[1], 10);
    EXPECT_EQ(d.data()[2], 15);
    EXPECT_EQ(d.data()[3], 22);
    // alpha and transposes
    auto e = matmul(a, a, true, false, 2.0);  // 2 * A^T A = 2*[[10,14],[14,20]]
    EXPECT_EQ(e.data()[0], 20);
    EXPECT_EQ(e.data()[3], 40);
}

TEST(Mul, SquareGradient) {
    auto x = Tensord::from_data({}, {3.0}, true);
    auto y = mul(x, x);
    backward(y);
    EXPECT_NEAR(x.grad()[0], 6.0, 1e-12);  // d/dx x^2 = 2x
}

TEST(Gelu, KnownValues) {
    auto x = Tensord::from_data({3}, {0.0, 1.0, -1.0});
    auto y = gelu(x);
    EXPECT_NEAR(y.data()[0], 0.0, 1e-12);
    EXPECT_NEAR(y.data()[1], 0.841344746068543, 1e-9);   // x * Phi(x) at 1
    EXPECT_NEAR(y.data()[2], -0.158655253931457, 1e-9);  // at -1
}

TEST(LayerNorm, NormalizesRows) {
    auto x = Tensord::from_data({2, 4}, {1, 2, 3, 4, -5, 0, 5, 10});
    auto g = Tensord::from_data({4}, {1, 1, 1, 1});
    auto b = Tensord::from_data({4}, {0, 0, 0, 0});
    auto y = layer_norm(x, g, b);
    for (int r = 0; r < 2; ++r) {
        double mean = 0, var = 0;
        for (int c = 0; c < 4; ++c) mean += y.data()[static_cast<size_t>(r * 4 + c)];
        mean /= 4;
        for (int c = 0; c < 4; ++c) {
            double d = y.data()[static_cast<size_t>(r * 4 + c)] - mean;
            var += d * d;
        }
        var /= 4;
        EXPECT_NEAR(mean, 0.0, 1e-9);
        EXPECT_NEAR(var, 1.0, 1e-3);  // eps shifts it slightly below 1
    }
    // gain/bias apply after normalization
    auto g2 = Tensord::from_data({4}, {2, 2, 2, 2});
    auto b2 = Tensord::from_data({4}, {7, 7, 7, 7});
    auto y2 = layer_norm(x, g2, b2);
    for (size_t i = 0; i < 8; ++i) EXPECT_NEAR(y2.data()[i], 2.0 * y.data()[i] + 7.0, 1e-9);
}

TEST(Embedding, LookupAndScatterAddGrad) {
    auto table = Tensord::from_data({3, 2}, {10, 11, 20, 21, 30, 31}, true);
    auto out = embedding_lookup(table, {2, 0, 2});
    ASSERT_EQ(out.shape(), (Shape{3, 2}));
    EXPECT_EQ(out.data()[0], 30);
    EXPECT_EQ(out.data()[2], 10);
    EXPECT_EQ(out.data()[4], 30);
    auto loss = reduce_rows(out);
    backward(loss);
    // row 2 used twice: its grad is the sum of both row contributions
    // reduce weights: wl = {0.3, 0.47, 0.64}, wr = {0.2, 0.09}
    EXPECT_NEAR(table.grad()[4], (0.3 + 0.64) * 0.2, 1e-12);
    EXPECT_NEAR(table.grad()[5], (0.3 + 0.64) * 0.09, 1e-12);
    EXPECT_NEAR(table.grad()[0], 0.47 * 0.2, 1e-12);
    EXPECT_NEAR(table.grad()[2], 0.0, 1e-12);  // id 1 never used
}

TEST(Heads, SplitMergeRoundTrip) {
    Rng rng(3);
    const int64_t B = 2, L = 3, H = 2, D = 6;
    auto x = randn_tensor({B * L, D}, rng);
    auto split = split_heads(x, B, L, H);
    ASSERT_EQ(split.shape(), (Shape{B * H, L, D / H}));
    auto merged = merge_heads(split, B, L, H);
    ASSERT_EQ(merged.shape(), x.shape());
    for (size_t i = 0; i < x.data().size(); ++i) EXPECT_EQ(merged.data()[i], x.data()[i]);
    // spot-check the layout: batch 1, position 2, head 1, lane 0
    // source column = head*hd + lane = 1*3+0 = 3; row = 1*L+2 = 5
    const double v = x.data()[static_cast<size_t>(5 * D + 3)];
    // dest batch-row = (1*H+1) = 3, seq 2, lane 0
    EXPECT_EQ(split.data()[static_cast<size_t>(((3 * L) + 2) * (D / H))], v);
}

TEST(MaskAttention, CausalAndPadding) {
    const int64_t B = 1, H = 1, L = 3;
    auto scores = Tensord::from_data({B * H, L, L}, std::vector<double>(9, 0.5));
    auto causal = mask_attention_scores(scores, B, H, true, {});
    for (int64_t i = 0; i < L; ++i)
        for (int64_t j = 0; j < L; ++j) {
            double v = causal.data()[static_cast<size_t>(i * L + j)];
            if (j > i) EXPECT_LT(v, -1e29);
            else EXPECT_EQ(v, 0.5);
        }
    // padding: key 1 dropped for all queries
    std::vector<char> keep{1, 0, 1};
    auto padded = mask_attention_scores(scores, B, H, false, keep);
    for (int64_t i = 0; i < L; ++i)
        for (int64_t j = 0; j < L; ++j) {
            double v = padded.data()[static_cast<size_t>(i * L + j)];
            if (j == 1) EXPECT_LT(v, -1e29);
            else EXPECT_EQ(v, 0.5);
        }
    // after softmax the dropped key gets ~zero attention
    auto attnp = softmax(padded, -1);
    for (int64_t i = 0; i < L; ++i)
        EXPECT_NEAR(attnp.data()[static_cast<size_t>(i * L + 1)], 0.0, 1e-300);
}

// ----------------------------- error contracts -----------------------------

TEST(Errors, ShapeMismatchesThrow) {
    auto a = Tensord::zeros({2, 3});
    auto b = Tensord::zeros({2, 2});
    EXPECT_THROW(matmul(a, b), error);
    EXPECT_THROW(add(a, b), error);
    EXPECT_THROW(mul(a, b), error);
    EXPECT_THROW(batched_matmul(Tensord::zeros({2, 2, 3}), Tensord::zeros({3, 3, 2})), error);
    EXPECT_THROW(softmax(Tensord::zeros({2, 2}), 5), error);
    auto g = Tensord::zeros({3});
    EXPECT_THROW(layer_norm(a, g, Tensord::zeros({4})), error);
    EXPECT_THROW(embedding_lookup(a, {7}), error);
    EXPECT_THROW(cross_entropy(a, {0}, std::vector<double>{1.0}), error);          // count mismatch
    EXPECT_THROW(cross_entropy(a, {0, 9}, std::vector<double>{1.0, 1.0}), error);  // target range
    EXPECT_THROW(backward(a), error);  // non-scalar loss
}

TEST(Errors, NonFiniteInputsAreCaught) {
    finite_checks() = true;
    auto a = Tensord::from_data({2}, {1.0, std::numeric_limits<double>::infinity()});
    auto b = Tensord::from_data({2}, {1.0, 1.0});
    EXPECT_THROW(add(a, b), error);  // inf + 1 = inf in output scan
    auto big = Tensord::from_data({2}, {1e308, 1e308});
    EXPECT_THROW(add(big, big), error);  // overflow to inf
}

TEST(Autodiff, GradAccumulatesAcrossUses) {
    auto x = Tensord::from_data({}, {3.0}, true);
    auto y = add(mul(x, x), x);  // x^2 + x -> dy/dx = 2x + 1 = 7
    backward(y);
    EXPECT_NEAR(x.grad()[0], 7.0, 1e-12);
}

TEST(Autodiff, RequiresGradPropagates) {
    auto a = Tensord::zeros({2, 2});
    auto b = Tensord::zeros({2, 2});
    EXPECT_FALSE(matmul(a, b).requires_grad());
    b.set_requires_grad(true);
    EXPECT_TRUE(matmul(a, b).requires_grad());
}

// ----------------------------- finite-difference checks -----------------------------

TEST(GradCheck, MatmulAllTransposeCombos) {
    Rng rng(101);
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            auto a = randn_tensor(ta ? Shape{4, 3} : Shape{3, 4}, rng);
            auto b = randn_tensor(tb ? Shape{5, 4} : Shape{4, 5}, rng);
            auto f = [ta, tb](std::vector<Tensord>& ls) {
                return reduce_rows(matmul(ls[0], ls[1], ta, tb, 0.7));
            };
            EXPECT_GRADCHECK(f, (std::vector<Tensord>{a, b}));
        }
    }
}

TEST(GradCheck, BatchedMatmulAllTransposeCombos) {
    Rng rng(102);
    const int64_t N = 2;
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            auto a = randn_tensor(ta ? Shape{N, 4, 3} : Shape{N, 3, 4}, rng);
            auto b = randn_tensor(tb ? Shape{N, 5, 4} : Shape{N, 4, 5}, rng);
            auto f = [ta, tb, N](std::vector<Tensord>& ls) {
                auto prod = batched_matmul(ls[0], ls[1], ta, tb, 1.3);  // [N,3,5]
                return reduce_rows(merge_heads(prod, 1, 3, N));
            };
            EXPECT_GRADCHECK(f, (std::vector<Tensord>{a, b}));
        }
    }
}

TEST(GradCheck, Elementwise) {
    Rng rng(103);
    auto a = randn_tensor({3, 4}, rng);
    auto b = randn_tensor({3, 4}, rng);
    auto f_add = [](std::vector<Tensord>& ls) { return reduce_rows(add(ls[0], ls[1])); };
    EXPECT_GRADCHECK(f_add, (std::vector<Tensord>{a, b}));
    auto f_mul = [](std::vector<Tensord>& ls) { return reduce_rows(mul(ls[0], ls[1])); };
    EXPECT_GRADCHECK(f_mul, (std::vector<Tensord>{a, b}));
    auto f_scale = [](std::vector<Tensord>& ls) { return reduce_rows(scale(ls[0], -2.5)); };
    EXPECT_GRADCHECK(f_scale, (std::vector<Tensord>{a}));
    auto f_gelu = [](std::vector<Tensord>& ls) { return reduce_rows(gelu(ls[0])); };
    EXPECT_GRADCHECK(f_gelu, (std::vector<Tensord>{a}));
}

TEST(GradCheck, SoftmaxBothAxes) {
    Rng rng(104);
    auto a = randn_tensor({3, 4}, rng);
    auto f1 = [](std::vector<Tensord>& ls) { return reduce_rows(softmax(ls[0], -1)); };
    EXPECT_GRADCHECK(f1, (std::vector<Tensord>{a}));
    auto f0 = [](std::vector<Tensord>& ls) { return reduce_rows(softmax(ls[0], 0)); };
    EXPECT_GRADCHECK(f0, (std::vector<Tensord>{a}));
}

TEST(GradCheck, LayerNorm) {
    Rng rng(105);
    auto x = randn_tensor({4, 5}, rng);
    auto g = randn_tensor({5}, rng);
    auto b = randn_tensor({5}, rng);
    auto f = [](std::vector<Tensord>& ls) {
        return reduce_rows(layer_norm(ls[0], ls[1], ls[2]));
    };
    EXPECT_GRADCHECK(f, (std::vector<Tensord>{x, g, b}));
}

TEST(GradCheck, EmbeddingAndPositional) {
    Rng rng(106);
    auto table = randn_tensor({6, 4}, rng);
    auto pos = randn_tensor({3, 4}, rng);
    auto f = [](std::vector<Tensord>& ls) {
        auto e = embedding_lookup(ls[0], {1, 5, 1, 0, 2, 2});  // batch 2, seq 3
        return reduce_rows(add_positional(e, ls[1], 2, 3));
    };
    EXPECT_GRADCHECK(f, (std::vector<Tensord>{table, pos}));
}

TEST(GradCheck, HeadsAndMask) {
    Rng rng(107);
    const int64_t B = 2, L = 3, H = 2, D = 4;
    auto x = randn_tensor({B * L, D}, rng);
    std::vector<char> keep{1, 1, 0, 1, 1, 1};
    auto f = [B, L, H, keep](std::vector<Tensord>& ls) {
        auto s = split_heads(ls[0], B, L, H);                    // [B*H, L, 2]
        auto scores = batched_matmul(s, s, false, true, 0.9);    // [B*H, L, L]
        auto masked = mask_attention_scores(scores, B, H, true, keep);
        auto p = softmax(masked, -1);
        auto o = batched_matmul(p, s);                           // [B*H, L, 2]
        return reduce_rows(merge_heads(o, B, L, H));
    };
    EXPECT_GRADCHECK(f, (std::vector<Tensord>{x}));
}

TEST(GradCheck, CrossEntropyWeighted) {
    Rng rng(108);
    auto logits = randn_tensor({4, 6}, rng);
    std::vector<int> targets{2, 0, 5, 3};
    std::vector<double> weights{0.5, 0.0, 2.0, 1.0};
    auto f = [&](std::vector<Tensord>& ls) { return cross_entropy(ls[0], targets, weights); };
    EXPECT_GRADCHECK(f, (std::vector<Tensord>{logits}));
}

// full mini transformer block: every op composed the way the model uses them
TEST(GradCheck, ComposedAttentionBlock) {
    Rng rng(109);
    const int64_t B = 2, L = 3, H = 2, D = 4, V = 7;
    auto table = randn_tensor({V, D}, rng, 0.5);
    auto pos = randn_tensor({L, D}, rng, 0.5);
    auto wq = randn_tensor({D, D}, rng, 0.5);
    auto wk = randn_tensor({D, D}, rng, 0.5);
    auto wv = randn_tensor({D, D}, rng, 0.5);
    auto wo = randn_tensor({D, D}, rng, 0.5);
    auto g1 = randn_tensor({D}, rng, 0.3);
    auto b1 = randn_tensor({D}, rng, 0.3);
    auto wout = randn_tensor({D, V}, rng, 0.5);
    std::vector<int> ids{1, 4, 2, 6, 0, 3};
    std::vector<int> targets{2, 2, 0, 1, 5, 6};
    std::vector<double> weights{1.0, 0.0, 0.5, 0.25, 1.0, 0.0};

    auto f = [&](std::vector<Tensord>& ls) {
        auto x = add_positional(embedding_lookup(ls[0], ids), ls[1], B, L);
        auto ln = layer_norm(x, ls[6], ls[7]);
        auto qh = split_heads(matmul(ln, ls[2]), B, L, H);
        auto kh = split_heads(matmul(ln, ls[3]), B, L, H);
        auto vh = split_heads(matmul(ln, ls[4]), B, L, H);
        auto scores = batched_matmul(qh, kh, false, true, 1.0 / std::sqrt(2.0));
        auto probs = softmax(mask_attention_scores(scores, B, H, false, {}), -1);
        auto attn = merge_heads(batched_matmul(probs, vh), B, L, H);
        auto y = add(x, matmul(attn, ls[5]));
        return cross_entropy(matmul(y, ls[8]), targets, weights);
    };
    EXPECT_GRADCHECK(
        f, (std::vector<Tensord>{table, pos, wq, wk, wv, wo, g1, b1, wout}));
}

}  // namespace
}  // namespace dlmlab
