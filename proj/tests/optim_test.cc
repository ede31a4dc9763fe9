#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dlmlab/optim.hpp"
#include "dlmlab/tensor.hpp"

namespace dlmlab {
namespace {

// Independent scalar Adam from the published update equations; the class is
// compared against this step by step.
struct ScalarAdamRef {
    double m = 0, v = 0;
    int64_t t = 0;
    double lr, b1, b2, eps, wd;
    ScalarAdamRef(double lr_, double b1_, double b2_, double eps_, double wd_)
        : lr(lr_), b1(b1_), b2(b2_), eps(eps_), wd(wd_) {}
    double step(double w, double g) {
        t += 1;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
        const double vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
        return w - lr * (mhat / (std::sqrt(vhat) + eps) + wd * w);
    }
};

Tensord param(double v) {
    auto t = Tensord::from_data({}, {v}, true);
    return t;
}

void set_grad(Tensord& t, double g) {
    t.zero_grad();
    // grads are written through backward in real use; poke directly here
    t.mutable_grad()[0] = g;
}

TEST(AdamW, FirstStepMagnitudeIsLr) {
    // bias correction makes the first update lr * sign(g) (+O(eps)),
    // independent of gradient scale
    for (double g : {1e-3, 1.0, 1e3}) {
        auto w = param(1.0);
        AdamW<double> opt({w}, LrPolicy{LrSchedule::constant, 0.01, 0.0, 10});
        set_grad(w, g);
        opt.step();
        EXPECT_NEAR(1.0 - w.data()[0], 0.01, 1e-6) << "g=" << g;
    }
}

TEST(AdamW, MatchesScalarReference) {
    auto w = param(0.3);
    const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.1;
    AdamW<double> opt({w}, LrPolicy{LrSchedule::constant, lr, 0.0, 1000}, b1, b2, eps, wd);
    ScalarAdamRef ref(lr, b1, b2, eps, wd);
    double wref = 0.3;
    for (int i = 0; i < 100; ++i) {
        // pseudo-gradient stream: deterministic, sign-varying
        const double g = std::sin(0.7 * i) + 0.2;
        set_grad(w, g);
        opt.step();
        wref = ref.step(wref, g);
        ASSERT_NEAR(w.data()[0], wref, 1e-12) << "step " << i;
    }
}

TEST(AdamW, ConvergesOnQuadratic) {
    // f(w) = (w-2)^2, grad = 2(w-2)
    auto w = param(-1.0);
    AdamW<double> opt({w}, LrPolicy{LrSchedule::constant, 0.1, 0.0, 300});
    for (int i = 0; i < 300; ++i) {
        set_grad(w, 2.0 * (w.data()[0] - 2.0));
        opt.step();
    }
    EXPECT_NEAR(w.data()[0], 2.0, 0.05);
}

TEST(AdamW, DecoupledWeightDecayShrinksGeometrically) {
    // zero gradient: the only motion is w <- w - lr*wd*w
    auto w = param(4.0);
    const double lr = 0.1, wd = 0.5;
    AdamW<double> opt({w}, LrPolicy{LrSchedule::constant, lr, 0.0, 10}, 0.9, 0.999, 1e-8, wd);
    double expect = 4.0;
    for (int i = 0; i < 10; ++i) {
        set_grad(w, 0.0);
        opt.step();
        expect *= (1.0 - lr * wd);
        ASSERT_NEAR(w.data()[0], expect, 1e-12);
    }
}

TEST(AdamW, GradAppliedThroughBackward) {
    // end to end: loss = (w-2)^2 built from ops
    auto w = param(0.0);
    AdamW<double> opt({w}, LrPolicy{LrSchedule::constant, 0.1, 0.0, 400});
    double loss_val = 0;
    for (int i = 0; i < 400; ++i) {
        opt.zero_grad();
        auto diff = add(w, Tensord::scalar(-2.0));
        auto loss = mul(diff, diff);
        backward(loss);
        loss_val = loss.item();
        opt.step();
    }
    EXPECT_LT(loss_val, 1e-3);
    EXPECT_NEAR(w.data()[0], 2.0, 0.05);
}

TEST(LrPolicy, ConstantSchedule) {
    LrPolicy p{LrSchedule::constant, 3e-4, 0.0, 100};
    EXPECT_EQ(p.lr_at(0), 3e-4);
    EXPECT_EQ(p.lr_at(99), 3e-4);
}

TEST(LrPolicy, WarmupRampsLinearly) {
    LrPolicy p{LrSchedule::constant, 1.0, 0.1, 100};  // 10 warmup steps
    EXPECT_NEAR(p.lr_at(0), 0.1, 1e-12);
    EXPECT_NEAR(p.lr_at(4), 0.5, 1e-12);
    EXPECT_NEAR(p.lr_at(9), 1.0, 1e-12);
    EXPECT_NEAR(p.lr_at(10), 1.0, 1e-12);
}

TEST(LrPolicy, CosineDecaysToZero) {
    LrPolicy p{LrSchedule::cosine, 1.0, 0.1, 110};  // 11 warmup, 99 decay
    EXPECT_NEAR(p.lr_at(11), 1.0, 1e-12);
    EXPECT_NEAR(p.lr_at(109), 0.0, 1e-12);
    // strictly decreasing after warmup
    double prev = p.lr_at(11);
    for (int64_t s = 12; s < 110; ++s) {
        double cur = p.lr_at(s);
        ASSERT_LT(cur, prev) << "step " << s;
        prev = cur;
    }
    // midpoint of decay is half the peak
    EXPECT_NEAR(p.lr_at(11 + 49), 0.5, 0.02);
}

TEST(AdamW, RejectsFrozenParams) {
    auto w = Tensord::from_data({}, {1.0}, false);
    EXPECT_THROW(AdamW<double>({w}, LrPolicy{}), error);
}

}  // namespace
}  // namespace dlmlab
