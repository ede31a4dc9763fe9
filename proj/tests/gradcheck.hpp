#pragma once

// Central finite-difference gradient oracle. Builds the graph twice per
// perturbed element and compares the analytic grad against
// (f(x+eps) - f(x-eps)) / (2 eps) in double precision.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dlmlab/tensor.hpp"

namespace dlmlab {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst;  // "leaf[i] elem[j]" of the worst element
};

// f must build a fresh scalar graph from the given leaves on every call.
inline GradCheckResult grad_check(
    const std::function<Tensord(std::vector<Tensord>&)>& f, std::vector<Tensord> leaves,
    double eps = 1e-3) {
    for (auto& l : leaves) l.set_requires_grad(true);

    Tensord loss = f(leaves);
    EXPECT_EQ(loss.numel(), 1);
    for (auto& l : leaves) {
        l.ensure_grad();
        l.zero_grad();
    }
    backward(loss);

    std::vector<std::vector<double>> analytic;
    for (auto& l : leaves) analytic.push_back(l.grad());

    GradCheckResult res;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& data = leaves[li].mutable_data();
        for (size_t j = 0; j < data.size(); ++j) {
            const double orig = data[j];
            data[j] = orig + eps;
            const double fp = f(leaves).item();
            data[j] = orig - eps;
            const double fm = f(leaves).item();
            data[j] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double an = analytic[li][j];
            const double rel =
                std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1.0});
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = "leaf[" + std::to_string(li) + "] elem[" + std::to_string(j) + "]";
            }
        }
    }
    return res;
}

#define EXPECT_GRADCHECK(f, leaves)                                             \
    do {                                                                        \
        auto gc_res = ::dlmlab::grad_check((f), (leaves));                      \
        EXPECT_LT(gc_res.max_rel_err, 1e-4) << "worst at " << gc_res.worst;     \
    } while (0)

}  // namespace dlmlab
