#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dlmlab/common.hpp"
#include "dlmlab/tensor.hpp"

namespace dlmlab {

// ----------------------------- lr schedules -----------------------------

enum class LrSchedule { constant, cosine };

inline const char* lr_schedule_name(LrSchedule s) {
    return s == LrSchedule::constant ? "constant" : "cosine";
}

inline LrSchedule parse_lr_schedule(std::string_view s) {
    if (s == "constant") return LrSchedule::constant;
    if (s == "cosine") return LrSchedule::cosine;
    fail("unknown lr schedule '", s, "'");
}

struct LrPolicy {
    LrSchedule schedule = LrSchedule::constant;
    double peak_lr = 1e-3;
    double warmup_frac = 0.0;  // fraction of total steps spent in linear warmup
    int64_t total_steps = 1;

    // lr for optimizer step `step` (0-based).
    double lr_at(int64_t step) const {
        const int64_t warmup = static_cast<int64_t>(warmup_frac * static_cast<double>(total_steps));
        if (warmup > 0 && step < warmup) {
            return peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
        }
        if (schedule == LrSchedule::constant) return peak_lr;
        const int64_t decay_steps = total_steps - warmup;
        if (decay_steps <= 1) return peak_lr;
        const double progress =
            static_cast<double>(step - warmup) / static_cast<double>(decay_steps - 1);
        return peak_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, std::max(0.0, progress))));
    }
};

// ----------------------------- AdamW -----------------------------

// Decoupled weight decay (applied to the data directly, not through the
// moments) with standard bias correction.
template <class Real>
class AdamW {
public:
    AdamW(std::vector<Tensor<Real>> params, LrPolicy policy, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
        : params_(std::move(params)),
          policy_(policy),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps),
          weight_decay_(weight_decay) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            require(params_[i].requires_grad(), "AdamW: parameter ", params_[i].name(),
                    " does not require grad");
            m_[i].assign(params_[i].data().size(), 0.0);
            v_[i].assign(params_[i].data().size(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p.ensure_grad();
            p.zero_grad();
        }
    }

    // Applies one update using current grads. Returns the lr that was used.
    double step() {
        const double lr = policy_.lr_at(t_);
        t_ += 1;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& data = params_[i].mutable_data();
            const auto& grad = params_[i].grad();
            require(grad.size() == data.size(), "AdamW: missing grad for ", params_[i].name());
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < data.size(); ++j) {
                const double g = static_cast<double>(grad[j]);
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                double x = static_cast<double>(data[j]);
                x -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * x);
                data[j] = static_cast<Real>(x);
            }
        }
        return lr;
    }

    int64_t steps_taken() const { return t_; }
    const std::vector<Tensor<Real>>& params() const { return params_; }

private:
    std::vector<Tensor<Real>> params_;
    LrPolicy policy_;
    double beta1_, beta2_, eps_, weight_decay_;
    int64_t t_ = 0;  // number of completed steps
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace dlmlab
