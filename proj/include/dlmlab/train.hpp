#pragma once

// Exposure pipelines over the masked-denoising objective: full fine-tuning,
// low-rank adaptation, chat SFT (loss over the whole templated sequence), and
// the causal next-token baseline. One deterministic loop drives all four.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dlmlab/checkpoint.hpp"
#include "dlmlab/common.hpp"
#include "dlmlab/masking.hpp"
#include "dlmlab/model.hpp"
#include "dlmlab/optim.hpp"
#include "dlmlab/rng.hpp"
#include "dlmlab/tensor.hpp"
#include "dlmlab/vocab.hpp"

namespace dlmlab {

enum class Pipeline { ft, lora, sft, arm };

inline const char* pipeline_name(Pipeline p) {
    switch (p) {
        case Pipeline::ft: return "ft";
        case Pipeline::lora: return "lora";
        case Pipeline::sft: return "sft";
        case Pipeline::arm: return "arm";
    }
    fail("bad pipeline enum");
}

inline Pipeline parse_pipeline(const std::string& s) {
    if (s == "ft") return Pipeline::ft;
    if (s == "lora") return Pipeline::lora;
    if (s == "sft") return Pipeline::sft;
    if (s == "arm") return Pipeline::arm;
    fail("unknown pipeline \"", s, "\"");
}

struct TrainConfig {
    Pipeline pipeline = Pipeline::ft;
    int64_t epochs = 200;
    int64_t batch_size = 16;
    LrSchedule schedule = LrSchedule::constant;
    double lr = 3e-4;  // desk-scale FT default; LoRA runs typically use 1e-3
    double warmup_frac = 0.0;
    double weight_decay = 0.0;
    uint64_t seed = 1;
    int64_t eval_every = 10;        // epochs between eval-loss rows; 0 = never
    int64_t checkpoint_every = 10;  // epochs between numbered checkpoints; 0 = final only
    int64_t lora_rank = 8;
    double lora_alpha = 16.0;

    void validate() const {
        require(epochs >= 1, "train config: epochs must be >= 1, got ", epochs);
        require(batch_size >= 1, "train config: batch size must be >= 1");
        require(warmup_frac >= 0.0 && warmup_frac < 1.0, "train config: warmup fraction ",
                warmup_frac, " outside [0,1)");
        require(lr > 0.0, "train config: learning rate must be positive");
        require(eval_every >= 0 && checkpoint_every >= 0,
                "train config: cadences must be non-negative");
        if (pipeline == Pipeline::lora) require(lora_rank >= 1, "train config: lora rank >= 1");
    }
};

// one corruption level and its uniformly drawn mask; 1 = hidden
struct CorruptionDraw {
    double t = 0.0;
    Mask mask;
    int64_t num_masked() const { return dlmlab::num_masked(mask); }
};

// t ~ U(0,1], mask cardinality exactly floor(t*L); t is resampled while the
// cardinality would be zero, so every draw masks at least one position
inline CorruptionDraw draw_corruption(Rng& rng, int64_t len) {
    require(len >= 1, "draw_corruption: empty sequence");
    CorruptionDraw d;
    if (len == 1) {  // the only draw with a nonzero cardinality is t=1, mask-all
        d.t = 1.0;
        d.mask.assign(1, 1);
        return d;
    }
    int64_t k = 0;
    do {
        d.t = 1.0 - rng.uniform01();  // (0,1]
        k = static_cast<int64_t>(std::floor(d.t * static_cast<double>(len)));
    } while (k == 0);
    d.mask.assign(static_cast<size_t>(len), 0);
    for (uint64_t p : rng.sample_without_replacement(static_cast<uint64_t>(len),
                                                     static_cast<uint64_t>(k)))
        d.mask[static_cast<size_t>(p)] = 1;
    return d;
}

// Masked-denoising loss: mean over the batch of (1/t) * sum over masked
// positions of -log p(x_i | corrupted) / L. The per-token 1/L normalization
// keeps the scale comparable across t and lengths; at uniform logits the loss
// is log V for every t because the 1/t weight cancels the mask-count factor.
// Rows may be ragged; they are padded with PAD, which is never masked and
// never contributes.
template <class Real>
Tensor<Real> dlm_loss(const ModelParams<Real>& params, const std::vector<TokenSeq>& batch,
                      const std::vector<CorruptionDraw>& draws) {
    require(!batch.empty(), "dlm_loss: empty batch");
    require(draws.size() == batch.size(), "dlm_loss: ", draws.size(), " draws for ",
            batch.size(), " sequences");
    size_t max_len = 0;
    for (const auto& row : batch) max_len = std::max(max_len, row.size());
    std::vector<TokenSeq> corrupted(batch.size());
    std::vector<int> targets;
    std::vector<Real> weights;
    targets.reserve(batch.size() * max_len);
    weights.reserve(batch.size() * max_len);
    const Real inv_b = Real(1) / static_cast<Real>(batch.size());
    for (size_t b = 0; b < batch.size(); ++b) {
        const auto& row = batch[b];
        const auto& d = draws[b];
        const int64_t len = static_cast<int64_t>(row.size());
        require(len >= 1, "dlm_loss: empty sequence at row ", b);
        require(static_cast<int64_t>(d.mask.size()) == len, "dlm_loss: draw length ",
                d.mask.size(), " != sequence length ", len, " at row ", b);
        require(d.num_masked() >= 1, "dlm_loss: sequence at row ", b,
                " has no masked positions");
        require(d.t > 0.0, "dlm_loss: corruption level must be positive at row ", b);
        const Real w = static_cast<Real>(1.0 / d.t) / static_cast<Real>(len) * inv_b;
        auto& c = corrupted[b];
        c = row;
        for (int64_t i = 0; i < len; ++i) {
            require(row[static_cast<size_t>(i)] != PAD_ID || !d.mask[static_cast<size_t>(i)],
                    "dlm_loss: PAD masked at row ", b, " position ", i);
            if (d.mask[static_cast<size_t>(i)]) c[static_cast<size_t>(i)] = MASK_ID;
            targets.push_back(row[static_cast<size_t>(i)]);
            weights.push_back(d.mask[static_cast<size_t>(i)] ? w : Real(0));
        }
        for (size_t i = row.size(); i < max_len; ++i) {
            c.push_back(PAD_ID);
            targets.push_back(PAD_ID);
            weights.push_back(Real(0));
        }
    }
    return cross_entropy(forward_batch(params, corrupted), targets, weights);
}

// next-token cross-entropy, averaged over every non-pad predicting position
template <class Real>
Tensor<Real> arm_loss(const ModelParams<Real>& params, const std::vector<TokenSeq>& batch) {
    require(params.config.attention_mode == AttentionMode::causal,
            "arm_loss: model must be causal");
    require(!batch.empty(), "arm_loss: empty batch");
    size_t max_len = 0;
    for (const auto& row : batch) max_len = std::max(max_len, row.size());
    std::vector<TokenSeq> padded(batch.size());
    std::vector<int> targets;
    std::vector<char> predicts;
    int64_t count = 0;
    for (size_t b = 0; b < batch.size(); ++b) {
        const auto& row = batch[b];
        require(row.size() >= 2, "arm_loss: sequence at row ", b, " shorter than 2 tokens");
        auto& p = padded[b];
        p = row;
        p.resize(max_len, PAD_ID);
        for (size_t i = 0; i < max_len; ++i) {
            const bool has_next = i + 1 < row.size();
            targets.push_back(has_next ? row[i + 1] : PAD_ID);
            predicts.push_back(has_next ? 1 : 0);
            count += has_next;
        }
    }
    const Real w = Real(1) / static_cast<Real>(count);
    std::vector<Real> weights;
    weights.reserve(predicts.size());
    for (char c : predicts) weights.push_back(c ? w : Real(0));
    return cross_entropy(forward_batch(params, padded), targets, weights);
}

struct TrainResult {
    std::string final_checkpoint;            // written after the last clean epoch
    std::string last_good_checkpoint;        // rolling epoch-boundary snapshot
    std::vector<std::string> checkpoints;    // numbered epoch checkpoints, in order
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int64_t steps = 0;
    int64_t epochs_completed = 0;
    bool aborted_nan = false;
};

namespace detail_train {

inline void append_csv_row(std::ofstream& os, int64_t step, int64_t epoch, double loss,
                           double lr, double wall_seconds) {
    os << step << "," << epoch << "," << fmt_float(loss) << "," << fmt_float(std::exp(loss))
       << "," << fmt_float(lr) << "," << fmt_float(wall_seconds) << "\n";
}

// checkpoint that is always a plain full model: adapters are folded into a
// deep copy so the live training params and their freeze state stay untouched
template <class Real>
void save_eval_ready(const std::string& path, const ModelParams<Real>& params) {
    ModelParams<Real> copy = clone_params(params);
    if (copy.lora) merge_lora(copy);
    save_checkpoint(path, copy);
}

}  // namespace detail_train

// One deterministic training loop for all pipelines. `rows` are full training
// sequences: raw documents for ft/lora, templated chats for sft, BOS-prefixed
// byte rows for arm. Logs land in run_dir/logs, checkpoints in
// run_dir/checkpoints. Divergence (non-finite loss) aborts the run and leaves
// params restored from the last clean epoch boundary.
template <class Real>
TrainResult train_run(ModelParams<Real>& params, const TrainConfig& config,
                      const std::vector<TokenSeq>& rows, const std::vector<TokenSeq>& eval_rows,
                      const std::string& run_dir) {
    config.validate();
    require(!rows.empty(), "train: no training rows");
    for (size_t i = 0; i < rows.size(); ++i) {
        require(static_cast<int64_t>(rows[i].size()) <= params.config.max_seq,
                "train: row ", i, " of length ", rows[i].size(), " exceeds max length ",
                params.config.max_seq);
        require(rows[i].size() >= 2, "train: row ", i, " shorter than 2 tokens");
    }
    const bool arm = config.pipeline == Pipeline::arm;
    require(!arm || params.config.attention_mode == AttentionMode::causal,
            "train: arm pipeline needs a causal model");
    require(arm || params.config.attention_mode == AttentionMode::bidirectional,
            "train: masked-denoising pipelines need a bidirectional model");
    if (config.pipeline == Pipeline::lora)
        attach_lora(params, config.lora_rank, config.lora_alpha,
                    derive_seed(config.seed, "lora"));

    namespace fs = std::filesystem;
    fs::create_directories(run_dir + "/checkpoints");
    fs::create_directories(run_dir + "/logs");
    std::ofstream train_csv(run_dir + "/logs/train.csv");
    std::ofstream eval_csv(run_dir + "/logs/eval.csv");
    const char* header = "step,epoch,loss,perplexity,lr,wall_time\n";
    train_csv << header;
    eval_csv << header;

    const int64_t steps_per_epoch =
        (static_cast<int64_t>(rows.size()) + config.batch_size - 1) / config.batch_size;
    LrPolicy policy{config.schedule, config.lr, config.warmup_frac,
                    config.epochs * steps_per_epoch};
    std::vector<Tensor<Real>> trainable;
    for (auto& [name, t] : params.trainable_params()) trainable.push_back(t);
    AdamW<Real> opt(trainable, policy, 0.9, 0.999, 1e-8, config.weight_decay);

    TrainResult res;
    res.last_good_checkpoint = run_dir + "/checkpoints/last_good.bin";
    detail_train::save_eval_ready(res.last_good_checkpoint, params);

    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    auto eval_loss = [&](uint64_t salt) -> double {
        Rng erng(derive_seed(config.seed, "eval", salt));
        std::vector<CorruptionDraw> draws;
        if (!arm) {
            draws.reserve(eval_rows.size());
            for (const auto& row : eval_rows)
                draws.push_back(draw_corruption(erng, static_cast<int64_t>(row.size())));
        }
        double total = 0.0;
        int64_t batches = 0;
        for (size_t at = 0; at < eval_rows.size(); at += config.batch_size) {
            const size_t hi = std::min(eval_rows.size(), at + config.batch_size);
            std::vector<TokenSeq> batch(eval_rows.begin() + at, eval_rows.begin() + hi);
            std::vector<CorruptionDraw> bd;
            if (!arm) bd.assign(draws.begin() + at, draws.begin() + hi);
            Tensor<Real> l = arm ? arm_loss(params, batch) : dlm_loss(params, batch, bd);
            total += static_cast<double>(l.item());
            ++batches;
        }
        return total / std::max<int64_t>(1, batches);
    };

    int64_t step = 0;
    bool first_loss = true;
    for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng order_rng(derive_seed(config.seed, "order", static_cast<uint64_t>(epoch)));
        Rng draw_rng(derive_seed(config.seed, "draws", static_cast<uint64_t>(epoch)));
        std::vector<size_t> order(rows.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        try {
            for (int64_t b = 0; b < steps_per_epoch; ++b) {
                std::vector<TokenSeq> batch;
                std::vector<CorruptionDraw> draws;
                const size_t lo = static_cast<size_t>(b) * config.batch_size;
                const size_t hi = std::min(rows.size(), lo + config.batch_size);
                for (size_t i = lo; i < hi; ++i) {
                    batch.push_back(rows[order[i]]);
                    if (!arm)
                        draws.push_back(
                            draw_corruption(draw_rng, static_cast<int64_t>(batch.back().size())));
                }
                opt.zero_grad();
                Tensor<Real> loss =
                    arm ? arm_loss(params, batch) : dlm_loss(params, batch, draws);
                const double lv = static_cast<double>(loss.item());
                if (!std::isfinite(lv)) fail("non-finite loss");
                backward(loss);
                const double lr = opt.step();
                ++step;
                if (first_loss) {
                    res.initial_loss = lv;
                    first_loss = false;
                }
                res.final_loss = lv;
                detail_train::append_csv_row(train_csv, step, epoch, lv, lr, wall());
            }
        } catch (const error&) {
            // divergence: NaN/Inf surfaced either as the loss value or inside
            // an op's finite check. Restore the last clean snapshot.
            res.aborted_nan = true;
            params = load_checkpoint<Real>(res.last_good_checkpoint, params.config);
            break;
        }
        res.epochs_completed = epoch;
        detail_train::save_eval_ready(res.last_good_checkpoint, params);
        if (config.checkpoint_every > 0 &&
            (epoch % config.checkpoint_every == 0 || epoch == config.epochs)) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "epoch_%04d.bin", static_cast<int>(epoch));
            const std::string p = run_dir + "/checkpoints/" + buf;
            detail_train::save_eval_ready(p, params);
            res.checkpoints.push_back(p);
        }
        if (config.eval_every > 0 && !eval_rows.empty() &&
            (epoch % config.eval_every == 0 || epoch == config.epochs)) {
            detail_train::append_csv_row(eval_csv, step, epoch,
                                         eval_loss(static_cast<uint64_t>(epoch)),
                                         policy.lr_at(step), wall());
        }
    }
    res.steps = step;
    res.final_checkpoint = run_dir + "/checkpoints/final.bin";
    detail_train::save_eval_ready(res.final_checkpoint, params);
    return res;
}

// pipeline-named wrappers; each checks its tag and shares the loop above
template <class Real>
TrainResult train_ft(ModelParams<Real>& params, const TrainConfig& c,
                     const std::vector<TokenSeq>& rows, const std::vector<TokenSeq>& eval_rows,
                     const std::string& run_dir) {
    require(c.pipeline == Pipeline::ft, "train_ft: config pipeline is ", pipeline_name(c.pipeline));
    return train_run(params, c, rows, eval_rows, run_dir);
}

template <class Real>
TrainResult train_lora(ModelParams<Real>& params, const TrainConfig& c,
                       const std::vector<TokenSeq>& rows, const std::vector<TokenSeq>& eval_rows,
                       const std::string& run_dir) {
    require(c.pipeline == Pipeline::lora, "train_lora: config pipeline is ",
            pipeline_name(c.pipeline));
    return train_run(params, c, rows, eval_rows, run_dir);
}

template <class Real>
TrainResult train_sft(ModelParams<Real>& params, const TrainConfig& c,
                      const std::vector<TokenSeq>& rows, const std::vector<TokenSeq>& eval_rows,
                      const std::string& run_dir) {
    require(c.pipeline == Pipeline::sft, "train_sft: config pipeline is ",
            pipeline_name(c.pipeline));
    return train_run(params, c, rows, eval_rows, run_dir);
}

template <class Real>
TrainResult train_arm(ModelParams<Real>& params, const TrainConfig& c,
                      const std::vector<TokenSeq>& rows, const std::vector<TokenSeq>& eval_rows,
                      const std::string& run_dir) {
    require(c.pipeline == Pipeline::arm, "train_arm: config pipeline is ",
            pipeline_name(c.pipeline));
    return train_run(params, c, rows, eval_rows, run_dir);
}

// arm rows: BOS so generation can start unconditionally, EOS so it can stop
inline TokenSeq arm_row(const TokenSeq& doc) {
    TokenSeq r;
    r.reserve(doc.size() + 2);
    r.push_back(BOS_ID);
    r.insert(r.end(), doc.begin(), doc.end());
    r.push_back(EOS_ID);
    return r;
}

}  // namespace dlmlab
