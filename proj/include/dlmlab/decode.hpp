#pragma once

// Iterative unmasking decoder: T denoising steps, optional contiguous blocks
// decoded left to right, temperature sampling, five remasking strategies, and
// a per-step trace. Greedy causal generation for the autoregressive baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dlmlab/common.hpp"
#include "dlmlab/masking.hpp"
#include "dlmlab/model.hpp"
#include "dlmlab/rng.hpp"
#include "dlmlab/tensor.hpp"
#include "dlmlab/vocab.hpp"

#include "json.hpp"

namespace dlmlab {

enum class RemaskStrategy { random_remask, low_confidence, entropy, topk_margin, maskgit };

inline const char* remask_strategy_name(RemaskStrategy s) {
    switch (s) {
        case RemaskStrategy::random_remask: return "random";
        case RemaskStrategy::low_confidence: return "low_confidence";
        case RemaskStrategy::entropy: return "entropy";
        case RemaskStrategy::topk_margin: return "topk_margin";
        case RemaskStrategy::maskgit: return "maskgit";
    }
    fail("bad remask strategy enum");
}

inline RemaskStrategy parse_remask_strategy(const std::string& s) {
    if (s == "random") return RemaskStrategy::random_remask;
    if (s == "low_confidence") return RemaskStrategy::low_confidence;
    if (s == "entropy") return RemaskStrategy::entropy;
    if (s == "topk_margin") return RemaskStrategy::topk_margin;
    if (s == "maskgit") return RemaskStrategy::maskgit;
    fail("unknown remask strategy \"", s, "\"");
}

struct DecodeConfig {
    int64_t steps = 0;       // 0 = one step per masked token
    int64_t block_size = 0;  // 0 = no blocking
    double temperature = 0.0;
    RemaskStrategy strategy = RemaskStrategy::low_confidence;
    uint64_t seed = 1;

    void validate() const {
        require(steps >= 0, "decode config: steps must be >= 1 (0 = per-token)");
        require(block_size >= 0, "decode config: block size must be >= 1 (0 = none)");
        require(temperature >= 0.0, "decode config: temperature must be >= 0");
    }
};

struct TraceCommit {
    int64_t pos = 0;
    int token = 0;
    double confidence = 0.0;  // the selection key that committed this position
};

struct TraceStep {
    int64_t step = 0;
    std::vector<TraceCommit> committed;
    uint64_t state_digest = 0;  // digest of the full sequence after this step
};

struct DecodeTrace {
    std::vector<TraceStep> steps;
    TokenSeq final_tokens;
};

// balanced per-step commit counts: sum L_m, differ by at most 1, larger first
inline std::vector<int64_t> commit_schedule(int64_t num_masked, int64_t steps) {
    require(steps >= 1, "commit_schedule: steps must be >= 1, got ", steps);
    require(num_masked >= 0, "commit_schedule: negative masked count");
    std::vector<int64_t> out(static_cast<size_t>(steps), num_masked / steps);
    for (int64_t i = 0; i < num_masked % steps; ++i) ++out[static_cast<size_t>(i)];
    return out;
}

// MaskGIT's cosine curve: masked count after step i is floor(L_m cos(pi/2 i/T)),
// so commits start small and grow; telescopes to exactly L_m
inline std::vector<int64_t> maskgit_schedule(int64_t num_masked, int64_t steps) {
    require(steps >= 1, "maskgit_schedule: steps must be >= 1, got ", steps);
    std::vector<int64_t> out;
    int64_t remaining = num_masked;
    for (int64_t i = 1; i <= steps; ++i) {
        const double frac = std::cos(M_PI / 2.0 * static_cast<double>(i) / static_cast<double>(steps));
        // frac can round to a tiny negative at i == steps; clamp below by zero
        const int64_t next = std::clamp(
            static_cast<int64_t>(std::floor(static_cast<double>(num_masked) * frac)),
            int64_t{0}, remaining);
        out.push_back(remaining - next);
        remaining = next;
    }
    return out;
}

// one still-masked position under consideration at the current step
struct MaskedCandidate {
    int64_t pos = 0;
    int chosen = 0;              // tentative token for this step
    std::vector<double> probs;   // distribution the tentative choice came from
};

namespace detail_decode {

inline double candidate_key(const MaskedCandidate& c, RemaskStrategy s) {
    switch (s) {
        case RemaskStrategy::low_confidence:
        case RemaskStrategy::maskgit:
            return c.probs[static_cast<size_t>(c.chosen)];
        case RemaskStrategy::entropy: {
            double h = 0.0;
            for (double p : c.probs)
                if (p > 0.0) h -= p * std::log(p);
            return -h;  // keep lowest entropy = highest key
        }
        case RemaskStrategy::topk_margin: {
            double p1 = 0.0, p2 = 0.0;
            for (double p : c.probs) {
                if (p > p1) {
                    p2 = p1;
                    p1 = p;
                } else if (p > p2) {
                    p2 = p;
                }
            }
            return p1 - p2;
        }
        case RemaskStrategy::random_remask:
            return 0.0;  // selection handled by the rng, not a key
    }
    fail("bad remask strategy enum");
}

}  // namespace detail_decode

// Pick `count` candidates to commit this step. Returns indices into `cands`,
// sorted ascending by position. Ties on the key break toward the lowest
// position index.
inline std::vector<size_t> select_commit(const std::vector<MaskedCandidate>& cands, int64_t count,
                                         RemaskStrategy strategy, Rng& rng) {
    require(count >= 0, "select_commit: negative count");
    require(count <= static_cast<int64_t>(cands.size()), "select_commit: count ", count,
            " exceeds ", cands.size(), " candidates");
    std::vector<size_t> idx(cands.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (strategy == RemaskStrategy::random_remask) {
        auto pick = rng.sample_without_replacement(cands.size(), static_cast<uint64_t>(count));
        return std::vector<size_t>(pick.begin(), pick.end());
    }
    std::vector<double> keys(cands.size());
    for (size_t i = 0; i < cands.size(); ++i)
        keys[i] = detail_decode::candidate_key(cands[i], strategy);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (keys[a] != keys[b]) return keys[a] > keys[b];
        return cands[a].pos < cands[b].pos;
    });
    idx.resize(static_cast<size_t>(count));
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return cands[a].pos < cands[b].pos; });
    return idx;
}

// Temperature application over one logits row. tau=0 takes the argmax (ties
// to the lowest id) and reports the untempered softmax as the distribution,
// since the tau=0 limit is a delta and carries no usable confidence signal.
// tau>0 samples from softmax(logits/tau).
inline std::pair<int, std::vector<double>> apply_temperature(const std::vector<double>& logits,
                                                             double tau, Rng& rng) {
    require(!logits.empty(), "apply_temperature: empty logits");
    const double scale = tau > 0.0 ? 1.0 / tau : 1.0;
    double mx = -1e300;
    for (double l : logits) mx = std::max(mx, l * scale);
    std::vector<double> probs(logits.size());
    double z = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] * scale - mx);
        z += probs[i];
    }
    for (auto& p : probs) p /= z;
    if (tau == 0.0) {
        size_t best = 0;
        for (size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[best]) best = i;
        return {static_cast<int>(best), std::move(probs)};
    }
    const double u = rng.uniform01();
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return {static_cast<int>(i), std::move(probs)};
    }
    return {static_cast<int>(probs.size() - 1), std::move(probs)};
}

namespace detail_decode {

inline uint64_t sequence_digest(const TokenSeq& toks) {
    uint64_t h = 1469598103934665603ull;
    for (int t : toks) {
        for (int b = 0; b < 4; ++b) {
            h ^= static_cast<uint64_t>((static_cast<uint32_t>(t) >> (8 * b)) & 0xff);
            h *= 1099511628211ull;
        }
    }
    return h;
}

}  // namespace detail_decode

// Fill every masked position over T denoising steps. Revealed positions pass
// through untouched; uncommitted tentative predictions are discarded between
// steps, so the model input always shows MASK at still-open positions.
template <class Real>
std::pair<TokenSeq, DecodeTrace> infill(const ModelParams<Real>& params, const TokenSeq& tokens,
                                        const Mask& mask, const DecodeConfig& config) {
    config.validate();
    const int64_t n = static_cast<int64_t>(tokens.size());
    require(static_cast<int64_t>(mask.size()) == n, "infill: mask length ", mask.size(),
            " != sequence length ", n);
    require(params.config.attention_mode == AttentionMode::bidirectional,
            "infill: model must be bidirectional");

    TokenSeq state = tokens;
    for (int64_t i = 0; i < n; ++i)
        if (mask[static_cast<size_t>(i)]) state[static_cast<size_t>(i)] = MASK_ID;

    DecodeTrace trace;
    const int64_t total_masked = num_masked(mask);
    if (total_masked == 0) {
        trace.final_tokens = state;
        return {state, trace};
    }

    const int64_t T = config.steps == 0 ? total_masked : config.steps;
    require(T >= 1, "infill: steps must be >= 1");
    const int64_t b = config.block_size == 0 ? n : config.block_size;

    // contiguous blocks, left to right; each nonempty block gets a share of T
    // proportional to its masked count (remainders to earlier blocks, minimum
    // one step so every masked block can commit)
    struct Block {
        int64_t begin, end, masked, steps = 0;
    };
    std::vector<Block> blocks;
    for (int64_t at = 0; at < n; at += b) {
        Block blk{at, std::min(n, at + b), 0, 0};
        for (int64_t i = blk.begin; i < blk.end; ++i) blk.masked += mask[static_cast<size_t>(i)];
        blocks.push_back(blk);
    }
    int64_t assigned = 0;
    for (auto& blk : blocks) {
        blk.steps = blk.masked == 0 ? 0 : T * blk.masked / total_masked;
        assigned += blk.steps;
    }
    for (auto& blk : blocks) {
        if (assigned >= T) break;
        if (blk.masked == 0) continue;
        ++blk.steps;
        ++assigned;
    }
    for (auto& blk : blocks)
        if (blk.masked > 0 && blk.steps == 0) blk.steps = 1;

    Rng rng(derive_seed(config.seed, "decode"));
    Mask open = mask;  // 1 = still masked
    int64_t step_index = 0;
    for (const auto& blk : blocks) {
        if (blk.masked == 0) continue;
        const auto schedule = config.strategy == RemaskStrategy::maskgit
                                  ? maskgit_schedule(blk.masked, blk.steps)
                                  : commit_schedule(blk.masked, blk.steps);
        for (int64_t count : schedule) {
            TraceStep ts;
            ts.step = step_index++;
            if (count > 0) {
                auto logits = forward(params, state);
                const int64_t v = params.config.vocab;
                std::vector<MaskedCandidate> cands;
                for (int64_t p = blk.begin; p < blk.end; ++p) {
                    if (!open[static_cast<size_t>(p)]) continue;
                    std::vector<double> row(static_cast<size_t>(v));
                    for (int64_t c = 0; c < v; ++c)
                        row[static_cast<size_t>(c)] =
                            static_cast<double>(logits.data()[static_cast<size_t>(p * v + c)]);
                    MaskedCandidate cand;
                    cand.pos = p;
                    auto [tok, probs] = apply_temperature(row, config.temperature, rng);
                    cand.chosen = tok;
                    cand.probs = std::move(probs);
                    cands.push_back(std::move(cand));
                }
                for (size_t ci : select_commit(cands, count, config.strategy, rng)) {
                    const auto& c = cands[ci];
                    state[static_cast<size_t>(c.pos)] = c.chosen;
                    open[static_cast<size_t>(c.pos)] = 0;
                    ts.committed.push_back(TraceCommit{
                        c.pos, c.chosen,
                        config.strategy == RemaskStrategy::random_remask
                            ? c.probs[static_cast<size_t>(c.chosen)]
                            : detail_decode::candidate_key(c, config.strategy)});
                }
            }
            ts.state_digest = detail_decode::sequence_digest(state);
            trace.steps.push_back(std::move(ts));
        }
    }
    require(num_masked(open) == 0, "infill: internal error, positions left masked");
    trace.final_tokens = state;
    return {state, trace};
}

// greedy/sampled left-to-right continuation; stops at EOS or max_new tokens
template <class Real>
TokenSeq arm_generate(const ModelParams<Real>& params, const TokenSeq& prefix, int64_t max_new,
                      double tau, Rng& rng) {
    require(params.config.attention_mode == AttentionMode::causal,
            "arm_generate: model must be causal");
    require(!prefix.empty(), "arm_generate: empty prefix");
    require(max_new >= 0, "arm_generate: negative max_new");
    TokenSeq out = prefix;
    for (int64_t i = 0; i < max_new; ++i) {
        if (static_cast<int64_t>(out.size()) >= params.config.max_seq) break;
        auto logits = forward(params, out);
        const int64_t v = params.config.vocab;
        const size_t last = out.size() - 1;
        std::vector<double> row(static_cast<size_t>(v));
        for (int64_t c = 0; c < v; ++c)
            row[static_cast<size_t>(c)] =
                static_cast<double>(logits.data()[last * static_cast<size_t>(v) +
                                                  static_cast<size_t>(c)]);
        auto [tok, probs] = apply_temperature(row, tau, rng);
        (void)probs;
        if (tok == EOS_ID) break;
        out.push_back(tok);
    }
    return out;
}

// JSONL trace dump, one step per line
inline void write_trace_jsonl(const DecodeTrace& trace, std::ostream& os) {
    for (const auto& s : trace.steps) {
        nlohmann::json committed = nlohmann::json::array();
        for (const auto& c : s.committed)
            committed.push_back(nlohmann::json::array({c.pos, c.token, c.confidence}));
        nlohmann::json line{{"step", s.step},
                            {"committed", committed},
                            {"state_digest", hex64(s.state_digest)}};
        os << line.dump() << "\n";
    }
}

inline void write_trace_jsonl(const DecodeTrace& trace, const std::string& path) {
    std::ofstream os(path);
    require(os.good(), "write_trace_jsonl: cannot open ", path);
    write_trace_jsonl(trace, os);
}

}  // namespace dlmlab
