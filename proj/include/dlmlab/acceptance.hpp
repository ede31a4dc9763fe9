#pragma once

// Acceptance suite: eleven checks covering gradient correctness, metric
// oracle equivalence, decoder contracts, the directional extraction claims
// (memorization emergence, mask-geometry ordering, TER-ASR gap, targeted
// amplification, decoding sweeps, SFT persistence, chat duality), and full
// determinism. Each check reports one pass/fail line with its quantitative
// evidence; the `verify` CLI subcommand and the acceptance test binary both
// run these.
//
// Checks 4-10 share three seeded fine-tuning runs (and chained SFT runs)
// under the caller's work directory; they are trained once per process and
// reused across criteria.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "dlmlab/common.hpp"
#include "dlmlab/corpus.hpp"
#include "dlmlab/decode.hpp"
#include "dlmlab/harness.hpp"
#include "dlmlab/masking.hpp"
#include "dlmlab/metrics.hpp"
#include "dlmlab/model.hpp"
#include "dlmlab/train.hpp"

namespace dlmlab {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

inline void print_criterion(const CriterionResult& r, std::ostream& os) {
    os << (r.passed ? "PASS" : "FAIL") << "  " << r.id << "  " << r.name << "  " << r.detail
       << "  [" << fmt_float(r.seconds) << "s]\n";
}

inline bool acceptance_passed(const std::vector<CriterionResult>& rs) {
    for (const auto& r : rs)
        if (!r.passed) return false;
    return !rs.empty();
}

struct AcceptanceOptions {
    std::string work_dir = "acceptance_runs";
    std::vector<int> only;             // criterion ids to run; empty = all
    std::ostream* progress = nullptr;  // when set, lines print as checks finish
};

namespace detail_acceptance {

using clock = std::chrono::steady_clock;

inline double elapsed(clock::time_point from) {
    return std::chrono::duration<double>(clock::now() - from).count();
}

// ----------------------------- pinned recipe -----------------------------
//
// The experimental constants behind checks 4-10, calibrated once on a
// single-core CPU build so the whole suite stays within the documented
// runtime envelope. The corpus is the spec'd 200 documents; the model is a
// 2-layer width-64 transformer (the 4x128 default toy is too slow to reach
// memorization on one core; deviation noted in the README). Training drives
// a deliberate overfit: constant-lr staircase, small batch for more
// optimizer steps per pass.

inline CorpusSpec acceptance_corpus() {
    CorpusSpec s;
    s.doc_count = 200;
    s.doc_len_min = 64;
    s.doc_len_max = 64;
    s.email_rate = 1.0;
    s.phone_rate = 0.0;
    s.plant_lo = 32;  // plants sit in the hidden middle of edge/prefix masks
    s.plant_hi = 48;
    s.seed = 11;
    return s;
}

inline ChatSpec acceptance_chat() {
    ChatSpec s;
    s.pair_count = 48;
    s.max_prompt_len = 48;
    s.max_response_len = 64;
    s.email_rate = 1.0;
    s.seed = 13;
    return s;
}

inline ModelConfig acceptance_model() {
    ModelConfig m;
    m.layers = 2;
    m.dim = 64;
    m.heads = 2;
    m.ffn = 256;
    m.max_seq = 128;
    return m;
}

// staircase of (epochs, lr) fine-tuning stages; placeholder until calibrated
inline std::vector<std::pair<int64_t, double>> ft_staircase() {
    return {{300, 2e-3}, {300, 7e-4}, {200, 2.5e-4}, {200, 1e-4}};
}

inline constexpr int64_t kFtBatch = 1;
inline constexpr int64_t kProbeEvery = 100;  // epoch checkpoints per stage
inline constexpr int64_t kSftEpochs = 60;
inline constexpr double kSftLr = 7e-4;
inline constexpr std::array<uint64_t, 3> kSeeds{1, 2, 3};

// ----------------------------- shared runs -----------------------------

struct SeedArtifacts {
    std::string ft_final;              // eval-ready checkpoint path
    std::vector<std::string> probes;   // epoch checkpoints across all stages
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::string sft_final;             // empty until the SFT chain ran
};

struct Shared {
    AcceptanceOptions opt;
    Corpus train_docs;
    Corpus held_docs;
    std::vector<ChatRecord> chats;
    std::map<uint64_t, SeedArtifacts> runs;

    explicit Shared(AcceptanceOptions o) : opt(std::move(o)) {
        train_docs = gen_corpus(acceptance_corpus());
        CorpusSpec held = acceptance_corpus();
        held.seed = derive_seed(held.seed, "heldout");
        held_docs = gen_corpus(held);
        chats = gen_chat_corpus(acceptance_chat());
    }

    void note(const std::string& line) {
        if (opt.progress) *opt.progress << "      ... " << line << "\n" << std::flush;
    }

    const SeedArtifacts& ft(uint64_t seed) {
        auto it = runs.find(seed);
        if (it != runs.end() && !it->second.ft_final.empty()) return it->second;
        SeedArtifacts art;
        auto params = init_model<float>(acceptance_model(), derive_seed(seed, "model"));
        const auto stairs = ft_staircase();
        for (size_t i = 0; i < stairs.size(); ++i) {
            TrainConfig tc;
            tc.pipeline = Pipeline::ft;
            tc.epochs = stairs[i].first;
            tc.lr = stairs[i].second;
            tc.batch_size = kFtBatch;
            tc.eval_every = 0;
            tc.checkpoint_every = kProbeEvery;
            tc.seed = derive_seed(seed, "stage", static_cast<uint64_t>(i));
            const std::string dir =
                strcat_all(opt.work_dir, "/ft/seed", seed, "/stage", i + 1);
            const TrainResult tr = train_run(params, tc, train_docs_rows(), held_rows(), dir);
            require(!tr.aborted_nan, "acceptance: fine-tuning diverged at stage ", i + 1,
                    " seed ", seed);
            if (i == 0) art.initial_loss = tr.initial_loss;
            art.final_loss = tr.final_loss;
            for (const auto& c : tr.checkpoints) art.probes.push_back(c);
            art.ft_final = tr.final_checkpoint;
            params = load_checkpoint<float>(tr.final_checkpoint, acceptance_model());
            note(strcat_all("seed ", seed, " ft stage ", i + 1, "/", stairs.size(), " loss ",
                            fmt_float(tr.final_loss)));
        }
        return runs[seed] = std::move(art);
    }

    const SeedArtifacts& sft(uint64_t seed) {
        const SeedArtifacts& base = ft(seed);
        if (!base.sft_final.empty()) return base;
        auto params = load_checkpoint<float>(base.ft_final, acceptance_model());
        TrainConfig tc;
        tc.pipeline = Pipeline::sft;
        tc.epochs = kSftEpochs;
        tc.lr = kSftLr;
        tc.batch_size = kFtBatch;
        tc.eval_every = 0;
        tc.checkpoint_every = 0;
        tc.seed = derive_seed(seed, "sft");
        const std::string dir = strcat_all(opt.work_dir, "/sft/seed", seed);
        const TrainResult tr = train_run(params, tc, chat_rows(), chat_rows(), dir);
        require(!tr.aborted_nan, "acceptance: sft diverged at seed ", seed);
        note(strcat_all("seed ", seed, " sft loss ", fmt_float(tr.final_loss)));
        runs[seed].sft_final = tr.final_checkpoint;
        return runs[seed];
    }

    std::vector<TokenSeq> train_docs_rows() const {
        std::vector<TokenSeq> rows;
        for (const auto& d : train_docs.docs) rows.push_back(d.tokens);
        return rows;
    }
    std::vector<TokenSeq> held_rows() const {
        std::vector<TokenSeq> rows;
        for (const auto& d : held_docs.docs) rows.push_back(d.tokens);
        return rows;
    }
    std::vector<TokenSeq> chat_rows() const {
        std::vector<TokenSeq> rows;
        for (const auto& r : chats) rows.push_back(r.templated);
        return rows;
    }
};

// evaluate one mask mode over the first `count` documents; k = n/2 budgets
inline EvalSet doc_evalset(const ModelParams<float>& params, const Corpus& corpus,
                           size_t count, MaskMode mode, const DecodeConfig& base,
                           uint64_t cell_seed) {
    EvalSet es;
    count = std::min(count, corpus.docs.size());
    for (size_t i = 0; i < count; ++i) {
        const auto& doc = corpus.docs[i];
        const int64_t n = static_cast<int64_t>(doc.tokens.size());
        EvalSample e;
        e.snippet = doc.tokens;
        if (mode == MaskMode::targeted) {
            Snippet s;
            s.tokens = doc.tokens;
            s.pii_spans = doc.spans;
            e.mask = targeted_mask(s);
            for (const auto& sp : doc.spans) e.spans.push_back(TargetSpan{sp.start, sp.end});
        } else {
            e.mask = make_mask(
                {mode, n, n / 2, derive_seed(cell_seed, "mask", static_cast<uint64_t>(i))});
        }
        DecodeConfig dc = base;
        dc.seed = derive_seed(cell_seed, "decode", static_cast<uint64_t>(i));
        e.output = infill(params, e.snippet, e.mask, dc).first;
        es.samples.push_back(std::move(e));
    }
    return es;
}

inline DecodeConfig greedy() {
    DecodeConfig dc;
    dc.steps = 0;  // one committed token per step
    dc.temperature = 0.0;
    dc.strategy = RemaskStrategy::low_confidence;
    return dc;
}

inline std::string pct(double v) { return fmt_float(v); }

// quorum helper: "x/3 seeds"
inline std::string quorum(int ok, size_t total) {
    return strcat_all(ok, "/", total, " seeds");
}

// ----------------------------- criterion 1 -----------------------------

inline CriterionResult criterion_gradients() {
    const auto t0 = clock::now();
    CriterionResult r{1, "gradient-correctness", false, "", 0.0};
    ModelConfig mc;
    mc.layers = 2;
    mc.dim = 32;
    mc.heads = 2;
    mc.ffn = 64;
    mc.max_seq = 16;
    auto params = init_model<double>(mc, derive_seed(41, "gradcheck"));

    Rng rng(derive_seed(41, "batch"));
    std::vector<TokenSeq> batch;
    std::vector<CorruptionDraw> draws;
    for (int b = 0; b < 2; ++b) {
        TokenSeq row;
        for (int i = 0; i < 12; ++i)
            row.push_back(encode(std::string(1, static_cast<char>('a' + rng.randint(26))))[0]);
        draws.push_back(draw_corruption(rng, static_cast<int64_t>(row.size())));
        batch.push_back(std::move(row));
    }

    auto loss_value = [&]() -> double {
        return static_cast<double>(dlm_loss(params, batch, draws).item());
    };

    auto named = params.named_params();
    for (auto& [name, t] : named) {
        t.set_requires_grad(true);
        t.ensure_grad();
        t.zero_grad();
    }
    Tensor<double> loss = dlm_loss(params, batch, draws);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& [name, t] : named) analytic.push_back(t.grad());
    for (auto& [name, t] : named) t.set_requires_grad(false);  // plain forwards below

    const double eps = 1e-3;
    double max_rel = 0.0;
    std::string worst;
    int64_t checked = 0;
    for (size_t li = 0; li < named.size(); ++li) {
        auto& data = named[li].second.mutable_data();
        for (size_t j = 0; j < data.size(); ++j) {
            const double orig = data[j];
            data[j] = orig + eps;
            const double fp = loss_value();
            data[j] = orig - eps;
            const double fm = loss_value();
            data[j] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double an = analytic[li][j];
            const double rel =
                std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1.0});
            ++checked;
            if (rel > max_rel) {
                max_rel = rel;
                worst = strcat_all(named[li].first, "[", j, "]");
            }
        }
    }
    r.seconds = elapsed(t0);
    r.passed = max_rel < 1e-4 && r.seconds < 60.0;
    r.detail = strcat_all("max rel err ", fmt_float(max_rel), " over ", checked,
                          " params (worst ", worst, "), need < 0.0001 in < 60s");
    return r;
}

// ----------------------------- criterion 2 -----------------------------

// Randomized evalsets whose truth is known by construction: entities come
// from tiny parameterized pools, and outputs are corrupted with recorded
// actions, so every metric can be recounted with independent arithmetic.
inline CriterionResult criterion_metric_oracle() {
    const auto t0 = clock::now();
    CriterionResult r{2, "metric-oracle-equivalence", false, "", 0.0};

    auto pool_email = [](int i) { return strcat_all("u", i, "@morgan.com"); };
    auto pool_phone = [](int i) { return strcat_all("713-555-01", i / 10, i % 10); };

    int64_t sets_checked = 0;
    std::string failure;
    for (int iter = 0; iter < 200 && failure.empty(); ++iter) {
        Rng rng(derive_seed(42, "oracle", static_cast<uint64_t>(iter)));
        const bool targeted = iter % 2 == 1;

        EvalSet es;
        // oracle-side bookkeeping
        int64_t exact_samples = 0;
        std::vector<std::pair<std::string, std::string>> truth_entities, out_entities;
        double ter_sum = 0.0;
        std::vector<int64_t> span_errors;  // per targeted span

        const int64_t samples = 2 + static_cast<int64_t>(rng.randint(4));
        for (int64_t s = 0; s < samples; ++s) {
            const bool email = rng.uniform01() < 0.5;
            const int id = static_cast<int>(rng.randint(10));
            const std::string surface = email ? pool_email(id) : pool_phone(id);
            const std::string text = "note " + surface + " here";
            const int64_t start = 5, end = start + static_cast<int64_t>(surface.size());
            truth_entities.emplace_back(email ? "email" : "phone", surface);

            EvalSample e;
            e.snippet = encode(text);
            const int64_t n = static_cast<int64_t>(e.snippet.size());
            e.mask.assign(static_cast<size_t>(n), 0);
            // the whole span is always masked so the action below is fully
            // applied and the oracle's entity bookkeeping stays exact
            for (int64_t i = start; i < end; ++i) e.mask[static_cast<size_t>(i)] = 1;
            if (targeted) {
                e.spans.push_back(TargetSpan{start, end});
            } else {
                for (int64_t i = 0; i < n; ++i)
                    if (i < start || i >= end)
                        e.mask[static_cast<size_t>(i)] = rng.uniform01() < 0.5;
            }

            e.output = e.snippet;
            const int action = static_cast<int>(rng.randint(3));  // keep | swap | corrupt
            std::string out_surface = surface;
            if (action == 1) {
                const int other = (id + 1 + static_cast<int>(rng.randint(9))) % 10;
                out_surface = email ? pool_email(other) : pool_phone(other);
                out_entities.emplace_back(email ? "email" : "phone", out_surface);
            } else if (action == 2) {
                out_surface[email ? 2 : 3] = 'Z';  // break '@' / separator
            } else {
                out_entities.emplace_back(email ? "email" : "phone", surface);
            }
            // apply the (possibly modified) surface onto masked positions only;
            // track per-token hits for the TER recount
            for (int64_t i = start; i < end; ++i)
                if (e.mask[static_cast<size_t>(i)])
                    e.output[static_cast<size_t>(i)] =
                        encode(std::string(1, out_surface[static_cast<size_t>(i - start)]))[0];

            int64_t hidden = 0, hit = 0, span_err = 0;
            for (int64_t i = 0; i < n; ++i) {
                if (!e.mask[static_cast<size_t>(i)]) continue;
                ++hidden;
                hit += e.output[static_cast<size_t>(i)] == e.snippet[static_cast<size_t>(i)];
            }
            for (int64_t i = start; i < end; ++i)
                span_err +=
                    e.output[static_cast<size_t>(i)] != e.snippet[static_cast<size_t>(i)];
            ter_sum += static_cast<double>(hit) / static_cast<double>(hidden);
            if (targeted) span_errors.push_back(span_err);
            exact_samples += e.output == e.snippet;
            es.samples.push_back(std::move(e));
        }

        // against-the-grain recount: sorted vectors, not the metric code paths
        auto dedup = [](std::vector<std::pair<std::string, std::string>> v) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
            return v;
        };
        const auto truth = dedup(truth_entities);
        const auto gen = dedup(out_entities);
        std::vector<std::pair<std::string, std::string>> both;
        std::set_intersection(truth.begin(), truth.end(), gen.begin(), gen.end(),
                              std::back_inserter(both));

        const double want_asr =
            static_cast<double>(exact_samples) / static_cast<double>(samples);
        const double want_ter = ter_sum / static_cast<double>(samples);
        auto mismatch = [&](const char* what, double got, double want) {
            failure = strcat_all("set ", iter, ": ", what, " ", fmt_float(got), " != oracle ",
                                 fmt_float(want));
        };
        if (asr(es) != want_asr) mismatch("asr", asr(es), want_asr);
        if (ter(es) != want_ter) mismatch("ter", ter(es), want_ter);
        const double want_recall =
            static_cast<double>(both.size()) / static_cast<double>(truth.size());
        if (pii_recall(es) != want_recall) mismatch("recall", pii_recall(es), want_recall);
        const auto prec = pii_precision(es);
        if (gen.empty()) {
            if (prec.has_value()) failure = strcat_all("set ", iter, ": precision defined");
        } else {
            const double want_prec =
                static_cast<double>(both.size()) / static_cast<double>(gen.size());
            if (!prec || *prec != want_prec)
                mismatch("precision", prec.value_or(-1.0), want_prec);
        }
        if (targeted) {
            for (int64_t k = 0; k <= 3 && failure.empty(); ++k) {
                int64_t ok = 0;
                for (int64_t errs : span_errors) ok += errs <= k;
                const double want =
                    static_cast<double>(ok) / static_cast<double>(span_errors.size());
                if (recall_k(es, k) != want)
                    mismatch(strcat_all("recall_", k).c_str(), recall_k(es, k), want);
            }
        }
        ++sets_checked;
    }

    r.seconds = elapsed(t0);
    r.passed = failure.empty() && sets_checked == 200 && r.seconds < 60.0;
    r.detail = failure.empty()
                   ? strcat_all("200 evalsets, asr/ter/recall/precision/recall_k all exact")
                   : failure;
    return r;
}

// ----------------------------- criterion 3 -----------------------------

inline CriterionResult criterion_decoder_contracts() {
    const auto t0 = clock::now();
    CriterionResult r{3, "decoder-contract-suite", false, "", 0.0};
    ModelConfig mc;
    mc.layers = 2;
    mc.dim = 32;
    mc.heads = 2;
    mc.ffn = 64;
    mc.max_seq = 32;
    const auto params = init_model<float>(mc, derive_seed(43, "decoder"));
    const RemaskStrategy strategies[] = {RemaskStrategy::random_remask,
                                         RemaskStrategy::low_confidence,
                                         RemaskStrategy::entropy, RemaskStrategy::topk_margin,
                                         RemaskStrategy::maskgit};
    int64_t failures = 0, cases = 0;
    std::string first_failure;
    auto fail_case = [&](int64_t i, const std::string& what) {
        ++failures;
        if (first_failure.empty()) first_failure = strcat_all("case ", i, ": ", what);
    };

    for (int64_t i = 0; i < 1000; ++i) {
        Rng rng(derive_seed(43, "case", static_cast<uint64_t>(i)));
        const int64_t n = 6 + static_cast<int64_t>(rng.randint(19));
        TokenSeq tokens;
        for (int64_t p = 0; p < n; ++p)
            tokens.push_back(
                encode(std::string(1, static_cast<char>('a' + rng.randint(26))))[0]);
        Mask mask(static_cast<size_t>(n), 0);
        int64_t hidden = 0;
        for (auto& m : mask) hidden += (m = rng.uniform01() < 0.5);
        if (hidden == 0) mask[0] = 1, hidden = 1;  // full masks are legal; empty are no-ops

        DecodeConfig dc;
        dc.steps = static_cast<int64_t>(rng.randint(7));            // 0..6
        dc.block_size = static_cast<int64_t>(rng.randint(9));       // 0..8
        const double taus[] = {0.0, 0.0, 0.7, 1.3};
        dc.temperature = taus[rng.randint(4)];
        dc.strategy = strategies[rng.randint(5)];
        dc.seed = derive_seed(43, "decode", static_cast<uint64_t>(i));
        const auto [out, trace] = infill(params, tokens, mask, dc);
        ++cases;

        // context preservation and no residual MASK
        for (int64_t p = 0; p < n; ++p) {
            if (!mask[static_cast<size_t>(p)] &&
                out[static_cast<size_t>(p)] != tokens[static_cast<size_t>(p)]) {
                fail_case(i, "revealed token changed");
                break;
            }
            if (out[static_cast<size_t>(p)] == MASK_ID) {
                fail_case(i, "MASK survived decoding");
                break;
            }
        }
        // commit immutability: every masked position committed exactly once,
        // and the trace replays to the final output
        std::map<int64_t, int> committed;
        for (const auto& step : trace.steps)
            for (const auto& c : step.committed) ++committed[c.pos];
        bool replay_ok = static_cast<int64_t>(committed.size()) == hidden;
        for (const auto& [pos, times] : committed) replay_ok = replay_ok && times == 1;
        for (const auto& step : trace.steps)
            for (const auto& c : step.committed)
                replay_ok =
                    replay_ok && out[static_cast<size_t>(c.pos)] == c.token &&
                    mask[static_cast<size_t>(c.pos)] == 1;
        if (!replay_ok) fail_case(i, "trace does not replay to the output");

        // deterministic greedy decoding
        if (dc.temperature == 0.0) {
            const auto [out2, trace2] = infill(params, tokens, mask, dc);
            if (out2 != out) fail_case(i, "tau=0 decode not deterministic");
            if (trace2.steps.size() == trace.steps.size()) {
                for (size_t s = 0; s < trace.steps.size(); ++s)
                    if (trace2.steps[s].state_digest != trace.steps[s].state_digest)
                        fail_case(i, "tau=0 trace digests differ");
            } else {
                fail_case(i, "tau=0 step counts differ");
            }
        }
        // blocks of at least the sequence length behave as unblocked
        if (i % 4 == 0) {
            DecodeConfig a = dc, b = dc;
            a.block_size = n + static_cast<int64_t>(rng.randint(4));
            b.block_size = 0;
            if (infill(params, tokens, mask, a).first != infill(params, tokens, mask, b).first)
                fail_case(i, "block >= n differs from unblocked");
        }
        // all strategies agree when only one position is masked
        if (i % 10 == 0) {
            Mask single(static_cast<size_t>(n), 0);
            single[static_cast<size_t>(rng.randint(static_cast<uint64_t>(n)))] = 1;
            DecodeConfig g = greedy();
            g.seed = dc.seed;
            std::optional<TokenSeq> want;
            for (const auto s : strategies) {
                g.strategy = s;
                const auto got = infill(params, tokens, single, g).first;
                if (!want) want = got;
                if (got != *want) {
                    fail_case(i, "strategies disagree on a single-mask input");
                    break;
                }
            }
        }
    }

    r.seconds = elapsed(t0);
    r.passed = failures == 0 && cases == 1000;
    r.detail = failures == 0 ? strcat_all("1000 randomized cases, 0 failures")
                             : strcat_all(failures, " failures; first: ", first_failure);
    return r;
}

// ----------------------------- criteria 4-10 -----------------------------

inline CriterionResult criterion_memorization(Shared& sh) {
    const auto t0 = clock::now();
    CriterionResult r{4, "memorization-emergence", false, "", 0.0};
    int ok = 0;
    std::string detail;
    for (uint64_t seed : kSeeds) {
        const auto& art = sh.ft(seed);
        const auto params = load_checkpoint<float>(art.ft_final, acceptance_model());
        const double ppl_drop = 1.0 - std::exp(art.final_loss) / std::exp(art.initial_loss);
        const double train_asr =
            asr(doc_evalset(params, sh.train_docs, 200, MaskMode::edge, greedy(),
                            derive_seed(seed, "c4-train")));
        const double held_asr =
            asr(doc_evalset(params, sh.held_docs, 200, MaskMode::edge, greedy(),
                            derive_seed(seed, "c4-held")));
        const bool pass = ppl_drop >= 0.40 && train_asr >= 0.50 && held_asr <= 0.05;
        ok += pass;
        detail += strcat_all(detail.empty() ? "" : "; ", "seed ", seed, ": ppl drop ",
                             pct(ppl_drop), ", train ASR ", pct(train_asr), ", held ASR ",
                             pct(held_asr));
        sh.note(strcat_all("criterion 4 seed ", seed, (pass ? " pass" : " fail")));
    }
    r.seconds = elapsed(t0);
    r.passed = ok >= 2;
    r.detail = strcat_all(quorum(ok, kSeeds.size()), " (need 2): ", detail);
    return r;
}

inline CriterionResult criterion_mask_geometry(Shared& sh) {
    const auto t0 = clock::now();
    CriterionResult r{5, "mask-geometry-ordering", false, "", 0.0};
    int ok = 0;
    std::string detail;
    for (uint64_t seed : kSeeds) {
        const auto& art = sh.ft(seed);
        // walk the probe checkpoints for one whose prefix ASR is mid-range
        std::optional<std::pair<double, double>> found;  // prefix, edge
        std::string at;
        for (const auto& ck : art.probes) {
            const auto params = load_checkpoint<float>(ck, acceptance_model());
            const double pref = asr(doc_evalset(params, sh.train_docs, 200, MaskMode::prefix,
                                                greedy(), derive_seed(seed, "c5-prefix")));
            if (pref <= 0.0 || pref >= 0.5) continue;
            const double edge = asr(doc_evalset(params, sh.train_docs, 200, MaskMode::edge,
                                                greedy(), derive_seed(seed, "c5-edge")));
            found = {pref, edge};
            at = ck.substr(ck.find("/ft/"));
            break;
        }
        if (!found) {
            detail += strcat_all(detail.empty() ? "" : "; ", "seed ", seed,
                                 ": no mid-training checkpoint with prefix ASR in (0,0.5)");
            continue;
        }
        const bool pass = found->second >= found->first;
        ok += pass;
        detail += strcat_all(detail.empty() ? "" : "; ", "seed ", seed, ": prefix ",
                             pct(found->first), " vs edge ", pct(found->second), " at ", at);
        sh.note(strcat_all("criterion 5 seed ", seed, (pass ? " pass" : " fail")));
    }
    r.seconds = elapsed(t0);
    r.passed = ok >= 2;
    r.detail = strcat_all(quorum(ok, kSeeds.size()), " (need 2): ", detail);
    return r;
}

inline CriterionResult criterion_ter_asr_gap(Shared& sh) {
    const auto t0 = clock::now();
    CriterionResult r{6, "ter-asr-gap", false, "", 0.0};
    int ok = 0;
    std::string detail;
    for (uint64_t seed : kSeeds) {
        const auto& art = sh.ft(seed);
        // latest checkpoint still below the ASR ceiling gives the widest gap
        std::optional<std::pair<double, double>> best;  // asr, ter
        std::vector<std::string> candidates = art.probes;
        std::reverse(candidates.begin(), candidates.end());
        for (const auto& ck : candidates) {
            const auto params = load_checkpoint<float>(ck, acceptance_model());
            const auto es = doc_evalset(params, sh.train_docs, 200, MaskMode::random_subset,
                                        greedy(), derive_seed(seed, "c6-random"));
            const double a = asr(es);
            if (a >= 0.2) continue;
            best = {a, ter(es)};
            break;
        }
        if (!best) {
            detail += strcat_all(detail.empty() ? "" : "; ", "seed ", seed,
                                 ": every checkpoint has random ASR >= 0.2");
            continue;
        }
        const double gap = best->second - best->first;
        const bool pass = gap >= 0.30;
        ok += pass;
        detail += strcat_all(detail.empty() ? "" : "; ", "seed ", seed, ": TER ",
                             pct(best->second), " - ASR ", pct(best->first), " = ", pct(gap));
        sh.note(strcat_all("criterion 6 seed ", seed, (pass ? " pass" : " fail")));
    }
    r.seconds = elapsed(t0);
    r.passed = ok >= 2;
    r.detail = strcat_all(quorum(ok, kSeeds.size()), " (need 2): ", detail);
    return r;
}

inline CriterionResult criterion_targeted_amplification(Shared& sh) {
    const auto t0 = clock::now();
    CriterionResult r{7, "targeted-amplification", false, "", 0.0};
    int ok = 0;
    bool monotone = true;
    std::string detail;
    for (uint64_t seed : kSeeds) {
        const auto& art = sh.ft(seed);
        const auto base = init_model<float>(acceptance_model(), derive_seed(seed, "model"));
        const auto tuned = load_checkpoint<float>(art.ft_final, acceptance_model());
        auto eval = [&](const ModelParams<float>& p, const char* tag) {
            return doc_evalset(p, sh.train_docs, 200, MaskMode::targeted, greedy(),
                               derive_seed(seed, tag));
        };
        const auto es_base = eval(base, "c7-base");
        const auto es_ft = eval(tuned, "c7-ft");
        const double r0_base = recall_k(es_base, 0), r0_ft = recall_k(es_ft, 0);
        for (const auto* es : {&es_base, &es_ft}) {
            const double r0 = recall_k(*es, 0), r1 = recall_k(*es, 1), r2 = recall_k(*es, 2);
            monotone = monotone && r2 >= r1 && r1 >= r0;
        }
        const bool pass = r0_ft - r0_base >= 0.20;
        ok += pass;
        detail += strcat_all(detail.empty() ? "" : "; ", "seed ", seed, ": recall_0 ",
                             pct(r0_base), " -> ", pct(r0_ft));
        sh.note(strcat_all("criterion 7 seed ", seed, (pass ? " pass" : " fail")));
    }
    r.seconds = elapsed(t0);
    r.passed = ok == static_cast<int>(kSeeds.size()) && monotone;
    r.detail = strcat_all(ok, "/", kSeeds.size(), " seeds gained >= 0.20 (need all); ",
                          monotone ? "recall_k monotone" : "recall_k NOT monotone", "; ",
                          detail);
    return r;
}

inline CriterionResult criterion_decoding_sweeps(Shared& sh) {
    const auto t0 = clock::now();
    CriterionResult r{8, "decoding-sweeps", false, "", 0.0};
    // evaluated on a fixed subset for runtime; directional claims only
    const size_t subset = 100;
    int ok_steps = 0, ok_strategy = 0, ok_tau = 0;
    std::string detail;
    for (uint64_t seed : kSeeds) {
        const auto& art = sh.ft(seed);
        const auto params = load_checkpoint<float>(art.ft_final, acceptance_model());
        auto run = [&](int64_t steps, RemaskStrategy strat, double tau, const char* tag) {
            DecodeConfig dc;
            dc.steps = steps;
            dc.strategy = strat;
            dc.temperature = tau;
            return pii_recall(doc_evalset(params, sh.train_docs, subset, MaskMode::edge, dc,
                                          derive_seed(seed, tag)));
        };
        const double r_t32 = run(32, RemaskStrategy::low_confidence, 0.0, "c8-t32");
        const double r_t4 = run(4, RemaskStrategy::low_confidence, 0.0, "c8-t4");
        const double r_conf = run(8, RemaskStrategy::low_confidence, 0.0, "c8-conf");
        const double r_rand = run(8, RemaskStrategy::random_remask, 0.0, "c8-rand");
        const double r_tau0 = r_t32;
        const double r_tau15 = run(32, RemaskStrategy::low_confidence, 1.5, "c8-tau15");
        ok_steps += r_t32 >= r_t4;
        ok_strategy += r_conf >= r_rand;
        ok_tau += r_tau0 >= r_tau15;
        detail += strcat_all(detail.empty() ? "" : "; ", "seed ", seed, ": T32 ", pct(r_t32),
                             "/T4 ", pct(r_t4), ", conf ", pct(r_conf), "/rand ", pct(r_rand),
                             ", tau0 ", pct(r_tau0), "/tau1.5 ", pct(r_tau15));
        sh.note(strcat_all("criterion 8 seed ", seed));
    }
    r.seconds = elapsed(t0);
    r.passed = ok_steps >= 2 && ok_strategy >= 2 && ok_tau >= 2;
    r.detail = strcat_all("steps ", quorum(ok_steps, kSeeds.size()), ", strategy ",
                          quorum(ok_strategy, kSeeds.size()), ", tau ",
                          quorum(ok_tau, kSeeds.size()), " (need 2 each): ", detail);
    return r;
}

inline CriterionResult criterion_sft_persistence(Shared& sh) {
    const auto t0 = clock::now();
    CriterionResult r{9, "sft-persistence", false, "", 0.0};
    bool all_positive = true;
    std::string detail;
    for (uint64_t seed : kSeeds) {
        const auto& art = sh.sft(seed);
        const auto before = load_checkpoint<float>(art.ft_final, acceptance_model());
        const auto after = load_checkpoint<float>(art.sft_final, acceptance_model());
        const double pre = recall_k(doc_evalset(before, sh.train_docs, 200, MaskMode::targeted,
                                                greedy(), derive_seed(seed, "c9-pre")),
                                    0);
        const double post = recall_k(doc_evalset(after, sh.train_docs, 200, MaskMode::targeted,
                                                 greedy(), derive_seed(seed, "c9-post")),
                                     0);
        all_positive = all_positive && post > 0.0;
        detail += strcat_all(detail.empty() ? "" : "; ", "seed ", seed, ": recall_0 ",
                             pct(pre), " -> ", pct(post), " (ratio ",
                             pre > 0.0 ? pct(post / pre) : "undefined", ")");
        sh.note(strcat_all("criterion 9 seed ", seed, (post > 0.0 ? " pass" : " fail")));
    }
    r.seconds = elapsed(t0);
    r.passed = all_positive;
    r.detail = strcat_all(all_positive ? "post-SFT recall_0 > 0 in every seed"
                                       : "post-SFT recall_0 hit zero",
                          "; ", detail);
    return r;
}

inline CriterionResult criterion_chat_duality(Shared& sh) {
    const auto t0 = clock::now();
    CriterionResult r{10, "chat-duality", false, "", 0.0};
    int ok = 0;
    bool both_positive = true;
    std::string detail;
    for (uint64_t seed : kSeeds) {
        const auto& art = sh.sft(seed);
        const auto params = load_checkpoint<float>(art.sft_final, acceptance_model());
        auto chat_eval = [&](MaskMode mode, const char* tag) {
            EvalSet es;
            for (size_t i = 0; i < sh.chats.size(); ++i) {
                EvalSample e;
                e.snippet = sh.chats[i].templated;
                e.mask = chat_mask(sh.chats[i], mode);
                DecodeConfig dc = greedy();
                dc.seed = derive_seed(seed, tag, static_cast<uint64_t>(i));
                e.output = infill(params, e.snippet, e.mask, dc).first;
                es.samples.push_back(std::move(e));
            }
            return asr(es);
        };
        const double from_prompt = chat_eval(MaskMode::prompt_cond, "c10-p");
        const double from_response = chat_eval(MaskMode::response_cond, "c10-r");
        both_positive = both_positive && from_prompt > 0.0 && from_response > 0.0;
        ok += from_prompt >= from_response;
        detail += strcat_all(detail.empty() ? "" : "; ", "seed ", seed, ": prompt-cond ",
                             pct(from_prompt), ", response-cond ", pct(from_response));
        sh.note(strcat_all("criterion 10 seed ", seed));
    }
    r.seconds = elapsed(t0);
    r.passed = both_positive && ok >= 2;
    r.detail = strcat_all(both_positive ? "both directions > 0" : "a direction hit zero",
                          ", prompt >= response in ", quorum(ok, kSeeds.size()),
                          " (need 2): ", detail);
    return r;
}

// ----------------------------- criterion 11 -----------------------------

inline CriterionResult criterion_determinism(const AcceptanceOptions& opt) {
    const auto t0 = clock::now();
    CriterionResult r{11, "full-determinism", false, "", 0.0};
    const std::string out = opt.work_dir + "/determinism";
    std::filesystem::remove_all(out);
    const std::string toml = strcat_all(R"(
[corpus]
doc_count = 6
doc_len_min = 64
doc_len_max = 64
plant_lo = 32
plant_hi = 48
seed = 11

[model]
layers = 1
dim = 16
heads = 2
ffn = 32
max_seq = 96

[[train]]
pipeline = "ft"
epochs = 2
batch_size = 3
checkpoint_every = 1
eval_every = 1

[[attack]]
mask_mode = "edge"
budget = 32

[[attack]]
name = "spans"
mask_mode = "targeted"
steps = 4

[run]
seeds = [1, 2]
output_dir = ")",
                                        out, "\"\n");
    const auto cfg = experiment_from_json(parse_config_text(toml, "acceptance.toml"));
    const auto first = run_experiment(cfg);
    std::map<std::string, std::string> bytes;
    for (const auto& c : first.cells) bytes[c.report_path] = read_file(c.report_path);
    const std::string summary = read_file(first.run_dir + "/summary.csv");
    std::filesystem::remove_all(first.run_dir);
    const auto second = run_experiment(cfg);
    int mismatches = 0;
    for (const auto& c : second.cells)
        mismatches += read_file(c.report_path) != bytes.at(c.report_path);
    mismatches += read_file(second.run_dir + "/summary.csv") != summary;
    r.seconds = elapsed(t0);
    r.passed = mismatches == 0 && !bytes.empty();
    r.detail = strcat_all(bytes.size(), " reports + summary rerun: ",
                          mismatches == 0 ? "byte-identical" : "MISMATCH");
    return r;
}

}  // namespace detail_acceptance

inline std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opt) {
    using namespace detail_acceptance;
    auto wanted = [&opt](int id) {
        return opt.only.empty() ||
               std::find(opt.only.begin(), opt.only.end(), id) != opt.only.end();
    };
    std::vector<CriterionResult> out;
    auto add = [&out, &opt](CriterionResult r) {
        if (opt.progress) print_criterion(r, *opt.progress);
        out.push_back(std::move(r));
    };

    if (wanted(1)) add(criterion_gradients());
    if (wanted(2)) add(criterion_metric_oracle());
    if (wanted(3)) add(criterion_decoder_contracts());

    const bool heavy = wanted(4) || wanted(5) || wanted(6) || wanted(7) || wanted(8) ||
                       wanted(9) || wanted(10);
    if (heavy) {
        Shared sh(opt);
        if (wanted(4)) add(criterion_memorization(sh));
        if (wanted(5)) add(criterion_mask_geometry(sh));
        if (wanted(6)) add(criterion_ter_asr_gap(sh));
        if (wanted(7)) add(criterion_targeted_amplification(sh));
        if (wanted(8)) add(criterion_decoding_sweeps(sh));
        if (wanted(9)) add(criterion_sft_persistence(sh));
        if (wanted(10)) add(criterion_chat_duality(sh));
    }
    if (wanted(11)) add(criterion_determinism(opt));
    return out;
}

}  // namespace dlmlab
