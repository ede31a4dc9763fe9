#pragma once

// Experiment orchestration: end-to-end runs (generate → train → attack →
// report), decoding-parameter sweeps, chained training stages, seed
// replication, and report comparison.
//
// Run tree: <output_dir>/<digest>/
//   config.toml    canonical rendering of the config the digest covers
//   manifest.json  completed stages and attack cells, updated as they finish
//   checkpoints/seed<S>/stage<I>/{checkpoints/,logs/}
//   reports/<cell>_seed<S>.json
//   traces/<cell>_seed<S>/doc_<D>.jsonl   (cells that request per_step)
//   summary.csv    one row per (cell, seed, metric)
//
// Everything under the tree is byte-deterministic for a fixed config except
// the logs/ directories, whose CSVs carry wall-clock columns; they are the
// timing sidecar and are excluded from byte-level comparisons.
//
// Derived seeds (documented contract): model init uses (seed, "model"); stage
// i uses (seed, "stage", i); attack cells use (seed, cell name), from which
// masks draw (cell_seed, "mask", doc) and decoding draws (cell_seed,
// "decode", doc). The hash is the fixed splitmix64 fold in common.hpp.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dlmlab/checkpoint.hpp"
#include "dlmlab/common.hpp"
#include "dlmlab/config.hpp"
#include "dlmlab/corpus.hpp"
#include "dlmlab/decode.hpp"
#include "dlmlab/masking.hpp"
#include "dlmlab/metrics.hpp"
#include "dlmlab/model.hpp"
#include "dlmlab/train.hpp"
#include "dlmlab/vocab.hpp"

#include "json.hpp"

namespace dlmlab {

// ----------------------------- config schema -----------------------------

struct AttackSpec {
    std::string name;                  // cell label; defaults to the mask mode
    MaskMode mode = MaskMode::edge;
    int64_t budget = 0;                // revealed tokens k (budget modes only)
    DecodeConfig decode;               // seed field is ignored (derived per cell)
    std::string snippets = "train";    // "train" | "heldout"
    std::string checkpoint = "final";  // "init" | "[stageN:](final|epoch_NNNN)"
    std::vector<std::string> metrics;  // empty = mode-dependent default
};

struct ExperimentConfig {
    CorpusSpec corpus;
    bool has_chat = false;
    ChatSpec chat;
    ModelConfig model;
    std::vector<TrainConfig> stages;
    std::vector<AttackSpec> attacks;
    std::vector<uint64_t> seeds;
    std::string output_dir = "runs";
    nlohmann::json canonical;  // the parsed config; its dump defines the digest
};

namespace detail_harness {

inline void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                       const char* where) {
    for (const auto& [k, v] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        config_require(ok, "config: unknown key '", k, "' in ", where);
    }
}

template <class T>
T get_field(const nlohmann::json& obj, const char* key, T fallback, const char* where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        config_fail("config: key '", key, "' in ", where, " has the wrong type: ",
                    obj.at(key).dump());
    }
}

inline CorpusSpec corpus_from_json(const nlohmann::json& o) {
    check_keys(o, {"doc_count", "doc_len_min", "doc_len_max", "email_rate", "phone_rate",
                   "plant_lo", "plant_hi", "seed"},
               "[corpus]");
    CorpusSpec s;
    s.doc_count = get_field<int64_t>(o, "doc_count", s.doc_count, "[corpus]");
    s.doc_len_min = get_field<int64_t>(o, "doc_len_min", s.doc_len_min, "[corpus]");
    s.doc_len_max = get_field<int64_t>(o, "doc_len_max", s.doc_len_max, "[corpus]");
    s.email_rate = get_field<double>(o, "email_rate", s.email_rate, "[corpus]");
    s.phone_rate = get_field<double>(o, "phone_rate", s.phone_rate, "[corpus]");
    s.plant_lo = get_field<int64_t>(o, "plant_lo", s.plant_lo, "[corpus]");
    s.plant_hi = get_field<int64_t>(o, "plant_hi", s.plant_hi, "[corpus]");
    s.seed = get_field<uint64_t>(o, "seed", s.seed, "[corpus]");
    return s;
}

inline ChatSpec chat_from_json(const nlohmann::json& o) {
    check_keys(o, {"pair_count", "max_prompt_len", "max_response_len", "email_rate", "seed"},
               "[chat]");
    ChatSpec s;
    s.pair_count = get_field<int64_t>(o, "pair_count", s.pair_count, "[chat]");
    s.max_prompt_len = get_field<int64_t>(o, "max_prompt_len", s.max_prompt_len, "[chat]");
    s.max_response_len =
        get_field<int64_t>(o, "max_response_len", s.max_response_len, "[chat]");
    s.email_rate = get_field<double>(o, "email_rate", s.email_rate, "[chat]");
    s.seed = get_field<uint64_t>(o, "seed", s.seed, "[chat]");
    return s;
}

inline ModelConfig model_from_json(const nlohmann::json& o) {
    check_keys(o, {"layers", "dim", "heads", "ffn", "max_seq", "attention_mode"}, "[model]");
    ModelConfig m;
    m.layers = get_field<int64_t>(o, "layers", m.layers, "[model]");
    m.dim = get_field<int64_t>(o, "dim", m.dim, "[model]");
    m.heads = get_field<int64_t>(o, "heads", m.heads, "[model]");
    m.ffn = get_field<int64_t>(o, "ffn", m.ffn, "[model]");
    m.max_seq = get_field<int64_t>(o, "max_seq", m.max_seq, "[model]");
    if (o.contains("attention_mode")) {
        try {
            m.attention_mode = parse_attention_mode(o.at("attention_mode").get<std::string>());
        } catch (const error& e) {
            config_fail("config: [model] ", e.what());
        }
    }
    return m;
}

inline TrainConfig train_from_json(const nlohmann::json& o, size_t index) {
    const std::string where = strcat_all("[[train]] stage ", index + 1);
    check_keys(o, {"pipeline", "epochs", "batch_size", "schedule", "lr", "warmup_frac",
                   "weight_decay", "eval_every", "checkpoint_every", "lora_rank", "lora_alpha"},
               where.c_str());
    TrainConfig t;
    try {
        if (o.contains("pipeline"))
            t.pipeline = parse_pipeline(o.at("pipeline").get<std::string>());
        if (o.contains("schedule"))
            t.schedule = parse_lr_schedule(o.at("schedule").get<std::string>());
    } catch (const error& e) {
        config_fail("config: ", where, ": ", e.what());
    }
    t.epochs = get_field<int64_t>(o, "epochs", t.epochs, where.c_str());
    t.batch_size = get_field<int64_t>(o, "batch_size", t.batch_size, where.c_str());
    t.lr = get_field<double>(o, "lr", t.lr, where.c_str());
    t.warmup_frac = get_field<double>(o, "warmup_frac", t.warmup_frac, where.c_str());
    t.weight_decay = get_field<double>(o, "weight_decay", t.weight_decay, where.c_str());
    t.eval_every = get_field<int64_t>(o, "eval_every", t.eval_every, where.c_str());
    t.checkpoint_every =
        get_field<int64_t>(o, "checkpoint_every", t.checkpoint_every, where.c_str());
    t.lora_rank = get_field<int64_t>(o, "lora_rank", t.lora_rank, where.c_str());
    t.lora_alpha = get_field<double>(o, "lora_alpha", t.lora_alpha, where.c_str());
    return t;
}

inline const std::set<std::string>& known_metrics() {
    static const std::set<std::string> v{"asr", "ter", "recall", "precision", "recall_k",
                                         "per_step"};
    return v;
}

inline AttackSpec attack_from_json(const nlohmann::json& o, size_t index) {
    const std::string where = strcat_all("[[attack]] ", index + 1);
    check_keys(o, {"name", "mask_mode", "budget", "steps", "block_size", "temperature",
                   "strategy", "snippets", "checkpoint", "metrics"},
               where.c_str());
    AttackSpec a;
    try {
        if (o.contains("mask_mode"))
            a.mode = parse_mask_mode(o.at("mask_mode").get<std::string>());
        if (o.contains("strategy"))
            a.decode.strategy = parse_remask_strategy(o.at("strategy").get<std::string>());
    } catch (const error& e) {
        config_fail("config: ", where, ": ", e.what());
    }
    a.name = get_field<std::string>(o, "name", mask_mode_name(a.mode), where.c_str());
    a.budget = get_field<int64_t>(o, "budget", a.budget, where.c_str());
    a.decode.steps = get_field<int64_t>(o, "steps", a.decode.steps, where.c_str());
    a.decode.block_size = get_field<int64_t>(o, "block_size", a.decode.block_size, where.c_str());
    a.decode.temperature =
        get_field<double>(o, "temperature", a.decode.temperature, where.c_str());
    a.snippets = get_field<std::string>(o, "snippets", a.snippets, where.c_str());
    a.checkpoint = get_field<std::string>(o, "checkpoint", a.checkpoint, where.c_str());
    a.metrics = get_field<std::vector<std::string>>(o, "metrics", {}, where.c_str());
    config_require(a.snippets == "train" || a.snippets == "heldout", "config: ", where,
                   ": snippets must be \"train\" or \"heldout\", got \"", a.snippets, "\"");
    for (const auto& m : a.metrics)
        config_require(known_metrics().count(m), "config: ", where, ": unknown metric \"", m,
                       "\"");
    if (is_budget_mode(a.mode))
        config_require(a.budget > 0, "config: ", where, ": mask mode ", mask_mode_name(a.mode),
                       " needs a positive revealed budget");
    try {
        a.decode.validate();
    } catch (const error& e) {
        config_fail("config: ", where, ": ", e.what());
    }
    return a;
}

// checkpoint reference: "init" or "[stageN:](final|last_good|epoch_NNNN)"
struct CheckpointRef {
    bool init = false;
    size_t stage = 0;  // 0-based; defaults to the last stage
    std::string file;  // without .bin
};

inline CheckpointRef parse_checkpoint_ref(const std::string& ref, size_t stage_count) {
    CheckpointRef r;
    if (ref == "init") {
        r.init = true;
        return r;
    }
    config_require(stage_count > 0, "config: attack references checkpoint \"", ref,
                   "\" but no train stages are configured (only \"init\" is available)");
    std::string rest = ref;
    r.stage = stage_count - 1;
    if (rest.rfind("stage", 0) == 0) {
        const size_t colon = rest.find(':');
        config_require(colon != std::string::npos, "config: malformed checkpoint \"", ref,
                       "\" (expected stageN:name)");
        const std::string num = rest.substr(5, colon - 5);
        config_require(!num.empty() && num.find_first_not_of("0123456789") == std::string::npos,
                       "config: malformed stage number in checkpoint \"", ref, "\"");
        const size_t stage = static_cast<size_t>(std::stoull(num));
        config_require(stage >= 1 && stage <= stage_count, "config: checkpoint \"", ref,
                       "\" references stage ", stage, " of ", stage_count);
        r.stage = stage - 1;
        rest = rest.substr(colon + 1);
    }
    const bool epoch = rest.rfind("epoch_", 0) == 0 && rest.size() == 10 &&
                       rest.find_first_not_of("0123456789", 6) == std::string::npos;
    config_require(rest == "final" || rest == "last_good" || epoch,
                   "config: malformed checkpoint \"", ref,
                   "\" (want init, final, last_good, or epoch_NNNN)");
    r.file = rest;
    return r;
}

}  // namespace detail_harness

// section parsers, exposed for tools that read a single table
inline CorpusSpec corpus_spec_from_json(const nlohmann::json& o) {
    return detail_harness::corpus_from_json(o);
}
inline ChatSpec chat_spec_from_json(const nlohmann::json& o) {
    return detail_harness::chat_from_json(o);
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& root) {
    using namespace detail_harness;
    config_require(root.is_object(), "config: root must be a table");
    check_keys(root, {"corpus", "chat", "model", "train", "attack", "run", "sweep"}, "config");
    config_require(root.contains("corpus"), "config: missing [corpus] section");
    config_require(root.contains("run"), "config: missing [run] section");
    ExperimentConfig c;
    c.canonical = root;
    c.corpus = corpus_from_json(root.at("corpus"));
    if (root.contains("chat")) {
        c.has_chat = true;
        c.chat = chat_from_json(root.at("chat"));
    }
    if (root.contains("model")) c.model = model_from_json(root.at("model"));
    if (root.contains("train")) {
        config_require(root.at("train").is_array(), "config: [[train]] must be an array");
        for (size_t i = 0; i < root.at("train").size(); ++i)
            c.stages.push_back(train_from_json(root.at("train")[i], i));
    }
    if (root.contains("attack")) {
        config_require(root.at("attack").is_array(), "config: [[attack]] must be an array");
        for (size_t i = 0; i < root.at("attack").size(); ++i)
            c.attacks.push_back(attack_from_json(root.at("attack")[i], i));
    }
    const auto& run = root.at("run");
    check_keys(run, {"seeds", "output_dir"}, "[run]");
    c.seeds = get_field<std::vector<uint64_t>>(run, "seeds", {}, "[run]");
    c.output_dir = get_field<std::string>(run, "output_dir", c.output_dir, "[run]");
    config_require(!c.seeds.empty(), "config: [run] seeds must be nonempty");

    // structural validation
    try {
        c.model.validate();
        for (const auto& t : c.stages) t.validate();
    } catch (const error& e) {
        config_fail("config: ", e.what());
    }
    const bool causal = c.model.attention_mode == AttentionMode::causal;
    for (const auto& t : c.stages) {
        config_require((t.pipeline == Pipeline::arm) == causal,
                       "config: pipeline ", pipeline_name(t.pipeline), " requires a ",
                       t.pipeline == Pipeline::arm ? "causal" : "bidirectional", " model");
        if (t.pipeline == Pipeline::sft)
            config_require(c.has_chat, "config: an sft stage needs a [chat] section");
    }
    std::set<std::string> names;
    for (const auto& a : c.attacks) {
        config_require(names.insert(a.name).second, "config: duplicate attack cell name \"",
                       a.name, "\"");
        parse_checkpoint_ref(a.checkpoint, c.stages.size());
        if (a.mode == MaskMode::prompt_cond || a.mode == MaskMode::response_cond)
            config_require(c.has_chat, "config: attack \"", a.name, "\" needs a [chat] section");
        if (causal) {
            config_require(a.mode == MaskMode::prefix || a.mode == MaskMode::dynamic_prefix,
                           "config: attack \"", a.name,
                           "\" uses an infilling mask; a causal model only supports prefix "
                           "or dynamic_prefix");
            for (const auto& m : a.metrics)
                config_require(m != "per_step", "config: attack \"", a.name,
                               "\": per_step needs decode traces, which causal generation "
                               "does not produce");
        }
    }
    return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
    return experiment_from_json(load_config_file(path));
}

// ----------------------------- run artifacts -----------------------------

struct CellOutcome {
    std::string cell;
    uint64_t seed = 0;
    MetricsReport report;
    std::string report_path;
};

struct ExperimentResult {
    std::string run_dir;
    std::string digest;
    std::vector<CellOutcome> cells;
    bool any_stage_diverged = false;
};

namespace detail_harness {

inline std::vector<TokenSeq> doc_rows(const Corpus& c) {
    std::vector<TokenSeq> rows;
    rows.reserve(c.docs.size());
    for (const auto& d : c.docs) rows.push_back(d.tokens);
    return rows;
}

inline std::vector<TokenSeq> arm_doc_rows(const Corpus& c) {
    std::vector<TokenSeq> rows;
    rows.reserve(c.docs.size());
    for (const auto& d : c.docs) rows.push_back(arm_row(d.tokens));
    return rows;
}

inline std::vector<TokenSeq> chat_rows(const std::vector<ChatRecord>& chats) {
    std::vector<TokenSeq> rows;
    rows.reserve(chats.size());
    for (const auto& r : chats) rows.push_back(r.templated);
    return rows;
}

inline std::vector<std::string> default_metrics(const AttackSpec& a) {
    if (a.mode == MaskMode::targeted) return {"ter", "recall_k", "per_step"};
    if (a.mode == MaskMode::prompt_cond || a.mode == MaskMode::response_cond)
        return {"asr", "ter"};
    return {"asr", "ter", "recall", "precision"};
}

inline bool wants(const std::vector<std::string>& metrics, const char* name) {
    return std::find(metrics.begin(), metrics.end(), name) != metrics.end();
}

// stage directory under the run tree
inline std::string stage_dir(const std::string& run_dir, uint64_t seed, size_t stage) {
    return strcat_all(run_dir, "/checkpoints/seed", seed, "/stage", stage + 1);
}

template <class Real>
std::pair<ModelParams<Real>, std::string> resolve_checkpoint(const ExperimentConfig& cfg,
                                                             const std::string& run_dir,
                                                             uint64_t seed,
                                                             const std::string& ref) {
    const auto r = parse_checkpoint_ref(ref, cfg.stages.size());
    if (r.init)
        return {init_model<Real>(cfg.model, derive_seed(seed, "model")), std::string("init")};
    const std::string path =
        strcat_all(stage_dir(run_dir, seed, r.stage), "/checkpoints/", r.file, ".bin");
    require(std::filesystem::exists(path), "attack: checkpoint ", path,
            " does not exist (was the stage trained with checkpoint_every set?)");
    return {load_checkpoint<Real>(path, cfg.model),
            strcat_all("stage", r.stage + 1, ":", r.file)};
}

// left-to-right generation for causal cells; outputs are padded with PAD to
// snippet length when generation stops early at EOS
template <class Real>
EvalSample causal_sample(const ModelParams<Real>& params, const Document& doc,
                         const AttackSpec& a, uint64_t cell_seed, int64_t doc_idx) {
    const int64_t n = static_cast<int64_t>(doc.tokens.size());
    int64_t reveal = 0;
    if (a.mode == MaskMode::prefix) {
        reveal = a.budget;
        require(reveal > 0 && reveal < n, "attack ", a.name, ": budget ", reveal,
                " outside (0,", n, ")");
    } else {
        // dynamic prefix: reveal everything before the first entity span
        require(!doc.spans.empty(), "attack ", a.name, ": document ", doc_idx,
                " has no entity spans to condition a dynamic prefix on");
        reveal = doc.spans.front().start;
        for (const auto& sp : doc.spans) reveal = std::min(reveal, sp.start);
        require(reveal > 0, "attack ", a.name, ": document ", doc_idx,
                " starts with an entity; no prefix to condition on");
    }
    TokenSeq prefix;
    prefix.reserve(static_cast<size_t>(reveal) + 1);
    prefix.push_back(BOS_ID);
    prefix.insert(prefix.end(), doc.tokens.begin(), doc.tokens.begin() + reveal);
    Rng rng(derive_seed(cell_seed, "decode", static_cast<uint64_t>(doc_idx)));
    const TokenSeq gen =
        arm_generate(params, prefix, n - reveal, a.decode.temperature, rng);
    EvalSample e;
    e.snippet = doc.tokens;
    e.mask.assign(static_cast<size_t>(n), 0);
    for (int64_t i = reveal; i < n; ++i) e.mask[static_cast<size_t>(i)] = 1;
    e.output.assign(doc.tokens.begin(), doc.tokens.begin() + reveal);
    e.output.insert(e.output.end(), gen.begin() + static_cast<int64_t>(prefix.size()),
                    gen.end());
    e.output.resize(static_cast<size_t>(n), PAD_ID);
    return e;
}

template <class Real>
EvalSet build_evalset(const ExperimentConfig& cfg, const AttackSpec& a,
                      const ModelParams<Real>& params, const Corpus& docs_src,
                      const std::vector<ChatRecord>& chats_src, uint64_t cell_seed,
                      bool keep_traces) {
    EvalSet es;
    if (a.mode == MaskMode::prompt_cond || a.mode == MaskMode::response_cond) {
        for (size_t i = 0; i < chats_src.size(); ++i) {
            const auto& chat = chats_src[i];
            EvalSample e;
            e.snippet = chat.templated;
            e.mask = chat_mask(chat, a.mode);
            DecodeConfig dc = a.decode;
            dc.seed = derive_seed(cell_seed, "decode", static_cast<uint64_t>(i));
            auto [out, trace] = infill(params, e.snippet, e.mask, dc);
            e.output = std::move(out);
            if (keep_traces) e.trace = std::move(trace);
            es.samples.push_back(std::move(e));
        }
        return es;
    }
    for (size_t i = 0; i < docs_src.docs.size(); ++i) {
        const auto& doc = docs_src.docs[i];
        if (params.config.attention_mode == AttentionMode::causal) {
            es.samples.push_back(
                causal_sample(params, doc, a, cell_seed, static_cast<int64_t>(i)));
            continue;
        }
        const int64_t n = static_cast<int64_t>(doc.tokens.size());
        EvalSample e;
        e.snippet = doc.tokens;
        if (is_budget_mode(a.mode)) {
            e.mask = make_mask(
                {a.mode, n, a.budget, derive_seed(cell_seed, "mask", static_cast<uint64_t>(i))});
        } else {
            Snippet s;
            s.tokens = doc.tokens;
            s.pii_spans = doc.spans;
            s.source_doc = static_cast<int64_t>(i);
            e.mask = a.mode == MaskMode::targeted ? targeted_mask(s) : dynamic_prefix_mask(s);
            if (a.mode == MaskMode::targeted) {
                for (const auto& sp : doc.spans)
                    e.spans.push_back(TargetSpan{sp.start, sp.end});
            }
        }
        DecodeConfig dc = a.decode;
        dc.seed = derive_seed(cell_seed, "decode", static_cast<uint64_t>(i));
        auto [out, trace] = infill(params, e.snippet, e.mask, dc);
        e.output = std::move(out);
        if (keep_traces) e.trace = std::move(trace);
        es.samples.push_back(std::move(e));
    }
    return es;
}

inline void write_manifest(const std::string& run_dir, const nlohmann::json& manifest) {
    write_file(run_dir + "/manifest.json", manifest.dump(2) + "\n");
}

inline void append_summary_rows(std::string& csv, const CellOutcome& c) {
    auto row = [&csv, &c](const std::string& metric, const std::string& value) {
        csv += strcat_all(c.cell, ",", c.seed, ",", metric, ",", value, "\n");
    };
    const auto& r = c.report;
    if (r.asr) row("asr", fmt_float(*r.asr));
    if (r.ter) row("ter", fmt_float(*r.ter));
    if (r.recall) row("recall", fmt_float(*r.recall));
    if (!r.precision_defined)
        row("precision", "");
    else if (r.precision)
        row("precision", fmt_float(*r.precision));
    for (const auto& [k, v] : r.recall_k) row(strcat_all("recall_", k), fmt_float(v));
}

}  // namespace detail_harness

// ----------------------------- run -----------------------------

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    using namespace detail_harness;
    ExperimentResult res;
    res.digest = config_digest_hex(cfg.canonical);
    res.run_dir = cfg.output_dir + "/" + res.digest;
    fs::create_directories(res.run_dir + "/reports");
    write_file(res.run_dir + "/config.toml", emit_canonical_toml(cfg.canonical));

    nlohmann::json manifest = {{"digest", res.digest},
                               {"stages", nlohmann::json::array()},
                               {"cells", nlohmann::json::array()}};
    write_manifest(res.run_dir, manifest);

    // corpora: held-out twins use a derived seed, same distribution
    const Corpus train_docs = gen_corpus(cfg.corpus);
    CorpusSpec held_spec = cfg.corpus;
    held_spec.seed = derive_seed(cfg.corpus.seed, "heldout");
    const Corpus held_docs = gen_corpus(held_spec);
    std::vector<ChatRecord> train_chats, held_chats;
    if (cfg.has_chat) {
        train_chats = gen_chat_corpus(cfg.chat);
        ChatSpec held_chat = cfg.chat;
        held_chat.seed = derive_seed(cfg.chat.seed, "heldout");
        held_chats = gen_chat_corpus(held_chat);
    }

    // training stages, chained per seed
    for (uint64_t seed : cfg.seeds) {
        ModelParams<float> params = init_model<float>(cfg.model, derive_seed(seed, "model"));
        for (size_t i = 0; i < cfg.stages.size(); ++i) {
            TrainConfig tc = cfg.stages[i];
            tc.seed = derive_seed(seed, "stage", static_cast<uint64_t>(i));
            const std::string sdir = stage_dir(res.run_dir, seed, i);
            std::vector<TokenSeq> rows, eval_rows;
            switch (tc.pipeline) {
                case Pipeline::sft:
                    rows = chat_rows(train_chats);
                    eval_rows = chat_rows(held_chats);
                    break;
                case Pipeline::arm:
                    rows = arm_doc_rows(train_docs);
                    eval_rows = arm_doc_rows(held_docs);
                    break;
                default:
                    rows = doc_rows(train_docs);
                    eval_rows = doc_rows(held_docs);
            }
            const TrainResult tr = train_run(params, tc, rows, eval_rows, sdir);
            res.any_stage_diverged = res.any_stage_diverged || tr.aborted_nan;
            manifest["stages"].push_back({{"seed", seed},
                                          {"stage", i + 1},
                                          {"pipeline", pipeline_name(tc.pipeline)},
                                          {"final_checkpoint", tr.final_checkpoint},
                                          {"diverged", tr.aborted_nan}});
            write_manifest(res.run_dir, manifest);
            params = load_checkpoint<float>(tr.final_checkpoint, cfg.model);
        }
    }

    // attack cells: config order × seed order, each internally deterministic
    std::string summary = "cell,seed,metric,value\n";
    for (const auto& a : cfg.attacks) {
        for (uint64_t seed : cfg.seeds) {
            const uint64_t cell_seed = derive_seed(seed, a.name);
            auto [params, ckpt_id] =
                resolve_checkpoint<float>(cfg, res.run_dir, seed, a.checkpoint);
            const auto metrics = a.metrics.empty() ? default_metrics(a) : a.metrics;
            const bool want_steps = wants(metrics, "per_step");
            const Corpus& dsrc = a.snippets == "train" ? train_docs : held_docs;
            const auto& csrc = a.snippets == "train" ? train_chats : held_chats;
            EvalSet es = build_evalset(cfg, a, params, dsrc, csrc, cell_seed, want_steps);
            es.validate();

            CellOutcome cell;
            cell.cell = a.name;
            cell.seed = seed;
            MetricsReport& rep = cell.report;
            rep.config_digest = res.digest;
            rep.checkpoint_id = ckpt_id;
            rep.mode = a.name;
            rep.seed = seed;
            rep.timestamp = "";  // wall clock lives in the logs/ sidecar
            if (wants(metrics, "asr")) rep.asr = asr(es);
            if (wants(metrics, "ter")) rep.ter = ter(es);
            if (wants(metrics, "recall")) rep.recall = pii_recall(es);
            if (wants(metrics, "precision")) {
                rep.precision = pii_precision(es);
                rep.precision_defined = rep.precision.has_value();
            }
            if (wants(metrics, "recall_k"))
                for (int64_t k = 0; k <= 2; ++k) rep.recall_k[k] = recall_k(es, k);
            if (want_steps) {
                rep.per_step = per_step_recall(es);
                const std::string tdir =
                    strcat_all(res.run_dir, "/traces/", a.name, "_seed", seed);
                fs::create_directories(tdir);
                for (size_t i = 0; i < es.samples.size(); ++i)
                    write_trace_jsonl(*es.samples[i].trace,
                                      strcat_all(tdir, "/doc_", i, ".jsonl"));
            }
            cell.report_path =
                strcat_all(res.run_dir, "/reports/", a.name, "_seed", seed, ".json");
            write_file(cell.report_path, rep.to_json().dump(2) + "\n");
            manifest["cells"].push_back(
                {{"cell", a.name}, {"seed", seed}, {"report", cell.report_path}});
            write_manifest(res.run_dir, manifest);
            detail_harness::append_summary_rows(summary, cell);
            res.cells.push_back(std::move(cell));
        }
    }
    write_file(res.run_dir + "/summary.csv", summary);
    return res;
}

// rebuild summary.csv content from the report files on disk (oracle hook and
// the `report` subcommand)
inline std::string summary_from_reports(const std::string& run_dir) {
    namespace fs = std::filesystem;
    require(fs::exists(run_dir + "/reports"), "no reports directory under ", run_dir);
    // order rows like run_experiment does: cells in manifest completion order
    const auto manifest = nlohmann::json::parse(read_file(run_dir + "/manifest.json"));
    std::string summary = "cell,seed,metric,value\n";
    for (const auto& c : manifest.at("cells")) {
        const std::string path = c.at("report").get<std::string>();
        CellOutcome cell;
        cell.report = MetricsReport::from_json(nlohmann::json::parse(read_file(path)));
        cell.cell = cell.report.mode;
        cell.seed = cell.report.seed;
        detail_harness::append_summary_rows(summary, cell);
    }
    return summary;
}

// ----------------------------- sweeps -----------------------------

struct SweepSpec {
    std::string param;  // "steps" | "block_size" | "temperature" | "strategy"
    std::vector<nlohmann::json> values;
};

inline SweepSpec sweep_from_json(const nlohmann::json& o) {
    detail_harness::check_keys(o, {"param", "values"}, "[sweep]");
    SweepSpec s;
    s.param = detail_harness::get_field<std::string>(o, "param", "", "[sweep]");
    config_require(s.param == "steps" || s.param == "block_size" ||
                       s.param == "temperature" || s.param == "strategy",
                   "config: [sweep] param must be steps, block_size, temperature, or "
                   "strategy, got \"",
                   s.param, "\"");
    config_require(o.contains("values") && o.at("values").is_array() &&
                       !o.at("values").empty(),
                   "config: [sweep] values must be a nonempty array");
    for (const auto& v : o.at("values")) s.values.push_back(v);
    return s;
}

struct SweepCell {
    std::string expanded;  // cell name in the expanded run
    std::string base;      // original attack name
    std::string value;     // grid value label
};

struct SweepPlan {
    ExperimentConfig config;
    std::vector<SweepCell> cells;
};

inline SweepPlan expand_sweep(const ExperimentConfig& base, const SweepSpec& spec) {
    SweepPlan plan;
    plan.config = base;
    plan.config.attacks.clear();
    for (const auto& v : spec.values) {
        std::string label = v.is_string() ? v.get<std::string>() : v.dump();
        for (const auto& a : base.attacks) {
            AttackSpec b = a;
            try {
                if (spec.param == "steps")
                    b.decode.steps = v.get<int64_t>();
                else if (spec.param == "block_size")
                    b.decode.block_size = v.get<int64_t>();
                else if (spec.param == "temperature")
                    b.decode.temperature = v.get<double>();
                else
                    b.decode.strategy = parse_remask_strategy(v.get<std::string>());
            } catch (const nlohmann::json::exception&) {
                config_fail("config: [sweep] value ", v.dump(), " has the wrong type for ",
                            spec.param);
            } catch (const error& e) {
                config_fail("config: [sweep] ", e.what());
            }
            try {
                b.decode.validate();
            } catch (const error& e) {
                config_fail("config: [sweep] value ", v.dump(), ": ", e.what());
            }
            b.name = strcat_all(a.name, "__", spec.param, "_", label);
            plan.config.attacks.push_back(b);
            plan.cells.push_back(SweepCell{b.name, a.name, label});
        }
    }
    return plan;
}

struct SweepResult {
    ExperimentResult run;
    std::string summary_path;  // sweep_summary.csv with per-seed and mean rows
};

inline SweepResult run_sweep(const ExperimentConfig& base, const SweepSpec& spec) {
    const SweepPlan plan = expand_sweep(base, spec);
    SweepResult res;
    res.run = run_experiment(plan.config);

    std::map<std::string, std::pair<std::string, std::string>> origin;  // expanded -> base,value
    for (const auto& c : plan.cells) origin[c.expanded] = {c.base, c.value};
    // per-seed rows in run order, then mean rows over seeds for each metric
    std::string csv = "cell,param,value,seed,metric,metric_value\n";
    std::map<std::string, std::pair<double, int64_t>> acc;  // key -> (sum, count)
    std::vector<std::string> mean_order;
    for (const auto& cell : res.run.cells) {
        const auto& [base_name, value] = origin.at(cell.cell);
        auto row = [&](const std::string& metric, double v) {
            csv += strcat_all(base_name, ",", spec.param, ",", value, ",", cell.seed, ",",
                              metric, ",", fmt_float(v), "\n");
            const std::string key = strcat_all(base_name, ",", spec.param, ",", value,
                                               ",mean,", metric);
            auto [it, fresh] = acc.try_emplace(key, 0.0, 0);
            if (fresh) mean_order.push_back(key);
            it->second.first += v;
            it->second.second += 1;
        };
        const auto& r = cell.report;
        if (r.asr) row("asr", *r.asr);
        if (r.ter) row("ter", *r.ter);
        if (r.recall) row("recall", *r.recall);
        if (r.precision) row("precision", *r.precision);
        for (const auto& [k, v] : r.recall_k) row(strcat_all("recall_", k), v);
    }
    for (const auto& key : mean_order) {
        const auto& [sum, count] = acc.at(key);
        csv += strcat_all(key, ",", fmt_float(sum / static_cast<double>(count)), "\n");
    }
    res.summary_path = res.run.run_dir + "/sweep_summary.csv";
    write_file(res.summary_path, csv);
    return res;
}

// ----------------------------- comparison -----------------------------

// side-by-side metric table over reports; deltas are measured against the
// first report, and a metric missing from a report stays absent, never zero
struct Comparison {
    std::vector<std::string> metrics;
    std::vector<std::string> labels;
    std::vector<std::vector<std::optional<double>>> values;  // [report][metric]

    std::optional<double> delta(size_t report, size_t metric) const {
        if (report == 0 || !values[report][metric] || !values[0][metric]) return std::nullopt;
        return *values[report][metric] - *values[0][metric];
    }

    std::string to_csv() const {
        std::string out = "metric";
        for (size_t j = 0; j < labels.size(); ++j) {
            out += "," + labels[j];
            if (j > 0) out += ",delta_" + labels[j];
        }
        out += "\n";
        for (size_t i = 0; i < metrics.size(); ++i) {
            out += metrics[i];
            for (size_t j = 0; j < labels.size(); ++j) {
                out += ",";
                if (values[j][i]) out += fmt_float(*values[j][i]);
                if (j > 0) {
                    out += ",";
                    if (auto d = delta(j, i)) out += fmt_float(*d);
                }
            }
            out += "\n";
        }
        return out;
    }
};

inline Comparison compare_reports(const std::vector<MetricsReport>& reports) {
    require(!reports.empty(), "compare: no reports given");
    Comparison cmp;
    // fixed metric order, restricted to metrics present somewhere
    std::vector<std::pair<std::string, std::function<std::optional<double>(
                                           const MetricsReport&)>>>
        fields = {
            {"asr", [](const MetricsReport& r) { return r.asr; }},
            {"ter", [](const MetricsReport& r) { return r.ter; }},
            {"recall", [](const MetricsReport& r) { return r.recall; }},
            {"precision", [](const MetricsReport& r) { return r.precision; }},
        };
    std::set<int64_t> ks;
    for (const auto& r : reports)
        for (const auto& [k, v] : r.recall_k) ks.insert(k);
    for (int64_t k : ks) {
        fields.push_back({strcat_all("recall_", k),
                          [k](const MetricsReport& r) -> std::optional<double> {
                              auto it = r.recall_k.find(k);
                              if (it == r.recall_k.end()) return std::nullopt;
                              return it->second;
                          }});
    }
    std::set<std::string> seen;
    for (size_t j = 0; j < reports.size(); ++j) {
        std::string label = strcat_all(reports[j].mode, "_seed", reports[j].seed);
        while (!seen.insert(label).second) label += "'";
        cmp.labels.push_back(label);
    }
    for (const auto& [name, get] : fields) {
        bool present = false;
        for (const auto& r : reports) present = present || get(r).has_value();
        if (!present) continue;
        cmp.metrics.push_back(name);
    }
    cmp.values.assign(reports.size(), {});
    for (size_t j = 0; j < reports.size(); ++j) {
        for (const auto& [name, get] : fields) {
            if (std::find(cmp.metrics.begin(), cmp.metrics.end(), name) == cmp.metrics.end())
                continue;
            cmp.values[j].push_back(get(reports[j]));
        }
    }
    return cmp;
}

}  // namespace dlmlab
