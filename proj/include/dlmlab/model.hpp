#pragma once

// Transformer backbone: pre-LN blocks with learned absolute positions,
// bidirectional or causal attention, untied output projection, and optional
// low-rank adapters on the attention projections.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dlmlab/common.hpp"
#include "dlmlab/rng.hpp"
#include "dlmlab/tensor.hpp"
#include "dlmlab/vocab.hpp"

namespace dlmlab {

enum class AttentionMode { bidirectional, causal };

inline const char* attention_mode_name(AttentionMode m) {
    return m == AttentionMode::bidirectional ? "bidirectional" : "causal";
}

inline AttentionMode parse_attention_mode(const std::string& s) {
    if (s == "bidirectional") return AttentionMode::bidirectional;
    if (s == "causal") return AttentionMode::causal;
    fail("unknown attention mode \"", s, "\"");
}

struct ModelConfig {
    int64_t layers = 4;
    int64_t dim = 128;
    int64_t heads = 4;
    int64_t ffn = 512;
    int64_t vocab = VOCAB_SIZE;
    int64_t max_seq = 128;
    AttentionMode attention_mode = AttentionMode::bidirectional;

    void validate() const {
        require(layers >= 1, "model config: layers must be >= 1, got ", layers);
        require(dim >= 1 && heads >= 1 && ffn >= 1 && vocab >= 1 && max_seq >= 1,
                "model config: all sizes must be positive");
        require(dim % heads == 0, "model config: dim ", dim, " not divisible by heads ", heads);
    }

    int64_t head_dim() const { return dim / heads; }

    // embedding + positions + per-layer (2 norms + 4 attention mats + ffn pair)
    // + final norm + untied output projection
    int64_t param_count() const {
        const int64_t per_layer = 2 * (2 * dim) + 4 * dim * dim + 2 * dim * ffn;
        return vocab * dim + max_seq * dim + layers * per_layer + 2 * dim + dim * vocab;
    }
};

// low-rank update on one base matrix: effective weight = W + (alpha/r) * A*B
template <class Real>
struct LoraPair {
    Tensor<Real> a;  // [rows, r]
    Tensor<Real> b;  // [r, cols]
};

template <class Real>
struct LoraState {
    int64_t rank = 0;
    double alpha = 0.0;
    // one pair per attention projection, layer-major in order wq, wk, wv, wo
    std::vector<LoraPair<Real>> pairs;
};

template <class Real>
struct ModelParams {
    struct Layer {
        Tensor<Real> ln1_g, ln1_b;
        Tensor<Real> wq, wk, wv, wo;  // [dim, dim], bias-free
        Tensor<Real> ln2_g, ln2_b;
        Tensor<Real> w1;  // [dim, ffn]
        Tensor<Real> w2;  // [ffn, dim]
    };

    ModelConfig config;
    Tensor<Real> tok_embed;  // [vocab, dim]
    Tensor<Real> pos_embed;  // [max_seq, dim]
    std::vector<Layer> layers;
    Tensor<Real> lnf_g, lnf_b;
    Tensor<Real> out_proj;  // [dim, vocab]
    std::optional<LoraState<Real>> lora;

    // every base parameter, in the fixed order used by checkpoints
    std::vector<std::pair<std::string, Tensor<Real>>> named_params() {
        std::vector<std::pair<std::string, Tensor<Real>>> v;
        v.emplace_back("tok_embed", tok_embed);
        v.emplace_back("pos_embed", pos_embed);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string p = strcat_all("layer", i, ".");
            auto& l = layers[i];
            v.emplace_back(p + "ln1_g", l.ln1_g);
            v.emplace_back(p + "ln1_b", l.ln1_b);
            v.emplace_back(p + "wq", l.wq);
            v.emplace_back(p + "wk", l.wk);
            v.emplace_back(p + "wv", l.wv);
            v.emplace_back(p + "wo", l.wo);
            v.emplace_back(p + "ln2_g", l.ln2_g);
            v.emplace_back(p + "ln2_b", l.ln2_b);
            v.emplace_back(p + "w1", l.w1);
            v.emplace_back(p + "w2", l.w2);
        }
        v.emplace_back("lnf_g", lnf_g);
        v.emplace_back("lnf_b", lnf_b);
        v.emplace_back("out_proj", out_proj);
        return v;
    }

    // adapter tensors, layer-major; empty when no adapter is attached
    std::vector<std::pair<std::string, Tensor<Real>>> named_lora_params() {
        std::vector<std::pair<std::string, Tensor<Real>>> v;
        if (!lora) return v;
        static const char* mats[4] = {"wq", "wk", "wv", "wo"};
        for (size_t i = 0; i < lora->pairs.size(); ++i) {
            const std::string p = strcat_all("layer", i / 4, ".", mats[i % 4], ".");
            v.emplace_back(p + "lora_a", lora->pairs[i].a);
            v.emplace_back(p + "lora_b", lora->pairs[i].b);
        }
        return v;
    }

    // what the optimizer should update under the current mode
    std::vector<std::pair<std::string, Tensor<Real>>> trainable_params() {
        return lora ? named_lora_params() : named_params();
    }
};

template <class Real>
ModelParams<Real> init_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, "model_init"));
    const Real s = Real(0.02);
    ModelParams<Real> p;
    p.config = config;
    p.tok_embed = Tensor<Real>::randn({config.vocab, config.dim}, rng, s, true);
    p.pos_embed = Tensor<Real>::randn({config.max_seq, config.dim}, rng, s, true);
    p.layers.resize(static_cast<size_t>(config.layers));
    for (auto& l : p.layers) {
        l.ln1_g = Tensor<Real>::from_data({config.dim}, std::vector<Real>(config.dim, Real(1)), true);
        l.ln1_b = Tensor<Real>::zeros({config.dim}, true);
        l.wq = Tensor<Real>::randn({config.dim, config.dim}, rng, s, true);
        l.wk = Tensor<Real>::randn({config.dim, config.dim}, rng, s, true);
        l.wv = Tensor<Real>::randn({config.dim, config.dim}, rng, s, true);
        l.wo = Tensor<Real>::randn({config.dim, config.dim}, rng, s, true);
        l.ln2_g = Tensor<Real>::from_data({config.dim}, std::vector<Real>(config.dim, Real(1)), true);
        l.ln2_b = Tensor<Real>::zeros({config.dim}, true);
        l.w1 = Tensor<Real>::randn({config.dim, config.ffn}, rng, s, true);
        l.w2 = Tensor<Real>::randn({config.ffn, config.dim}, rng, s, true);
    }
    p.lnf_g = Tensor<Real>::from_data({config.dim}, std::vector<Real>(config.dim, Real(1)), true);
    p.lnf_b = Tensor<Real>::zeros({config.dim}, true);
    p.out_proj = Tensor<Real>::randn({config.dim, config.vocab}, rng, s, true);
    return p;
}

// deep copy: fresh tensor nodes throughout, adapter state included
template <class Real>
ModelParams<Real> clone_params(const ModelParams<Real>& src) {
    auto deep = [](const Tensor<Real>& t) {
        return Tensor<Real>::from_data(t.shape(), t.data(), t.requires_grad());
    };
    ModelParams<Real> dst;
    dst.config = src.config;
    dst.tok_embed = deep(src.tok_embed);
    dst.pos_embed = deep(src.pos_embed);
    for (const auto& l : src.layers) {
        typename ModelParams<Real>::Layer n;
        n.ln1_g = deep(l.ln1_g);
        n.ln1_b = deep(l.ln1_b);
        n.wq = deep(l.wq);
        n.wk = deep(l.wk);
        n.wv = deep(l.wv);
        n.wo = deep(l.wo);
        n.ln2_g = deep(l.ln2_g);
        n.ln2_b = deep(l.ln2_b);
        n.w1 = deep(l.w1);
        n.w2 = deep(l.w2);
        dst.layers.push_back(std::move(n));
    }
    dst.lnf_g = deep(src.lnf_g);
    dst.lnf_b = deep(src.lnf_b);
    dst.out_proj = deep(src.out_proj);
    if (src.lora) {
        LoraState<Real> st;
        st.rank = src.lora->rank;
        st.alpha = src.lora->alpha;
        for (const auto& pr : src.lora->pairs) st.pairs.push_back({deep(pr.a), deep(pr.b)});
        dst.lora = std::move(st);
    }
    return dst;
}

// Attach rank-r adapters to every attention projection, freezing the base.
// A is small gaussian, B zero, so the freshly attached adapter is a no-op.
template <class Real>
void attach_lora(ModelParams<Real>& params, int64_t rank, double alpha, uint64_t seed) {
    require(!params.lora, "attach_lora: adapter already attached");
    require(rank >= 1, "attach_lora: rank must be >= 1, got ", rank);
    require(rank <= params.config.dim, "attach_lora: rank ", rank, " exceeds dim ",
            params.config.dim);
    Rng rng(derive_seed(seed, "lora_init"));
    LoraState<Real> st;
    st.rank = rank;
    st.alpha = alpha;
    const int64_t d = params.config.dim;
    for (int64_t i = 0; i < params.config.layers * 4; ++i) {
        LoraPair<Real> pr;
        pr.a = Tensor<Real>::randn({d, rank}, rng, Real(0.02), true);
        pr.b = Tensor<Real>::zeros({rank, d}, true);
        st.pairs.push_back(std::move(pr));
    }
    params.lora = std::move(st);
    for (auto& [name, t] : params.named_params()) t.set_requires_grad(false);
}

// Fold the adapter into the base weights and drop it; base becomes trainable
// again. Forward of the merged model matches the adapted model numerically.
template <class Real>
void merge_lora(ModelParams<Real>& params) {
    require(params.lora.has_value(), "merge_lora: no adapter attached");
    const auto& st = *params.lora;
    const Real scaling = static_cast<Real>(st.alpha / static_cast<double>(st.rank));
    const int64_t d = params.config.dim;
    for (int64_t li = 0; li < params.config.layers; ++li) {
        auto& lay = params.layers[static_cast<size_t>(li)];
        Tensor<Real>* mats[4] = {&lay.wq, &lay.wk, &lay.wv, &lay.wo};
        for (int64_t mi = 0; mi < 4; ++mi) {
            const auto& pr = st.pairs[static_cast<size_t>(li * 4 + mi)];
            detail::gemm(pr.a.data().data(), d, st.rank, false, pr.b.data().data(), st.rank, d,
                         false, mats[mi]->mutable_data().data(), scaling, /*accumulate=*/true);
        }
    }
    params.lora.reset();
    for (auto& [name, t] : params.named_params()) t.set_requires_grad(true);
}

namespace detail_model {

// effective attention projection: base, or base + (alpha/r) A*B when adapted
template <class Real>
Tensor<Real> eff_weight(const ModelParams<Real>& params, int64_t layer, int64_t mat,
                        const Tensor<Real>& base) {
    if (!params.lora) return base;
    const auto& st = *params.lora;
    const auto& pr = st.pairs[static_cast<size_t>(layer * 4 + mat)];
    const Real scaling = static_cast<Real>(st.alpha / static_cast<double>(st.rank));
    return add(base, scale(matmul(pr.a, pr.b), scaling));
}

}  // namespace detail_model

// Forward over a batch of equal-length sequences; returns logits [B*L, vocab]
// with rows in batch-major order. PAD positions are hidden from attention as
// keys so padded batching cannot leak into real positions.
template <class Real>
Tensor<Real> forward_batch(const ModelParams<Real>& params, const std::vector<TokenSeq>& batch) {
    const ModelConfig& cfg = params.config;
    require(!batch.empty(), "forward: empty batch");
    const int64_t B = static_cast<int64_t>(batch.size());
    const int64_t L = static_cast<int64_t>(batch[0].size());
    require(L >= 1, "forward: empty sequence");
    require(L <= cfg.max_seq, "forward: sequence length ", L, " exceeds max length ",
            cfg.max_seq);
    std::vector<int> flat;
    flat.reserve(static_cast<size_t>(B * L));
    std::vector<char> key_keep(static_cast<size_t>(B * L), 1);
    bool any_pad = false;
    for (const auto& seq : batch) {
        require(static_cast<int64_t>(seq.size()) == L,
                "forward: ragged batch (expected length ", L, ", got ", seq.size(), ")");
        for (int id : seq) {
            require(id >= 0 && id < cfg.vocab, "forward: token id ", id,
                    " outside vocab of size ", cfg.vocab);
            if (id == PAD_ID) {
                key_keep[flat.size()] = 0;
                any_pad = true;
            }
            flat.push_back(id);
        }
    }
    if (!any_pad) key_keep.clear();

    const bool causal = cfg.attention_mode == AttentionMode::causal;
    const Real inv_sqrt_hd =
        static_cast<Real>(1.0 / std::sqrt(static_cast<double>(cfg.head_dim())));

    Tensor<Real> x = add_positional(embedding_lookup(params.tok_embed, flat), params.pos_embed,
                                    B, L);
    for (int64_t li = 0; li < cfg.layers; ++li) {
        const auto& l = params.layers[static_cast<size_t>(li)];
        Tensor<Real> h = layer_norm(x, l.ln1_g, l.ln1_b);
        Tensor<Real> q = matmul(h, detail_model::eff_weight(params, li, 0, l.wq));
        Tensor<Real> k = matmul(h, detail_model::eff_weight(params, li, 1, l.wk));
        Tensor<Real> v = matmul(h, detail_model::eff_weight(params, li, 2, l.wv));
        Tensor<Real> scores =
            batched_matmul(split_heads(q, B, L, cfg.heads), split_heads(k, B, L, cfg.heads),
                           false, true, inv_sqrt_hd);
        if (causal || !key_keep.empty())
            scores = mask_attention_scores(scores, B, cfg.heads, causal, key_keep);
        Tensor<Real> ctx = merge_heads(
            batched_matmul(softmax(scores, 2), split_heads(v, B, L, cfg.heads)), B, L,
            cfg.heads);
        x = add(x, matmul(ctx, detail_model::eff_weight(params, li, 3, l.wo)));
        Tensor<Real> h2 = layer_norm(x, l.ln2_g, l.ln2_b);
        x = add(x, matmul(gelu(matmul(h2, l.w1)), l.w2));
    }
    x = layer_norm(x, params.lnf_g, params.lnf_b);
    return matmul(x, params.out_proj);
}

// single-sequence forward: logits [n, vocab]
template <class Real>
Tensor<Real> forward(const ModelParams<Real>& params, const TokenSeq& tokens) {
    return forward_batch(params, std::vector<TokenSeq>{tokens});
}

}  // namespace dlmlab
