#pragma once

#include "sac/rng.hpp"
#include "sac/tensor.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace sac {

struct ModelConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 128;
    int d_ff = 512;
    int vocab_size = 0; // set from the tokenizer
    int max_positions = 1024;
    double rope_base = 10000.0;

    int d_head() const { return d_model / n_heads; }

    void validate() const {
        require(n_layers >= 1 && n_heads >= 1 && d_model >= 1 && d_ff >= 1 && vocab_size >= 1 &&
                    max_positions >= 1,
                ErrKind::config, "model extents must be >= 1");
        require(d_model % n_heads == 0, ErrKind::config, "d_model must be divisible by n_heads");
        require(d_head() % 2 == 0, ErrKind::config, "d_head must be even for rotary positions");
    }

    bool same_geometry(const ModelConfig& o) const {
        return n_layers == o.n_layers && n_heads == o.n_heads && d_model == o.d_model && d_ff == o.d_ff &&
               vocab_size == o.vocab_size && max_positions == o.max_positions && rope_base == o.rope_base;
    }
};

enum class MaskMode { causal, bidirectional, explicit_mask };

inline const char* mask_mode_name(MaskMode m) {
    switch (m) {
        case MaskMode::causal: return "causal";
        case MaskMode::bidirectional: return "bidirectional";
        default: return "explicit";
    }
}

// Causal semantics: a query sees every prefix slot whose position id is <= its
// own position, and current slots up to and including its own index. The
// in-block rule is by index so that appended compression tokens with remapped
// position ids still see the whole block they follow.
struct AttentionMask {
    MaskMode mode = MaskMode::causal;
    int q_len = 0, kv_len = 0;      // explicit mode only
    std::vector<uint8_t> allow;     // row-major [q_len, kv_len], explicit mode only

    static AttentionMask causal() { return {}; }
    static AttentionMask bidirectional() { return {MaskMode::bidirectional, 0, 0, {}}; }
    static AttentionMask explicit_of(int q, int kv, std::vector<uint8_t> allow_) {
        require(static_cast<int64_t>(allow_.size()) == int64_t(q) * kv, ErrKind::dimension,
                "explicit mask extent mismatch");
        return {MaskMode::explicit_mask, q, kv, std::move(allow_)};
    }
};

template <typename T>
struct LayerParams {
    Tensor<T> wq, wk, wv, wo;        // [d_model, d_model]
    Tensor<T> w_gate, w_up;          // [d_model, d_ff]
    Tensor<T> w_down;                // [d_ff, d_model]
    Tensor<T> attn_norm, mlp_norm;   // [d_model]
};

template <typename T>
struct ModelParams {
    ModelConfig config;
    Tensor<T> token_embedding; // [vocab, d_model]
    std::vector<LayerParams<T>> layers;
    Tensor<T> final_norm; // [d_model]
    Tensor<T> head;       // [d_model, vocab] (untied)
    bool frozen = false;

    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out{token_embedding};
        for (auto& l : layers)
            for (auto& t : {l.wq, l.wk, l.wv, l.wo, l.w_gate, l.w_up, l.w_down, l.attn_norm, l.mlp_norm})
                out.push_back(t);
        out.push_back(final_norm);
        out.push_back(head);
        return out;
    }

    void set_frozen(bool f) {
        frozen = f;
        for (auto& t : tensors()) t->requires_grad = !f;
    }
};

template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    auto normal = [&](Shape shape, std::string name, T stddev) {
        auto t = make_tensor<T>(std::move(shape), true, std::move(name));
        for (auto& v : t->value) v = static_cast<T>(rng.normal(0.0, stddev));
        return t;
    };
    auto ones = [&](Shape shape, std::string name) {
        auto t = make_tensor<T>(std::move(shape), true, std::move(name));
        for (auto& v : t->value) v = T(1);
        return t;
    };
    const T sd_emb = T(0.02);
    const T sd_proj = T(1) / std::sqrt(T(cfg.d_model));
    const T sd_ff = T(1) / std::sqrt(T(cfg.d_ff));
    ModelParams<T> p;
    p.config = cfg;
    p.token_embedding = normal({cfg.vocab_size, cfg.d_model}, "tok_emb", sd_emb);
    for (int i = 0; i < cfg.n_layers; ++i) {
        std::string pre = "layer" + std::to_string(i) + ".";
        LayerParams<T> l;
        l.wq = normal({cfg.d_model, cfg.d_model}, pre + "wq", sd_proj);
        l.wk = normal({cfg.d_model, cfg.d_model}, pre + "wk", sd_proj);
        l.wv = normal({cfg.d_model, cfg.d_model}, pre + "wv", sd_proj);
        l.wo = normal({cfg.d_model, cfg.d_model}, pre + "wo", sd_proj);
        l.w_gate = normal({cfg.d_model, cfg.d_ff}, pre + "w_gate", sd_proj);
        l.w_up = normal({cfg.d_model, cfg.d_ff}, pre + "w_up", sd_proj);
        l.w_down = normal({cfg.d_ff, cfg.d_model}, pre + "w_down", sd_ff);
        l.attn_norm = ones({cfg.d_model}, pre + "attn_norm");
        l.mlp_norm = ones({cfg.d_model}, pre + "mlp_norm");
        p.layers.push_back(std::move(l));
    }
    p.final_norm = ones({cfg.d_model}, "final_norm");
    p.head = normal({cfg.d_model, cfg.vocab_size}, "head", sd_emb);
    return p;
}

// Low-rank deltas over the q/k/v/o projections. B starts at zero so the
// adapted model initially equals the base model.
template <typename T>
struct LoraAdapter {
    static constexpr int kTargets = 4; // q, k, v, o
    int rank = 0;
    T alpha = T(0);
    struct Pair {
        Tensor<T> a; // [d_in, rank]
        Tensor<T> b; // [rank, d_out]
    };
    std::vector<std::array<Pair, kTargets>> layers;

    T scale() const { return alpha / T(rank); }

    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out;
        for (auto& l : layers)
            for (auto& p : l) {
                out.push_back(p.a);
                out.push_back(p.b);
            }
        return out;
    }
};

template <typename T>
LoraAdapter<T> init_lora(const ModelConfig& cfg, int rank, T alpha, uint64_t seed) {
    require(rank >= 1, ErrKind::config, "lora rank must be >= 1");
    Rng rng(seed);
    LoraAdapter<T> lora;
    lora.rank = rank;
    lora.alpha = alpha;
    static const char* names[LoraAdapter<T>::kTargets] = {"q", "k", "v", "o"};
    for (int i = 0; i < cfg.n_layers; ++i) {
        std::array<typename LoraAdapter<T>::Pair, LoraAdapter<T>::kTargets> layer;
        for (int tgt = 0; tgt < LoraAdapter<T>::kTargets; ++tgt) {
            std::string pre = "lora" + std::to_string(i) + "." + names[tgt] + ".";
            layer[tgt].a = make_tensor<T>({cfg.d_model, rank}, true, pre + "a");
            for (auto& v : layer[tgt].a->value) v = static_cast<T>(rng.normal(0.0, 0.02));
            layer[tgt].b = make_tensor<T>({rank, cfg.d_model}, true, pre + "b");
        }
        lora.layers.push_back(std::move(layer));
    }
    return lora;
}

// Per-layer key/value tensors of shape [slots, d_model] with head-blocked
// columns; K already carries its rotary rotation. Positions are the slots'
// original absolute position ids.
template <typename T>
struct KVCache {
    struct LayerKV {
        Tensor<T> k, v;
    };
    std::vector<LayerKV> layers;
    std::vector<int> positions;

    int slots() const { return static_cast<int>(positions.size()); }
    bool empty() const { return positions.empty(); }

    void validate(const ModelConfig& cfg) const {
        if (empty()) return;
        require(static_cast<int>(layers.size()) == cfg.n_layers, ErrKind::dimension,
                "kv cache layer count mismatch");
        for (size_t i = 1; i < positions.size(); ++i)
            require(positions[i] > positions[i - 1], ErrKind::index,
                    "kv cache positions must be strictly increasing");
        for (auto& l : layers) {
            require(l.k && l.v, ErrKind::dimension, "kv cache has null layers");
            require(l.k->shape == Shape{slots(), cfg.d_model} && l.v->shape == l.k->shape,
                    ErrKind::dimension, "kv cache slot geometry mismatch");
        }
    }
};

template <typename T>
KVCache<T> extract_kv(Graph<T>& g, const KVCache<T>& cache, const std::vector<int>& keep) {
    require(!keep.empty(), ErrKind::index, "extract_kv: empty index set");
    for (size_t i = 0; i < keep.size(); ++i) {
        require(keep[i] >= 0 && keep[i] < cache.slots(), ErrKind::index, "extract_kv: index out of range");
        if (i > 0)
            require(keep[i] > keep[i - 1], ErrKind::index, "extract_kv: indices must be strictly increasing");
    }
    KVCache<T> out;
    for (auto& l : cache.layers) out.layers.push_back({g.gather_rows(l.k, keep), g.gather_rows(l.v, keep)});
    for (int i : keep) out.positions.push_back(cache.positions[i]);
    return out;
}

template <typename T>
KVCache<T> concat_kv(Graph<T>& g, const KVCache<T>& a, const KVCache<T>& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    require(a.layers.size() == b.layers.size(), ErrKind::dimension, "concat_kv layer count mismatch");
    require(a.layers[0].k->shape[1] == b.layers[0].k->shape[1], ErrKind::dimension,
            "concat_kv width mismatch");
    require(a.positions.back() < b.positions.front(), ErrKind::index,
            "concat_kv: position ranges must not overlap");
    KVCache<T> out;
    for (size_t i = 0; i < a.layers.size(); ++i)
        out.layers.push_back({g.concat_rows(a.layers[i].k, b.layers[i].k),
                              g.concat_rows(a.layers[i].v, b.layers[i].v)});
    out.positions = a.positions;
    out.positions.insert(out.positions.end(), b.positions.begin(), b.positions.end());
    return out;
}

// Post-softmax attention probabilities of one layer, per head; values only.
template <typename T>
struct AttentionCapture {
    int q_len = 0;
    int kv_len = 0;
    std::vector<std::vector<T>> head_probs; // n_heads entries of [q_len * kv_len]
};

template <typename T>
struct ForwardOptions {
    AttentionMask mask;
    const KVCache<T>* prefix = nullptr;
    const LoraAdapter<T>* lora = nullptr;
    AttentionCapture<T>* capture = nullptr; // filled from the final layer
};

template <typename T>
struct ForwardResult {
    Tensor<T> logits;       // [t, vocab]
    KVCache<T> kv;          // the t new slots
    Tensor<T> final_hidden; // [t, d_model], post final norm
};

namespace detail {

template <typename T>
std::vector<T> mask_bias(const AttentionMask& mask, const std::vector<int>& positions,
                         const std::vector<int>& prefix_positions) {
    const int t = static_cast<int>(positions.size());
    const int p = static_cast<int>(prefix_positions.size());
    const int n_kv = p + t;
    if (mask.mode == MaskMode::explicit_mask)
        require(mask.q_len == t && mask.kv_len == n_kv, ErrKind::dimension,
                "explicit mask extents do not match query/kv lengths");
    std::vector<T> bias(static_cast<size_t>(t) * n_kv, T(0));
    for (int i = 0; i < t; ++i) {
        for (int j = 0; j < n_kv; ++j) {
            bool allowed = true;
            switch (mask.mode) {
                case MaskMode::bidirectional: allowed = true; break;
                case MaskMode::causal:
                    allowed = j < p ? prefix_positions[j] <= positions[i] : (j - p) <= i;
                    break;
                case MaskMode::explicit_mask:
                    allowed = mask.allow[static_cast<size_t>(i) * n_kv + j] != 0;
                    break;
            }
            if (!allowed) bias[static_cast<size_t>(i) * n_kv + j] = T(kMaskPenalty);
        }
    }
    return bias;
}

template <typename T>
Tensor<T> project(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& w, const LoraAdapter<T>* lora,
                  int layer, int target) {
    auto y = g.matmul(x, w);
    if (lora) {
        auto& pair = lora->layers[layer][target];
        auto delta = g.matmul(g.matmul(x, pair.a), pair.b);
        y = g.add(y, g.scale(delta, lora->scale()));
    }
    return y;
}

} // namespace detail

// One attention block: pre-norm, q/k/v/o projections (optionally LoRA
// wrapped), rotary positions on q and new k, scaled dot-product over
// [prefix slots ++ current slots] under the mask. Returns the block output
// (pre-residual) and the new K/V rows for these t slots.
template <typename T>
std::pair<Tensor<T>, typename KVCache<T>::LayerKV> attention_block(
    Graph<T>& g, const Tensor<T>& x, const AttentionMask& mask,
    const typename KVCache<T>::LayerKV* prefix, const std::vector<int>& prefix_positions,
    const std::vector<int>& positions, const LayerParams<T>& lp, const ModelConfig& cfg,
    const LoraAdapter<T>* lora, int layer, AttentionCapture<T>* capture) {
    const int t = x->shape[0];
    require(static_cast<int>(positions.size()) == t, ErrKind::dimension,
            "attention: positions length mismatch");
    const int dh = cfg.d_head();
    const T base = static_cast<T>(cfg.rope_base);

    auto xn = g.rms_norm(x, lp.attn_norm, T(1e-5));
    auto q = g.rope(detail::project(g, xn, lp.wq, lora, layer, 0), positions, dh, base);
    auto k = g.rope(detail::project(g, xn, lp.wk, lora, layer, 1), positions, dh, base);
    auto v = detail::project(g, xn, lp.wv, lora, layer, 2);

    const auto bias = detail::mask_bias<T>(mask, positions, prefix_positions);
    std::vector<Tensor<T>> heads;
    for (int h = 0; h < cfg.n_heads; ++h) {
        auto qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        if (prefix) {
            kh = g.concat_rows(g.slice_cols(prefix->k, h * dh, (h + 1) * dh), kh);
            vh = g.concat_rows(g.slice_cols(prefix->v, h * dh, (h + 1) * dh), vh);
        }
        auto scores = g.add_const(g.scale(g.matmul_nt(qh, kh), T(1) / std::sqrt(T(dh))), bias);
        auto probs = g.softmax_rows(scores);
        if (capture) {
            capture->q_len = t;
            capture->kv_len = probs->shape[1];
            capture->head_probs.push_back(probs->value);
        }
        heads.push_back(g.matmul(probs, vh));
    }
    auto out = detail::project(g, g.concat_cols(heads), lp.wo, lora, layer, 3);
    return {out, {k, v}};
}

template <typename T>
ForwardResult<T> forward_embeddings(Graph<T>& g, const ModelParams<T>& params, Tensor<T> x,
                                    const std::vector<int>& positions, const ForwardOptions<T>& opts) {
    const auto& cfg = params.config;
    require(x->shape.size() == 2 && x->shape[1] == cfg.d_model, ErrKind::dimension,
            "forward: embedding width mismatch");
    require(static_cast<int>(positions.size()) == x->shape[0], ErrKind::dimension,
            "forward: positions length mismatch");
    for (int p : positions)
        require(p >= 0 && p < cfg.max_positions, ErrKind::config, "forward: position id exceeds max_positions");
    std::vector<int> prefix_positions;
    if (opts.prefix && !opts.prefix->empty()) {
        opts.prefix->validate(cfg);
        prefix_positions = opts.prefix->positions;
    }

    ForwardResult<T> out;
    out.kv.positions = positions;
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const typename KVCache<T>::LayerKV* pl =
            prefix_positions.empty() ? nullptr : &opts.prefix->layers[layer];
        const bool last = layer == cfg.n_layers - 1;
        auto [attn, kv] = attention_block(g, x, opts.mask, pl, prefix_positions, positions,
                                          params.layers[layer], cfg, opts.lora, layer,
                                          last ? opts.capture : nullptr);
        x = g.add(x, attn);
        auto xn = g.rms_norm(x, params.layers[layer].mlp_norm, T(1e-5));
        auto gate = g.silu(g.matmul(xn, params.layers[layer].w_gate));
        auto up = g.matmul(xn, params.layers[layer].w_up);
        x = g.add(x, g.matmul(g.mul(gate, up), params.layers[layer].w_down));
        out.kv.layers.push_back(kv);
    }
    out.final_hidden = g.rms_norm(x, params.final_norm, T(1e-5));
    out.logits = g.matmul(out.final_hidden, params.head);
    return out;
}

template <typename T>
ForwardResult<T> forward_tokens(Graph<T>& g, const ModelParams<T>& params, const std::vector<int>& tokens,
                                const std::vector<int>& positions, const ForwardOptions<T>& opts) {
    auto x = g.embed_rows(params.token_embedding, tokens);
    return forward_embeddings(g, params, x, positions, opts);
}

} // namespace sac
