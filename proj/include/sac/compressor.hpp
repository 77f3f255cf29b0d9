#pragma once

#include "sac/model.hpp"
#include "sac/rng.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

namespace sac {

enum class Method { full, sac, icae, x500, epl };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::full: return "full";
        case Method::sac: return "sac";
        case Method::icae: return "icae";
        case Method::x500: return "500x";
        default: return "epl";
    }
}

inline Method method_from_name(const std::string& s) {
    if (s == "full") return Method::full;
    if (s == "sac") return Method::sac;
    if (s == "icae") return Method::icae;
    if (s == "500x" || s == "x500") return Method::x500;
    if (s == "epl") return Method::epl;
    fail(ErrKind::config, "unknown method '" + s + "'");
}

enum class Strategy { uniform, random, scored };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::uniform: return "uniform";
        case Strategy::random: return "random";
        default: return "scored";
    }
}

struct AnchorSet {
    std::vector<int> indices; // sorted, unique, within [0, chunk length)
};

// Divide [0, chunk_len) into n spans of near-equal length and take the middle
// of each: span i is [i*len/n, (i+1)*len/n), selected index start + span/2
// (right-middle for even spans).
inline AnchorSet select_uniform(int chunk_len, int n_anchors) {
    require(n_anchors >= 1 && n_anchors <= chunk_len, ErrKind::config,
            "select_uniform: need 1 <= n_anchors <= chunk_len");
    AnchorSet s;
    for (int i = 0; i < n_anchors; ++i) {
        const int start = static_cast<int>(static_cast<int64_t>(i) * chunk_len / n_anchors);
        const int end = static_cast<int>(static_cast<int64_t>(i + 1) * chunk_len / n_anchors);
        s.indices.push_back(start + (end - start) / 2);
    }
    return s;
}

inline AnchorSet select_random(int chunk_len, int n_anchors, uint64_t seed) {
    require(n_anchors >= 1 && n_anchors <= chunk_len, ErrKind::config,
            "select_random: need 1 <= n_anchors <= chunk_len");
    Rng rng(seed);
    AnchorSet s;
    s.indices = rng.sample_without_replacement(chunk_len, n_anchors);
    std::sort(s.indices.begin(), s.indices.end());
    return s;
}

// Top-n by score; ties broken towards the lower index; result sorted by index.
inline AnchorSet select_scored(int chunk_len, int n_anchors, const std::vector<double>& scores) {
    require(static_cast<int>(scores.size()) == chunk_len, ErrKind::input,
            "select_scored: scores length must equal chunk length");
    require(n_anchors >= 1 && n_anchors <= chunk_len, ErrKind::config,
            "select_scored: need 1 <= n_anchors <= chunk_len");
    std::vector<int> order(chunk_len);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    AnchorSet s;
    s.indices.assign(order.begin(), order.begin() + n_anchors);
    std::sort(s.indices.begin(), s.indices.end());
    return s;
}

struct CompressionConfig {
    int ratio = 4;
    int chunk_len = 64; // reference setting: 510
    Strategy strategy = Strategy::uniform;
    uint64_t selection_seed = 0;       // random strategy
    std::vector<double> scores;        // scored strategy; one score per context token
    MaskMode encoder_mask = MaskMode::bidirectional;

    int anchors_for(int len) const { return std::max(1, len / ratio); }

    void validate() const {
        require(ratio >= 1, ErrKind::config, "compression ratio must be >= 1");
        require(chunk_len >= 1, ErrKind::config, "chunk length must be >= 1");
    }

    AnchorSet select(int len, int offset) const {
        const int n = anchors_for(len);
        switch (strategy) {
            case Strategy::uniform: return select_uniform(len, n);
            case Strategy::random:
                return select_random(len, n, sub_seed(selection_seed, "chunk@" + std::to_string(offset)));
            case Strategy::scored: {
                require(static_cast<int>(scores.size()) >= offset + len, ErrKind::input,
                        "scored selection: score file shorter than the context");
                std::vector<double> local(scores.begin() + offset, scores.begin() + offset + len);
                return select_scored(len, n, local);
            }
        }
        fail(ErrKind::config, "unreachable strategy");
    }
};

// Trainable state of the encoder: LoRA deltas plus the shared anchor
// embedding. The anchor embedding starts at zero so an untrained compressor
// reproduces the base model exactly.
template <typename T>
struct CompressorParams {
    LoraAdapter<T> lora;
    Tensor<T> anchor_embedding; // [d_model]

    std::vector<Tensor<T>> tensors() const {
        auto out = lora.tensors();
        out.push_back(anchor_embedding);
        return out;
    }
};

template <typename T>
CompressorParams<T> init_compressor(const ModelConfig& cfg, int rank, T alpha, uint64_t seed) {
    CompressorParams<T> p;
    p.lora = init_lora<T>(cfg, rank, alpha, seed);
    p.anchor_embedding = make_tensor<T>({cfg.d_model}, true, "anchor_embedding");
    return p;
}

template <typename T>
struct CompressedRepr {
    KVCache<T> kv; // anchor slots only, original positions
    int source_len = 0;
    int ratio = 0;
    std::vector<int> chunk_boundaries; // cumulative end offsets, last == source_len
    Strategy strategy = Strategy::uniform;
};

// e_i = base_i + e_A iff i is an anchor; exact addition, no scaling.
template <typename T>
Tensor<T> inject_anchor_embedding(Graph<T>& g, const Tensor<T>& base, const AnchorSet& anchors,
                                  const Tensor<T>& e_a) {
    for (int i : anchors.indices)
        require(i >= 0 && i < base->shape[0], ErrKind::index, "anchor index outside the chunk");
    return g.add_at_rows(base, anchors.indices, e_a);
}

// Encoder pass over one chunk: select anchors, mark them with the anchor
// embedding, run the (by default bidirectional) LoRA-adapted forward, and keep
// K/V at the anchor slots. Cache positions are the anchors' original absolute
// positions: offset + index.
template <typename T>
CompressedRepr<T> compress_chunk(Graph<T>& g, const std::vector<int>& tokens, int position_offset,
                                 const CompressionConfig& ccfg, const CompressorParams<T>& params,
                                 const ModelParams<T>& base, AttentionCapture<T>* capture = nullptr) {
    ccfg.validate();
    const int t = static_cast<int>(tokens.size());
    require(t >= 1, ErrKind::dimension, "compress_chunk: empty chunk");
    require(t <= ccfg.chunk_len, ErrKind::dimension, "compress_chunk: chunk exceeds configured length");

    const AnchorSet anchors = ccfg.select(t, position_offset);
    std::vector<int> positions(t);
    for (int i = 0; i < t; ++i) positions[i] = position_offset + i;

    auto emb = g.embed_rows(base.token_embedding, tokens);
    emb = inject_anchor_embedding(g, emb, anchors, params.anchor_embedding);

    ForwardOptions<T> opts;
    opts.mask.mode = ccfg.encoder_mask;
    opts.lora = &params.lora;
    opts.capture = capture;
    auto res = forward_embeddings(g, base, emb, positions, opts);

    CompressedRepr<T> out;
    out.kv = extract_kv(g, res.kv, anchors.indices);
    out.source_len = t;
    out.ratio = ccfg.ratio;
    out.chunk_boundaries = {t};
    out.strategy = ccfg.strategy;
    return out;
}

// Split the context into ceil(n/L) chunks of at most L tokens, compress each
// at its own position offset, and concatenate the sub-representations.
template <typename T>
CompressedRepr<T> compress_context(Graph<T>& g, const std::vector<int>& tokens,
                                   const CompressionConfig& ccfg, const CompressorParams<T>& params,
                                   const ModelParams<T>& base) {
    ccfg.validate();
    const int n = static_cast<int>(tokens.size());
    require(n >= 1, ErrKind::dimension, "compress_context: empty context");

    CompressedRepr<T> out;
    out.source_len = n;
    out.ratio = ccfg.ratio;
    out.strategy = ccfg.strategy;
    for (int off = 0; off < n; off += ccfg.chunk_len) {
        const int len = std::min(ccfg.chunk_len, n - off);
        std::vector<int> chunk(tokens.begin() + off, tokens.begin() + off + len);
        auto part = compress_chunk(g, chunk, off, ccfg, params, base);
        out.kv = concat_kv(g, out.kv, part.kv);
        out.chunk_boundaries.push_back(off + len);
    }
    return out;
}

} // namespace sac
