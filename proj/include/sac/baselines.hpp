#pragma once

#include "sac/compressor.hpp"
#include "sac/model.hpp"

#include <optional>
#include <variant>

namespace sac {

enum class Carrier { per_layer_kv, last_layer };
enum class PositionMode { appended, uniform };

// Trainable context-agnostic compression tokens appended to each chunk by the
// baseline encoders. Initialized from the mean token embedding plus small
// seeded noise.
template <typename T>
struct CompressionTokenBank {
    int count = 0; // floor(chunk_len / ratio) for the active config
    Tensor<T> embeddings; // [count, d_model]
    PositionMode position_mode = PositionMode::appended;
    Carrier carrier = Carrier::per_layer_kv;

    std::vector<Tensor<T>> tensors() const { return {embeddings}; }
};

template <typename T>
CompressionTokenBank<T> init_bank(const ModelParams<T>& base, int count, PositionMode pm, Carrier carrier,
                                  uint64_t seed) {
    require(count >= 1, ErrKind::config, "compression token bank needs at least one token");
    const int d = base.config.d_model;
    std::vector<T> mean(d, T(0));
    for (int r = 0; r < base.config.vocab_size; ++r)
        for (int c = 0; c < d; ++c) mean[c] += base.token_embedding->at(r, c);
    for (auto& v : mean) v /= T(base.config.vocab_size);

    CompressionTokenBank<T> bank;
    bank.count = count;
    bank.position_mode = pm;
    bank.carrier = carrier;
    bank.embeddings = make_tensor<T>({count, d}, true, "bank");
    Rng rng(seed);
    for (int r = 0; r < count; ++r)
        for (int c = 0; c < d; ++c)
            bank.embeddings->at(r, c) = mean[c] + static_cast<T>(rng.normal(0.0, 0.02));
    return bank;
}

// Per-method bank presets, mirroring the original architectures.
inline PositionMode bank_position_mode(Method m) {
    return m == Method::epl ? PositionMode::uniform : PositionMode::appended;
}
inline Carrier bank_carrier(Method m) {
    return m == Method::icae ? Carrier::last_layer : Carrier::per_layer_kv;
}

// Final-layer hidden states handed to the decoder as soft input rows.
template <typename T>
struct SoftTokens {
    Tensor<T> rows; // [m, d_model]; null means zero soft tokens
    int source_len = 0;

    int count() const { return rows ? rows->shape[0] : 0; }
};

// The compressed artifact handed to the decoder: per-layer KV slots for
// sac/500x/epl, soft rows for icae.
template <typename T>
struct Encoded {
    std::optional<CompressedRepr<T>> repr;
    std::optional<SoftTokens<T>> soft;

    int source_len() const { return repr ? repr->source_len : soft->source_len; }
    int slot_count() const { return repr ? repr->kv.slots() : soft->count(); }
};

// Baseline encoder pass over one chunk: [context ++ compression tokens] under
// causal attention. Position ids of the compression tokens follow the
// position mode; the carrier picks what is extracted at the trailing slots.
// In appended mode the tokens sit right after the chunk by default;
// a chunked driver overrides appended_pos_start so the blocks of successive
// chunks stay disjoint.
template <typename T>
Encoded<T> compress_appended(Graph<T>& g, const std::vector<int>& tokens, int position_offset,
                             const CompressionConfig& ccfg, const CompressionTokenBank<T>& bank,
                             const LoraAdapter<T>* lora, const ModelParams<T>& base,
                             AttentionCapture<T>* capture = nullptr, int appended_pos_start = -1) {
    ccfg.validate();
    const int t = static_cast<int>(tokens.size());
    require(t >= 1, ErrKind::dimension, "compress_appended: empty chunk");
    require(t <= ccfg.chunk_len, ErrKind::dimension, "compress_appended: chunk exceeds configured length");
    const int m = ccfg.anchors_for(t);
    require(m <= bank.count, ErrKind::config, "compression token bank smaller than the slot budget");

    auto rows = bank.count == m ? bank.embeddings : g.slice_rows(bank.embeddings, 0, m);
    auto emb = g.concat_rows(g.embed_rows(base.token_embedding, tokens), rows);

    std::vector<int> positions(t + m);
    for (int i = 0; i < t; ++i) positions[i] = position_offset + i;
    if (bank.position_mode == PositionMode::appended) {
        const int start = appended_pos_start < 0 ? position_offset + t : appended_pos_start;
        for (int i = 0; i < m; ++i) positions[t + i] = start + i;
    } else {
        const AnchorSet uniform = select_uniform(t, m);
        for (int i = 0; i < m; ++i) positions[t + i] = position_offset + uniform.indices[i];
    }

    ForwardOptions<T> opts;
    opts.mask.mode = MaskMode::causal;
    opts.lora = lora;
    opts.capture = capture;
    auto res = forward_embeddings(g, base, emb, positions, opts);

    std::vector<int> trailing(m);
    for (int i = 0; i < m; ++i) trailing[i] = t + i;

    Encoded<T> out;
    if (bank.carrier == Carrier::per_layer_kv) {
        CompressedRepr<T> repr;
        repr.kv = extract_kv(g, res.kv, trailing);
        repr.source_len = t;
        repr.ratio = ccfg.ratio;
        repr.chunk_boundaries = {t};
        repr.strategy = Strategy::uniform;
        out.repr = std::move(repr);
    } else {
        SoftTokens<T> soft;
        soft.rows = g.slice_rows(res.final_hidden, t, t + m);
        soft.source_len = t;
        out.soft = std::move(soft);
    }
    return out;
}

// Chunked variant mirroring compress_context: per-layer KV carriers are
// concatenated slot-wise, soft carriers row-wise.
template <typename T>
Encoded<T> compress_appended_context(Graph<T>& g, const std::vector<int>& tokens,
                                     const CompressionConfig& ccfg, const CompressionTokenBank<T>& bank,
                                     const LoraAdapter<T>* lora, const ModelParams<T>& base) {
    const int n = static_cast<int>(tokens.size());
    require(n >= 1, ErrKind::dimension, "compress_appended_context: empty context");
    Encoded<T> out;
    int emitted = 0;
    for (int off = 0; off < n; off += ccfg.chunk_len) {
        const int len = std::min(ccfg.chunk_len, n - off);
        std::vector<int> chunk(tokens.begin() + off, tokens.begin() + off + len);
        auto part = compress_appended<T>(g, chunk, off, ccfg, bank, lora, base, nullptr, n + emitted);
        emitted += part.slot_count();
        if (part.repr) {
            if (!out.repr) {
                out.repr = std::move(*part.repr);
            } else {
                out.repr->kv = concat_kv(g, out.repr->kv, part.repr->kv);
                out.repr->chunk_boundaries.push_back(off + len);
            }
        } else {
            if (!out.soft) {
                out.soft = std::move(*part.soft);
            } else {
                out.soft->rows = g.concat_rows(out.soft->rows, part.soft->rows);
            }
        }
    }
    if (out.repr) out.repr->source_len = n;
    if (out.soft) out.soft->source_len = n;
    return out;
}

// Decoder pass over [soft rows ++ continuation tokens], causal. Soft tokens
// occupy positions 0..m-1 and the continuation starts at m.
template <typename T>
ForwardResult<T> decode_with_soft_tokens(Graph<T>& g, const SoftTokens<T>& soft,
                                         const std::vector<int>& continuation,
                                         const ModelParams<T>& base) {
    const int m = soft.count();
    Tensor<T> emb;
    if (m > 0) {
        require(soft.rows->shape[1] == base.config.d_model, ErrKind::dimension,
                "soft token width must equal d_model");
        emb = continuation.empty()
                  ? soft.rows
                  : g.concat_rows(soft.rows, g.embed_rows(base.token_embedding, continuation));
    } else {
        require(!continuation.empty(), ErrKind::dimension, "nothing to decode");
        emb = g.embed_rows(base.token_embedding, continuation);
    }
    std::vector<int> positions(emb->shape[0]);
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    ForwardOptions<T> opts;
    return forward_embeddings(g, base, emb, positions, opts);
}

} // namespace sac
