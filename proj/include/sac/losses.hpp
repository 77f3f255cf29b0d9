#pragma once

#include "sac/baselines.hpp"
#include "sac/data.hpp"

#include <optional>

namespace sac {

// Where the decoder continuation (trigger / question / future text) starts:
// at the original context length, or right after the last compressed slot.
enum class PositionPolicy { source_len, after_last_slot };

template <typename T>
int continuation_start(const Encoded<T>& enc, PositionPolicy policy) {
    if (enc.soft) return enc.soft->count();
    const auto& repr = *enc.repr;
    const int after = repr.kv.empty() ? 0 : repr.kv.positions.back() + 1;
    if (policy == PositionPolicy::after_last_slot) return after;
    return std::max(repr.source_len, after);
}

template <typename T>
struct DecodeResult {
    ForwardResult<T> fwd;
    int cont_row0 = 0; // row of the first continuation slot in fwd.logits
};

// A [d] vector viewed as a single [1, d] row, with gradient flow.
template <typename T>
Tensor<T> reshape_row(Graph<T>& g, const Tensor<T>& v, int d) {
    require(v->numel() == d, ErrKind::dimension, "reshape_row extent mismatch");
    if (v->shape.size() == 2 && v->shape[0] == 1) return v;
    auto out = make_tensor<T>({1, d});
    out->requires_grad = g.recording() && v->requires_grad;
    out->value = v->value;
    if (out->requires_grad) {
        g.record([v, out] {
            if (out->grad.empty()) return;
            v->ensure_grad();
            for (int64_t i = 0; i < v->numel(); ++i) v->grad[i] += out->grad[i];
        });
    }
    return out;
}

// Run the frozen decoder over [optional lead embedding ++ continuation
// tokens] conditioned on the encoded context. KV carriers become an attention
// prefix; soft carriers are prepended as input rows at positions 0..m-1.
template <typename T>
DecodeResult<T> decode_after(Graph<T>& g, const Encoded<T>& enc, const Tensor<T>& lead,
                             const std::vector<int>& cont, const ModelParams<T>& base,
                             PositionPolicy policy) {
    const int start = continuation_start(enc, policy);
    const int n_lead = lead ? 1 : 0;
    const int t = n_lead + static_cast<int>(cont.size());
    require(t >= 1, ErrKind::dimension, "decode_after: nothing to decode");

    std::vector<Tensor<T>> parts;
    if (lead) parts.push_back(reshape_row(g, lead, base.config.d_model));
    if (!cont.empty()) parts.push_back(g.embed_rows(base.token_embedding, cont));
    Tensor<T> rows = parts.size() == 1 ? parts[0] : g.concat_rows(parts[0], parts[1]);

    ForwardOptions<T> opts; // causal decode
    DecodeResult<T> out;
    if (enc.soft && enc.soft->count() > 0) {
        rows = g.concat_rows(enc.soft->rows, rows);
        std::vector<int> positions(enc.soft->count() + t);
        for (int i = 0; i < enc.soft->count(); ++i) positions[i] = i;
        for (int i = 0; i < t; ++i) positions[enc.soft->count() + i] = start + i;
        out.fwd = forward_embeddings(g, base, rows, positions, opts);
        out.cont_row0 = enc.soft->count();
    } else {
        std::vector<int> positions(t);
        for (int i = 0; i < t; ++i) positions[i] = start + i;
        opts.prefix = enc.repr && !enc.repr->kv.empty() ? &enc.repr->kv : nullptr;
        out.fwd = forward_embeddings(g, base, rows, positions, opts);
        out.cont_row0 = 0;
    }
    return out;
}

// Reconstruction objective: the decoder sees the compressed context, a
// learned trigger embedding, then teacher-forced C; mean NLL over all of C.
template <typename T>
Tensor<T> loss_ae(Graph<T>& g, const Encoded<T>& enc, const std::vector<int>& context,
                  const ModelParams<T>& base, const Tensor<T>& ae_trigger, PositionPolicy policy) {
    require(!context.empty(), ErrKind::dimension, "loss_ae: empty context");
    std::vector<int> cont(context.begin(), context.end() - 1);
    auto dec = decode_after(g, enc, ae_trigger, cont, base, policy);
    const int t = static_cast<int>(context.size());
    auto logits = dec.fwd.logits->shape[0] == t ? dec.fwd.logits
                                                : g.slice_rows(dec.fwd.logits, dec.cont_row0, dec.cont_row0 + t);
    std::vector<uint8_t> mask(t, 1);
    return g.cross_entropy(logits, context, mask);
}

// Future-prediction objective: [BOS] ++ C'[:-1] teacher-forced after the
// compressed context; mean NLL over all of C'.
template <typename T>
Tensor<T> loss_lm(Graph<T>& g, const Encoded<T>& enc, const std::vector<int>& future,
                  const ModelParams<T>& base, PositionPolicy policy) {
    require(!future.empty(), ErrKind::dimension, "loss_lm: empty future context");
    std::vector<int> cont;
    cont.push_back(Tokenizer::kBos);
    cont.insert(cont.end(), future.begin(), future.end() - 1);
    auto dec = decode_after(g, enc, Tensor<T>{}, cont, base, policy);
    const int t = static_cast<int>(future.size());
    auto logits = dec.fwd.logits->shape[0] == t ? dec.fwd.logits
                                                : g.slice_rows(dec.fwd.logits, dec.cont_row0, dec.cont_row0 + t);
    std::vector<uint8_t> mask(t, 1);
    return g.cross_entropy(logits, future, mask);
}

// Answering objective: [Q ++ SEP ++ A] teacher-forced after the compressed
// context; NLL over A plus its closing EOS, question slots masked.
template <typename T>
Tensor<T> loss_qa(Graph<T>& g, const Encoded<T>& enc, const std::vector<int>& question,
                  const std::vector<int>& answer, const ModelParams<T>& base, PositionPolicy policy) {
    require(!answer.empty(), ErrKind::dimension, "loss_qa: empty answer");
    std::vector<int> cont = question;
    cont.push_back(Tokenizer::kSep);
    cont.insert(cont.end(), answer.begin(), answer.end());
    auto dec = decode_after(g, enc, Tensor<T>{}, cont, base, policy);
    const int t = static_cast<int>(cont.size());
    auto logits = dec.fwd.logits->shape[0] == t ? dec.fwd.logits
                                                : g.slice_rows(dec.fwd.logits, dec.cont_row0, dec.cont_row0 + t);
    const int nq = static_cast<int>(question.size());
    std::vector<int> targets(t, Tokenizer::kPad);
    std::vector<uint8_t> mask(t, 0);
    for (int i = 0; i < static_cast<int>(answer.size()); ++i) {
        targets[nq + i] = answer[i]; // SEP slot predicts a_0, a_i predicts a_{i+1}
        mask[nq + i] = 1;
    }
    targets[t - 1] = Tokenizer::kEos;
    mask[t - 1] = 1;
    return g.cross_entropy(logits, targets, mask);
}

// ---- uncompressed (full-context) counterparts ----

// Plain next-token loss over a document.
template <typename T>
Tensor<T> full_doc_loss(Graph<T>& g, const std::vector<int>& doc, const ModelParams<T>& base) {
    require(doc.size() >= 2, ErrKind::dimension, "full_doc_loss: document too short");
    std::vector<int> input(doc.begin(), doc.end() - 1);
    std::vector<int> positions(input.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    ForwardOptions<T> opts;
    auto res = forward_tokens(g, base, input, positions, opts);
    std::vector<int> targets(doc.begin() + 1, doc.end());
    std::vector<uint8_t> mask(targets.size(), 1);
    return g.cross_entropy(res.logits, targets, mask);
}

// One causal forward over [C ++ BOS ++ C'[:-1]], NLL over the C' targets.
// With an identity compression this matches loss_lm to float tolerance.
template <typename T>
Tensor<T> full_lm_loss(Graph<T>& g, const std::vector<int>& context, const std::vector<int>& future,
                       const ModelParams<T>& base) {
    require(!context.empty() && !future.empty(), ErrKind::dimension, "full_lm_loss: empty input");
    std::vector<int> input = context;
    input.push_back(Tokenizer::kBos);
    input.insert(input.end(), future.begin(), future.end() - 1);
    std::vector<int> positions(input.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    ForwardOptions<T> opts;
    auto res = forward_tokens(g, base, input, positions, opts);
    const int nc = static_cast<int>(context.size());
    const int t = static_cast<int>(future.size());
    auto tail = g.slice_rows(res.logits, nc, nc + t);
    std::vector<uint8_t> mask(t, 1);
    return g.cross_entropy(tail, future, mask);
}

// One causal forward over [C ++ Q ++ SEP ++ A], NLL over A plus EOS.
template <typename T>
Tensor<T> full_qa_loss(Graph<T>& g, const std::vector<int>& context, const std::vector<int>& question,
                       const std::vector<int>& answer, const ModelParams<T>& base) {
    require(!context.empty() && !answer.empty(), ErrKind::dimension, "full_qa_loss: empty input");
    std::vector<int> input = context;
    input.insert(input.end(), question.begin(), question.end());
    input.push_back(Tokenizer::kSep);
    input.insert(input.end(), answer.begin(), answer.end());
    std::vector<int> positions(input.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    ForwardOptions<T> opts;
    auto res = forward_tokens(g, base, input, positions, opts);
    const int t = static_cast<int>(input.size());
    const int n_ctx_q = static_cast<int>(context.size() + question.size());
    auto tail = g.slice_rows(res.logits, n_ctx_q, t); // SEP and A rows
    const int nt = t - n_ctx_q;
    std::vector<int> targets(nt, Tokenizer::kPad);
    std::vector<uint8_t> mask(nt, 1);
    for (int i = 0; i < static_cast<int>(answer.size()); ++i) targets[i] = answer[i];
    targets[nt - 1] = Tokenizer::kEos;
    return g.cross_entropy(tail, targets, mask);
}

} // namespace sac
