#pragma once

#include "sac/losses.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sac {

// One training example; exactly the fields of its kind are populated.
struct TrainSample {
    enum class Kind { ae, lm, qa };
    Kind kind = Kind::lm;
    std::vector<int> context;
    std::vector<int> future;   // lm
    std::vector<int> question; // qa
    std::vector<int> answer;   // qa

    static TrainSample make_ae(std::vector<int> c) {
        require(!c.empty(), ErrKind::dimension, "ae sample: empty context");
        TrainSample s;
        s.kind = Kind::ae;
        s.context = std::move(c);
        return s;
    }
    static TrainSample make_lm(std::vector<int> c, std::vector<int> fut) {
        require(!c.empty() && !fut.empty(), ErrKind::dimension, "lm sample: empty sequence");
        TrainSample s;
        s.kind = Kind::lm;
        s.context = std::move(c);
        s.future = std::move(fut);
        return s;
    }
    static TrainSample make_qa(std::vector<int> c, std::vector<int> q, std::vector<int> a) {
        require(!c.empty() && !q.empty() && !a.empty(), ErrKind::dimension, "qa sample: empty sequence");
        TrainSample s;
        s.kind = Kind::qa;
        s.context = std::move(c);
        s.question = std::move(q);
        s.answer = std::move(a);
        return s;
    }
};

// Documents are split in half for the future-prediction objective.
TrainSample lm_sample_from_doc(const std::vector<int>& doc, int max_future);
TrainSample qa_sample_from_record(const Tokenizer& tok, const QARecord& rec);

struct ObjectiveSet {
    bool ae = false, lm = false, qa = false;
};

ObjectiveSet default_pretrain_objectives(Method m);

struct TrainConfig {
    double lr_pretrain = 1e-4;
    double lr_finetune = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double clip_norm = 2.0;
    int warmup_steps = 300;
    int batch_size = 8;
    int steps_pretrain = 2000;
    int steps_finetune = 2000;
    uint64_t seed = 1;
    std::optional<ObjectiveSet> objectives; // pretrain override; default comes from the method
    bool allow_ablation = false;
    PositionPolicy position_policy = PositionPolicy::source_len;
    int max_future_tokens = 32;

    void validate() const {
        require(lr_pretrain > 0 && lr_finetune > 0, ErrKind::config, "learning rates must be positive");
        require(clip_norm > 0, ErrKind::config, "clip_norm must be positive");
        require(batch_size >= 1 && steps_pretrain >= 0 && steps_finetune >= 0 && warmup_steps >= 1,
                ErrKind::config, "invalid schedule");
    }
};

// Everything one method needs to encode contexts and train: the (frozen)
// base model, encoder LoRA, anchor embedding, optional compression-token
// bank, and the learned reconstruction trigger.
template <typename T>
struct MethodState {
    Method method = Method::sac;
    ModelParams<T> base;
    CompressorParams<T> comp;
    std::optional<CompressionTokenBank<T>> bank;
    Tensor<T> ae_trigger; // [d_model]
    CompressionConfig ccfg;
    PositionPolicy policy = PositionPolicy::source_len;

    std::vector<Tensor<T>> trainables() const {
        if (method == Method::full) return base.tensors();
        std::vector<Tensor<T>> out = comp.lora.tensors();
        if (method == Method::sac) out.push_back(comp.anchor_embedding);
        if (bank) out.push_back(bank->embeddings);
        out.push_back(ae_trigger);
        return out;
    }

    Encoded<T> encode(Graph<T>& g, const std::vector<int>& context,
                      AttentionCapture<T>* capture = nullptr) const {
        Encoded<T> out;
        switch (method) {
            case Method::full: {
                // the decoder's own cache over the uncompressed context
                std::vector<int> positions(context.size());
                for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
                ForwardOptions<T> opts;
                opts.capture = capture;
                auto res = forward_tokens(g, base, context, positions, opts);
                CompressedRepr<T> repr;
                repr.kv = std::move(res.kv);
                repr.source_len = static_cast<int>(context.size());
                repr.ratio = 1;
                repr.chunk_boundaries = {repr.source_len};
                repr.strategy = Strategy::uniform;
                out.repr = std::move(repr);
                return out;
            }
            case Method::sac: {
                if (capture && static_cast<int>(context.size()) <= ccfg.chunk_len) {
                    out.repr = compress_chunk(g, context, 0, ccfg, comp, base, capture);
                } else {
                    out.repr = compress_context(g, context, ccfg, comp, base);
                }
                return out;
            }
            default: {
                require(bank.has_value(), ErrKind::contract, "baseline method without a token bank");
                if (capture && static_cast<int>(context.size()) <= ccfg.chunk_len) {
                    return compress_appended<T>(g, context, 0, ccfg, *bank, &comp.lora, base, capture);
                }
                return compress_appended_context<T>(g, context, ccfg, *bank, &comp.lora, base);
            }
        }
    }
};

template <typename T>
MethodState<T> init_method_state(Method method, ModelParams<T> base, const CompressionConfig& ccfg,
                                 int lora_rank, T lora_alpha, uint64_t seed,
                                 PositionPolicy policy = PositionPolicy::source_len) {
    MethodState<T> s;
    s.method = method;
    s.base = std::move(base);
    s.ccfg = ccfg;
    s.policy = policy;
    s.comp = init_compressor<T>(s.base.config, lora_rank, lora_alpha, sub_seed(seed, "lora"));
    if (method == Method::icae || method == Method::x500 || method == Method::epl) {
        s.bank = init_bank<T>(s.base, ccfg.anchors_for(ccfg.chunk_len), bank_position_mode(method),
                              bank_carrier(method), sub_seed(seed, "bank"));
        s.ccfg.encoder_mask = MaskMode::causal; // baselines keep their causal encoders
    }
    s.ae_trigger = make_tensor<T>({s.base.config.d_model}, true, "ae_trigger");
    s.base.set_frozen(method != Method::full);
    return s;
}

// Per-sample loss under the method's encoder and the sample's objective.
template <typename T>
Tensor<T> sample_loss(Graph<T>& g, const MethodState<T>& state, const TrainSample& sample) {
    if (state.method == Method::full) {
        switch (sample.kind) {
            case TrainSample::Kind::lm: {
                std::vector<int> doc = sample.context;
                doc.insert(doc.end(), sample.future.begin(), sample.future.end());
                return full_doc_loss(g, doc, state.base);
            }
            case TrainSample::Kind::qa:
                return full_qa_loss(g, sample.context, sample.question, sample.answer, state.base);
            case TrainSample::Kind::ae:
                fail(ErrKind::config, "the uncompressed baseline has no reconstruction objective");
        }
    }
    auto enc = state.encode(g, sample.context);
    switch (sample.kind) {
        case TrainSample::Kind::ae:
            return loss_ae(g, enc, sample.context, state.base, state.ae_trigger, state.policy);
        case TrainSample::Kind::lm:
            return loss_lm(g, enc, sample.future, state.base, state.policy);
        case TrainSample::Kind::qa:
            return loss_qa(g, enc, sample.question, sample.answer, state.base, state.policy);
    }
    fail(ErrKind::contract, "unreachable sample kind");
}

// ---- optimizer ----

struct OptimState {
    struct Moments {
        std::vector<float> m, v;
    };
    std::vector<Moments> slots;
    int64_t step = 0;
};

OptimState init_optim(const std::vector<Tensor<float>>& params);

struct StepStats {
    double grad_norm = 0;         // pre-clip global norm
    double applied_grad_norm = 0; // post-clip
    double lr = 0;
};

// Decoupled-weight-decay Adam with bias correction, preceded by global-norm
// clipping. Rejects non-finite gradients.
StepStats adamw_step(const std::vector<Tensor<float>>& params, OptimState& state, double lr,
                     const TrainConfig& cfg);

double warmup_lr(double base_lr, int64_t step_1based, int warmup_steps);

// ---- training loops ----

struct TraceRow {
    int step = 0;
    double loss = 0;
    double lr = 0;
    double grad_norm = 0;
};

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);

// Stage one: autoencoding/future-prediction objectives over a document
// corpus (alternating batches when both are active).
void run_pretrain(MethodState<float>& state, OptimState& optim,
                  const std::vector<std::vector<int>>& docs, const TrainConfig& cfg,
                  std::vector<TraceRow>& trace);

// Stage two: answer prediction over QA samples.
void run_finetune(MethodState<float>& state, OptimState& optim,
                  const std::vector<TrainSample>& qa_samples, const TrainConfig& cfg,
                  std::vector<TraceRow>& trace);

} // namespace sac
