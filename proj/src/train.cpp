#include "sac/train.hpp"

#include <cmath>
#include <fstream>

namespace sac {

TrainSample lm_sample_from_doc(const std::vector<int>& doc, int max_future) {
    require(doc.size() >= 2, ErrKind::dimension, "document too short for a future-prediction sample");
    const int half = static_cast<int>(doc.size()) / 2;
    const int fut_end = std::min(static_cast<int>(doc.size()), half + std::max(1, max_future));
    return TrainSample::make_lm({doc.begin(), doc.begin() + half}, {doc.begin() + half, doc.begin() + fut_end});
}

TrainSample qa_sample_from_record(const Tokenizer& tok, const QARecord& rec) {
    return TrainSample::make_qa(tok.encode(rec.context), tok.encode(rec.question), tok.encode(rec.answer));
}

ObjectiveSet default_pretrain_objectives(Method m) {
    ObjectiveSet s;
    s.lm = true;
    s.ae = m == Method::icae || m == Method::x500 || m == Method::epl;
    return s;
}

OptimState init_optim(const std::vector<Tensor<float>>& params) {
    OptimState st;
    st.slots.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        st.slots[i].m.assign(params[i]->value.size(), 0.0f);
        st.slots[i].v.assign(params[i]->value.size(), 0.0f);
    }
    return st;
}

double warmup_lr(double base_lr, int64_t step_1based, int warmup_steps) {
    if (step_1based < warmup_steps) return base_lr * double(step_1based) / warmup_steps;
    return base_lr;
}

StepStats adamw_step(const std::vector<Tensor<float>>& params, OptimState& state, double lr,
                     const TrainConfig& cfg) {
    require(state.slots.size() == params.size(), ErrKind::contract, "optimizer state size mismatch");
    double sq = 0;
    for (auto& p : params) {
        p->ensure_grad();
        for (float gv : p->grad) {
            require(std::isfinite(gv), ErrKind::numeric,
                    "non-finite gradient in parameter '" + p->name + "'; step rejected");
            sq += double(gv) * gv;
        }
    }
    StepStats stats;
    stats.grad_norm = std::sqrt(sq);
    stats.lr = lr;
    const double scale = stats.grad_norm > cfg.clip_norm && stats.grad_norm > 0
                             ? cfg.clip_norm / stats.grad_norm
                             : 1.0;
    stats.applied_grad_norm = stats.grad_norm * scale;

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    constexpr double eps = 1e-8;
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        auto& mom = state.slots[i];
        // norm gains and other vectors are exempt from decay
        const double wd = p.shape.size() >= 2 ? cfg.weight_decay : 0.0;
        for (size_t j = 0; j < p.value.size(); ++j) {
            const double gv = double(p.grad[j]) * scale;
            mom.m[j] = static_cast<float>(cfg.beta1 * mom.m[j] + (1.0 - cfg.beta1) * gv);
            mom.v[j] = static_cast<float>(cfg.beta2 * mom.v[j] + (1.0 - cfg.beta2) * gv * gv);
            const double mhat = mom.m[j] / bc1;
            const double vhat = mom.v[j] / bc2;
            p.value[j] -= static_cast<float>(lr * (mhat / (std::sqrt(vhat) + eps) + wd * p.value[j]));
        }
    }
    return stats;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream out(path);
    require(out.good(), ErrKind::io, "cannot write '" + path + "'");
    out << "step,loss,lr,grad_norm\n";
    for (auto& r : trace)
        out << r.step << ',' << r.loss << ',' << r.lr << ',' << r.grad_norm << '\n';
}

namespace {

void train_steps(MethodState<float>& state, OptimState& optim, const TrainConfig& cfg, int steps,
                 double base_lr, std::vector<TraceRow>& trace,
                 const std::function<TrainSample(Rng&, int step)>& draw) {
    cfg.validate();
    auto params = state.trainables();
    require(optim.slots.size() == params.size(), ErrKind::contract,
            "optimizer state does not match the trainable set");
    Rng rng(sub_seed(cfg.seed, "batch"));
    for (int step = 1; step <= steps; ++step) {
        Graph<float> g;
        Tensor<float> total;
        for (int b = 0; b < cfg.batch_size; ++b) {
            auto loss = sample_loss(g, state, draw(rng, step));
            total = total ? g.add(total, loss) : loss;
        }
        total = g.scale(total, 1.0f / cfg.batch_size);
        const double loss_value = total->value[0];
        if (!std::isfinite(loss_value)) {
            fail(ErrKind::numeric, "non-finite loss at step " + std::to_string(step) + "; aborting");
        }
        g.backward(total);
        const double lr = warmup_lr(base_lr, optim.step + 1, cfg.warmup_steps);
        auto stats = adamw_step(params, optim, lr, cfg);
        zero_grads(params);
        trace.push_back({static_cast<int>(optim.step), loss_value, stats.lr, stats.applied_grad_norm});
    }
}

} // namespace

void run_pretrain(MethodState<float>& state, OptimState& optim,
                  const std::vector<std::vector<int>>& docs, const TrainConfig& cfg,
                  std::vector<TraceRow>& trace) {
    require(!docs.empty(), ErrKind::input, "pretraining corpus is empty");
    ObjectiveSet obj = cfg.objectives.value_or(default_pretrain_objectives(state.method));
    require(!obj.qa, ErrKind::config, "the answering objective belongs to finetuning");
    require(obj.ae || obj.lm, ErrKind::config, "pretraining needs at least one objective");
    if (state.method == Method::sac && obj.ae && !cfg.allow_ablation)
        fail(ErrKind::config,
             "sac pretrains with the future-prediction objective only; pass allow_ablation to override");
    if (state.method == Method::full)
        require(!obj.ae, ErrKind::config, "the uncompressed baseline has no reconstruction objective");

    train_steps(state, optim, cfg, cfg.steps_pretrain, cfg.lr_pretrain, trace,
                [&](Rng& rng, int step) {
                    const auto& doc = docs[rng.below(docs.size())];
                    const bool use_ae = obj.ae && (!obj.lm || step % 2 == 1);
                    if (use_ae) return TrainSample::make_ae(doc);
                    return lm_sample_from_doc(doc, cfg.max_future_tokens);
                });
}

void run_finetune(MethodState<float>& state, OptimState& optim,
                  const std::vector<TrainSample>& qa_samples, const TrainConfig& cfg,
                  std::vector<TraceRow>& trace) {
    require(!qa_samples.empty(), ErrKind::input, "finetuning corpus is empty");
    for (auto& s : qa_samples)
        require(s.kind == TrainSample::Kind::qa, ErrKind::config, "finetuning expects qa samples");
    train_steps(state, optim, cfg, cfg.steps_finetune, cfg.lr_finetune, trace,
                [&](Rng& rng, int) { return qa_samples[rng.below(qa_samples.size())]; });
}

} // namespace sac
