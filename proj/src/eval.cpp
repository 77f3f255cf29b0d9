#include "sac/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace sac {

namespace {

int argmax_row(const Tensor<float>& logits, int row) {
    const int vocab = logits->shape[1];
    int best = 0;
    float best_v = logits->at(row, 0);
    for (int c = 1; c < vocab; ++c) {
        if (logits->at(row, c) > best_v) {
            best_v = logits->at(row, c);
            best = c;
        }
    }
    return best;
}

} // namespace

std::vector<int> greedy_decode(const MethodState<float>& state, const std::vector<int>& context,
                               const std::vector<int>& question, int max_new) {
    if (max_new <= 0) return {};
    Graph<float> g(false);
    auto enc = state.encode(g, context);

    std::vector<int> cont = question;
    if (!question.empty())
        cont.push_back(Tokenizer::kSep);
    else
        cont.push_back(Tokenizer::kBos);
    auto dec = decode_after(g, enc, Tensor<float>{}, cont, state.base, state.policy);

    // running cache: encoded prefix slots (if any) plus everything fed so far
    KVCache<float> cache = enc.repr ? enc.repr->kv : KVCache<float>{};
    cache = concat_kv(g, cache, dec.fwd.kv);
    int next_pos = cache.positions.back() + 1;

    std::vector<int> out;
    int token = argmax_row(dec.fwd.logits, dec.fwd.logits->shape[0] - 1);
    for (int i = 0; i < max_new; ++i) {
        if (token == Tokenizer::kEos || token == Tokenizer::kPad) break;
        out.push_back(token);
        Graph<float> step(false);
        ForwardOptions<float> opts;
        opts.prefix = &cache;
        auto res = forward_tokens(step, state.base, {token}, {next_pos}, opts);
        ++next_pos;
        cache = concat_kv(step, cache, res.kv);
        token = argmax_row(res.logits, 0);
    }
    return out;
}

MetricReport evaluate_qa(const MethodState<float>& state, const Tokenizer& tok,
                         const std::vector<QARecord>& records, int max_new) {
    require(!records.empty(), ErrKind::input, "evaluate_qa: no records");
    MetricReport rep;
    rep.method = method_name(state.method);
    rep.ratio = state.method == Method::full ? 1 : state.ccfg.ratio;
    for (const auto& rec : records) {
        auto pred_ids = greedy_decode(state, tok.encode(rec.context), tok.encode(rec.question), max_new);
        const std::string pred = tok.decode(pred_ids);
        rep.f1 += rouge1_f1(pred, rec.answer);
        rep.em += exact_match(pred, rec.answer);
    }
    rep.n_records = static_cast<int>(records.size());
    rep.f1 /= rep.n_records;
    rep.em /= rep.n_records;
    return rep;
}

double perplexity(const MethodState<float>& state, const std::vector<std::vector<int>>& docs,
                  int max_future) {
    require(!docs.empty(), ErrKind::input, "perplexity: empty evaluation set");
    double total_nll = 0;
    int64_t total_tokens = 0;
    for (const auto& doc : docs) {
        auto sample = lm_sample_from_doc(doc, max_future);
        Graph<float> g(false);
        Tensor<float> loss;
        if (state.method == Method::full) {
            loss = full_lm_loss(g, sample.context, sample.future, state.base);
        } else {
            auto enc = state.encode(g, sample.context);
            loss = loss_lm(g, enc, sample.future, state.base, state.policy);
        }
        total_nll += double(loss->value[0]) * sample.future.size();
        total_tokens += static_cast<int64_t>(sample.future.size());
    }
    return std::exp(total_nll / double(total_tokens));
}

AttentionDump dump_attention(const MethodState<float>& state, const Tokenizer& tok,
                             const std::vector<int>& context) {
    const int t = static_cast<int>(context.size());
    require(t >= 1 && t <= state.ccfg.chunk_len, ErrKind::config,
            "attention dumps cover single-chunk contexts only");
    Graph<float> g(false);
    AttentionCapture<float> cap;
    auto enc = state.encode(g, context, &cap);
    require(!cap.head_probs.empty(), ErrKind::contract, "encoder did not expose attention");

    // query rows: anchor slots (sac/full: indices into the context; baselines:
    // the appended compression slots). context columns: the first t keys.
    std::vector<int> query_rows;
    if (enc.repr && cap.q_len == t) {
        for (int i = 0; i < enc.repr->kv.slots(); ++i) {
            int pos = enc.repr->kv.positions[i];
            query_rows.push_back(pos);
        }
    } else {
        const int slots = enc.slot_count();
        for (int i = 0; i < slots; ++i) query_rows.push_back(t + i);
    }

    AttentionDump dump;
    dump.rows = static_cast<int>(query_rows.size());
    dump.cols = t;
    dump.matrix.assign(static_cast<size_t>(dump.rows) * t, 0.0);
    const int n_heads = static_cast<int>(cap.head_probs.size());
    for (int r = 0; r < dump.rows; ++r) {
        const int q = query_rows[r];
        require(q >= 0 && q < cap.q_len, ErrKind::contract, "capture row out of range");
        for (int c = 0; c < t; ++c) {
            double sum = 0;
            for (int h = 0; h < n_heads; ++h)
                sum += cap.head_probs[h][static_cast<size_t>(q) * cap.kv_len + c];
            dump.matrix[static_cast<size_t>(r) * t + c] = sum / n_heads;
        }
        double row_sum = 0;
        for (int c = 0; c < t; ++c) row_sum += dump.matrix[static_cast<size_t>(r) * t + c];
        require(row_sum > 0, ErrKind::numeric, "attention row collapsed to zero");
        for (int c = 0; c < t; ++c) dump.matrix[static_cast<size_t>(r) * t + c] /= row_sum;
    }
    if (enc.repr)
        dump.row_positions = enc.repr->kv.positions;
    else
        for (int r = 0; r < dump.rows; ++r) dump.row_positions.push_back(t + r);
    for (int c = 0; c < t; ++c)
        dump.col_labels.push_back(std::to_string(c) + ":" + tok.decode({context[c]}));
    return dump;
}

void write_attention_csv(const std::string& path, const AttentionDump& dump) {
    std::ofstream out(path);
    require(out.good(), ErrKind::io, "cannot write '" + path + "'");
    out << "slot_position";
    for (auto& l : dump.col_labels) out << ',' << l;
    out << '\n';
    for (int r = 0; r < dump.rows; ++r) {
        out << dump.row_positions[r];
        for (int c = 0; c < dump.cols; ++c) out << ',' << dump.matrix[static_cast<size_t>(r) * dump.cols + c];
        out << '\n';
    }
}

std::vector<KvDumpRow> dump_kv(const MethodState<float>& state,
                               const std::vector<std::vector<int>>& samples) {
    require(state.method != Method::icae, ErrKind::config,
            "the last-layer soft carrier has no per-layer kv to dump");
    std::vector<KvDumpRow> rows;
    const int last = state.base.config.n_layers - 1;
    for (size_t s = 0; s < samples.size(); ++s) {
        const auto& context = samples[s];
        Graph<float> g(false);
        // (a) context tokens under the frozen decoder
        std::vector<int> positions(context.size());
        for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
        ForwardOptions<float> opts;
        auto own_kv = forward_tokens(g, state.base, context, positions, opts);
        for (int i = 0; i < static_cast<int>(context.size()); ++i) {
            KvDumpRow row;
            row.label = "context";
            row.method = method_name(state.method);
            row.sample = static_cast<int>(s);
            row.position = i;
            const int d = state.base.config.d_model;
            row.k.assign(own_kv.kv.layers[last].k->value.begin() + static_cast<size_t>(i) * d,
                         own_kv.kv.layers[last].k->value.begin() + static_cast<size_t>(i + 1) * d);
            row.v.assign(own_kv.kv.layers[last].v->value.begin() + static_cast<size_t>(i) * d,
                         own_kv.kv.layers[last].v->value.begin() + static_cast<size_t>(i + 1) * d);
            rows.push_back(std::move(row));
        }
        // (b) the method's compression/anchor slots
        auto enc = state.encode(g, context);
        require(enc.repr.has_value(), ErrKind::contract, "kv dump expects a kv carrier");
        const auto& kv = enc.repr->kv;
        for (int i = 0; i < kv.slots(); ++i) {
            KvDumpRow row;
            row.label = "compressed";
            row.method = method_name(state.method);
            row.sample = static_cast<int>(s);
            row.position = kv.positions[i];
            const int d = state.base.config.d_model;
            row.k.assign(kv.layers[last].k->value.begin() + static_cast<size_t>(i) * d,
                         kv.layers[last].k->value.begin() + static_cast<size_t>(i + 1) * d);
            row.v.assign(kv.layers[last].v->value.begin() + static_cast<size_t>(i) * d,
                         kv.layers[last].v->value.begin() + static_cast<size_t>(i + 1) * d);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_kv_csv(const std::string& k_path, const std::string& v_path,
                  const std::vector<KvDumpRow>& rows) {
    require(!rows.empty(), ErrKind::input, "kv dump is empty");
    const size_t width = rows[0].k.size();
    for (auto* path : {&k_path, &v_path}) {
        std::ofstream out(*path);
        require(out.good(), ErrKind::io, "cannot write '" + *path + "'");
        out << "label,method,sample,position";
        for (size_t i = 0; i < width; ++i) out << ",d" << i;
        out << '\n';
        for (const auto& r : rows) {
            const auto& vec = path == &k_path ? r.k : r.v;
            out << r.label << ',' << r.method << ',' << r.sample << ',' << r.position;
            for (float v : vec) out << ',' << v;
            out << '\n';
        }
    }
}

} // namespace sac
