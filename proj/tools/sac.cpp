// sacl: train, compress, and evaluate anchor-token context compression on a
// desk-scale transformer.

#include <CLI11.hpp>

#include "sac/configfile.hpp"
#include "sac/eval.hpp"
#include "sac/serialize.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace sac;

namespace {

struct DataBundle {
    Tokenizer tok;
    std::vector<std::vector<int>> docs;
    std::vector<QARecord> qa_train;
    std::vector<QARecord> qa_eval;
    std::vector<std::vector<int>> eval_docs;
};

std::vector<int> qa_transcript(const Tokenizer& tok, const QARecord& r) {
    auto doc = tok.encode(r.context);
    auto q = tok.encode(r.question);
    doc.insert(doc.end(), q.begin(), q.end());
    doc.push_back(Tokenizer::kSep);
    auto a = tok.encode(r.answer);
    doc.insert(doc.end(), a.begin(), a.end());
    doc.push_back(Tokenizer::kEos);
    return doc;
}

DataBundle assemble_data(const RunConfig& cfg, const Tokenizer* fixed_tok) {
    DataBundle data;
    std::vector<std::string> raw_docs;
    if (!cfg.corpus_path.empty()) {
        raw_docs = load_text_corpus(cfg.corpus_path);
    } else {
        LmCorpusConfig lc;
        lc.n_docs = cfg.n_docs;
        lc.len_min = cfg.doc_len_min;
        lc.len_max = cfg.doc_len_max;
        raw_docs = gen_lm_corpus(lc, sub_seed(cfg.train.seed, "data-lm"));
    }
    if (!cfg.qa_path.empty()) {
        data.qa_train = load_jsonl(cfg.qa_path);
        data.qa_eval = data.qa_train;
    } else {
        QaCorpusConfig qc;
        qc.n_records = cfg.qa_records;
        qc.facts_per_context = cfg.facts_per_context;
        qc.id_prefix = "train";
        data.qa_train = gen_kv_retrieval_qa(qc, sub_seed(cfg.train.seed, "data-qa"));
        qc.n_records = cfg.eval_records;
        qc.ood = cfg.ood_eval;
        qc.id_prefix = cfg.ood_eval ? "ood-eval" : "eval";
        data.qa_eval = gen_kv_retrieval_qa(qc, sub_seed(cfg.train.seed, "data-qa-eval"));
    }

    if (fixed_tok) {
        data.tok = *fixed_tok;
    } else {
        std::vector<std::string> vocab_sources = synthetic_vocabulary();
        for (auto& d : raw_docs) vocab_sources.push_back(d);
        for (auto& r : data.qa_train) {
            vocab_sources.push_back(r.context);
            vocab_sources.push_back(r.question);
            vocab_sources.push_back(r.answer);
        }
        data.tok = Tokenizer::build(TokenizerMode::word, vocab_sources);
    }

    for (auto& d : raw_docs) data.docs.push_back(data.tok.encode(d));

    if (!cfg.corpus_path.empty()) {
        data.eval_docs = data.docs;
        if (data.eval_docs.size() > 256) data.eval_docs.resize(256);
    } else {
        LmCorpusConfig lc;
        lc.n_docs = std::min(cfg.eval_records, 256);
        lc.len_min = cfg.doc_len_min;
        lc.len_max = cfg.doc_len_max;
        for (auto& d : gen_lm_corpus(lc, sub_seed(cfg.train.seed, "data-lm-eval")))
            data.eval_docs.push_back(data.tok.encode(d));
    }
    return data;
}

std::string checkpoint_stem(const RunConfig& cfg) {
    if (cfg.method == Method::full) return "full";
    return std::string(method_name(cfg.method)) + "-r" + std::to_string(cfg.ratio);
}

std::string config_path_or_env(std::string from_flag) {
    if (!from_flag.empty()) return from_flag;
    if (const char* env = std::getenv("SAC_CONFIG")) return env;
    return "";
}

RunConfig load_run_config(const std::string& flag_path) {
    auto path = config_path_or_env(flag_path);
    require(!path.empty(), ErrKind::config, "no config file given (use --config or SAC_CONFIG)");
    return parse_config_file(path);
}

MethodState<float> build_state(const RunConfig& cfg, const DataBundle& data,
                               const Checkpoint* base_ckpt) {
    ModelConfig mc = cfg.model;
    mc.vocab_size = data.tok.vocab_size();
    CompressionConfig ccfg = cfg.compression();
    if (cfg.strategy == Strategy::scored && !cfg.score_file.empty()) {
        std::ifstream in(cfg.score_file);
        require(in.good(), ErrKind::io, "cannot open score file '" + cfg.score_file + "'");
        double v;
        while (in >> v) ccfg.scores.push_back(v);
    }
    if (cfg.method == Method::full) {
        return init_method_state<float>(Method::full, init_model<float>(mc, sub_seed(cfg.train.seed, "init")),
                                        ccfg, cfg.lora_rank, static_cast<float>(cfg.lora_alpha),
                                        sub_seed(cfg.train.seed, "init"), cfg.parse_policy());
    }
    require(base_ckpt != nullptr, ErrKind::config,
            "method '" + std::string(method_name(cfg.method)) + "' needs train.base_checkpoint");
    require(base_ckpt->state.base.config.same_geometry(mc), ErrKind::config,
            "base checkpoint geometry disagrees with [model] (use matching settings)");
    ModelParams<float> base = base_ckpt->state.base; // tensors shared; frozen below
    auto state = init_method_state<float>(cfg.method, std::move(base), ccfg, cfg.lora_rank,
                                          static_cast<float>(cfg.lora_alpha),
                                          sub_seed(cfg.train.seed, "init"), cfg.parse_policy());
    return state;
}

int cmd_pretrain(const std::string& config_path) {
    auto cfg = load_run_config(config_path);
    std::optional<Checkpoint> base;
    std::optional<Tokenizer> tok;
    if (cfg.method != Method::full) {
        require(!cfg.base_checkpoint.empty(), ErrKind::config,
                "compressor methods need train.base_checkpoint");
        base = load_checkpoint(cfg.base_checkpoint);
        tok = base->tokenizer;
    }
    auto data = assemble_data(cfg, tok ? &*tok : nullptr);
    auto state = build_state(cfg, data, base ? &*base : nullptr);

    auto corpus = data.docs;
    if (cfg.method == Method::full) {
        // the base model learns both plain text and the QA transcript format
        for (auto& r : data.qa_train) corpus.push_back(qa_transcript(data.tok, r));
    }

    TrainConfig tcfg = cfg.train;
    tcfg.objectives = cfg.parse_objectives();
    tcfg.position_policy = cfg.parse_policy();

    std::filesystem::create_directories(cfg.out_dir);
    const std::string stem = cfg.out_dir + "/" + checkpoint_stem(cfg);
    auto optim = init_optim(state.trainables());
    std::vector<TraceRow> trace;
    try {
        run_pretrain(state, optim, corpus, tcfg, trace);
    } catch (const Error& e) {
        write_trace_csv(stem + "-pre-trace.csv", trace);
        throw;
    }
    write_trace_csv(stem + "-pre-trace.csv", trace);
    save_checkpoint(stem + "-pre.ckpt", state, data.tok, &optim);
    std::cout << "wrote " << stem << "-pre.ckpt (" << trace.size() << " steps, final loss "
              << (trace.empty() ? 0.0 : trace.back().loss) << ")\n";
    return 0;
}

int cmd_finetune(const std::string& config_path, const std::string& from, bool force) {
    auto cfg = load_run_config(config_path);
    auto ckpt = load_checkpoint(from);
    ModelConfig expect = cfg.model;
    expect.vocab_size = ckpt.state.base.config.vocab_size;
    if (model_config_digest(expect) != model_config_digest(ckpt.state.base.config)) {
        require(force, ErrKind::config,
                "checkpoint config digest disagrees with [model]; pass --force to override");
    }
    require(ckpt.state.method == cfg.method, ErrKind::config,
            "checkpoint was trained with method '" +
                std::string(method_name(ckpt.state.method)) + "' but the config says '" +
                method_name(cfg.method) + "'");

    auto data = assemble_data(cfg, &ckpt.tokenizer);
    std::vector<TrainSample> samples;
    for (auto& r : data.qa_train) samples.push_back(qa_sample_from_record(data.tok, r));

    TrainConfig tcfg = cfg.train;
    tcfg.position_policy = cfg.parse_policy();

    std::filesystem::create_directories(cfg.out_dir);
    const std::string stem = cfg.out_dir + "/" + checkpoint_stem(cfg);
    auto optim = ckpt.optim ? *ckpt.optim : init_optim(ckpt.state.trainables());
    std::vector<TraceRow> trace;
    try {
        run_finetune(ckpt.state, optim, samples, tcfg, trace);
    } catch (const Error& e) {
        write_trace_csv(stem + "-ft-trace.csv", trace);
        throw;
    }
    write_trace_csv(stem + "-ft-trace.csv", trace);
    save_checkpoint(stem + "-ft.ckpt", ckpt.state, data.tok, &optim);
    std::cout << "wrote " << stem << "-ft.ckpt (" << trace.size() << " steps, final loss "
              << (trace.empty() ? 0.0 : trace.back().loss) << ")\n";
    return 0;
}

int cmd_compress(const std::string& from, const std::string& input, int ratio,
                 const std::string& out, const std::string& score_file) {
    require(ratio >= 1, ErrKind::config, "--ratio must be >= 1");
    auto ckpt = load_checkpoint(from);
    std::ifstream in(input);
    require(in.good(), ErrKind::io, "cannot open '" + input + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    auto tokens = ckpt.tokenizer.encode(buf.str());
    require(!tokens.empty(), ErrKind::input, "'" + input + "' holds no tokens");

    auto& state = ckpt.state;
    state.ccfg.ratio = ratio;
    if (!score_file.empty()) {
        std::ifstream sf(score_file);
        require(sf.good(), ErrKind::io, "cannot open score file '" + score_file + "'");
        state.ccfg.scores.clear();
        double v;
        while (sf >> v) state.ccfg.scores.push_back(v);
        state.ccfg.strategy = Strategy::scored;
    }
    Graph<float> g(false);
    auto enc = state.encode(g, tokens);
    require(enc.repr.has_value(), ErrKind::config,
            "the soft-token carrier cannot be serialized as a kv blob");
    save_kv_blob(out, *enc.repr, state.base.config);
    std::cout << "wrote " << out << ": " << enc.repr->kv.slots() << " slots, "
              << std::filesystem::file_size(out) << " bytes\n";
    return 0;
}

int cmd_generate(const std::string& from, const std::string& blob, const std::string& question,
                 int max_new) {
    auto ckpt = load_checkpoint(from);
    auto repr = load_kv_blob(blob, ckpt.state.base.config);
    Encoded<float> enc;
    enc.repr = std::move(repr);

    std::vector<int> cont =
        question.empty() ? std::vector<int>{Tokenizer::kBos} : ckpt.tokenizer.encode(question);
    if (!question.empty()) cont.push_back(Tokenizer::kSep);
    if (max_new <= 0) {
        std::cout << "\n";
        return 0;
    }
    Graph<float> g(false);
    auto dec = decode_after(g, enc, Tensor<float>{}, cont, ckpt.state.base, ckpt.state.policy);
    KVCache<float> cache = concat_kv(g, enc.repr->kv, dec.fwd.kv);
    int next_pos = cache.positions.back() + 1;
    std::vector<int> out_ids;
    int token = [&] {
        int best = 0;
        for (int c = 1; c < ckpt.state.base.config.vocab_size; ++c)
            if (dec.fwd.logits->at(dec.fwd.logits->shape[0] - 1, c) >
                dec.fwd.logits->at(dec.fwd.logits->shape[0] - 1, best))
                best = c;
        return best;
    }();
    for (int i = 0; i < max_new; ++i) {
        if (token == Tokenizer::kEos || token == Tokenizer::kPad) break;
        out_ids.push_back(token);
        Graph<float> step(false);
        ForwardOptions<float> opts;
        opts.prefix = &cache;
        auto res = forward_tokens(step, ckpt.state.base, {token}, {next_pos++}, opts);
        cache = concat_kv(step, cache, res.kv);
        int best = 0;
        for (int c = 1; c < ckpt.state.base.config.vocab_size; ++c)
            if (res.logits->at(0, c) > res.logits->at(0, best)) best = c;
        token = best;
    }
    std::cout << ckpt.tokenizer.decode(out_ids) << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_dir,
             const std::vector<std::string>& methods, const std::vector<int>& ratios,
             const std::string& stage, const std::string& out_csv) {
    auto cfg = load_run_config(config_path);
    std::ofstream csv;
    if (!out_csv.empty()) {
        csv.open(out_csv);
        require(csv.good(), ErrKind::io, "cannot write '" + out_csv + "'");
        csv << "method,ratio,f1,em,ppl,n_records\n";
    }
    std::cout << "method    ratio      F1      EM     PPL  records\n";
    for (const auto& mname : methods) {
        Method m = method_from_name(mname);
        for (int r : ratios) {
            std::string stem = m == Method::full
                                   ? ckpt_dir + "/full"
                                   : ckpt_dir + "/" + std::string(method_name(m)) + "-r" + std::to_string(r);
            auto ckpt = load_checkpoint(stem + "-" + stage + ".ckpt");
            auto data = assemble_data(cfg, &ckpt.tokenizer);
            auto report = evaluate_qa(ckpt.state, ckpt.tokenizer, data.qa_eval, cfg.max_new_tokens);
            report.ppl = perplexity(ckpt.state, data.eval_docs, cfg.train.max_future_tokens);
            std::printf("%-9s %5d  %6.2f  %6.2f  %6.2f  %7d\n", report.method.c_str(), report.ratio,
                        report.f1 * 100, report.em * 100, *report.ppl, report.n_records);
            if (csv.is_open())
                csv << report.method << ',' << report.ratio << ',' << report.f1 << ',' << report.em
                    << ',' << *report.ppl << ',' << report.n_records << '\n';
            if (m == Method::full) break; // ratio does not apply
        }
    }
    return 0;
}

int cmd_dump_attention(const std::string& from, const std::string& input, const std::string& out) {
    auto ckpt = load_checkpoint(from);
    std::ifstream in(input);
    require(in.good(), ErrKind::io, "cannot open '" + input + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    auto tokens = ckpt.tokenizer.encode(buf.str());
    auto dump = dump_attention(ckpt.state, ckpt.tokenizer, tokens);
    write_attention_csv(out, dump);
    std::cout << "wrote " << out << ": " << dump.rows << " slots x " << dump.cols << " context tokens\n";
    return 0;
}

int cmd_dump_kv(const std::string& from, const std::string& input, const std::string& out_k,
                const std::string& out_v) {
    auto ckpt = load_checkpoint(from);
    std::vector<std::vector<int>> samples;
    for (auto& line : load_text_corpus(input)) samples.push_back(ckpt.tokenizer.encode(line));
    auto rows = dump_kv(ckpt.state, samples);
    write_kv_csv(out_k, out_v, rows);
    std::cout << "wrote " << rows.size() << " labeled vectors to " << out_k << " and " << out_v << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"anchor-token context compression on a desk-scale transformer"};
    app.require_subcommand(1);

    std::string config_path, from, input, out, blob, question, score_file, ckpt_dir = "out";
    std::string stage = "ft", out_csv, out_k, out_v;
    std::vector<std::string> methods{"sac"};
    std::vector<int> ratios{4};
    int ratio = 4, max_new = 8;
    bool force = false;

    auto* pre = app.add_subcommand("pretrain", "stage-one training from a config file");
    pre->add_option("--config", config_path, "config file (or SAC_CONFIG)");

    auto* ft = app.add_subcommand("finetune", "stage-two answer-objective training");
    ft->add_option("--config", config_path, "config file (or SAC_CONFIG)");
    ft->add_option("--from", from, "checkpoint to continue from")->required();
    ft->add_flag("--force", force, "ignore config digest mismatches");

    auto* comp = app.add_subcommand("compress", "compress a text file into a kv blob");
    comp->add_option("--from", from, "trained checkpoint")->required();
    comp->add_option("--input", input, "plain-text file")->required();
    comp->add_option("--ratio", ratio, "compression ratio");
    comp->add_option("--scores", score_file, "per-token importance scores (one per line)");
    comp->add_option("--out", out, "blob path")->required();

    auto* gen = app.add_subcommand("generate", "greedy decoding conditioned on a kv blob");
    gen->add_option("--from", from, "trained checkpoint")->required();
    gen->add_option("--blob", blob, "compressed representation")->required();
    gen->add_option("--question", question, "question text (empty: continue the prefix)");
    gen->add_option("--max-new", max_new, "token budget");

    auto* ev = app.add_subcommand("eval", "QA metrics over a methods x ratios grid");
    ev->add_option("--config", config_path, "config file (or SAC_CONFIG)");
    ev->add_option("--ckpt-dir", ckpt_dir, "checkpoint directory");
    ev->add_option("--methods", methods, "methods to evaluate")->delimiter(',');
    ev->add_option("--ratios", ratios, "ratios to evaluate")->delimiter(',');
    ev->add_option("--stage", stage, "checkpoint stage suffix (pre|ft)");
    ev->add_option("--out", out_csv, "metrics csv path");

    auto* da = app.add_subcommand("dump-attention", "final-layer slot-to-context attention map");
    da->add_option("--from", from, "trained checkpoint")->required();
    da->add_option("--input", input, "plain-text file (single chunk)")->required();
    da->add_option("--out", out, "csv path")->required();

    auto* dk = app.add_subcommand("dump-kv", "final-layer K/V vectors for external projection");
    dk->add_option("--from", from, "trained checkpoint")->required();
    dk->add_option("--input", input, "text file, one sample per line")->required();
    dk->add_option("--out-k", out_k, "keys csv")->required();
    dk->add_option("--out-v", out_v, "values csv")->required();

    auto* pc = app.add_subcommand("print-config", "print the default configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pre->parsed()) return cmd_pretrain(config_path);
        if (ft->parsed()) return cmd_finetune(config_path, from, force);
        if (comp->parsed()) return cmd_compress(from, input, ratio, out, score_file);
        if (gen->parsed()) return cmd_generate(from, blob, question, max_new);
        if (ev->parsed()) return cmd_eval(config_path, ckpt_dir, methods, ratios, stage, out_csv);
        if (da->parsed()) return cmd_dump_attention(from, input, out);
        if (dk->parsed()) return cmd_dump_kv(from, input, out_k, out_v);
        if (pc->parsed()) {
            std::cout << default_config_text();
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == ErrKind::numeric ? 3 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
