#include "sac/configfile.hpp"

#include <fstream>
#include <sstream>

namespace sac {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        int out = std::stoi(v, &used);
        require(used == v.size(), ErrKind::config, "");
        return out;
    } catch (...) {
        fail(ErrKind::config, "config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

double to_real(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        require(used == v.size(), ErrKind::config, "");
        return out;
    } catch (...) {
        fail(ErrKind::config, "config key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(ErrKind::config, "config key '" + key + "': expected a boolean, got '" + v + "'");
}

uint64_t to_u64(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        uint64_t out = std::stoull(v, &used);
        require(used == v.size(), ErrKind::config, "");
        return out;
    } catch (...) {
        fail(ErrKind::config, "config key '" + key + "': expected an unsigned integer, got '" + v + "'");
    }
}

} // namespace

ObjectiveSet RunConfig::parse_objectives() const {
    if (objectives == "default") return default_pretrain_objectives(method);
    ObjectiveSet s;
    if (objectives == "lm") {
        s.lm = true;
    } else if (objectives == "ae") {
        s.ae = true;
    } else if (objectives == "ae+lm" || objectives == "lm+ae") {
        s.ae = s.lm = true;
    } else {
        fail(ErrKind::config, "unknown objectives '" + objectives + "' (default|lm|ae|ae+lm)");
    }
    return s;
}

PositionPolicy RunConfig::parse_policy() const {
    if (position_policy == "source_len") return PositionPolicy::source_len;
    if (position_policy == "after_last_slot") return PositionPolicy::after_last_slot;
    fail(ErrKind::config, "unknown position_policy '" + position_policy + "'");
}

CompressionConfig RunConfig::compression() const {
    CompressionConfig c;
    c.ratio = ratio;
    c.chunk_len = chunk_len;
    c.strategy = strategy;
    c.selection_seed = sub_seed(train.seed, "selection");
    return c;
}

void RunConfig::validate() const {
    require(ratio >= 1, ErrKind::config, "compress.ratio must be >= 1");
    require(chunk_len >= 1, ErrKind::config, "compress.chunk_len must be >= 1");
    require(lora_rank >= 1, ErrKind::config, "lora.rank must be >= 1");
    require(doc_len_min >= 7 && doc_len_max >= doc_len_min, ErrKind::config, "bad [data] length range");
    require(max_new_tokens >= 0, ErrKind::config, "data.max_new_tokens must be >= 0");
    train.validate();
    (void)parse_objectives();
    (void)parse_policy();
    ModelConfig probe = model;
    probe.vocab_size = 1; // filled from the tokenizer later
    probe.validate();
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        if (t.front() == '[') {
            require(t.back() == ']', ErrKind::config, where + ": malformed section header");
            section = t.substr(1, t.size() - 2);
            continue;
        }
        auto eq = t.find('=');
        require(eq != std::string::npos, ErrKind::config, where + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const std::string qual = section + "." + key;

        if (qual == "model.n_layers") cfg.model.n_layers = to_int(value, qual);
        else if (qual == "model.n_heads") cfg.model.n_heads = to_int(value, qual);
        else if (qual == "model.d_model") cfg.model.d_model = to_int(value, qual);
        else if (qual == "model.d_ff") cfg.model.d_ff = to_int(value, qual);
        else if (qual == "model.max_positions") cfg.model.max_positions = to_int(value, qual);
        else if (qual == "model.rope_base") cfg.model.rope_base = to_real(value, qual);
        else if (qual == "compress.ratio") cfg.ratio = to_int(value, qual);
        else if (qual == "compress.chunk_len") cfg.chunk_len = to_int(value, qual);
        else if (qual == "compress.strategy") {
            if (value == "uniform") cfg.strategy = Strategy::uniform;
            else if (value == "random") cfg.strategy = Strategy::random;
            else if (value == "scored") cfg.strategy = Strategy::scored;
            else fail(ErrKind::config, where + ": unknown strategy '" + value + "'");
        }
        else if (qual == "compress.score_file") cfg.score_file = value;
        else if (qual == "lora.rank") cfg.lora_rank = to_int(value, qual);
        else if (qual == "lora.alpha") cfg.lora_alpha = to_real(value, qual);
        else if (qual == "train.method") cfg.method = method_from_name(value);
        else if (qual == "train.lr_pretrain") cfg.train.lr_pretrain = to_real(value, qual);
        else if (qual == "train.lr_finetune") cfg.train.lr_finetune = to_real(value, qual);
        else if (qual == "train.beta1") cfg.train.beta1 = to_real(value, qual);
        else if (qual == "train.beta2") cfg.train.beta2 = to_real(value, qual);
        else if (qual == "train.weight_decay") cfg.train.weight_decay = to_real(value, qual);
        else if (qual == "train.clip_norm") cfg.train.clip_norm = to_real(value, qual);
        else if (qual == "train.warmup_steps") cfg.train.warmup_steps = to_int(value, qual);
        else if (qual == "train.batch_size") cfg.train.batch_size = to_int(value, qual);
        else if (qual == "train.steps_pretrain") cfg.train.steps_pretrain = to_int(value, qual);
        else if (qual == "train.steps_finetune") cfg.train.steps_finetune = to_int(value, qual);
        else if (qual == "train.seed") cfg.train.seed = to_u64(value, qual);
        else if (qual == "train.objectives") cfg.objectives = value;
        else if (qual == "train.allow_ablation") cfg.train.allow_ablation = to_bool(value, qual);
        else if (qual == "train.position_policy") cfg.position_policy = value;
        else if (qual == "train.max_future_tokens") cfg.train.max_future_tokens = to_int(value, qual);
        else if (qual == "train.base_checkpoint") cfg.base_checkpoint = value;
        else if (qual == "data.corpus_path") cfg.corpus_path = value;
        else if (qual == "data.qa_path") cfg.qa_path = value;
        else if (qual == "data.n_docs") cfg.n_docs = to_int(value, qual);
        else if (qual == "data.doc_len_min") cfg.doc_len_min = to_int(value, qual);
        else if (qual == "data.doc_len_max") cfg.doc_len_max = to_int(value, qual);
        else if (qual == "data.qa_records") cfg.qa_records = to_int(value, qual);
        else if (qual == "data.facts_per_context") cfg.facts_per_context = to_int(value, qual);
        else if (qual == "data.eval_records") cfg.eval_records = to_int(value, qual);
        else if (qual == "data.ood_eval") cfg.ood_eval = to_bool(value, qual);
        else if (qual == "data.max_new_tokens") cfg.max_new_tokens = to_int(value, qual);
        else if (qual == "out.dir") cfg.out_dir = value;
        else fail(ErrKind::config, where + ": unknown key '" + qual + "'");
    }
    cfg.validate();
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrKind::config, "cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string default_config_text() {
    RunConfig d;
    std::ostringstream out;
    out << "# sacl run configuration (defaults shown)\n"
        << "[model]\n"
        << "n_layers = " << d.model.n_layers << "\n"
        << "n_heads = " << d.model.n_heads << "\n"
        << "d_model = " << d.model.d_model << "\n"
        << "d_ff = " << d.model.d_ff << "\n"
        << "max_positions = " << d.model.max_positions << "\n"
        << "rope_base = " << d.model.rope_base << "\n\n"
        << "[compress]\n"
        << "ratio = " << d.ratio << "\n"
        << "chunk_len = " << d.chunk_len << "\n"
        << "strategy = uniform\n"
        << "score_file =\n\n"
        << "[lora]\n"
        << "rank = " << d.lora_rank << "\n"
        << "alpha = " << d.lora_alpha << "\n\n"
        << "[train]\n"
        << "method = sac\n"
        << "lr_pretrain = " << d.train.lr_pretrain << "\n"
        << "lr_finetune = " << d.train.lr_finetune << "\n"
        << "beta1 = " << d.train.beta1 << "\n"
        << "beta2 = " << d.train.beta2 << "\n"
        << "weight_decay = " << d.train.weight_decay << "\n"
        << "clip_norm = " << d.train.clip_norm << "\n"
        << "warmup_steps = " << d.train.warmup_steps << "\n"
        << "batch_size = " << d.train.batch_size << "\n"
        << "steps_pretrain = " << d.train.steps_pretrain << "\n"
        << "steps_finetune = " << d.train.steps_finetune << "\n"
        << "seed = " << d.train.seed << "\n"
        << "objectives = default\n"
        << "allow_ablation = false\n"
        << "position_policy = source_len\n"
        << "max_future_tokens = " << d.train.max_future_tokens << "\n"
        << "base_checkpoint =\n\n"
        << "[data]\n"
        << "corpus_path =\n"
        << "qa_path =\n"
        << "n_docs = " << d.n_docs << "\n"
        << "doc_len_min = " << d.doc_len_min << "\n"
        << "doc_len_max = " << d.doc_len_max << "\n"
        << "qa_records = " << d.qa_records << "\n"
        << "facts_per_context = " << d.facts_per_context << "\n"
        << "eval_records = " << d.eval_records << "\n"
        << "ood_eval = false\n"
        << "max_new_tokens = " << d.max_new_tokens << "\n\n"
        << "[out]\n"
        << "dir = " << d.out_dir << "\n";
    return out.str();
}

} // namespace sac
