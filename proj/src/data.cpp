#include "sac/data.hpp"

#include "sac/rng.hpp"

#include <json.hpp>

#include <array>
#include <fstream>
#include <set>
#include <sstream>

namespace sac {

namespace {

const std::array<const char*, 5> kReservedNames = {"[PAD]", "[BOS]", "[EOS]", "[SEP]", "[AE]"};

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

// ---- synthetic word pools ----

const std::vector<std::string>& entities() {
    static const std::vector<std::string> v = {
        "arlo", "brim", "cade", "dove", "elms", "finn", "gale", "hart",
        "iris", "jude", "kite", "lark", "moss", "nile", "opal", "pike",
        "quin", "rook", "sage", "thorn", "umber", "vale", "wren", "yara"};
    return v;
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& attributes() {
    static const std::vector<std::pair<std::string, std::vector<std::string>>> v = {
        {"color", {"red", "blue", "green", "gold", "gray"}},
        {"size", {"tiny", "small", "large", "huge", "vast"}},
        {"shape", {"round", "square", "flat", "curved", "narrow"}},
        {"mood", {"calm", "bright", "stern", "gentle", "wild"}},
        {"rank", {"first", "second", "third", "fourth", "fifth"}},
        {"speed", {"slow", "brisk", "quick", "rapid", "swift"}},
        {"taste", {"sweet", "sour", "salty", "mild", "sharp"}},
        {"tone", {"low", "high", "soft", "loud", "clear"}}};
    return v;
}

const std::vector<std::string>& qa_keys() {
    static const std::vector<std::string> v = {
        "alpha", "bravo", "cedar", "delta", "ember", "frost", "grove", "haze",
        "ivory", "jet", "krill", "lunar", "maple", "nectar", "onyx", "pearl",
        "quartz", "raven", "slate", "topaz", "umbra", "veil", "willow", "xenon",
        "yarrow", "zephyr", "amber", "birch", "coral", "dusk", "echo", "fern",
        "gleam", "harbor", "inlet", "juniper", "kelp", "latch", "mirth", "noble",
        "orchid", "plume", "quill", "ridge", "spruce", "tide", "unity", "vortex"};
    return v;
}

const std::vector<std::string>& qa_values() {
    static const std::vector<std::string> v = {
        "apple", "baker", "candle", "domino", "engine", "falcon", "garnet", "hammer",
        "island", "jigsaw", "kettle", "lantern", "magnet", "needle", "oyster", "pepper",
        "quiver", "rocket", "saddle", "temple", "urchin", "velvet", "wagon", "xylem",
        "yonder", "zenith", "anchor", "beacon", "cobalt", "drift", "easel", "flint",
        "goblet", "helm", "ingot", "jasper", "knoll", "lotus", "mantle", "nugget",
        "orbit", "prism", "quarry", "rudder", "sphere", "trellis", "utensil", "vessel"};
    return v;
}

const std::vector<std::string>& template_words() {
    static const std::vector<std::string> v = {"the", "of", "is", ".", "has", "a",
                                               "key", "what", "?", "item", "equals"};
    return v;
}

std::string lm_sentence(Rng& rng, Grammar grammar) {
    const auto& ent = entities()[rng.below(entities().size())];
    const auto& attr = attributes()[rng.below(attributes().size())];
    const auto& val = attr.second[rng.below(attr.second.size())];
    if (grammar == Grammar::base) return "the " + attr.first + " of " + ent + " is " + val + " .";
    return ent + " has a " + attr.first + " of " + val + " .";
}

constexpr int kSentenceTokens = 7;

} // namespace

// ---- tokenizer ----

Tokenizer Tokenizer::from_vocab(TokenizerMode mode, std::vector<std::string> vocab) {
    require(vocab.size() >= kNumReserved, ErrKind::config, "vocabulary missing reserved tokens");
    for (int i = 0; i < kNumReserved; ++i)
        require(vocab[i] == kReservedNames[i], ErrKind::config, "reserved token table corrupted");
    Tokenizer t;
    t.mode_ = mode;
    t.vocab_ = std::move(vocab);
    for (size_t i = 0; i < t.vocab_.size(); ++i) t.lookup_[t.vocab_[i]] = static_cast<int>(i);
    require(t.lookup_.size() == t.vocab_.size(), ErrKind::config, "vocabulary has duplicate entries");
    return t;
}

Tokenizer Tokenizer::build(TokenizerMode mode, const std::vector<std::string>& corpus) {
    std::set<std::string> types;
    for (const auto& text : corpus) {
        if (mode == TokenizerMode::word) {
            for (auto& w : split_words(text)) types.insert(w);
        } else {
            for (char c : text) types.insert(std::string(1, c));
        }
    }
    for (auto& name : kReservedNames) types.erase(name);
    std::vector<std::string> vocab(kReservedNames.begin(), kReservedNames.end());
    vocab.insert(vocab.end(), types.begin(), types.end());
    return from_vocab(mode, std::move(vocab));
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    auto push = [&](const std::string& tok) {
        auto it = lookup_.find(tok);
        require(it != lookup_.end(), ErrKind::vocab, "token '" + tok + "' not in vocabulary");
        require(it->second >= kNumReserved, ErrKind::vocab,
                "raw text may not contain the reserved token '" + tok + "'");
        out.push_back(it->second);
    };
    if (mode_ == TokenizerMode::word) {
        for (auto& w : split_words(text)) push(w);
    } else {
        for (char c : text) push(std::string(1, c));
    }
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && ids[i] < vocab_size(), ErrKind::vocab, "token id out of range");
        if (mode_ == TokenizerMode::word && i > 0) out += ' ';
        out += vocab_[ids[i]];
    }
    return out;
}

// ---- generators ----

std::vector<std::string> synthetic_vocabulary() {
    std::set<std::string> types;
    for (auto& e : entities()) types.insert(e);
    for (auto& [attr, vals] : attributes()) {
        types.insert(attr);
        for (auto& v : vals) types.insert(v);
    }
    for (auto& k : qa_keys()) types.insert(k);
    for (auto& v : qa_values()) types.insert(v);
    for (auto& w : template_words()) types.insert(w);
    return {types.begin(), types.end()};
}

std::vector<std::string> gen_lm_corpus(const LmCorpusConfig& cfg, uint64_t seed) {
    require(cfg.n_docs >= 1, ErrKind::config, "gen_lm_corpus: need at least one document");
    require(cfg.len_min >= kSentenceTokens, ErrKind::config,
            "gen_lm_corpus: len_min below one sentence");
    require(cfg.len_max - cfg.len_min >= kSentenceTokens, ErrKind::config,
            "gen_lm_corpus: length range must span at least one sentence");
    Rng rng(seed);
    std::vector<std::string> docs;
    docs.reserve(cfg.n_docs);
    for (int i = 0; i < cfg.n_docs; ++i) {
        const int target = rng.range(cfg.len_min + kSentenceTokens - 1, cfg.len_max);
        std::string doc;
        int len = 0;
        while (len + kSentenceTokens <= target) {
            if (!doc.empty()) doc += ' ';
            doc += lm_sentence(rng, cfg.grammar);
            len += kSentenceTokens;
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::vector<QARecord> gen_kv_retrieval_qa(const QaCorpusConfig& cfg, uint64_t seed) {
    require(cfg.n_records >= 1, ErrKind::config, "gen_kv_retrieval_qa: need at least one record");
    require(cfg.facts_per_context >= 1, ErrKind::config, "gen_kv_retrieval_qa: facts_per_context >= 1");
    const auto& keys = qa_keys();
    const auto& values = qa_values();
    const int half = static_cast<int>(keys.size()) / 2;
    const int key_lo = cfg.ood ? half : 0;
    const int key_n = half;
    require(cfg.facts_per_context <= key_n, ErrKind::config,
            "gen_kv_retrieval_qa: more facts than distinct keys");
    Rng rng(seed);
    std::vector<QARecord> out;
    out.reserve(cfg.n_records);
    for (int i = 0; i < cfg.n_records; ++i) {
        auto key_idx = rng.sample_without_replacement(key_n, cfg.facts_per_context);
        std::vector<std::pair<std::string, std::string>> facts;
        for (int ki : key_idx) {
            const auto& k = keys[key_lo + ki];
            const auto& v = values[key_lo + static_cast<int>(rng.below(half))];
            facts.emplace_back(k, v);
        }
        rng.shuffle(facts);
        std::string context;
        for (auto& [k, v] : facts) {
            if (!context.empty()) context += ' ';
            if (cfg.ood)
                context += "item " + k + " equals " + v + " .";
            else
                context += "key " + k + " is " + v + " .";
        }
        const auto& asked = facts[rng.below(facts.size())];
        QARecord rec;
        rec.context = std::move(context);
        rec.question = "what is " + asked.first + " ?";
        rec.answer = asked.second;
        rec.id = cfg.id_prefix + "-" + std::to_string(i);
        out.push_back(std::move(rec));
    }
    return out;
}

// ---- file formats ----

std::vector<QARecord> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrKind::io, "cannot open '" + path + "'");
    std::vector<QARecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        require(!j.is_discarded() && j.is_object(), ErrKind::input,
                path + ":" + std::to_string(line_no) + ": not a JSON object");
        QARecord rec;
        for (const char* field : {"context", "question", "answer"}) {
            require(j.contains(field) && j[field].is_string(), ErrKind::input,
                    path + ":" + std::to_string(line_no) + ": missing string field '" + field + "'");
        }
        rec.context = j["context"].get<std::string>();
        rec.question = j["question"].get<std::string>();
        rec.answer = j["answer"].get<std::string>();
        rec.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                         : "line-" + std::to_string(line_no);
        require(!rec.answer.empty(), ErrKind::input,
                path + ":" + std::to_string(line_no) + ": empty answer");
        out.push_back(std::move(rec));
    }
    require(!out.empty(), ErrKind::input, path + ": empty corpus");
    return out;
}

void save_jsonl(const std::string& path, const std::vector<QARecord>& records) {
    std::ofstream out(path);
    require(out.good(), ErrKind::io, "cannot write '" + path + "'");
    for (const auto& r : records) {
        nlohmann::json j{{"context", r.context}, {"question", r.question}, {"answer", r.answer}, {"id", r.id}};
        out << j.dump() << '\n';
    }
}

std::vector<std::string> load_text_corpus(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrKind::io, "cannot open '" + path + "'");
    std::vector<std::string> docs;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) docs.push_back(line);
    require(!docs.empty(), ErrKind::input, path + ": empty corpus");
    return docs;
}

void save_text_corpus(const std::string& path, const std::vector<std::string>& docs) {
    std::ofstream out(path);
    require(out.good(), ErrKind::io, "cannot write '" + path + "'");
    for (const auto& d : docs) out << d << '\n';
}

} // namespace sac
