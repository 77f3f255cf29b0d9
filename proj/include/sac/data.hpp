#pragma once

#include "sac/error.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace sac {

enum class TokenizerMode { word, chars };

// Closed-vocabulary tokenizer. Ids 0..4 are reserved control tokens that raw
// text can never produce; word ids start after them.
class Tokenizer {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;
    static constexpr int kAe = 4;
    static constexpr int kNumReserved = 5;

    static Tokenizer build(TokenizerMode mode, const std::vector<std::string>& corpus);
    static Tokenizer from_vocab(TokenizerMode mode, std::vector<std::string> vocab);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    TokenizerMode mode() const { return mode_; }
    const std::vector<std::string>& vocab() const { return vocab_; }
    bool is_reserved(int id) const { return id >= 0 && id < kNumReserved; }

  private:
    TokenizerMode mode_ = TokenizerMode::word;
    std::vector<std::string> vocab_; // id -> token, reserved first
    std::unordered_map<std::string, int> lookup_;
};

struct QARecord {
    std::string context;
    std::string question;
    std::string answer;
    std::string id;
};

enum class Grammar { base, shifted };

struct LmCorpusConfig {
    int n_docs = 256;
    int len_min = 48;
    int len_max = 96;
    Grammar grammar = Grammar::base;
};

struct QaCorpusConfig {
    int n_records = 256;
    int facts_per_context = 6;
    bool ood = false; // held-out keys/values and a different fact template
    std::string id_prefix = "qa";
};

// Every word the synthetic generators can emit (both grammars, both QA
// domains), so one tokenizer covers train and eval.
std::vector<std::string> synthetic_vocabulary();

// Seeded entity-attribute sentences; one document per string, lengths uniform
// within [len_min, len_max] tokens.
std::vector<std::string> gen_lm_corpus(const LmCorpusConfig& cfg, uint64_t seed);

// Contexts are shuffled "key K is V ." facts with distinct keys; the question
// asks one of them back and the answer is that value (always a context
// substring).
std::vector<QARecord> gen_kv_retrieval_qa(const QaCorpusConfig& cfg, uint64_t seed);

std::vector<QARecord> load_jsonl(const std::string& path);
void save_jsonl(const std::string& path, const std::vector<QARecord>& records);

std::vector<std::string> load_text_corpus(const std::string& path); // one document per line
void save_text_corpus(const std::string& path, const std::vector<std::string>& docs);

} // namespace sac
