#pragma once

#include "sac/train.hpp"

#include <string>

namespace sac {

// One structured key-value file with sections drives every command; all
// randomness fans out from [train] seed.
struct RunConfig {
    // [model]
    ModelConfig model; // vocab_size comes from the tokenizer at build time

    // [compress]
    int ratio = 4;
    int chunk_len = 64;
    Strategy strategy = Strategy::uniform;
    std::string score_file;

    // [lora]
    int lora_rank = 8;
    double lora_alpha = 16.0;

    // [train]
    Method method = Method::sac;
    TrainConfig train;
    std::string objectives = "default"; // default | lm | ae | ae+lm
    std::string position_policy = "source_len";
    std::string base_checkpoint;

    // [data]
    std::string corpus_path; // plain text, one document per line
    std::string qa_path;     // jsonl
    int n_docs = 2048;
    int doc_len_min = 14;
    int doc_len_max = 28;
    int qa_records = 1024;
    int facts_per_context = 3;
    int eval_records = 200;
    bool ood_eval = false;
    int max_new_tokens = 8;

    // [out]
    std::string out_dir = "out";

    ObjectiveSet parse_objectives() const;
    PositionPolicy parse_policy() const;
    CompressionConfig compression() const;
    void validate() const;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
std::string default_config_text();

} // namespace sac
