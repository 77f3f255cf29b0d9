#pragma once

#include "sac/metrics.hpp"
#include "sac/train.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sac {

struct MetricReport {
    double f1 = 0;
    double em = 0;
    std::optional<double> ppl;
    int n_records = 0;
    std::string method;
    int ratio = 1;
};

// Greedy continuation after an encoded context. A non-empty question is fed
// as [Q ++ SEP]; an empty one decodes from the prefix alone, seeded with BOS.
// Stops at EOS, PAD, or max_new tokens.
std::vector<int> greedy_decode(const MethodState<float>& state, const std::vector<int>& context,
                               const std::vector<int>& question, int max_new);

// Compress each record's context, decode the answer greedily, and aggregate
// ROUGE-1 F1 / exact-match means.
MetricReport evaluate_qa(const MethodState<float>& state, const Tokenizer& tok,
                         const std::vector<QARecord>& records, int max_new = 8);

// exp(mean token NLL) over the future halves of the documents, conditioned on
// the method's compressed prefix (or the full context for Method::full).
double perplexity(const MethodState<float>& state, const std::vector<std::vector<int>>& docs,
                  int max_future = 32);

struct AttentionDump {
    int rows = 0, cols = 0;            // compression slots x context tokens
    std::vector<double> matrix;        // head-averaged, rows renormalized over context columns
    std::vector<int> row_positions;    // position id of each compression/anchor slot
    std::vector<std::string> col_labels;
};

// Final-layer attention from compression/anchor slots to context tokens,
// averaged over heads. Single-chunk contexts only.
AttentionDump dump_attention(const MethodState<float>& state, const Tokenizer& tok,
                             const std::vector<int>& context);
void write_attention_csv(const std::string& path, const AttentionDump& dump);

struct KvDumpRow {
    std::string label;  // "context" or "compressed"
    std::string method;
    int sample = 0;
    int position = 0;
    std::vector<float> k, v; // flattened final-layer heads, n_heads * d_head wide
};

// Final-layer K/V vectors for (a) context tokens under the frozen decoder and
// (b) the method's compression/anchor slots. KV-carrier methods only.
std::vector<KvDumpRow> dump_kv(const MethodState<float>& state,
                               const std::vector<std::vector<int>>& samples);
void write_kv_csv(const std::string& k_path, const std::string& v_path,
                  const std::vector<KvDumpRow>& rows);

} // namespace sac
