#pragma once

#include "sac/data.hpp"
#include "sac/train.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace sac {

// Checkpoint layout ("SACL", little-endian): header with a digest of the
// model-config block, the config itself, the tokenizer vocabulary, the
// method/compression block, a named tensor table with role flags, and
// optional optimizer state. Every load(save(x)) round-trip is bit-exact.
struct Checkpoint {
    MethodState<float> state;
    Tokenizer tokenizer;
    std::optional<OptimState> optim;
};

uint64_t model_config_digest(const ModelConfig& cfg);

void save_checkpoint(const std::string& path, const MethodState<float>& state, const Tokenizer& tok,
                     const OptimState* optim = nullptr);
Checkpoint load_checkpoint(const std::string& path);

// KV blob layout ("SKVB", little-endian): geometry header, slot positions,
// then per layer the raw K and V arrays.
struct KVBlobHeader {
    int n_layers = 0, n_heads = 0, d_head = 0;
    int slot_count = 0, source_len = 0, ratio = 1;
    Strategy strategy = Strategy::uniform;
};

void save_kv_blob(const std::string& path, const CompressedRepr<float>& repr, const ModelConfig& cfg);
KVBlobHeader peek_kv_blob(const std::string& path);
CompressedRepr<float> load_kv_blob(const std::string& path, const ModelConfig& cfg);

// FNV-1a over a file's bytes; used by determinism checks.
uint64_t digest_file(const std::string& path);

} // namespace sac
