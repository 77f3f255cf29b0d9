#include "sac/serialize.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

namespace sac {

namespace {

constexpr uint32_t kCheckpointVersion = 1;
constexpr uint32_t kBlobVersion = 1;

class Writer {
  public:
    explicit Writer(const std::string& path) : final_path_(path), tmp_path_(path + ".tmp"), out_(tmp_path_, std::ios::binary) {
        require(out_.good(), ErrKind::io, "cannot write '" + tmp_path_ + "'");
    }
    ~Writer() {
        if (!committed_) {
            out_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_path_, ec);
        }
    }
    template <typename T>
    void pod(T v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void bytes(const void* data, size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
    void str(const std::string& s) {
        require(s.size() <= UINT16_MAX, ErrKind::io, "string too long for checkpoint");
        pod<uint16_t>(static_cast<uint16_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void floats(const std::vector<float>& v) { bytes(v.data(), v.size() * sizeof(float)); }
    void commit() {
        out_.flush();
        require(out_.good(), ErrKind::io, "write failed for '" + tmp_path_ + "'");
        out_.close();
        std::filesystem::rename(tmp_path_, final_path_);
        committed_ = true;
    }

  private:
    std::string final_path_, tmp_path_;
    std::ofstream out_;
    bool committed_ = false;
};

class Reader {
  public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        require(in_.good(), ErrKind::io, "cannot open '" + path + "'");
    }
    template <typename T>
    T pod() {
        T v;
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        require(in_.good(), ErrKind::input, "'" + path_ + "': truncated file");
        return v;
    }
    void bytes(void* data, size_t n) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        require(in_.good(), ErrKind::input, "'" + path_ + "': truncated file");
    }
    std::string str() {
        auto len = pod<uint16_t>();
        std::string s(len, '\0');
        if (len) bytes(s.data(), len);
        return s;
    }
    std::vector<float> floats(size_t n) {
        std::vector<float> v(n);
        if (n) bytes(v.data(), n * sizeof(float));
        return v;
    }
    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

  private:
    std::string path_;
    std::ifstream in_;
};

uint64_t fnv1a_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

struct ConfigBlock {
    int32_t n_layers, n_heads, d_model, d_ff, vocab_size, max_positions;
    double rope_base;
};

ConfigBlock config_block(const ModelConfig& cfg) {
    return {cfg.n_layers, cfg.n_heads, cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_positions,
            cfg.rope_base};
}

void write_tensor(Writer& w, const Tensor<float>& t, bool trainable) {
    w.str(t->name);
    w.pod<uint8_t>(0); // dtype f32
    w.pod<uint8_t>(trainable ? 1 : 0);
    w.pod<uint8_t>(static_cast<uint8_t>(t->shape.size()));
    for (int d : t->shape) w.pod<int32_t>(d);
    w.floats(t->value);
}

struct NamedTensor {
    std::string name;
    Tensor<float> tensor;
    bool trainable;
};

NamedTensor read_tensor(Reader& r) {
    NamedTensor nt;
    nt.name = r.str();
    auto dtype = r.pod<uint8_t>();
    require(dtype == 0, ErrKind::input, "unsupported tensor dtype in checkpoint");
    nt.trainable = r.pod<uint8_t>() != 0;
    auto ndim = r.pod<uint8_t>();
    Shape shape;
    for (int i = 0; i < ndim; ++i) shape.push_back(r.pod<int32_t>());
    nt.tensor = make_tensor<float>(shape, nt.trainable, nt.name);
    nt.tensor->value = r.floats(static_cast<size_t>(shape_numel(shape)));
    return nt;
}

} // namespace

uint64_t model_config_digest(const ModelConfig& cfg) {
    auto block = config_block(cfg);
    return fnv1a_bytes(&block, sizeof(block));
}

void save_checkpoint(const std::string& path, const MethodState<float>& state, const Tokenizer& tok,
                     const OptimState* optim) {
    Writer w(path);
    w.bytes("SACL", 4);
    w.pod<uint32_t>(kCheckpointVersion);
    w.pod<uint64_t>(model_config_digest(state.base.config));
    auto block = config_block(state.base.config);
    w.bytes(&block, sizeof(block));

    w.pod<uint8_t>(tok.mode() == TokenizerMode::word ? 0 : 1);
    w.pod<uint32_t>(static_cast<uint32_t>(tok.vocab().size()));
    for (auto& t : tok.vocab()) w.str(t);

    w.pod<uint8_t>(static_cast<uint8_t>(state.method));
    w.pod<int32_t>(state.ccfg.ratio);
    w.pod<int32_t>(state.ccfg.chunk_len);
    w.pod<uint8_t>(static_cast<uint8_t>(state.ccfg.strategy));
    w.pod<uint8_t>(state.policy == PositionPolicy::source_len ? 0 : 1);
    w.pod<int32_t>(state.comp.lora.rank);
    w.pod<float>(state.comp.lora.alpha);

    std::vector<NamedTensor> table;
    const bool full = state.method == Method::full;
    for (auto& t : state.base.tensors()) table.push_back({t->name, t, full});
    if (!full) {
        for (auto& t : state.comp.lora.tensors()) table.push_back({t->name, t, true});
        table.push_back({state.comp.anchor_embedding->name, state.comp.anchor_embedding, true});
        if (state.bank) table.push_back({state.bank->embeddings->name, state.bank->embeddings, true});
    }
    table.push_back({state.ae_trigger->name, state.ae_trigger, true});

    w.pod<uint32_t>(static_cast<uint32_t>(table.size()));
    for (auto& nt : table) write_tensor(w, nt.tensor, nt.trainable);

    w.pod<uint8_t>(optim ? 1 : 0);
    if (optim) {
        w.pod<uint64_t>(static_cast<uint64_t>(optim->step));
        w.pod<uint32_t>(static_cast<uint32_t>(optim->slots.size()));
        for (auto& slot : optim->slots) {
            w.pod<uint64_t>(slot.m.size());
            w.floats(slot.m);
            w.floats(slot.v);
        }
    }
    w.commit();
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    require(std::memcmp(magic, "SACL", 4) == 0, ErrKind::input, "'" + path + "': not a checkpoint file");
    auto version = r.pod<uint32_t>();
    require(version == kCheckpointVersion, ErrKind::input, "unsupported checkpoint version");
    auto stored_digest = r.pod<uint64_t>();
    ConfigBlock block;
    r.bytes(&block, sizeof(block));
    ModelConfig cfg;
    cfg.n_layers = block.n_layers;
    cfg.n_heads = block.n_heads;
    cfg.d_model = block.d_model;
    cfg.d_ff = block.d_ff;
    cfg.vocab_size = block.vocab_size;
    cfg.max_positions = block.max_positions;
    cfg.rope_base = block.rope_base;
    require(stored_digest == model_config_digest(cfg), ErrKind::input,
            "'" + path + "': config digest mismatch (corrupted header)");

    auto mode = r.pod<uint8_t>() == 0 ? TokenizerMode::word : TokenizerMode::chars;
    auto n_tokens = r.pod<uint32_t>();
    std::vector<std::string> vocab;
    vocab.reserve(n_tokens);
    for (uint32_t i = 0; i < n_tokens; ++i) vocab.push_back(r.str());

    Checkpoint ckpt;
    ckpt.tokenizer = Tokenizer::from_vocab(mode, std::move(vocab));
    require(ckpt.tokenizer.vocab_size() == cfg.vocab_size, ErrKind::input,
            "'" + path + "': vocabulary size disagrees with the model config");

    auto& state = ckpt.state;
    state.method = static_cast<Method>(r.pod<uint8_t>());
    state.ccfg.ratio = r.pod<int32_t>();
    state.ccfg.chunk_len = r.pod<int32_t>();
    state.ccfg.strategy = static_cast<Strategy>(r.pod<uint8_t>());
    state.policy = r.pod<uint8_t>() == 0 ? PositionPolicy::source_len : PositionPolicy::after_last_slot;
    const int lora_rank = r.pod<int32_t>();
    const float lora_alpha = r.pod<float>();

    // materialize the state skeleton, then overwrite every tensor from the table
    ModelParams<float> base = init_model<float>(cfg, 0);
    state = [&] {
        MethodState<float> s = init_method_state<float>(state.method, std::move(base), state.ccfg,
                                                        lora_rank, lora_alpha, 0, state.policy);
        return s;
    }();

    std::unordered_map<std::string, Tensor<float>> by_name;
    for (auto& t : state.base.tensors()) by_name[t->name] = t;
    for (auto& t : state.comp.lora.tensors()) by_name[t->name] = t;
    by_name[state.comp.anchor_embedding->name] = state.comp.anchor_embedding;
    if (state.bank) by_name[state.bank->embeddings->name] = state.bank->embeddings;
    by_name[state.ae_trigger->name] = state.ae_trigger;

    auto count = r.pod<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        auto nt = read_tensor(r);
        auto it = by_name.find(nt.name);
        require(it != by_name.end(), ErrKind::input, "'" + path + "': unknown tensor '" + nt.name + "'");
        require(it->second->shape == nt.tensor->shape, ErrKind::input,
                "'" + path + "': geometry mismatch for tensor '" + nt.name + "'");
        it->second->value = std::move(nt.tensor->value);
        it->second->requires_grad = nt.trainable;
    }
    state.base.frozen = state.method != Method::full;

    if (r.pod<uint8_t>()) {
        OptimState optim;
        optim.step = static_cast<int64_t>(r.pod<uint64_t>());
        auto slots = r.pod<uint32_t>();
        for (uint32_t i = 0; i < slots; ++i) {
            auto numel = r.pod<uint64_t>();
            OptimState::Moments mom;
            mom.m = r.floats(numel);
            mom.v = r.floats(numel);
            optim.slots.push_back(std::move(mom));
        }
        ckpt.optim = std::move(optim);
    }
    return ckpt;
}

void save_kv_blob(const std::string& path, const CompressedRepr<float>& repr, const ModelConfig& cfg) {
    require(!repr.kv.empty(), ErrKind::dimension, "refusing to write an empty kv blob");
    repr.kv.validate(cfg);
    Writer w(path);
    w.bytes("SKVB", 4);
    w.pod<uint32_t>(kBlobVersion);
    w.pod<int32_t>(cfg.n_layers);
    w.pod<int32_t>(cfg.n_heads);
    w.pod<int32_t>(cfg.d_head());
    w.pod<int32_t>(repr.kv.slots());
    w.pod<int32_t>(repr.source_len);
    w.pod<int32_t>(repr.ratio);
    w.pod<uint8_t>(static_cast<uint8_t>(repr.strategy));
    for (int p : repr.kv.positions) w.pod<int32_t>(p);
    for (auto& layer : repr.kv.layers) {
        w.floats(layer.k->value);
        w.floats(layer.v->value);
    }
    w.commit();
}

namespace {
KVBlobHeader read_blob_header(Reader& r, const std::string& path) {
    char magic[4];
    r.bytes(magic, 4);
    require(std::memcmp(magic, "SKVB", 4) == 0, ErrKind::input, "'" + path + "': not a kv blob");
    auto version = r.pod<uint32_t>();
    require(version == kBlobVersion, ErrKind::input, "unsupported kv blob version");
    KVBlobHeader h;
    h.n_layers = r.pod<int32_t>();
    h.n_heads = r.pod<int32_t>();
    h.d_head = r.pod<int32_t>();
    h.slot_count = r.pod<int32_t>();
    h.source_len = r.pod<int32_t>();
    h.ratio = r.pod<int32_t>();
    h.strategy = static_cast<Strategy>(r.pod<uint8_t>());
    require(h.n_layers >= 1 && h.n_heads >= 1 && h.d_head >= 1 && h.slot_count >= 1, ErrKind::input,
            "'" + path + "': malformed kv blob header");
    return h;
}
} // namespace

KVBlobHeader peek_kv_blob(const std::string& path) {
    Reader r(path);
    return read_blob_header(r, path);
}

CompressedRepr<float> load_kv_blob(const std::string& path, const ModelConfig& cfg) {
    Reader r(path);
    auto h = read_blob_header(r, path);
    require(h.n_layers == cfg.n_layers && h.n_heads == cfg.n_heads && h.d_head == cfg.d_head(),
            ErrKind::config, "'" + path + "': kv blob geometry disagrees with the model");
    CompressedRepr<float> repr;
    repr.source_len = h.source_len;
    repr.ratio = h.ratio;
    repr.strategy = h.strategy;
    repr.chunk_boundaries = {h.source_len};
    for (int i = 0; i < h.slot_count; ++i) repr.kv.positions.push_back(r.pod<int32_t>());
    const size_t width = static_cast<size_t>(h.n_heads) * h.d_head;
    for (int l = 0; l < h.n_layers; ++l) {
        typename KVCache<float>::LayerKV layer;
        layer.k = make_tensor<float>({h.slot_count, static_cast<int>(width)});
        layer.k->value = r.floats(static_cast<size_t>(h.slot_count) * width);
        layer.v = make_tensor<float>({h.slot_count, static_cast<int>(width)});
        layer.v->value = r.floats(static_cast<size_t>(h.slot_count) * width);
        repr.kv.layers.push_back(std::move(layer));
    }
    require(r.at_eof(), ErrKind::input, "'" + path + "': trailing bytes after kv blob payload");
    repr.kv.validate(cfg);
    return repr;
}

uint64_t digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrKind::io, "cannot open '" + path + "'");
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a_bytes(buf, static_cast<size_t>(in.gcount()), h);
        if (in.eof()) break;
    }
    return h;
}

} // namespace sac
