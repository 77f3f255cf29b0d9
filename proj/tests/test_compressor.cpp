#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sac/compressor.hpp"
#include "sac/gradcheck.hpp"

#include <cmath>

using namespace sac;

namespace {

ModelConfig small_config(int vocab = 23) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.vocab_size = vocab;
    cfg.max_positions = 256;
    return cfg;
}

std::vector<int> arange_tokens(int n, int vocab) {
    std::vector<int> t(n);
    for (int i = 0; i < n; ++i) t[i] = i % vocab;
    return t;
}

// Brute-force top-n oracle: full stable sort by (score desc, index asc).
std::vector<int> topn_reference(const std::vector<double>& scores, int n) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    order.resize(n);
    std::sort(order.begin(), order.end());
    return order;
}

} // namespace

TEST_CASE("uniform selection picks span middles") {
    CHECK(select_uniform(10, 2).indices == std::vector<int>{2, 7});
    CHECK(select_uniform(5, 5).indices == std::vector<int>{0, 1, 2, 3, 4});
    CHECK(static_cast<int>(select_uniform(510, 510 / 5).indices.size()) == 102);
    CHECK_THROWS_AS((void)select_uniform(4, 5), Error);
}

TEST_CASE("uniform selection stays inside its span for many shapes") {
    for (int len : {3, 7, 16, 51, 100, 510}) {
        for (int n = 1; n <= len; n = n * 2 + 1) {
            auto s = select_uniform(len, n);
            CHECK(static_cast<int>(s.indices.size()) == n);
            for (int i = 0; i < n; ++i) {
                int start = static_cast<int>(static_cast<int64_t>(i) * len / n);
                int end = static_cast<int>(static_cast<int64_t>(i + 1) * len / n);
                CHECK(s.indices[i] >= start);
                CHECK(s.indices[i] < end);
                if (i > 0) CHECK(s.indices[i] > s.indices[i - 1]);
            }
        }
    }
}

TEST_CASE("random selection is exhaustive at n == len and seed-stable") {
    auto full = select_random(6, 6, 123);
    CHECK(full.indices == std::vector<int>{0, 1, 2, 3, 4, 5});
    auto a = select_random(50, 9, 7);
    auto b = select_random(50, 9, 7);
    CHECK(a.indices == b.indices);
    auto c = select_random(50, 9, 8);
    CHECK(a.indices != c.indices);
}

TEST_CASE("random selection marginal inclusion is about n/len") {
    const int len = 16, n = 4, trials = 10000;
    std::vector<int> counts(len, 0);
    for (int t = 0; t < trials; ++t)
        for (int idx : select_random(len, n, 1000 + t).indices) counts[idx]++;
    const double p = double(n) / len;
    const double sigma = std::sqrt(p * (1 - p) / trials);
    for (int i = 0; i < len; ++i)
        CHECK(std::abs(double(counts[i]) / trials - p) < 3 * sigma + 1e-9);
}

TEST_CASE("scored selection: ties break towards lower indices") {
    std::vector<double> onehot(5, 0.0);
    onehot[3] = 1.0;
    CHECK(select_scored(5, 3, onehot).indices == std::vector<int>{0, 1, 3});
    std::vector<double> equal(6, 0.5);
    CHECK(select_scored(6, 2, equal).indices == std::vector<int>{0, 1});
    CHECK_THROWS_AS((void)select_scored(4, 2, equal), Error);
}

TEST_CASE("scored selection matches the full-sort oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        int len = 3 + static_cast<int>(rng.below(40));
        int n = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(len)));
        std::vector<double> scores(len);
        for (auto& s : scores) s = rng.below(8) * 0.25; // plenty of ties
        CHECK(select_scored(len, n, scores).indices == topn_reference(scores, n));
    }
}

TEST_CASE("anchor embedding injection is exact and local") {
    auto cfg = small_config();
    auto base = init_model<float>(cfg, 1);
    Graph<float> g(false);
    auto emb = g.embed_rows(base.token_embedding, arange_tokens(6, cfg.vocab_size));

    auto zero = make_tensor<float>({cfg.d_model});
    auto same = inject_anchor_embedding(g, emb, {{1, 4}}, zero);
    CHECK(same->value == emb->value);

    auto ea = make_tensor<float>({cfg.d_model});
    for (int c = 0; c < cfg.d_model; ++c) ea->value[c] = 0.25f * (c + 1);
    auto marked = inject_anchor_embedding(g, emb, {{0}}, ea);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < cfg.d_model; ++c) {
            float expect = emb->at(r, c) + (r == 0 ? ea->value[c] : 0.0f);
            CHECK(marked->at(r, c) == expect);
        }
    AnchorSet bad{{6}};
    CHECK_THROWS_AS((void)inject_anchor_embedding(g, emb, bad, ea), Error);
}

TEST_CASE("gradient wrt the anchor embedding is the sum over anchor rows") {
    auto cfg = small_config();
    auto base = init_model<double>(cfg, 2);
    base.set_frozen(true);
    auto ea = make_tensor<double>({cfg.d_model}, true, "e_a");
    Rng rng(5);
    for (auto& v : ea->value) v = rng.normal(0, 0.1);
    auto tokens = arange_tokens(5, cfg.vocab_size);
    auto f = [&](Graph<double>& g) {
        auto emb = g.embed_rows(base.token_embedding, tokens);
        auto marked = inject_anchor_embedding(g, emb, {{1, 3}}, ea);
        ForwardOptions<double> opts;
        opts.mask.mode = MaskMode::bidirectional;
        auto res = forward_embeddings(g, base, marked, {0, 1, 2, 3, 4}, opts);
        return g.cross_entropy(res.logits, {1, 2, 3, 4, 5}, {1, 1, 1, 1, 1});
    };
    auto report = gradient_check<double>(f, {ea}, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("identity compression reproduces the decoder's own kv") {
    auto cfg = small_config();
    auto base = init_model<float>(cfg, 3);
    auto comp = init_compressor<float>(cfg, 2, 4.0f, 4);

    CompressionConfig ccfg;
    ccfg.ratio = 1;
    ccfg.chunk_len = 32;
    ccfg.encoder_mask = MaskMode::causal; // identity setup

    auto tokens = arange_tokens(12, cfg.vocab_size);
    Graph<float> g(false);
    auto repr = compress_chunk(g, tokens, 0, ccfg, comp, base);
    CHECK(repr.kv.slots() == 12);

    ForwardOptions<float> opts;
    auto own = forward_tokens(g, base, tokens, repr.kv.positions, opts);
    float max_diff = 0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int64_t i = 0; i < repr.kv.layers[l].k->numel(); ++i) {
            max_diff = std::max(max_diff,
                                std::abs(repr.kv.layers[l].k->value[i] - own.kv.layers[l].k->value[i]));
            max_diff = std::max(max_diff,
                                std::abs(repr.kv.layers[l].v->value[i] - own.kv.layers[l].v->value[i]));
        }
    }
    CHECK(max_diff < 1e-5f);
}

TEST_CASE("bidirectional encoding changes the first anchor for generic weights") {
    auto cfg = small_config();
    auto base = init_model<float>(cfg, 6);
    auto comp = init_compressor<float>(cfg, 2, 4.0f, 7);
    CompressionConfig causal_cfg;
    causal_cfg.ratio = 1;
    causal_cfg.chunk_len = 32;
    causal_cfg.encoder_mask = MaskMode::causal;
    CompressionConfig bidi_cfg = causal_cfg;
    bidi_cfg.encoder_mask = MaskMode::bidirectional;

    auto tokens = arange_tokens(8, cfg.vocab_size);
    Graph<float> g(false);
    auto causal = compress_chunk(g, tokens, 0, causal_cfg, comp, base);
    auto bidi = compress_chunk(g, tokens, 0, bidi_cfg, comp, base);
    bool any = false;
    for (int c = 0; c < cfg.d_model; ++c)
        any |= causal.kv.layers[1].k->at(0, c) != bidi.kv.layers[1].k->at(0, c);
    CHECK(any);
}

TEST_CASE("bidirectional sensitivity: the last token reaches the first anchor; causal does not") {
    auto cfg = small_config();
    auto base = init_model<float>(cfg, 8);
    auto comp = init_compressor<float>(cfg, 2, 4.0f, 9);
    for (auto& v : comp.lora.layers[0][1].b->value) v = 0.01f; // generic nonzero delta

    auto tokens = arange_tokens(12, cfg.vocab_size);
    auto perturbed = tokens;
    perturbed.back() = (perturbed.back() + 5) % cfg.vocab_size;

    for (MaskMode mode : {MaskMode::bidirectional, MaskMode::causal}) {
        CompressionConfig ccfg;
        ccfg.ratio = 4; // anchors at {1, 4, 7, 10}; last token is not an anchor
        ccfg.chunk_len = 32;
        ccfg.encoder_mask = mode;
        Graph<float> g(false);
        auto a = compress_chunk(g, tokens, 0, ccfg, comp, base);
        auto b = compress_chunk(g, perturbed, 0, ccfg, comp, base);
        float first_anchor_diff = 0;
        for (int l = 0; l < cfg.n_layers; ++l)
            for (int c = 0; c < cfg.d_model; ++c) {
                first_anchor_diff = std::max(first_anchor_diff,
                                             std::abs(a.kv.layers[l].k->at(0, c) - b.kv.layers[l].k->at(0, c)));
                first_anchor_diff = std::max(first_anchor_diff,
                                             std::abs(a.kv.layers[l].v->at(0, c) - b.kv.layers[l].v->at(0, c)));
            }
        if (mode == MaskMode::bidirectional)
            CHECK(first_anchor_diff > 0.0f);
        else
            CHECK(first_anchor_diff == 0.0f);
    }
}

TEST_CASE("slot count follows the floor formula") {
    auto cfg = small_config();
    auto base = init_model<float>(cfg, 10);
    auto comp = init_compressor<float>(cfg, 2, 4.0f, 11);
    CompressionConfig ccfg;
    ccfg.ratio = 15;
    ccfg.chunk_len = 128;
    Graph<float> g(false);
    auto repr = compress_chunk(g, arange_tokens(100, cfg.vocab_size), 0, ccfg, comp, base);
    CHECK(repr.kv.slots() == 6);

    // ratio above the length falls back to a single anchor
    ccfg.ratio = 300;
    auto one = compress_chunk(g, arange_tokens(100, cfg.vocab_size), 0, ccfg, comp, base);
    CHECK(one.kv.slots() == 1);
}

TEST_CASE("context compression splits chunks and keeps absolute positions") {
    auto cfg = small_config();
    auto base = init_model<float>(cfg, 12);
    auto comp = init_compressor<float>(cfg, 2, 4.0f, 13);
    CompressionConfig ccfg;
    ccfg.ratio = 4;
    ccfg.chunk_len = 16;

    auto tokens = arange_tokens(32, cfg.vocab_size);
    Graph<float> g(false);
    auto whole = compress_context(g, tokens, ccfg, comp, base);
    CHECK(whole.kv.slots() == 8); // 2 chunks x floor(16/4)
    CHECK(whole.chunk_boundaries == std::vector<int>{16, 32});
    for (int i = 0; i < 4; ++i) {
        CHECK(whole.kv.positions[i] < 16);
        CHECK(whole.kv.positions[4 + i] >= 16);
        CHECK(whole.kv.positions[4 + i] == whole.kv.positions[i] + 16);
    }

    // single-chunk context equals compress_chunk bitwise
    auto short_tokens = arange_tokens(10, cfg.vocab_size);
    auto via_context = compress_context(g, short_tokens, ccfg, comp, base);
    auto via_chunk = compress_chunk(g, short_tokens, 0, ccfg, comp, base);
    CHECK(via_context.kv.positions == via_chunk.kv.positions);
    for (int l = 0; l < cfg.n_layers; ++l) {
        CHECK(via_context.kv.layers[l].k->value == via_chunk.kv.layers[l].k->value);
        CHECK(via_context.kv.layers[l].v->value == via_chunk.kv.layers[l].v->value);
    }
}

TEST_CASE("chunking oracle: whole-context compression equals manual per-chunk + concat") {
    auto cfg = small_config();
    auto base = init_model<float>(cfg, 14);
    auto comp = init_compressor<float>(cfg, 2, 4.0f, 15);
    for (auto& v : comp.anchor_embedding->value) v = 0.05f;
    for (Strategy strat : {Strategy::uniform, Strategy::random, Strategy::scored}) {
        CompressionConfig ccfg;
        ccfg.ratio = 4;
        ccfg.chunk_len = 16;
        ccfg.strategy = strat;
        ccfg.selection_seed = 21;
        if (strat == Strategy::scored) {
            ccfg.scores.resize(32);
            Rng rng(3);
            for (auto& s : ccfg.scores) s = rng.uniform01();
        }
        auto tokens = arange_tokens(32, cfg.vocab_size);
        Graph<float> g(false);
        auto whole = compress_context(g, tokens, ccfg, comp, base);

        std::vector<int> first(tokens.begin(), tokens.begin() + 16);
        std::vector<int> second(tokens.begin() + 16, tokens.end());
        auto a = compress_chunk(g, first, 0, ccfg, comp, base);
        auto b = compress_chunk(g, second, 16, ccfg, comp, base);
        auto manual = concat_kv(g, a.kv, b.kv);

        CHECK(whole.kv.positions == manual.positions);
        for (int l = 0; l < cfg.n_layers; ++l) {
            CHECK(whole.kv.layers[l].k->value == manual.layers[l].k->value);
            CHECK(whole.kv.layers[l].v->value == manual.layers[l].v->value);
        }
    }
}

TEST_CASE("slot budget invariant over lengths and ratios") {
    auto cfg = small_config();
    auto base = init_model<float>(cfg, 16);
    auto comp = init_compressor<float>(cfg, 2, 4.0f, 17);
    for (int n : {1, 5, 16, 33, 70}) {
        for (int r : {1, 3, 8, 40}) {
            CompressionConfig ccfg;
            ccfg.ratio = r;
            ccfg.chunk_len = 16;
            Graph<float> g(false);
            auto repr = compress_context(g, arange_tokens(n, cfg.vocab_size), ccfg, comp, base);
            int expect = 0;
            for (int off = 0; off < n; off += 16) expect += std::max(1, std::min(16, n - off) / r);
            CHECK(repr.kv.slots() == expect);
            for (size_t i = 1; i < repr.kv.positions.size(); ++i)
                CHECK(repr.kv.positions[i] > repr.kv.positions[i - 1]);
            CHECK(repr.kv.positions.back() < n);
        }
    }
}

TEST_CASE("scored strategy slices the score stream per chunk") {
    auto cfg = small_config();
    auto base = init_model<float>(cfg, 18);
    auto comp = init_compressor<float>(cfg, 2, 4.0f, 19);
    CompressionConfig ccfg;
    ccfg.ratio = 8;
    ccfg.chunk_len = 16;
    ccfg.strategy = Strategy::scored;
    ccfg.scores.assign(32, 0.0);
    ccfg.scores[13] = 1.0; // best of chunk one
    ccfg.scores[16 + 2] = 1.0; // best of chunk two

    Graph<float> g(false);
    auto repr = compress_context(g, arange_tokens(32, cfg.vocab_size), ccfg, comp, base);
    // 2 anchors per chunk: the hot index plus index 0 via tie-break
    CHECK(repr.kv.positions == std::vector<int>{0, 13, 16, 18});

    ccfg.scores.resize(20); // shorter than the context
    CHECK_THROWS_AS((void)compress_context(g, arange_tokens(32, cfg.vocab_size), ccfg, comp, base),
                    Error);
}
