#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sac/gradcheck.hpp"
#include "sac/model.hpp"

#include <cmath>

using namespace sac;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.vocab_size = 11;
    cfg.max_positions = 64;
    return cfg;
}

std::vector<int> iota_positions(int n, int start = 0) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = start + i;
    return p;
}

template <typename T>
ForwardResult<T> run(const ModelParams<T>& params, const std::vector<int>& tokens, MaskMode mode,
                     const KVCache<T>* prefix = nullptr, int pos_start = 0,
                     const LoraAdapter<T>* lora = nullptr) {
    Graph<T> g(false);
    ForwardOptions<T> opts;
    opts.mask.mode = mode;
    opts.prefix = prefix;
    opts.lora = lora;
    return forward_tokens(g, params, tokens, iota_positions(static_cast<int>(tokens.size()), pos_start),
                          opts);
}

} // namespace

TEST_CASE("embedding lookup is a row gather") {
    auto params = init_model<float>(tiny_config(), 1);
    Graph<float> g(false);
    auto rows = g.embed_rows(params.token_embedding, {0, 5, 5});
    for (int c = 0; c < 8; ++c) {
        CHECK(rows->at(0, c) == params.token_embedding->at(0, c));
        CHECK(rows->at(1, c) == rows->at(2, c));
    }
}

TEST_CASE("single-token attention output is the v-projection") {
    auto cfg = tiny_config();
    auto params = init_model<float>(cfg, 2);
    Graph<float> g(false);
    auto x = g.embed_rows(params.token_embedding, {3});
    for (MaskMode mode : {MaskMode::causal, MaskMode::bidirectional}) {
        AttentionMask mask;
        mask.mode = mode;
        const std::vector<int> no_prefix_positions;
        const std::vector<int> positions{0};
        auto [out, kv] = attention_block<float>(g, x, mask, nullptr, no_prefix_positions, positions,
                                                params.layers[0], cfg, nullptr, 0, nullptr);
        // softmax over one slot is 1, so out = (rms_norm(x) Wv) Wo
        auto xn = g.rms_norm(x, params.layers[0].attn_norm, 1e-5f);
        auto expect = g.matmul(g.matmul(xn, params.layers[0].wv), params.layers[0].wo);
        for (int c = 0; c < cfg.d_model; ++c)
            CHECK(out->at(0, c) == doctest::Approx(expect->at(0, c)).epsilon(1e-6));
        CHECK(kv.k->shape == Shape{1, cfg.d_model});
    }
}

TEST_CASE("causal mask: perturbing a later token leaves earlier outputs bitwise unchanged") {
    auto params = init_model<float>(tiny_config(), 3);
    std::vector<int> tokens{1, 2, 3, 4};
    auto base = run(params, tokens, MaskMode::causal);
    std::vector<int> perturbed{1, 2, 3, 9};
    auto other = run(params, perturbed, MaskMode::causal);
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 11; ++c) CHECK(base.logits->at(i, c) == other.logits->at(i, c));
    // and the final position does change
    bool any = false;
    for (int c = 0; c < 11; ++c) any |= base.logits->at(3, c) != other.logits->at(3, c);
    CHECK(any);
}

TEST_CASE("bidirectional mask: a later token changes the first slot") {
    auto params = init_model<float>(tiny_config(), 3);
    auto base = run(params, {1, 2, 3, 4}, MaskMode::bidirectional);
    auto other = run(params, {1, 2, 3, 9}, MaskMode::bidirectional);
    bool any = false;
    for (int c = 0; c < 11; ++c) any |= base.logits->at(0, c) != other.logits->at(0, c);
    CHECK(any);
}

TEST_CASE("zero head gives uniform logits and ln-vocab loss") {
    auto params = init_model<float>(tiny_config(), 4);
    for (auto& v : params.head->value) v = 0.0f;
    Graph<float> g;
    ForwardOptions<float> opts;
    auto res = forward_tokens(g, params, {1, 2, 3}, iota_positions(3), opts);
    for (float v : res.logits->value) CHECK(v == 0.0f);
    auto loss = g.cross_entropy(res.logits, {2, 3, 4}, {1, 1, 1});
    CHECK(loss->value[0] == doctest::Approx(std::log(11.0f)).epsilon(1e-6));
}

TEST_CASE("prefix equivalence: cached forward matches full forward") {
    auto params = init_model<float>(tiny_config(), 5);
    std::vector<int> a{1, 2, 3, 4, 5}, b{6, 7, 8};
    std::vector<int> both = a;
    both.insert(both.end(), b.begin(), b.end());

    auto full = run(params, both, MaskMode::causal);
    auto first = run(params, a, MaskMode::causal);
    auto second = run(params, b, MaskMode::causal, &first.kv, static_cast<int>(a.size()));

    float max_diff = 0;
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 11; ++c)
            max_diff = std::max(max_diff,
                                std::abs(full.logits->at(5 + i, c) - second.logits->at(i, c)));
    CHECK(max_diff < 1e-5f);
}

TEST_CASE("forward_with_embeddings reproduces forward bitwise") {
    auto params = init_model<float>(tiny_config(), 6);
    std::vector<int> tokens{4, 2, 9};
    Graph<float> g(false);
    ForwardOptions<float> opts;
    auto from_tokens = forward_tokens(g, params, tokens, iota_positions(3), opts);
    auto emb = g.embed_rows(params.token_embedding, tokens);
    auto from_emb = forward_embeddings(g, params, emb, iota_positions(3), opts);
    CHECK(from_tokens.logits->value == from_emb.logits->value);
}

TEST_CASE("gradient flows into supplied embeddings") {
    auto params = init_model<double>(tiny_config(), 7);
    params.set_frozen(true);
    Rng rng(8);
    auto emb = make_tensor<double>({3, 8}, true, "emb");
    for (auto& v : emb->value) v = rng.normal(0, 0.5);
    auto f = [&](Graph<double>& g) {
        ForwardOptions<double> opts;
        auto res = forward_embeddings(g, params, emb, iota_positions(3), opts);
        return g.cross_entropy(res.logits, {1, 2, 3}, {1, 1, 1});
    };
    auto report = gradient_check<double>(f, {emb}, 1e-5);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("frozen parameters receive no gradient") {
    auto params = init_model<float>(tiny_config(), 9);
    params.set_frozen(true);
    auto emb = make_tensor<float>({2, 8}, true, "emb");
    emb->value.assign(16, 0.1f);
    Graph<float> g;
    ForwardOptions<float> opts;
    auto res = forward_embeddings(g, params, emb, iota_positions(2), opts);
    auto loss = g.cross_entropy(res.logits, {0, 1}, {1, 1});
    g.backward(loss);
    for (auto& t : params.tensors()) CHECK(t->grad.empty());
    CHECK(emb->grad.size() == 16);
}

TEST_CASE("extract_kv keeps slots and positions") {
    auto params = init_model<float>(tiny_config(), 10);
    std::vector<int> tokens(10);
    for (int i = 0; i < 10; ++i) tokens[i] = i + 1;
    auto res = run(params, tokens, MaskMode::causal);

    Graph<float> g(false);
    auto all = extract_kv(g, res.kv, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    for (int l = 0; l < 2; ++l) {
        CHECK(all.layers[l].k->value == res.kv.layers[l].k->value);
        CHECK(all.layers[l].v->value == res.kv.layers[l].v->value);
    }
    CHECK(all.positions == res.kv.positions);

    auto sliced = extract_kv(g, res.kv, {2, 7});
    CHECK(sliced.positions == std::vector<int>{2, 7});
    for (int c = 0; c < 8; ++c) CHECK(sliced.layers[0].k->at(0, c) == res.kv.layers[0].k->at(2, c));

    CHECK_THROWS_AS((void)extract_kv(g, res.kv, {7, 2}), Error);
    CHECK_THROWS_AS((void)extract_kv(g, res.kv, {2, 2}), Error);
    CHECK_THROWS_AS((void)extract_kv(g, res.kv, {2, 10}), Error);

    // decoding against the full cache differs from the sliced cache
    auto with_full = run(params, {5}, MaskMode::causal, &res.kv, 10);
    auto with_sliced = run(params, {5}, MaskMode::causal, &sliced, 10);
    bool any = false;
    for (int c = 0; c < 11; ++c) any |= with_full.logits->at(0, c) != with_sliced.logits->at(0, c);
    CHECK(any);
}

TEST_CASE("concat_kv stitches caches in position order") {
    auto params = init_model<float>(tiny_config(), 11);
    auto res = run(params, {1, 2, 3, 4}, MaskMode::causal);
    Graph<float> g(false);

    KVCache<float> empty;
    auto same = concat_kv(g, res.kv, empty);
    CHECK(same.positions == res.kv.positions);
    CHECK(same.layers[0].k->value == res.kv.layers[0].k->value);

    auto a = extract_kv(g, res.kv, {1});
    auto b = extract_kv(g, res.kv, {3});
    auto ab = concat_kv(g, a, b);
    CHECK(ab.positions == std::vector<int>{1, 3});
    CHECK(ab.slots() == 2);

    CHECK_THROWS_AS((void)concat_kv(g, b, a), Error);
}

TEST_CASE("lora with zero b equals the base model bitwise") {
    auto cfg = tiny_config();
    auto params = init_model<float>(cfg, 12);
    auto lora = init_lora<float>(cfg, 2, 4.0f, 13);
    std::vector<int> tokens{3, 1, 4, 1, 5};
    auto base = run<float>(params, tokens, MaskMode::causal);
    auto adapted = run<float>(params, tokens, MaskMode::causal, nullptr, 0, &lora);
    CHECK(base.logits->value == adapted.logits->value);

    // a nonzero b must change the output
    lora.layers[0][0].b->value[0] = 0.5f;
    auto changed = run<float>(params, tokens, MaskMode::causal, nullptr, 0, &lora);
    CHECK(changed.logits->value != base.logits->value);
}

TEST_CASE("whole-model gradients match finite differences") {
    auto cfg = tiny_config();
    auto params = init_model<double>(cfg, 14);
    std::vector<int> tokens{1, 4, 2, 8, 5, 7};
    std::vector<int> targets{4, 2, 8, 5, 7, 1};
    std::vector<uint8_t> mask(6, 1);
    auto f = [&](Graph<double>& g) {
        ForwardOptions<double> opts;
        auto res = forward_tokens(g, params, tokens, iota_positions(6), opts);
        return g.cross_entropy(res.logits, targets, mask);
    };
    auto report = gradient_check<double>(f, params.tensors(), 1e-4);
    CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("explicit masks validate extents") {
    auto params = init_model<float>(tiny_config(), 15);
    Graph<float> g(false);
    ForwardOptions<float> opts;
    opts.mask = AttentionMask::explicit_of(2, 2, {1, 0, 1, 1});
    auto res = forward_tokens(g, params, {1, 2}, iota_positions(2), opts);
    CHECK(res.logits->shape == Shape{2, 11});

    ForwardOptions<float> bad;
    bad.mask = AttentionMask::explicit_of(3, 3, std::vector<uint8_t>(9, 1));
    CHECK_THROWS_AS((void)forward_tokens(g, params, {1, 2}, iota_positions(2), bad), Error);
}

TEST_CASE("positions beyond max_positions are rejected") {
    auto params = init_model<float>(tiny_config(), 16);
    Graph<float> g(false);
    ForwardOptions<float> opts;
    CHECK_THROWS_AS((void)forward_tokens(g, params, {1}, {64}, opts), Error);
}

TEST_CASE("attention capture collects final-layer probabilities") {
    auto cfg = tiny_config();
    auto params = init_model<float>(cfg, 17);
    AttentionCapture<float> cap;
    Graph<float> g(false);
    ForwardOptions<float> opts;
    opts.mask.mode = MaskMode::bidirectional;
    opts.capture = &cap;
    (void)forward_tokens(g, params, {1, 2, 3, 4}, iota_positions(4), opts);
    CHECK(cap.head_probs.size() == 2);
    CHECK(cap.q_len == 4);
    CHECK(cap.kv_len == 4);
    for (auto& head : cap.head_probs) {
        for (int r = 0; r < 4; ++r) {
            float s = 0;
            for (int c = 0; c < 4; ++c) s += head[r * 4 + c];
            CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
        }
    }
}
