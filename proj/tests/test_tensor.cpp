#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sac/gradcheck.hpp"
#include "sac/rng.hpp"
#include "sac/tensor.hpp"

#include <cmath>

using namespace sac;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, bool requires_grad, std::string name = {}) {
    auto t = make_tensor<T>(shape, requires_grad, std::move(name));
    for (auto& v : t->value) v = static_cast<T>(rng.normal(0.0, 1.0));
    return t;
}

// Independent slow-path softmax + NLL used as the cross_entropy oracle.
double reference_nll(const std::vector<double>& row, int target) {
    double denom = 0;
    for (double v : row) denom += std::exp(v);
    return std::log(denom) - row[target];
}

} // namespace

TEST_CASE("matmul identity and known values") {
    Graph<float> g;
    auto eye = make_tensor<float>({2, 2}, {1, 0, 0, 1});
    auto b = make_tensor<float>({2, 2}, {1, 2, 3, 4});
    auto c = g.matmul(eye, b);
    CHECK(c->value == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("matmul backward with upstream ones") {
    Graph<float> g;
    auto a = make_tensor<float>({2, 2}, {1, 0, 0, 1}, true, "a");
    auto b = make_tensor<float>({2, 2}, {1, 2, 3, 4}, true, "b");
    auto c = g.matmul(a, b);
    auto loss = g.sum(c);
    g.backward(loss);
    // dA = ones * B^T, dB = A^T * ones
    CHECK(a->grad == std::vector<float>{3, 7, 3, 7});
    CHECK(b->grad == std::vector<float>{1, 1, 1, 1});
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(7);
    auto a = random_tensor<double>({3, 4}, rng, true, "a");
    auto b = random_tensor<double>({4, 2}, rng, true, "b");
    auto f = [&](Graph<double>& g) { return g.sum(g.silu(g.matmul(a, b))); };
    auto report = gradient_check<double>(f, {a, b}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("matmul shape mismatch is a dimension error") {
    Graph<float> g;
    auto a = make_tensor<float>({2, 3});
    auto b = make_tensor<float>({2, 3});
    CHECK_THROWS_AS((void)g.matmul(a, b), Error);
}

TEST_CASE("softmax of equal logits is uniform") {
    Graph<float> g;
    auto x = make_tensor<float>({1, 2}, {0, 0});
    auto y = g.softmax_rows(x);
    CHECK(y->value[0] == doctest::Approx(0.5));
    CHECK(y->value[1] == doctest::Approx(0.5));

    auto big = make_tensor<float>({1, 3}, {1000, 1000, 1000});
    auto yb = g.softmax_rows(big);
    for (float v : yb->value) CHECK(v == doctest::Approx(1.0f / 3.0f));
}

TEST_CASE("softmax rows sum to one on random input") {
    Rng rng(3);
    Graph<float> g;
    auto x = random_tensor<float>({17, 9}, rng, false);
    for (auto& v : x->value) v *= 30.0f;
    auto y = g.softmax_rows(x);
    for (int r = 0; r < 17; ++r) {
        float s = 0;
        for (int c = 0; c < 9; ++c) {
            float v = y->at(r, c);
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0f).epsilon(1e-6));
    }
}

TEST_CASE("softmax of an all -inf row is uniform") {
    Graph<float> g;
    const float ninf = -std::numeric_limits<float>::infinity();
    auto x = make_tensor<float>({1, 4}, {ninf, ninf, ninf, ninf});
    auto y = g.softmax_rows(x);
    for (float v : y->value) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("softmax gradient vs finite differences") {
    Rng rng(11);
    auto x = random_tensor<double>({2, 5}, rng, true, "x");
    auto w = random_tensor<double>({2, 5}, rng, false);
    auto f = [&](Graph<double>& g) { return g.sum(g.mul(g.softmax_rows(x), w)); };
    auto report = gradient_check<double>(f, {x}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("rms_norm zero input maps to zero") {
    Graph<float> g;
    auto x = make_tensor<float>({2, 4});
    auto w = make_tensor<float>({4}, {1, 1, 1, 1});
    auto y = g.rms_norm(x, w, 1e-5f);
    for (float v : y->value) CHECK(v == 0.0f);
}

TEST_CASE("rms_norm is identity for unit mean-square rows") {
    Graph<float> g;
    // mean(x^2) = 1 for each row
    auto x = make_tensor<float>({1, 4}, {1, -1, 1, -1});
    auto w = make_tensor<float>({4}, {1, 1, 1, 1});
    auto y = g.rms_norm(x, w, 1e-12f);
    for (int i = 0; i < 4; ++i) CHECK(y->value[i] == doctest::Approx(x->value[i]).epsilon(1e-6));
}

TEST_CASE("rms_norm gradient vs finite differences") {
    Rng rng(13);
    auto x = random_tensor<double>({3, 6}, rng, true, "x");
    auto w = random_tensor<double>({6}, rng, true, "w");
    auto mixer = random_tensor<double>({3, 6}, rng, false);
    auto f = [&](Graph<double>& g) { return g.sum(g.mul(g.rms_norm(x, w, 1e-6), mixer)); };
    auto report = gradient_check<double>(f, {x, w}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("cross_entropy uniform logits equals ln V") {
    Graph<float> g;
    auto logits = make_tensor<float>({2, 4});
    auto loss = g.cross_entropy(logits, {1, 3}, {1, 1});
    CHECK(loss->value[0] == doctest::Approx(std::log(4.0f)).epsilon(1e-6));
}

TEST_CASE("cross_entropy certainty case is near zero") {
    Graph<float> g;
    auto logits = make_tensor<float>({1, 4});
    logits->at(0, 2) = 1e6f;
    auto loss = g.cross_entropy(logits, {2}, {1});
    CHECK(loss->value[0] == doctest::Approx(0.0f).epsilon(1e-6));
    CHECK(loss->value[0] >= 0.0f);
}

TEST_CASE("cross_entropy matches brute-force oracle on random logits") {
    Rng rng(17);
    const int t = 5, vocab = 7;
    auto logits = random_tensor<double>({t, vocab}, rng, true, "logits");
    std::vector<int> targets;
    std::vector<uint8_t> mask(t, 1);
    mask[3] = 0; // one masked position
    for (int i = 0; i < t; ++i) targets.push_back(static_cast<int>(rng.below(vocab)));

    Graph<double> g;
    auto loss = g.cross_entropy(logits, targets, mask);

    double expect = 0;
    int counted = 0;
    for (int i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        std::vector<double> row(logits->value.begin() + i * vocab, logits->value.begin() + (i + 1) * vocab);
        expect += reference_nll(row, targets[i]);
        ++counted;
    }
    expect /= counted;
    CHECK(loss->value[0] == doctest::Approx(expect).epsilon(1e-10));
    CHECK(loss->value[0] >= 0.0);

    auto f = [&](Graph<double>& gg) { return gg.cross_entropy(logits, targets, mask); };
    auto report = gradient_check<double>(f, {logits}, 1e-6);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("cross_entropy with everything masked is an error") {
    Graph<float> g;
    auto logits = make_tensor<float>({2, 4});
    CHECK_THROWS_AS((void)g.cross_entropy(logits, {0, 0}, {0, 0}), Error);
}

TEST_CASE("backward of sum gives ones") {
    Graph<float> g;
    auto x = make_tensor<float>({2, 3}, {1, -2, 3, 4, -5, 6}, true);
    auto loss = g.sum(x);
    g.backward(loss);
    for (float v : x->grad) CHECK(v == 1.0f);
}

TEST_CASE("backward of sum of squares") {
    Graph<float> g;
    auto x = make_tensor<float>({1, 2}, {1, 2}, true);
    auto loss = g.sum(g.mul(x, x));
    g.backward(loss);
    CHECK(x->grad == std::vector<float>{2, 4});
}

TEST_CASE("backward requires a scalar and consumes the graph") {
    Graph<float> g;
    auto x = make_tensor<float>({2, 2}, {1, 2, 3, 4}, true);
    auto y = g.mul(x, x);
    CHECK_THROWS_AS(g.backward(y), Error);
    auto loss = g.sum(y);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), Error);
}

TEST_CASE("non-recording graph refuses backward and records nothing") {
    Graph<float> g(false);
    auto x = make_tensor<float>({1, 2}, {1, 2}, true);
    auto loss = g.sum(g.mul(x, x));
    CHECK(g.node_count() == 0);
    CHECK_THROWS_AS(g.backward(loss), Error);
}

TEST_CASE("gradient of a quadratic is exact up to roundoff") {
    Rng rng(23);
    auto x = random_tensor<double>({4, 4}, rng, true, "x");
    auto f = [&](Graph<double>& g) { return g.sum(g.mul(x, x)); };
    auto report = gradient_check<double>(f, {x}, 1e-4);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("gradient_check flags a corrupted gradient rule") {
    Rng rng(29);
    auto x = random_tensor<double>({2, 3}, rng, true, "x");
    // y = 2x forward, but a deliberately wrong backward rule (3x gradient).
    auto broken_double = [](Graph<double>& g, const Tensor<double>& in) {
        auto out = make_tensor<double>(in->shape);
        out->requires_grad = in->requires_grad;
        for (int64_t i = 0; i < in->numel(); ++i) out->value[i] = 2.0 * in->value[i];
        g.record([in, out] {
            if (out->grad.empty() || !in->requires_grad) return;
            in->ensure_grad();
            for (int64_t i = 0; i < in->numel(); ++i) in->grad[i] += 3.0 * out->grad[i];
        });
        return out;
    };
    auto f = [&](Graph<double>& g) { return g.sum(broken_double(g, x)); };
    auto report = gradient_check<double>(f, {x}, 1e-5);
    CHECK(report.max_rel_err > 0.3); // 3 vs 2
    CHECK(report.worst_param == "x");
}

TEST_CASE("elementwise and slicing ops match finite differences") {
    Rng rng(31);
    auto a = random_tensor<double>({4, 6}, rng, true, "a");
    auto b = random_tensor<double>({6, 6}, rng, true, "b");
    auto v = random_tensor<double>({6}, rng, true, "v");
    auto table = random_tensor<double>({9, 6}, rng, true, "table");
    std::vector<int> ids{0, 4, 4, 8};
    std::vector<int> keep{1, 3};
    auto f = [&](Graph<double>& g) {
        auto span = g.concat_rows(g.embed_rows(table, ids), g.add_at_rows(a, {0, 2}, v));
        auto mixed = g.mul(g.slice_rows(span, 2, 8), g.add(b, g.scale(b, 0.5)));
        auto cols = g.concat_cols({g.slice_cols(mixed, 0, 2), g.slice_cols(mixed, 2, 6)});
        return g.sum(g.silu(g.gather_rows(cols, keep)));
    };
    auto report = gradient_check<double>(f, {a, b, v, table}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("embed row gather and out-of-range ids") {
    Graph<float> g;
    auto table = make_tensor<float>({3, 2}, {0, 1, 10, 11, 20, 21});
    auto rows = g.embed_rows(table, {0, 2, 2});
    CHECK(rows->value == std::vector<float>{0, 1, 20, 21, 20, 21});
    CHECK_THROWS_AS((void)g.embed_rows(table, {3}), Error);
}

TEST_CASE("rope at position zero is the identity") {
    Rng rng(37);
    Graph<float> g;
    auto x = random_tensor<float>({3, 8}, rng, false);
    auto y = g.rope(x, {0, 0, 0}, 4, 10000.0f);
    CHECK(y->value == x->value);
}

TEST_CASE("rope preserves pairwise norms") {
    Rng rng(41);
    Graph<float> g;
    auto x = random_tensor<float>({4, 8}, rng, false);
    auto y = g.rope(x, {1, 5, 9, 200}, 4, 10000.0f);
    for (int r = 0; r < 4; ++r) {
        for (int p = 0; p < 4; ++p) {
            float n0 = std::hypot(x->at(r, 2 * p), x->at(r, 2 * p + 1));
            float n1 = std::hypot(y->at(r, 2 * p), y->at(r, 2 * p + 1));
            CHECK(n1 == doctest::Approx(n0).epsilon(1e-6));
        }
    }
}

TEST_CASE("rope dot products depend only on relative offset") {
    Rng rng(43);
    const int d = 16;
    auto q = random_tensor<double>({1, d}, rng, false);
    auto k = random_tensor<double>({1, d}, rng, false);
    auto dot_at = [&](int pq, int pk) {
        Graph<double> g(false);
        auto qr = g.rope(q, {pq}, d, 10000.0);
        auto kr = g.rope(k, {pk}, d, 10000.0);
        double s = 0;
        for (int i = 0; i < d; ++i) s += qr->value[i] * kr->value[i];
        return s;
    };
    double base = dot_at(7, 3);
    for (int shift : {1, 10, 100}) {
        double shifted = dot_at(7 + shift, 3 + shift);
        CHECK(shifted == doctest::Approx(base).epsilon(1e-5));
    }
    CHECK(dot_at(8, 3) != doctest::Approx(base).epsilon(1e-3));
}

TEST_CASE("rope requires even d_head") {
    Graph<float> g;
    auto x = make_tensor<float>({1, 3});
    CHECK_THROWS_AS((void)g.rope(x, {0}, 3, 10000.0f), Error);
}

TEST_CASE("rope gradient vs finite differences") {
    Rng rng(47);
    auto x = random_tensor<double>({3, 8}, rng, true, "x");
    auto w = random_tensor<double>({3, 8}, rng, false);
    std::vector<int> pos{2, 9, 31};
    auto f = [&](Graph<double>& g) { return g.sum(g.mul(g.rope(x, pos, 4, 10000.0), w)); };
    auto report = gradient_check<double>(f, {x}, 1e-5);
    CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("grads accumulate across uses and zero_grads clears") {
    Graph<float> g;
    auto x = make_tensor<float>({1, 2}, {3, 4}, true);
    auto loss = g.sum(g.add(x, x));
    g.backward(loss);
    CHECK(x->grad == std::vector<float>{2, 2});
    zero_grads<float>({x});
    CHECK(x->grad.empty());
}

TEST_CASE("frozen tensors never receive grad") {
    Graph<float> g;
    auto w = make_tensor<float>({2, 2}, {1, 2, 3, 4}, false, "frozen");
    auto x = make_tensor<float>({1, 2}, {1, 1}, true, "x");
    auto loss = g.sum(g.matmul(x, w));
    g.backward(loss);
    CHECK(w->grad.empty());
    CHECK(x->grad.size() == 2);
}

TEST_CASE("backward leaves finite grads on random graphs") {
    Rng rng(53);
    for (int trial = 0; trial < 20; ++trial) {
        Graph<float> g;
        auto a = random_tensor<float>({5, 4}, rng, true);
        auto b = random_tensor<float>({4, 3}, rng, true);
        auto w = random_tensor<float>({3}, rng, true);
        auto h = g.rms_norm(g.silu(g.matmul(a, b)), w, 1e-5f);
        auto loss = g.cross_entropy(h, {0, 2, 1, 1, 0}, {1, 1, 0, 1, 1});
        g.backward(loss);
        for (auto& t : {a, b, w})
            for (float v : t->grad) CHECK(std::isfinite(v));
    }
}

TEST_CASE("sub-seed fan-out is stable and stream-dependent") {
    CHECK(sub_seed(1, "data") == sub_seed(1, "data"));
    CHECK(sub_seed(1, "data") != sub_seed(1, "init"));
    CHECK(sub_seed(1, "data") != sub_seed(2, "data"));
}

TEST_CASE("rng sampling is deterministic and unbiased-ish") {
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) CHECK(a.below(1000) == b.below(1000));

    // marginal inclusion of sample_without_replacement ~ k/n
    const int n = 20, k = 5, trials = 20000;
    std::vector<int> counts(n, 0);
    Rng rng(7);
    for (int t = 0; t < trials; ++t)
        for (int idx : rng.sample_without_replacement(n, k)) counts[idx]++;
    const double p = double(k) / n;
    const double sigma = std::sqrt(p * (1 - p) / trials);
    for (int i = 0; i < n; ++i) {
        double phat = double(counts[i]) / trials;
        CHECK(std::abs(phat - p) < 4 * sigma);
    }
}
