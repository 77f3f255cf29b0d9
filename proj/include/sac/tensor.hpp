#pragma once

#include "sac/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

namespace sac {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

// Additive penalty for masked attention logits. Finite on purpose: a fully
// masked row degrades to near-uniform instead of NaN.
inline constexpr double kMaskPenalty = -1e9;

template <typename T>
struct TensorObj {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // allocated on first accumulation
    bool requires_grad = false;
    std::string name;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    int rows() const { return shape.size() == 2 ? shape[0] : 1; }
    int cols() const { return shape.empty() ? 1 : shape.back(); }

    T& at(int r, int c) { return value[static_cast<size_t>(r) * cols() + c]; }
    const T& at(int r, int c) const { return value[static_cast<size_t>(r) * cols() + c]; }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
    void zero_grad() { grad.clear(); }
};

template <typename T>
using Tensor = std::shared_ptr<TensorObj<T>>;

template <typename T>
Tensor<T> make_tensor(Shape shape, bool requires_grad = false, std::string name = {}) {
    auto t = std::make_shared<TensorObj<T>>();
    t->shape = std::move(shape);
    require(!t->shape.empty(), ErrKind::dimension, "tensor needs at least one extent");
    for (int d : t->shape) require(d >= 1, ErrKind::dimension, "tensor extents must be >= 1");
    t->value.assign(static_cast<size_t>(shape_numel(t->shape)), T(0));
    t->requires_grad = requires_grad;
    t->name = std::move(name);
    return t;
}

template <typename T>
Tensor<T> make_tensor(Shape shape, std::vector<T> data, bool requires_grad = false, std::string name = {}) {
    auto t = make_tensor<T>(std::move(shape), requires_grad, std::move(name));
    require(static_cast<int64_t>(data.size()) == t->numel(), ErrKind::dimension,
            "tensor data length does not match shape");
    t->value = std::move(data);
    return t;
}

template <typename T>
void zero_grads(const std::vector<Tensor<T>>& params) {
    for (auto& p : params) p->zero_grad();
}

namespace detail {
template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
EMap<T> map(TensorObj<T>& t, int r, int c) {
    return EMap<T>(t.value.data(), r, c);
}
template <typename T>
ECMap<T> cmap(const TensorObj<T>& t, int r, int c) {
    return ECMap<T>(t.value.data(), r, c);
}
template <typename T>
EMap<T> gmap(TensorObj<T>& t, int r, int c) {
    return EMap<T>(t.grad.data(), r, c);
}
template <typename T>
ECMap<T> cgmap(const TensorObj<T>& t, int r, int c) {
    return ECMap<T>(t.grad.data(), r, c);
}
} // namespace detail

// Reverse-mode tape. Ops append nodes in forward order, so the tape is
// already topologically sorted; backward() replays it once in reverse and
// consumes it (single-use contract). A non-recording graph computes forward
// values only, for inference.
template <typename T>
class Graph {
  public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t node_count() const { return tape_.size(); }

    void backward(const Tensor<T>& loss) {
        require(recording_, ErrKind::contract, "backward on a non-recording graph");
        require(!consumed_, ErrKind::contract, "backward called twice on the same graph");
        require(loss->numel() == 1, ErrKind::contract, "backward requires a scalar loss");
        consumed_ = true;
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
        tape_.clear(); // release intermediate values
    }

    // Extension point (also used by tests to study corrupted gradient rules).
    void record(std::function<void()> backward_fn) {
        if (recording_) tape_.push_back(std::move(backward_fn));
    }

    // ---- arithmetic ----

    Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
        require(a->shape.size() == 2 && b->shape.size() == 2, ErrKind::dimension, "matmul expects 2-d tensors");
        const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
        require(b->shape[0] == k, ErrKind::dimension, "matmul inner extents differ");
        auto out = fresh({m, n}, a, b);
        detail::map(*out, m, n).noalias() = detail::cmap(*a, m, k) * detail::cmap(*b, k, n);
        if (track(out)) {
            record([a, b, out, m, k, n] {
                if (out->grad.empty()) return;
                auto g = detail::cgmap(*out, m, n);
                if (a->requires_grad) {
                    a->ensure_grad();
                    detail::gmap(*a, m, k).noalias() += g * detail::cmap(*b, k, n).transpose();
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    detail::gmap(*b, k, n).noalias() += detail::cmap(*a, m, k).transpose() * g;
                }
            });
        }
        return out;
    }

    // a [m,k] * b[n,k]^T -> [m,n]
    Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
        require(a->shape.size() == 2 && b->shape.size() == 2, ErrKind::dimension, "matmul_nt expects 2-d tensors");
        const int m = a->shape[0], k = a->shape[1], n = b->shape[0];
        require(b->shape[1] == k, ErrKind::dimension, "matmul_nt inner extents differ");
        auto out = fresh({m, n}, a, b);
        detail::map(*out, m, n).noalias() = detail::cmap(*a, m, k) * detail::cmap(*b, n, k).transpose();
        if (track(out)) {
            record([a, b, out, m, k, n] {
                if (out->grad.empty()) return;
                auto g = detail::cgmap(*out, m, n);
                if (a->requires_grad) {
                    a->ensure_grad();
                    detail::gmap(*a, m, k).noalias() += g * detail::cmap(*b, n, k);
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    detail::gmap(*b, n, k).noalias() += g.transpose() * detail::cmap(*a, m, k);
                }
            });
        }
        return out;
    }

    Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
        require(a->shape == b->shape, ErrKind::dimension, "add shape mismatch");
        auto out = fresh(a->shape, a, b);
        for (int64_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] + b->value[i];
        if (track(out)) {
            record([a, b, out] {
                if (out->grad.empty()) return;
                accumulate(a, out->grad);
                accumulate(b, out->grad);
            });
        }
        return out;
    }

    Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
        require(a->shape == b->shape, ErrKind::dimension, "mul shape mismatch");
        auto out = fresh(a->shape, a, b);
        for (int64_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * b->value[i];
        if (track(out)) {
            record([a, b, out] {
                if (out->grad.empty()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * b->value[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (int64_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i] * a->value[i];
                }
            });
        }
        return out;
    }

    Tensor<T> scale(const Tensor<T>& a, T c) {
        auto out = fresh(a->shape, a);
        for (int64_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] * c;
        if (track(out)) {
            record([a, out, c] {
                if (out->grad.empty() || !a->requires_grad) return;
                a->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * c;
            });
        }
        return out;
    }

    // Adds a constant (non-differentiable) bias of identical extent, e.g. the
    // attention mask penalty matrix.
    Tensor<T> add_const(const Tensor<T>& a, const std::vector<T>& bias) {
        require(static_cast<int64_t>(bias.size()) == a->numel(), ErrKind::dimension, "add_const extent mismatch");
        auto out = fresh(a->shape, a);
        for (int64_t i = 0; i < out->numel(); ++i) out->value[i] = a->value[i] + bias[i];
        if (track(out)) {
            record([a, out] {
                if (out->grad.empty()) return;
                accumulate(a, out->grad);
            });
        }
        return out;
    }

    Tensor<T> silu(const Tensor<T>& a) {
        auto out = fresh(a->shape, a);
        for (int64_t i = 0; i < out->numel(); ++i) {
            T s = sigmoid(a->value[i]);
            out->value[i] = a->value[i] * s;
        }
        if (track(out)) {
            record([a, out] {
                if (out->grad.empty() || !a->requires_grad) return;
                a->ensure_grad();
                for (int64_t i = 0; i < out->numel(); ++i) {
                    T x = a->value[i];
                    T s = sigmoid(x);
                    a->grad[i] += out->grad[i] * (s + x * s * (T(1) - s));
                }
            });
        }
        return out;
    }

    Tensor<T> sum(const Tensor<T>& a) {
        auto out = fresh({1}, a);
        T acc = 0;
        for (int64_t i = 0; i < a->numel(); ++i) acc += a->value[i];
        out->value[0] = acc;
        if (track(out)) {
            record([a, out] {
                if (out->grad.empty() || !a->requires_grad) return;
                a->ensure_grad();
                for (int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[0];
            });
        }
        return out;
    }

    // ---- normalization / softmax / losses ----

    // Row-wise softmax over the last extent, stabilized by row-max
    // subtraction. A row whose max is not finite is defined as uniform.
    Tensor<T> softmax_rows(const Tensor<T>& x) {
        const auto [rows, cols] = as_2d(x, "softmax_rows");
        require(cols >= 1, ErrKind::dimension, "softmax_rows needs a non-empty last extent");
        auto out = fresh(x->shape, x);
        for (int r = 0; r < rows; ++r) {
            const T* in = x->value.data() + static_cast<size_t>(r) * cols;
            T* o = out->value.data() + static_cast<size_t>(r) * cols;
            T mx = in[0];
            for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
            if (!std::isfinite(static_cast<double>(mx))) {
                for (int c = 0; c < cols; ++c) o[c] = T(1) / T(cols);
                continue;
            }
            T denom = 0;
            for (int c = 0; c < cols; ++c) {
                o[c] = std::exp(in[c] - mx);
                denom += o[c];
            }
            for (int c = 0; c < cols; ++c) o[c] /= denom;
        }
        if (track(out)) {
            record([x, out, rows = rows, cols = cols] {
                if (out->grad.empty() || !x->requires_grad) return;
                x->ensure_grad();
                for (int r = 0; r < rows; ++r) {
                    const T* y = out->value.data() + static_cast<size_t>(r) * cols;
                    const T* g = out->grad.data() + static_cast<size_t>(r) * cols;
                    T* gx = x->grad.data() + static_cast<size_t>(r) * cols;
                    T dot = 0;
                    for (int c = 0; c < cols; ++c) dot += g[c] * y[c];
                    for (int c = 0; c < cols; ++c) gx[c] += y[c] * (g[c] - dot);
                }
            });
        }
        return out;
    }

    Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& weight, T eps) {
        const auto [rows, cols] = as_2d(x, "rms_norm");
        require(weight->numel() == cols, ErrKind::dimension, "rms_norm weight extent mismatch");
        require(eps > T(0), ErrKind::config, "rms_norm eps must be positive");
        auto out = fresh(x->shape, x, weight);
        std::vector<T> inv_rms(rows);
        for (int r = 0; r < rows; ++r) {
            const T* in = x->value.data() + static_cast<size_t>(r) * cols;
            T ms = 0;
            for (int c = 0; c < cols; ++c) ms += in[c] * in[c];
            ms /= T(cols);
            inv_rms[r] = T(1) / std::sqrt(ms + eps);
            T* o = out->value.data() + static_cast<size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) o[c] = in[c] * inv_rms[r] * weight->value[c];
        }
        if (track(out)) {
            record([x, weight, out, rows = rows, cols = cols, inv_rms = std::move(inv_rms)] {
                if (out->grad.empty()) return;
                for (int r = 0; r < rows; ++r) {
                    const T* in = x->value.data() + static_cast<size_t>(r) * cols;
                    const T* g = out->grad.data() + static_cast<size_t>(r) * cols;
                    const T ir = inv_rms[r];
                    if (weight->requires_grad) {
                        weight->ensure_grad();
                        for (int c = 0; c < cols; ++c) weight->grad[c] += g[c] * in[c] * ir;
                    }
                    if (x->requires_grad) {
                        x->ensure_grad();
                        T* gx = x->grad.data() + static_cast<size_t>(r) * cols;
                        T dot = 0;
                        for (int c = 0; c < cols; ++c) dot += g[c] * weight->value[c] * in[c];
                        const T k = ir * ir * ir * dot / T(cols);
                        for (int c = 0; c < cols; ++c) gx[c] += g[c] * weight->value[c] * ir - in[c] * k;
                    }
                }
            });
        }
        return out;
    }

    // Mean negative log-likelihood over unmasked positions (mask[i] != 0
    // means the position counts), log-sum-exp stabilized.
    Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                            const std::vector<uint8_t>& count_mask) {
        require(logits->shape.size() == 2, ErrKind::dimension, "cross_entropy expects [t, vocab] logits");
        const int t = logits->shape[0], vocab = logits->shape[1];
        require(static_cast<int>(targets.size()) == t, ErrKind::dimension, "cross_entropy targets length mismatch");
        require(static_cast<int>(count_mask.size()) == t, ErrKind::dimension, "cross_entropy mask length mismatch");
        int counted = 0;
        for (int i = 0; i < t; ++i) {
            if (!count_mask[i]) continue;
            require(targets[i] >= 0 && targets[i] < vocab, ErrKind::vocab, "cross_entropy target id out of range");
            ++counted;
        }
        require(counted > 0, ErrKind::contract, "cross_entropy: all positions masked");
        auto out = fresh({1}, logits);
        T total = 0;
        for (int i = 0; i < t; ++i) {
            if (!count_mask[i]) continue;
            const T* row = logits->value.data() + static_cast<size_t>(i) * vocab;
            T mx = row[0];
            for (int c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
            T denom = 0;
            for (int c = 0; c < vocab; ++c) denom += std::exp(row[c] - mx);
            total += std::log(denom) + mx - row[targets[i]];
        }
        out->value[0] = total / T(counted);
        if (track(out)) {
            record([logits, out, targets, count_mask, t, vocab, counted] {
                if (out->grad.empty() || !logits->requires_grad) return;
                logits->ensure_grad();
                const T upstream = out->grad[0] / T(counted);
                for (int i = 0; i < t; ++i) {
                    if (!count_mask[i]) continue;
                    const T* row = logits->value.data() + static_cast<size_t>(i) * vocab;
                    T* grow = logits->grad.data() + static_cast<size_t>(i) * vocab;
                    T mx = row[0];
                    for (int c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
                    T denom = 0;
                    for (int c = 0; c < vocab; ++c) denom += std::exp(row[c] - mx);
                    for (int c = 0; c < vocab; ++c) {
                        T p = std::exp(row[c] - mx) / denom;
                        grow[c] += upstream * (p - (c == targets[i] ? T(1) : T(0)));
                    }
                }
            });
        }
        return out;
    }

    // ---- gathers / layout ----

    Tensor<T> embed_rows(const Tensor<T>& table, const std::vector<int>& ids) {
        require(table->shape.size() == 2, ErrKind::dimension, "embed_rows expects a 2-d table");
        const int vocab = table->shape[0], d = table->shape[1];
        auto out = fresh({static_cast<int>(ids.size()), d}, table);
        for (size_t i = 0; i < ids.size(); ++i) {
            require(ids[i] >= 0 && ids[i] < vocab, ErrKind::vocab,
                    "embed: token id " + std::to_string(ids[i]) + " outside vocab of " + std::to_string(vocab));
            std::copy_n(table->value.data() + static_cast<size_t>(ids[i]) * d, d,
                        out->value.data() + i * d);
        }
        if (track(out)) {
            record([table, out, ids, d] {
                if (out->grad.empty() || !table->requires_grad) return;
                table->ensure_grad();
                for (size_t i = 0; i < ids.size(); ++i) {
                    const T* g = out->grad.data() + i * d;
                    T* dst = table->grad.data() + static_cast<size_t>(ids[i]) * d;
                    for (int c = 0; c < d; ++c) dst[c] += g[c];
                }
            });
        }
        return out;
    }

    Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& rows_idx) {
        require(a->shape.size() == 2, ErrKind::dimension, "gather_rows expects a 2-d tensor");
        const int r = a->shape[0], d = a->shape[1];
        auto out = fresh({static_cast<int>(rows_idx.size()), d}, a);
        for (size_t i = 0; i < rows_idx.size(); ++i) {
            require(rows_idx[i] >= 0 && rows_idx[i] < r, ErrKind::index, "gather_rows index out of range");
            std::copy_n(a->value.data() + static_cast<size_t>(rows_idx[i]) * d, d, out->value.data() + i * d);
        }
        if (track(out)) {
            record([a, out, rows_idx, d] {
                if (out->grad.empty() || !a->requires_grad) return;
                a->ensure_grad();
                for (size_t i = 0; i < rows_idx.size(); ++i) {
                    const T* g = out->grad.data() + i * d;
                    T* dst = a->grad.data() + static_cast<size_t>(rows_idx[i]) * d;
                    for (int c = 0; c < d; ++c) dst[c] += g[c];
                }
            });
        }
        return out;
    }

    Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
        require(a->shape.size() == 2 && b->shape.size() == 2 && a->shape[1] == b->shape[1],
                ErrKind::dimension, "concat_rows column mismatch");
        const int ra = a->shape[0], rb = b->shape[0], d = a->shape[1];
        auto out = fresh({ra + rb, d}, a, b);
        std::copy(a->value.begin(), a->value.end(), out->value.begin());
        std::copy(b->value.begin(), b->value.end(), out->value.begin() + static_cast<size_t>(ra) * d);
        if (track(out)) {
            record([a, b, out, ra, rb, d] {
                if (out->grad.empty()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (int64_t i = 0; i < static_cast<int64_t>(ra) * d; ++i) a->grad[i] += out->grad[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    const T* g = out->grad.data() + static_cast<size_t>(ra) * d;
                    for (int64_t i = 0; i < static_cast<int64_t>(rb) * d; ++i) b->grad[i] += g[i];
                }
            });
        }
        return out;
    }

    Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
        require(a->shape.size() == 2, ErrKind::dimension, "slice_rows expects a 2-d tensor");
        require(0 <= r0 && r0 < r1 && r1 <= a->shape[0], ErrKind::index, "slice_rows range invalid");
        const int d = a->shape[1];
        auto out = fresh({r1 - r0, d}, a);
        std::copy_n(a->value.data() + static_cast<size_t>(r0) * d, static_cast<size_t>(r1 - r0) * d,
                    out->value.data());
        if (track(out)) {
            record([a, out, r0, r1, d] {
                if (out->grad.empty() || !a->requires_grad) return;
                a->ensure_grad();
                T* dst = a->grad.data() + static_cast<size_t>(r0) * d;
                for (int64_t i = 0; i < static_cast<int64_t>(r1 - r0) * d; ++i) dst[i] += out->grad[i];
            });
        }
        return out;
    }

    Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
        require(a->shape.size() == 2, ErrKind::dimension, "slice_cols expects a 2-d tensor");
        require(0 <= c0 && c0 < c1 && c1 <= a->shape[1], ErrKind::index, "slice_cols range invalid");
        const int rows = a->shape[0], d = a->shape[1], w = c1 - c0;
        auto out = fresh({rows, w}, a);
        for (int r = 0; r < rows; ++r)
            std::copy_n(a->value.data() + static_cast<size_t>(r) * d + c0, w,
                        out->value.data() + static_cast<size_t>(r) * w);
        if (track(out)) {
            record([a, out, c0, rows, d, w] {
                if (out->grad.empty() || !a->requires_grad) return;
                a->ensure_grad();
                for (int r = 0; r < rows; ++r) {
                    const T* g = out->grad.data() + static_cast<size_t>(r) * w;
                    T* dst = a->grad.data() + static_cast<size_t>(r) * d + c0;
                    for (int c = 0; c < w; ++c) dst[c] += g[c];
                }
            });
        }
        return out;
    }

    Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
        require(!parts.empty(), ErrKind::dimension, "concat_cols needs at least one part");
        const int rows = parts[0]->shape[0];
        int total = 0;
        for (auto& p : parts) {
            require(p->shape.size() == 2 && p->shape[0] == rows, ErrKind::dimension, "concat_cols row mismatch");
            total += p->shape[1];
        }
        auto out = make_tensor<T>({rows, total});
        for (auto& p : parts)
            if (p->requires_grad) out->requires_grad = true;
        int off = 0;
        for (auto& p : parts) {
            const int w = p->shape[1];
            for (int r = 0; r < rows; ++r)
                std::copy_n(p->value.data() + static_cast<size_t>(r) * w, w,
                            out->value.data() + static_cast<size_t>(r) * total + off);
            off += w;
        }
        if (track(out)) {
            record([parts, out, rows, total] {
                if (out->grad.empty()) return;
                int off2 = 0;
                for (auto& p : parts) {
                    const int w = p->shape[1];
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (int r = 0; r < rows; ++r) {
                            const T* g = out->grad.data() + static_cast<size_t>(r) * total + off2;
                            T* dst = p->grad.data() + static_cast<size_t>(r) * w;
                            for (int c = 0; c < w; ++c) dst[c] += g[c];
                        }
                    }
                    off2 += w;
                }
            });
        }
        return out;
    }

    // out = a, plus vector v added into each listed row (anchor marking).
    Tensor<T> add_at_rows(const Tensor<T>& a, const std::vector<int>& rows_idx, const Tensor<T>& v) {
        require(a->shape.size() == 2, ErrKind::dimension, "add_at_rows expects a 2-d tensor");
        const int rows = a->shape[0], d = a->shape[1];
        require(v->numel() == d, ErrKind::dimension, "add_at_rows vector extent mismatch");
        for (int r : rows_idx) require(r >= 0 && r < rows, ErrKind::index, "add_at_rows row index out of range");
        auto out = fresh(a->shape, a, v);
        out->value = a->value;
        for (int r : rows_idx) {
            T* dst = out->value.data() + static_cast<size_t>(r) * d;
            for (int c = 0; c < d; ++c) dst[c] += v->value[c];
        }
        if (track(out)) {
            record([a, v, out, rows_idx, d] {
                if (out->grad.empty()) return;
                accumulate(a, out->grad);
                if (v->requires_grad) {
                    v->ensure_grad();
                    for (int r : rows_idx) {
                        const T* g = out->grad.data() + static_cast<size_t>(r) * d;
                        for (int c = 0; c < d; ++c) v->grad[c] += g[c];
                    }
                }
            });
        }
        return out;
    }

    // Rotary position encoding over head-blocked columns: each d_head block
    // is rotated pairwise with angle pos * base^(-2i/d_head). Position 0 is
    // the identity. The backward pass rotates the gradient by the negative
    // angle (rotations are orthogonal).
    Tensor<T> rope(const Tensor<T>& x, const std::vector<int>& positions, int d_head, T base) {
        require(x->shape.size() == 2, ErrKind::dimension, "rope expects a 2-d tensor");
        const int rows = x->shape[0], d = x->shape[1];
        require(d_head >= 2 && d_head % 2 == 0, ErrKind::config, "rope requires even d_head");
        require(d % d_head == 0, ErrKind::dimension, "rope: width not a multiple of d_head");
        require(static_cast<int>(positions.size()) == rows, ErrKind::dimension, "rope positions length mismatch");
        auto out = fresh(x->shape, x);
        rope_rotate(x->value.data(), out->value.data(), rows, d, d_head, base, positions, /*invert=*/false);
        if (track(out)) {
            record([x, out, positions, d_head, base, rows, d] {
                if (out->grad.empty() || !x->requires_grad) return;
                x->ensure_grad();
                std::vector<T> tmp(out->grad.size());
                rope_rotate(out->grad.data(), tmp.data(), rows, d, d_head, base, positions, /*invert=*/true);
                for (size_t i = 0; i < tmp.size(); ++i) x->grad[i] += tmp[i];
            });
        }
        return out;
    }

  private:
    std::vector<std::function<void()>> tape_;
    bool recording_;
    bool consumed_ = false;

    static T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

    static std::pair<int, int> as_2d(const Tensor<T>& x, const char* op) {
        require(x->shape.size() <= 2, ErrKind::dimension, std::string(op) + " expects rank <= 2");
        if (x->shape.size() == 2) return {x->shape[0], x->shape[1]};
        return {1, x->shape[0]};
    }

    static void accumulate(const Tensor<T>& t, const std::vector<T>& g) {
        if (!t->requires_grad) return;
        t->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) t->grad[i] += g[i];
    }

    static void rope_rotate(const T* in, T* out, int rows, int d, int d_head, T base,
                            const std::vector<int>& positions, bool invert) {
        const int pairs = d_head / 2;
        for (int r = 0; r < rows; ++r) {
            const T pos = T(positions[r]);
            const T* src = in + static_cast<size_t>(r) * d;
            T* dst = out + static_cast<size_t>(r) * d;
            for (int h = 0; h < d / d_head; ++h) {
                for (int p = 0; p < pairs; ++p) {
                    const T freq = std::pow(base, -T(2 * p) / T(d_head));
                    T angle = pos * freq;
                    if (invert) angle = -angle;
                    const T c = std::cos(angle), s = std::sin(angle);
                    const int i0 = h * d_head + 2 * p, i1 = i0 + 1;
                    const T v0 = src[i0], v1 = src[i1];
                    dst[i0] = v0 * c - v1 * s;
                    dst[i1] = v0 * s + v1 * c;
                }
            }
        }
    }

    template <typename... Inputs>
    Tensor<T> fresh(Shape shape, const Inputs&... in) {
        auto out = make_tensor<T>(std::move(shape));
        out->requires_grad = recording_ && (... || in->requires_grad);
        return out;
    }

    bool track(const Tensor<T>& out) const { return recording_ && out->requires_grad; }
};

} // namespace sac
