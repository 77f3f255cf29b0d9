#pragma once

#include "sac/rng.hpp"
#include "sac/tensor.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace sac {

struct GradCheckParam {
    std::string name;
    double max_rel_err = 0.0;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    int64_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckParam> params;
    double max_rel_err = 0.0;
    std::string worst_param;
};

// Central-difference check of every element of every parameter (or a seeded
// random subset above `subset_threshold` elements) against the analytic
// gradient. `f` must be a deterministic function of the parameter values that
// returns a scalar loss tensor built on the supplied graph.
template <typename T>
GradCheckReport gradient_check(const std::function<Tensor<T>(Graph<T>&)>& f,
                               const std::vector<Tensor<T>>& params, T h,
                               uint64_t subset_seed = 1, int64_t subset_threshold = 10000) {
    zero_grads(params);
    Graph<T> g;
    Tensor<T> loss = f(g);
    g.backward(loss);
    for (auto& p : params) {
        require(p->requires_grad, ErrKind::contract, "gradient_check: parameter '" + p->name +
                                                         "' does not require grad");
        p->ensure_grad();
        for (T v : p->grad)
            require(std::isfinite(static_cast<double>(v)), ErrKind::numeric,
                    "gradient_check: non-finite analytic gradient in parameter '" + p->name + "'");
    }

    auto eval = [&]() -> double {
        Graph<T> fg(/*recording=*/false);
        return static_cast<double>(f(fg)->value[0]);
    };

    GradCheckReport report;
    for (auto& p : params) {
        GradCheckParam pr;
        pr.name = p->name.empty() ? "<unnamed>" : p->name;
        std::vector<int64_t> indices;
        if (p->numel() > subset_threshold) {
            Rng rng(sub_seed(subset_seed, pr.name));
            for (int64_t i = 0; i < subset_threshold; ++i)
                indices.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(p->numel()))));
        } else {
            indices.resize(p->numel());
            for (int64_t i = 0; i < p->numel(); ++i) indices[i] = i;
        }
        for (int64_t idx : indices) {
            const T saved = p->value[idx];
            p->value[idx] = saved + h;
            const double fp = eval();
            p->value[idx] = saved - h;
            const double fm = eval();
            p->value[idx] = saved;
            require(std::isfinite(fp) && std::isfinite(fm), ErrKind::numeric,
                    "gradient_check: non-finite loss while perturbing parameter '" + pr.name + "'");
            const double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
            const double analytic = static_cast<double>(p->grad[idx]);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            const double rel = std::abs(analytic - numeric) / denom;
            ++pr.checked;
            if (rel > pr.max_rel_err) {
                pr.max_rel_err = rel;
                pr.worst_index = idx;
                pr.analytic = analytic;
                pr.numeric = numeric;
            }
        }
        if (pr.max_rel_err > report.max_rel_err) {
            report.max_rel_err = pr.max_rel_err;
            report.worst_param = pr.name;
        }
        report.params.push_back(std::move(pr));
    }
    return report;
}

} // namespace sac
