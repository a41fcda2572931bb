#pragma once

// End-to-end check: d(multi-positive loss)/d(encoder params) against central
// differences through tokens -> encoder -> loss.

#include <algorithm>
#include <vector>

#include "mpcl/encoder.hpp"
#include "mpcl/objectives.hpp"
#include "test_util.hpp"

namespace mpcl::check {

struct PipelineInstance {
    ModelParams<double> params;
    std::vector<TokenIds> anchors;
    std::vector<TokenIds> positives;  // group-major, k per anchor
    std::size_t k = 1;
    LossConfig cfg;
};

inline ContrastiveBatch pipeline_batch(const PipelineInstance& inst) {
    ContrastiveBatch b;
    b.anchors = encode(inst.params, std::span<const TokenIds>(inst.anchors)).embeddings;
    b.positives = encode(inst.params, std::span<const TokenIds>(inst.positives)).embeddings;
    b.positives_per_anchor = inst.k;
    return b;
}

inline double pipeline_loss(const PipelineInstance& inst) {
    return multi_positive_loss(pipeline_batch(inst), inst.cfg).value;
}

inline ParamGrads pipeline_grads(const PipelineInstance& inst) {
    const auto a = encode(inst.params, std::span<const TokenIds>(inst.anchors));
    const auto p = encode(inst.params, std::span<const TokenIds>(inst.positives));
    const auto loss = multi_positive_loss({a.embeddings, p.embeddings, inst.k, std::nullopt}, inst.cfg);
    auto grads = encode_backward(inst.params, a.cache, loss.grad_anchors);
    grads.add(encode_backward(inst.params, p.cache, loss.grad_positives));
    return grads;
}

/// Random instance: `groups` anchors with k positives each, short random
/// token sequences, unit-scale uniform embeddings (so a 1e-4 step is small
/// relative to the parameters) and a perturbed-identity projection.
/// Redrawn until every candidate set has well-separated extrema and no anchor
/// loss is saturated: at loss ~1e-50 the function is e^-(hundreds) and a
/// central difference measures its curvature, not the gradient.
inline PipelineInstance random_pipeline_instance(std::size_t groups, std::size_t k, std::size_t dim,
                                                 unsigned hash_bits, Rng& rng) {
    PipelineInstance inst;
    inst.k = k;
    inst.cfg = LossConfig{0.05, Normalization::min_max, false};
    for (;;) {
        inst.params.hash_bits = hash_bits;
        inst.params.dim = dim;
        inst.params.embedding = Matrix<double>(std::size_t{1} << hash_bits, dim);
        for (double& v : inst.params.embedding.storage()) v = uniform_real(rng, -1.0, 1.0);
        inst.params.projection = Matrix<double>::identity(dim);
        for (double& v : inst.params.projection.storage()) v += uniform_real(rng, -0.2, 0.2);
        auto sentence = [&] {
            TokenIds ids(2 + uniform_index(rng, 4));
            for (auto& id : ids) id = static_cast<std::uint32_t>(uniform_index(rng, std::size_t{1} << hash_bits));
            return ids;
        };
        inst.anchors.clear();
        inst.positives.clear();
        for (std::size_t g = 0; g < groups; ++g) {
            inst.anchors.push_back(sentence());
            for (std::size_t p = 0; p < k; ++p) inst.positives.push_back(sentence());
        }
        const auto batch = pipeline_batch(inst);
        if (extremum_gap(batch) <= 1e-2) continue;
        const auto per_anchor = multi_positive_loss(batch, inst.cfg).per_anchor;
        if (*std::min_element(per_anchor.begin(), per_anchor.end()) > 1e-6) return inst;
    }
}

/// Norm-wise relative error between analytic and central-difference
/// gradients over the embedding rows in use and the full projection.
inline double pipeline_gradient_error(PipelineInstance inst, double h = 1e-4) {
    const ParamGrads analytic = pipeline_grads(inst);
    auto f = [&] { return pipeline_loss(inst); };

    std::vector<std::uint32_t> used;
    for (const auto* group : {&inst.anchors, &inst.positives}) {
        for (const auto& s : *group) used.insert(used.end(), s.begin(), s.end());
    }
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());

    const std::size_t d = inst.params.dim;
    Matrix<double> fd_rows(used.size(), d), an_rows(used.size(), d);
    for (std::size_t u = 0; u < used.size(); ++u) {
        auto row = inst.params.embedding.row(used[u]);
        const auto grow = analytic.find_row(used[u]);
        for (std::size_t t = 0; t < d; ++t) {
            const double saved = row[t];
            row[t] = saved + h;
            const double up = f();
            row[t] = saved - h;
            const double down = f();
            row[t] = saved;
            fd_rows(u, t) = (up - down) / (2 * h);
            an_rows(u, t) = grow ? (*grow)[t] : 0.0;
        }
    }
    const Matrix<double> fd_proj = finite_difference(inst.params.projection, f, h);
    return relative_error({&an_rows, &analytic.projection}, {&fd_rows, &fd_proj});
}

}  // namespace mpcl::check
