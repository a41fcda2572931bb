#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mpcl/core/errors.hpp"
#include "mpcl/encoder.hpp"

namespace mpcl {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct OptimizerState {
    Matrix<T> m_embedding, v_embedding;
    Matrix<T> m_projection, v_projection;
    std::uint64_t step = 0;
    AdamConfig config;

    // Rows whose moments may be nonzero. A row outside this set has zero
    // moments and zero gradient, so its Adam update is exactly zero and is
    // skipped. Derived data: rebuilt from the moments on load.
    std::vector<std::uint8_t> active_rows;

    static OptimizerState zeros_like(const ModelParams<T>& params, AdamConfig config = {}) {
        OptimizerState s;
        s.m_embedding = Matrix<T>(params.embedding.rows(), params.embedding.cols());
        s.v_embedding = s.m_embedding;
        s.m_projection = Matrix<T>(params.projection.rows(), params.projection.cols());
        s.v_projection = s.m_projection;
        s.config = config;
        s.active_rows.assign(params.embedding.rows(), 0);
        return s;
    }

    void rebuild_active_rows() {
        active_rows.assign(m_embedding.rows(), 0);
        for (std::size_t r = 0; r < m_embedding.rows(); ++r) {
            const auto m = m_embedding.row(r);
            const auto v = v_embedding.row(r);
            for (std::size_t t = 0; t < m.size(); ++t) {
                if (m[t] != T{0} || v[t] != T{0}) {
                    active_rows[r] = 1;
                    break;
                }
            }
        }
    }

    friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
        return a.m_embedding == b.m_embedding && a.v_embedding == b.v_embedding &&
               a.m_projection == b.m_projection && a.v_projection == b.v_projection && a.step == b.step &&
               a.config.beta1 == b.config.beta1 && a.config.beta2 == b.config.beta2 &&
               a.config.eps == b.config.eps;
    }
};

namespace detail {

template <class T>
void adam_update(std::span<T> param, std::span<T> m, std::span<T> v, std::span<const double> grad,
                 const AdamConfig& c, double lr, double bias1, double bias2) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * g;
        const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = lr * (mi / bias1) / (std::sqrt(vi / bias2) + c.eps);
        param[i] = static_cast<T>(static_cast<double>(param[i]) - update);
    }
}

}  // namespace detail

/// One Adam step with bias correction. Mutates params and state in place.
template <class T>
void adam_step(ModelParams<T>& params, OptimizerState<T>& state, const ParamGrads& grads, double lr) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("adam_step: learning rate must be positive");
    if (grads.dim() != params.dim || state.m_embedding.rows() != params.embedding.rows() ||
        state.m_projection.rows() != params.projection.rows()) {
        throw InvalidArgument("adam_step: gradient/state shapes do not match parameters");
    }
    if (state.active_rows.size() != params.embedding.rows()) state.rebuild_active_rows();
    for (std::uint32_t id : grads.touched_rows()) {
        if (id >= params.embedding.rows()) throw InvalidArgument("adam_step: gradient row out of range");
        if (!all_finite(*grads.find_row(id))) {
            throw NumericError("adam_step: non-finite gradient in embedding row " + std::to_string(id));
        }
        state.active_rows[id] = 1;
    }
    if (!all_finite(grads.projection.flat())) throw NumericError("adam_step: non-finite projection gradient");

    state.step += 1;
    const auto& c = state.config;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);

    for (std::size_t r = 0; r < params.embedding.rows(); ++r) {
        if (!state.active_rows[r]) continue;
        const auto g = grads.find_row(static_cast<std::uint32_t>(r));
        detail::adam_update(params.embedding.row(r), state.m_embedding.row(r), state.v_embedding.row(r),
                            g ? *g : std::span<const double>{}, c, lr, bias1, bias2);
    }
    detail::adam_update(params.projection.flat(), state.m_projection.flat(), state.v_projection.flat(),
                        grads.projection.flat(), c, lr, bias1, bias2);
}

}  // namespace mpcl
