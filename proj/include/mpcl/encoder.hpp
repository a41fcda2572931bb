#pragma once

// Hashing bag-of-tokens encoder:
//   pooled = mean of embedding rows of the sentence's token ids
//   y      = pooled * projection
//   h      = y / (||y|| + 1e-12)
// The backward pass differentiates exactly this smoothed normalization.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpcl/core/errors.hpp"
#include "mpcl/core/matrix.hpp"
#include "mpcl/tokenizer.hpp"

namespace mpcl {

inline constexpr double kNormEpsilon = 1e-12;

template <class T>
struct ModelParams {
    unsigned hash_bits = 16;
    std::size_t dim = 64;
    Matrix<T> embedding;   // (2^hash_bits) x dim
    Matrix<T> projection;  // dim x dim

    std::size_t vocab_size() const noexcept { return std::size_t{1} << hash_bits; }

    void validate() const {
        if (embedding.rows() != vocab_size() || embedding.cols() != dim) {
            throw InvalidArgument("embedding table must be " + shape_string(vocab_size(), dim));
        }
        if (projection.rows() != dim || projection.cols() != dim) {
            throw InvalidArgument("projection must be " + shape_string(dim, dim));
        }
        if (!all_finite(embedding.flat()) || !all_finite(projection.flat())) {
            throw NumericError("model parameters contain NaN or Inf");
        }
    }

    template <class U>
    ModelParams<U> cast() const {
        return {hash_bits, dim, embedding.template cast<U>(), projection.template cast<U>()};
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct EncodeCache {
    std::vector<TokenIds> tokens;
    Matrix<double> pooled;     // B x d, before projection
    Matrix<double> projected;  // B x d, before normalization
    std::vector<double> norms; // ||projected row||
};

struct Encoded {
    Matrix<double> embeddings;  // B x d, unit rows
    EncodeCache cache;
};

/// Gradients of the encoder parameters. Embedding-table gradients are kept
/// per touched row; untouched rows are implicitly zero.
class ParamGrads {
public:
    explicit ParamGrads(std::size_t dim = 0) : projection(dim, dim), dim_(dim) {}

    Matrix<double> projection;

    std::size_t dim() const noexcept { return dim_; }

    std::span<double> row(std::uint32_t id) {
        auto [it, inserted] = slot_.try_emplace(id, ids_.size());
        if (inserted) {
            ids_.push_back(id);
            values_.resize(values_.size() + dim_, 0.0);
        }
        return {values_.data() + it->second * dim_, dim_};
    }

    std::optional<std::span<const double>> find_row(std::uint32_t id) const {
        const auto it = slot_.find(id);
        if (it == slot_.end()) return std::nullopt;
        return std::span<const double>(values_.data() + it->second * dim_, dim_);
    }

    /// Touched rows in first-touch order.
    const std::vector<std::uint32_t>& touched_rows() const noexcept { return ids_; }

    void add(const ParamGrads& other) {
        if (other.dim_ != dim_) throw InvalidArgument("ParamGrads::add: dimension mismatch");
        for (std::size_t r = 0; r < other.ids_.size(); ++r) {
            auto dst = row(other.ids_[r]);
            const double* src = other.values_.data() + r * dim_;
            for (std::size_t t = 0; t < dim_; ++t) dst[t] += src[t];
        }
        for (std::size_t i = 0; i < projection.size(); ++i) projection.storage()[i] += other.projection.storage()[i];
    }

    void scale(double s) {
        for (double& v : values_) v *= s;
        for (double& v : projection.storage()) v *= s;
    }

    double squared_norm() const {
        double s = 0.0;
        for (double v : values_) s += v * v;
        for (double v : projection.storage()) s += v * v;
        return s;
    }

    bool finite() const { return all_finite(std::span<const double>(values_)) && all_finite(projection.flat()); }

private:
    std::size_t dim_ = 0;
    std::unordered_map<std::uint32_t, std::size_t> slot_;
    std::vector<std::uint32_t> ids_;
    std::vector<double> values_;
};

template <class T>
Encoded encode(const ModelParams<T>& params, std::span<const TokenIds> batch) {
    if (batch.empty()) throw InvalidArgument("encode: empty batch");
    const std::size_t d = params.dim;
    if (params.embedding.rows() != params.vocab_size() || params.projection.rows() != d) {
        throw InvalidArgument("encode: parameter shapes inconsistent with hash_bits/dim");
    }
    Encoded out;
    out.embeddings = Matrix<double>(batch.size(), d);
    out.cache.tokens.assign(batch.begin(), batch.end());
    out.cache.pooled = Matrix<double>(batch.size(), d);
    out.cache.projected = Matrix<double>(batch.size(), d);
    out.cache.norms.resize(batch.size());

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const TokenIds& ids = batch[b];
        if (ids.empty()) throw InvalidArgument("encode: sentence " + std::to_string(b) + " has no tokens");
        auto pooled = out.cache.pooled.row(b);
        for (std::uint32_t id : ids) {
            if (id >= params.vocab_size()) throw InvalidArgument("encode: token id out of range");
            const auto e = params.embedding.row(id);
            for (std::size_t t = 0; t < d; ++t) pooled[t] += static_cast<double>(e[t]);
        }
        const double inv_len = 1.0 / static_cast<double>(ids.size());
        for (double& v : pooled) v *= inv_len;

        auto y = out.cache.projected.row(b);
        for (std::size_t r = 0; r < d; ++r) {
            const double p = pooled[r];
            if (p == 0.0) continue;
            const auto prow = params.projection.row(r);
            for (std::size_t c = 0; c < d; ++c) y[c] += p * static_cast<double>(prow[c]);
        }
        const double norm = l2_norm(std::span<const double>(y));
        out.cache.norms[b] = norm;
        auto h = out.embeddings.row(b);
        for (std::size_t c = 0; c < d; ++c) h[c] = y[c] / (norm + kNormEpsilon);
    }
    return out;
}

template <class T>
ParamGrads encode_backward(const ModelParams<T>& params, const EncodeCache& cache, const Matrix<double>& grad_output) {
    const std::size_t d = params.dim;
    const std::size_t rows = cache.tokens.size();
    if (grad_output.rows() != rows || grad_output.cols() != d) {
        throw InvalidArgument("encode_backward: upstream gradient must be " + shape_string(rows, d) + ", got " +
                              shape_string(grad_output.rows(), grad_output.cols()));
    }
    if (cache.pooled.rows() != rows || cache.pooled.cols() != d) {
        throw InvalidArgument("encode_backward: cache does not match parameters");
    }

    ParamGrads grads(d);
    std::vector<double> gy(d), gpooled(d);
    for (std::size_t b = 0; b < rows; ++b) {
        const auto g = grad_output.row(b);
        const auto y = cache.projected.row(b);
        const double norm = cache.norms[b];
        const double n = norm + kNormEpsilon;

        // d(y / (||y|| + eps)) = g / n - y_hat * (g . y) / n^2
        const double gdoty = dot(g, y);
        for (std::size_t c = 0; c < d; ++c) {
            gy[c] = g[c] / n;
            if (norm > 0.0) gy[c] -= (y[c] / norm) * gdoty / (n * n);
        }

        const auto pooled = cache.pooled.row(b);
        for (std::size_t r = 0; r < d; ++r) {
            auto gp = grads.projection.row(r);
            const auto prow = params.projection.row(r);
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                gp[c] += pooled[r] * gy[c];
                acc += static_cast<double>(prow[c]) * gy[c];
            }
            gpooled[r] = acc;
        }

        const auto& ids = cache.tokens[b];
        const double inv_len = 1.0 / static_cast<double>(ids.size());
        for (std::uint32_t id : ids) {
            auto ge = grads.row(id);
            for (std::size_t t = 0; t < d; ++t) ge[t] += gpooled[t] * inv_len;
        }
    }
    return grads;
}

/// Tokenizes and encodes raw text.
template <class T>
Matrix<double> embed_texts(const ModelParams<T>& params, const Tokenizer& tokenizer,
                           std::span<const std::string> texts) {
    std::vector<TokenIds> ids;
    ids.reserve(texts.size());
    for (const auto& t : texts) ids.push_back(tokenizer(t));
    return encode(params, std::span<const TokenIds>(ids)).embeddings;
}

}  // namespace mpcl
