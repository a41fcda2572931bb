#pragma once

// Contrastive objectives over a batch of unit-norm sentence embeddings.
//
// Candidate layout for anchor i (fixed; summation follows this order):
//   [ positives i,0 .. i,K-1 | anchors j != i in index order | hard negative i ]
//
// The losses assume unit rows, so similarity is the plain inner product.
// Gradients are exact for that function of the raw rows; the encoder's
// normalization backward turns them into parameter gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpcl/core/errors.hpp"
#include "mpcl/core/matrix.hpp"

namespace mpcl {

enum class Normalization { min_max, identity };

inline const char* to_string(Normalization n) {
    return n == Normalization::min_max ? "min_max" : "identity";
}

struct LossConfig {
    double tau = 0.05;
    Normalization normalization = Normalization::min_max;
    bool use_hard_negatives = false;
};

/// Embeddings for one loss evaluation. `positives` is group-major:
/// row i * positives_per_anchor + k holds positive k of anchor i.
struct ContrastiveBatch {
    Matrix<double> anchors;
    Matrix<double> positives;
    std::size_t positives_per_anchor = 1;
    std::optional<Matrix<double>> hard_negatives;

    std::size_t size() const noexcept { return anchors.rows(); }
    std::size_t dim() const noexcept { return anchors.cols(); }
};

struct LossOutput {
    double value = 0.0;
    std::vector<double> per_anchor;
    Matrix<double> grad_anchors;
    Matrix<double> grad_positives;
    std::optional<Matrix<double>> grad_hard_negatives;
};

/// Raw similarities of one anchor against its candidate set; the first
/// `positive_count` scores are positives.
struct SimilarityRow {
    std::size_t anchor_index = 0;
    std::vector<double> candidate_scores;
    std::size_t positive_count = 0;
};

inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) {
        throw InvalidArgument("cosine_sim: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    }
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateInput("cosine_sim: zero-norm input vector");
    if (!std::isfinite(na) || !std::isfinite(nb)) throw NumericError("cosine_sim: non-finite input vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

namespace detail {

inline std::size_t first_argmin(std::span<const double> x) {
    return static_cast<std::size_t>(std::min_element(x.begin(), x.end()) - x.begin());
}

inline std::size_t first_argmax(std::span<const double> x) {
    return static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
}

inline void require_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("tau must be a positive finite number");
}

}  // namespace detail

/// Affine map of `scores` onto [-1/tau, 1/tau]: the minimum goes to -1/tau,
/// the maximum to +1/tau. A constant input maps to all zeros.
inline std::vector<double> minmax_normalize(std::span<const double> scores, double tau) {
    if (scores.empty()) throw InvalidArgument("minmax_normalize: empty score list");
    detail::require_tau(tau);
    const double lo = scores[detail::first_argmin(scores)];
    const double hi = scores[detail::first_argmax(scores)];
    std::vector<double> out(scores.size(), 0.0);
    if (!(hi > lo)) return out;
    const double range = hi - lo;
    for (std::size_t c = 0; c < scores.size(); ++c) out[c] = ((scores[c] - lo) / range * 2.0 - 1.0) / tau;
    return out;
}

/// Vector-Jacobian product of minmax_normalize. The min and max are treated
/// as functions of their (first-index) arg-extrema, so those entries also
/// receive the gradient flowing through the range.
inline std::vector<double> minmax_normalize_backward(std::span<const double> scores,
                                                     std::span<const double> grad_out, double tau) {
    if (scores.size() != grad_out.size()) throw InvalidArgument("minmax_normalize_backward: size mismatch");
    if (scores.empty()) throw InvalidArgument("minmax_normalize_backward: empty score list");
    detail::require_tau(tau);
    const std::size_t imin = detail::first_argmin(scores);
    const std::size_t imax = detail::first_argmax(scores);
    const double lo = scores[imin];
    const double hi = scores[imax];
    std::vector<double> grad_in(scores.size(), 0.0);
    if (!(hi > lo)) return grad_in;

    const double range = hi - lo;
    const double scale = 2.0 / (tau * range);
    double d_hi = 0.0;
    double d_lo = 0.0;
    for (std::size_t c = 0; c < scores.size(); ++c) {
        grad_in[c] = grad_out[c] * scale;
        d_hi -= grad_out[c] * scale * (scores[c] - lo) / range;
        d_lo += grad_out[c] * scale * (scores[c] - hi) / range;
    }
    grad_in[imax] += d_hi;
    grad_in[imin] += d_lo;
    return grad_in;
}

/// Max-shifted log(sum(exp(x))).
inline double log_sum_exp(std::span<const double> x) {
    const double m = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

/// log(1 + exp(x)) without overflow or cancellation.
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

namespace detail {

inline void check_rows(const Matrix<double>& m, const char* what) {
    if (!all_finite(m.flat())) throw NumericError(std::string(what) + ": non-finite entry");
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = l2_norm(m.row(r));
        if (std::abs(n - 1.0) > 1e-6) {
            throw InvalidArgument(std::string(what) + ": row " + std::to_string(r) + " is not unit norm (" +
                                  std::to_string(n) + ")");
        }
    }
}

inline void validate(const ContrastiveBatch& b, const LossConfig& cfg, bool check_unit) {
    require_tau(cfg.tau);
    const std::size_t n = b.size();
    const std::size_t k = b.positives_per_anchor;
    if (n < 2) throw DegenerateInput("contrastive loss needs at least 2 anchors (no in-batch negatives)");
    if (k == 0) throw InvalidArgument("contrastive loss needs at least one positive per anchor");
    if (b.dim() == 0) throw InvalidArgument("contrastive loss: zero embedding dimension");
    if (b.positives.rows() != n * k || b.positives.cols() != b.dim()) {
        throw InvalidArgument("positives must be " + shape_string(n * k, b.dim()) + ", got " +
                              shape_string(b.positives.rows(), b.positives.cols()));
    }
    if (cfg.use_hard_negatives && !b.hard_negatives) {
        throw InvalidArgument("use_hard_negatives is set but the batch carries no hard negatives");
    }
    if (!cfg.use_hard_negatives && b.hard_negatives) {
        throw InvalidArgument("batch carries hard negatives but use_hard_negatives is off");
    }
    if (b.hard_negatives && (b.hard_negatives->rows() != n || b.hard_negatives->cols() != b.dim())) {
        throw InvalidArgument("hard negatives must be " + shape_string(n, b.dim()));
    }
    if (!check_unit) {
        const bool finite = all_finite(b.anchors.flat()) && all_finite(b.positives.flat()) &&
                            (!b.hard_negatives || all_finite(b.hard_negatives->flat()));
        if (!finite) throw NumericError("contrastive loss: non-finite input");
        return;
    }
    check_rows(b.anchors, "anchors");
    check_rows(b.positives, "positives");
    if (b.hard_negatives) check_rows(*b.hard_negatives, "hard negatives");
}

// Row of candidate c for anchor i in the layout described at the top.
struct CandidateRef {
    enum class Source { positive, anchor, hard_negative } source;
    std::size_t row;
};

inline std::vector<CandidateRef> candidates_for(const ContrastiveBatch& b, std::size_t i) {
    const std::size_t n = b.size();
    const std::size_t k = b.positives_per_anchor;
    std::vector<CandidateRef> refs;
    refs.reserve(k + n - 1 + (b.hard_negatives ? 1 : 0));
    for (std::size_t p = 0; p < k; ++p) refs.push_back({CandidateRef::Source::positive, i * k + p});
    for (std::size_t j = 0; j < n; ++j) {
        if (j != i) refs.push_back({CandidateRef::Source::anchor, j});
    }
    if (b.hard_negatives) refs.push_back({CandidateRef::Source::hard_negative, i});
    return refs;
}

inline std::span<const double> candidate_row(const ContrastiveBatch& b, const CandidateRef& ref) {
    switch (ref.source) {
        case CandidateRef::Source::positive: return b.positives.row(ref.row);
        case CandidateRef::Source::anchor: return b.anchors.row(ref.row);
        case CandidateRef::Source::hard_negative: break;
    }
    return b.hard_negatives->row(ref.row);
}

// check_unit=false skips the unit-norm precondition; finite-difference probes
// step off the sphere and need the same function evaluated there.
inline LossOutput contrastive_loss(const ContrastiveBatch& b, const LossConfig& cfg, Normalization norm,
                                   bool check_unit = true) {
    validate(b, cfg, check_unit);
    const std::size_t n = b.size();
    const std::size_t k = b.positives_per_anchor;
    const std::size_t d = b.dim();
    const double tau = cfg.tau;

    LossOutput out;
    out.per_anchor.resize(n);
    out.grad_anchors = Matrix<double>(n, d);
    out.grad_positives = Matrix<double>(n * k, d);
    if (b.hard_negatives) out.grad_hard_negatives = Matrix<double>(n, d);

    auto grad_row = [&](const CandidateRef& ref) -> std::span<double> {
        switch (ref.source) {
            case CandidateRef::Source::positive: return out.grad_positives.row(ref.row);
            case CandidateRef::Source::anchor: return out.grad_anchors.row(ref.row);
            case CandidateRef::Source::hard_negative: break;
        }
        return out.grad_hard_negatives->row(ref.row);
    };

    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto refs = candidates_for(b, i);
        const auto anchor = b.anchors.row(i);
        std::vector<double> scores(refs.size());
        for (std::size_t c = 0; c < refs.size(); ++c) scores[c] = dot(anchor, candidate_row(b, refs[c]));

        // Logits: S / tau, with S the normalized (or raw) scores.
        std::vector<double> logits =
            norm == Normalization::min_max ? minmax_normalize(scores, tau) : scores;
        for (double& z : logits) z /= tau;

        const std::span<const double> all(logits);
        const double lse_pos = log_sum_exp(all.first(k));
        const double lse_neg = log_sum_exp(all.subspan(k));
        const double loss = softplus(lse_neg - lse_pos);
        if (!std::isfinite(loss)) throw NumericError("non-finite loss for anchor " + std::to_string(i));
        out.per_anchor[i] = loss;
        total += loss;

        // dloss/dlogit: softmax over all candidates minus softmax over positives.
        const double lse_all = lse_pos + loss;
        const double pos_scale = std::expm1(-loss);
        std::vector<double> g(refs.size());
        for (std::size_t c = 0; c < refs.size(); ++c) {
            g[c] = c < k ? std::exp(logits[c] - lse_pos) * pos_scale : std::exp(logits[c] - lse_all);
            g[c] /= tau;
        }
        if (norm == Normalization::min_max) g = minmax_normalize_backward(scores, g, tau);

        const double inv_n = 1.0 / static_cast<double>(n);
        auto ga = out.grad_anchors.row(i);
        for (std::size_t c = 0; c < refs.size(); ++c) {
            const double w = g[c] * inv_n;
            if (w == 0.0) continue;
            const auto cand = candidate_row(b, refs[c]);
            auto gc = grad_row(refs[c]);
            for (std::size_t t = 0; t < d; ++t) {
                ga[t] += w * cand[t];
                gc[t] += w * anchor[t];
            }
        }
    }
    out.value = total / static_cast<double>(n);
    return out;
}

}  // namespace detail

/// Raw candidate similarities for every anchor, in the kernel's order.
inline std::vector<SimilarityRow> similarity_rows(const ContrastiveBatch& b) {
    std::vector<SimilarityRow> rows;
    rows.reserve(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
        SimilarityRow row{i, {}, b.positives_per_anchor};
        for (const auto& ref : detail::candidates_for(b, i)) {
            row.candidate_scores.push_back(dot(b.anchors.row(i), detail::candidate_row(b, ref)));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// InfoNCE with one positive per anchor and the other anchors as negatives.
/// Raw similarities are used regardless of cfg.normalization.
inline LossOutput single_positive_loss(const ContrastiveBatch& batch, const LossConfig& cfg) {
    if (batch.positives_per_anchor != 1) {
        throw InvalidArgument("single_positive_loss expects exactly one positive per anchor");
    }
    return detail::contrastive_loss(batch, cfg, Normalization::identity);
}

inline LossOutput single_positive_loss(const Matrix<double>& anchors, const Matrix<double>& positives,
                                       const LossConfig& cfg) {
    return single_positive_loss(ContrastiveBatch{anchors, positives, 1, std::nullopt}, cfg);
}

/// Multi-positive loss: -log(sum over positives / sum over all candidates)
/// of exp(S / tau), where S is the group-wise normalized similarity row.
inline LossOutput multi_positive_loss(const ContrastiveBatch& batch, const LossConfig& cfg) {
    return detail::contrastive_loss(batch, cfg, cfg.normalization);
}

}  // namespace mpcl
