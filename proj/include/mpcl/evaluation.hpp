#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpcl/core/errors.hpp"
#include "mpcl/core/matrix.hpp"
#include "mpcl/core/random.hpp"
#include "mpcl/data/io.hpp"
#include "mpcl/encoder.hpp"
#include "mpcl/tokenizer.hpp"

namespace mpcl {

struct EvalReport {
    std::string task;
    double overall = 0.0;
    std::map<std::string, double> per_key;  // per language or language pair
    std::map<std::string, std::string> metadata;
};

inline nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["task"] = r.task;
    j["overall"] = r.overall;
    j["per_key"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.per_key) j["per_key"][k] = v;
    j["metadata"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.metadata) j["metadata"][k] = v;
    return j;
}

namespace detail {

inline void require_unit_rows(const Matrix<double>& m, const char* what) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = l2_norm(m.row(r));
        if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6) {
            throw InvalidArgument(std::string(what) + ": row " + std::to_string(r) + " is not unit-norm");
        }
    }
}

/// Index of the best-scoring target and its score; lowest index wins ties.
inline std::pair<std::size_t, double> best_target(const Matrix<double>& src, std::size_t i, const Matrix<double>& tgt) {
    std::size_t best = 0;
    double best_score = dot(src.row(i), tgt.row(0));
    for (std::size_t j = 1; j < tgt.rows(); ++j) {
        const double s = dot(src.row(i), tgt.row(j));
        if (s > best_score) {
            best_score = s;
            best = j;
        }
    }
    return {best, best_score};
}

}  // namespace detail

/// Fraction of sources whose nearest target (cosine, unit rows) is the aligned one.
inline double retrieval_accuracy(const Matrix<double>& src, const Matrix<double>& tgt) {
    if (src.rows() == 0 || tgt.rows() == 0) throw InvalidArgument("retrieval_accuracy: empty input");
    if (src.rows() != tgt.rows() || src.cols() != tgt.cols()) {
        throw InvalidArgument("retrieval_accuracy: shape mismatch " + shape_string(src.rows(), src.cols()) + " vs " + shape_string(tgt.rows(), tgt.cols()));
    }
    detail::require_unit_rows(src, "retrieval_accuracy");
    detail::require_unit_rows(tgt, "retrieval_accuracy");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < src.rows(); ++i) hits += detail::best_target(src, i, tgt).first == i;
    return static_cast<double>(hits) / static_cast<double>(src.rows());
}

struct MiningResult {
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double threshold = 0.0;
};

using IndexPairs = std::set<std::pair<std::size_t, std::size_t>>;

inline double f1_score(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// Each source proposes its nearest target; proposals scoring >= threshold are
/// predicted. Without a threshold, every distinct proposal score is tried and
/// the F1-maximizing one returned (the highest such threshold on ties).
inline MiningResult mine_pairs_f1(const Matrix<double>& src, const Matrix<double>& tgt, const IndexPairs& gold,
                                  std::optional<double> threshold = std::nullopt) {
    if (src.rows() == 0 || tgt.rows() == 0 || gold.empty()) throw InvalidArgument("mine_pairs_f1: empty input");
    if (src.cols() != tgt.cols()) throw InvalidArgument("mine_pairs_f1: dimension mismatch");
    for (const auto& [i, j] : gold) {
        if (i >= src.rows() || j >= tgt.rows()) throw InvalidArgument("mine_pairs_f1: gold pair out of range");
    }
    detail::require_unit_rows(src, "mine_pairs_f1");
    detail::require_unit_rows(tgt, "mine_pairs_f1");

    struct Candidate {
        double score;
        bool correct;
    };
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < src.rows(); ++i) {
        const auto [j, s] = detail::best_target(src, i, tgt);
        cands.push_back({s, gold.contains({i, j})});
    }
    const double n_gold = static_cast<double>(gold.size());
    auto at = [&](double t) {
        std::size_t predicted = 0, correct = 0;
        for (const auto& c : cands) {
            if (c.score >= t) {
                ++predicted;
                correct += c.correct;
            }
        }
        MiningResult r;
        r.threshold = t;
        r.precision = predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0;
        r.recall = static_cast<double>(correct) / n_gold;
        r.f1 = f1_score(r.precision, r.recall);
        return r;
    };
    if (threshold) return at(*threshold);

    // Descending sweep: lowering the threshold past a block of equal scores admits the whole block.
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    MiningResult best;
    bool have = false;
    std::size_t predicted = 0, correct = 0;
    for (std::size_t k = 0; k < cands.size();) {
        const double t = cands[k].score;
        while (k < cands.size() && cands[k].score == t) {
            ++predicted;
            correct += cands[k].correct;
            ++k;
        }
        MiningResult r;
        r.threshold = t;
        r.precision = static_cast<double>(correct) / static_cast<double>(predicted);
        r.recall = static_cast<double>(correct) / n_gold;
        r.f1 = f1_score(r.precision, r.recall);
        if (!have || r.f1 > best.f1) {
            best = r;
            have = true;
        }
    }
    return best;
}

/// Ranks starting at 1; tied values share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t k = 0; k < idx.size();) {
        std::size_t end = k;
        while (end < idx.size() && x[idx[end]] == x[idx[k]]) ++end;
        const double r = 0.5 * static_cast<double>(k + 1 + end);
        for (std::size_t t = k; t < end; ++t) ranks[idx[t]] = r;
        k = end;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw DegenerateInput("pearson: constant input");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double spearman(const std::vector<double>& pred, const std::vector<double>& gold) {
    if (pred.size() != gold.size()) throw InvalidArgument("spearman: length mismatch");
    if (pred.size() < 2) throw DegenerateInput("spearman: need at least 2 values");
    for (double v : pred) {
        if (!std::isfinite(v)) throw NumericError("spearman: non-finite prediction");
    }
    for (double v : gold) {
        if (!std::isfinite(v)) throw NumericError("spearman: non-finite gold score");
    }
    auto constant = [](const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    };
    if (constant(pred) || constant(gold)) throw DegenerateInput("spearman: constant input, correlation undefined");
    return pearson(average_ranks(pred), average_ranks(gold));
}

/// Per-pair cosine under the encoder against gold scores, as Spearman rho.
template <class T>
EvalReport sts_eval(const ModelParams<T>& params, const Tokenizer& tok, const std::vector<StsPair>& pairs) {
    if (pairs.empty()) throw InvalidArgument("sts_eval: no pairs");
    std::vector<std::string> a, b;
    std::vector<double> gold;
    for (const auto& p : pairs) {
        a.push_back(p.a);
        b.push_back(p.b);
        gold.push_back(p.gold);
    }
    const auto ea = embed_texts(params, tok, std::span<const std::string>(a));
    const auto eb = embed_texts(params, tok, std::span<const std::string>(b));
    std::vector<double> pred;
    for (std::size_t i = 0; i < pairs.size(); ++i) pred.push_back(dot(ea.row(i), eb.row(i)));
    EvalReport r;
    r.task = "sts";
    r.overall = spearman(pred, gold);
    return r;
}

struct ProbeConfig {
    std::size_t iterations = 500;
    double lr = 0.1;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
};

/// Multinomial logistic regression on frozen features, full-batch gradient
/// descent from a seeded small random init. Returns test accuracy.
inline double linear_probe(const Matrix<double>& train_x, const std::vector<std::string>& train_y,
                           const Matrix<double>& test_x, const std::vector<std::string>& test_y,
                           const ProbeConfig& cfg = {}) {
    if (train_x.rows() != train_y.size() || test_x.rows() != test_y.size()) {
        throw InvalidArgument("linear_probe: feature/label count mismatch");
    }
    if (train_x.rows() == 0 || test_x.rows() == 0) throw InvalidArgument("linear_probe: empty split");
    if (train_x.cols() != test_x.cols()) throw InvalidArgument("linear_probe: dimension mismatch");
    std::map<std::string, std::size_t> classes;
    for (const auto& y : train_y) classes.emplace(y, 0);
    if (classes.size() < 2) throw DegenerateInput("linear_probe: training set has a single class");
    std::size_t next = 0;
    for (auto& [_, id] : classes) id = next++;
    for (const auto& y : test_y) {
        if (!classes.contains(y)) throw InvalidArgument("linear_probe: test label '" + y + "' not seen in training");
    }

    const std::size_t n = train_x.rows(), d = train_x.cols(), c = classes.size();
    std::vector<std::size_t> label(n);
    for (std::size_t i = 0; i < n; ++i) label[i] = classes.at(train_y[i]);

    Rng rng(derive_seed(cfg.seed, 0x70726f6265ULL));
    Matrix<double> w(d, c);
    for (double& v : w.storage()) v = uniform_real(rng, -0.01, 0.01);
    std::vector<double> bias(c, 0.0);

    auto logits = [&](const Matrix<double>& x, std::size_t i, std::vector<double>& z) {
        for (std::size_t k = 0; k < c; ++k) {
            double s = bias[k];
            for (std::size_t t = 0; t < d; ++t) s += x(i, t) * w(t, k);
            z[k] = s;
        }
    };

    std::vector<double> z(c);
    Matrix<double> gw(d, c);
    std::vector<double> gb(c);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        std::fill(gw.storage().begin(), gw.storage().end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            logits(train_x, i, z);
            const double mx = *std::max_element(z.begin(), z.end());
            double sum = 0.0;
            for (double& v : z) sum += (v = std::exp(v - mx));
            for (std::size_t k = 0; k < c; ++k) {
                const double g = z[k] / sum - (k == label[i] ? 1.0 : 0.0);
                gb[k] += g;
                for (std::size_t t = 0; t < d; ++t) gw(t, k) += g * train_x(i, t);
            }
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t q = 0; q < w.size(); ++q) {
            w.storage()[q] -= cfg.lr * (gw.storage()[q] * inv_n + cfg.l2 * w.storage()[q]);
        }
        for (std::size_t k = 0; k < c; ++k) bias[k] -= cfg.lr * gb[k] * inv_n;
    }

    std::size_t hits = 0;
    for (std::size_t i = 0; i < test_x.rows(); ++i) {
        logits(test_x, i, z);
        const auto pred = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
        hits += pred == classes.at(test_y[i]);
    }
    return static_cast<double>(hits) / static_cast<double>(test_x.rows());
}

}  // namespace mpcl
