#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mpcl/core/errors.hpp"
#include "mpcl/core/random.hpp"
#include "mpcl/data/groups.hpp"
#include "mpcl/tokenizer.hpp"

namespace mpcl {

struct TrainingBatch {
    std::vector<std::size_t> group_indices;  // into the dataset, one per anchor
    std::vector<TokenIds> anchors;
    std::vector<TokenIds> positives;  // group-major, k per anchor
    std::vector<LanguageCode> anchor_langs;
    std::vector<LanguageCode> positive_langs;
    std::optional<std::vector<TokenIds>> hard_negatives;
    std::size_t k = 1;

    std::size_t size() const noexcept { return anchors.size(); }
};

struct BatchOptions {
    std::size_t batch_size = 128;
    std::size_t k_positives = 1;
    bool hard_negatives = false;
};

struct EpochBatches {
    std::vector<TrainingBatch> batches;
    std::size_t dropped_groups = 0;  // final short batch of size < 2
};

inline void validate_for_batching(const std::vector<SentenceGroup>& groups, const BatchOptions& opt) {
    if (opt.batch_size < 2) throw InvalidArgument("batch_size must be >= 2");
    if (opt.k_positives < 1) throw InvalidArgument("k_positives must be >= 1");
    for (const auto& g : groups) {
        if (g.texts.size() < opt.k_positives + 1) {
            throw InvalidArgument("group '" + g.id + "' has " + std::to_string(g.texts.size()) +
                                  " language(s), need k_positives + 1 = " + std::to_string(opt.k_positives + 1));
        }
        if (opt.hard_negatives && g.hard_negatives.empty()) {
            throw InvalidArgument("group '" + g.id + "' has no hard negative");
        }
    }
}

/// Batches for one epoch. The group order is a seeded shuffle; per group the
/// anchor language is uniform over its languages, the K positive languages are
/// drawn without replacement from the rest, and the hard-negative language is
/// uniform over those available. A final batch smaller than 2 is dropped.
inline EpochBatches make_batches(const std::vector<SentenceGroup>& groups, const BatchOptions& opt,
                                 const Tokenizer& tok, std::uint64_t seed, std::uint64_t epoch = 0) {
    validate_for_batching(groups, opt);
    tok.validate();
    Rng rng(derive_seed(seed, epoch));
    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);

    EpochBatches out;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
        const std::size_t end = std::min(order.size(), start + opt.batch_size);
        if (end - start < 2) {
            out.dropped_groups += end - start;
            break;
        }
        TrainingBatch b;
        b.k = opt.k_positives;
        if (opt.hard_negatives) b.hard_negatives.emplace();
        for (std::size_t s = start; s < end; ++s) {
            const auto& g = groups[order[s]];
            auto langs = g.languages();
            std::swap(langs[0], langs[uniform_index(rng, langs.size())]);
            std::vector<LanguageCode> rest(langs.begin() + 1, langs.end());
            const auto chosen = sample_without_replacement(std::move(rest), opt.k_positives, rng);

            b.group_indices.push_back(order[s]);
            b.anchor_langs.push_back(langs[0]);
            b.anchors.push_back(tok(g.texts.at(langs[0])));
            for (const auto& lang : chosen) {
                b.positive_langs.push_back(lang);
                b.positives.push_back(tok(g.texts.at(lang)));
            }
            if (opt.hard_negatives) {
                auto it = g.hard_negatives.begin();
                std::advance(it, static_cast<std::ptrdiff_t>(uniform_index(rng, g.hard_negatives.size())));
                b.hard_negatives->push_back(tok(it->second));
            }
        }
        out.batches.push_back(std::move(b));
    }
    return out;
}

}  // namespace mpcl
