#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpcl/core/errors.hpp"
#include "mpcl/core/random.hpp"

namespace mpcl {

using LanguageCode = std::string;

/// One sentence in several languages, plus optional contradiction-labelled
/// sentences used as hard negatives.
struct SentenceGroup {
    std::string id;
    std::map<LanguageCode, std::string> texts;
    std::map<LanguageCode, std::string> hard_negatives;

    std::vector<LanguageCode> languages() const {
        std::vector<LanguageCode> out;
        for (const auto& [lang, _] : texts) out.push_back(lang);
        return out;
    }

    bool operator==(const SentenceGroup&) const = default;
};

struct PairRecord {
    LanguageCode src_lang, tgt_lang;
    std::string src_text, tgt_text;

    bool operator==(const PairRecord&) const = default;
};

enum class SentenceRole { premise, hypothesis };

/// A sentence from a parallel source. Records sharing `key` are translations.
struct ParallelRecord {
    LanguageCode lang;
    std::string key;
    std::string text;
    SentenceRole role = SentenceRole::premise;
};

struct AssembleResult {
    std::vector<SentenceGroup> groups;
    std::vector<std::string> dropped_keys;  // missing at least one requested language
};

/// Groups translation-equivalent records by key, keeping the requested
/// languages and premise-role sentences only. Output follows first appearance
/// of each key.
inline AssembleResult assemble_groups(const std::vector<ParallelRecord>& records, const std::set<LanguageCode>& languages) {
    if (languages.empty()) throw InvalidArgument("assemble_groups: no languages requested");
    std::vector<std::string> order;
    std::unordered_map<std::string, std::map<LanguageCode, std::string>> by_key;
    for (const auto& r : records) {
        auto [it, inserted] = by_key.try_emplace(r.key);
        if (inserted) order.push_back(r.key);
        if (r.role != SentenceRole::premise || !languages.contains(r.lang)) continue;
        auto [slot, fresh] = it->second.try_emplace(r.lang, r.text);
        if (!fresh && slot->second != r.text) {
            throw DataError("conflicting duplicate sentence for key '" + r.key + "' language '" + r.lang + "'");
        }
    }
    AssembleResult out;
    for (const auto& key : order) {
        auto& texts = by_key[key];
        if (texts.size() != languages.size()) {
            out.dropped_keys.push_back(key);
            continue;
        }
        out.groups.push_back({key, std::move(texts), {}});
    }
    return out;
}

inline void validate_group(const SentenceGroup& g) {
    if (g.texts.size() < 2) {
        throw InvalidArgument("group '" + g.id + "' has " + std::to_string(g.texts.size()) + " language(s), need at least 2");
    }
}

struct PairResult {
    std::vector<PairRecord> pairs;
    std::size_t dropped_sentences = 0;  // leftovers of odd-sized groups
};

/// Converts each group into a uniformly random perfect matching of its
/// languages. A group with an odd language count loses one uniformly chosen
/// sentence. Each group draws from its own stream, so the result for a group
/// does not depend on its position.
inline PairResult groups_to_pairs(const std::vector<SentenceGroup>& groups, std::uint64_t seed) {
    PairResult out;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        validate_group(g);
        Rng rng(derive_seed(seed, gi));
        auto langs = g.languages();
        // Pairing consecutive entries of a uniform permutation gives a uniform matching.
        shuffle(langs, rng);
        for (std::size_t p = 0; p + 1 < langs.size(); p += 2) {
            out.pairs.push_back({langs[p], langs[p + 1], g.texts.at(langs[p]), g.texts.at(langs[p + 1])});
        }
        out.dropped_sentences += langs.size() % 2;
    }
    return out;
}

/// Two-language groups for training on pairs with the group machinery.
inline std::vector<SentenceGroup> pairs_to_groups(const std::vector<PairRecord>& pairs) {
    std::vector<SentenceGroup> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        if (p.src_lang == p.tgt_lang) throw DataError("pair " + std::to_string(i) + " has src_lang == tgt_lang");
        out.push_back({"p" + std::to_string(i), {{p.src_lang, p.src_text}, {p.tgt_lang, p.tgt_text}}, {}});
    }
    return out;
}

/// Multiset of (language, sentence) over all groups, as sorted entries.
inline std::vector<std::pair<LanguageCode, std::string>> sentence_multiset(const std::vector<SentenceGroup>& groups) {
    std::vector<std::pair<LanguageCode, std::string>> out;
    for (const auto& g : groups) {
        for (const auto& [lang, text] : g.texts) out.emplace_back(lang, text);
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<std::pair<LanguageCode, std::string>> sentence_multiset(const std::vector<PairRecord>& pairs) {
    std::vector<std::pair<LanguageCode, std::string>> out;
    for (const auto& p : pairs) {
        out.emplace_back(p.src_lang, p.src_text);
        out.emplace_back(p.tgt_lang, p.tgt_text);
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Throws unless converting `groups` to `pairs` kept every sentence exactly once.
inline void check_conservation(const std::vector<SentenceGroup>& groups, const PairResult& converted) {
    if (converted.dropped_sentences != 0) {
        throw InvalidArgument("pair conversion dropped " + std::to_string(converted.dropped_sentences) +
                              " sentence(s) from odd-sized groups");
    }
    if (sentence_multiset(groups) != sentence_multiset(converted.pairs)) {
        throw InvalidArgument("pair conversion does not preserve the sentence multiset");
    }
}

}  // namespace mpcl
