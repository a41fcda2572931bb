#pragma once

// Synthetic "cipher" languages. A sentence is a sequence of concept symbols
// drawn from a shared alphabet; language l writes symbol c as the surface
// token surface[l][c]. Every language owns a disjoint surface vocabulary
// (tokens are prefixed with the language code), so two languages only share
// meaning through the training signal.
//
// A held-out language may borrow: with probability `borrow_fraction` a symbol
// is written with the surface token of a randomly chosen training language
// instead of its own. With the default of 0 its vocabulary is fully disjoint
// and never seen in training.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mpcl/core/errors.hpp"
#include "mpcl/core/random.hpp"
#include "mpcl/data/groups.hpp"
#include "mpcl/data/io.hpp"

namespace mpcl {

struct CipherConfig {
    std::size_t n_concepts = 500;     // training groups
    std::size_t sentence_len = 8;
    std::size_t n_langs = 6;          // training languages
    std::size_t n_heldout = 1;
    std::size_t alphabet_size = 200;  // concept symbols
    std::size_t vocab_size = 256;     // surface tokens available per language
    std::size_t n_eval = 200;         // fresh sequences for evaluation
    double borrow_fraction = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_concepts < 1 || sentence_len < 1 || n_langs < 1 || alphabet_size < 1) {
            throw InvalidArgument("cipher: concepts, sentence_len, langs and alphabet must be >= 1");
        }
        if (vocab_size < alphabet_size) {
            throw InvalidArgument("cipher: vocab_size " + std::to_string(vocab_size) +
                                  " cannot hold an injective renaming of " + std::to_string(alphabet_size) + " symbols");
        }
        if (!(borrow_fraction >= 0.0 && borrow_fraction <= 1.0)) throw InvalidArgument("cipher: borrow_fraction must be in [0, 1]");
        if (n_langs > 100 || n_heldout > 100) throw InvalidArgument("cipher: at most 100 training and 100 held-out languages");
    }
};

using ConceptSeq = std::vector<std::uint32_t>;

struct CipherCorpus {
    CipherConfig config;
    std::vector<LanguageCode> train_langs;
    std::vector<LanguageCode> heldout_langs;
    std::map<LanguageCode, std::vector<std::string>> surface;  // symbol -> token
    std::vector<ConceptSeq> train_concepts;
    std::vector<ConceptSeq> eval_concepts;

    const LanguageCode& pivot() const { return train_langs.front(); }

    std::vector<LanguageCode> all_langs() const {
        auto out = train_langs;
        out.insert(out.end(), heldout_langs.begin(), heldout_langs.end());
        return out;
    }

    std::string render(const ConceptSeq& seq, const LanguageCode& lang) const {
        const auto& table = surface.at(lang);
        std::string out;
        for (std::size_t t = 0; t < seq.size(); ++t) {
            if (t) out.push_back(' ');
            out += table.at(seq[t]);
        }
        return out;
    }

    std::vector<SentenceGroup> groups(const std::vector<ConceptSeq>& seqs, const std::vector<LanguageCode>& langs,
                                      const std::string& prefix) const {
        std::vector<SentenceGroup> out;
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            SentenceGroup g{prefix + std::to_string(i), {}, {}};
            for (const auto& lang : langs) g.texts.emplace(lang, render(seqs[i], lang));
            out.push_back(std::move(g));
        }
        return out;
    }

    /// Training groups: training languages only.
    std::vector<SentenceGroup> train_groups() const { return groups(train_concepts, train_langs, "c"); }

    /// Evaluation groups: fresh sequences in every language, held-out ones included.
    std::vector<SentenceGroup> eval_groups() const { return groups(eval_concepts, all_langs(), "e"); }
};

namespace detail {

inline std::string two_digit(std::size_t i) {
    return std::string(1, static_cast<char>('0' + i / 10)) + static_cast<char>('0' + i % 10);
}

inline ConceptSeq random_sequence(const CipherConfig& cfg, Rng& rng) {
    ConceptSeq s(cfg.sentence_len);
    for (auto& c : s) c = static_cast<std::uint32_t>(uniform_index(rng, cfg.alphabet_size));
    return s;
}

}  // namespace detail

inline CipherCorpus gen_cipher_corpus(const CipherConfig& cfg) {
    cfg.validate();
    CipherCorpus corpus;
    corpus.config = cfg;
    for (std::size_t l = 0; l < cfg.n_langs; ++l) corpus.train_langs.push_back("l" + detail::two_digit(l));
    for (std::size_t l = 0; l < cfg.n_heldout; ++l) corpus.heldout_langs.push_back("h" + detail::two_digit(l));

    std::vector<std::uint32_t> slots(cfg.vocab_size);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = static_cast<std::uint32_t>(i);

    std::uint64_t stream = 0;
    for (const auto& lang : corpus.all_langs()) {
        Rng rng(derive_seed(cfg.seed, stream++));
        const auto chosen = sample_without_replacement(slots, cfg.alphabet_size, rng);
        auto& table = corpus.surface[lang];
        for (std::size_t c = 0; c < cfg.alphabet_size; ++c) table.push_back(lang + "w" + std::to_string(chosen[c]));
    }
    for (const auto& lang : corpus.heldout_langs) {
        Rng rng(derive_seed(cfg.seed, stream++));
        auto& table = corpus.surface[lang];
        for (std::size_t c = 0; c < cfg.alphabet_size; ++c) {
            if (uniform01(rng) < cfg.borrow_fraction) {
                const auto& donor = corpus.train_langs[uniform_index(rng, corpus.train_langs.size())];
                table[c] = corpus.surface.at(donor)[c];
            }
        }
    }

    // Distinct sequences across training and evaluation, so retrieval has one right answer.
    Rng rng(derive_seed(cfg.seed, stream++));
    std::set<ConceptSeq> seen;
    auto draw = [&](std::size_t n, std::vector<ConceptSeq>& into) {
        std::size_t attempts = 0;
        while (into.size() < n) {
            if (++attempts > 100 * n + 1000) throw InvalidArgument("cipher: cannot draw enough distinct sequences");
            auto s = detail::random_sequence(cfg, rng);
            if (seen.insert(s).second) into.push_back(std::move(s));
        }
    };
    draw(cfg.n_concepts, corpus.train_concepts);
    draw(cfg.n_eval, corpus.eval_concepts);
    return corpus;
}

/// Graded similarity pairs: b is a copy of a with a uniform number of positions
/// resampled. Gold is the multiset overlap of concept symbols divided by length.
/// Side a is written in `lang_a`, side b in `lang_b`.
inline std::vector<StsPair> cipher_sts_pairs(const CipherCorpus& corpus, std::size_t n_pairs, const LanguageCode& lang_a,
                                             const LanguageCode& lang_b, std::uint64_t seed) {
    Rng rng(seed);
    const auto& cfg = corpus.config;
    std::vector<StsPair> out;
    for (std::size_t p = 0; p < n_pairs; ++p) {
        const ConceptSeq a = detail::random_sequence(cfg, rng);
        ConceptSeq b = a;
        const std::size_t changes = uniform_index(rng, cfg.sentence_len + 1);
        std::vector<std::size_t> positions(cfg.sentence_len);
        for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
        for (std::size_t pos : sample_without_replacement(positions, changes, rng)) {
            b[pos] = static_cast<std::uint32_t>(uniform_index(rng, cfg.alphabet_size));
        }
        std::map<std::uint32_t, int> count;
        for (auto c : a) ++count[c];
        std::size_t shared = 0;
        for (auto c : b) {
            if (count[c]-- > 0) ++shared;
        }
        out.push_back({corpus.render(a, lang_a), corpus.render(b, lang_b),
                       static_cast<double>(shared) / static_cast<double>(cfg.sentence_len)});
    }
    return out;
}

/// Topic-labelled sentences: the alphabet is split into `n_topics` contiguous
/// blocks and each token comes from the label's block with probability
/// `topic_weight`, otherwise from the whole alphabet.
inline std::vector<LabelledText> cipher_topic_set(const CipherCorpus& corpus, std::size_t n, std::size_t n_topics,
                                                  double topic_weight, const LanguageCode& lang, std::uint64_t seed) {
    const auto& cfg = corpus.config;
    if (n_topics < 2 || n_topics > cfg.alphabet_size) throw InvalidArgument("cipher topics: need 2 <= n_topics <= alphabet");
    Rng rng(seed);
    const std::size_t block = cfg.alphabet_size / n_topics;
    std::vector<LabelledText> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t topic = i % n_topics;
        ConceptSeq s(cfg.sentence_len);
        for (auto& c : s) {
            c = static_cast<std::uint32_t>(uniform01(rng) < topic_weight ? topic * block + uniform_index(rng, block)
                                                                          : uniform_index(rng, cfg.alphabet_size));
        }
        out.push_back({"t" + std::to_string(topic), corpus.render(s, lang)});
    }
    return out;
}

}  // namespace mpcl
