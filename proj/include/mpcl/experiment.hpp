#pragma once

// Matched pair-vs-group training on a cipher corpus. The single arm trains on
// the pair conversion of the training groups with one positive per anchor;
// the multi arm trains on the groups themselves with K positives. Both arms
// of a seed start from the same parameters and see every sentence once per epoch.

#include <chrono>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpcl/data/cipher.hpp"
#include "mpcl/data/groups.hpp"
#include "mpcl/evaluation.hpp"
#include "mpcl/training.hpp"

namespace mpcl {

struct CompareConfig {
    CipherConfig corpus;
    TrainConfig train;            // shared settings; objective and k are set per arm
    std::size_t seeds = 5;        // training seeds train.seed, train.seed + 1, ...
    std::size_t k_multi = 5;
    bool redraw_pairs = false;    // new random pairing every epoch in the single arm
    std::size_t sts_pairs = 300;
    std::size_t topic_examples = 400;  // per split
    std::size_t topics = 4;
    double topic_weight = 0.5;
};

/// The desk-scale comparison: 500 concepts in 6 training languages plus one
/// held-out language, K=5, d=64, batch 32, 30 epochs, 5 seeds. Learning
/// rates are raised from the fine-tuning defaults because this encoder
/// trains from scratch in a few hundred steps; warm-up covers the first third
/// of the grouped arm's steps.
inline CompareConfig desk_compare_config() {
    CompareConfig c;
    c.corpus.n_concepts = 500;
    c.corpus.n_langs = 6;
    c.corpus.n_heldout = 1;
    c.corpus.sentence_len = 8;
    c.corpus.alphabet_size = 50;
    c.corpus.vocab_size = 256;
    c.corpus.n_eval = 200;
    c.corpus.borrow_fraction = 0.5;
    c.corpus.seed = 1;
    c.train.batch_size = 32;
    c.train.dim = 64;
    c.train.hash_bits = 16;
    c.train.max_len = 64;
    c.train.tau = 0.05;
    c.train.epochs = 30;
    c.train.warmup_steps = 150;
    c.train.lr_warmup = 1e-2;
    c.train.lr_main = 1e-3;
    c.train.normalization = Normalization::min_max;
    c.train.seed = 0;
    c.seeds = 5;
    c.k_multi = 5;
    return c;
}

inline nlohmann::ordered_json to_json(const CipherConfig& c) {
    nlohmann::ordered_json j;
    j["concepts"] = c.n_concepts;
    j["sentence_len"] = c.sentence_len;
    j["langs"] = c.n_langs;
    j["heldout"] = c.n_heldout;
    j["alphabet"] = c.alphabet_size;
    j["vocab"] = c.vocab_size;
    j["eval_concepts"] = c.n_eval;
    j["borrow_fraction"] = c.borrow_fraction;
    j["seed"] = c.seed;
    return j;
}

inline CipherConfig cipher_config_from_json(const nlohmann::json& j, const CipherConfig& base = {}) {
    if (!j.is_object()) throw InvalidArgument("corpus config must be a JSON object");
    CipherConfig c = base;
    for (const auto& [key, v] : j.items()) {
        auto count = [&] {
            if (!detail::is_count(v)) throw InvalidArgument("corpus key '" + key + "' must be a non-negative integer");
            return v.get<std::size_t>();
        };
        if (key == "concepts") c.n_concepts = count();
        else if (key == "sentence_len") c.sentence_len = count();
        else if (key == "langs") c.n_langs = count();
        else if (key == "heldout") c.n_heldout = count();
        else if (key == "alphabet") c.alphabet_size = count();
        else if (key == "vocab") c.vocab_size = count();
        else if (key == "eval_concepts") c.n_eval = count();
        else if (key == "seed") c.seed = count();
        else if (key == "borrow_fraction") {
            if (!v.is_number()) throw InvalidArgument("corpus key 'borrow_fraction' must be a number");
            c.borrow_fraction = v.get<double>();
        } else {
            throw InvalidArgument("unknown corpus key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

/// {"corpus": {...}, "train": {...}, "seeds": n, "k_multi": k, "redraw_pairs": b, ...}
/// overlaid on the desk configuration.
inline CompareConfig compare_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("compare config must be a JSON object");
    CompareConfig c = desk_compare_config();
    for (const auto& [key, v] : j.items()) {
        auto count = [&] {
            if (!detail::is_count(v)) throw InvalidArgument("compare key '" + key + "' must be a non-negative integer");
            return v.get<std::size_t>();
        };
        if (key == "corpus") c.corpus = cipher_config_from_json(v, c.corpus);
        else if (key == "train") c.train = train_config_from_json(v, c.train);
        else if (key == "seeds") c.seeds = count();
        else if (key == "k_multi") c.k_multi = count();
        else if (key == "sts_pairs") c.sts_pairs = count();
        else if (key == "topic_examples") c.topic_examples = count();
        else if (key == "topics") c.topics = count();
        else if (key == "redraw_pairs") {
            if (!v.is_boolean()) throw InvalidArgument("compare key 'redraw_pairs' must be true or false");
            c.redraw_pairs = v.get<bool>();
        } else if (key == "topic_weight") {
            if (!v.is_number()) throw InvalidArgument("compare key 'topic_weight' must be a number");
            c.topic_weight = v.get<double>();
        } else {
            throw InvalidArgument("unknown compare key '" + key + "'");
        }
    }
    if (c.seeds < 1) throw InvalidArgument("seeds must be >= 1");
    if (c.k_multi < 1 || c.k_multi + 1 > c.corpus.n_langs) throw InvalidArgument("k_multi must be in [1, langs - 1]");
    if (c.corpus.n_langs < 2) throw InvalidArgument("compare needs at least 2 training languages");
    return c;
}

inline nlohmann::ordered_json to_json(const CompareConfig& c) {
    nlohmann::ordered_json j;
    j["corpus"] = to_json(c.corpus);
    j["train"] = to_json(c.train);
    j["seeds"] = c.seeds;
    j["k_multi"] = c.k_multi;
    j["redraw_pairs"] = c.redraw_pairs;
    j["sts_pairs"] = c.sts_pairs;
    j["topic_examples"] = c.topic_examples;
    j["topics"] = c.topics;
    j["topic_weight"] = c.topic_weight;
    return j;
}

/// Fixed evaluation material derived from the corpus.
struct CipherBenchmark {
    std::map<LanguageCode, std::vector<std::string>> eval_texts;  // aligned across languages
    std::vector<StsPair> sts;
    std::vector<LabelledText> topics_train;  // pivot language
    std::vector<LabelledText> topics_test;   // first non-pivot training language
};

inline CipherBenchmark make_benchmark(const CipherCorpus& corpus, const CompareConfig& cfg) {
    CipherBenchmark b;
    for (const auto& lang : corpus.all_langs()) {
        for (const auto& seq : corpus.eval_concepts) b.eval_texts[lang].push_back(corpus.render(seq, lang));
    }
    const LanguageCode& other = corpus.train_langs.size() > 1 ? corpus.train_langs[1] : corpus.pivot();
    const std::uint64_t s = corpus.config.seed;
    b.sts = cipher_sts_pairs(corpus, cfg.sts_pairs, corpus.pivot(), other, derive_seed(s, 101));
    b.topics_train = cipher_topic_set(corpus, cfg.topic_examples, cfg.topics, cfg.topic_weight, corpus.pivot(), derive_seed(s, 102));
    b.topics_test = cipher_topic_set(corpus, cfg.topic_examples, cfg.topics, cfg.topic_weight, other, derive_seed(s, 103));
    return b;
}

struct RunMetrics {
    double retrieval_seen = 0.0;     // mean over non-pivot training languages, language -> pivot
    double retrieval_heldout = 0.0;  // mean over held-out languages, language -> pivot
    double mining_f1 = 0.0;          // swept F1, non-pivot training languages -> pivot
    double sts_spearman = 0.0;
    double classify_accuracy = 0.0;
    std::map<std::string, double> retrieval_by_lang;
};

inline std::map<std::string, double> as_map(const RunMetrics& m) {
    return {{"retrieval_seen", m.retrieval_seen},
            {"retrieval_heldout", m.retrieval_heldout},
            {"mining_f1", m.mining_f1},
            {"sts_spearman", m.sts_spearman},
            {"classify_accuracy", m.classify_accuracy}};
}

/// Mining set for one language: every source is kept, but the first quarter of
/// the pivot side is removed so a quarter of the sources have no translation.
inline MiningResult mining_on(const Matrix<double>& src, const Matrix<double>& pivot) {
    const std::size_t cut = src.rows() / 4;
    const Matrix<double> tgt = slice_rows(pivot, cut, pivot.rows() - cut);
    IndexPairs gold;
    for (std::size_t i = cut; i < src.rows(); ++i) gold.insert({i, i - cut});
    return mine_pairs_f1(src, tgt, gold);
}

template <class T>
RunMetrics evaluate_run(const ModelParams<T>& params, const Tokenizer& tok, const CipherCorpus& corpus,
                        const CipherBenchmark& bench, std::uint64_t probe_seed) {
    RunMetrics m;
    std::map<LanguageCode, Matrix<double>> emb;
    for (const auto& [lang, texts] : bench.eval_texts) emb[lang] = embed_texts(params, tok, std::span<const std::string>(texts));
    const auto& pivot = emb.at(corpus.pivot());

    double seen = 0.0, f1 = 0.0;
    std::size_t n_seen = 0;
    for (const auto& lang : corpus.train_langs) {
        if (lang == corpus.pivot()) continue;
        const double acc = retrieval_accuracy(emb.at(lang), pivot);
        m.retrieval_by_lang[lang] = acc;
        seen += acc;
        f1 += mining_on(emb.at(lang), pivot).f1;
        ++n_seen;
    }
    if (n_seen) {
        m.retrieval_seen = seen / static_cast<double>(n_seen);
        m.mining_f1 = f1 / static_cast<double>(n_seen);
    }
    double held = 0.0;
    for (const auto& lang : corpus.heldout_langs) {
        const double acc = retrieval_accuracy(emb.at(lang), pivot);
        m.retrieval_by_lang[lang] = acc;
        held += acc;
    }
    if (!corpus.heldout_langs.empty()) m.retrieval_heldout = held / static_cast<double>(corpus.heldout_langs.size());

    if (!bench.sts.empty()) m.sts_spearman = sts_eval(params, tok, bench.sts).overall;

    if (!bench.topics_train.empty()) {
        auto split = [&](const std::vector<LabelledText>& rows) {
            std::vector<std::string> texts, labels;
            for (const auto& r : rows) {
                texts.push_back(r.text);
                labels.push_back(r.label);
            }
            return std::pair{embed_texts(params, tok, std::span<const std::string>(texts)), labels};
        };
        const auto [xtr, ytr] = split(bench.topics_train);
        const auto [xte, yte] = split(bench.topics_test);
        m.classify_accuracy = linear_probe(xtr, ytr, xte, yte, {500, 0.1, 1e-4, probe_seed});
    }
    return m;
}

struct CompareRun {
    std::string arm;  // "single" or "multi"
    std::uint64_t seed = 0;
    std::uint64_t steps = 0;
    double runtime_s = 0.0;
    std::vector<double> epoch_mean_loss;
    RunMetrics metrics;
};

struct CompareReport {
    CompareConfig config;
    std::vector<CompareRun> runs;
    std::map<std::string, std::map<std::string, double>> means;  // arm -> metric -> mean
    std::map<std::string, double> runtime_s;                     // arm -> total seconds
};

inline TrainConfig arm_config(const CompareConfig& cfg, const std::string& arm, std::uint64_t seed) {
    TrainConfig t = cfg.train;
    t.seed = seed;
    if (arm == "single") {
        t.objective = Objective::single;
        t.k_positives = 1;
    } else {
        t.objective = Objective::multi;
        t.k_positives = cfg.k_multi;
    }
    return t;
}

inline CompareReport run_compare(const CompareConfig& cfg,
                                 const std::function<void(const std::string&, std::uint64_t, const TrainLogRecord&)>& log = {}) {
    cfg.train.validate();
    const CipherCorpus corpus = gen_cipher_corpus(cfg.corpus);
    const auto groups = corpus.train_groups();
    const auto bench = make_benchmark(corpus, cfg);
    const Tokenizer tok = cfg.train.tokenizer();

    CompareReport report;
    report.config = cfg;
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
        const std::uint64_t seed = cfg.train.seed + s;
        const auto init = init_params(cfg.train, seed);

        // Same sentences in both arms: refuse to run if the pairing lost any.
        const auto converted = groups_to_pairs(groups, seed);
        check_conservation(groups, converted);
        const auto pair_groups = pairs_to_groups(converted.pairs);

        for (const std::string arm : {"single", "multi"}) {
            const TrainConfig tc = arm_config(cfg, arm, seed);
            TrainOptions opt;
            opt.initial = init;
            if (log) opt.log = [&](const TrainLogRecord& r) { log(arm, seed, r); };
            if (arm == "single" && cfg.redraw_pairs) {
                opt.epoch_dataset = [&](std::size_t epoch) {
                    const auto redrawn = groups_to_pairs(groups, derive_seed(seed, 1000 + epoch));
                    check_conservation(groups, redrawn);
                    return pairs_to_groups(redrawn.pairs);
                };
            }
            const auto t0 = std::chrono::steady_clock::now();
            const auto result = train(tc, arm == "single" ? pair_groups : groups, opt);
            CompareRun run{arm, seed, result.steps, 0.0, result.epoch_mean_loss,
                           evaluate_run(result.params, tok, corpus, bench, seed)};
            run.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            report.runtime_s[arm] += run.runtime_s;
            report.runs.push_back(std::move(run));
        }
    }
    for (const auto& run : report.runs) {
        for (const auto& [k, v] : as_map(run.metrics)) report.means[run.arm][k] += v / static_cast<double>(cfg.seeds);
    }
    return report;
}

inline nlohmann::ordered_json to_json(const CompareReport& r, bool include_timing = true) {
    nlohmann::ordered_json j;
    j["task"] = "compare";
    j["config"] = to_json(r.config);
    j["runs"] = nlohmann::ordered_json::array();
    for (const auto& run : r.runs) {
        nlohmann::ordered_json e;
        e["arm"] = run.arm;
        e["seed"] = run.seed;
        e["steps"] = run.steps;
        if (include_timing) e["runtime_s"] = run.runtime_s;
        e["epoch_mean_loss"] = run.epoch_mean_loss;
        e["metrics"] = as_map(run.metrics);
        e["retrieval_by_lang"] = run.metrics.retrieval_by_lang;
        j["runs"].push_back(std::move(e));
    }
    j["means"] = r.means;
    if (include_timing) j["runtime_s"] = r.runtime_s;
    return j;
}

}  // namespace mpcl
