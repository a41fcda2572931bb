// mpcl: build datasets, generate cipher corpora, train, evaluate, compare.
//
// Exit codes: 0 ok, 1 usage or invalid configuration, 2 bad input data,
// 3 numeric failure during training.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpcl/checkpoint.hpp"
#include "mpcl/data/cipher.hpp"
#include "mpcl/data/groups.hpp"
#include "mpcl/data/io.hpp"
#include "mpcl/evaluation.hpp"
#include "mpcl/experiment.hpp"
#include "mpcl/training.hpp"

namespace fs = std::filesystem;
using namespace mpcl;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string config;
};

void write_json(const json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing", path.string());
    out << j.dump(2) << '\n';
}

std::map<LanguageCode, fs::path> parse_lang_files(const std::vector<std::string>& specs) {
    std::map<LanguageCode, fs::path> out;
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
            throw InvalidArgument("expected LANG=PATH, got '" + s + "'");
        }
        if (!out.emplace(s.substr(0, eq), s.substr(eq + 1)).second) throw InvalidArgument("language given twice: " + s.substr(0, eq));
    }
    return out;
}

// ---------------------------------------------------------------- build-data

struct BuildDataArgs {
    std::vector<std::string> premise, hypothesis;
    std::vector<std::string> langs;
};

int build_data(const BuildDataArgs& a, const Globals& g) {
    const auto premise = parse_lang_files(a.premise);
    std::set<LanguageCode> langs(a.langs.begin(), a.langs.end());
    if (langs.empty()) {
        for (const auto& [l, _] : premise) langs.insert(l);
    }
    const auto records = read_aligned(premise, parse_lang_files(a.hypothesis));
    auto result = assemble_groups(records, langs);
    attach_hard_negatives(result.groups, records);
    const fs::path out = g.out.empty() ? "groups.jsonl" : g.out;
    write_groups(result.groups, out);
    json summary{{"groups", result.groups.size()}, {"dropped_keys", result.dropped_keys.size()}, {"out", out.string()}};
    std::cout << summary.dump() << '\n';
    return 0;
}

// ------------------------------------------------------------------ to-pairs

int to_pairs(const std::string& data, const Globals& g) {
    const auto groups = read_groups(data);
    const auto result = groups_to_pairs(groups, g.seed.value_or(0));
    const fs::path out = g.out.empty() ? "pairs.tsv" : g.out;
    write_pairs(result.pairs, out);
    json summary{{"groups", groups.size()}, {"pairs", result.pairs.size()}, {"dropped_sentences", result.dropped_sentences},
                 {"out", out.string()}};
    std::cout << summary.dump() << '\n';
    return 0;
}

// --------------------------------------------------------------------- synth

int synth(CipherConfig cfg, const Globals& g) {
    if (g.seed) cfg.seed = *g.seed;
    CompareConfig layout = desk_compare_config();
    layout.corpus = cfg;
    const auto corpus = gen_cipher_corpus(cfg);
    const auto bench = make_benchmark(corpus, layout);
    const fs::path dir = g.out.empty() ? "cipher" : g.out;
    fs::create_directories(dir / "eval");
    write_groups(corpus.train_groups(), dir / "train.jsonl");
    write_groups(corpus.eval_groups(), dir / "heldout.jsonl");
    for (const auto& [lang, texts] : bench.eval_texts) write_text_lines(texts, dir / "eval" / (lang + ".txt"));
    write_sts(bench.sts, dir / "sts.tsv");
    write_labelled(bench.topics_train, dir / "topics_train.tsv");
    write_labelled(bench.topics_test, dir / "topics_test.tsv");
    if (corpus.train_langs.size() > 1) {
        // Mining set as in compare: the first quarter of pivot targets is removed.
        const auto& src = bench.eval_texts.at(corpus.train_langs[1]);
        const auto& pivot = bench.eval_texts.at(corpus.pivot());
        const std::size_t cut = src.size() / 4;
        std::vector<std::pair<std::size_t, std::size_t>> gold;
        for (std::size_t i = cut; i < src.size(); ++i) gold.emplace_back(i, i - cut);
        write_text_lines(src, dir / "mine_src.txt");
        write_text_lines(std::vector<std::string>(pivot.begin() + static_cast<std::ptrdiff_t>(cut), pivot.end()), dir / "mine_tgt.txt");
        write_gold_pairs(gold, dir / "mine_gold.tsv");
    }
    json summary{{"train_groups", corpus.train_concepts.size()},
                 {"eval_groups", corpus.eval_concepts.size()},
                 {"train_langs", corpus.train_langs},
                 {"heldout_langs", corpus.heldout_langs},
                 {"out", dir.string()}};
    std::cout << summary.dump() << '\n';
    return 0;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
    std::string data, pairs, init;
};

int train_cmd(const TrainArgs& a, const Globals& g) {
    if (g.config.empty()) throw InvalidArgument("train requires --config");
    if (a.data.empty() == a.pairs.empty()) throw InvalidArgument("train requires exactly one of --data or --pairs");
    TrainConfig cfg = load_train_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    const auto groups = a.data.empty() ? pairs_to_groups(read_pairs(a.pairs)) : read_groups(a.data);

    const fs::path dir = g.out.empty() ? "run" : g.out;
    fs::create_directories(dir);
    write_json(to_json(cfg), dir / "config.json");
    std::ofstream log(dir / "log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw DataError("cannot open log for writing", (dir / "log.jsonl").string());

    TrainOptions opt;
    opt.checkpoint_dir = dir;
    opt.log = jsonl_log(log);
    if (!a.init.empty()) opt.initial = load_checkpoint(a.init).params;
    const auto result = train(cfg, groups, opt);
    json summary{{"steps", result.steps},
                 {"epochs", cfg.epochs},
                 {"epoch_mean_loss", result.epoch_mean_loss},
                 {"dropped_groups", result.dropped_groups},
                 {"final", (dir / "final.ckpt").string()}};
    std::cout << summary.dump() << '\n';
    return 0;
}

// ---------------------------------------------------------------------- eval

struct EvalArgs {
    std::string task;
    std::string checkpoint, checkpoint_dir;
    std::string src, tgt, gold, data, train_file, test_file;
    std::string dev_src, dev_tgt, dev_gold, dev;
    std::optional<double> threshold;
    bool both_directions = false;
    std::size_t max_len = 64;
};

struct TaskData {
    std::vector<std::string> src, tgt;
    IndexPairs gold;
    std::vector<StsPair> sts;
    std::vector<LabelledText> train, test;
};

std::vector<std::string> texts_of(const std::vector<LabelledText>& rows) {
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(r.text);
    return out;
}

std::vector<std::string> labels_of(const std::vector<LabelledText>& rows) {
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(r.label);
    return out;
}

EvalReport run_task(const EvalArgs& a, const ModelParams<float>& params, const TaskData& d, std::uint64_t seed,
                    std::optional<double> threshold) {
    const Tokenizer tok{params.hash_bits, a.max_len};
    auto embed = [&](const std::vector<std::string>& t) { return embed_texts(params, tok, std::span<const std::string>(t)); };
    EvalReport r;
    r.task = a.task;
    if (a.task == "retrieval") {
        const auto s = embed(d.src), t = embed(d.tgt);
        r.per_key["forward"] = retrieval_accuracy(s, t);
        r.overall = r.per_key["forward"];
        if (a.both_directions) {
            r.per_key["backward"] = retrieval_accuracy(t, s);
            r.overall = 0.5 * (r.per_key["forward"] + r.per_key["backward"]);
        }
    } else if (a.task == "mine") {
        const auto m = mine_pairs_f1(embed(d.src), embed(d.tgt), d.gold, threshold);
        r.overall = m.f1;
        r.per_key = {{"precision", m.precision}, {"recall", m.recall}, {"threshold", m.threshold}};
    } else if (a.task == "sts") {
        r = sts_eval(params, tok, d.sts);
    } else {
        r.overall = linear_probe(embed(texts_of(d.train)), labels_of(d.train), embed(texts_of(d.test)), labels_of(d.test),
                                 {500, 0.1, 1e-4, seed});
    }
    return r;
}

TaskData load_task(const EvalArgs& a, bool dev) {
    TaskData d;
    auto need = [&](const std::string& v, const char* flag) {
        if (v.empty()) throw InvalidArgument(std::string("--task ") + a.task + " requires " + flag);
        return v;
    };
    if (a.task == "retrieval" || a.task == "mine") {
        d.src = read_text_lines(need(dev ? a.dev_src : a.src, dev ? "--dev-src" : "--src"));
        d.tgt = read_text_lines(need(dev ? a.dev_tgt : a.tgt, dev ? "--dev-tgt" : "--tgt"));
        if (a.task == "retrieval" && d.src.size() != d.tgt.size()) {
            throw DataError("retrieval files must have the same number of lines");
        }
        if (a.task == "mine") {
            const std::string path = need(dev ? a.dev_gold : a.gold, dev ? "--dev-gold" : "--gold");
            for (const auto& [i, j] : read_gold_pairs(path)) {
                if (i >= d.src.size() || j >= d.tgt.size()) throw DataError("gold pair index out of range", path);
                d.gold.insert({i, j});
            }
        }
    } else if (a.task == "sts") {
        d.sts = read_sts(need(dev ? a.dev : a.data, dev ? "--dev" : "--data"));
    } else {
        d.train = read_labelled(need(a.train_file, "--train"));
        d.test = read_labelled(need(dev ? a.dev : a.test_file, dev ? "--dev" : "--test"));
    }
    return d;
}

bool has_dev(const EvalArgs& a) {
    if (a.task == "retrieval") return !a.dev_src.empty();
    if (a.task == "mine") return !a.dev_src.empty();
    return !a.dev.empty();
}

int eval_cmd(EvalArgs a, const Globals& g) {
    static const std::set<std::string> tasks{"retrieval", "mine", "sts", "classify"};
    if (!tasks.contains(a.task)) throw InvalidArgument("--task must be one of retrieval, mine, sts, classify");
    if (a.checkpoint.empty() == a.checkpoint_dir.empty()) throw InvalidArgument("eval requires exactly one of --checkpoint or --checkpoint-dir");
    if (!g.config.empty()) a.max_len = load_train_config(g.config).max_len;
    const std::uint64_t seed = g.seed.value_or(0);
    const TaskData test = load_task(a, false);
    const std::optional<TaskData> dev = has_dev(a) ? std::optional(load_task(a, true)) : std::nullopt;

    std::vector<fs::path> candidates;
    if (!a.checkpoint.empty()) {
        candidates.push_back(a.checkpoint);
    } else {
        const std::regex pattern(R"(epoch_(\d+)\.ckpt)");
        std::vector<std::pair<long, fs::path>> found;
        for (const auto& e : fs::directory_iterator(a.checkpoint_dir)) {
            std::smatch m;
            const std::string name = e.path().filename().string();
            if (std::regex_match(name, m, pattern)) found.emplace_back(std::stol(m[1]), e.path());
        }
        std::sort(found.begin(), found.end());
        for (auto& [_, p] : found) candidates.push_back(p);
        if (candidates.empty()) throw DataError("no epoch_<n>.ckpt files", a.checkpoint_dir);
        if (!dev && candidates.size() > 1) throw InvalidArgument("--checkpoint-dir needs a dev set to select an epoch");
    }

    // Pick the checkpoint with the best dev score (earliest on ties); mining also takes its threshold from dev.
    fs::path chosen = candidates.front();
    std::optional<double> threshold = a.threshold;
    std::optional<double> best_dev;
    if (dev) {
        for (const auto& path : candidates) {
            const auto params = load_checkpoint(path).params;
            const auto r = run_task(a, params, *dev, seed, a.threshold);
            if (!best_dev || r.overall > *best_dev) {
                best_dev = r.overall;
                chosen = path;
                if (a.task == "mine" && !a.threshold) threshold = r.per_key.at("threshold");
            }
        }
    }
    const auto params = load_checkpoint(chosen).params;
    EvalReport report = run_task(a, params, test, seed, threshold);
    report.metadata["checkpoint"] = chosen.filename().string();
    report.metadata["seed"] = std::to_string(seed);
    report.metadata["dataset"] = a.task == "sts" ? a.data : a.task == "classify" ? a.test_file : a.src;
    if (best_dev) report.per_key["dev"] = *best_dev;

    const auto j = to_json(report);
    if (g.out.empty()) std::cout << j.dump(2) << '\n';
    else write_json(j, g.out);
    return 0;
}

// ------------------------------------------------------------------- compare

struct CompareArgs {
    std::optional<std::size_t> seeds;
    std::string log;
};

int compare_cmd(const CompareArgs& a, const Globals& g) {
    CompareConfig cfg = desk_compare_config();
    if (!g.config.empty()) {
        std::ifstream in(g.config);
        if (!in) throw DataError("cannot open config", g.config);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(std::string("invalid JSON: ") + e.what(), g.config);
        }
        cfg = compare_config_from_json(j);
    }
    if (a.seeds) cfg.seeds = *a.seeds;
    if (g.seed) cfg.train.seed = *g.seed;
    if (cfg.seeds < 1) throw InvalidArgument("--seeds must be >= 1");

    std::ofstream log;
    if (!a.log.empty()) {
        if (fs::path(a.log).has_parent_path()) fs::create_directories(fs::path(a.log).parent_path());
        log.open(a.log, std::ios::binary | std::ios::trunc);
        if (!log) throw DataError("cannot open log for writing", a.log);
    }
    const auto report = run_compare(cfg, [&](const std::string& arm, std::uint64_t seed, const TrainLogRecord& r) {
        if (!log.is_open()) return;
        json j{{"arm", arm}, {"seed", seed}};
        const json rec = to_json(r);
        for (const auto& [k, v] : rec.items()) {
            if (k != "wall_ms") j[k] = v;
        }
        log << j.dump() << '\n';
    });

    // Timing lives in a sidecar so the report itself is reproducible byte for byte.
    const fs::path out = g.out.empty() ? "compare.json" : g.out;
    write_json(to_json(report, false), out);
    json timing{{"runtime_s", report.runtime_s}};
    for (const auto& run : report.runs) timing["runs"].push_back({{"arm", run.arm}, {"seed", run.seed}, {"runtime_s", run.runtime_s}});
    fs::path timing_path = out;
    timing_path.replace_extension(".timing.json");
    write_json(timing, timing_path);

    json summary{{"means", report.means}, {"runtime_s", report.runtime_s}, {"out", out.string()}};
    std::cout << summary.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-positive contrastive learning for multilingual sentence embeddings"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--out", g.out, "Output file or directory");
    app.add_option("--config", g.config, "Configuration JSON");

    auto* bd = app.add_subcommand("build-data", "Group sentence-aligned per-language files");
    BuildDataArgs bda;
    bd->add_option("--lang", bda.premise, "LANG=PATH of a sentence-aligned file")->required();
    bd->add_option("--hyp", bda.hypothesis, "LANG=PATH of contradiction hypotheses (hard negatives)");
    bd->add_option("--langs", bda.langs, "Languages to keep (default: all given)")->delimiter(',');

    auto* tp = app.add_subcommand("to-pairs", "Convert groups into random cross-language pairs");
    std::string tp_data;
    tp->add_option("--data", tp_data, "Grouped dataset (JSONL)")->required();

    auto* sy = app.add_subcommand("synth", "Generate a cipher-language corpus");
    CipherConfig sc;
    sy->add_option("--concepts", sc.n_concepts, "Training groups");
    sy->add_option("--langs", sc.n_langs, "Training languages");
    sy->add_option("--heldout", sc.n_heldout, "Held-out languages");
    sy->add_option("--len", sc.sentence_len, "Tokens per sentence");
    sy->add_option("--alphabet", sc.alphabet_size, "Concept symbols");
    sy->add_option("--vocab", sc.vocab_size, "Surface tokens available per language");
    sy->add_option("--eval", sc.n_eval, "Evaluation groups");
    sy->add_option("--borrow", sc.borrow_fraction, "Fraction of held-out symbols written with training-language tokens");

    auto* tr = app.add_subcommand("train", "Train an encoder");
    TrainArgs ta;
    tr->add_option("--data", ta.data, "Grouped dataset (JSONL)");
    tr->add_option("--pairs", ta.pairs, "Pair dataset (TSV), trained as two-language groups");
    tr->add_option("--init", ta.init, "Start from this checkpoint's parameters");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    EvalArgs ea;
    ev->add_option("--task", ea.task, "retrieval | mine | sts | classify")->required();
    ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint file");
    ev->add_option("--checkpoint-dir", ea.checkpoint_dir, "Training directory; the best epoch on dev is used");
    ev->add_option("--src", ea.src, "Source sentences (retrieval, mine)");
    ev->add_option("--tgt", ea.tgt, "Target sentences (retrieval, mine)");
    ev->add_option("--gold", ea.gold, "Gold pairs i<TAB>j (mine)");
    ev->add_option("--threshold", ea.threshold, "Fixed mining threshold");
    ev->add_option("--data", ea.data, "STS pairs (sts)");
    ev->add_option("--train", ea.train_file, "Labelled training texts (classify)");
    ev->add_option("--test", ea.test_file, "Labelled test texts (classify)");
    ev->add_option("--dev-src", ea.dev_src, "Dev sources (retrieval, mine)");
    ev->add_option("--dev-tgt", ea.dev_tgt, "Dev targets (retrieval, mine)");
    ev->add_option("--dev-gold", ea.dev_gold, "Dev gold pairs (mine)");
    ev->add_option("--dev", ea.dev, "Dev file (sts, classify)");
    ev->add_flag("--both-directions", ea.both_directions, "Average forward and backward retrieval");
    ev->add_option("--max-len", ea.max_len, "Tokenizer truncation when no --config is given");

    auto* cp = app.add_subcommand("compare", "Pairs vs groups on a cipher corpus over several seeds");
    CompareArgs ca;
    cp->add_option("--seeds", ca.seeds, "Number of training seeds");
    cp->add_option("--log", ca.log, "Per-step log (JSONL)");

    for (auto* sub : {bd, tp, sy, tr, ev, cp}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*bd) return build_data(bda, g);
        if (*tp) return to_pairs(tp_data, g);
        if (*sy) return synth(sc, g);
        if (*tr) return train_cmd(ta, g);
        if (*ev) return eval_cmd(ea, g);
        if (*cp) return compare_cmd(ca, g);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const InvalidArgument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "file error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
