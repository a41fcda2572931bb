#pragma once

// Dataset file formats.
//
//   groups   JSONL: {"id": str, "texts": {lang: str}, "hard_negatives": {lang: str}}
//   pairs    TSV:   src_lang, tgt_lang, src_text, tgt_text (no header)
//   aligned  one text file per language, line i of every file is a translation
//   sts      TSV:   text_a, text_b, gold_score
//   labelled TSV:   label, text
//   gold     TSV:   i, j (0-based indices into the mining source/target files)

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mpcl/core/errors.hpp"
#include "mpcl/data/groups.hpp"

namespace mpcl {

namespace fs = std::filesystem;

namespace detail {

inline std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file", path.string());
    return in;
}

inline std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing", path.string());
    return out;
}

/// Lines without their terminator; a trailing "\r" is stripped too.
inline std::vector<std::string> read_lines(const fs::path& path) {
    auto in = open_in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

inline std::vector<std::string> split_tabs(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto tab = line.find('\t', start);
        out.emplace_back(line.substr(start, tab - start));
        if (tab == std::string_view::npos) return out;
        start = tab + 1;
    }
}

/// Tab and newline would break the TSV framing.
inline void check_tsv_field(const std::string& field, const std::string& what) {
    if (field.find_first_of("\t\r\n") != std::string::npos) {
        throw InvalidArgument(what + " contains a tab or newline and cannot be written as TSV");
    }
}

inline double parse_double(const std::string& s, const std::string& source, std::size_t line) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw DataError("not a number: '" + s + "'", source, line);
    return v;
}

inline std::size_t parse_index(const std::string& s, const std::string& source, std::size_t line) {
    std::size_t v = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw DataError("not an index: '" + s + "'", source, line);
    return v;
}

inline std::map<LanguageCode, std::string> string_map(const nlohmann::json& j, const char* field,
                                                      const std::string& source, std::size_t line) {
    if (!j.is_object()) throw DataError(std::string("'") + field + "' must be an object", source, line);
    std::map<LanguageCode, std::string> out;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_string()) throw DataError(std::string("'") + field + "." + k + "' must be a string", source, line);
        out.emplace(k, v.get<std::string>());
    }
    return out;
}

}  // namespace detail

inline nlohmann::ordered_json group_to_json(const SentenceGroup& g) {
    nlohmann::ordered_json j;
    j["id"] = g.id;
    j["texts"] = nlohmann::ordered_json::object();
    for (const auto& [lang, text] : g.texts) j["texts"][lang] = text;
    if (!g.hard_negatives.empty()) {
        j["hard_negatives"] = nlohmann::ordered_json::object();
        for (const auto& [lang, text] : g.hard_negatives) j["hard_negatives"][lang] = text;
    }
    return j;
}

inline void write_groups(const std::vector<SentenceGroup>& groups, const fs::path& path) {
    auto out = detail::open_out(path);
    for (const auto& g : groups) out << group_to_json(g).dump() << '\n';
    if (!out) throw DataError("write failed", path.string());
}

inline std::vector<SentenceGroup> read_groups(const fs::path& path) {
    const std::string source = path.string();
    std::vector<SentenceGroup> groups;
    std::size_t line_no = 0;
    for (const auto& line : detail::read_lines(path)) {
        ++line_no;
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(std::string("invalid JSON: ") + e.what(), source, line_no);
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("texts")) {
            throw DataError("expected an object with string 'id' and object 'texts'", source, line_no);
        }
        for (const auto& [k, _] : j.items()) {
            if (k != "id" && k != "texts" && k != "hard_negatives") throw DataError("unknown field '" + k + "'", source, line_no);
        }
        SentenceGroup g;
        g.id = j["id"].get<std::string>();
        g.texts = detail::string_map(j["texts"], "texts", source, line_no);
        if (j.contains("hard_negatives")) g.hard_negatives = detail::string_map(j["hard_negatives"], "hard_negatives", source, line_no);
        if (g.texts.size() < 2) throw DataError("group '" + g.id + "' has fewer than 2 languages", source, line_no);
        groups.push_back(std::move(g));
    }
    return groups;
}

inline void write_pairs(const std::vector<PairRecord>& pairs, const fs::path& path) {
    auto out = detail::open_out(path);
    for (const auto& p : pairs) {
        for (const auto* f : {&p.src_lang, &p.tgt_lang, &p.src_text, &p.tgt_text}) detail::check_tsv_field(*f, "pair field");
        out << p.src_lang << '\t' << p.tgt_lang << '\t' << p.src_text << '\t' << p.tgt_text << '\n';
    }
    if (!out) throw DataError("write failed", path.string());
}

inline std::vector<PairRecord> read_pairs(const fs::path& path) {
    const std::string source = path.string();
    std::vector<PairRecord> pairs;
    std::size_t line_no = 0;
    for (const auto& line : detail::read_lines(path)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = detail::split_tabs(line);
        if (f.size() != 4) throw DataError("expected 4 tab-separated columns, got " + std::to_string(f.size()), source, line_no);
        if (f[0] == f[1]) throw DataError("src_lang equals tgt_lang", source, line_no);
        pairs.push_back({std::move(f[0]), std::move(f[1]), std::move(f[2]), std::move(f[3])});
    }
    return pairs;
}

/// Parallel records from sentence-aligned files. The line index is the group
/// key; an empty line counts as a missing sentence for that language. Every
/// file, including the optional hypothesis files, must have the same number of lines.
inline std::vector<ParallelRecord> read_aligned(const std::map<LanguageCode, fs::path>& premise_files,
                                                const std::map<LanguageCode, fs::path>& hypothesis_files = {}) {
    std::vector<ParallelRecord> records;
    std::optional<std::size_t> expected;
    std::string first_source;
    auto load = [&](const LanguageCode& lang, const fs::path& path, SentenceRole role) {
        const auto lines = detail::read_lines(path);
        if (!expected) {
            expected = lines.size();
            first_source = path.string();
        } else if (lines.size() != *expected) {
            throw DataError("line count " + std::to_string(lines.size()) + " differs from " + first_source + " (" +
                                std::to_string(*expected) + ")",
                            path.string());
        }
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (!lines[i].empty()) records.push_back({lang, std::to_string(i), lines[i], role});
        }
    };
    for (const auto& [lang, path] : premise_files) load(lang, path, SentenceRole::premise);
    for (const auto& [lang, path] : hypothesis_files) load(lang, path, SentenceRole::hypothesis);
    return records;
}

/// Attaches contradiction hypotheses (same line index) to assembled groups as hard negatives.
inline void attach_hard_negatives(std::vector<SentenceGroup>& groups, const std::vector<ParallelRecord>& records) {
    std::map<std::string, std::map<LanguageCode, std::string>> by_key;
    for (const auto& r : records) {
        if (r.role == SentenceRole::hypothesis) by_key[r.key][r.lang] = r.text;
    }
    for (auto& g : groups) {
        if (auto it = by_key.find(g.id); it != by_key.end()) g.hard_negatives = it->second;
    }
}

inline std::vector<std::string> read_text_lines(const fs::path& path) { return detail::read_lines(path); }

inline void write_text_lines(const std::vector<std::string>& lines, const fs::path& path) {
    auto out = detail::open_out(path);
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw DataError("write failed", path.string());
}

struct StsPair {
    std::string a, b;
    double gold = 0.0;
};

inline std::vector<StsPair> read_sts(const fs::path& path) {
    const std::string source = path.string();
    std::vector<StsPair> out;
    std::size_t line_no = 0;
    for (const auto& line : detail::read_lines(path)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = detail::split_tabs(line);
        if (f.size() != 3) throw DataError("expected 3 tab-separated columns, got " + std::to_string(f.size()), source, line_no);
        out.push_back({std::move(f[0]), std::move(f[1]), detail::parse_double(f[2], source, line_no)});
    }
    return out;
}

inline void write_sts(const std::vector<StsPair>& pairs, const fs::path& path) {
    auto out = detail::open_out(path);
    out.precision(17);
    for (const auto& p : pairs) {
        detail::check_tsv_field(p.a, "sts text");
        detail::check_tsv_field(p.b, "sts text");
        out << p.a << '\t' << p.b << '\t' << p.gold << '\n';
    }
    if (!out) throw DataError("write failed", path.string());
}

struct LabelledText {
    std::string label;
    std::string text;
};

inline std::vector<LabelledText> read_labelled(const fs::path& path) {
    const std::string source = path.string();
    std::vector<LabelledText> out;
    std::size_t line_no = 0;
    for (const auto& line : detail::read_lines(path)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = detail::split_tabs(line);
        if (f.size() != 2) throw DataError("expected 2 tab-separated columns, got " + std::to_string(f.size()), source, line_no);
        out.push_back({std::move(f[0]), std::move(f[1])});
    }
    return out;
}

inline void write_labelled(const std::vector<LabelledText>& rows, const fs::path& path) {
    auto out = detail::open_out(path);
    for (const auto& r : rows) {
        detail::check_tsv_field(r.label, "label");
        detail::check_tsv_field(r.text, "text");
        out << r.label << '\t' << r.text << '\n';
    }
    if (!out) throw DataError("write failed", path.string());
}

inline std::vector<std::pair<std::size_t, std::size_t>> read_gold_pairs(const fs::path& path) {
    const std::string source = path.string();
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t line_no = 0;
    for (const auto& line : detail::read_lines(path)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = detail::split_tabs(line);
        if (f.size() != 2) throw DataError("expected 'i<TAB>j'", source, line_no);
        out.emplace_back(detail::parse_index(f[0], source, line_no), detail::parse_index(f[1], source, line_no));
    }
    return out;
}

inline void write_gold_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, const fs::path& path) {
    auto out = detail::open_out(path);
    for (const auto& [i, j] : pairs) out << i << '\t' << j << '\n';
    if (!out) throw DataError("write failed", path.string());
}

}  // namespace mpcl
