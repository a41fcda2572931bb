#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "mpcl/core/errors.hpp"

namespace mpcl {

using TokenIds = std::vector<std::uint32_t>;

/// 64-bit FNV-1a (offset basis 14695981039346656037, prime 1099511628211).
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 14695981039346656037ULL;
    for (char c : bytes) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

/// Lowercasing whitespace/punctuation tokenizer with feature hashing.
///
/// A token is a maximal run of ASCII alphanumerics and non-ASCII bytes (so
/// UTF-8 letters stay inside words); everything else separates tokens and is
/// dropped. Each token maps to the low `hash_bits` bits of its FNV-1a hash.
/// Text without tokens yields the single reserved id 0.
struct Tokenizer {
    unsigned hash_bits = 16;
    std::size_t max_len = 64;

    std::uint32_t vocab_size() const noexcept { return std::uint32_t{1} << hash_bits; }

    void validate() const {
        if (hash_bits < 1 || hash_bits > 30) throw InvalidArgument("hash_bits must be in [1, 30]");
        if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
    }

    std::uint32_t token_id(std::string_view token) const noexcept {
        return static_cast<std::uint32_t>(fnv1a64(token) & (vocab_size() - 1));
    }

    TokenIds operator()(std::string_view text) const {
        validate();
        TokenIds ids;
        std::string word;
        auto flush = [&] {
            if (!word.empty() && ids.size() < max_len) ids.push_back(token_id(word));
            word.clear();
        };
        for (char ch : text) {
            const auto c = static_cast<unsigned char>(ch);
            const bool ascii_alnum = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
            if (ascii_alnum || c >= 0x80) {
                word.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
            } else {
                flush();
            }
            if (ids.size() >= max_len) break;
        }
        flush();
        if (ids.empty()) ids.push_back(0);
        return ids;
    }
};

inline TokenIds tokenize(std::string_view text, std::size_t max_len, unsigned hash_bits = 16) {
    return Tokenizer{hash_bits, max_len}(text);
}

}  // namespace mpcl
