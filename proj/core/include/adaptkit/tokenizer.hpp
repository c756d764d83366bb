#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adaptkit {

// UTF-8 byte and codepoint counts for one text. `bytes_per_codepoint` is the
// exact ratio bytes / codepoints and lies in [1, 4] for any valid UTF-8 text.
struct ByteStats {
    size_t codepoints = 0;
    size_t bytes = 0;
    double bytes_per_codepoint = 0.0;
};

ByteStats byte_stats(std::string_view text);

// Deterministic reference tokenizer.
//
// The default is byte-level: token ids 0..255 are the UTF-8 bytes of the
// text, one id per byte. An optional vocabulary maps byte sequences to ids
// 256 + i; encoding then runs greedy longest-match with byte fallback, which
// keeps the roundtrip decode(encode(t)) == t lossless for any vocabulary.
// Identical input always yields the identical id sequence.
class Tokenizer {
public:
    using TokenId = uint32_t;

    static Tokenizer byte_level(std::string name = "byte-level");

    // Entries must be non-empty and distinct. Earlier entries win ties of
    // equal length at the same position (they cannot, entries are distinct,
    // so match order is immaterial; longest match wins).
    static Tokenizer with_vocabulary(std::vector<std::string> entries,
                                     std::string name = "vocab");

    const std::string& name() const { return name_; }
    bool byte_level_mode() const { return entries_.empty(); }
    size_t vocabulary_size() const { return entries_.size(); }

    // Rejects input that is not valid UTF-8.
    std::vector<TokenId> encode(std::string_view text) const;

    // Exact inverse of encode. Rejects unknown ids and id sequences whose
    // materialized bytes are not valid UTF-8.
    std::string decode(const std::vector<TokenId>& ids) const;

    size_t count_tokens(std::string_view text) const;

private:
    Tokenizer() = default;

    std::string name_;
    std::vector<std::string> entries_;
    std::unordered_map<std::string, TokenId> lookup_;
    size_t max_entry_len_ = 0;
};

}  // namespace adaptkit
