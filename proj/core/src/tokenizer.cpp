#include "adaptkit/tokenizer.hpp"

#include <algorithm>

#include "adaptkit/errors.hpp"
#include "adaptkit/unicode.hpp"

namespace adaptkit {

ByteStats byte_stats(std::string_view text) {
    if (text.empty()) {
        throw validation_error("byte_stats: ratio undefined for empty text");
    }
    ByteStats stats;
    stats.codepoints = uni::codepoint_count(text);
    stats.bytes = text.size();
    stats.bytes_per_codepoint =
        static_cast<double>(stats.bytes) / static_cast<double>(stats.codepoints);
    return stats;
}

Tokenizer Tokenizer::byte_level(std::string name) {
    Tokenizer t;
    t.name_ = std::move(name);
    return t;
}

Tokenizer Tokenizer::with_vocabulary(std::vector<std::string> entries, std::string name) {
    Tokenizer t;
    t.name_ = std::move(name);
    t.entries_ = std::move(entries);
    for (size_t i = 0; i < t.entries_.size(); ++i) {
        const std::string& entry = t.entries_[i];
        if (entry.empty()) {
            throw validation_error("tokenizer vocabulary entry " + std::to_string(i) +
                                   " is empty");
        }
        const auto [it, inserted] = t.lookup_.emplace(entry, static_cast<TokenId>(256 + i));
        if (!inserted) {
            throw validation_error("duplicate tokenizer vocabulary entry: " + entry);
        }
        t.max_entry_len_ = std::max(t.max_entry_len_, entry.size());
    }
    return t;
}

std::vector<Tokenizer::TokenId> Tokenizer::encode(std::string_view text) const {
    if (!uni::is_valid_utf8(text)) {
        throw validation_error("encode: input is not valid UTF-8");
    }
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    if (byte_level_mode()) {
        for (const char c : text) ids.push_back(static_cast<uint8_t>(c));
        return ids;
    }
    size_t pos = 0;
    while (pos < text.size()) {
        const size_t longest = std::min(max_entry_len_, text.size() - pos);
        bool matched = false;
        for (size_t len = longest; len >= 1; --len) {
            const auto it = lookup_.find(std::string(text.substr(pos, len)));
            if (it != lookup_.end()) {
                ids.push_back(it->second);
                pos += len;
                matched = true;
                break;
            }
        }
        if (!matched) {
            ids.push_back(static_cast<uint8_t>(text[pos]));
            ++pos;
        }
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<TokenId>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (const TokenId id : ids) {
        if (id < 256) {
            out.push_back(static_cast<char>(id));
        } else if (id - 256 < entries_.size()) {
            out += entries_[id - 256];
        } else {
            throw validation_error("decode: unknown token id " + std::to_string(id));
        }
    }
    if (!uni::is_valid_utf8(out)) {
        throw validation_error("decode: id sequence does not form valid UTF-8");
    }
    return out;
}

size_t Tokenizer::count_tokens(std::string_view text) const {
    if (byte_level_mode()) {
        if (!uni::is_valid_utf8(text)) {
            throw validation_error("count_tokens: input is not valid UTF-8");
        }
        return text.size();
    }
    return encode(text).size();
}

}  // namespace adaptkit
