#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace adaptkit::uni {

bool is_valid_utf8(std::string_view text);

// Decodes to codepoints; throws validation_error on malformed input.
std::vector<uint32_t> to_codepoints(std::string_view text);

void append_utf8(std::string& out, uint32_t cp);
std::string from_codepoints(const std::vector<uint32_t>& cps);

// Validating codepoint count.
size_t codepoint_count(std::string_view text);

// Unicode White_Space property.
bool is_whitespace(uint32_t cp);

// Unicode general category P*.
bool is_punctuation(uint32_t cp);

// Canonical composition (NFC).
std::string nfc(std::string_view text);

}  // namespace adaptkit::uni
