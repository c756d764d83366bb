#include "adaptkit/unicode.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "adaptkit/errors.hpp"

namespace adaptkit::uni {

namespace {

// Returns the codepoint at `offset` and advances it, or throws on malformed
// sequences (bad lead byte, truncation, bad continuation, overlong form,
// surrogate, out of range).
uint32_t decode_one(std::string_view text, size_t& offset) {
    const auto byte = [&](size_t i) { return static_cast<uint8_t>(text[i]); };
    const uint8_t b0 = byte(offset);
    if (b0 < 0x80) {
        offset += 1;
        return b0;
    }

    int len;
    uint32_t cp;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        throw validation_error("invalid UTF-8 lead byte at offset " + std::to_string(offset));
    }
    if (offset + len > text.size()) {
        throw validation_error("truncated UTF-8 sequence at offset " + std::to_string(offset));
    }
    for (int i = 1; i < len; ++i) {
        const uint8_t b = byte(offset + i);
        if ((b & 0xC0) != 0x80) {
            throw validation_error("invalid UTF-8 continuation byte at offset " +
                                   std::to_string(offset + i));
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    static constexpr uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len]) {
        throw validation_error("overlong UTF-8 encoding at offset " + std::to_string(offset));
    }
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
        throw validation_error("invalid codepoint at offset " + std::to_string(offset));
    }
    offset += len;
    return cp;
}

}  // namespace

bool is_valid_utf8(std::string_view text) {
    size_t offset = 0;
    try {
        while (offset < text.size()) decode_one(text, offset);
    } catch (const validation_error&) {
        return false;
    }
    return true;
}

std::vector<uint32_t> to_codepoints(std::string_view text) {
    std::vector<uint32_t> cps;
    cps.reserve(text.size());
    size_t offset = 0;
    while (offset < text.size()) cps.push_back(decode_one(text, offset));
    return cps;
}

void append_utf8(std::string& out, uint32_t cp) {
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
        throw validation_error("cannot encode invalid codepoint " + std::to_string(cp));
    }
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

std::string from_codepoints(const std::vector<uint32_t>& cps) {
    std::string out;
    out.reserve(cps.size());
    for (const uint32_t cp : cps) append_utf8(out, cp);
    return out;
}

size_t codepoint_count(std::string_view text) {
    size_t offset = 0;
    size_t count = 0;
    while (offset < text.size()) {
        decode_one(text, offset);
        ++count;
    }
    return count;
}

bool is_whitespace(uint32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)) != 0; }

bool is_punctuation(uint32_t cp) { return u_ispunct(static_cast<UChar32>(cp)) != 0; }

std::string nfc(std::string_view text) {
    if (!is_valid_utf8(text)) {
        throw validation_error("nfc: input is not valid UTF-8");
    }
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) {
        throw io_error("ICU NFC instance unavailable");
    }
    const icu::UnicodeString input =
        icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    const icu::UnicodeString normalized = normalizer->normalize(input, status);
    if (U_FAILURE(status)) {
        throw validation_error("NFC normalization failed");
    }
    std::string out;
    normalized.toUTF8String(out);
    return out;
}

}  // namespace adaptkit::uni
