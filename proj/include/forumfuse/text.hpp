#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

namespace forumfuse::text {

// NFC, lowercase, runs of whitespace collapsed to one space, trimmed.
// Invalid UTF-8 sequences become U+FFFD.
inline std::string normalize(std::string_view utf8) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    icu::UnicodeString src = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
    icu::UnicodeString composed = U_SUCCESS(status) ? nfc->normalize(src, status) : src;
    if (U_FAILURE(status)) composed = src;
    composed.toLower(icu::Locale::getRoot());

    icu::UnicodeString collapsed;
    bool pending_space = false;
    for (int32_t i = 0; i < composed.length();) {
        const UChar32 c = composed.char32At(i);
        i += U16_LENGTH(c);
        if (u_isUWhiteSpace(c)) {
            pending_space = !collapsed.isEmpty();
            continue;
        }
        if (pending_space) collapsed.append(static_cast<UChar>(u' '));
        pending_space = false;
        collapsed.append(c);
    }
    std::string out;
    collapsed.toUTF8String(out);
    return out;
}

// Bag-of-words tokens: maximal runs of letters and digits in the
// normalized text.
inline std::vector<std::string> tokenize(std::string_view utf8) {
    const std::string norm = normalize(utf8);
    const icu::UnicodeString u = icu::UnicodeString::fromUTF8(norm);
    std::vector<std::string> tokens;
    icu::UnicodeString current;
    auto flush = [&] {
        if (current.isEmpty()) return;
        std::string t;
        current.toUTF8String(t);
        tokens.push_back(std::move(t));
        current.remove();
    };
    for (int32_t i = 0; i < u.length();) {
        const UChar32 c = u.char32At(i);
        i += U16_LENGTH(c);
        if (u_isalnum(c) || u_hasBinaryProperty(c, UCHAR_DIACRITIC)) {
            current.append(c);
        } else {
            flush();
        }
    }
    flush();
    return tokens;
}

}  // namespace forumfuse::text
