#include "xmd/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <unordered_set>

namespace xmd {
namespace {

bool is_pictograph(char32_t cp) {
    return (cp >= 0x1F000 && cp <= 0x1FAFF)    // emoji, symbols & pictographs, flags
           || (cp >= 0x2600 && cp <= 0x27BF)   // misc symbols, dingbats
           || (cp >= 0x2B00 && cp <= 0x2BFF)   // arrows, stars
           || (cp >= 0x2300 && cp <= 0x23FF)   // misc technical (watch, hourglass)
           || (cp >= 0xFE00 && cp <= 0xFE0F)   // variation selectors
           || (cp >= 0xE0020 && cp <= 0xE007F) // tag sequences
           || cp == 0x200D || cp == 0x20E3 || cp == 0x3030 || cp == 0x303D || cp == 0x3297 ||
           cp == 0x3299 || cp == 0x00A9 || cp == 0x00AE || cp == 0x2122;
}

// Drops pictograph codepoints; malformed UTF-8 bytes pass through unchanged.
std::string strip_pictographs(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        char32_t cp = c;
        if (c >= 0xF0 && c <= 0xF4) {
            len = 4;
            cp = c & 0x07;
        } else if (c >= 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if (c >= 0xC2 && c < 0xE0) {
            len = 2;
            cp = c & 0x1F;
        }
        bool valid = len == 1 || i + len <= s.size();
        for (std::size_t k = 1; valid && k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) {
                valid = false;
            } else {
                cp = (cp << 6) | (cc & 0x3F);
            }
        }
        if (!valid) {
            out.push_back(s[i]);
            ++i;
            continue;
        }
        if (len == 1 || !is_pictograph(cp)) out.append(s.substr(i, len));
        i += len;
    }
    return out;
}

const std::unordered_set<std::string_view>& emoticons() {
    static const std::unordered_set<std::string_view> set = {
        ":)", ":-)", ":(", ":-(", ":D", ":-D", ";)", ";-)", ":P", ":-P", ":p", ":-p",
        ":/", ":-/", ":'(", "<3", "</3", ":o", ":O", "xD", "XD", ":|", ":*", "^_^", "-_-"};
    return set;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
    }
    return true;
}

bool is_url(std::string_view t) {
    return starts_with_ci(t, "http:") || starts_with_ci(t, "https:") || starts_with_ci(t, "www.");
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

// Splits a trailing run of punctuation off a token so contraction rules see the bare word.
std::pair<std::string, std::string> split_trailing_punct(const std::string& t) {
    std::size_t end = t.size();
    while (end > 0 && std::ispunct(static_cast<unsigned char>(t[end - 1])) && t[end - 1] != '\'') --end;
    return {t.substr(0, end), t.substr(end)};
}

// Expands "xxn't" forms; returns empty when the token is not a negative contraction.
std::vector<std::string> expand_negative(const std::string& token) {
    auto [core, tail] = split_trailing_punct(token);
    std::string norm = core;
    // Typographic apostrophe (U+2019) to ASCII.
    for (std::size_t pos; (pos = norm.find("\xE2\x80\x99")) != std::string::npos;) norm.replace(pos, 3, "'");
    const std::string low = lower(norm);
    if (low.size() < 3 || low.compare(low.size() - 3, 3, "n't") != 0) return {};
    static const std::array<std::pair<std::string_view, std::string_view>, 4> special = {{
        {"won't", "will"}, {"can't", "can"}, {"shan't", "shall"}, {"ain't", "am"}}};
    std::string stem;
    for (const auto& [form, base] : special) {
        if (low == form) {
            stem = base;
            if (std::isupper(static_cast<unsigned char>(norm[0]))) stem[0] = static_cast<char>(std::toupper(stem[0]));
            break;
        }
    }
    if (stem.empty()) stem = norm.substr(0, norm.size() - 3);
    std::vector<std::string> out;
    if (!stem.empty()) out.push_back(stem);
    out.push_back("not" + tail);
    return out;
}

}  // namespace

std::string preprocess_text(std::string_view raw) {
    const std::string cleaned = strip_pictographs(raw);
    std::vector<std::string> kept;
    for (std::string token : split_words(cleaned)) {
        token.erase(std::remove(token.begin(), token.end(), '#'), token.end());
        if (token.empty() || token[0] == '@' || is_url(token)) continue;
        if (token == "RT" || token == "RT:") continue;
        if (emoticons().count(token) != 0) continue;
        auto expanded = expand_negative(token);
        if (expanded.empty()) {
            kept.push_back(std::move(token));
        } else {
            for (auto& e : expanded) kept.push_back(std::move(e));
        }
    }
    return join(kept);
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

std::size_t word_count(std::string_view text) { return split_words(text).size(); }

std::vector<std::string> tokenize(std::string_view text) {
    static constexpr std::string_view kSplit = ".,!?;:";
    static constexpr std::string_view kDrop = "\"()[]{}";
    std::vector<std::string> out;
    for (std::string word : split_words(text)) {
        word = lower(word);
        std::size_t b = 0;
        std::size_t e = word.size();
        std::vector<std::string> lead;
        std::vector<std::string> trail;
        while (b < e && (kSplit.find(word[b]) != std::string_view::npos || kDrop.find(word[b]) != std::string_view::npos)) {
            if (kSplit.find(word[b]) != std::string_view::npos) lead.emplace_back(1, word[b]);
            ++b;
        }
        while (e > b && (kSplit.find(word[e - 1]) != std::string_view::npos || kDrop.find(word[e - 1]) != std::string_view::npos)) {
            if (kSplit.find(word[e - 1]) != std::string_view::npos) trail.emplace_back(1, word[e - 1]);
            --e;
        }
        for (auto& t : lead) out.push_back(std::move(t));
        if (e > b) out.push_back(word.substr(b, e - b));
        for (auto it = trail.rbegin(); it != trail.rend(); ++it) out.push_back(std::move(*it));
    }
    return out;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.append(sep);
        out.append(tokens[i]);
    }
    return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty() && !is_punctuation(t)) out.push_back(' ');
        out.append(t);
    }
    return out;
}

std::vector<std::vector<std::string>> split_sentences(const std::vector<std::string>& tokens) {
    std::vector<std::vector<std::string>> out;
    std::vector<std::string> current;
    for (const auto& t : tokens) {
        if (t == "." || t == "!" || t == "?") {
            if (!current.empty()) out.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(t);
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

bool is_stopword(std::string_view token) {
    static const std::unordered_set<std::string_view> words = {
        "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as",
        "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can",
        "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from", "further",
        "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his", "how", "i", "if", "in",
        "into", "is", "it", "its", "just", "me", "more", "most", "my", "no", "nor", "not", "now", "of",
        "off", "on", "once", "only", "or", "other", "our", "ours", "out", "over", "own", "same", "she",
        "should", "so", "some", "such", "than", "that", "the", "their", "them", "then", "there", "these",
        "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we",
        "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with", "would",
        "you", "your", "yours"};
    return words.count(token) != 0;
}

bool is_punctuation(std::string_view token) {
    return std::none_of(token.begin(), token.end(),
                        [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; });
}

}  // namespace xmd
