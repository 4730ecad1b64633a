#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace xmd {

/// Social-media text cleanup applied before any model sees the text.
///
/// Removes URLs, emoji/pictograph codepoints, a small set of ASCII emoticons,
/// standalone "RT" markers and @-mentions; strips '#' from hashtags keeping the
/// word; expands negative contractions ("can't" -> "can not"); collapses
/// whitespace. Idempotent.
std::string preprocess_text(std::string_view raw);

/// Model tokenization: ASCII lowercase, whitespace split, with leading and
/// trailing sentence punctuation (".,!?;:") split into separate tokens and
/// quotes/brackets dropped.
std::vector<std::string> tokenize(std::string_view text);

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

/// Inverse of tokenize() for generated text: punctuation tokens attach to the
/// preceding word.
std::string detokenize(const std::vector<std::string>& tokens);

/// Number of whitespace-separated words.
std::size_t word_count(std::string_view text);

std::vector<std::string> split_words(std::string_view text);

/// Splits a token sequence into sentences on terminal punctuation tokens.
/// Terminal tokens are dropped; empty sentences are skipped.
std::vector<std::vector<std::string>> split_sentences(const std::vector<std::string>& tokens);

bool is_stopword(std::string_view token);

/// True if the token carries no letters or digits.
bool is_punctuation(std::string_view token);

}  // namespace xmd
