#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace skillrec {

/// Lowercases ASCII letters and splits on whitespace. Leading and trailing
/// ASCII punctuation is stripped from every token; empty tokens are dropped.
std::vector<std::string> tokenize_words(std::string_view text);

/// True when the text has at least one non-whitespace character.
bool has_content(std::string_view text);

/// 64-bit FNV-1a over the bytes, started from a seeded offset basis.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0);

}  // namespace skillrec
