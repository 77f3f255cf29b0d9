#pragma once

#include <string>
#include <vector>

namespace sac {

// Shared answer normalization: lowercase, strip punctuation, drop the
// articles a/an/the, collapse whitespace.
std::string normalize_answer(const std::string& text);

std::vector<std::string> normalized_words(const std::string& text);

// Unigram precision/recall F1 over normalized word multisets (clipped
// counts). Both-normalized-empty compares as 1.0, one empty as 0.0.
double rouge1_f1(const std::string& prediction, const std::string& reference);

// 1 iff the normalized strings are equal.
int exact_match(const std::string& prediction, const std::string& reference);

} // namespace sac
