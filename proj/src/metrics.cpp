#include "sac/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <unordered_map>

namespace sac {

std::vector<std::string> normalized_words(const std::string& text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (unsigned char c : text) {
        if (std::ispunct(c)) continue;
        cleaned += static_cast<char>(std::tolower(c));
    }
    std::istringstream in(cleaned);
    std::vector<std::string> words;
    std::string w;
    while (in >> w)
        if (w != "a" && w != "an" && w != "the") words.push_back(w);
    return words;
}

std::string normalize_answer(const std::string& text) {
    auto words = normalized_words(text);
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += ' ';
        out += words[i];
    }
    return out;
}

double rouge1_f1(const std::string& prediction, const std::string& reference) {
    auto pred = normalized_words(prediction);
    auto ref = normalized_words(reference);
    if (pred.empty() && ref.empty()) return 1.0;
    if (pred.empty() || ref.empty()) return 0.0;
    std::unordered_map<std::string, int> ref_counts;
    for (auto& w : ref) ref_counts[w]++;
    int overlap = 0;
    for (auto& w : pred) {
        auto it = ref_counts.find(w);
        if (it != ref_counts.end() && it->second > 0) {
            ++overlap;
            --it->second;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = double(overlap) / pred.size();
    const double recall = double(overlap) / ref.size();
    return 2.0 * precision * recall / (precision + recall);
}

int exact_match(const std::string& prediction, const std::string& reference) {
    return normalize_answer(prediction) == normalize_answer(reference) ? 1 : 0;
}

} // namespace sac
