#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "radeval/error.hpp"
#include "radeval/text.hpp"

namespace radeval::lexical {

struct TokenSequence {
    std::vector<std::string> tokens;

    std::size_t size() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
    bool operator==(const TokenSequence&) const = default;
};

inline bool is_split_punct(char c) {
    switch (c) {
        case '.': case ',': case ':': case ';': case '!': case '?': case '(': case ')': case '/':
            return true;
        default:
            return false;
    }
}

/// Lowercases, splits on whitespace, and emits each of . , : ; ! ? ( ) / as its own token.
inline TokenSequence tokenize(std::string_view s) {
    TokenSequence out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.tokens.push_back(std::move(cur));
        cur.clear();
    };
    for (char c : s) {
        if (text::is_space(c)) {
            flush();
        } else if (is_split_punct(c)) {
            flush();
            out.tokens.emplace_back(1, c);
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    flush();
    return out;
}

using NgramCounts = std::map<std::vector<std::string>, int>;

inline NgramCounts ngram_counts(const TokenSequence& seq, std::size_t n) {
    NgramCounts counts;
    if (seq.size() < n) return counts;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
        ++counts[std::vector<std::string>(seq.tokens.begin() + i, seq.tokens.begin() + i + n)];
    }
    return counts;
}

/// Clipped matches and candidate total for n-grams of one order.
struct NgramPrecision {
    int matched = 0;
    int total = 0;
};

inline NgramPrecision clipped_precision(const TokenSequence& candidate, const TokenSequence& reference, std::size_t n) {
    NgramPrecision p;
    const auto ref = ngram_counts(reference, n);
    for (const auto& [gram, count] : ngram_counts(candidate, n)) {
        p.total += count;
        if (auto it = ref.find(gram); it != ref.end()) p.matched += std::min(count, it->second);
    }
    return p;
}

/// Sentence BLEU without smoothing: geometric mean of clipped precisions for
/// orders 1..max_n times the brevity penalty. Any zero precision gives 0.
/// Orders longer than the candidate have no n-grams and are left out of the
/// mean (effective order), so a short sentence still scores 1 against itself.
inline double bleu(const TokenSequence& candidate, const TokenSequence& reference, int max_n = 4) {
    if (reference.empty()) throw Error(ErrorCode::EmptyReference, "BLEU needs a nonempty reference");
    if (max_n < 1 || max_n > 4) throw Error(ErrorCode::InvalidArgument, "BLEU order must be in 1..4");
    if (candidate.empty()) return 0.0;
    const int orders = std::min<int>(max_n, static_cast<int>(candidate.size()));
    double log_sum = 0.0;
    for (int n = 1; n <= orders; ++n) {
        const auto p = clipped_precision(candidate, reference, static_cast<std::size_t>(n));
        if (p.matched == 0) return 0.0;
        log_sum += std::log(static_cast<double>(p.matched) / p.total);
    }
    const double c = static_cast<double>(candidate.size());
    const double r = static_cast<double>(reference.size());
    const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum / orders);
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f = 0.0;
};

/// Token-level ROUGE-L with beta = 1.
inline RougeScore rouge_l(const TokenSequence& candidate, const TokenSequence& reference) {
    if (candidate.empty() || reference.empty()) throw Error(ErrorCode::EmptyInput, "ROUGE-L needs nonempty sequences");
    const double lcs = static_cast<double>(lcs_length(candidate.tokens, reference.tokens));
    RougeScore s;
    s.precision = lcs / static_cast<double>(candidate.size());
    s.recall = lcs / static_cast<double>(reference.size());
    s.f = lcs == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

}  // namespace radeval::lexical
