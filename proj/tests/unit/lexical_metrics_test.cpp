#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "radeval/lexical_metrics.hpp"
#include "support/lexical_table.hpp"
#include "support/oracles.hpp"

using namespace radeval;
using namespace radeval::lexical;

TEST(Tokenize, SplitsPunctuationAndLowercases) {
    EXPECT_EQ(tokenize("No pleural effusion.").tokens, (std::vector<std::string>{"no", "pleural", "effusion", "."}));
    EXPECT_TRUE(tokenize("").empty());
    EXPECT_EQ(tokenize("heart size: normal").tokens, (std::vector<std::string>{"heart", "size", ":", "normal"}));
    EXPECT_EQ(tokenize("(a/b)?").tokens, (std::vector<std::string>{"(", "a", "/", "b", ")", "?"}));
    for (const auto& t : tokenize("  a   b\t\nc ").tokens) EXPECT_FALSE(t.empty());
}

TEST(Bleu, HandTable) {
    for (const auto& c : lexical_table::kCases) {
        if (c.metric != lexical_table::Metric::Bleu) continue;
        EXPECT_NEAR(bleu(tokenize(c.candidate), tokenize(c.reference), c.max_n), c.expected, 1e-9)
            << c.candidate << " | " << c.reference << " n=" << c.max_n;
    }
}

TEST(Rouge, HandTable) {
    for (const auto& c : lexical_table::kCases) {
        if (c.metric != lexical_table::Metric::RougeF) continue;
        EXPECT_NEAR(rouge_l(tokenize(c.candidate), tokenize(c.reference)).f, c.expected, 1e-9)
            << c.candidate << " | " << c.reference;
    }
}

TEST(Rouge, PrecisionRecallOfSubsequence) {
    const auto s = rouge_l(tokenize("the cat"), tokenize("the cat sat"));
    EXPECT_DOUBLE_EQ(s.precision, 1.0);
    EXPECT_NEAR(s.recall, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(s.f, 0.8, 1e-12);
}

TEST(Errors, EmptyInputs) {
    try {
        bleu(tokenize("a"), tokenize(""));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyReference);
    }
    EXPECT_THROW(bleu(tokenize("a"), tokenize("a"), 5), Error);
    EXPECT_DOUBLE_EQ(bleu(tokenize(""), tokenize("a")), 0.0);
    try {
        rouge_l(tokenize(""), tokenize("a"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
    }
}

namespace {

std::vector<std::string> random_tokens(std::mt19937_64& rng, std::size_t max_len, int vocab) {
    std::uniform_int_distribution<std::size_t> len(1, max_len);
    std::uniform_int_distribution<int> word(0, vocab - 1);
    std::vector<std::string> out(len(rng));
    for (auto& w : out) w = std::string(1, static_cast<char>('a' + word(rng)));
    return out;
}

}  // namespace

TEST(Properties, MatchesBruteForceOracle) {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 50; ++i) {
        const auto a = random_tokens(rng, 12, 5);
        const auto b = random_tokens(rng, 12, 5);
        const TokenSequence ta{a}, tb{b};
        for (int n = 1; n <= 4; ++n) EXPECT_NEAR(bleu(ta, tb, n), oracle::bleu(a, b, n), 1e-12);
        const double lcs = static_cast<double>(oracle::lcs_enumerate(a, b));
        const auto s = rouge_l(ta, tb);
        EXPECT_DOUBLE_EQ(s.precision, lcs / a.size());
        EXPECT_DOUBLE_EQ(s.recall, lcs / b.size());
    }
}

TEST(Properties, IdentityScoresOne) {
    std::mt19937_64 rng(8);
    for (int i = 0; i < 50; ++i) {
        const TokenSequence t{random_tokens(rng, 15, 6)};
        for (int n = 1; n <= 4; ++n) EXPECT_DOUBLE_EQ(bleu(t, t, n), 1.0);
        EXPECT_DOUBLE_EQ(rouge_l(t, t).f, 1.0);
    }
}

TEST(Properties, LcsSymmetryAndSwap) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 50; ++i) {
        const TokenSequence a{random_tokens(rng, 10, 4)}, b{random_tokens(rng, 10, 4)};
        EXPECT_EQ(lcs_length(a.tokens, b.tokens), lcs_length(b.tokens, a.tokens));
        const auto ab = rouge_l(a, b), ba = rouge_l(b, a);
        EXPECT_DOUBLE_EQ(ab.precision, ba.recall);
        EXPECT_DOUBLE_EQ(ab.recall, ba.precision);
    }
}

TEST(Properties, AppendingAbsentTokensNeverRaisesPrecision) {
    std::mt19937_64 rng(10);
    for (int i = 0; i < 50; ++i) {
        TokenSequence c{random_tokens(rng, 8, 4)};
        const TokenSequence r{random_tokens(rng, 8, 4)};
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto before = clipped_precision(c, r, n);
            TokenSequence longer = c;
            longer.tokens.push_back("zz");
            const auto after = clipped_precision(longer, r, n);
            if (before.total > 0) {
                EXPECT_LE(static_cast<double>(after.matched) / after.total,
                          static_cast<double>(before.matched) / before.total);
            }
        }
    }
}

TEST(Properties, ScoresInUnitInterval) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 100; ++i) {
        const TokenSequence a{random_tokens(rng, 10, 3)}, b{random_tokens(rng, 10, 3)};
        for (int n = 1; n <= 4; ++n) {
            const double s = bleu(a, b, n);
            EXPECT_GE(s, 0.0);
            EXPECT_LE(s, 1.0);
        }
        const auto r = rouge_l(a, b);
        EXPECT_GE(r.f, 0.0);
        EXPECT_LE(r.f, 1.0);
    }
}
