#include <random>

#include <gtest/gtest.h>

#include "radeval/label_metrics.hpp"
#include "support/oracles.hpp"

using namespace radeval;
using namespace radeval::labels;

namespace {

LabelVector random_labels(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> st(0, 3);
    LabelVector v;
    for (Condition c : kAllConditions) v = v.with(c, static_cast<Status>(st(rng)));
    return v;
}

std::vector<int> as_ints(const LabelVector& v) {
    std::vector<int> out;
    for (auto s : v.statuses()) out.push_back(static_cast<int>(s));
    return out;
}

std::vector<int> class_indices(ClassSet set) {
    std::vector<int> out;
    for (Condition c : classes(set)) out.push_back(static_cast<int>(index_of(c)));
    return out;
}

}  // namespace

TEST(Binarize, Policies) {
    const auto v = LabelVector().with(Condition::Edema, Status::Uncertain).with(Condition::Fracture, Status::Positive);
    const auto neg = binarize(v, UncertainPolicy::AsNegative);
    const auto pos = binarize(v, UncertainPolicy::AsPositive);
    EXPECT_FALSE(neg[index_of(Condition::Edema)]);
    EXPECT_TRUE(pos[index_of(Condition::Edema)]);
    EXPECT_TRUE(neg[index_of(Condition::Fracture)]);
    EXPECT_EQ(neg.count(), 1u);
}

TEST(Binarize, AsPositiveDominatesBitwise) {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 500; ++i) {
        const auto v = random_labels(rng);
        const auto neg = binarize(v, UncertainPolicy::AsNegative);
        const auto pos = binarize(v, UncertainPolicy::AsPositive);
        EXPECT_EQ((neg & ~pos).count(), 0u);
    }
}

TEST(F1, IdentityWithEveryClassPresent) {
    std::vector<LabelVector> preds;
    for (Condition c : kAllConditions) preds.push_back(LabelVector().with(c, Status::Positive));
    for (auto policy : {UncertainPolicy::AsNegative, UncertainPolicy::AsPositive}) {
        for (auto set : {ClassSet::All14, ClassSet::Top5}) {
            const auto s = f1_scores(preds, preds, policy, set);
            EXPECT_DOUBLE_EQ(s.micro_f1, 1.0);
            EXPECT_DOUBLE_EQ(s.macro_f1, 1.0);
        }
    }
}

TEST(F1, HandComputedTwoClassView) {
    // Class A = Atelectasis: TP 2. Class B = Cardiomegaly: one FP, one FN.
    const auto pos = [](Condition c) { return LabelVector().with(c, Status::Positive); };
    const std::vector<LabelVector> preds = {pos(Condition::Atelectasis), pos(Condition::Atelectasis).with(Condition::Cardiomegaly, Status::Positive), LabelVector()};
    const std::vector<LabelVector> refs = {pos(Condition::Atelectasis), pos(Condition::Atelectasis), pos(Condition::Cardiomegaly)};
    const std::array<Condition, 2> view = {Condition::Atelectasis, Condition::Cardiomegaly};
    const auto s = f1_scores(preds, refs, UncertainPolicy::AsNegative, view);
    EXPECT_DOUBLE_EQ(s.macro_f1, 0.5);
    EXPECT_NEAR(s.micro_f1, 2.0 / 3.0, 1e-15);
}

TEST(F1, AllZerosScoreZero) {
    const std::vector<LabelVector> none(3);
    const auto s = f1_scores(none, none, UncertainPolicy::AsPositive, ClassSet::All14);
    EXPECT_DOUBLE_EQ(s.micro_f1, 0.0);
    EXPECT_DOUBLE_EQ(s.macro_f1, 0.0);
}

TEST(F1, Errors) {
    const std::vector<LabelVector> one(1), two(2), empty;
    try {
        f1_scores(one, two, UncertainPolicy::AsNegative, ClassSet::All14);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
    }
    EXPECT_THROW(f1_scores(empty, empty, UncertainPolicy::AsNegative, ClassSet::All14), Error);
}

TEST(F1, MatchesEnumerationOracle) {
    std::mt19937_64 rng(31);
    for (int panel = 0; panel < 100; ++panel) {
        const std::size_t n = 1 + rng() % 30;
        std::vector<LabelVector> preds, refs;
        std::vector<std::vector<int>> pi, ri;
        for (std::size_t i = 0; i < n; ++i) {
            preds.push_back(random_labels(rng));
            refs.push_back(random_labels(rng));
            pi.push_back(as_ints(preds.back()));
            ri.push_back(as_ints(refs.back()));
        }
        for (auto policy : {UncertainPolicy::AsNegative, UncertainPolicy::AsPositive}) {
            for (auto set : {ClassSet::All14, ClassSet::Top5}) {
                const auto got = f1_scores(preds, refs, policy, set);
                const auto want = oracle::label_f1(pi, ri, policy == UncertainPolicy::AsPositive, class_indices(set));
                EXPECT_NEAR(got.micro_f1, want.micro, 1e-12);
                EXPECT_NEAR(got.macro_f1, want.macro, 1e-12);
            }
        }
    }
}

TEST(F1, PermutationInvariant) {
    std::mt19937_64 rng(4);
    std::vector<LabelVector> preds, refs;
    for (int i = 0; i < 20; ++i) {
        preds.push_back(random_labels(rng));
        refs.push_back(random_labels(rng));
    }
    const auto before = f1_scores(preds, refs, UncertainPolicy::AsPositive, ClassSet::All14);
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<LabelVector> p2, r2;
    for (auto i : order) {
        p2.push_back(preds[i]);
        r2.push_back(refs[i]);
    }
    const auto after = f1_scores(p2, r2, UncertainPolicy::AsPositive, ClassSet::All14);
    EXPECT_DOUBLE_EQ(before.micro_f1, after.micro_f1);
    EXPECT_DOUBLE_EQ(before.macro_f1, after.macro_f1);
}

TEST(Surrogate, BasicCues) {
    const auto v = surrogate_label("Mild cardiomegaly. No pleural effusion. Possible left lower lobe pneumonia. "
                                   "Pneumothorax is not identified.");
    EXPECT_EQ(v[Condition::Cardiomegaly], Status::Positive);
    EXPECT_EQ(v[Condition::PleuralEffusion], Status::Negative);
    EXPECT_EQ(v[Condition::Pneumonia], Status::Uncertain);
    EXPECT_EQ(v[Condition::Pneumothorax], Status::Negative);
    EXPECT_EQ(v[Condition::Edema], Status::Blank);
}

TEST(Surrogate, StrongestMentionWins) {
    const auto v = surrogate_label("No edema. Interval development of edema.");
    EXPECT_EQ(v[Condition::Edema], Status::Positive);
}

TEST(Surrogate, NoFindingDroppedWhenConflicting) {
    const auto v = surrogate_label("No acute cardiopulmonary process. Small pleural effusion.");
    EXPECT_EQ(v[Condition::NoFinding], Status::Blank);
    EXPECT_EQ(v[Condition::PleuralEffusion], Status::Positive);
    EXPECT_TRUE(violations(v).empty());
}

TEST(Surrogate, WordBoundaries) {
    const auto v = surrogate_label("The pleural surfaces are smooth. Anterior mass effect absent.");
    EXPECT_EQ(v[Condition::PleuralOther], Status::Blank);
    EXPECT_EQ(v[Condition::LungLesion], Status::Positive);
}

TEST(Lexicon, JsonRoundTripAndOverrides) {
    const auto lx = Lexicon::defaults();
    EXPECT_EQ(json(lx).get<Lexicon>(), lx);
    const auto custom = json{{"keywords", {{"Edema", {"Interstitial Markings"}}}}}.get<Lexicon>();
    EXPECT_EQ(surrogate_label("Interstitial markings.", custom)[Condition::Edema], Status::Positive);
    EXPECT_THROW((json{{"keywords", {{"Pneumonitis", {"x"}}}}}.get<Lexicon>()), Error);
}

TEST(Sentences, SplitOnTerminalPunctuation) {
    EXPECT_EQ(split_sentences("A 3.2 cm mass. B! C? tail"), (std::vector<std::string>{"A 3.2 cm mass.", "B!", "C?", "tail"}));
}

TEST(Entities, F1) {
    const EntitySet a{{"Lung", EntityType::Anatomy}, {"opacity", EntityType::Observation}};
    const EntitySet b{{"lung", EntityType::Anatomy}, {"effusion", EntityType::Observation}};
    EXPECT_DOUBLE_EQ(entity_f1(a, b), 0.5);
    EXPECT_DOUBLE_EQ(entity_f1(a, a), 1.0);
    EXPECT_DOUBLE_EQ(entity_f1({}, {}), 1.0);
    EXPECT_DOUBLE_EQ(entity_f1(a, {}), 0.0);
    // Same text, different type: no match.
    EXPECT_DOUBLE_EQ(entity_f1({{"lung", EntityType::Observation}}, {{"lung", EntityType::Anatomy}}), 0.0);
    EXPECT_EQ(json(a).get<EntitySet>().items(), a.items());
}
