#pragma once

#include <algorithm>
#include <array>
#include <bitset>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "radeval/core_model.hpp"
#include "radeval/text.hpp"

// Label-based factuality metrics: CheXbert-style micro/macro F1 under both
// "uncertain" policies, entity-overlap F1, and a rule-based surrogate labeler.
namespace radeval::labels {

enum class UncertainPolicy { AsNegative, AsPositive };

inline std::string_view to_string(UncertainPolicy p) {
    return p == UncertainPolicy::AsNegative ? "uncertain_as_negative" : "uncertain_as_positive";
}

enum class ClassSet { All14, Top5 };

inline constexpr std::array<Condition, 5> kTop5 = {
    Condition::Atelectasis, Condition::Cardiomegaly, Condition::Consolidation,
    Condition::Edema,       Condition::PleuralEffusion,
};

inline std::span<const Condition> classes(ClassSet set) {
    if (set == ClassSet::Top5) return kTop5;
    return kAllConditions;
}

using BinaryLabels = std::bitset<kConditionCount>;

inline BinaryLabels binarize(const LabelVector& labels, UncertainPolicy policy) {
    BinaryLabels bits;
    for (Condition c : kAllConditions) {
        const Status s = labels[c];
        bits[index_of(c)] = s == Status::Positive || (s == Status::Uncertain && policy == UncertainPolicy::AsPositive);
    }
    return bits;
}

struct ClassCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;

    /// 0 when the class never occurs on either side.
    double f1() const {
        const int denom = 2 * tp + fp + fn;
        return denom == 0 ? 0.0 : 2.0 * tp / denom;
    }
};

struct F1Scores {
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    std::vector<std::pair<Condition, ClassCounts>> per_class;
};

inline F1Scores f1_scores(std::span<const LabelVector> preds, std::span<const LabelVector> refs,
                          UncertainPolicy policy, std::span<const Condition> class_subset) {
    if (preds.size() != refs.size()) {
        throw Error(ErrorCode::LengthMismatch, std::to_string(preds.size()) + " predictions vs " +
                                                   std::to_string(refs.size()) + " references");
    }
    if (preds.empty()) throw Error(ErrorCode::EmptyInput, "F1 needs at least one report");
    if (class_subset.empty()) throw Error(ErrorCode::InvalidArgument, "F1 needs at least one class");

    std::array<ClassCounts, kConditionCount> counts{};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto p = binarize(preds[i], policy);
        const auto r = binarize(refs[i], policy);
        for (Condition c : class_subset) {
            const auto k = index_of(c);
            auto& cc = counts[k];
            if (p[k] && r[k]) ++cc.tp;
            else if (p[k]) ++cc.fp;
            else if (r[k]) ++cc.fn;
        }
    }

    F1Scores out;
    ClassCounts pooled;
    double macro_sum = 0.0;
    for (Condition c : class_subset) {
        const auto& cc = counts[index_of(c)];
        pooled.tp += cc.tp;
        pooled.fp += cc.fp;
        pooled.fn += cc.fn;
        macro_sum += cc.f1();
        out.per_class.emplace_back(c, cc);
    }
    out.micro_f1 = pooled.f1();
    out.macro_f1 = macro_sum / static_cast<double>(class_subset.size());
    return out;
}

inline F1Scores f1_scores(std::span<const LabelVector> preds, std::span<const LabelVector> refs,
                          UncertainPolicy policy, ClassSet set) {
    return f1_scores(preds, refs, policy, classes(set));
}

// ---------------------------------------------------------------------------
// Surrogate labeler (keyword + negation/uncertainty cues). This is NOT
// CheXbert; its contract is the round trip against the bundled templates.

struct Lexicon {
    std::array<std::vector<std::string>, kConditionCount> keywords;
    /// Cues that negate a keyword when they appear before it in the sentence.
    std::vector<std::string> negation_cues;
    /// Cues that negate a keyword when they follow it ("X is not identified").
    std::vector<std::string> post_negation_cues;
    /// Any of these in a sentence makes every mention in it Uncertain.
    std::vector<std::string> uncertainty_cues;

    static Lexicon defaults() {
        Lexicon lx;
        auto set = [&](Condition c, std::vector<std::string> words) { lx.keywords[index_of(c)] = std::move(words); };
        set(Condition::Atelectasis, {"atelectasis", "atelectatic"});
        set(Condition::Cardiomegaly, {"cardiomegaly", "enlarged heart", "heart is enlarged"});
        set(Condition::Consolidation, {"consolidation", "consolidations", "consolidative"});
        set(Condition::Edema, {"edema", "vascular congestion", "pulmonary congestion"});
        set(Condition::EnlargedCardiomediastinum,
            {"enlarged cardiomediastinum", "widened mediastinum", "mediastinal widening"});
        set(Condition::Fracture, {"fracture", "fractures"});
        set(Condition::LungLesion, {"lung lesion", "nodule", "nodules", "mass"});
        set(Condition::LungOpacity, {"lung opacity", "opacity", "opacities", "opacification"});
        set(Condition::NoFinding, {"no finding", "no significant abnormalities",
                                   "not reveal any significant abnormal findings", "no acute cardiopulmonary process"});
        set(Condition::PleuralEffusion, {"pleural effusion", "pleural effusions", "effusion", "effusions"});
        set(Condition::PleuralOther, {"pleural others", "pleural abnormalities", "pleural abnormality", "pleura",
                                      "pleural thickening"});
        set(Condition::Pneumonia, {"pneumonia"});
        set(Condition::Pneumothorax, {"pneumothorax", "pneumothoraces"});
        set(Condition::SupportDevices, {"support devices", "support device", "tube", "catheter", "pacemaker"});
        lx.negation_cues = {"no", "not", "without", "negative for", "free of"};
        lx.post_negation_cues = {"is not", "are not", "was not", "were not"};
        lx.uncertainty_cues = {"may",          "possible",  "possibly",       "uncertain",
                               "uncertainty",  "cannot exclude", "cannot be excluded", "ambiguous",
                               "not completely exclude", "questionable"};
        return lx;
    }

    bool operator==(const Lexicon&) const = default;
};

inline void to_json(json& j, const Lexicon& lx) {
    json kw = json::object();
    for (Condition c : kAllConditions) kw[std::string(condition_name(c))] = lx.keywords[index_of(c)];
    j = {{"keywords", kw},
         {"negation_cues", lx.negation_cues},
         {"post_negation_cues", lx.post_negation_cues},
         {"uncertainty_cues", lx.uncertainty_cues}};
}

/// Keyword lists for conditions not named keep their defaults; unknown
/// condition names are rejected.
inline void from_json(const json& j, Lexicon& lx) {
    if (!j.is_object()) throw Error(ErrorCode::Validation, "lexicon must be an object");
    Lexicon out = Lexicon::defaults();
    if (auto it = j.find("keywords"); it != j.end()) {
        for (const auto& [name, words] : it->items()) {
            const auto c = parse_condition(name);
            if (!c) throw Error(ErrorCode::Validation, "unknown condition in lexicon: " + name);
            auto list = words.get<std::vector<std::string>>();
            for (auto& w : list) w = text::to_lower(text::trim(w));
            out.keywords[index_of(*c)] = std::move(list);
        }
    }
    auto cues = [&](const char* key, std::vector<std::string>& dst) {
        if (auto it = j.find(key); it != j.end()) {
            dst = it->get<std::vector<std::string>>();
            for (auto& w : dst) w = text::to_lower(text::trim(w));
        }
    };
    cues("negation_cues", out.negation_cues);
    cues("post_negation_cues", out.post_negation_cues);
    cues("uncertainty_cues", out.uncertainty_cues);
    lx = std::move(out);
}

/// Splits on '.', '!' or '?' followed by whitespace or end of text.
inline std::vector<std::string> split_sentences(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == s.size() || text::is_space(s[i + 1]))) {
            auto piece = text::trim(s.substr(start, i + 1 - start));
            if (!piece.empty()) out.emplace_back(piece);
            start = i + 1;
        }
    }
    if (auto tail = text::trim(s.substr(std::min(start, s.size()))); !tail.empty()) out.emplace_back(tail);
    return out;
}

namespace detail {

inline bool any_cue(std::string_view s, const std::vector<std::string>& cues) {
    return std::any_of(cues.begin(), cues.end(),
                       [&](const std::string& cue) { return text::find_word(s, cue) != std::string_view::npos; });
}

/// Strength used when merging mentions across sentences.
inline int rank(Status s) {
    switch (s) {
        case Status::Positive: return 3;
        case Status::Uncertain: return 2;
        case Status::Negative: return 1;
        case Status::Blank: return 0;
    }
    return 0;
}

}  // namespace detail

/// Status of one condition in one lowercased sentence, Blank when unmentioned.
inline Status classify_mention(std::string_view sentence, const std::vector<std::string>& keywords,
                               const Lexicon& lx) {
    std::size_t best = std::string_view::npos;
    std::size_t best_end = 0;
    for (const auto& kw : keywords) {
        const auto pos = text::find_word(sentence, kw);
        if (pos < best) {
            best = pos;
            best_end = pos + kw.size();
        }
    }
    if (best == std::string_view::npos) return Status::Blank;
    if (detail::any_cue(sentence, lx.uncertainty_cues)) return Status::Uncertain;
    if (detail::any_cue(sentence.substr(0, best), lx.negation_cues)) return Status::Negative;
    if (detail::any_cue(sentence.substr(best_end), lx.post_negation_cues)) return Status::Negative;
    return Status::Positive;
}

/// Per sentence and condition: a keyword hit is Positive, Uncertain when the
/// sentence carries an uncertainty cue, Negative when a negation cue precedes
/// it (or a post-negation cue follows it). Across sentences the strongest
/// status wins (Positive > Uncertain > Negative). "No Finding" is dropped when
/// any other condition ends up Positive.
inline LabelVector surrogate_label(std::string_view findings, const Lexicon& lx = Lexicon::defaults()) {
    LabelVector out;
    for (const auto& sentence : split_sentences(text::to_lower(findings))) {
        for (Condition c : kAllConditions) {
            const Status s = classify_mention(sentence, lx.keywords[index_of(c)], lx);
            if (detail::rank(s) > detail::rank(out[c])) out = out.with(c, s);
        }
    }
    if (out[Condition::NoFinding] == Status::Positive && !violations(out).empty()) {
        out = out.with(Condition::NoFinding, Status::Blank);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Entity overlap

enum class EntityType { Anatomy, Observation };

inline std::string_view to_string(EntityType t) { return t == EntityType::Anatomy ? "Anatomy" : "Observation"; }

inline EntityType parse_entity_type(std::string_view s) {
    if (text::iequals(s, "Anatomy") || text::iequals(s, "ANAT")) return EntityType::Anatomy;
    if (text::iequals(s, "Observation") || text::iequals(s, "OBS")) return EntityType::Observation;
    throw Error(ErrorCode::Validation, "unknown entity type: " + std::string(s));
}

struct Entity {
    std::string text;
    EntityType type;

    auto operator<=>(const Entity&) const = default;
};

/// Set of (lowercased text, type) pairs.
class EntitySet {
  public:
    EntitySet() = default;
    EntitySet(std::initializer_list<Entity> items) {
        for (const auto& e : items) insert(e.text, e.type);
    }

    void insert(std::string_view entity_text, EntityType type) {
        entities_.insert(Entity{text::to_lower(text::trim(entity_text)), type});
    }

    bool contains(const Entity& e) const { return entities_.count(e) != 0; }
    std::size_t size() const { return entities_.size(); }
    bool empty() const { return entities_.empty(); }
    const std::set<Entity>& items() const { return entities_; }

  private:
    std::set<Entity> entities_;
};

inline void from_json(const json& j, EntitySet& set) {
    if (!j.is_array()) throw Error(ErrorCode::Validation, "entities must be an array");
    EntitySet out;
    for (const auto& e : j) {
        out.insert(e.at("text").get<std::string>(), parse_entity_type(e.at("type").get<std::string>()));
    }
    set = std::move(out);
}

inline void to_json(json& j, const EntitySet& set) {
    j = json::array();
    for (const auto& e : set.items()) j.push_back({{"text", e.text}, {"type", std::string(to_string(e.type))}});
}

/// F1 over exact (text, type) matches; two empty sets agree perfectly.
inline double entity_f1(const EntitySet& candidate, const EntitySet& reference) {
    if (candidate.empty() && reference.empty()) return 1.0;
    std::size_t overlap = 0;
    for (const auto& e : candidate.items()) overlap += reference.contains(e) ? 1 : 0;
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / static_cast<double>(candidate.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(reference.size());
    return 2.0 * p * r / (p + r);
}

}  // namespace radeval::labels
