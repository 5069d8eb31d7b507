#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "radeval/core_model.hpp"

// Template engine that turns label vectors into synthetic findings text.
namespace radeval::synth {

inline constexpr std::string_view kSlot = "<condition>";

/// Number of case-insensitive "<condition>" slots in a template.
inline std::size_t count_slots(std::string_view tmpl) {
    const auto lower = text::to_lower(tmpl);
    std::size_t n = 0;
    for (auto pos = lower.find(kSlot); pos != std::string::npos; pos = lower.find(kSlot, pos + kSlot.size())) ++n;
    return n;
}

struct TemplateBank {
    std::vector<std::string> positive;
    std::vector<std::string> negative;
    std::vector<std::string> uncertain;
    std::vector<std::string> no_findings;
    std::vector<std::string> no_support_devices;
    std::vector<std::string> pleural_other_positive;
    std::vector<std::string> pleural_other_negative;
    std::vector<std::string> pleural_other_uncertain;
    /// Support Devices has no uncertain templates of its own; when empty the
    /// generic uncertain list is used.
    std::vector<std::string> support_devices_uncertain;

    const std::vector<std::string>& generic(Status s) const {
        switch (s) {
            case Status::Positive: return positive;
            case Status::Negative: return negative;
            default: return uncertain;
        }
    }

    /// Throws Validation when a list is empty or a slot count is wrong.
    void check() const {
        auto require = [](const std::vector<std::string>& list, const char* name, std::size_t slots, bool allow_empty) {
            if (list.empty() && !allow_empty) throw Error(ErrorCode::Validation, std::string("template list '") + name + "' is empty");
            for (const auto& t : list) {
                if (count_slots(t) != slots) {
                    throw Error(ErrorCode::Validation, std::string("template in '") + name + "' must contain " +
                                                           std::to_string(slots) + " slot(s): " + t);
                }
            }
        };
        require(positive, "positive", 1, false);
        require(negative, "negative", 1, false);
        require(uncertain, "uncertain", 1, false);
        require(no_findings, "no_findings", 0, false);
        require(no_support_devices, "no_support_devices", 0, false);
        require(pleural_other_positive, "pleural_other_positive", 0, false);
        require(pleural_other_negative, "pleural_other_negative", 0, false);
        require(pleural_other_uncertain, "pleural_other_uncertain", 0, false);
        require(support_devices_uncertain, "support_devices_uncertain", 0, true);
    }

    /// The bundled sentences, verbatim.
    static TemplateBank defaults() {
        TemplateBank b;
        b.positive = {
            "The radiograph reveals evidence of <condition>.",
            "The radiograph demonstrates areas consistent with <condition>.",
            "There are findings suggestive of <condition>.",
            "There is presence of <condition>.",
            "There is a positive finding of <condition>.",
            "The radiographic examination of the chest reveals the presence of <condition>.",
            "There is evidence of <condition>.",
            "<Condition> is present.",
        };
        b.negative = {
            "No evidence of <condition> is observed.",
            "<Condition> is not identified.",
            "The radiograph does not show any signs of <condition>.",
            "There is no indications of <condition> in the radiograph.",
            "No <condition> is identified in the examined region.",
            "No signs of <condition> is observed.",
            "The image does not conclusively indicate <condition>.",
        };
        b.uncertain = {
            "There is uncertainty regarding <condition>.",
            "The presence of <condition> is uncertain based on the current examination.",
            "The image shows uncertainty in <condition>.",
        };
        b.no_findings = {
            "The radiographic examination of the chest reveals no significant abnormalities or pathologies.",
            "The radiographic examination of the patient does not reveal any significant abnormal findings.",
        };
        b.no_support_devices = {
            "There is no evidence of any support devices in the chest area.",
            "There are no support devices seen in the current study.",
            "There are no support devices in place.",
        };
        b.pleural_other_positive = {
            "There are some pleural abnormalities that do not fit into the common categories of pleural diseases.",
            "Other pleural abnormalities are also observed.",
        };
        b.pleural_other_negative = {
            "No other pleural abnormalities were detected in the radiograph.",
            "There are no findings related to other pleural abnormalities.",
        };
        b.pleural_other_uncertain = {
            "There are ambiguous findings related to the pleura.",
            "There is no visible pleural abnormality, although the image does not completely exclude all "
            "potential pleural conditions.",
        };
        return b;
    }

    bool operator==(const TemplateBank&) const = default;
};

inline void to_json(json& j, const TemplateBank& b) {
    j = {
        {"positive", b.positive},
        {"negative", b.negative},
        {"uncertain", b.uncertain},
        {"no_findings", b.no_findings},
        {"no_support_devices", b.no_support_devices},
        {"pleural_other_positive", b.pleural_other_positive},
        {"pleural_other_negative", b.pleural_other_negative},
        {"pleural_other_uncertain", b.pleural_other_uncertain},
        {"support_devices_uncertain", b.support_devices_uncertain},
    };
}

inline void from_json(const json& j, TemplateBank& b) {
    if (!j.is_object()) throw Error(ErrorCode::Validation, "template bank must be an object");
    auto list = [&](const char* key, bool optional) {
        if (!j.contains(key)) {
            if (optional) return std::vector<std::string>{};
            throw Error(ErrorCode::Validation, std::string("template bank is missing '") + key + "'");
        }
        return j.at(key).get<std::vector<std::string>>();
    };
    TemplateBank out;
    out.positive = list("positive", false);
    out.negative = list("negative", false);
    out.uncertain = list("uncertain", false);
    out.no_findings = list("no_findings", false);
    out.no_support_devices = list("no_support_devices", false);
    out.pleural_other_positive = list("pleural_other_positive", false);
    out.pleural_other_negative = list("pleural_other_negative", false);
    out.pleural_other_uncertain = list("pleural_other_uncertain", false);
    out.support_devices_uncertain = list("support_devices_uncertain", true);
    out.check();
    b = std::move(out);
}

/// Substitutes the slot; capitalizes the first letter when the slot opens the sentence.
inline std::string fill_template(std::string_view tmpl, std::string_view condition) {
    const auto lower = text::to_lower(tmpl);
    const auto pos = lower.find(kSlot);
    if (pos == std::string::npos) return std::string(tmpl);
    std::string filled(condition);
    if (pos == 0 && !filled.empty()) filled[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(filled[0])));
    std::string out(tmpl.substr(0, pos));
    out += filled;
    out += tmpl.substr(pos + kSlot.size());
    return out;
}

inline std::string render_finding(std::string_view condition, Status status, std::size_t template_index,
                                  const TemplateBank& bank) {
    if (status == Status::Blank) throw Error(ErrorCode::InvalidArgument, "Blank status has no templates");
    const auto& list = bank.generic(status);
    if (template_index >= list.size()) {
        throw Error(ErrorCode::IndexOutOfRange, "template index " + std::to_string(template_index) + " >= " +
                                                    std::to_string(list.size()));
    }
    return fill_template(list[template_index], condition);
}

/// The list a condition/status pair draws from, and whether it has a slot.
struct TemplateSource {
    const std::vector<std::string>* list = nullptr;
    bool slotted = true;
};

inline TemplateSource template_source(Condition c, Status s, const TemplateBank& bank) {
    if (c == Condition::NoFinding && s == Status::Positive) return {&bank.no_findings, false};
    if (c == Condition::SupportDevices && s == Status::Negative) return {&bank.no_support_devices, false};
    if (c == Condition::SupportDevices && s == Status::Uncertain && !bank.support_devices_uncertain.empty()) {
        return {&bank.support_devices_uncertain, false};
    }
    if (c == Condition::PleuralOther) {
        switch (s) {
            case Status::Positive: return {&bank.pleural_other_positive, false};
            case Status::Negative: return {&bank.pleural_other_negative, false};
            default: return {&bank.pleural_other_uncertain, false};
        }
    }
    return {&bank.generic(s), true};
}

/// splitmix64 finalizer; portable, so template choices do not depend on the
/// standard library's distribution implementation.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Template index for one condition: a pure function of (seed, condition).
inline std::size_t select_template(std::uint64_t seed, Condition c, std::size_t choices) {
    const std::uint64_t h = mix64(mix64(seed) ^ (static_cast<std::uint64_t>(index_of(c)) + 1));
    return static_cast<std::size_t>(h % choices);
}

/// Lowercase surface form of a condition name as it appears in sentences.
inline std::string surface_name(Condition c) { return text::to_lower(condition_name(c)); }

/// One sentence per non-Blank condition in canonical order, joined by one
/// space. An all-Blank vector yields an empty findings string.
inline Report synthesize_report(const LabelVector& labels, std::uint64_t seed,
                                const TemplateBank& bank = TemplateBank::defaults(), std::string id = {}) {
    std::vector<std::string> sentences;
    for (Condition c : kAllConditions) {
        const Status s = labels[c];
        if (s == Status::Blank) continue;
        const auto src = template_source(c, s, bank);
        const auto& tmpl = (*src.list)[select_template(seed, c, src.list->size())];
        sentences.push_back(src.slotted ? fill_template(tmpl, surface_name(c)) : tmpl);
    }
    Report r;
    r.id = id.empty() ? "synthetic-" + std::to_string(seed) : std::move(id);
    r.findings = text::join(sentences, " ");
    r.raw_text = *r.findings;
    r.source = Source::Synthetic;
    return r;
}

}  // namespace radeval::synth
