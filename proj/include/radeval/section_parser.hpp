#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "radeval/core_model.hpp"
#include "radeval/prompt.hpp"
#include "radeval/text.hpp"

namespace radeval::sections {

/// Header aliases per canonical section, plus "other" headers (COMPARISON,
/// TECHNIQUE, ...) that only terminate the preceding section. Aliases are
/// stored uppercase and matched case-sensitively when followed by ':'.
class HeaderMap {
  public:
    using AliasLists = std::array<std::vector<std::string>, 4>;

    HeaderMap(AliasLists canonical, std::vector<std::string> other)
        : canonical_(std::move(canonical)), other_(std::move(other)) {
        std::set<std::string> seen;
        auto normalize_list = [&](std::vector<std::string>& list) {
            for (auto& alias : list) {
                alias = text::to_upper(text::trim(alias));
                if (alias.empty()) throw Error(ErrorCode::Validation, "empty header alias");
                if (alias.find(':') != std::string::npos)
                    throw Error(ErrorCode::Validation, "header alias must not contain ':' (" + alias + ")");
                if (!seen.insert(alias).second)
                    throw Error(ErrorCode::Validation, "header alias listed twice: " + alias);
            }
        };
        for (auto& list : canonical_) normalize_list(list);
        normalize_list(other_);
        for (std::size_t s = 0; s < canonical_.size(); ++s) {
            for (const auto& alias : canonical_[s]) ordered_.push_back({alias, static_cast<int>(s)});
        }
        for (const auto& alias : other_) ordered_.push_back({alias, -1});
        // Longest alias first so "REASON FOR EXAMINATION" beats "REASON FOR EXAM".
        std::stable_sort(ordered_.begin(), ordered_.end(),
                         [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
    }

    static HeaderMap defaults() {
        return HeaderMap(
            {{
                {"EXAMINATION", "EXAM", "TYPE OF EXAMINATION", "STUDY", "PROCEDURE"},
                {"INDICATION", "INDICATIONS", "HISTORY", "CLINICAL HISTORY", "CLINICAL INDICATION",
                 "CLINICAL INFORMATION", "REASON FOR STUDY", "REASON FOR EXAM", "REASON FOR EXAMINATION"},
                {"FINDINGS", "FINDING"},
                {"IMPRESSION", "IMPRESSIONS", "CONCLUSION", "CONCLUSIONS"},
            }},
            {"COMPARISON", "COMPARISONS", "TECHNIQUE", "NOTIFICATION", "RECOMMENDATION", "RECOMMENDATIONS",
             "RECOMMENDATION(S)", "WET READ", "ADDENDUM"});
    }

    const std::vector<std::string>& aliases(Section s) const { return canonical_[static_cast<std::size_t>(s)]; }
    const std::vector<std::string>& other() const { return other_; }

    /// (alias, section index or -1 for "other"), longest alias first.
    const std::vector<std::pair<std::string, int>>& ordered() const { return ordered_; }

    bool operator==(const HeaderMap& o) const { return canonical_ == o.canonical_ && other_ == o.other_; }

  private:
    AliasLists canonical_;
    std::vector<std::string> other_;
    std::vector<std::pair<std::string, int>> ordered_;
};

inline void to_json(json& j, const HeaderMap& h) {
    j = json::object();
    for (Section s : kAllSections) j[std::string(section_key(s))] = h.aliases(s);
    j["OTHER"] = h.other();
}

/// Missing keys fall back to the compiled-in defaults.
inline HeaderMap header_map_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::Validation, "header map must be an object");
    const auto base = HeaderMap::defaults();
    HeaderMap::AliasLists lists;
    for (Section s : kAllSections) {
        const std::string key(section_key(s));
        lists[static_cast<std::size_t>(s)] =
            j.contains(key) ? j.at(key).get<std::vector<std::string>>() : base.aliases(s);
    }
    auto other = j.contains("OTHER") ? j.at("OTHER").get<std::vector<std::string>>() : base.other();
    return HeaderMap(std::move(lists), std::move(other));
}

struct HeaderHit {
    std::size_t start = 0;       // first character of the alias
    std::size_t body_start = 0;  // first character after the ':'
    int section = -1;            // canonical section index, -1 for "other"
};

/// Matches a header (alias, optional spaces, ':') at `pos`, which must sit at
/// a word boundary.
inline std::optional<HeaderHit> match_header_at(std::string_view s, std::size_t pos, const HeaderMap& headers) {
    if (pos > 0 && text::is_word_char(s[pos - 1])) return std::nullopt;
    for (const auto& [alias, section] : headers.ordered()) {
        if (s.compare(pos, alias.size(), alias) != 0) continue;
        std::size_t p = pos + alias.size();
        while (p < s.size() && (s[p] == ' ' || s[p] == '\t')) ++p;
        if (p < s.size() && s[p] == ':') return HeaderHit{pos, p + 1, section};
    }
    return std::nullopt;
}

inline std::vector<HeaderHit> find_headers(std::string_view s, const HeaderMap& headers) {
    std::vector<HeaderHit> hits;
    for (std::size_t pos = 0; pos < s.size();) {
        if (auto hit = match_header_at(s, pos, headers)) {
            hits.push_back(*hit);
            pos = hit->body_start;
        } else {
            ++pos;
        }
    }
    return hits;
}

/// Line-ending, whitespace and hard-wrap cleanup. Wrapped lines are joined
/// with one space unless the next line opens with a header.
inline std::string normalize(std::string_view raw, const HeaderMap& headers = HeaderMap::defaults()) {
    std::string out;
    std::string line;
    auto flush = [&]() {
        const auto trimmed = std::string(text::trim(line));
        line.clear();
        if (trimmed.empty()) return;
        if (!out.empty()) out.push_back(match_header_at(trimmed, 0, headers) ? '\n' : ' ');
        out += trimmed;
    };
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const char c = raw[i];
        if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < raw.size() && raw[i + 1] == '\n') ++i;
            flush();
        } else if (c == ' ' || c == '\t') {
            if (!line.empty() && line.back() != ' ') line.push_back(' ');
        } else {
            line.push_back(c);
        }
    }
    flush();
    return out;
}

/// Length of a leading list marker ("1. ", "2) ", "- ", "* ", "• ") in `body`, or 0.
inline std::size_t list_marker_length(std::string_view body) {
    std::size_t p = 0;
    if (body.substr(0, 3) == "\xE2\x80\xA2") {
        p = 3;
    } else if (!body.empty() && (body[0] == '-' || body[0] == '*')) {
        p = 1;
    } else {
        while (p < body.size() && p < 2 && std::isdigit(static_cast<unsigned char>(body[p]))) ++p;
        if (p == 0 || p >= body.size() || (body[p] != '.' && body[p] != ')')) return 0;
        ++p;
    }
    if (p >= body.size() || body[p] != ' ') return 0;
    while (p < body.size() && body[p] == ' ') ++p;
    return p;
}

inline std::string_view strip_list_markers(std::string_view body) {
    while (auto n = list_marker_length(body)) body = text::trim(body.substr(n));
    return body;
}

/// Rule-based section extraction over normalized text. Each canonical
/// section takes the text up to the next recognized header; the first
/// occurrence of a section wins. Throws NoSectionsFound when no canonical
/// header is present.
inline Report extract_sections(std::string_view normalized, const HeaderMap& headers = HeaderMap::defaults(),
                               std::string id = "report") {
    const auto hits = find_headers(normalized, headers);
    Report report;
    report.id = std::move(id);
    report.raw_text = std::string(normalized);
    report.source = Source::RuleExtracted;

    std::array<bool, 4> claimed{};
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (hits[i].section < 0) continue;
        const auto idx = static_cast<std::size_t>(hits[i].section);
        if (claimed[idx]) continue;
        claimed[idx] = true;
        const std::size_t end = i + 1 < hits.size() ? hits[i + 1].start : normalized.size();
        const auto body = strip_list_markers(text::trim(normalized.substr(hits[i].body_start, end - hits[i].body_start)));
        if (body.empty() || body == "nan") continue;
        report.section(kAllSections[idx]) = std::string(body);
    }
    if (std::none_of(claimed.begin(), claimed.end(), [](bool b) { return b; })) {
        throw Error(ErrorCode::NoSectionsFound, "no recognized section header in report '" + report.id + "'");
    }
    return report;
}

/// Canonical "HEADER: body" text for the present sections, one per line.
inline std::string reassemble(const Report& report) {
    std::vector<std::string> lines;
    for (Section s : kAllSections) {
        if (const auto& body = report.section(s)) lines.push_back(std::string(section_key(s)) + ": " + *body);
    }
    return text::join(lines, "\n");
}

// ---------------------------------------------------------------------------
// GPT structuring exchange

inline constexpr std::string_view kStructuringSystem =
    "You are an expert medical assistant AI capable of modifying clinical documents to user specifications. "
    "You make minimal changes to the original document to satisfy user requests. You never add information "
    "that is not already directly stated in the original document.";

inline constexpr std::string_view kStructuringInstructions =
    "Extract four sections from the input radiology report: `Examination', `Indication', `Findings' and "
    "`Impression'. Leave an extracted section as null if it does not exist in the original report. The output "
    "should be in JSON format. An Indication section can refer to the History, Indication or Reason for Study "
    "sections in the original report. Remove any information not directly observable from the current imaging "
    "study. For instance, remove any patient demographic data, past medical history, or comparison to prior "
    "images or studies. The generated `Findings' and `Impression' sections should not reference any changes "
    "based on prior images, studies, or external knowledge about the patient. Rewrite such comparisons as a "
    "status observation based only on the current image or study. Remember to remove any numbering or bullets.";

struct StructuringExample {
    std::string input;
    std::string output;
};

/// The worked example shipped with the structuring prompt.
inline StructuringExample default_structuring_example() {
    return {
        "EXAMINATION: XR CHEST AP PORTABLE\n"
        "INDICATION: Small right apical pneumothorax after lung biopsy.\n"
        "FINDINGS: Single portable view of the chest was obtained. Copared with 10:42 AM. The small right "
        "apical pneumothorax has decreased slightly in size, the improvement best appreciated laterally where "
        "it now measures 10 mm compared to 14 mm before. At the lung apex it now measures 1.6 and compared to "
        "2.1 cm previously. A subtle right apical pulmonary contusion is grossly stable. Minor chest wall "
        "emphysema along the right exilla has not changed significant delay. There is no metastatic shift. No "
        "pleural effusion is evident.",
        "{\"EXAMINATION\": \"XR CHEST AP PORTABLE.\",\n"
        "\"INDICATION\": \"Small right apical pneumothorax after lung biopsy.\",\n"
        "\"FINDINGS\": \"Single portable view of the chest was obtained. The small right apical pneumothorax "
        "measures 10mm. At the lung apex it measures 1.6cm. A subtle right apical pulmonary contusion is grossly "
        "stable. Minor chest wall emphysema is noted along the right exilla. There is no metastatic shift. No "
        "pleural effusion is evident.\",\n"
        "\"IMPRESSION\": null}",
    };
}

inline json structuring_schema() {
    json props = json::object();
    for (Section s : kAllSections) props[std::string(section_key(s))] = {{"type", {"string", "null"}}};
    return {{"type", "object"},
            {"properties", props},
            {"required", {"EXAMINATION", "INDICATION", "FINDINGS", "IMPRESSION"}}};
}

inline PromptPayload build_structuring_prompt(std::string_view raw_text, const std::vector<StructuringExample>& examples) {
    if (examples.empty()) throw Error(ErrorCode::InvalidArgument, "structuring prompt needs at least one example");
    std::string user(kStructuringInstructions);
    user += "\n\nExamples of inputs and expected outputs:\n\n";
    for (const auto& ex : examples) {
        user += "INPUT:\n" + ex.input + "\n\nOUTPUT:\n" + ex.output + "\n\n";
    }
    user += "INPUT:\n";
    user += raw_text;
    user += "\n\nOUTPUT:\n";
    return {std::string(kStructuringSystem), std::move(user), structuring_schema()};
}

/// Maps a structuring reply into a Report. Null, blank and "nan" sections
/// are absent. Throws MalformedResponse on anything that is not an object
/// with the four string-or-null keys.
inline Report parse_structuring_response(std::string_view response, std::string id = "report",
                                         std::string raw_text = {}) {
    json j;
    try {
        j = json::parse(strip_code_fence(response));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("structuring reply is not JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::MalformedResponse, "structuring reply must be a JSON object");
    Report report;
    report.id = std::move(id);
    report.raw_text = std::move(raw_text);
    report.source = Source::GptStructured;
    for (Section s : kAllSections) {
        const std::string key(section_key(s));
        auto it = j.find(key);
        if (it == j.end()) throw Error(ErrorCode::MalformedResponse, "structuring reply is missing " + key);
        if (it->is_null()) continue;
        if (!it->is_string()) throw Error(ErrorCode::MalformedResponse, key + " must be a string or null");
        const auto body = strip_list_markers(text::trim(it->get_ref<const std::string&>()));
        if (body.empty() || body == "nan") continue;
        report.section(s) = std::string(body);
    }
    return report;
}

}  // namespace radeval::sections
