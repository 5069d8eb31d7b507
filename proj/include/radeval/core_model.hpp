#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/error.hpp"
#include "radeval/text.hpp"

// Domain types shared by every module, their invariants, and their JSON
// form. Everything here is a value type and is never mutated once built.
namespace radeval {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Conditions and label statuses

enum class Condition : std::size_t {
    Atelectasis,
    Cardiomegaly,
    Consolidation,
    Edema,
    EnlargedCardiomediastinum,
    Fracture,
    LungLesion,
    LungOpacity,
    NoFinding,
    PleuralEffusion,
    PleuralOther,
    Pneumonia,
    Pneumothorax,
    SupportDevices,
};

inline constexpr std::size_t kConditionCount = 14;

inline constexpr std::array<Condition, kConditionCount> kAllConditions = {
    Condition::Atelectasis,     Condition::Cardiomegaly,   Condition::Consolidation,
    Condition::Edema,           Condition::EnlargedCardiomediastinum,
    Condition::Fracture,        Condition::LungLesion,     Condition::LungOpacity,
    Condition::NoFinding,       Condition::PleuralEffusion, Condition::PleuralOther,
    Condition::Pneumonia,       Condition::Pneumothorax,   Condition::SupportDevices,
};

inline constexpr std::array<std::string_view, kConditionCount> kConditionNames = {
    "Atelectasis", "Cardiomegaly", "Consolidation",    "Edema",          "Enlarged Cardiomediastinum",
    "Fracture",    "Lung Lesion",  "Lung Opacity",     "No Finding",     "Pleural Effusion",
    "Pleural Other", "Pneumonia",  "Pneumothorax",     "Support Devices",
};

inline constexpr std::size_t index_of(Condition c) { return static_cast<std::size_t>(c); }

inline std::string_view condition_name(Condition c) { return kConditionNames[index_of(c)]; }

/// Case-insensitive lookup; the canonical (title case) spelling is what gets stored.
inline std::optional<Condition> parse_condition(std::string_view name) {
    const auto trimmed = text::trim(name);
    for (std::size_t i = 0; i < kConditionCount; ++i) {
        if (text::iequals(trimmed, kConditionNames[i])) return kAllConditions[i];
    }
    return std::nullopt;
}

enum class Status { Positive, Negative, Uncertain, Blank };

inline std::string_view to_string(Status s) {
    switch (s) {
        case Status::Positive: return "Positive";
        case Status::Negative: return "Negative";
        case Status::Uncertain: return "Uncertain";
        case Status::Blank: return "Blank";
    }
    return "Blank";
}

inline std::optional<Status> parse_status(std::string_view s) {
    for (Status st : {Status::Positive, Status::Negative, Status::Uncertain, Status::Blank}) {
        if (text::iequals(text::trim(s), to_string(st))) return st;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// LabelVector

class LabelVector {
  public:
    LabelVector() { statuses_.fill(Status::Blank); }

    Status operator[](Condition c) const { return statuses_[index_of(c)]; }

    LabelVector with(Condition c, Status s) const {
        LabelVector out = *this;
        out.statuses_[index_of(c)] = s;
        return out;
    }

    const std::array<Status, kConditionCount>& statuses() const { return statuses_; }

    bool operator==(const LabelVector&) const = default;

  private:
    std::array<Status, kConditionCount> statuses_{};
};

/// Violations of the LabelVector invariants on an already-typed vector.
inline std::vector<std::string> violations(const LabelVector& labels) {
    std::vector<std::string> out;
    if (labels[Condition::NoFinding] == Status::Positive) {
        for (Condition c : kAllConditions) {
            if (c != Condition::NoFinding && labels[c] == Status::Positive) {
                out.push_back("No Finding positive alongside positive " + std::string(condition_name(c)));
            }
        }
    }
    return out;
}

/// Violations of a JSON label object before it is typed. Unknown and missing
/// condition names are reported here; the typed parser refuses both.
inline std::vector<std::string> label_json_violations(const json& j) {
    std::vector<std::string> out;
    if (!j.is_object()) {
        out.emplace_back("labels must be an object");
        return out;
    }
    std::array<bool, kConditionCount> seen{};
    LabelVector typed;
    for (const auto& [key, value] : j.items()) {
        const auto cond = parse_condition(key);
        if (!cond) {
            out.push_back("unknown condition: " + key);
            continue;
        }
        if (seen[index_of(*cond)]) {
            out.push_back("duplicate condition: " + std::string(condition_name(*cond)));
            continue;
        }
        seen[index_of(*cond)] = true;
        const auto st = value.is_string() ? parse_status(value.get<std::string>()) : std::nullopt;
        if (!st) {
            out.push_back("invalid status for " + std::string(condition_name(*cond)));
            continue;
        }
        typed = typed.with(*cond, *st);
    }
    for (Condition c : kAllConditions) {
        if (!seen[index_of(c)]) out.push_back("missing condition: " + std::string(condition_name(c)));
    }
    auto semantic = violations(typed);
    out.insert(out.end(), semantic.begin(), semantic.end());
    return out;
}

inline void to_json(json& j, const LabelVector& labels) {
    j = json::object();
    for (Condition c : kAllConditions) j[std::string(condition_name(c))] = std::string(to_string(labels[c]));
}

inline void from_json(const json& j, LabelVector& labels) {
    if (auto v = label_json_violations(j); !v.empty()) {
        throw Error(ErrorCode::Validation, "invalid label vector: " + text::join(v, "; "));
    }
    LabelVector out;
    for (const auto& [key, value] : j.items()) {
        out = out.with(*parse_condition(key), *parse_status(value.get<std::string>()));
    }
    labels = out;
}

// ---------------------------------------------------------------------------
// Report

enum class Source { RuleExtracted, GptStructured, Synthetic, Unknown };

inline std::string_view to_string(Source s) {
    switch (s) {
        case Source::RuleExtracted: return "RuleExtracted";
        case Source::GptStructured: return "GptStructured";
        case Source::Synthetic: return "Synthetic";
        case Source::Unknown: return "Unknown";
    }
    return "Unknown";
}

inline Source parse_source(std::string_view s) {
    for (Source src : {Source::RuleExtracted, Source::GptStructured, Source::Synthetic}) {
        if (s == to_string(src)) return src;
    }
    return Source::Unknown;
}

enum class Section { Examination, Indication, Findings, Impression };

inline constexpr std::array<Section, 4> kAllSections = {Section::Examination, Section::Indication,
                                                        Section::Findings, Section::Impression};

/// Uppercase spelling, which is also the key used by the structuring exchange.
inline std::string_view section_key(Section s) {
    switch (s) {
        case Section::Examination: return "EXAMINATION";
        case Section::Indication: return "INDICATION";
        case Section::Findings: return "FINDINGS";
        case Section::Impression: return "IMPRESSION";
    }
    return "";
}

inline std::string_view section_field(Section s) {
    switch (s) {
        case Section::Examination: return "examination";
        case Section::Indication: return "indication";
        case Section::Findings: return "findings";
        case Section::Impression: return "impression";
    }
    return "";
}

struct Report {
    std::string id;
    std::string raw_text;
    std::optional<std::string> examination;
    std::optional<std::string> indication;
    std::optional<std::string> findings;
    std::optional<std::string> impression;
    Source source = Source::Unknown;

    const std::optional<std::string>& section(Section s) const {
        switch (s) {
            case Section::Examination: return examination;
            case Section::Indication: return indication;
            case Section::Findings: return findings;
            case Section::Impression: break;
        }
        return impression;
    }

    std::optional<std::string>& section(Section s) {
        return const_cast<std::optional<std::string>&>(std::as_const(*this).section(s));
    }

    bool operator==(const Report&) const = default;
};

inline std::vector<std::string> violations(const Report& r) {
    std::vector<std::string> out;
    if (r.id.empty()) out.emplace_back("empty id");
    for (Section s : kAllSections) {
        const auto& body = r.section(s);
        if (!body) continue;
        const auto name = std::string(section_field(s));
        if (text::trim(*body).empty()) out.push_back("empty section: " + name);
        if ((s == Section::Findings || s == Section::Impression) && text::trim(*body) == "nan") {
            out.push_back("placeholder 'nan' in " + name);
        }
    }
    return out;
}

namespace detail {

inline json optional_to_json(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<std::string> optional_string(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw Error(ErrorCode::Validation, std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
}

}  // namespace detail

inline void to_json(json& j, const Report& r) {
    j = json{{"id", r.id}, {"raw_text", r.raw_text}, {"source", std::string(to_string(r.source))}};
    for (Section s : kAllSections) j[std::string(section_field(s))] = detail::optional_to_json(r.section(s));
}

inline void from_json(const json& j, Report& r) {
    if (!j.is_object()) throw Error(ErrorCode::Validation, "report must be an object");
    Report out;
    out.id = detail::optional_string(j, "id").value_or("");
    out.raw_text = detail::optional_string(j, "raw_text").value_or("");
    for (Section s : kAllSections) out.section(s) = detail::optional_string(j, std::string(section_field(s)).c_str());
    out.source = parse_source(detail::optional_string(j, "source").value_or("Unknown"));
    r = std::move(out);
}

// ---------------------------------------------------------------------------
// ErrorReport

enum class ErrorCategory {
    FalseFinding,
    OmittedFinding,
    WrongLocation,
    WrongSeverity,
    SpuriousComparison,
    OmittedComparison,
};

inline constexpr std::size_t kErrorCategoryCount = 6;

inline constexpr std::array<ErrorCategory, kErrorCategoryCount> kAllErrorCategories = {
    ErrorCategory::FalseFinding,   ErrorCategory::OmittedFinding,     ErrorCategory::WrongLocation,
    ErrorCategory::WrongSeverity,  ErrorCategory::SpuriousComparison, ErrorCategory::OmittedComparison,
};

inline std::string_view category_key(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::FalseFinding: return "FalseFinding";
        case ErrorCategory::OmittedFinding: return "OmittedFinding";
        case ErrorCategory::WrongLocation: return "WrongLocation";
        case ErrorCategory::WrongSeverity: return "WrongSeverity";
        case ErrorCategory::SpuriousComparison: return "SpuriousComparison";
        case ErrorCategory::OmittedComparison: return "OmittedComparison";
    }
    return "";
}

enum class Significance { Significant, Insignificant };

inline std::string_view significance_key(Significance s) {
    return s == Significance::Significant ? "significant" : "insignificant";
}

class ErrorReport {
  public:
    using Counts = std::array<std::array<int, 2>, kErrorCategoryCount>;

    ErrorReport() = default;

    /// Throws Validation on any negative count.
    explicit ErrorReport(const Counts& counts) : counts_(counts) {
        for (const auto& row : counts_)
            for (int v : row)
                if (v < 0) throw Error(ErrorCode::Validation, "error counts must be nonnegative");
    }

    int count(ErrorCategory c, Significance s) const {
        return counts_[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)];
    }

    ErrorReport with(ErrorCategory c, Significance s, int value) const {
        Counts next = counts_;
        next[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)] = value;
        return ErrorReport(next);
    }

    int total() const {
        int sum = 0;
        for (const auto& row : counts_) sum += row[0] + row[1];
        return sum;
    }

    int significant_total() const {
        int sum = 0;
        for (const auto& row : counts_) sum += row[0];
        return sum;
    }

    bool error_free() const { return total() == 0; }

    const Counts& counts() const { return counts_; }

    bool operator==(const ErrorReport&) const = default;

  private:
    Counts counts_{};
};

inline void to_json(json& j, const ErrorReport& e) {
    j = json::object();
    for (ErrorCategory c : kAllErrorCategories) {
        j[std::string(category_key(c))] = {
            {"significant", e.count(c, Significance::Significant)},
            {"insignificant", e.count(c, Significance::Insignificant)},
        };
    }
}

/// Strict: exactly the six category keys, each with nonnegative integer
/// "significant" and "insignificant" members. Throws MalformedResponse.
inline void from_json(const json& j, ErrorReport& e) {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::MalformedResponse, why); };
    if (!j.is_object()) fail("error report must be a JSON object");
    ErrorReport::Counts counts{};
    std::size_t matched = 0;
    for (ErrorCategory c : kAllErrorCategories) {
        const std::string key(category_key(c));
        auto it = j.find(key);
        if (it == j.end()) fail("missing category " + key);
        if (!it->is_object()) fail("category " + key + " must be an object");
        for (Significance s : {Significance::Significant, Significance::Insignificant}) {
            const std::string sk(significance_key(s));
            auto v = it->find(sk);
            if (v == it->end()) fail("missing " + key + "." + sk);
            if (!v->is_number_integer()) fail(key + "." + sk + " must be an integer");
            const auto n = v->get<long long>();
            if (n < 0) fail(key + "." + sk + " must be nonnegative");
            if (n > 1'000'000) fail(key + "." + sk + " out of range");
            counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)] = static_cast<int>(n);
        }
        if (it->size() != 2) fail("category " + key + " has unexpected members");
        ++matched;
    }
    if (j.size() != matched) fail("unexpected category keys");
    e = ErrorReport(counts);
}

// ---------------------------------------------------------------------------
// RaterPanel

/// Per-(report, rater) error annotations. Always rectangular.
class RaterPanel {
  public:
    RaterPanel(std::vector<std::string> report_ids, std::vector<std::string> rater_ids,
               std::vector<ErrorReport> cells)
        : report_ids_(std::move(report_ids)), rater_ids_(std::move(rater_ids)), cells_(std::move(cells)) {
        if (cells_.size() != report_ids_.size() * rater_ids_.size()) {
            throw Error(ErrorCode::Validation, "rater panel is not rectangular");
        }
        check_unique(report_ids_, "report");
        check_unique(rater_ids_, "rater");
    }

    /// Builds a panel from rows {report_id, rater_id, errors}.
    /// Ids keep their first-seen order.
    static RaterPanel from_rows(const std::vector<json>& rows) {
        std::vector<std::string> reports;
        std::vector<std::string> raters;
        std::map<std::pair<std::string, std::string>, ErrorReport> cells;
        auto remember = [](std::vector<std::string>& ids, const std::string& id) {
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
        };
        for (const auto& row : rows) {
            if (!row.is_object() || !row.contains("report_id") || !row.contains("rater_id") ||
                !row.contains("errors")) {
                throw Error(ErrorCode::Validation, "panel row needs report_id, rater_id and errors");
            }
            auto report = row.at("report_id").get<std::string>();
            auto rater = row.at("rater_id").get<std::string>();
            ErrorReport errors;
            try {
                errors = row.at("errors").get<ErrorReport>();
            } catch (const Error& e) {
                throw Error(ErrorCode::Validation, "panel cell (" + report + ", " + rater + "): " + e.what());
            }
            if (!cells.emplace(std::pair{report, rater}, errors).second) {
                throw Error(ErrorCode::Validation, "duplicate panel cell (" + report + ", " + rater + ")");
            }
            remember(reports, report);
            remember(raters, rater);
        }
        std::vector<ErrorReport> flat;
        flat.reserve(reports.size() * raters.size());
        for (const auto& report : reports) {
            for (const auto& rater : raters) {
                auto it = cells.find({report, rater});
                if (it == cells.end()) {
                    throw Error(ErrorCode::Validation, "missing panel cell (" + report + ", " + rater + ")");
                }
                flat.push_back(it->second);
            }
        }
        return RaterPanel(std::move(reports), std::move(raters), std::move(flat));
    }

    std::vector<json> to_rows() const {
        std::vector<json> rows;
        for (std::size_t i = 0; i < report_ids_.size(); ++i)
            for (std::size_t k = 0; k < rater_ids_.size(); ++k)
                rows.push_back({{"report_id", report_ids_[i]}, {"rater_id", rater_ids_[k]}, {"errors", at(i, k)}});
        return rows;
    }

    const std::vector<std::string>& report_ids() const { return report_ids_; }
    const std::vector<std::string>& rater_ids() const { return rater_ids_; }
    std::size_t report_count() const { return report_ids_.size(); }
    std::size_t rater_count() const { return rater_ids_.size(); }

    const ErrorReport& at(std::size_t report, std::size_t rater) const {
        return cells_.at(report * rater_ids_.size() + rater);
    }

    bool operator==(const RaterPanel&) const = default;

  private:
    static void check_unique(const std::vector<std::string>& ids, const char* what) {
        std::set<std::string> seen(ids.begin(), ids.end());
        if (seen.size() != ids.size()) throw Error(ErrorCode::Validation, std::string("duplicate ") + what + " id");
    }

    std::vector<std::string> report_ids_;
    std::vector<std::string> rater_ids_;
    std::vector<ErrorReport> cells_;
};

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
    std::string report_id;
    std::optional<std::string> raw_text;
    std::optional<std::string> examination;
    std::optional<std::string> indication;
    std::optional<std::string> findings;
    std::optional<std::string> impression;
    std::optional<LabelVector> labels;
    std::optional<std::string> candidate;
    std::optional<std::string> reference;
    std::map<std::string, std::string> paths;
    /// Members the core schema does not know about, kept for downstream commands.
    json extra = json::object();

    bool operator==(const ManifestRecord&) const = default;
};

namespace detail {

inline constexpr std::array<std::string_view, 10> kManifestKeys = {
    "report_id", "raw_text", "examination", "indication", "findings",
    "impression", "labels",  "candidate",   "reference",  "paths",
};

inline bool is_manifest_key(std::string_view key) {
    return std::find(kManifestKeys.begin(), kManifestKeys.end(), key) != kManifestKeys.end();
}

}  // namespace detail

/// Invariant violations of one raw manifest record. Never throws; an empty
/// result means the record parses into a valid ManifestRecord.
inline std::vector<std::string> validate_record(const json& rec) {
    std::vector<std::string> out;
    if (!rec.is_object()) {
        out.emplace_back("record must be a JSON object");
        return out;
    }
    auto id = rec.find("report_id");
    if (id == rec.end() || !id->is_string() || id->get<std::string>().empty()) out.emplace_back("empty id");
    for (const char* key : {"raw_text", "candidate", "reference"}) {
        auto it = rec.find(key);
        if (it != rec.end() && !it->is_null() && !it->is_string()) out.push_back(std::string(key) + " must be a string");
    }
    for (Section s : kAllSections) {
        const std::string name(section_field(s));
        auto it = rec.find(name);
        if (it == rec.end() || it->is_null()) continue;
        if (!it->is_string()) {
            out.push_back(name + " must be a string");
            continue;
        }
        const auto body = text::trim(it->get_ref<const std::string&>());
        if (body.empty()) out.push_back("empty section: " + name);
        if ((s == Section::Findings || s == Section::Impression) && body == "nan") {
            out.push_back("placeholder 'nan' in " + name);
        }
    }
    if (auto it = rec.find("labels"); it != rec.end() && !it->is_null()) {
        auto v = label_json_violations(*it);
        out.insert(out.end(), v.begin(), v.end());
    }
    if (auto it = rec.find("paths"); it != rec.end() && !it->is_null()) {
        if (!it->is_object()) {
            out.emplace_back("paths must be an object");
        } else {
            for (const auto& [k, v] : it->items())
                if (!v.is_string()) out.push_back("path '" + k + "' must be a string");
        }
    }
    return out;
}

/// Record-level violations plus manifest-level ones (duplicate ids).
inline std::vector<std::string> validate_manifest(std::span<const json> records) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (auto& v : validate_record(records[i])) out.push_back("record " + std::to_string(i) + ": " + v);
        auto id = records[i].is_object() ? records[i].find("report_id") : records[i].end();
        if (records[i].is_object() && id != records[i].end() && id->is_string()) {
            if (!seen.insert(id->get<std::string>()).second) {
                out.push_back("record " + std::to_string(i) + ": duplicate id " + id->get<std::string>());
            }
        }
    }
    return out;
}

inline void to_json(json& j, const ManifestRecord& r) {
    j = r.extra.is_object() ? r.extra : json::object();
    j["report_id"] = r.report_id;
    auto put = [&](const char* key, const std::optional<std::string>& v) {
        if (v) j[key] = *v;
    };
    put("raw_text", r.raw_text);
    put("examination", r.examination);
    put("indication", r.indication);
    put("findings", r.findings);
    put("impression", r.impression);
    put("candidate", r.candidate);
    put("reference", r.reference);
    if (r.labels) j["labels"] = *r.labels;
    if (!r.paths.empty()) j["paths"] = r.paths;
}

inline void from_json(const json& j, ManifestRecord& r) {
    if (auto v = validate_record(j); !v.empty()) {
        throw Error(ErrorCode::Validation, "invalid manifest record: " + text::join(v, "; "));
    }
    ManifestRecord out;
    out.report_id = j.at("report_id").get<std::string>();
    out.raw_text = detail::optional_string(j, "raw_text");
    out.examination = detail::optional_string(j, "examination");
    out.indication = detail::optional_string(j, "indication");
    out.findings = detail::optional_string(j, "findings");
    out.impression = detail::optional_string(j, "impression");
    out.candidate = detail::optional_string(j, "candidate");
    out.reference = detail::optional_string(j, "reference");
    if (auto it = j.find("labels"); it != j.end() && !it->is_null()) out.labels = it->get<LabelVector>();
    if (auto it = j.find("paths"); it != j.end() && !it->is_null()) {
        out.paths = it->get<std::map<std::string, std::string>>();
    }
    for (const auto& [key, value] : j.items())
        if (!detail::is_manifest_key(key)) out.extra[key] = value;
    r = std::move(out);
}

// ---------------------------------------------------------------------------
// JSONL I/O

inline std::vector<json> parse_jsonl(std::istream& in, const std::string& origin = "<stream>") {
    std::vector<json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw Error(ErrorCode::Validation, origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

inline std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    return parse_jsonl(in, path);
}

inline void write_jsonl(std::ostream& out, std::span<const json> rows) {
    for (const auto& row : rows) out << row.dump() << '\n';
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::Validation, path + ": " + e.what());
    }
}

/// Reads and validates a whole manifest; throws Validation listing every violation.
inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
    auto rows = read_jsonl(path);
    if (auto v = validate_manifest(rows); !v.empty()) {
        throw Error(ErrorCode::Validation, path + ": " + text::join(v, "; "));
    }
    std::vector<ManifestRecord> out;
    out.reserve(rows.size());
    for (const auto& row : rows) out.push_back(row.get<ManifestRecord>());
    return out;
}

}  // namespace radeval
