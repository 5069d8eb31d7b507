#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "radeval/agreement_stats.hpp"
#include "radeval/alignment_eval.hpp"
#include "radeval/chexprompt.hpp"
#include "radeval/core_model.hpp"
#include "radeval/http_client.hpp"
#include "radeval/label_metrics.hpp"
#include "radeval/lexical_metrics.hpp"
#include "radeval/section_parser.hpp"
#include "radeval/synthetic_reports.hpp"

// The `radeval` command line. Everything lives here so tests can drive
// run() in-process; tools/radeval.cpp only forwards main().
namespace radeval::cli {

enum ExitCode : int { kOk = 0, kDataError = 1, kUsageError = 2, kTransportError = 3 };

/// Hooks for tests. By default the judge talks HTTP and sleeps for real.
struct Hooks {
    std::function<std::unique_ptr<judge::JudgeClient>()> make_client;
    judge::Sleeper sleep = judge::real_sleep;
};

struct Globals {
    std::string config_path;
    std::string cache_dir;
    std::uint64_t seed = 0;
    std::string out_path;
    unsigned jobs = 1;
    bool pretty = false;
};

/// Components resolved from --config. Missing keys keep the built-in defaults.
struct Settings {
    sections::HeaderMap headers = sections::HeaderMap::defaults();
    synth::TemplateBank templates = synth::TemplateBank::defaults();
    labels::Lexicon lexicon = labels::Lexicon::defaults();
    judge::JudgeConfig judge;
    std::vector<sections::StructuringExample> structuring_examples{sections::default_structuring_example()};
};

namespace detail {

// Inline object or a path, relative to the config file.
inline json section_or_file(const json& value, const std::filesystem::path& base) {
    if (!value.is_string()) return value;
    std::filesystem::path p(value.get<std::string>());
    if (p.is_relative()) p = base / p;
    return read_json_file(p.string());
}

inline std::string resolve(const json& value, const std::filesystem::path& base) {
    std::filesystem::path p(value.get<std::string>());
    return (p.is_relative() ? base / p : p).string();
}

}  // namespace detail

inline Settings load_settings(const std::string& config_path) {
    Settings s;
    if (config_path.empty()) return s;
    const json cfg = read_json_file(config_path);
    if (!cfg.is_object()) throw Error(ErrorCode::Validation, config_path + ": config must be a JSON object");
    const auto base = std::filesystem::path(config_path).parent_path();
    try {
        if (cfg.contains("headers")) s.headers = sections::header_map_from_json(detail::section_or_file(cfg["headers"], base));
        if (cfg.contains("templates")) s.templates = detail::section_or_file(cfg["templates"], base).get<synth::TemplateBank>();
        if (cfg.contains("lexicon")) s.lexicon = detail::section_or_file(cfg["lexicon"], base).get<labels::Lexicon>();
        if (cfg.contains("judge")) {
            json j = detail::section_or_file(cfg["judge"], base);
            if (j.contains("few_shot") && j["few_shot"].is_string()) j["few_shot"] = detail::resolve(j["few_shot"], base);
            s.judge = judge::judge_config_from_json(j);
        }
        if (cfg.contains("structuring_examples")) {
            s.structuring_examples.clear();
            for (const auto& ex : detail::section_or_file(cfg["structuring_examples"], base)) {
                s.structuring_examples.push_back({ex.at("input").get<std::string>(), ex.at("output").get<std::string>()});
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Validation, config_path + ": " + e.what());
    }
    s.templates.check();
    return s;
}

// ---------------------------------------------------------------------------
// Output

inline std::string fmt(double v, int digits = 4) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

/// Infinite values are not valid JSON numbers, so they are written as strings.
inline json number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return nullptr;
    return v;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string render() const {
        std::vector<std::size_t> width(header.size(), 0);
        for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
        for (const auto& row : rows)
            for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
        std::ostringstream os;
        auto line = [&](const std::vector<std::string>& cells) {
            std::string line_text;
            for (std::size_t c = 0; c < width.size(); ++c) {
                const std::string cell = c < cells.size() ? cells[c] : "";
                line_text += (c ? "  " : "") + cell;
                if (c + 1 < width.size()) line_text += std::string(width[c] - cell.size(), ' ');
            }
            while (!line_text.empty() && line_text.back() == ' ') line_text.pop_back();
            os << line_text << '\n';
        };
        line(header);
        std::vector<std::string> rule;
        for (auto w : width) rule.emplace_back(w, '-');
        line(rule);
        for (const auto& row : rows) line(row);
        return os.str();
    }
};

inline void emit(const Globals& g, std::ostream& out, const json& doc, const std::function<std::string()>& pretty) {
    const std::string text = g.pretty ? pretty() : doc.dump(2) + "\n";
    if (g.out_path.empty()) {
        out << text;
        return;
    }
    std::ofstream f(g.out_path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + g.out_path);
    f << text;
    if (!f) throw Error(ErrorCode::IoError, "short write to " + g.out_path);
}

// ---------------------------------------------------------------------------
// Shared input helpers

inline std::optional<std::string> first_text(std::initializer_list<const std::optional<std::string>*> options) {
    for (const auto* o : options)
        if (*o && !text::trim(**o).empty()) return **o;
    return std::nullopt;
}

inline std::string candidate_text(const ManifestRecord& r) {
    if (auto t = first_text({&r.findings, &r.raw_text, &r.candidate})) return *t;
    throw Error(ErrorCode::Validation, "record " + r.report_id + " has no candidate text");
}

inline std::string required_field(const ManifestRecord& r, const std::optional<std::string>& v, const char* name) {
    if (!v) throw Error(ErrorCode::Validation, "record " + r.report_id + " has no " + name);
    return *v;
}

inline std::string reference_text(const ManifestRecord& r) {
    if (auto t = first_text({&r.findings, &r.raw_text, &r.reference})) return *t;
    throw Error(ErrorCode::Validation, "record " + r.report_id + " has no reference text");
}

/// Pairs each candidate record with the reference record of the same id.
/// Report text is taken from findings, then raw_text, then candidate/reference.
inline std::vector<std::pair<ManifestRecord, ManifestRecord>> pair_manifests(const std::string& cand_path, const std::string& ref_path) {
    const auto cands = read_manifest(cand_path);
    std::map<std::string, ManifestRecord> refs;
    for (auto& r : read_manifest(ref_path)) refs.emplace(r.report_id, std::move(r));
    if (refs.size() != cands.size()) {
        throw Error(ErrorCode::Misalignment, "candidate and reference manifests hold different numbers of records");
    }
    std::vector<std::pair<ManifestRecord, ManifestRecord>> out;
    for (const auto& c : cands) {
        auto it = refs.find(c.report_id);
        if (it == refs.end()) throw Error(ErrorCode::Misalignment, "no reference record for " + c.report_id);
        out.emplace_back(c, it->second);
    }
    return out;
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Subcommands

struct ParseArgs {
    std::string manifest;
    std::string responses;
    bool emit_prompts = false;
};

inline int cmd_parse(const Globals& g, const ParseArgs& a, std::ostream& out) {
    const auto settings = load_settings(g.config_path);
    std::map<std::string, std::string> responses;
    if (!a.responses.empty()) {
        for (const auto& row : read_jsonl(a.responses))
            responses[row.at("report_id").get<std::string>()] = row.at("response").get<std::string>();
    }
    json reports = json::array(), unsectioned = json::array(), prompts = json::array(), errors = json::array();
    for (const auto& rec : read_manifest(a.manifest)) {
        if (auto it = responses.find(rec.report_id); it != responses.end()) {
            try {
                reports.push_back(sections::parse_structuring_response(it->second, rec.report_id, rec.raw_text.value_or("")));
            } catch (const Error& e) {
                errors.push_back({{"report_id", rec.report_id}, {"error", e.what()}});
            }
            continue;
        }
        if (rec.raw_text) {
            try {
                reports.push_back(sections::extract_sections(sections::normalize(*rec.raw_text, settings.headers),
                                                             settings.headers, rec.report_id));
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NoSectionsFound) throw;
                unsectioned.push_back(rec.report_id);
                if (a.emit_prompts) {
                    const auto p = sections::build_structuring_prompt(*rec.raw_text, settings.structuring_examples);
                    prompts.push_back({{"report_id", rec.report_id}, {"system", p.system}, {"user", p.user}});
                }
            }
            continue;
        }
        Report r;
        r.id = rec.report_id;
        r.examination = rec.examination;
        r.indication = rec.indication;
        r.findings = rec.findings;
        r.impression = rec.impression;
        if (!r.examination && !r.indication && !r.findings && !r.impression) {
            errors.push_back({{"report_id", rec.report_id}, {"error", "record has neither raw_text nor sections"}});
            continue;
        }
        reports.push_back(r);
    }
    json doc = {{"reports", reports}, {"unsectioned", unsectioned}, {"errors", errors}};
    if (a.emit_prompts) doc["prompts"] = prompts;
    emit(g, out, doc, [&] {
        Table t{{"report_id", "source", "examination", "indication", "findings", "impression"}, {}};
        auto len = [](const json& v) { return v.is_null() ? std::string("-") : std::to_string(v.get<std::string>().size()); };
        for (const auto& r : reports)
            t.rows.push_back({r["id"], r["source"], len(r["examination"]), len(r["indication"]), len(r["findings"]), len(r["impression"])});
        for (const auto& id : unsectioned) t.rows.push_back({id, "unsectioned", "", "", "", ""});
        for (const auto& e : errors) t.rows.push_back({e["report_id"], "error: " + e["error"].get<std::string>(), "", "", "", ""});
        return t.render();
    });
    return errors.empty() ? kOk : kDataError;
}

struct SynthArgs {
    std::string manifest;
};

inline int cmd_synth(const Globals& g, const SynthArgs& a, std::ostream& out) {
    const auto settings = load_settings(g.config_path);
    json reports = json::array(), skipped = json::array();
    for (const auto& rec : read_manifest(a.manifest)) {
        if (!rec.labels) throw Error(ErrorCode::Validation, "record " + rec.report_id + " has no labels");
        const auto& st = rec.labels->statuses();
        if (std::all_of(st.begin(), st.end(), [](Status s) { return s == Status::Blank; })) {
            skipped.push_back(rec.report_id);
            continue;
        }
        const std::uint64_t seed = synth::mix64(g.seed ^ fnv1a(rec.report_id));
        reports.push_back(synth::synthesize_report(*rec.labels, seed, settings.templates, rec.report_id));
    }
    json doc = {{"seed", g.seed}, {"reports", reports}, {"skipped", skipped}};
    emit(g, out, doc, [&] {
        Table t{{"report_id", "findings"}, {}};
        for (const auto& r : reports) t.rows.push_back({r["id"], r["findings"]});
        return t.render();
    });
    return kOk;
}

struct PairArgs {
    std::string manifest;
    std::string candidates;
    std::string references;
};

inline std::vector<std::pair<ManifestRecord, ManifestRecord>> load_pairs(const PairArgs& a) {
    if (!a.manifest.empty()) {
        std::vector<std::pair<ManifestRecord, ManifestRecord>> out;
        for (auto& r : read_manifest(a.manifest)) out.emplace_back(r, r);
        return out;
    }
    return pair_manifests(a.candidates, a.references);
}

inline int cmd_lexical(const Globals& g, const PairArgs& a, std::ostream& out) {
    const bool single = !a.manifest.empty();
    json rows = json::array(), errors = json::array();
    double sums[5] = {0, 0, 0, 0, 0};
    for (const auto& [c, r] : load_pairs(a)) {
        const auto cand = lexical::tokenize(single ? required_field(c, c.candidate, "candidate") : candidate_text(c));
        const auto ref = lexical::tokenize(single ? required_field(r, r.reference, "reference") : reference_text(r));
        try {
            const double b1 = lexical::bleu(cand, ref, 1);
            const double b4 = lexical::bleu(cand, ref, 4);
            const auto rl = lexical::rouge_l(cand, ref);
            rows.push_back({{"report_id", c.report_id}, {"bleu_1", b1}, {"bleu_4", b4},
                            {"rouge_l", {{"precision", rl.precision}, {"recall", rl.recall}, {"f", rl.f}}}});
            const double v[5] = {b1, b4, rl.precision, rl.recall, rl.f};
            for (int i = 0; i < 5; ++i) sums[i] += v[i];
        } catch (const Error& e) {
            errors.push_back({{"report_id", c.report_id}, {"error", e.what()}});
        }
    }
    json mean = nullptr;
    if (!rows.empty()) {
        const double n = static_cast<double>(rows.size());
        mean = {{"bleu_1", sums[0] / n}, {"bleu_4", sums[1] / n},
                {"rouge_l", {{"precision", sums[2] / n}, {"recall", sums[3] / n}, {"f", sums[4] / n}}}};
    }
    json doc = {{"rows", rows}, {"mean", mean}, {"errors", errors}};
    emit(g, out, doc, [&] {
        Table t{{"report_id", "bleu_1", "bleu_4", "rouge_l_p", "rouge_l_r", "rouge_l_f"}, {}};
        auto add = [&](const std::string& id, const json& m) {
            t.rows.push_back({id, fmt(m["bleu_1"]), fmt(m["bleu_4"]), fmt(m["rouge_l"]["precision"]),
                              fmt(m["rouge_l"]["recall"]), fmt(m["rouge_l"]["f"])});
        };
        for (const auto& row : rows) add(row["report_id"], row);
        if (!mean.is_null()) add("mean", mean);
        for (const auto& e : errors) t.rows.push_back({e["report_id"], "error: " + e["error"].get<std::string>()});
        return t.render();
    });
    return errors.empty() ? kOk : kDataError;
}

struct LabelsArgs {
    PairArgs pair;
    bool emit_labels = false;
};

inline int cmd_labels(const Globals& g, const LabelsArgs& a, std::ostream& out) {
    const auto settings = load_settings(g.config_path);
    const bool single = !a.pair.manifest.empty();
    std::vector<LabelVector> preds, refs;
    json rows = json::array();
    double entity_sum = 0.0;
    std::size_t entity_n = 0;
    for (const auto& [c, r] : load_pairs(a.pair)) {
        LabelVector pred, ref;
        std::string pred_src = "manifest", ref_src = "manifest";
        if (single) {
            if (c.extra.contains("candidate_labels")) {
                pred = c.extra["candidate_labels"].get<LabelVector>();
            } else {
                pred = labels::surrogate_label(required_field(c, c.candidate, "candidate"), settings.lexicon);
                pred_src = "surrogate";
            }
            if (r.labels) {
                ref = *r.labels;
            } else {
                ref = labels::surrogate_label(required_field(r, r.reference, "reference"), settings.lexicon);
                ref_src = "surrogate";
            }
        } else {
            if (c.labels) pred = *c.labels;
            else pred = labels::surrogate_label(candidate_text(c), settings.lexicon), pred_src = "surrogate";
            if (r.labels) ref = *r.labels;
            else ref = labels::surrogate_label(reference_text(r), settings.lexicon), ref_src = "surrogate";
        }
        const char* ck = single ? "candidate_entities" : "entities";
        const char* rk = single ? "reference_entities" : "entities";
        if (c.extra.contains(ck) && r.extra.contains(rk)) {
            entity_sum += labels::entity_f1(c.extra[ck].get<labels::EntitySet>(), r.extra[rk].get<labels::EntitySet>());
            ++entity_n;
        }
        preds.push_back(pred);
        refs.push_back(ref);
        rows.push_back({{"report_id", c.report_id}, {"predicted", pred}, {"reference", ref},
                        {"predicted_source", pred_src}, {"reference_source", ref_src}});
    }
    json f1 = json::array();
    for (auto policy : {labels::UncertainPolicy::AsNegative, labels::UncertainPolicy::AsPositive}) {
        for (auto set : {labels::ClassSet::All14, labels::ClassSet::Top5}) {
            const auto s = labels::f1_scores(preds, refs, policy, set);
            json per = json::object();
            for (const auto& [cond, counts] : s.per_class) per[std::string(condition_name(cond))] = counts.f1();
            f1.push_back({{"policy", std::string(labels::to_string(policy))},
                          {"classes", set == labels::ClassSet::All14 ? "all14" : "top5"},
                          {"micro_f1", s.micro_f1},
                          {"macro_f1", s.macro_f1},
                          {"per_class", per}});
        }
    }
    json doc = {{"n", preds.size()}, {"f1", f1}};
    doc["entity_f1"] = entity_n ? json{{"n", entity_n}, {"mean", entity_sum / static_cast<double>(entity_n)}} : json(nullptr);
    if (a.emit_labels) doc["rows"] = rows;
    emit(g, out, doc, [&] {
        Table t{{"policy", "classes", "micro_f1", "macro_f1"}, {}};
        for (const auto& s : f1) t.rows.push_back({s["policy"], s["classes"], fmt(s["micro_f1"]), fmt(s["macro_f1"])});
        std::string text = t.render();
        if (entity_n) text += "entity_f1 (n=" + std::to_string(entity_n) + "): " + fmt(doc["entity_f1"]["mean"]) + "\n";
        return text;
    });
    return kOk;
}

struct JudgeArgs {
    PairArgs pair;
    std::string transcript;
    std::string model;
    std::string endpoint;
    std::optional<int> max_retries;
    std::string few_shot;
};

inline int cmd_judge(const Globals& g, const JudgeArgs& a, const Hooks& hooks, std::ostream& out, std::ostream& err) {
    auto settings = load_settings(g.config_path);
    auto& cfg = settings.judge;
    if (!a.model.empty()) cfg.model_name = a.model;
    if (!a.endpoint.empty()) cfg.endpoint_url = a.endpoint;
    if (a.max_retries) cfg.max_retries = *a.max_retries;
    if (!a.few_shot.empty()) cfg.few_shot = read_json_file(a.few_shot).get<std::vector<judge::FewShotExample>>();
    cfg.check();

    std::vector<judge::JudgeVerdict> verdicts;
    std::string mode;
    if (!a.transcript.empty()) {
        mode = "transcript";
        verdicts = judge::read_transcript(a.transcript);
    } else {
        mode = "live";
        std::vector<judge::JudgeItem> items;
        const bool single = !a.pair.manifest.empty();
        for (const auto& [c, r] : load_pairs(a.pair)) {
            items.push_back({c.report_id, single ? required_field(c, c.candidate, "candidate") : candidate_text(c),
                             single ? required_field(r, r.reference, "reference") : reference_text(r)});
        }
        std::unique_ptr<judge::JudgeClient> client;
        if (hooks.make_client) {
            client = hooks.make_client();
        } else {
            if (!std::getenv(judge::kApiKeyVariable)) err << "warning: " << judge::kApiKeyVariable << " is not set\n";
            client = std::make_unique<judge::HttpJudgeClient>();
        }
        std::optional<judge::VerdictCache> cache;
        if (!g.cache_dir.empty()) cache.emplace(g.cache_dir);
        judge::JudgeOptions opts;
        opts.cache = cache ? &*cache : nullptr;
        opts.sleep = hooks.sleep;
        verdicts = judge::judge_all(*client, items, cfg, opts, g.jobs);
    }
    const auto agg = judge::aggregate(verdicts);
    json doc = {{"mode", mode},
                {"model", cfg.model_name},
                {"prompt_version", std::string(judge::kPromptVersion)},
                {"verdicts", verdicts},
                {"aggregate", agg}};
    emit(g, out, doc, [&] {
        Table t{{"report_id", "total", "significant", "attempts", "cached"}, {}};
        for (const auto& v : verdicts)
            t.rows.push_back({v.report_id, std::to_string(v.errors.total()), std::to_string(v.errors.significant_total()),
                              std::to_string(v.attempts), v.from_cache ? "yes" : "no"});
        std::string text = t.render();
        text += "reports: " + std::to_string(agg.count) + "\n";
        text += "mean errors: " + fmt(agg.mean_total) + " (significant " + fmt(agg.mean_significant) + ")\n";
        text += "error-free %: " + fmt(agg.pct_error_free_total, 2) + " (no significant errors " +
                fmt(agg.pct_error_free_significant, 2) + ")\n";
        return text;
    });
    return kOk;
}

struct AgreeArgs {
    std::string panel;
    std::string scores;
    std::string statistic = "total";
};

inline int cmd_agree(const Globals& g, const AgreeArgs& a, std::ostream& out) {
    const auto panel = RaterPanel::from_rows(read_jsonl(a.panel));
    const auto stat = a.statistic == "significant" ? agreement::Statistic::SignificantTotal : agreement::Statistic::Total;

    std::map<std::string, double> by_id;
    for (const auto& row : read_jsonl(a.scores)) {
        const auto id = row.at("report_id").get<std::string>();
        double v = 0.0;
        if (row.contains("score")) v = row.at("score").get<double>();
        else if (row.contains("errors")) v = agreement::statistic_of(row.at("errors").get<ErrorReport>(), stat);
        else throw Error(ErrorCode::Validation, "score row " + id + " needs \"score\" or \"errors\"");
        if (!by_id.emplace(id, v).second) throw Error(ErrorCode::Validation, "duplicate score for " + id);
    }
    agreement::ScoreVector judge;
    for (const auto& id : panel.report_ids()) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw Error(ErrorCode::Misalignment, "no score for panel report " + id);
        judge.ids.push_back(id);
        judge.values.push_back(it->second);
    }
    if (by_id.size() != judge.size()) throw Error(ErrorCode::Misalignment, "scores include reports that are not in the panel");

    json notes = json::array();
    auto tau = [&](const std::vector<double>& x, const std::string& label) -> json {
        try {
            return agreement::kendall_tau_b(std::span<const double>(x), std::span<const double>(judge.values));
        } catch (const Error& e) {
            notes.push_back(label + ": " + e.what());
            return nullptr;
        }
    };
    json per_rater = json::object();
    for (std::size_t k = 0; k < panel.rater_count(); ++k) {
        std::vector<double> col;
        for (std::size_t i = 0; i < panel.report_count(); ++i) col.push_back(agreement::statistic_of(panel.at(i, k), stat));
        per_rater[panel.rater_ids()[k]] = tau(col, "tau-b vs " + panel.rater_ids()[k]);
    }
    const json tau_mean = tau(agreement::left_in_mean(panel, panel.rater_count(), stat), "tau-b vs panel mean");

    json loo = json::array();
    double sum_rater = 0.0, sum_judge = 0.0;
    const auto results = agreement::loo_mad(panel, judge, stat);
    for (const auto& r : results) {
        json t = nullptr;
        try {
            const auto tt = agreement::paired_t_test(r.rater_abs_diff, r.judge_abs_diff);
            t = {{"t", number(tt.t)}, {"p_two_sided", tt.p_two_sided}, {"df", tt.df}};
        } catch (const Error& e) {
            notes.push_back("t-test for " + r.rater_id + ": " + e.what());
        }
        loo.push_back({{"rater_id", r.rater_id}, {"mad_rater", r.mad_rater}, {"mad_judge", r.mad_judge}, {"t_test", t}});
        sum_rater += r.mad_rater;
        sum_judge += r.mad_judge;
    }
    const double n = static_cast<double>(results.size());
    json doc = {{"statistic", stat == agreement::Statistic::Total ? "total" : "significant"},
                {"reports", panel.report_count()},
                {"raters", panel.rater_ids()},
                {"kendall_tau_b", {{"judge_vs_panel_mean", tau_mean}, {"judge_vs_rater", per_rater}}},
                {"loo", loo},
                {"summary", {{"mean_mad_rater", sum_rater / n}, {"mean_mad_judge", sum_judge / n}}},
                {"notes", notes}};
    emit(g, out, doc, [&] {
        Table t{{"left_out", "mad_rater", "mad_judge", "t", "p_two_sided"}, {}};
        for (const auto& r : loo) {
            const auto& tt = r["t_test"];
            t.rows.push_back({r["rater_id"], fmt(r["mad_rater"]), fmt(r["mad_judge"]),
                              tt.is_null() ? "-" : (tt["t"].is_string() ? tt["t"].get<std::string>() : fmt(tt["t"])),
                              tt.is_null() ? "-" : fmt(tt["p_two_sided"])});
        }
        std::string text = t.render();
        text += "tau-b judge vs panel mean: " + (tau_mean.is_null() ? std::string("undefined") : fmt(tau_mean)) + "\n";
        for (const auto& note : notes) text += "note: " + note.get<std::string>() + "\n";
        return text;
    });
    return kOk;
}

struct RetrieveArgs {
    std::string images;
    std::string texts;
    std::string image_ids;
    std::string text_ids;
    std::vector<std::size_t> ks{1, 5, 10};
    bool ks_given = false;
    std::string direction = "both";
};

inline alignment::EmbeddingSet load_embeddings(const std::string& path, const std::string& ids_path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() == 4 && std::string_view(magic, 4) == "EMBD") {
        if (ids_path.empty()) throw Error(ErrorCode::Validation, path + " is binary and needs a sidecar id list");
        std::ifstream ids_in(ids_path);
        if (!ids_in) throw Error(ErrorCode::IoError, "cannot open " + ids_path);
        std::vector<std::string> ids;
        for (std::string line; std::getline(ids_in, line);)
            if (!text::trim(line).empty()) ids.emplace_back(text::trim(line));
        in.seekg(0);
        return alignment::read_embeddings_binary(in, std::move(ids));
    }
    return alignment::embeddings_from_rows(read_jsonl(path));
}

inline int cmd_retrieve(const Globals& g, const RetrieveArgs& a, std::ostream& out) {
    const auto images = load_embeddings(a.images, a.image_ids);
    const auto texts = load_embeddings(a.texts, a.text_ids);
    // Default cutoffs beyond N are dropped; explicit ones must be in range.
    std::vector<std::size_t> ks;
    for (auto k : a.ks)
        if (a.ks_given || k <= images.rows()) ks.push_back(k);
    if (ks.empty()) ks.push_back(images.rows());
    std::vector<alignment::Direction> dirs;
    if (a.direction != "text-to-image") dirs.push_back(alignment::Direction::ImageToText);
    if (a.direction != "image-to-text") dirs.push_back(alignment::Direction::TextToImage);
    json recall = json::object();
    for (auto d : dirs) {
        json m = json::object();
        for (const auto& [k, v] : alignment::recall_at_k(images, texts, ks, d)) m[std::to_string(k)] = v;
        recall[std::string(alignment::to_string(d))] = m;
    }
    json doc = {{"n", images.rows()}, {"dims", images.dims()}, {"recall", recall}};
    emit(g, out, doc, [&] {
        Table t{{"direction"}, {}};
        for (auto k : ks) t.header.push_back("R@" + std::to_string(k));
        for (const auto& [dir, m] : recall.items()) {
            std::vector<std::string> row{dir};
            for (auto k : ks) row.push_back(fmt(m[std::to_string(k)]));
            t.rows.push_back(row);
        }
        return t.render();
    });
    return kOk;
}

struct AttendArgs {
    std::vector<std::string> tensors;
    std::string word;
    std::string layer = "mean";
    std::string head = "mean";
    std::size_t skip_leading_tokens = 0;
    std::string background;
    std::string heatmap_dir = ".";
};

inline int cmd_attend(const Globals& g, const AttendArgs& a, std::ostream& out) {
    const auto layer = alignment::Reduction::parse(a.layer);
    const auto head = alignment::Reduction::parse(a.head);
    std::filesystem::create_directories(a.heatmap_dir);
    const std::optional<std::string> bg = a.background.empty() ? std::nullopt : std::optional(a.background);

    std::vector<json> results(a.tensors.size());
    std::vector<std::exception_ptr> failures(a.tensors.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < a.tensors.size(); i = next++) {
            try {
                const auto& path = a.tensors[i];
                const auto t = alignment::read_attention_file(path, a.skip_leading_tokens, a.word);
                const auto grid = alignment::aggregate_attention(t, layer, head);
                std::string stem = std::filesystem::path(path).stem().string();
                if (!a.word.empty()) stem += "_" + a.word;
                const json meta = {{"tensor", path}, {"word", a.word}, {"layer", layer.label()}, {"head", head.label()}};
                const auto files = alignment::render_heatmap(grid, bg, (std::filesystem::path(a.heatmap_dir) / stem).string(), meta);
                const auto [row, col] = grid.argmax();
                results[i] = {{"tensor", path},
                              {"argmax", {{"row", row}, {"col", col}}},
                              {"max", grid.at(row, col)},
                              {"json", files.json_path},
                              {"png", files.png_path}};
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(g.jobs, static_cast<unsigned>(a.tensors.size())));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (auto& f : failures)
        if (f) std::rethrow_exception(f);

    json doc = {{"layer", layer.label()}, {"head", head.label()}, {"word", a.word}, {"grids", results}};
    emit(g, out, doc, [&] {
        Table t{{"tensor", "argmax_row", "argmax_col", "max", "png"}, {}};
        for (const auto& r : results)
            t.rows.push_back({r["tensor"], std::to_string(r["argmax"]["row"].get<std::size_t>()),
                              std::to_string(r["argmax"]["col"].get<std::size_t>()), fmt(r["max"], 6), r["png"]});
        return t.render();
    });
    return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline void add_globals(CLI::App* sub, Globals& g) {
    sub->add_option("--config", g.config_path, "JSON config (headers, templates, lexicon, judge)")->check(CLI::ExistingFile);
    sub->add_option("--cache-dir", g.cache_dir, "Directory for cached judge verdicts");
    sub->add_option("--seed", g.seed, "Seed for deterministic choices")->capture_default_str();
    sub->add_option("--out", g.out_path, "Write output to this file instead of stdout");
    sub->add_option("--jobs", g.jobs, "Parallel workers")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_flag("--pretty", g.pretty, "Print a table instead of JSON");
}

inline void add_pair_options(CLI::App* sub, PairArgs& p) {
    // Exclusivity is checked in require_pair; CLI11's own excludes() lists
    // print in a nondeterministic order in --help.
    sub->add_option("--manifest", p.manifest, "Manifest with candidate and reference per record")->check(CLI::ExistingFile);
    sub->add_option("--candidates", p.candidates, "Manifest of candidate reports (with --references)")->check(CLI::ExistingFile);
    sub->add_option("--references", p.references, "Manifest of reference reports (with --candidates)")->check(CLI::ExistingFile);
}

inline void require_pair(const PairArgs& p) {
    if (!p.manifest.empty() && (!p.candidates.empty() || !p.references.empty()))
        throw CLI::ExcludesError("--manifest", "--candidates/--references");
    if (p.candidates.empty() != p.references.empty())
        throw CLI::RequiresError(p.candidates.empty() ? "--references" : "--candidates",
                                 p.candidates.empty() ? "--candidates" : "--references");
    if (p.manifest.empty() && p.candidates.empty()) throw CLI::RequiredError("--manifest or --candidates/--references");
}

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err, const Hooks& hooks = {}) {
    CLI::App app{"Radiology report generation evaluation toolkit", "radeval"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "radeval 0.1.0");

    Globals g;
    ParseArgs parse_args;
    SynthArgs synth_args;
    PairArgs lexical_args;
    LabelsArgs labels_args;
    JudgeArgs judge_args;
    AgreeArgs agree_args;
    RetrieveArgs retrieve_args;
    AttendArgs attend_args;

    auto* parse = app.add_subcommand("parse", "Split raw reports into sections");
    add_globals(parse, g);
    parse->add_option("--manifest", parse_args.manifest, "JSONL manifest with raw_text per record")->required()->check(CLI::ExistingFile);
    parse->add_option("--responses", parse_args.responses, "JSONL of {report_id, response} structuring replies")->check(CLI::ExistingFile);
    parse->add_flag("--emit-prompts", parse_args.emit_prompts, "Include structuring prompts for reports without headers");

    auto* synth = app.add_subcommand("synth", "Render template reports from condition labels");
    add_globals(synth, g);
    synth->add_option("--manifest", synth_args.manifest, "JSONL manifest with labels per record")->required()->check(CLI::ExistingFile);

    auto* lexical = app.add_subcommand("lexical", "BLEU-1, BLEU-4 and ROUGE-L per report");
    add_globals(lexical, g);
    add_pair_options(lexical, lexical_args);

    auto* labels = app.add_subcommand("labels", "Condition-label F1 with surrogate labeling");
    add_globals(labels, g);
    add_pair_options(labels, labels_args.pair);
    labels->add_flag("--emit-labels", labels_args.emit_labels, "Include per-report label vectors");

    auto* judge = app.add_subcommand("judge", "Count report errors with an LLM judge");
    add_globals(judge, g);
    add_pair_options(judge, judge_args.pair);
    judge->add_option("--transcript", judge_args.transcript, "Replay verdicts from a JSONL transcript (no network)")->check(CLI::ExistingFile);
    judge->add_option("--model", judge_args.model, "Chat model name");
    judge->add_option("--endpoint", judge_args.endpoint, "Chat completions URL");
    judge->add_option("--max-retries", judge_args.max_retries, "Retries after the first attempt")->check(CLI::NonNegativeNumber);
    judge->add_option("--few-shot", judge_args.few_shot, "JSON file with five in-context examples")->check(CLI::ExistingFile);

    auto* agree = app.add_subcommand("agree", "Kendall tau-b, leave-one-rater-out MAD and t-tests");
    add_globals(agree, g);
    agree->add_option("--panel", agree_args.panel, "JSONL rows {report_id, rater_id, errors}")->required()->check(CLI::ExistingFile);
    agree->add_option("--scores", agree_args.scores, "JSONL rows {report_id, score} or {report_id, errors}")->required()->check(CLI::ExistingFile);
    agree->add_option("--statistic", agree_args.statistic, "Error count to compare")
        ->check(CLI::IsMember({"total", "significant"}))
        ->capture_default_str();

    auto* retrieve = app.add_subcommand("retrieve", "Recall@K between paired image and text embeddings");
    add_globals(retrieve, g);
    retrieve->add_option("--images", retrieve_args.images, "Image embeddings (JSONL or binary)")->required()->check(CLI::ExistingFile);
    retrieve->add_option("--texts", retrieve_args.texts, "Text embeddings (JSONL or binary)")->required()->check(CLI::ExistingFile);
    retrieve->add_option("--image-ids", retrieve_args.image_ids, "Id list for binary image embeddings")->check(CLI::ExistingFile);
    retrieve->add_option("--text-ids", retrieve_args.text_ids, "Id list for binary text embeddings")->check(CLI::ExistingFile);
    auto* k_opt = retrieve->add_option("--k", retrieve_args.ks, "Cutoffs, comma separated")->delimiter(',')->capture_default_str();
    retrieve->add_option("--direction", retrieve_args.direction, "Query direction")
        ->check(CLI::IsMember({"both", "image-to-text", "text-to-image"}))
        ->capture_default_str();

    auto* attend = app.add_subcommand("attend", "Aggregate attention to 37x37 grids and render heatmaps");
    add_globals(attend, g);
    attend->add_option("--tensor", attend_args.tensors, "Attention tensor file(s)")->required()->check(CLI::ExistingFile);
    attend->add_option("--word", attend_args.word, "Word the attention belongs to");
    attend->add_option("--layer", attend_args.layer, "mean, max or a layer index")->capture_default_str();
    attend->add_option("--head", attend_args.head, "mean, max or a head index")->capture_default_str();
    attend->add_option("--skip-leading-tokens", attend_args.skip_leading_tokens, "Tokens to drop before the 1369 patches")
        ->capture_default_str();
    attend->add_option("--background", attend_args.background, "PNG or PGM image under the heatmap")->check(CLI::ExistingFile);
    attend->add_option("--heatmap-dir", attend_args.heatmap_dir, "Directory for grid JSON and PNG files")->capture_default_str();

    try {
        app.parse(argc, argv);
        if (*lexical) require_pair(lexical_args);
        if (*labels) require_pair(labels_args.pair);
        if (*judge && judge_args.transcript.empty()) require_pair(judge_args.pair);
        retrieve_args.ks_given = k_opt->count() > 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsageError;
    }

    try {
        if (*parse) return cmd_parse(g, parse_args, out);
        if (*synth) return cmd_synth(g, synth_args, out);
        if (*lexical) return cmd_lexical(g, lexical_args, out);
        if (*labels) return cmd_labels(g, labels_args, out);
        if (*judge) return cmd_judge(g, judge_args, hooks, out, err);
        if (*agree) return cmd_agree(g, agree_args, out);
        if (*retrieve) return cmd_retrieve(g, retrieve_args, out);
        if (*attend) return cmd_attend(g, attend_args, out);
    } catch (const TransportError& e) {
        err << "error: " << e.what() << '\n';
        return kTransportError;
    } catch (const ExhaustedRetries& e) {
        err << "error: " << e.what() << '\n';
        return kTransportError;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsageError;
}

}  // namespace radeval::cli
