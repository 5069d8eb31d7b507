#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "radeval/core_model.hpp"
#include "radeval/prompt.hpp"
#include "radeval/sha256.hpp"

// LLM-judge error scoring: prompt assembly, strict reply parsing, a cached
// retrying driver around any chat client, and corpus-level aggregation.
namespace radeval::judge {

/// Stamped into every verdict and cache entry. Bump when the prompt text changes.
inline constexpr std::string_view kPromptVersion = "chexprompt-radeval-1";

inline std::string_view category_description(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::FalseFinding: return "false prediction of finding";
        case ErrorCategory::OmittedFinding: return "omission of finding";
        case ErrorCategory::WrongLocation: return "incorrect location/position of finding";
        case ErrorCategory::WrongSeverity: return "incorrect severity of finding";
        case ErrorCategory::SpuriousComparison: return "mention of comparison that is not present in the reference";
        case ErrorCategory::OmittedComparison: return "omission of comparison describing a change from a previous study";
    }
    return "";
}

/// Mean expert error counts attached to a few-shot example; fractional.
using MeanErrorCounts = std::array<std::array<double, 2>, kErrorCategoryCount>;

struct FewShotExample {
    std::string candidate;
    std::string reference;
    MeanErrorCounts mean_errors{};

    bool operator==(const FewShotExample&) const = default;
};

inline constexpr std::size_t kFewShotCount = 5;

inline void to_json(json& j, const FewShotExample& ex) {
    json means = json::object();
    for (ErrorCategory c : kAllErrorCategories) {
        const auto& row = ex.mean_errors[static_cast<std::size_t>(c)];
        means[std::string(category_key(c))] = {{"significant", row[0]}, {"insignificant", row[1]}};
    }
    j = {{"candidate", ex.candidate}, {"reference", ex.reference}, {"mean_errors", means}};
}

inline void from_json(const json& j, FewShotExample& ex) {
    FewShotExample out;
    out.candidate = j.at("candidate").get<std::string>();
    out.reference = j.at("reference").get<std::string>();
    const auto& means = j.at("mean_errors");
    for (ErrorCategory c : kAllErrorCategories) {
        const auto& cell = means.at(std::string(category_key(c)));
        auto& row = out.mean_errors[static_cast<std::size_t>(c)];
        row[0] = cell.at("significant").get<double>();
        row[1] = cell.at("insignificant").get<double>();
        if (row[0] < 0 || row[1] < 0) throw Error(ErrorCode::Validation, "mean error counts must be nonnegative");
    }
    ex = std::move(out);
}

/// Placeholder in-context examples bundled with the tool. Replace them with
/// expert-annotated pairs (config key "few_shot") for real evaluations.
inline std::vector<FewShotExample> default_few_shot() {
    auto ex = [](std::string cand, std::string ref, ErrorCategory c, double sig, double insig) {
        FewShotExample e;
        e.candidate = std::move(cand);
        e.reference = std::move(ref);
        e.mean_errors[static_cast<std::size_t>(c)] = {sig, insig};
        return e;
    };
    return {
        ex("Heart size is normal. There is a small left pleural effusion. No pneumothorax.",
           "Heart size is normal. No pleural effusion or pneumothorax.", ErrorCategory::FalseFinding, 1.0, 0.0),
        ex("Mild cardiomegaly. The lungs are clear.",
           "Mild cardiomegaly. Right lower lobe opacity concerning for pneumonia.", ErrorCategory::OmittedFinding, 1.0, 0.0),
        ex("Right upper lobe consolidation.", "Left upper lobe consolidation.", ErrorCategory::WrongLocation, 0.83, 0.17),
        ex("Large right pleural effusion. No pneumothorax.", "Small right pleural effusion. No pneumothorax.",
           ErrorCategory::WrongSeverity, 0.67, 0.33),
        ex("Interval improvement of bibasilar atelectasis. Stable cardiomediastinal silhouette.",
           "Bibasilar atelectasis. Normal cardiomediastinal silhouette.", ErrorCategory::SpuriousComparison, 0.17, 0.83),
    };
}

struct JudgeConfig {
    std::string model_name = "gpt-4-turbo";
    double temperature = 0.0;
    int max_retries = 3;
    std::vector<FewShotExample> few_shot = default_few_shot();
    std::string endpoint_url = "https://api.openai.com/v1/chat/completions";
    std::chrono::milliseconds timeout{60'000};
    int max_tokens = 512;
    std::chrono::milliseconds backoff_base{1'000};

    /// Throws Validation when an invariant does not hold.
    void check() const {
        if (few_shot.size() != kFewShotCount)
            throw Error(ErrorCode::Validation, "judge needs exactly 5 few-shot examples, got " + std::to_string(few_shot.size()));
        if (!(temperature >= 0.0)) throw Error(ErrorCode::Validation, "temperature must be >= 0");
        if (max_retries < 0) throw Error(ErrorCode::Validation, "max_retries must be >= 0");
        if (model_name.empty()) throw Error(ErrorCode::Validation, "model_name must be set");
    }
};

/// Reads "model", "temperature", "max_retries", "endpoint_url", "timeout_ms",
/// "max_tokens" and "few_shot" (inline array or file path) when present.
inline JudgeConfig judge_config_from_json(const json& j, const JudgeConfig& base = {}) {
    JudgeConfig cfg = base;
    if (!j.is_object()) throw Error(ErrorCode::Validation, "judge config must be an object");
    if (j.contains("model")) cfg.model_name = j.at("model").get<std::string>();
    if (j.contains("temperature")) cfg.temperature = j.at("temperature").get<double>();
    if (j.contains("max_retries")) cfg.max_retries = j.at("max_retries").get<int>();
    if (j.contains("endpoint_url")) cfg.endpoint_url = j.at("endpoint_url").get<std::string>();
    if (j.contains("timeout_ms")) cfg.timeout = std::chrono::milliseconds(j.at("timeout_ms").get<long long>());
    if (j.contains("max_tokens")) cfg.max_tokens = j.at("max_tokens").get<int>();
    if (j.contains("few_shot")) {
        const auto& fs = j.at("few_shot");
        cfg.few_shot = (fs.is_string() ? read_json_file(fs.get<std::string>()) : fs).get<std::vector<FewShotExample>>();
    }
    return cfg;
}

namespace detail {

inline std::string format_count(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string format_means(const MeanErrorCounts& means) {
    std::string out = "{";
    for (std::size_t i = 0; i < kErrorCategoryCount; ++i) {
        if (i) out += ", ";
        out += "\"" + std::string(category_key(kAllErrorCategories[i])) + "\": {\"significant\": " +
               format_count(means[i][0]) + ", \"insignificant\": " + format_count(means[i][1]) + "}";
    }
    return out + "}";
}

}  // namespace detail

inline json judge_schema() {
    json props = json::object();
    for (ErrorCategory c : kAllErrorCategories) {
        props[std::string(category_key(c))] = {
            {"type", "object"},
            {"properties", {{"significant", {{"type", "integer"}, {"minimum", 0}}},
                            {"insignificant", {{"type", "integer"}, {"minimum", 0}}}}},
            {"required", {"significant", "insignificant"}},
        };
    }
    json required = json::array();
    for (ErrorCategory c : kAllErrorCategories) required.push_back(std::string(category_key(c)));
    return {{"type", "object"}, {"properties", props}, {"required", required}, {"additionalProperties", false}};
}

inline constexpr std::string_view kJudgeSystem =
    "You are an experienced radiologist who audits chest X-ray reports for factual errors. "
    "You compare a candidate report with a reference report written for the same study and "
    "count the errors in the candidate. You answer with JSON only.";

/// Deterministic for fixed inputs, so the cache key is stable.
inline PromptPayload build_judge_prompt(std::string_view candidate, std::string_view reference, const JudgeConfig& config) {
    if (text::trim(candidate).empty() || text::trim(reference).empty()) {
        throw Error(ErrorCode::EmptyInput, "judge prompt needs a nonempty candidate and reference");
    }
    config.check();
    std::string user;
    user += "Count the errors in the candidate report relative to the reference report for each of the six "
            "error types below. For every type give two counts: clinically significant errors and clinically "
            "insignificant errors.\n\n";
    for (std::size_t i = 0; i < kErrorCategoryCount; ++i) {
        const auto c = kAllErrorCategories[i];
        user += std::to_string(i + 1) + ". " + std::string(category_key(c)) + ": " +
                std::string(category_description(c)) + "\n";
    }
    user += "\nRespond with a single JSON object that has exactly these six keys. Each key maps to an object "
            "{\"significant\": <integer>, \"insignificant\": <integer>} with nonnegative integer counts. "
            "Do not add any other text.\n\n";
    user += "Reference evaluations, with the mean error counts assigned by expert radiologists:\n\n";
    for (std::size_t i = 0; i < config.few_shot.size(); ++i) {
        const auto& ex = config.few_shot[i];
        user += "Example " + std::to_string(i + 1) + "\n";
        user += "Candidate report: " + ex.candidate + "\n";
        user += "Reference report: " + ex.reference + "\n";
        user += "Mean error counts: " + detail::format_means(ex.mean_errors) + "\n\n";
    }
    user += "Now evaluate the following pair.\n";
    user += "Candidate report: ";
    user += candidate;
    user += "\nReference report: ";
    user += reference;
    user += "\nError counts:";
    return {std::string(kJudgeSystem), std::move(user), judge_schema()};
}

/// Strict six-key JSON, optionally inside one ``` fence. Throws MalformedResponse.
inline ErrorReport parse_judge_response(std::string_view response) {
    json j;
    try {
        j = json::parse(strip_code_fence(response));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("judge reply is not JSON: ") + e.what());
    }
    return j.get<ErrorReport>();
}

// ---------------------------------------------------------------------------
// Wire format

/// OpenAI-style chat completion request body.
inline json request_body(const PromptPayload& payload, const JudgeConfig& config) {
    return {
        {"model", config.model_name},
        {"messages", json::array({{{"role", "system"}, {"content", payload.system}},
                                  {{"role", "user"}, {"content", payload.user}}})},
        {"temperature", config.temperature},
        {"max_tokens", config.max_tokens},
    };
}

/// Pulls choices[0].message.content out of a completion response body.
inline std::string completion_text(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("completion body is not JSON: ") + e.what());
    }
    try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("unexpected completion body: ") + e.what());
    }
}

/// Anything that turns a prompt into reply text. Implementations throw
/// TransportError on transport failure. Must be safe to call concurrently.
class JudgeClient {
  public:
    virtual ~JudgeClient() = default;
    virtual std::string complete(const PromptPayload& payload, const JudgeConfig& config) = 0;
};

// ---------------------------------------------------------------------------
// Verdicts and cache

struct JudgeVerdict {
    std::string report_id;
    ErrorReport errors;
    std::string raw_response;
    int attempts = 1;
    bool from_cache = false;
    std::string prompt_version = std::string(kPromptVersion);

    bool operator==(const JudgeVerdict&) const = default;
};

inline void to_json(json& j, const JudgeVerdict& v) {
    j = {{"report_id", v.report_id},       {"errors", v.errors},         {"raw_response", v.raw_response},
         {"attempts", v.attempts},         {"from_cache", v.from_cache}, {"prompt_version", v.prompt_version},
         {"total", v.errors.total()},      {"significant_total", v.errors.significant_total()}};
}

/// Transcript rows may carry "errors", or only "raw_response", which is then parsed.
inline void from_json(const json& j, JudgeVerdict& v) {
    JudgeVerdict out;
    out.report_id = j.at("report_id").get<std::string>();
    out.raw_response = j.value("raw_response", std::string{});
    if (j.contains("errors")) {
        out.errors = j.at("errors").get<ErrorReport>();
    } else {
        out.errors = parse_judge_response(out.raw_response);
    }
    out.attempts = j.value("attempts", 1);
    out.from_cache = j.value("from_cache", false);
    out.prompt_version = j.value("prompt_version", std::string(kPromptVersion));
    if (out.attempts < 1 && !out.from_cache) throw Error(ErrorCode::Validation, "verdict attempts must be >= 1");
    v = std::move(out);
}

inline std::string cache_key(const std::string& model_name, const PromptPayload& payload) {
    return sha256_hex(model_name + '\n' + payload.system + '\n' + payload.user);
}

/// One JSON file per key. Writes go to a temp file that is renamed into
/// place, so readers never observe a partial entry.
class VerdictCache {
  public:
    explicit VerdictCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw Error(ErrorCode::IoError, "cannot create cache dir " + dir_.string() + ": " + ec.message());
    }

    std::filesystem::path path_for(const std::string& key) const { return dir_ / (key + ".json"); }

    std::optional<json> load(const std::string& key) const {
        std::ifstream in(path_for(key));
        if (!in) return std::nullopt;
        try {
            return json::parse(in);
        } catch (const json::parse_error&) {
            return std::nullopt;
        }
    }

    void store(const std::string& key, const json& entry) const {
        static std::atomic<unsigned long> counter{0};
        const auto final_path = path_for(key);
        auto tmp = final_path;
        tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) + "." +
               std::to_string(counter++);
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
            out << entry.dump(2) << '\n';
            if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
        }
        std::error_code ec;
        std::filesystem::rename(tmp, final_path, ec);
        if (ec) {
            std::filesystem::remove(tmp, ec);
            throw Error(ErrorCode::IoError, "cannot move cache entry into place: " + final_path.string());
        }
    }

    const std::filesystem::path& dir() const { return dir_; }

  private:
    std::filesystem::path dir_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline void real_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

struct JudgeOptions {
    const VerdictCache* cache = nullptr;
    Sleeper sleep = real_sleep;
};

/// Cache lookup, then up to max_retries + 1 attempts with exponential
/// backoff. Malformed replies and transient transport errors are retried;
/// other transport errors propagate at once. Fresh verdicts are written to
/// the cache before returning.
inline JudgeVerdict judge_pair(JudgeClient& client, std::string report_id, std::string_view candidate,
                               std::string_view reference, const JudgeConfig& config, const JudgeOptions& options = {}) {
    const auto payload = build_judge_prompt(candidate, reference, config);
    const auto key = cache_key(config.model_name, payload);

    if (options.cache) {
        if (auto entry = options.cache->load(key)) {
            try {
                JudgeVerdict v;
                v.report_id = std::move(report_id);
                v.errors = entry->at("errors").get<ErrorReport>();
                v.raw_response = entry->value("raw_response", std::string{});
                v.attempts = entry->value("attempts", 1);
                v.prompt_version = entry->value("prompt_version", std::string(kPromptVersion));
                v.from_cache = true;
                return v;
            } catch (const std::exception&) {
                // Unreadable entry: fall through and overwrite it.
            }
        }
    }

    const int total_attempts = config.max_retries + 1;
    std::string last_raw;
    std::string last_error;
    for (int attempt = 1; attempt <= total_attempts; ++attempt) {
        try {
            std::string raw = client.complete(payload, config);
            last_raw = raw;
            JudgeVerdict v;
            v.report_id = report_id;
            v.errors = parse_judge_response(raw);
            v.raw_response = std::move(raw);
            v.attempts = attempt;
            if (options.cache) {
                options.cache->store(key, {{"key", key},
                                           {"model", config.model_name},
                                           {"prompt_version", v.prompt_version},
                                           {"raw_response", v.raw_response},
                                           {"errors", v.errors},
                                           {"attempts", v.attempts}});
            }
            return v;
        } catch (const TransportError& e) {
            if (!e.transient()) throw;
            last_error = e.what();
        } catch (const Error& e) {
            if (e.code() != ErrorCode::MalformedResponse) throw;
            last_error = e.what();
        }
        if (attempt < total_attempts && options.sleep) {
            options.sleep(config.backoff_base * (1LL << std::min(attempt - 1, 20)));
        }
    }
    throw ExhaustedRetries(total_attempts, last_raw, last_error);
}

struct JudgeItem {
    std::string report_id;
    std::string candidate;
    std::string reference;
};

/// Judges every item with up to `jobs` requests in flight. Results keep the
/// input order; the first failure (in input order) is rethrown.
inline std::vector<JudgeVerdict> judge_all(JudgeClient& client, const std::vector<JudgeItem>& items,
                                           const JudgeConfig& config, const JudgeOptions& options = {},
                                           unsigned jobs = 1) {
    std::vector<std::optional<JudgeVerdict>> results(items.size());
    std::vector<std::exception_ptr> failures(items.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            try {
                results[i] = judge_pair(client, items[i].report_id, items[i].candidate, items[i].reference, config, options);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(items.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    std::vector<JudgeVerdict> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (failures[i]) std::rethrow_exception(failures[i]);
        out.push_back(std::move(*results[i]));
    }
    return out;
}

inline std::vector<JudgeVerdict> read_transcript(const std::string& path) {
    std::vector<JudgeVerdict> out;
    for (const auto& row : read_jsonl(path)) out.push_back(row.get<JudgeVerdict>());
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct Aggregate {
    std::size_t count = 0;
    double mean_total = 0.0;
    double mean_significant = 0.0;
    double pct_error_free_total = 0.0;
    double pct_error_free_significant = 0.0;
    MeanErrorCounts per_category_means{};
};

/// Percentages are on a 0-100 scale.
inline Aggregate aggregate(std::span<const JudgeVerdict> verdicts) {
    if (verdicts.empty()) throw Error(ErrorCode::EmptyInput, "aggregate needs at least one verdict");
    Aggregate a;
    a.count = verdicts.size();
    long long total = 0;
    long long significant = 0;
    std::size_t free_total = 0;
    std::size_t free_significant = 0;
    std::array<std::array<long long, 2>, kErrorCategoryCount> sums{};
    for (const auto& v : verdicts) {
        total += v.errors.total();
        significant += v.errors.significant_total();
        free_total += v.errors.total() == 0 ? 1 : 0;
        free_significant += v.errors.significant_total() == 0 ? 1 : 0;
        for (std::size_t c = 0; c < kErrorCategoryCount; ++c)
            for (std::size_t s = 0; s < 2; ++s) sums[c][s] += v.errors.counts()[c][s];
    }
    const double n = static_cast<double>(a.count);
    a.mean_total = static_cast<double>(total) / n;
    a.mean_significant = static_cast<double>(significant) / n;
    a.pct_error_free_total = 100.0 * static_cast<double>(free_total) / n;
    a.pct_error_free_significant = 100.0 * static_cast<double>(free_significant) / n;
    for (std::size_t c = 0; c < kErrorCategoryCount; ++c)
        for (std::size_t s = 0; s < 2; ++s) a.per_category_means[c][s] = static_cast<double>(sums[c][s]) / n;
    return a;
}

inline void to_json(json& j, const Aggregate& a) {
    json cats = json::object();
    for (ErrorCategory c : kAllErrorCategories) {
        const auto& row = a.per_category_means[static_cast<std::size_t>(c)];
        cats[std::string(category_key(c))] = {{"significant", row[0]}, {"insignificant", row[1]}};
    }
    j = {{"count", a.count},
         {"mean_total", a.mean_total},
         {"mean_significant", a.mean_significant},
         {"pct_error_free_total", a.pct_error_free_total},
         {"pct_error_free_significant", a.pct_error_free_significant},
         {"per_category_means", cats},
         {"prompt_version", std::string(kPromptVersion)}};
}

}  // namespace radeval::judge
