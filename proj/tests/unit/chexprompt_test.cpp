#include <filesystem>
#include <mutex>
#include <random>

#include <gtest/gtest.h>

#include "radeval/chexprompt.hpp"

using namespace radeval;
using namespace radeval::judge;

namespace {

std::string reply(int false_sig, int omitted_insig = 0) {
    return json(ErrorReport()
                    .with(ErrorCategory::FalseFinding, Significance::Significant, false_sig)
                    .with(ErrorCategory::OmittedFinding, Significance::Insignificant, omitted_insig))
        .dump();
}

// Replays a scripted list of replies; an empty string means a transient
// transport failure.
class ScriptedClient : public JudgeClient {
  public:
    explicit ScriptedClient(std::vector<std::string> script) : script_(std::move(script)) {}

    std::string complete(const PromptPayload&, const JudgeConfig&) override {
        std::lock_guard lock(mu_);
        const auto i = calls_++;
        const auto& r = script_.at(std::min(i, script_.size() - 1));
        if (r.empty()) throw TransportError("simulated 503", true);
        return r;
    }

    std::size_t calls() const { return calls_; }

  private:
    std::mutex mu_;
    std::vector<std::string> script_;
    std::size_t calls_ = 0;
};

JudgeOptions no_sleep(std::vector<std::chrono::milliseconds>* log = nullptr) {
    JudgeOptions o;
    o.sleep = [log](std::chrono::milliseconds d) {
        if (log) log->push_back(d);
    };
    return o;
}

std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("radeval_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    return dir;
}

}  // namespace

TEST(Prompt, ContainsPairExamplesAndCategories) {
    const JudgeConfig cfg;
    const auto p = build_judge_prompt("Small effusion.", "No effusion.", cfg);
    EXPECT_EQ(p.system, kJudgeSystem);
    EXPECT_TRUE(p.user.ends_with("Candidate report: Small effusion.\nReference report: No effusion.\nError counts:"));
    for (ErrorCategory c : kAllErrorCategories) EXPECT_NE(p.user.find(category_key(c)), std::string::npos);
    for (const auto& ex : cfg.few_shot) EXPECT_NE(p.user.find(ex.candidate), std::string::npos);
    EXPECT_NE(p.user.find("Example 5"), std::string::npos);
    EXPECT_EQ(p.expected_schema["required"].size(), kErrorCategoryCount);
}

TEST(Prompt, RejectsEmptyAndBadConfig) {
    JudgeConfig cfg;
    EXPECT_THROW(build_judge_prompt(" ", "x", cfg), Error);
    cfg.few_shot.pop_back();
    try {
        build_judge_prompt("a", "b", cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Validation);
    }
}

TEST(Prompt, DeterministicAndKeyedByModel) {
    const JudgeConfig cfg;
    const auto a = build_judge_prompt("a", "b", cfg), b = build_judge_prompt("a", "b", cfg);
    EXPECT_EQ(a.user, b.user);
    EXPECT_EQ(cache_key("m1", a), cache_key("m1", b));
    EXPECT_NE(cache_key("m1", a), cache_key("m2", a));
    EXPECT_EQ(cache_key("m1", a).size(), 64u);
}

TEST(Parse, StrictSixKeys) {
    const auto r = parse_judge_response("```json\n" + reply(2, 1) + "\n```");
    EXPECT_EQ(r.total(), 3);
    EXPECT_EQ(r.significant_total(), 2);
    for (const char* bad : {"nope", "{}", R"({"false_finding": 1})"}) {
        try {
            parse_judge_response(bad);
            ADD_FAILURE() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::MalformedResponse);
        }
    }
    auto j = json::parse(reply(0));
    j["extra"] = j.begin().value();
    EXPECT_THROW(parse_judge_response(j.dump()), Error);
}

TEST(Wire, RequestAndCompletion) {
    JudgeConfig cfg;
    const auto body = request_body(build_judge_prompt("a", "b", cfg), cfg);
    EXPECT_EQ(body["model"], cfg.model_name);
    EXPECT_EQ(body["messages"].size(), 2u);
    EXPECT_EQ(body["temperature"], 0.0);
    EXPECT_EQ(completion_text(R"({"choices":[{"message":{"content":"hi"}}]})"), "hi");
    EXPECT_THROW(completion_text(R"({"choices":[]})"), Error);
}

TEST(Retry, SucceedsOnSecondAttempt) {
    ScriptedClient client({"garbage", reply(1)});
    std::vector<std::chrono::milliseconds> sleeps;
    const auto v = judge_pair(client, "r1", "a", "b", JudgeConfig{}, no_sleep(&sleeps));
    EXPECT_EQ(v.attempts, 2);
    EXPECT_EQ(v.errors.total(), 1);
    EXPECT_EQ(client.calls(), 2u);
    ASSERT_EQ(sleeps.size(), 1u);
    EXPECT_EQ(sleeps[0], JudgeConfig{}.backoff_base);
}

TEST(Retry, ExhaustsAfterMaxRetriesPlusOne) {
    JudgeConfig cfg;
    cfg.max_retries = 2;
    ScriptedClient client({"", "bad", ""});
    std::vector<std::chrono::milliseconds> sleeps;
    try {
        judge_pair(client, "r1", "a", "b", cfg, no_sleep(&sleeps));
        FAIL();
    } catch (const ExhaustedRetries& e) {
        EXPECT_EQ(e.attempts(), 3);
        EXPECT_EQ(e.code(), ErrorCode::ExhaustedRetries);
    }
    EXPECT_EQ(client.calls(), 3u);
    ASSERT_EQ(sleeps.size(), 2u);
    EXPECT_EQ(sleeps[1], 2 * sleeps[0]);
}

TEST(Retry, PermanentTransportErrorPropagates) {
    class Refusing : public JudgeClient {
      public:
        int calls = 0;
        std::string complete(const PromptPayload&, const JudgeConfig&) override {
            ++calls;
            throw TransportError("401", false);
        }
    } client;
    EXPECT_THROW(judge_pair(client, "r", "a", "b", JudgeConfig{}, no_sleep()), TransportError);
    EXPECT_EQ(client.calls, 1);
}

TEST(Cache, SecondRunServedFromDisk) {
    const auto dir = fresh_dir("cache");
    const VerdictCache cache(dir);
    auto opts = no_sleep();
    opts.cache = &cache;
    ScriptedClient client({reply(3)});
    const auto first = judge_pair(client, "r1", "a", "b", JudgeConfig{}, opts);
    const auto second = judge_pair(client, "r1", "a", "b", JudgeConfig{}, opts);
    EXPECT_FALSE(first.from_cache);
    EXPECT_TRUE(second.from_cache);
    EXPECT_EQ(second.errors, first.errors);
    EXPECT_EQ(client.calls(), 1u);
    // Another model is another key.
    JudgeConfig other;
    other.model_name = "other";
    judge_pair(client, "r1", "a", "b", other, opts);
    EXPECT_EQ(client.calls(), 2u);
    std::filesystem::remove_all(dir);
}

TEST(JudgeAll, KeepsInputOrderUnderConcurrency) {
    class Echo : public JudgeClient {
      public:
        std::string complete(const PromptPayload& p, const JudgeConfig&) override {
            // Candidate text is a digit; it becomes the count.
            const auto pos = p.user.rfind("Candidate report: ");
            const int n = p.user[pos + 18] - '0';
            return json(ErrorReport().with(ErrorCategory::WrongLocation, Significance::Significant, n)).dump();
        }
    } client;
    std::vector<JudgeItem> items;
    for (int i = 0; i < 10; ++i) items.push_back({"r" + std::to_string(i), std::to_string(i), "ref"});
    const auto out = judge_all(client, items, JudgeConfig{}, no_sleep(), 4);
    ASSERT_EQ(out.size(), 10u);
    for (int i = 0; i < 10; ++i) {
        EXPECT_EQ(out[i].report_id, "r" + std::to_string(i));
        EXPECT_EQ(out[i].errors.total(), i);
    }
}

TEST(Transcript, AggregateOfFixture) {
    const auto verdicts = read_transcript(std::string(RADEVAL_SOURCE_DIR) + "/fixtures/verdicts.jsonl");
    const auto a = aggregate(verdicts);
    EXPECT_EQ(a.count, 8u);
    EXPECT_DOUBLE_EQ(a.mean_total, 1.75);
    EXPECT_DOUBLE_EQ(a.pct_error_free_total, 25.0);
    EXPECT_DOUBLE_EQ(a.pct_error_free_significant, 50.0);
    EXPECT_EQ(json(aggregate(verdicts)).dump(), json(a).dump());
}

TEST(Transcript, RawResponseOnlyRowsAreParsed) {
    const auto v = json{{"report_id", "x"}, {"raw_response", reply(2)}}.get<JudgeVerdict>();
    EXPECT_EQ(v.errors.total(), 2);
    EXPECT_THROW((json{{"report_id", "x"}, {"raw_response", "nah"}}.get<JudgeVerdict>()), Error);
    const auto round = json(v).get<JudgeVerdict>();
    EXPECT_EQ(round, v);
}

TEST(Aggregate, SignificantErrorFreeNeverBelowTotal) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> count(0, 2);
    for (int set = 0; set < 100; ++set) {
        std::vector<JudgeVerdict> vs(1 + rng() % 20);
        for (auto& v : vs) {
            ErrorReport::Counts c{};
            for (auto& row : c)
                for (auto& x : row) x = rng() % 4 == 0 ? count(rng) : 0;
            v.errors = ErrorReport(c);
        }
        const auto a = aggregate(vs);
        EXPECT_GE(a.pct_error_free_significant, a.pct_error_free_total);
        EXPECT_LE(a.mean_significant, a.mean_total);
    }
    EXPECT_THROW(aggregate({}), Error);
}

TEST(FewShot, ShippedConfigMatchesDefaults) {
    const auto j = read_json_file(std::string(RADEVAL_SOURCE_DIR) + "/config/few_shot.json");
    EXPECT_EQ(j.get<std::vector<FewShotExample>>(), default_few_shot());
    EXPECT_EQ(default_few_shot().size(), kFewShotCount);
}

TEST(Config, FromJsonOverrides) {
    const auto cfg = judge_config_from_json({{"model", "m"}, {"max_retries", 0}, {"timeout_ms", 5}});
    EXPECT_EQ(cfg.model_name, "m");
    EXPECT_EQ(cfg.max_retries, 0);
    EXPECT_EQ(cfg.timeout.count(), 5);
    EXPECT_THROW(judge_config_from_json(json::array()), Error);
}
