#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "radeval/cli.hpp"

using namespace radeval;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = RADEVAL_SOURCE_DIR;
const std::string kFixtures = kRoot + "/fixtures/";

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run_cli(std::vector<std::string> args, const cli::Hooks& hooks = {}) {
    args.insert(args.begin(), "radeval");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err, hooks);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("radeval_cli_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_lines(const fs::path& p, const std::vector<json>& rows) {
    std::ofstream out(p);
    for (const auto& r : rows) out << r.dump() << '\n';
}

std::string fixed_reply(int n) {
    return json(ErrorReport().with(ErrorCategory::WrongSeverity, Significance::Insignificant, n)).dump();
}

class CountingClient : public judge::JudgeClient {
  public:
    explicit CountingClient(std::atomic<int>* calls) : calls_(calls) {}
    std::string complete(const PromptPayload&, const judge::JudgeConfig&) override {
        ++*calls_;
        return fixed_reply(1);
    }

  private:
    std::atomic<int>* calls_;
};

cli::Hooks mock_hooks(std::atomic<int>* calls) {
    cli::Hooks h;
    h.make_client = [calls] { return std::make_unique<CountingClient>(calls); };
    h.sleep = [](std::chrono::milliseconds) {};
    return h;
}

}  // namespace

// Help text is part of the interface; set RADEVAL_UPDATE_SNAPSHOTS=1 to rewrite.
class HelpSnapshot : public ::testing::TestWithParam<std::string> {};

TEST_P(HelpSnapshot, MatchesFile) {
    const auto cmd = GetParam();
    std::vector<std::string> args;
    if (cmd != "radeval") args.push_back(cmd);
    args.push_back("--help");
    const auto r = run_cli(args);
    EXPECT_EQ(r.code, 0);
    const fs::path snap = fs::path(kRoot) / "tests" / "snapshots" / ("help_" + cmd + ".txt");
    if (std::getenv("RADEVAL_UPDATE_SNAPSHOTS")) {
        fs::create_directories(snap.parent_path());
        std::ofstream(snap, std::ios::binary) << r.out;
    }
    EXPECT_EQ(r.out, slurp(snap)) << "snapshot " << snap;
}

INSTANTIATE_TEST_SUITE_P(Cli, HelpSnapshot,
                         ::testing::Values("radeval", "parse", "synth", "lexical", "labels", "judge", "agree", "retrieve",
                                           "attend"));

TEST(Help, EverySubcommandListsGlobalFlags) {
    for (const char* cmd : {"parse", "synth", "lexical", "labels", "judge", "agree", "retrieve", "attend"}) {
        const auto r = run_cli({cmd, "--help"});
        for (const char* flag : {"--config", "--cache-dir", "--seed", "--out", "--jobs", "--pretty"})
            EXPECT_NE(r.out.find(flag), std::string::npos) << cmd << " " << flag;
    }
}

TEST(Help, NoKeyFlag) {
    // The judge key only comes from the environment.
    const auto r = run_cli({"judge", "--help"});
    EXPECT_EQ(r.out.find("key"), std::string::npos);
    EXPECT_EQ(run_cli({"judge", "--api-key", "x"}).code, cli::kUsageError);
}

TEST(ExitCodes, Usage) {
    EXPECT_EQ(run_cli({}).code, cli::kUsageError);
    EXPECT_EQ(run_cli({"bogus"}).code, cli::kUsageError);
    EXPECT_EQ(run_cli({"agree"}).code, cli::kUsageError);
    EXPECT_EQ(run_cli({"lexical", "--manifest", kFixtures + "does_not_exist.jsonl"}).code, cli::kUsageError);
    EXPECT_EQ(run_cli({"lexical"}).code, cli::kUsageError);
    const auto pairs = kFixtures + "pairs.jsonl";
    EXPECT_EQ(run_cli({"lexical", "--manifest", pairs, "--candidates", pairs, "--references", pairs}).code, cli::kUsageError);
    EXPECT_EQ(run_cli({"lexical", "--candidates", pairs}).code, cli::kUsageError);
    EXPECT_EQ(run_cli({"lexical", "--candidates", pairs, "--references", pairs}).code, cli::kOk);
    EXPECT_EQ(run_cli({"retrieve", "--images", kFixtures + "image_embeddings.jsonl", "--texts",
                       kFixtures + "text_embeddings.jsonl", "--direction", "sideways"})
                  .code,
              cli::kUsageError);
    EXPECT_EQ(run_cli({"--version"}).code, cli::kOk);
}

TEST(ExitCodes, Data) {
    const auto dir = scratch("data");
    std::ofstream(dir / "bad.jsonl") << "{not json\n";
    const auto r = run_cli({"lexical", "--manifest", (dir / "bad.jsonl").string()});
    EXPECT_EQ(r.code, cli::kDataError);
    EXPECT_FALSE(r.err.empty());
    // k beyond N
    EXPECT_EQ(run_cli({"retrieve", "--images", kFixtures + "image_embeddings.jsonl", "--texts",
                       kFixtures + "text_embeddings.jsonl", "--k", "9"})
                  .code,
              cli::kDataError);
    fs::remove_all(dir);
}

TEST(ExitCodes, Transport) {
    class Down : public judge::JudgeClient {
      public:
        std::string complete(const PromptPayload&, const judge::JudgeConfig&) override {
            throw TransportError("connection refused", false);
        }
    };
    cli::Hooks h;
    h.make_client = [] { return std::make_unique<Down>(); };
    const auto r = run_cli({"judge", "--manifest", kFixtures + "pairs.jsonl"}, h);
    EXPECT_EQ(r.code, cli::kTransportError);
}

TEST(Lexical, IdentityCorpusScoresOne) {
    const auto dir = scratch("identity");
    std::vector<json> rows;
    for (const auto& rec : read_jsonl(kFixtures + "pairs.jsonl"))
        rows.push_back({{"report_id", rec["report_id"]}, {"candidate", rec["reference"]}, {"reference", rec["reference"]}});
    write_lines(dir / "same.jsonl", rows);
    const auto r = run_cli({"lexical", "--manifest", (dir / "same.jsonl").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto doc = json::parse(r.out);
    for (const auto& row : doc["rows"]) {
        EXPECT_DOUBLE_EQ(row["bleu_1"].get<double>(), 1.0);
        EXPECT_DOUBLE_EQ(row["bleu_4"].get<double>(), 1.0);
        EXPECT_DOUBLE_EQ(row["rouge_l"]["f"].get<double>(), 1.0);
    }
    fs::remove_all(dir);
}

TEST(Judge, TranscriptMatchesLibraryAggregate) {
    const auto r = run_cli({"judge", "--transcript", kFixtures + "verdicts.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto doc = json::parse(r.out);
    EXPECT_EQ(doc["mode"], "transcript");
    const auto verdicts = judge::read_transcript(kFixtures + "verdicts.jsonl");
    EXPECT_EQ(doc["aggregate"], json(judge::aggregate(verdicts)));
    const auto pretty = run_cli({"judge", "--transcript", kFixtures + "verdicts.jsonl", "--pretty"});
    EXPECT_NE(pretty.out.find("error-free %: 25.00 (no significant errors 50.00)"), std::string::npos) << pretty.out;
}

TEST(Judge, LiveWithMockClientAndCache) {
    const auto dir = scratch("judge");
    std::atomic<int> calls{0};
    const auto cache = (dir / "cache").string();
    const auto first = run_cli({"judge", "--manifest", kFixtures + "pairs.jsonl", "--cache-dir", cache, "--jobs", "2"},
                               mock_hooks(&calls));
    ASSERT_EQ(first.code, 0) << first.err;
    const auto n = calls.load();
    EXPECT_EQ(n, static_cast<int>(read_jsonl(kFixtures + "pairs.jsonl").size()));
    const auto second = run_cli({"judge", "--manifest", kFixtures + "pairs.jsonl", "--cache-dir", cache}, mock_hooks(&calls));
    EXPECT_EQ(calls.load(), n);
    const auto doc = json::parse(second.out);
    for (const auto& v : doc["verdicts"]) EXPECT_TRUE(v["from_cache"].get<bool>());
    EXPECT_DOUBLE_EQ(doc["aggregate"]["mean_total"].get<double>(), 1.0);
    fs::remove_all(dir);
}

TEST(Agree, ToyPanel) {
    const auto r = run_cli({"agree", "--panel", kFixtures + "toy_panel.jsonl", "--scores", kFixtures + "toy_scores.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto doc = json::parse(r.out);
    EXPECT_DOUBLE_EQ(doc["kendall_tau_b"]["judge_vs_panel_mean"].get<double>(), 1.0);
    const auto& loo = doc["loo"];
    ASSERT_EQ(loo.size(), 3u);
    EXPECT_EQ(loo[0]["rater_id"], "r1");
    EXPECT_DOUBLE_EQ(loo[0]["mad_rater"].get<double>(), 1.5);
    EXPECT_DOUBLE_EQ(loo[0]["mad_judge"].get<double>(), 0.5);
    EXPECT_DOUBLE_EQ(loo[2]["mad_rater"].get<double>(), 0.0);
}

TEST(Synth, ByteIdenticalReruns) {
    const auto dir = scratch("synth");
    const auto a = (dir / "a.json").string(), b = (dir / "b.json").string(), c = (dir / "c.json").string();
    ASSERT_EQ(run_cli({"synth", "--manifest", kFixtures + "labels.jsonl", "--seed", "7", "--out", a}).code, 0);
    ASSERT_EQ(run_cli({"synth", "--manifest", kFixtures + "labels.jsonl", "--seed", "7", "--out", b}).code, 0);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_FALSE(slurp(a).empty());
    ASSERT_EQ(run_cli({"synth", "--manifest", kFixtures + "labels.jsonl", "--seed", "8", "--out", c}).code, 0);
    EXPECT_EQ(json::parse(slurp(c))["seed"], 8);
    fs::remove_all(dir);
}

TEST(Reruns, ByteIdenticalAcrossCommands) {
    const std::vector<std::vector<std::string>> cmds = {
        {"parse", "--manifest", kFixtures + "reports.jsonl", "--responses", kFixtures + "structuring_responses.jsonl"},
        {"lexical", "--manifest", kFixtures + "pairs.jsonl"},
        {"labels", "--manifest", kFixtures + "pairs.jsonl"},
        {"retrieve", "--images", kFixtures + "image_embeddings.jsonl", "--texts", kFixtures + "text_embeddings.jsonl"},
    };
    for (const auto& cmd : cmds) {
        const auto x = run_cli(cmd), y = run_cli(cmd);
        EXPECT_EQ(x.out, y.out) << cmd[0];
        EXPECT_FALSE(x.out.empty()) << cmd[0] << ": " << x.err;
    }
}

TEST(Retrieve, DefaultCutoffsClampToN) {
    const auto r = run_cli({"retrieve", "--images", kFixtures + "image_embeddings.jsonl", "--texts", kFixtures + "text_embeddings.jsonl"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto recall = json::parse(r.out)["recall"]["image_to_text"];
    EXPECT_TRUE(recall.contains("1") && recall.contains("5"));
    EXPECT_FALSE(recall.contains("10"));
}

TEST(Retrieve, BinaryAndJsonAgree) {
    const auto j = run_cli({"retrieve", "--images", kFixtures + "image_embeddings.jsonl", "--texts", kFixtures + "text_embeddings.jsonl"});
    const auto b = run_cli({"retrieve", "--images", kFixtures + "image_embeddings.bin", "--image-ids",
                            kFixtures + "image_embeddings.ids", "--texts", kFixtures + "text_embeddings.jsonl"});
    ASSERT_EQ(j.code, 0) << j.err;
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(json::parse(j.out)["recall"], json::parse(b.out)["recall"]);
}

TEST(Attend, WritesGridAndPng) {
    const auto dir = scratch("attend");
    const auto r = run_cli({"attend", "--tensor", kFixtures + "attention_spike.attn", "--word", "tube", "--background",
                            kFixtures + "background.pgm", "--heatmap-dir", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto doc = json::parse(r.out);
    ASSERT_EQ(doc["grids"].size(), 1u);
    EXPECT_EQ(doc["grids"][0]["argmax"], (json{{"row", 5}, {"col", 7}}));
    EXPECT_TRUE(fs::exists(doc["grids"][0]["png"].get<std::string>()));
    EXPECT_TRUE(fs::exists(doc["grids"][0]["json"].get<std::string>()));
    fs::remove_all(dir);
}

TEST(Config, ShippedFilesMatchCompiledDefaults) {
    const auto s = cli::load_settings(kRoot + "/config/radeval.json");
    EXPECT_EQ(s.headers, sections::HeaderMap::defaults());
    EXPECT_EQ(s.templates, synth::TemplateBank::defaults());
    EXPECT_EQ(s.lexicon, labels::Lexicon::defaults());
    EXPECT_EQ(s.judge.few_shot, judge::default_few_shot());
    EXPECT_EQ(s.judge.model_name, judge::JudgeConfig{}.model_name);
    ASSERT_EQ(s.structuring_examples.size(), 1u);
    EXPECT_EQ(s.structuring_examples[0].input, sections::default_structuring_example().input);
}

TEST(Config, BadConfigIsDataError) {
    const auto dir = scratch("cfg");
    std::ofstream(dir / "c.json") << R"({"templates": {"positive": []}})";
    const auto r = run_cli({"synth", "--manifest", kFixtures + "labels.jsonl", "--config", (dir / "c.json").string()});
    EXPECT_EQ(r.code, cli::kDataError);
    fs::remove_all(dir);
}
