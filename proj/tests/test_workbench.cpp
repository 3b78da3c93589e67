#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "qslm/workbench/cli.hpp"
#include "qslm/workbench/datasets.hpp"
#include "qslm/workbench/fixtures.hpp"
#include "qslm/workbench/run_config.hpp"
#include "qslm/workbench/tokenizer.hpp"
#include "test_util.hpp"

using namespace qslm;
using qslm::testing::fixture;
using qslm::testing::TempDir;
using nlohmann::ordered_json;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

CliResult invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "qslm");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliResult r;
    r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::filesystem::path& p) { return read_text_file(p); }

ordered_json load_json(const std::filesystem::path& p) { return ordered_json::parse(slurp(p)); }

std::string toy_ckpt() { return fixture("toy_ckpt").string(); }
std::string corpus_test() { return fixture("corpus_test.txt").string(); }

}  // namespace

TEST(Tokenizer, RoundTripAndUnknown) {
    const Tokenizer tok = Tokenizer::fit("ab");
    EXPECT_EQ(tok.vocab_size(), 3u);
    EXPECT_EQ(tok.encode("ab"), (std::vector<Token>{1, 2}));
    EXPECT_EQ(tok.encode("bz"), (std::vector<Token>{2, Tokenizer::kUnknown}));
    EXPECT_EQ(tok.decode(tok.encode("abba")), "abba");
    EXPECT_EQ(tok.decode({0}), "?");
    EXPECT_THROW(tok.decode({3}), InputError);

    const std::string text = read_text_file(fixture("corpus_train.txt"));
    const Tokenizer t2 = Tokenizer::fit(text);
    EXPECT_EQ(t2.decode(t2.encode(text)), text);
    EXPECT_EQ(Tokenizer(t2.bytes()), t2);
}

TEST(Datasets, ClassificationTsv) {
    const auto rows = parse_classification_tsv("good day\t1\nbad\tday\t0\n\n", "mem");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].text, "good day");
    EXPECT_EQ(rows[1].text, "bad\tday");  // the label follows the last tab
    EXPECT_EQ(rows[1].label, 0);
    EXPECT_THROW(format_classification_tsv(rows), InputError);  // a tab in the text cannot be written back
    const std::vector<TextExample> plain{rows[0], {"so so", 0}};
    const auto again = parse_classification_tsv(format_classification_tsv(plain), "again");
    ASSERT_EQ(again.size(), 2u);
    EXPECT_EQ(again[1].text, "so so");
    EXPECT_EQ(class_count(rows), 2u);

    try {
        parse_classification_tsv("ok\t1\nno label here\n", "f.tsv");
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("f.tsv:2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_classification_tsv("x\tone\n", "f"), InputError);
    EXPECT_THROW(parse_classification_tsv("x\t-1\n", "f"), InputError);
    EXPECT_THROW(parse_classification_tsv("", "f"), InputError);
    EXPECT_THROW(read_classification_tsv("/nonexistent/file.tsv"), IoError);
}

TEST(Fixtures, SentimentGeneratorIsDeterministicAndSeparable) {
    const auto a = make_sentiment_examples(100, 5);
    EXPECT_EQ(format_classification_tsv(a), format_classification_tsv(make_sentiment_examples(100, 5)));
    EXPECT_NE(format_classification_tsv(a), format_classification_tsv(make_sentiment_examples(100, 6)));
    std::size_t pos = 0;
    for (const auto& ex : a) {
        std::istringstream words(ex.text);
        std::string w;
        bool has_pos = false, has_neg = false;
        while (words >> w) {
            for (auto k : kPositiveWords) has_pos = has_pos || w == k;
            for (auto k : kNegativeWords) has_neg = has_neg || w == k;
        }
        EXPECT_EQ(has_pos, ex.label == 1) << ex.text;
        EXPECT_EQ(has_neg, ex.label == 0) << ex.text;
        pos += ex.label;
    }
    EXPECT_EQ(pos, 50u);
}

TEST(Fixtures, CheckedInFilesMatchGenerator) {
    EXPECT_EQ(slurp(fixture("sentiment_train.tsv")), format_classification_tsv(make_sentiment_examples(400, 11)));
    EXPECT_EQ(slurp(fixture("sentiment_test.tsv")), format_classification_tsv(make_sentiment_examples(200, 12)));
}

TEST(RunConfig, JsonRoundTripAndUnknownKeys) {
    RunConfig c;
    c.task = TaskKind::Generation;
    c.checkpoint = "ck";
    c.ladder = {12, 6, 3};
    c.const_a = 1.5;
    c.const_m_frac = 0.4;
    c.alpha_sweep = {0.0, 0.5};
    c.seed = 42;
    c.model.embed_dim = 16;
    c.epochs = 3;
    const RunConfig back = run_config_from_json(run_config_to_json(c));
    EXPECT_EQ(run_config_to_json(back).dump(), run_config_to_json(c).dump());

    EXPECT_THROW(run_config_from_json(ordered_json::parse(R"({"alpah": 0.5})")), InputError);
    EXPECT_THROW(run_config_from_json(ordered_json::parse(R"({"model": {"width": 3}})")), InputError);
    EXPECT_THROW(run_config_from_json(ordered_json::parse(R"({"alpha": "high"})")), InputError);
    EXPECT_THROW(run_config_from_json(ordered_json::parse(R"({"task": "translate"})")), InputError);
    EXPECT_THROW(run_config_from_json(ordered_json::parse("[1]")), InputError);

    const auto s = run_config_from_json(ordered_json::parse(R"({"ladder": "8,4", "alpha_sweep": "0,1"})"));
    EXPECT_EQ(s.ladder, (std::vector<int>{8, 4}));
    EXPECT_EQ(s.alpha_sweep, (std::vector<double>{0.0, 1.0}));
    EXPECT_EQ(parse_task("classify"), TaskKind::Classification);
    EXPECT_EQ(parse_task("generation"), TaskKind::Generation);
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(invoke({}).code, 2);
    EXPECT_EQ(invoke({"bogus"}).code, 2);
    EXPECT_EQ(invoke({"--help"}).code, 0);
    EXPECT_EQ(invoke({"search", "--ladder", "16,8", "--nope"}).code, 2);

    TempDir tmp("usage");
    const auto r = invoke({"train", "--task", "classify", "--data", (tmp / "missing.tsv").string(), "--out",
                        (tmp / "ck").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("missing.tsv"), std::string::npos) << r.err;
    EXPECT_EQ(invoke({"train", "--task", "classify", "--out", (tmp / "ck").string()}).code, 2);
    EXPECT_EQ(invoke({"search", "--ckpt", toy_ckpt(), "--eval-data", corpus_test(), "--out", tmp.path().string()}).code,
              2);  // no --const-a
    EXPECT_EQ(invoke({"eval", "--ckpt", (tmp / "nothing").string(), "--eval-data", corpus_test()}).code, 2);
    EXPECT_EQ(invoke({"analyze", "--descriptor", "gpt-9"}).code, 2);

    // Wrong task for the checkpoint's head.
    EXPECT_EQ(invoke({"eval", "--ckpt", toy_ckpt(), "--task", "classify", "--eval-data",
                   fixture("sentiment_test.tsv").string()})
                  .code,
              2);
}

TEST(Cli, AnalyzeDescriptorAndCheckpoint) {
    TempDir tmp("analyze");
    const auto d = invoke({"analyze", "--descriptor", "spikegpt-216m", "--out", tmp.path().string()});
    ASSERT_EQ(d.code, 0) << d.err;
    const auto j = load_json(tmp / "analysis.json");
    EXPECT_NEAR(j["attention_share"].get<double>(), 0.64, 0.005);
    EXPECT_EQ(j["blocks"].size(), 20u);

    const auto c = invoke({"analyze", "--ckpt", toy_ckpt()});
    ASSERT_EQ(c.code, 0) << c.err;
    const auto k = ordered_json::parse(c.out);
    ASSERT_EQ(k["blocks"].size(), 5u);
    double sum = 0.0;
    for (const auto& b : k["blocks"]) sum += b["proportion"].get<double>();
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Cli, TrainIsReproducible) {
    TempDir tmp("train");
    const std::vector<std::string> common{"train", "--task", "classify", "--data",
                                          fixture("sentiment_test.tsv").string(), "--embed-dim", "8", "--blocks", "1",
                                          "--context", "32", "--epochs", "2"};
    auto go = [&](const std::string& dir, const std::string& seed) {
        auto args = common;
        args.insert(args.end(), {"--seed", seed, "--out", (tmp / dir).string()});
        return invoke(args);
    };
    ASSERT_EQ(go("a", "3").code, 0);
    ASSERT_EQ(go("b", "3").code, 0);
    ASSERT_EQ(go("c", "4").code, 0);
    EXPECT_EQ(slurp(tmp / "a" / "weights.bin"), slurp(tmp / "b" / "weights.bin"));
    EXPECT_EQ(slurp(tmp / "a" / "manifest.json"), slurp(tmp / "b" / "manifest.json"));
    EXPECT_NE(slurp(tmp / "a" / "weights.bin"), slurp(tmp / "c" / "weights.bin"));
    const Checkpoint ck = load_checkpoint(tmp / "a");
    EXPECT_EQ(ck.config.head, TaskHead::classification(2));
    EXPECT_EQ(ck.metadata["trained"]["seed"], 3);
}

TEST(Cli, DivergentTrainingExitsNumeric) {
    TempDir tmp("diverge");
    const auto r = invoke({"train", "--task", "generate", "--data", corpus_test(), "--embed-dim", "8", "--blocks", "1",
                        "--context", "16", "--epochs", "3", "--lr", "1e30", "--out", (tmp / "ck").string()});
    EXPECT_EQ(r.code, 3) << r.out << r.err;
}

TEST(Cli, SensitivityOutputs) {
    TempDir tmp("sens");
    const auto r = invoke({"sensitivity", "--ckpt", toy_ckpt(), "--eval-data", corpus_test(), "--ladder", "8,4",
                        "--uniform-attention", "--out", tmp.path().string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto profile = profile_from_csv(slurp(tmp / "sensitivity.csv"), TaskKind::Generation);
    EXPECT_EQ(profile.levels, (std::vector<int>{32, 8, 4}));
    const auto j = load_json(tmp / "sensitivity.json");
    EXPECT_EQ(profile_from_json(j), profile);

    const auto e = ordered_json::parse(invoke({"eval", "--ckpt", toy_ckpt(), "--eval-data", corpus_test()}).out);
    for (const auto& c : profile.cells) {
        if (c.bits == 32) {
            EXPECT_EQ(c.metric, e["perf"].get<double>()) << c.block.name();
        }
    }
    EXPECT_EQ(load_json(tmp / "sensitivity_plot.json")["series"].size(), 5u);
    const auto& ua = j["uniform_attention"];
    ASSERT_EQ(ua.size(), 3u);
    EXPECT_EQ(ua[0]["metric"], e["perf"]);
    EXPECT_GT(ua[0]["mem_bytes"].get<double>(), ua[1]["mem_bytes"].get<double>());
    EXPECT_GT(ua[1]["mem_bytes"].get<double>(), ua[2]["mem_bytes"].get<double>());
}

TEST(Cli, SearchReportAndReload) {
    TempDir tmp("search");
    auto go = [&](const std::string& dir) {
        return invoke({"search", "--ckpt", toy_ckpt(), "--eval-data", corpus_test(), "--ladder", "16,8,4", "--const-a",
                    "2", "--const-m-frac", "0.5", "--alpha-sweep", "0,0.5,1", "--seed", "1", "--out",
                    (tmp / dir).string()});
    };
    const auto a = go("a");
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(go("b").code, 0);
    EXPECT_EQ(slurp(tmp / "a" / "trace.jsonl"), slurp(tmp / "b" / "trace.jsonl"));
    EXPECT_EQ(slurp(tmp / "a" / "report.json"), slurp(tmp / "b" / "report.json"));

    const auto report = load_json(tmp / "a" / "report.json");
    EXPECT_EQ(report["schema"], "qslm-report-1");
    EXPECT_EQ(report["power"], "not measured");
    EXPECT_EQ(report["cases"].size(), 3u);
    EXPECT_TRUE(report["post_hoc"]["met"].get<bool>());
    EXPECT_TRUE(report["post_hoc"]["matches_trace"].get<bool>());

    std::ifstream in(tmp / "a" / "trace.jsonl");
    const SearchTrace t = read_trace(in);
    ASSERT_TRUE(t.selected);
    const auto& sel = t.candidates[*t.selected];
    EXPECT_EQ(report["selected"]["candidate"], sel.index);
    EXPECT_DOUBLE_EQ(report["memory_reduction_pct"].get<double>(),
                     (1.0 - sel.stats.mem_bytes / t.baseline.mem_bytes) * 100.0);
    EXPECT_LE(sel.stats.mem_bytes, 0.5 * t.baseline.mem_bytes);

    // Reloaded quantized checkpoint evaluates to the recorded perf.
    const auto e = invoke({"eval", "--ckpt", (tmp / "a" / "quantized").string(), "--eval-data", corpus_test()});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_NEAR(ordered_json::parse(e.out)["perf"].get<double>(), sel.stats.perf, 1e-6);
    EXPECT_EQ(ordered_json::parse(e.out)["mem_bytes"].get<double>(), sel.stats.mem_bytes);

    // Applying the assignment to the original checkpoint gives the same number.
    write_json_file(tmp / "assign.json", assignment_to_json(sel.assignment));
    const auto f = invoke({"eval", "--ckpt", toy_ckpt(), "--eval-data", corpus_test(), "--assignment",
                        (tmp / "assign.json").string()});
    ASSERT_EQ(f.code, 0) << f.err;
    const auto fj = ordered_json::parse(f.out);
    EXPECT_EQ(fj["perf"].get<double>(), sel.stats.perf);
    EXPECT_EQ(fj["mem_bytes"].get<double>(), sel.stats.mem_bytes);
}

TEST(Cli, InfeasibleSearchExitsOne) {
    TempDir tmp("infeasible");
    const auto r = invoke({"search", "--ckpt", toy_ckpt(), "--eval-data", corpus_test(), "--ladder", "8", "--const-a",
                        "0.5", "--const-m-bytes", "1", "--out", tmp.path().string()});
    EXPECT_EQ(r.code, 1) << r.err;
    const auto report = load_json(tmp / "report.json");
    EXPECT_TRUE(report["selected"].is_null());
    std::ifstream in(tmp / "trace.jsonl");
    EXPECT_GT(read_trace(in).candidates.size(), 1u);
}

TEST(Cli, ReselectFromTrace) {
    TempDir tmp("reselect");
    const auto r = invoke({"search", "--from-trace", fixture("alpha_trace.jsonl").string(), "--alpha-sweep", "0,0.5,1",
                        "--out", tmp.path().string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto cases = load_json(tmp / "report.json")["cases"];
    ASSERT_EQ(cases.size(), 3u);
    EXPECT_EQ(cases[0]["candidate"], 1);
    EXPECT_EQ(cases[1]["candidate"], 2);
    EXPECT_EQ(cases[2]["candidate"], 2);
}

TEST(Cli, FlagsOverrideConfigFile) {
    TempDir tmp("config");
    write_text_file(tmp / "run.json", ordered_json{{"alpha", 0.25},
                                                   {"ladder", {16, 8}},
                                                   {"const_a", 3.0},
                                                   {"const_m_frac", 0.9},
                                                   {"checkpoint", toy_ckpt()},
                                                   {"eval_data", corpus_test()}}
                                          .dump());
    const auto r = invoke({"search", "--config", (tmp / "run.json").string(), "--alpha", "0.75", "--out",
                        (tmp / "o").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto run_cfg = load_json(tmp / "o" / "report.json")["run"];
    EXPECT_EQ(run_cfg["alpha"], 0.75);
    EXPECT_EQ(run_cfg["ladder"], (std::vector<int>{16, 8}));
    EXPECT_EQ(run_cfg["const_a"], 3.0);

    write_text_file(tmp / "bad.json", R"({"ladder": [16, 8], "typo": 1})");
    EXPECT_EQ(invoke({"search", "--config", (tmp / "bad.json").string()}).code, 2);
}
