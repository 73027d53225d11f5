#include "oracles.hpp"
#include "test_support.hpp"

#include "sqlsynth/cli.hpp"
#include "sqlsynth/dataset_io.hpp"
#include "sqlsynth/evaluation.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sstream>

using namespace sqlsynth;
using testing_support::TempDir;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "sqlsynth");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    Run r;
    r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

nlohmann::json last_json_line(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::string last;
    while (std::getline(in, line)) {
        if (!line.empty()) last = line;
    }
    return nlohmann::json::parse(last);
}

std::string replay_store() { return testing_support::fixture("library_replay.jsonl").string(); }

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli({}).code, 2);
    EXPECT_EQ(cli({"frobnicate"}).code, 2);
    EXPECT_EQ(cli({"subschemas", "--db"}).code, 2);
    EXPECT_EQ(cli({"subschemas", "--db", "/no/such/file.sqlite"}).code, 2);
    const auto help = cli({"--help"});
    EXPECT_EQ(help.code, 0);
    EXPECT_NE(help.out.find("export-sft"), std::string::npos);
}

TEST(Cli, RuntimeErrorsExitOneWithJson) {
    TempDir dir;
    const auto db = testing_support::build_fixture_db(dir, "library");
    const auto r = cli({"build-db", "--script", testing_support::fixture("library.sql").string(), "--out", db.string()});
    EXPECT_EQ(r.code, 1);
    const auto j = last_json_line(r.err);
    EXPECT_EQ(j["command"], "build-db");
    EXPECT_NE(j["error"].get<std::string>().find("overwrite"), std::string::npos);

    const auto bad = cli({"subschemas", "--db", db.string(), "-w", "0"});
    EXPECT_EQ(bad.code, 1);
    // Strict replay needs an existing store.
    const auto no_store =
        cli({"generate", "--db", db.string(), "--out", (dir / "g").string(), "--replay", (dir / "none.jsonl").string()});
    EXPECT_EQ(no_store.code, 1);
}

TEST(Cli, SubschemaCounts) {
    TempDir dir;
    const auto lib = testing_support::build_fixture_db(dir, "library");
    EXPECT_EQ(last_json_line(cli({"subschemas", "--db", lib.string()}).out)["subschemas"], 21);
    const auto ca = testing_support::build_fixture_db(dir, "california_schools");
    EXPECT_EQ(last_json_line(cli({"subschemas", "--db", ca.string()}).out)["subschemas"], 2249);
    EXPECT_EQ(last_json_line(cli({"subschemas", "--db", ca.string(), "--tc", "3,2,1", "-s", "1"}).out)
                  ["subschemas"],
              11420);

    const auto r = cli({"subschemas", "--db", lib.string(), "--out", (dir / "ss").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_subschemas_jsonl(dir / "ss" / "subschemas.jsonl").size(), 21u);
    const auto manifest = nlohmann::ordered_json::parse(testing_support::read_text(dir / "ss" / "manifest.json"));
    EXPECT_EQ(manifest["command"], "subschemas");
    EXPECT_EQ(manifest["config"]["subschemas"]["w"], 3);
    EXPECT_EQ(manifest["config_digest"], sha256_hex(manifest["config"].dump()));
}

TEST(Cli, ReplayedGenerationIsByteIdentical) {
    TempDir dir;
    const auto db = testing_support::build_fixture_db(dir, "library");
    std::string first_examples;
    for (const auto* run : {"a", "b"}) {
        const auto gen_dir = dir / (std::string("gen-") + run);
        const auto bal_dir = dir / (std::string("bal-") + run);
        const auto g = cli({"generate", "--db", db.string(), "--out", gen_dir.string(), "--replay", replay_store(), "--rps", "0"});
        ASSERT_EQ(g.code, 0) << g.err;
        const auto gc = last_json_line(g.out);
        EXPECT_EQ(gc["examples"], 181);
        EXPECT_EQ(gc["provider_calls"], 0);
        const auto b = cli({"balance", "--db", db.string(), "--out", bal_dir.string(), "--examples",
                            (gen_dir / "examples.jsonl").string(), "--replay", replay_store(), "--rps", "0", "--jobs", "3"});
        ASSERT_EQ(b.code, 0) << b.err;
        EXPECT_EQ(last_json_line(b.out)["examples"], 195);
        const auto text = testing_support::read_text(bal_dir / "examples.jsonl");
        if (first_examples.empty()) {
            first_examples = text;
        } else {
            EXPECT_EQ(text, first_examples);
        }
    }
    const auto examples = read_jsonl(dir / "bal-a" / "examples.jsonl");
    for (const auto& e : examples) {
        EXPECT_TRUE(e.executable) << e.id;
        EXPECT_TRUE(e.judge_verdict) << e.id;
    }

    const auto st = cli({"stats", "--db", db.string(), "--out", (dir / "st").string(), "--examples",
                         (dir / "bal-a" / "examples.jsonl").string()});
    ASSERT_EQ(st.code, 0) << st.err;
    EXPECT_EQ(last_json_line(st.out)["examples"]["unused_columns"], 0);
}

TEST(Cli, EvaluateMatchesOracle) {
    TempDir dir;
    const auto db = testing_support::build_fixture_db(dir, "library");
    const auto gold = read_gold(testing_support::fixture("library_questions.jsonl"));
    std::vector<PredictionRecord> preds;
    const auto& pairs = oracle::library_result_pairs();
    for (std::size_t i = 0; i < gold.size(); ++i) {
        preds.push_back({gold[i].question_id, {pairs[i].first, pairs[i + 10].first, gold[i].sql}});
    }
    write_predictions_jsonl(dir / "pred.jsonl", preds);
    const auto r = cli({"evaluate", "--pred", (dir / "pred.jsonl").string(), "--gold",
                        testing_support::fixture("library_questions.jsonl").string(), "--db", db.string(), "--out",
                        (dir / "ev").string(), "--jobs", "4"});
    ASSERT_EQ(r.code, 0) << r.err;

    double ex_ub = 0, ex_lb = 0, f1_ub = 0, f1_lb = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const auto g = execute_query(gold[i].sql, db);
        ASSERT_EQ(g.status, ExecStatus::ok);
        const bool ordered = gold[i].sql.find("ORDER BY") != std::string::npos &&
                             gold[i].sql.find("OVER (") == std::string::npos;
        int best = 0, worst = 1;
        double fbest = 0, fworst = 1;
        for (const auto& sql : preds[i].candidates) {
            const auto p = execute_query(sql, db);
            const int ex = p.status == ExecStatus::ok ? oracle::execution_accuracy(p.table, g.table, ordered) : 0;
            const double f = p.status == ExecStatus::ok ? oracle::greedy_soft_f1(p.table, g.table) : 0.0;
            best = std::max(best, ex);
            worst = std::min(worst, ex);
            fbest = std::max(fbest, f);
            fworst = std::min(fworst, f);
        }
        ex_ub += best;
        ex_lb += worst;
        f1_ub += fbest;
        f1_lb += fworst;
    }
    const auto agg = nlohmann::json::parse(testing_support::read_text(dir / "ev" / "aggregate.json"));
    const double n = double(gold.size());
    EXPECT_NEAR(agg["ex_ub"].get<double>(), 100 * ex_ub / n, 1e-9);
    EXPECT_NEAR(agg["ex_lb"].get<double>(), 100 * ex_lb / n, 1e-9);
    EXPECT_NEAR(agg["f1_ub"].get<double>(), 100 * f1_ub / n, 1e-9);
    EXPECT_NEAR(agg["f1_lb"].get<double>(), 100 * f1_lb / n, 1e-9);
    EXPECT_EQ(agg["questions"], 10);
    std::istringstream scores(testing_support::read_text(dir / "ev" / "scores.jsonl"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(scores, line)) ++lines;
    EXPECT_EQ(lines, 10u);
}

TEST(Cli, SplitLinkAndExport) {
    TempDir dir;
    const auto db = testing_support::build_fixture_db(dir, "library");
    ASSERT_EQ(cli({"generate", "--db", db.string(), "--out", (dir / "g").string(), "--replay", replay_store(), "--rps", "0"}).code, 0);
    const auto examples = (dir / "g" / "examples.jsonl").string();
    const auto sp = cli({"split", "--db", db.string(), "--out", (dir / "s").string(), "--examples", examples, "--ratios",
                         "0.8,0.1,0.1", "--seed", "3"});
    ASSERT_EQ(sp.code, 0) << sp.err;
    const auto counts = last_json_line(sp.out);
    EXPECT_EQ(counts["train"]["examples"].get<int>() + counts["dev"]["examples"].get<int>() +
                  counts["test"]["examples"].get<int>(),
              181);
    EXPECT_EQ(counts["train"]["examples"], split_sizes(181, {0.8, 0.1, 0.1})[0]);

    const auto train = (dir / "s" / "train.jsonl").string();
    const auto ln = cli({"link", "--db", db.string(), "--out", (dir / "l").string(), "--corpus", examples, "--questions", train});
    ASSERT_EQ(ln.code, 0) << ln.err;
    EXPECT_EQ(last_json_line(ln.out)["metrics"]["TR"].get<double>(), 100.0);

    const auto ex = cli({"export-sft", "--db", db.string(), "--out", (dir / "x").string(), "--examples", train, "--all-configs",
                         "--filtered", (dir / "l" / "filtered.jsonl").string()});
    ASSERT_EQ(ex.code, 0) << ex.err;
    const auto sizes = last_json_line(ex.out);
    EXPECT_EQ(sizes.size(), 6u);
    for (const auto& [name, n] : sizes.items()) EXPECT_EQ(n, counts["train"]["examples"]) << name;

    // T2SWS without linked schemas fails with the offending ids.
    const auto missing = cli({"export-sft", "--db", db.string(), "--out", (dir / "y").string(), "--examples", examples,
                              "--kind", "t2sws", "--filtered", (dir / "l" / "filtered.jsonl").string()});
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.err.find("no filtered schema"), std::string::npos);
}

TEST(Cli, ConfigFileSuppliesOptions) {
    TempDir dir;
    const auto db = testing_support::build_fixture_db(dir, "library");
    testing_support::write_text(dir / "cfg.toml", "[subschemas]\nwindow = 2\nstride = 1\n");
    const auto via_file = cli({"--config", (dir / "cfg.toml").string(), "subschemas", "--db", db.string()});
    const auto via_flags = cli({"subschemas", "--db", db.string(), "-w", "2", "-s", "1"});
    ASSERT_EQ(via_file.code, 0) << via_file.err;
    EXPECT_EQ(last_json_line(via_file.out), last_json_line(via_flags.out));
}
