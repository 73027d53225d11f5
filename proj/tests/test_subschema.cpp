#include "sqlsynth/subschema.hpp"
#include "sqlsynth/text_util.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace sqlsynth;
using testing_support::TempDir;

namespace {

// Direct transcription of the window loop, kept separate from the library's closed form.
std::vector<std::vector<int>> simulate_windows(int n, int w, int s, WindowRule rule) {
    std::vector<std::vector<int>> out;
    if (n == 0) return {{}};
    for (int i = 0; i < n; i += s) {
        std::vector<int> portion;
        for (int j = i; j < std::min(n, i + w); ++j) portion.push_back(j);
        out.push_back(portion);
        if (rule == WindowRule::stop_at_tail && i + w >= n) break;
    }
    return out;
}

std::vector<std::string> names(int n) {
    std::vector<std::string> v;
    for (int i = 0; i < n; ++i) v.push_back("c" + std::to_string(i));
    return v;
}

// Reachability by repeated relaxation over an adjacency matrix.
struct BruteGraph {
    std::vector<std::vector<bool>> adj;

    bool connected(const std::vector<int>& subset, bool induced) const {
        const auto n = adj.size();
        std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) reach[i][j] = i == j || adj[i][j];
        }
        std::vector<bool> allowed(n, !induced);
        for (int x : subset) allowed[static_cast<std::size_t>(x)] = true;
        for (std::size_t k = 0; k < n; ++k) {
            if (!allowed[k]) continue;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (reach[i][k] && reach[k][j]) reach[i][j] = true;
                }
            }
        }
        for (int a : subset) {
            for (int b : subset) {
                if (!reach[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)]) return false;
            }
        }
        return true;
    }
};

DatabaseSchema fixture_schema(const TempDir& dir, std::string_view stem) {
    IntrospectOptions opts;
    opts.collect_samples = false;
    return introspect_schema(testing_support::build_fixture_db(dir, stem), std::nullopt, opts);
}

// Independent count: brute-force subset connectivity times simulated window counts.
std::uint64_t oracle_count(const DatabaseSchema& schema, const std::vector<std::size_t>& tc, std::size_t w,
                           std::size_t s, WindowRule rule, Joinability j) {
    const auto n = schema.tables.size();
    BruteGraph g{std::vector<std::vector<bool>>(n, std::vector<bool>(n, false))};
    auto index = [&](const std::string& t) {
        for (std::size_t i = 0; i < n; ++i) {
            if (iequals(schema.tables[i].name, t)) return i;
        }
        throw std::logic_error("table");
    };
    for (const auto& fk : schema.foreign_keys) {
        const auto a = index(fk.from_table);
        const auto b = index(fk.to_table);
        if (a != b) g.adj[a][b] = g.adj[b][a] = true;
    }
    std::vector<std::uint64_t> windows(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto conn = connection_columns(schema, schema.tables[i].name).size();
        const auto non_conn = schema.tables[i].columns.size() - conn;
        windows[i] = simulate_windows(static_cast<int>(non_conn), static_cast<int>(w), static_cast<int>(s), rule).size();
    }
    std::uint64_t total = 0;
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
        std::vector<int> subset;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (1u << i)) subset.push_back(static_cast<int>(i));
        }
        if (std::find(tc.begin(), tc.end(), subset.size()) == tc.end()) continue;
        if (!g.connected(subset, j == Joinability::induced_subgraph)) continue;
        std::uint64_t product = 1;
        for (int i : subset) product *= windows[static_cast<std::size_t>(i)];
        total += product;
    }
    return total;
}

DatabaseSchema synthetic_schema(std::mt19937_64& rng) {
    DatabaseSchema s;
    s.db_id = "synthetic";
    const int tables = std::uniform_int_distribution<int>(1, 5)(rng);
    for (int t = 0; t < tables; ++t) {
        TableDef def;
        def.name = "t" + std::to_string(t);
        const int cols = std::uniform_int_distribution<int>(1, 12)(rng);
        for (int c = 0; c < cols; ++c) def.columns.push_back({"c" + std::to_string(c), "TEXT", {}, {}});
        if (rng() % 2) def.primary_key = {"c0"};
        s.tables.push_back(std::move(def));
    }
    for (int a = 0; a < tables; ++a) {
        for (int b = 0; b < tables; ++b) {
            if (a == b || rng() % 3 != 0) continue;
            const auto& from = s.tables[static_cast<std::size_t>(a)];
            const auto col = from.columns[rng() % from.columns.size()].name;
            ForeignKey fk{from.name, col, s.tables[static_cast<std::size_t>(b)].name, "c0"};
            if (std::find(s.foreign_keys.begin(), s.foreign_keys.end(), fk) == s.foreign_keys.end()) {
                s.foreign_keys.push_back(fk);
            }
        }
    }
    return s;
}

}  // namespace

TEST(TableLevel, StarSchemaUnderBothReadings) {
    TempDir dir;
    const auto schema = fixture_schema(dir, "california_schools");
    const auto induced = gen_table_level(schema, {3, 2, 1}, Joinability::induced_subgraph);
    ASSERT_EQ(induced.size(), 6u);
    std::set<std::vector<std::string>> got;
    for (const auto& t : induced) got.insert(t.tables);
    EXPECT_TRUE(got.contains({"frpm", "schools"}));
    EXPECT_TRUE(got.contains({"satscores", "schools"}));
    EXPECT_TRUE(got.contains({"frpm", "satscores", "schools"}));
    EXPECT_FALSE(got.contains({"frpm", "satscores"}));
    // frpm and satscores share a path through schools in the full graph.
    EXPECT_EQ(gen_table_level(schema, {3, 2, 1}, Joinability::path_in_schema).size(), 7u);
}

TEST(TableLevel, SingleTable) {
    DatabaseSchema s;
    s.tables.push_back({"only", {{"a", "", {}, {}}}, {}});
    const auto out = gen_table_level(s, {1});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].tables, std::vector<std::string>{"only"});
}

TEST(TableLevel, PathGraphPairs) {
    DatabaseSchema s;
    for (const auto* n : {"A", "B", "C"}) s.tables.push_back({n, {{"id", "", {}, {}}, {"ref", "", {}, {}}}, {"id"}});
    s.foreign_keys = {{"A", "ref", "B", "id"}, {"B", "ref", "C", "id"}};
    const auto out = gen_table_level(s, {2}, Joinability::induced_subgraph);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].tables, (std::vector<std::string>{"A", "B"}));
    EXPECT_EQ(out[1].tables, (std::vector<std::string>{"B", "C"}));
}

TEST(TableLevel, MatchesBruteForceConnectivityOnRandomSchemas) {
    std::mt19937_64 rng(7);
    for (int round = 0; round < 200; ++round) {
        const auto schema = synthetic_schema(rng);
        for (auto j : {Joinability::induced_subgraph, Joinability::path_in_schema}) {
            SubSchemaConfig cfg;
            cfg.joinability = j;
            cfg.table_counts_tc.clear();
            for (std::size_t k = 1; k <= std::min<std::size_t>(3, schema.tables.size()); ++k) {
                cfg.table_counts_tc.push_back(k);
            }
            for (auto rule : {WindowRule::stop_at_tail, WindowRule::full_scan}) {
                cfg.window_rule = rule;
                EXPECT_EQ(count_sub_schemas(schema, cfg),
                          oracle_count(schema, cfg.table_counts_tc, cfg.window_w, cfg.stride_s, rule, j));
            }
        }
    }
}

TEST(ColumnWindows, LiteralLoopExamples) {
    const auto five = column_windows(names(5), 3, 2, WindowRule::full_scan);
    ASSERT_EQ(five.size(), 3u);
    EXPECT_EQ(five[0], (std::vector<std::string>{"c0", "c1", "c2"}));
    EXPECT_EQ(five[1], (std::vector<std::string>{"c2", "c3", "c4"}));
    EXPECT_EQ(five[2], (std::vector<std::string>{"c4"}));

    const auto three = column_windows(names(3), 3, 2, WindowRule::full_scan);
    ASSERT_EQ(three.size(), 2u);
    EXPECT_EQ(three[1], (std::vector<std::string>{"c2"}));
}

TEST(ColumnWindows, StopAtTailDropsSuffixWindows) {
    const auto five = column_windows(names(5), 3, 2, WindowRule::stop_at_tail);
    ASSERT_EQ(five.size(), 2u);
    EXPECT_EQ(five[1], (std::vector<std::string>{"c2", "c3", "c4"}));
    EXPECT_EQ(column_windows(names(3), 3, 2, WindowRule::stop_at_tail).size(), 1u);
}

TEST(ColumnWindows, EmptyInputGivesOneEmptyWindow) {
    for (auto rule : {WindowRule::stop_at_tail, WindowRule::full_scan}) {
        const auto w = column_windows({}, 3, 2, rule);
        ASSERT_EQ(w.size(), 1u);
        EXPECT_TRUE(w[0].empty());
        EXPECT_EQ(window_count(0, 3, 2, rule), 1u);
    }
    EXPECT_THROW(column_windows(names(2), 0, 1), std::invalid_argument);
}

TEST(ColumnWindows, CountMatchesSimulationForRandomParameters) {
    std::mt19937_64 rng(12345);
    for (int i = 0; i < 1000; ++i) {
        const int n = std::uniform_int_distribution<int>(0, 50)(rng);
        const int w = std::uniform_int_distribution<int>(1, 10)(rng);
        const int s = std::uniform_int_distribution<int>(1, 10)(rng);
        for (auto rule : {WindowRule::stop_at_tail, WindowRule::full_scan}) {
            const auto sim = simulate_windows(n, w, s, rule);
            ASSERT_EQ(window_count(static_cast<std::size_t>(n), static_cast<std::size_t>(w),
                                   static_cast<std::size_t>(s), rule),
                      sim.size())
                << n << " " << w << " " << s;
            const auto windows = column_windows(names(n), static_cast<std::size_t>(w), static_cast<std::size_t>(s), rule);
            ASSERT_EQ(windows.size(), sim.size());
            for (std::size_t k = 0; k < sim.size(); ++k) ASSERT_EQ(windows[k].size(), sim[k].size());
        }
    }
}

TEST(ColumnLevel, ProductOfWindowCounts) {
    DatabaseSchema s;
    s.tables.push_back({"a", {{"id", "", {}, {}}, {"x1", "", {}, {}}, {"x2", "", {}, {}}, {"x3", "", {}, {}},
                              {"x4", "", {}, {}}, {"x5", "", {}, {}}},
                        {"id"}});
    s.tables.push_back({"b", {{"id", "", {}, {}}, {"a_id", "", {}, {}}, {"y1", "", {}, {}}, {"y2", "", {}, {}},
                              {"y3", "", {}, {}}},
                        {"id"}});
    s.foreign_keys = {{"b", "a_id", "a", "id"}};
    SubSchemaConfig cfg;
    cfg.table_counts_tc = {2};
    cfg.window_rule = WindowRule::full_scan;
    // a: 5 non-connection columns -> 3 windows; b: 3 -> 2 windows.
    const auto out = construct_sub_schemas(s, cfg);
    EXPECT_EQ(out.size(), 6u);
    for (const auto& ss : out) {
        EXPECT_EQ(ss.columns_of("b")->at(0), "id");
        EXPECT_EQ(ss.columns_of("b")->at(1), "a_id");
    }
}

TEST(ColumnLevel, ConnectionOnlyTableContributesFactorOne) {
    DatabaseSchema s;
    s.tables.push_back({"k", {{"id", "", {}, {}}}, {"id"}});
    SubSchemaConfig cfg;
    cfg.table_counts_tc = {1};
    const auto out = construct_sub_schemas(s, cfg);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(*out[0].columns_of("k"), std::vector<std::string>{"id"});
}

TEST(ColumnLevel, CaliforniaCounts) {
    TempDir dir;
    const auto schema = fixture_schema(dir, "california_schools");
    SubSchemaConfig cfg;
    EXPECT_EQ(construct_sub_schemas(schema, cfg).size(), 2249u);
    cfg.stride_s = 1;
    EXPECT_EQ(count_sub_schemas(schema, cfg), 11420u);
    EXPECT_EQ(construct_sub_schemas(schema, cfg).size(), 11420u);
}

TEST(ColumnLevel, CountAgreesWithIndependentOracleOnBirdFixtures) {
    TempDir dir;
    for (const auto* stem : {"california_schools", "card_games", "codebase_community"}) {
        const auto schema = fixture_schema(dir, stem);
        for (auto j : {Joinability::induced_subgraph, Joinability::path_in_schema}) {
            for (auto rule : {WindowRule::stop_at_tail, WindowRule::full_scan}) {
                SubSchemaConfig cfg;
                cfg.joinability = j;
                cfg.window_rule = rule;
                EXPECT_EQ(count_sub_schemas(schema, cfg), oracle_count(schema, {3, 2, 1}, 3, 2, rule, j)) << stem;
            }
        }
    }
}

TEST(ColumnLevel, InvariantsOnCaliforniaSchools) {
    TempDir dir;
    const auto schema = fixture_schema(dir, "california_schools");
    SubSchemaConfig cfg;
    const auto out = construct_sub_schemas(schema, cfg);
    std::set<ColumnRef> seen;
    std::set<std::string> ids;
    for (const auto& ss : out) {
        EXPECT_TRUE(ids.insert(ss.id).second);
        ASSERT_EQ(ss.per_table_columns.size(), ss.parent_tables.tables.size());
        for (const auto& [table, cols] : ss.per_table_columns) {
            const auto conn = connection_columns(schema, table);
            for (const auto& c : conn) EXPECT_TRUE(std::find(cols.begin(), cols.end(), c) != cols.end());
            for (const auto& c : cols) {
                ASSERT_TRUE(schema.table(table).has_column(c));
                seen.insert({table, c});
            }
        }
    }
    EXPECT_EQ(seen.size(), schema.column_count());  // full coverage
}

TEST(ColumnLevel, SeedDeterminism) {
    TempDir dir;
    const auto schema = fixture_schema(dir, "california_schools");
    SubSchemaConfig a;
    a.shuffle_seed = 42;
    SubSchemaConfig b = a;
    b.shuffle_seed = 43;
    const auto first = construct_sub_schemas(schema, a);
    EXPECT_EQ(first, construct_sub_schemas(schema, a));
    const auto other = construct_sub_schemas(schema, b);
    EXPECT_EQ(first.size(), other.size());
    EXPECT_NE(first, other);
}

TEST(ColumnLevel, SeededShuffleIsAPermutation) {
    auto v = names(30);
    seeded_shuffle(v, 99);
    auto sorted_v = v;
    std::sort(sorted_v.begin(), sorted_v.end());
    auto expect = names(30);
    std::sort(expect.begin(), expect.end());
    EXPECT_EQ(sorted_v, expect);
    EXPECT_NE(v, names(30));
}

TEST(SubSchemaConfig, Validation) {
    DatabaseSchema s;
    s.tables.push_back({"a", {{"x", "", {}, {}}}, {}});
    SubSchemaConfig cfg;
    EXPECT_THROW(cfg.validate(s), std::invalid_argument);  // tc contains 3 > 1 table
    cfg.table_counts_tc = {1};
    EXPECT_NO_THROW(cfg.validate(s));
    cfg.stride_s = 0;
    EXPECT_THROW(cfg.validate(s), std::invalid_argument);
}

TEST(SubSchemaJsonl, RoundTrip) {
    TempDir dir;
    const auto schema = fixture_schema(dir, "library");
    SubSchemaConfig cfg;
    const auto out = construct_sub_schemas(schema, cfg);
    write_subschemas_jsonl(dir / "ss.jsonl", out);
    EXPECT_EQ(read_subschemas_jsonl(dir / "ss.jsonl"), out);
    testing_support::write_text(dir / "bad.jsonl", "{\"id\":\"x\",\"tables\":[],\"columns\":{}}\n{broken\n");
    try {
        read_subschemas_jsonl(dir / "bad.jsonl");
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    }
}
