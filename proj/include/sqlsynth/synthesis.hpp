#pragma once

#include "sqlsynth/llm_gateway.hpp"
#include "sqlsynth/schema.hpp"
#include "sqlsynth/sql_analysis.hpp"
#include "sqlsynth/subschema.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace sqlsynth {

enum class Level { simple, moderate, challenging, window };
enum class Round { initial, column_focused };

std::string to_string(Level l);
std::string to_string(Round r);
Level level_from_string(std::string_view s);
Round round_from_string(std::string_view s);

struct GenerationConfig {
    int n_per_level = 3;
    std::vector<Level> levels{Level::simple, Level::moderate, Level::challenging, Level::window};
    int min_col_example_count = 400;
    int max_repair_attempts = 1;
    bool with_reasoning = true;
    std::size_t workers = 4;
    ExecOptions exec{std::chrono::milliseconds(10'000), 1'000};

    void validate() const;  // throws std::invalid_argument
};

struct T2SExample {
    std::string id;
    std::string db_id;
    std::string subschema_id;
    std::string sql;
    std::string question;
    Level difficulty = Level::simple;
    std::optional<std::string> reasoning;
    bool judge_verdict = false;
    bool executable = false;
    bool repaired = false;
    Round round = Round::initial;
    // Fields this library does not know, kept so files round-trip losslessly.
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

nlohmann::ordered_json to_json(const T2SExample& e);
T2SExample t2s_example_from_json(const nlohmann::json& j);

struct RawPair {
    std::string sql;
    std::string question;
    Level difficulty = Level::simple;
    std::size_t request_index = 0;  // position among the 4·N requests
};

struct Diagnostic {
    std::string stage;
    std::string subschema_id;
    std::string reason;

    friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

nlohmann::ordered_json to_json(const Diagnostic& d);

// Shared state for one generation run over a single database.
struct GenerationContext {
    const DatabaseSchema& schema;
    std::filesystem::path db_path;
    LlmGateway& gateway;
    GenerationConfig config;
};

// Prompt rendering of a sub-schema: one `table` header per table followed by
// indented `column` lines with type, key markers and sample values.
std::string render_subschema_text(const DatabaseSchema& schema, const SubSchema& ss);

// Issues 4·N synth requests (one per level and variant), each followed by a
// translation request. Malformed outputs are dropped into `diagnostics`.
std::vector<RawPair> generate_for_subschema(const GenerationContext& ctx, const SubSchema& ss,
                                            std::vector<Diagnostic>& diagnostics,
                                            const std::vector<ColumnRef>& focus_columns = {});

// Unparseable or failed judge output counts as illogical.
bool judge_pair(const GenerationContext& ctx, const T2SExample& example, const SubSchema& ss,
                std::vector<Diagnostic>& diagnostics);

// Precondition: example.sql does not execute (std::invalid_argument otherwise).
std::optional<T2SExample> repair_sql(const GenerationContext& ctx, const T2SExample& example, const SubSchema& ss,
                                     const std::string& error_message, std::vector<Diagnostic>& diagnostics);

// Trace ending with the example's SQL, or "" after one mismatch retry or a gateway failure.
std::string generate_reasoning(const GenerationContext& ctx, const T2SExample& example, const SubSchema& ss,
                               std::vector<Diagnostic>& diagnostics);

struct ColumnUsage {
    std::map<ColumnRef, int> counts;  // every schema column is a key
    std::size_t unparseable = 0;
};

ColumnUsage count_column_usage(const std::vector<T2SExample>& examples, const DatabaseSchema& schema);

std::set<ColumnRef> select_focus_columns(const std::map<ColumnRef, int>& counts, int threshold);

// Greedy cover: most uncovered focus columns first, ties by sub-schema id.
// Each selected sub-schema carries the focus columns it newly covered.
std::vector<std::pair<SubSchema, std::vector<ColumnRef>>> find_focus_subschemas(
    const std::set<ColumnRef>& focus_columns, const std::vector<SubSchema>& all_subschemas);

struct PipelineResult {
    std::vector<T2SExample> examples;
    std::vector<Diagnostic> diagnostics;
};

struct RoundJob {
    SubSchema subschema;
    std::vector<ColumnRef> focus_columns;
};

// Judge -> execute -> repair -> reasoning for every generated pair of every job.
// Results are merged in job order. With a checkpoint path, finished jobs are
// appended there and skipped on the next call.
PipelineResult run_round(const GenerationContext& ctx, const std::vector<RoundJob>& jobs, Round round,
                         const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

PipelineResult generate_initial(const GenerationContext& ctx, const std::vector<SubSchema>& subschemas,
                                const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

// One column-focused round over the sub-schemas covering underused columns;
// returns `existing` plus the new examples, deduplicated.
PipelineResult balance(const GenerationContext& ctx, const std::vector<SubSchema>& subschemas,
                       const std::vector<T2SExample>& existing,
                       const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

PipelineResult run_pipeline(const GenerationContext& ctx, const std::vector<SubSchema>& subschemas);

// Keeps judged-logical executable examples, first of each normalized (sql, question).
std::vector<T2SExample> filter_and_dedup(std::vector<T2SExample> examples);

void write_examples_jsonl(const std::filesystem::path& path, const std::vector<T2SExample>& examples);
std::vector<T2SExample> read_examples_jsonl(const std::filesystem::path& path);
void write_diagnostics_jsonl(const std::filesystem::path& path, const std::vector<Diagnostic>& diagnostics);

}  // namespace sqlsynth
