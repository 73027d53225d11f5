#pragma once

#include "sqlsynth/linking.hpp"
#include "sqlsynth/schema.hpp"
#include "sqlsynth/synthesis.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sqlsynth {

// Example JSONL; unknown fields survive a read/write cycle.
std::vector<T2SExample> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<T2SExample>& examples);

// ---------------------------------------------------------------------------
// Benchmark gold files

struct GoldRecord {
    std::string question_id;
    std::string db_id;
    std::string question;
    std::string evidence;
    std::string sql;
    std::string difficulty;  // empty when the file has none
};

// A JSON array (BIRD dev.json) or JSONL. Accepts "SQL" or "sql"; numeric
// question ids become strings; records without an id get their position.
std::vector<GoldRecord> read_gold(const std::filesystem::path& path);

// Gold records as examples, for statistics. Unknown difficulty labels throw.
std::vector<T2SExample> gold_as_examples(const std::vector<GoldRecord>& gold, std::string_view db_id = {});

// ---------------------------------------------------------------------------
// Splits

struct SplitConfig {
    std::array<double, 3> ratios{0.94, 0.03, 0.03};
    std::uint64_t seed = 0;
    bool stratify = true;  // by difficulty
    bool coverage = true;  // column-coverage pass before the random fill

    void validate() const;
};

struct DatasetSplit {
    std::string name;
    std::vector<T2SExample> examples;
};

struct SplitResult {
    std::array<DatasetSplit, 3> splits;  // train, dev, test
    std::vector<std::string> warnings;
};

// Largest-remainder apportionment of n; ties go to the earlier split.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

SplitResult split_dataset(const std::vector<T2SExample>& examples, const DatabaseSchema& schema,
                          const SplitConfig& config = {});

// ---------------------------------------------------------------------------
// Statistics

struct LevelStats {
    std::size_t count = 0;
    double mean_joins = 0;
    double aggregation_rate = 0;  // percent
};

struct StatsReport {
    bool empty = true;
    std::size_t total = 0;
    std::size_t unparseable = 0;
    std::size_t window_queries = 0;  // queries using a window function
    std::map<std::string, LevelStats> levels;  // every level, by label
    LevelStats overall;
    std::size_t column_count = 0;
    std::vector<ColumnRef> unused_columns;
    double unused_rate = 0;  // percent
    std::map<ColumnRef, std::size_t> column_usage;  // every schema column
};

StatsReport compute_stats(const std::vector<T2SExample>& examples, const DatabaseSchema& schema);

nlohmann::ordered_json to_json(const StatsReport& r);

// Level-count, unused-column and join/aggregation tables for named reports.
std::string stats_markdown(const std::vector<std::pair<std::string, StatsReport>>& reports);

// ---------------------------------------------------------------------------
// Fine-tuning export

enum class DatasetKind { t2s, t2sws };
std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(std::string_view s);

struct SftConfig {
    DatasetKind kind = DatasetKind::t2s;
    std::size_t fs_count = 0;
    bool fs_reasoning = false;

    std::string name() const;  // e.g. "T2SWS-fs6-r"
    friend bool operator==(const SftConfig&, const SftConfig&) = default;
};

// {T2S, T2SWS} x {fs0, fs6 without reasoning, fs6 with reasoning}.
std::vector<SftConfig> standard_sft_configs();

struct SftRecord {
    std::string id;
    std::string prompt;
    std::string completion;
    SftConfig config;
};

nlohmann::ordered_json to_json(const SftRecord& r);

inline constexpr std::string_view schema_block_heading = "### Database schema";
inline constexpr std::string_view fewshot_block_heading = "### Example question ";

// Reasoning text without the trailing copy of the SQL, if any.
std::optional<std::string> reasoning_trace(const T2SExample& e);

// Few-shots come from `fewshot_pool` by BM25 over the question, skipping the
// example itself and (with fs_reasoning) pool entries without reasoning.
// Throws listing ids when T2SWS lacks filtered schemas or the pool is too small.
std::vector<SftRecord> export_sft(const std::vector<T2SExample>& examples, const DatabaseSchema& schema,
                                  const SftConfig& config,
                                  const std::map<std::string, FilteredSchema>* filtered_schemas = nullptr,
                                  const std::vector<T2SExample>* fewshot_pool = nullptr);

}  // namespace sqlsynth
