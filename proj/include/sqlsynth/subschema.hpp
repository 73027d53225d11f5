#pragma once

#include "sqlsynth/schema.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace sqlsynth {

// How the sliding window walks a shuffled column list.
enum class WindowRule {
    // Stops once a window reaches the last column; no window is a suffix of its predecessor.
    stop_at_tail,
    // Starts a window at every i = 0, s, 2s, ... below the column count.
    full_scan,
};

// Which table sets count as joinable.
enum class Joinability {
    // Every pair of tables is linked by some FK path in the whole database.
    path_in_schema,
    // The FK subgraph induced by the set itself is connected.
    induced_subgraph,
};

struct SubSchemaConfig {
    std::size_t window_w = 3;
    std::size_t stride_s = 2;
    std::vector<std::size_t> table_counts_tc{3, 2, 1};
    std::uint64_t shuffle_seed = 0;
    WindowRule window_rule = WindowRule::stop_at_tail;
    Joinability joinability = Joinability::path_in_schema;

    void validate(const DatabaseSchema& schema) const;
};

struct TableLevelSubSchema {
    std::vector<std::string> tables;  // sorted case-insensitively

    friend bool operator==(const TableLevelSubSchema&, const TableLevelSubSchema&) = default;
};

struct SubSchema {
    std::string id;
    std::vector<std::pair<std::string, std::vector<std::string>>> per_table_columns;
    TableLevelSubSchema parent_tables;

    const std::vector<std::string>* columns_of(std::string_view table) const;
    bool contains(const ColumnRef& column) const;
    std::size_t column_count() const;

    friend bool operator==(const SubSchema&, const SubSchema&) = default;
};

std::vector<TableLevelSubSchema> gen_table_level(const DatabaseSchema& schema, const std::vector<std::size_t>& tc,
                                                 Joinability joinability = Joinability::path_in_schema);

std::size_t window_count(std::size_t n, std::size_t w, std::size_t s, WindowRule rule = WindowRule::stop_at_tail);

// Windows over an already-ordered column list. An empty list yields one empty window.
std::vector<std::vector<std::string>> column_windows(const std::vector<std::string>& non_conn, std::size_t w,
                                                     std::size_t s, WindowRule rule = WindowRule::stop_at_tail);

// Deterministic Fisher-Yates shuffle driven by a SplitMix64 stream.
void seeded_shuffle(std::vector<std::string>& items, std::uint64_t seed);

std::vector<SubSchema> gen_column_level(const std::vector<TableLevelSubSchema>& tlss, const DatabaseSchema& schema,
                                        const SubSchemaConfig& config);

std::vector<SubSchema> construct_sub_schemas(const DatabaseSchema& schema, const SubSchemaConfig& config);

// Closed-form count without materializing the sub-schemas.
std::uint64_t count_sub_schemas(const DatabaseSchema& schema, const SubSchemaConfig& config);

nlohmann::ordered_json to_json(const SubSchema& ss);
SubSchema subschema_from_json(const nlohmann::json& j);

void write_subschemas_jsonl(const std::filesystem::path& path, const std::vector<SubSchema>& items);
std::vector<SubSchema> read_subschemas_jsonl(const std::filesystem::path& path);

std::string to_string(WindowRule rule);
std::string to_string(Joinability j);
WindowRule window_rule_from_string(std::string_view s);
Joinability joinability_from_string(std::string_view s);

}  // namespace sqlsynth
