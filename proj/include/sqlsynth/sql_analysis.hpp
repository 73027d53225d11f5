#pragma once

#include "sqlsynth/schema.hpp"
#include "sqlsynth/text_util.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sqlsynth {

struct QueryFeatures {
    std::size_t join_count = 0;
    bool has_aggregation = false;
    bool has_window = false;

    friend bool operator==(const QueryFeatures&, const QueryFeatures&) = default;
};

struct ParsedQuery {
    std::string raw_sql;
    std::set<ColumnRef> referenced;
    std::set<std::string> referenced_tables;  // canonical table names
    std::size_t join_count = 0;
    bool has_aggregation = false;
    bool has_window = false;
    bool has_top_level_order_by = false;
    // Names that could not be bound to any source, e.g. "t.missing" or "ghost_table".
    std::vector<std::string> unresolved;
};

// Parses `sql` (throws sql::ParseError) and binds every column reference to a
// base table through aliases, CTEs, derived tables and outer scopes.
ParsedQuery extract_schema_elements(std::string_view sql, const DatabaseSchema& schema);

QueryFeatures classify_features(std::string_view sql);

// Aggregate functions counted by classify_features when used without OVER.
bool is_aggregate_function(std::string_view name, std::size_t arg_count);

using Cell = std::variant<std::monostate, std::int64_t, double, std::string>;

struct ResultTable {
    std::vector<std::string> column_labels;
    std::vector<std::vector<Cell>> rows;
    bool truncated = false;  // the row cap was reached

    friend bool operator==(const ResultTable&, const ResultTable&) = default;
};

nlohmann::json to_json(const ResultTable& table);
ResultTable result_table_from_json(const nlohmann::json& j);

struct ExecOptions {
    std::chrono::milliseconds timeout{30'000};
    std::size_t row_cap = 10'000;
};

enum class ExecStatus { ok, error, timeout };

struct ExecResult {
    ExecStatus status = ExecStatus::error;
    ResultTable table;
    std::string error;  // engine message for error and timeout

    bool executable() const noexcept { return status == ExecStatus::ok; }
};

// Runs one read-only statement. Never throws for SQL problems; those land in `error`.
ExecResult execute_query(std::string_view sql, const std::filesystem::path& db_path, const ExecOptions& options = {});

}  // namespace sqlsynth
