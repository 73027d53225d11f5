#pragma once

#include <nlohmann/json.hpp>

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sqlsynth {

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ColumnDef {
    std::string name;
    std::string declared_type;
    std::optional<std::string> description;
    std::vector<std::string> sample_values;
};

struct TableDef {
    std::string name;
    std::vector<ColumnDef> columns;
    std::vector<std::string> primary_key;

    const ColumnDef* find_column(std::string_view column) const;
    bool has_column(std::string_view column) const { return find_column(column) != nullptr; }
};

struct ForeignKey {
    std::string from_table;
    std::string from_column;
    std::string to_table;
    std::string to_column;

    friend bool operator==(const ForeignKey&, const ForeignKey&) = default;
};

// A (table, column) pair using the schema's canonical spelling.
struct ColumnRef {
    std::string table;
    std::string column;

    friend auto operator<=>(const ColumnRef&, const ColumnRef&) = default;
    std::string str() const { return table + "." + column; }
};

class DatabaseSchema {
public:
    std::string db_id;
    std::vector<TableDef> tables;
    std::vector<ForeignKey> foreign_keys;

    const TableDef* find_table(std::string_view name) const;
    const TableDef& table(std::string_view name) const;  // throws SchemaError

    // Canonical (table, column) or nullopt when either part is unknown.
    std::optional<ColumnRef> resolve(std::string_view table, std::string_view column) const;

    std::vector<ColumnRef> all_columns() const;
    std::size_t column_count() const;

    // Checks the structural invariants; throws SchemaError on violation.
    void validate() const;
};

struct IntrospectOptions {
    std::size_t sample_cap = 5;
    std::size_t sample_max_chars = 64;
    bool collect_samples = true;
};

// Reads tables, columns, keys and foreign keys of a SQLite file. Views and
// virtual tables are skipped. Override FKs are validated and merged.
DatabaseSchema introspect_schema(const std::filesystem::path& db_path,
                                 const std::optional<std::filesystem::path>& overrides = std::nullopt,
                                 const IntrospectOptions& options = {});

// Parses the override file: a JSON list of {from_table, from_column, to_table, to_column}.
std::vector<ForeignKey> load_fk_overrides(const std::filesystem::path& path);

// Validates and appends FKs, rewriting names to canonical case. Duplicates are ignored.
void merge_foreign_keys(DatabaseSchema& schema, const std::vector<ForeignKey>& extra);

// Primary-key columns plus every column on either side of an FK touching the table,
// in table column order.
std::vector<std::string> connection_columns(const DatabaseSchema& schema, std::string_view table);

// Undirected simple graph over table names; an edge means at least one FK links the pair.
class JoinGraph {
public:
    explicit JoinGraph(const DatabaseSchema& schema);

    const std::vector<std::string>& tables() const { return tables_; }
    bool has_edge(std::string_view a, std::string_view b) const;
    std::vector<std::string> neighbors(std::string_view table) const;
    // Edges as (a, b) with a < b in table order.
    std::vector<std::pair<std::string, std::string>> edges() const;
    std::size_t edge_count() const;

    // True when the subgraph induced by `subset` is connected.
    bool induced_connected(const std::vector<std::string>& subset) const;
    // True when every pair of tables in `subset` is linked by some path in the full graph.
    bool same_component(const std::vector<std::string>& subset) const;

private:
    std::size_t index_of(std::string_view table) const;

    std::vector<std::string> tables_;
    std::vector<std::vector<bool>> adjacency_;
    std::vector<std::size_t> component_;
};

JoinGraph joinable_graph(const DatabaseSchema& schema);

nlohmann::ordered_json to_json(const DatabaseSchema& schema);
DatabaseSchema schema_from_json(const nlohmann::json& j);

}  // namespace sqlsynth
