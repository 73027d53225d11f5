#include "sqlsynth/schema.hpp"

#include "sqlsynth/sqlite_db.hpp"
#include "sqlsynth/text_util.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace sqlsynth {

const ColumnDef* TableDef::find_column(std::string_view column) const {
    for (const auto& c : columns) {
        if (iequals(c.name, column)) return &c;
    }
    return nullptr;
}

const TableDef* DatabaseSchema::find_table(std::string_view name) const {
    for (const auto& t : tables) {
        if (iequals(t.name, name)) return &t;
    }
    return nullptr;
}

const TableDef& DatabaseSchema::table(std::string_view name) const {
    const auto* t = find_table(name);
    if (!t) throw SchemaError("unknown table: " + std::string(name));
    return *t;
}

std::optional<ColumnRef> DatabaseSchema::resolve(std::string_view table, std::string_view column) const {
    const auto* t = find_table(table);
    if (!t) return std::nullopt;
    const auto* c = t->find_column(column);
    if (!c) return std::nullopt;
    return ColumnRef{t->name, c->name};
}

std::vector<ColumnRef> DatabaseSchema::all_columns() const {
    std::vector<ColumnRef> out;
    for (const auto& t : tables) {
        for (const auto& c : t.columns) out.push_back({t.name, c.name});
    }
    return out;
}

std::size_t DatabaseSchema::column_count() const {
    return std::accumulate(tables.begin(), tables.end(), std::size_t{0},
                           [](std::size_t n, const TableDef& t) { return n + t.columns.size(); });
}

void DatabaseSchema::validate() const {
    std::set<std::string, ILess> names;
    for (const auto& t : tables) {
        if (!names.insert(t.name).second) throw SchemaError("duplicate table name: " + t.name);
        if (t.columns.empty()) throw SchemaError("table without columns: " + t.name);
        std::set<std::string, ILess> cols;
        for (const auto& c : t.columns) {
            if (!cols.insert(c.name).second) throw SchemaError("duplicate column " + t.name + "." + c.name);
        }
        for (const auto& pk : t.primary_key) {
            if (!cols.contains(pk)) throw SchemaError("primary key column missing: " + t.name + "." + pk);
        }
    }
    for (const auto& fk : foreign_keys) {
        if (!resolve(fk.from_table, fk.from_column) || !resolve(fk.to_table, fk.to_column)) {
            throw SchemaError("foreign key endpoint missing: " + fk.from_table + "." + fk.from_column + " -> " +
                              fk.to_table + "." + fk.to_column);
        }
        if (iequals(fk.from_table, fk.to_table) && iequals(fk.from_column, fk.to_column)) {
            throw SchemaError("foreign key self-loop on " + fk.from_table + "." + fk.from_column);
        }
    }
}

namespace {

std::string truncate_utf8(const std::string& s, std::size_t max_chars) {
    std::size_t chars = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) {
            if (chars == max_chars) return s.substr(0, i);
            ++chars;
        }
    }
    return s;
}

ForeignKey canonical_fk(const DatabaseSchema& schema, const ForeignKey& fk) {
    const auto from = schema.resolve(fk.from_table, fk.from_column);
    const auto to = schema.resolve(fk.to_table, fk.to_column);
    if (!from) throw SchemaError("foreign key references missing column " + fk.from_table + "." + fk.from_column);
    if (!to) throw SchemaError("foreign key references missing column " + fk.to_table + "." + fk.to_column);
    if (*from == *to) throw SchemaError("foreign key self-loop on " + from->str());
    return {from->table, from->column, to->table, to->column};
}

}  // namespace

void merge_foreign_keys(DatabaseSchema& schema, const std::vector<ForeignKey>& extra) {
    for (const auto& raw : extra) {
        auto fk = canonical_fk(schema, raw);
        if (std::find(schema.foreign_keys.begin(), schema.foreign_keys.end(), fk) == schema.foreign_keys.end()) {
            schema.foreign_keys.push_back(std::move(fk));
        }
    }
}

std::vector<ForeignKey> load_fk_overrides(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot read FK override file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("malformed FK override file " + path.string() + ": " + e.what());
    }
    if (!j.is_array()) throw SchemaError("FK override file must hold a JSON list");
    std::vector<ForeignKey> out;
    for (const auto& item : j) {
        try {
            out.push_back({item.at("from_table").get<std::string>(), item.at("from_column").get<std::string>(),
                           item.at("to_table").get<std::string>(), item.at("to_column").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(std::string("bad FK override entry: ") + e.what());
        }
    }
    return out;
}

DatabaseSchema introspect_schema(const std::filesystem::path& db_path,
                                 const std::optional<std::filesystem::path>& overrides,
                                 const IntrospectOptions& options) {
    Database db(db_path, OpenMode::read_only);
    DatabaseSchema schema;
    schema.db_id = db_path.stem().string();

    std::vector<std::string> table_names;
    {
        auto st = db.prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' "
            "AND upper(coalesce(sql, '')) NOT LIKE 'CREATE VIRTUAL%' ORDER BY rowid");
        while (st.step()) table_names.push_back(st.column_text(0));
    }

    for (const auto& name : table_names) {
        TableDef table;
        table.name = name;
        std::vector<std::pair<int, std::string>> pk;
        auto st = db.prepare("SELECT name, type, pk FROM pragma_table_info(?1) ORDER BY cid");
        st.bind(1, name);
        while (st.step()) {
            ColumnDef col;
            col.name = st.column_text(0);
            col.declared_type = st.column_text(1);
            if (const auto pos = st.column_int(2); pos > 0) pk.emplace_back(static_cast<int>(pos), col.name);
            table.columns.push_back(std::move(col));
        }
        std::sort(pk.begin(), pk.end());
        for (auto& [_, col] : pk) table.primary_key.push_back(col);

        if (options.collect_samples && options.sample_cap > 0) {
            for (auto& col : table.columns) {
                auto sample = db.prepare("SELECT DISTINCT " + quote_identifier(col.name) + " FROM " +
                                         quote_identifier(name) + " WHERE " + quote_identifier(col.name) +
                                         " IS NOT NULL LIMIT " + std::to_string(options.sample_cap));
                while (sample.step()) {
                    col.sample_values.push_back(truncate_utf8(sample.column_text(0), options.sample_max_chars));
                }
            }
        }
        schema.tables.push_back(std::move(table));
    }

    std::vector<ForeignKey> native;
    for (const auto& table : schema.tables) {
        auto st = db.prepare("SELECT \"table\", \"from\", \"to\" FROM pragma_foreign_key_list(?1) ORDER BY id, seq");
        st.bind(1, table.name);
        std::size_t implicit_index = 0;
        while (st.step()) {
            const auto to_table = st.column_text(0);
            const auto from_col = st.column_text(1);
            std::string to_col = st.column_is_null(2) ? std::string{} : st.column_text(2);
            if (to_col.empty()) {
                // REFERENCES t without a column list targets t's primary key.
                if (const auto* parent = schema.find_table(to_table);
                    parent && implicit_index < parent->primary_key.size()) {
                    to_col = parent->primary_key[implicit_index++];
                }
            }
            native.push_back({table.name, from_col, to_table, to_col});
        }
    }
    for (const auto& fk : native) {
        // Native FKs naming missing objects are dropped; the schema only models resolvable edges.
        if (!schema.resolve(fk.from_table, fk.from_column) || !schema.resolve(fk.to_table, fk.to_column)) continue;
        try {
            merge_foreign_keys(schema, {fk});
        } catch (const SchemaError&) {
        }
    }
    if (overrides) merge_foreign_keys(schema, load_fk_overrides(*overrides));
    schema.validate();
    return schema;
}

std::vector<std::string> connection_columns(const DatabaseSchema& schema, std::string_view table) {
    const auto& t = schema.table(table);
    std::set<std::string, ILess> conn(t.primary_key.begin(), t.primary_key.end());
    for (const auto& fk : schema.foreign_keys) {
        if (iequals(fk.from_table, t.name)) conn.insert(fk.from_column);
        if (iequals(fk.to_table, t.name)) conn.insert(fk.to_column);
    }
    std::vector<std::string> out;
    for (const auto& c : t.columns) {
        if (conn.contains(c.name)) out.push_back(c.name);
    }
    return out;
}

JoinGraph::JoinGraph(const DatabaseSchema& schema) {
    for (const auto& t : schema.tables) tables_.push_back(t.name);
    const auto n = tables_.size();
    adjacency_.assign(n, std::vector<bool>(n, false));
    for (const auto& fk : schema.foreign_keys) {
        const auto a = index_of(fk.from_table);
        const auto b = index_of(fk.to_table);
        if (a == b) continue;
        adjacency_[a][b] = adjacency_[b][a] = true;
    }
    component_.assign(n, n);
    std::size_t next = 0;
    for (std::size_t start = 0; start < n; ++start) {
        if (component_[start] != n) continue;
        std::vector<std::size_t> stack{start};
        component_[start] = next;
        while (!stack.empty()) {
            const auto x = stack.back();
            stack.pop_back();
            for (std::size_t y = 0; y < n; ++y) {
                if (adjacency_[x][y] && component_[y] == n) {
                    component_[y] = next;
                    stack.push_back(y);
                }
            }
        }
        ++next;
    }
}

std::size_t JoinGraph::index_of(std::string_view table) const {
    for (std::size_t i = 0; i < tables_.size(); ++i) {
        if (iequals(tables_[i], table)) return i;
    }
    throw SchemaError("unknown table: " + std::string(table));
}

bool JoinGraph::has_edge(std::string_view a, std::string_view b) const { return adjacency_[index_of(a)][index_of(b)]; }

std::vector<std::string> JoinGraph::neighbors(std::string_view table) const {
    const auto i = index_of(table);
    std::vector<std::string> out;
    for (std::size_t j = 0; j < tables_.size(); ++j) {
        if (adjacency_[i][j]) out.push_back(tables_[j]);
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> JoinGraph::edges() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < tables_.size(); ++i) {
        for (std::size_t j = i + 1; j < tables_.size(); ++j) {
            if (adjacency_[i][j]) out.emplace_back(tables_[i], tables_[j]);
        }
    }
    return out;
}

std::size_t JoinGraph::edge_count() const { return edges().size(); }

bool JoinGraph::induced_connected(const std::vector<std::string>& subset) const {
    if (subset.empty()) return false;
    std::vector<std::size_t> idx;
    for (const auto& t : subset) idx.push_back(index_of(t));
    std::vector<bool> seen(idx.size(), false);
    std::vector<std::size_t> stack{0};
    seen[0] = true;
    std::size_t reached = 1;
    while (!stack.empty()) {
        const auto x = stack.back();
        stack.pop_back();
        for (std::size_t y = 0; y < idx.size(); ++y) {
            if (!seen[y] && adjacency_[idx[x]][idx[y]]) {
                seen[y] = true;
                ++reached;
                stack.push_back(y);
            }
        }
    }
    return reached == idx.size();
}

bool JoinGraph::same_component(const std::vector<std::string>& subset) const {
    if (subset.empty()) return false;
    const auto c = component_[index_of(subset.front())];
    return std::all_of(subset.begin(), subset.end(), [&](const auto& t) { return component_[index_of(t)] == c; });
}

JoinGraph joinable_graph(const DatabaseSchema& schema) { return JoinGraph(schema); }

nlohmann::ordered_json to_json(const DatabaseSchema& schema) {
    nlohmann::ordered_json j;
    j["db_id"] = schema.db_id;
    j["tables"] = nlohmann::ordered_json::array();
    for (const auto& t : schema.tables) {
        nlohmann::ordered_json jt;
        jt["name"] = t.name;
        jt["columns"] = nlohmann::ordered_json::array();
        for (const auto& c : t.columns) {
            nlohmann::ordered_json jc;
            jc["name"] = c.name;
            jc["declared_type"] = c.declared_type;
            jc["description"] = c.description ? nlohmann::ordered_json(*c.description) : nlohmann::ordered_json();
            jc["sample_values"] = c.sample_values;
            jt["columns"].push_back(std::move(jc));
        }
        jt["primary_key"] = t.primary_key;
        j["tables"].push_back(std::move(jt));
    }
    j["foreign_keys"] = nlohmann::ordered_json::array();
    for (const auto& fk : schema.foreign_keys) {
        j["foreign_keys"].push_back({{"from_table", fk.from_table},
                                     {"from_column", fk.from_column},
                                     {"to_table", fk.to_table},
                                     {"to_column", fk.to_column}});
    }
    return j;
}

DatabaseSchema schema_from_json(const nlohmann::json& j) {
    DatabaseSchema s;
    s.db_id = j.value("db_id", "");
    for (const auto& jt : j.at("tables")) {
        TableDef t;
        t.name = jt.at("name").get<std::string>();
        for (const auto& jc : jt.at("columns")) {
            ColumnDef c;
            c.name = jc.at("name").get<std::string>();
            c.declared_type = jc.value("declared_type", "");
            if (jc.contains("description") && jc["description"].is_string()) c.description = jc["description"];
            if (jc.contains("sample_values")) c.sample_values = jc["sample_values"].get<std::vector<std::string>>();
            t.columns.push_back(std::move(c));
        }
        if (jt.contains("primary_key")) t.primary_key = jt["primary_key"].get<std::vector<std::string>>();
        s.tables.push_back(std::move(t));
    }
    for (const auto& jf : j.value("foreign_keys", nlohmann::json::array())) {
        s.foreign_keys.push_back({jf.at("from_table"), jf.at("from_column"), jf.at("to_table"), jf.at("to_column")});
    }
    s.validate();
    return s;
}

}  // namespace sqlsynth
