#include "sqlsynth/subschema.hpp"

#include "sqlsynth/text_util.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

namespace sqlsynth {

void SubSchemaConfig::validate(const DatabaseSchema& schema) const {
    if (window_w < 1) throw std::invalid_argument("window must be >= 1");
    if (stride_s < 1) throw std::invalid_argument("stride must be >= 1");
    if (table_counts_tc.empty()) throw std::invalid_argument("table counts must be non-empty");
    for (auto k : table_counts_tc) {
        if (k < 1) throw std::invalid_argument("table counts must be positive");
        if (k > schema.tables.size()) {
            throw std::invalid_argument("table count " + std::to_string(k) + " exceeds the " +
                                        std::to_string(schema.tables.size()) + " tables of " + schema.db_id);
        }
    }
}

const std::vector<std::string>* SubSchema::columns_of(std::string_view table) const {
    for (const auto& [name, cols] : per_table_columns) {
        if (iequals(name, table)) return &cols;
    }
    return nullptr;
}

bool SubSchema::contains(const ColumnRef& column) const {
    const auto* cols = columns_of(column.table);
    if (!cols) return false;
    return std::any_of(cols->begin(), cols->end(), [&](const auto& c) { return iequals(c, column.column); });
}

std::size_t SubSchema::column_count() const {
    std::size_t n = 0;
    for (const auto& [_, cols] : per_table_columns) n += cols.size();
    return n;
}

namespace {

std::vector<std::string> lower_all(const std::vector<std::string>& v) {
    std::vector<std::string> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(to_lower(s));
    return out;
}

void combinations(std::size_t n, std::size_t k, const std::function<void(const std::vector<std::size_t>&)>& visit) {
    if (k > n) return;
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i;
    while (true) {
        visit(idx);
        std::size_t i = k;
        while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
        if (i == 0) return;
        ++idx[i - 1];
        for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
}

std::uint64_t uniform_below(std::uint64_t& state, std::uint64_t bound) {
    // Rejection sampling keeps draws unbiased and platform-independent.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    while (true) {
        const auto x = splitmix64(state);
        if (x < limit) return x % bound;
    }
}

std::vector<std::string> non_connection_columns(const DatabaseSchema& schema, const TableDef& table) {
    const auto conn = connection_columns(schema, table.name);
    std::vector<std::string> out;
    for (const auto& c : table.columns) {
        if (std::find(conn.begin(), conn.end(), c.name) == conn.end()) out.push_back(c.name);
    }
    return out;
}

std::string format_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ss-%06zu", index);
    return buf;
}

}  // namespace

std::vector<TableLevelSubSchema> gen_table_level(const DatabaseSchema& schema, const std::vector<std::size_t>& tc,
                                                 Joinability joinability) {
    const JoinGraph graph(schema);
    std::vector<std::string> names;
    for (const auto& t : schema.tables) names.push_back(t.name);
    std::sort(names.begin(), names.end(), ILess{});

    std::set<std::size_t> sizes(tc.begin(), tc.end());
    std::vector<TableLevelSubSchema> out;
    for (auto k : sizes) {
        if (k == 0) continue;
        combinations(names.size(), k, [&](const std::vector<std::size_t>& idx) {
            std::vector<std::string> subset;
            for (auto i : idx) subset.push_back(names[i]);
            const bool ok = joinability == Joinability::induced_subgraph ? graph.induced_connected(subset)
                                                                          : graph.same_component(subset);
            if (ok) out.push_back({std::move(subset)});
        });
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        const auto la = lower_all(a.tables);
        const auto lb = lower_all(b.tables);
        if (la != lb) return la < lb;
        return a.tables.size() < b.tables.size();
    });
    return out;
}

std::size_t window_count(std::size_t n, std::size_t w, std::size_t s, WindowRule rule) {
    if (n == 0) return 1;
    if (rule == WindowRule::full_scan) return (n + s - 1) / s;
    if (n <= w) return 1;
    // With s > w the loop can run out of starts before any window touches the tail.
    return std::min((n + s - 1) / s, 1 + (n - w + s - 1) / s);
}

std::vector<std::vector<std::string>> column_windows(const std::vector<std::string>& non_conn, std::size_t w,
                                                     std::size_t s, WindowRule rule) {
    if (w < 1 || s < 1) throw std::invalid_argument("window and stride must be >= 1");
    std::vector<std::vector<std::string>> out;
    const auto n = non_conn.size();
    if (n == 0) {
        out.emplace_back();
        return out;
    }
    for (std::size_t i = 0; i < n; i += s) {
        const auto end = std::min(n, i + w);
        out.emplace_back(non_conn.begin() + static_cast<std::ptrdiff_t>(i),
                         non_conn.begin() + static_cast<std::ptrdiff_t>(end));
        if (rule == WindowRule::stop_at_tail && end == n) break;
    }
    return out;
}

void seeded_shuffle(std::vector<std::string>& items, std::uint64_t seed) {
    std::uint64_t state = seed;
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_below(state, i));
        std::swap(items[i - 1], items[j]);
    }
}

std::vector<SubSchema> gen_column_level(const std::vector<TableLevelSubSchema>& tlss, const DatabaseSchema& schema,
                                        const SubSchemaConfig& config) {
    std::vector<SubSchema> out;
    for (const auto& group : tlss) {
        const auto group_key = to_lower(join(group.tables, "\x1f"));
        std::vector<std::vector<std::vector<std::string>>> parts;  // per table: windows incl. connection cols
        for (const auto& name : group.tables) {
            const auto& table = schema.table(name);
            const auto conn = connection_columns(schema, table.name);
            auto non_conn = non_connection_columns(schema, table);
            std::uint64_t seed_state = config.shuffle_seed ^ fnv1a64(group_key);
            seed_state ^= splitmix64(seed_state) ^ fnv1a64(to_lower(table.name));
            seeded_shuffle(non_conn, seed_state);
            std::vector<std::vector<std::string>> table_parts;
            for (auto& window : column_windows(non_conn, config.window_w, config.stride_s, config.window_rule)) {
                std::vector<std::string> cols = conn;
                cols.insert(cols.end(), window.begin(), window.end());
                table_parts.push_back(std::move(cols));
            }
            parts.push_back(std::move(table_parts));
        }
        // Odometer over the per-table partitions; the last table varies fastest.
        std::vector<std::size_t> pos(parts.size(), 0);
        while (true) {
            SubSchema ss;
            ss.parent_tables = group;
            for (std::size_t t = 0; t < parts.size(); ++t) {
                ss.per_table_columns.emplace_back(group.tables[t], parts[t][pos[t]]);
            }
            ss.id = format_id(out.size());
            out.push_back(std::move(ss));
            std::size_t t = parts.size();
            while (t > 0) {
                if (++pos[t - 1] < parts[t - 1].size()) break;
                pos[t - 1] = 0;
                --t;
            }
            if (t == 0) break;
        }
    }
    return out;
}

std::vector<SubSchema> construct_sub_schemas(const DatabaseSchema& schema, const SubSchemaConfig& config) {
    config.validate(schema);
    return gen_column_level(gen_table_level(schema, config.table_counts_tc, config.joinability), schema, config);
}

std::uint64_t count_sub_schemas(const DatabaseSchema& schema, const SubSchemaConfig& config) {
    config.validate(schema);
    std::uint64_t total = 0;
    for (const auto& group : gen_table_level(schema, config.table_counts_tc, config.joinability)) {
        std::uint64_t product = 1;
        for (const auto& name : group.tables) {
            const auto& table = schema.table(name);
            product *= window_count(non_connection_columns(schema, table).size(), config.window_w, config.stride_s,
                                    config.window_rule);
        }
        total += product;
    }
    return total;
}

nlohmann::ordered_json to_json(const SubSchema& ss) {
    nlohmann::ordered_json j;
    j["id"] = ss.id;
    j["tables"] = ss.parent_tables.tables;
    nlohmann::ordered_json cols = nlohmann::ordered_json::object();
    for (const auto& [table, columns] : ss.per_table_columns) cols[table] = columns;
    j["columns"] = std::move(cols);
    return j;
}

SubSchema subschema_from_json(const nlohmann::json& j) {
    SubSchema ss;
    ss.id = j.at("id").get<std::string>();
    ss.parent_tables.tables = j.at("tables").get<std::vector<std::string>>();
    const auto& cols = j.at("columns");
    for (const auto& table : ss.parent_tables.tables) {
        ss.per_table_columns.emplace_back(table, cols.at(table).get<std::vector<std::string>>());
    }
    return ss;
}

void write_subschemas_jsonl(const std::filesystem::path& path, const std::vector<SubSchema>& items) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& ss : items) out << to_json(ss).dump() << '\n';
}

std::vector<SubSchema> read_subschemas_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<SubSchema> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(subschema_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string to_string(WindowRule rule) { return rule == WindowRule::full_scan ? "full-scan" : "stop-at-tail"; }

std::string to_string(Joinability j) {
    return j == Joinability::induced_subgraph ? "induced-subgraph" : "path-in-schema";
}

WindowRule window_rule_from_string(std::string_view s) {
    if (s == "stop-at-tail") return WindowRule::stop_at_tail;
    if (s == "full-scan") return WindowRule::full_scan;
    throw std::invalid_argument("unknown window rule: " + std::string(s));
}

Joinability joinability_from_string(std::string_view s) {
    if (s == "path-in-schema") return Joinability::path_in_schema;
    if (s == "induced-subgraph") return Joinability::induced_subgraph;
    throw std::invalid_argument("unknown joinability: " + std::string(s));
}

}  // namespace sqlsynth
