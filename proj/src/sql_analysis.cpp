#include "sqlsynth/sql_analysis.hpp"

#include "sqlsynth/sql_parser.hpp"
#include "sqlsynth/sqlite_db.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <cmath>

namespace sqlsynth {

using sql::Expr;
using sql::ResultColumn;
using sql::SelectCore;
using sql::SelectStmt;
using sql::TableRef;
using sql::WindowSpec;

bool is_aggregate_function(std::string_view name, std::size_t arg_count) {
    const auto lower = to_lower(name);
    if (lower == "min" || lower == "max") return arg_count <= 1;  // multi-argument forms are scalar
    return lower == "count" || lower == "sum" || lower == "avg" || lower == "total";
}

namespace {

// ---------------------------------------------------------------------------
// Feature walk: needs no schema.

class FeatureWalker {
public:
    QueryFeatures features;

    void select(const SelectStmt& stmt) {
        for (const auto& cte : stmt.with) select(*cte.select);
        for (const auto& core : stmt.cores) this->core(core);
        for (const auto& t : stmt.order_by) expr(t.expr.get());
        expr(stmt.limit.get());
        expr(stmt.offset.get());
    }

private:
    void core(const SelectCore& c) {
        for (const auto& rc : c.columns) expr(rc.expr.get());
        table(c.from.get());
        expr(c.where.get());
        for (const auto& e : c.group_by) expr(e.get());
        expr(c.having.get());
        for (const auto& w : c.windows) window(w.spec);
        for (const auto& row : c.values) {
            for (const auto& e : row) expr(e.get());
        }
    }

    void table(const TableRef* t) {
        if (!t) return;
        switch (t->kind) {
            case TableRef::Kind::join:
                ++features.join_count;
                table(t->left.get());
                table(t->right.get());
                expr(t->on.get());
                break;
            case TableRef::Kind::subquery: select(*t->subquery); break;
            case TableRef::Kind::table_function:
                for (const auto& a : t->function_args) expr(a.get());
                break;
            case TableRef::Kind::table: break;
        }
    }

    void window(const WindowSpec& w) {
        for (const auto& e : w.partition_by) expr(e.get());
        for (const auto& t : w.order_by) expr(t.expr.get());
        for (const auto& e : w.frame_bounds) expr(e.get());
    }

    void expr(const Expr* e) {
        if (!e) return;
        if (e->kind == Expr::Kind::function) {
            if (e->over) {
                features.has_window = true;
                window(*e->over);
            } else if (is_aggregate_function(e->text, e->star_arg ? 1 : e->args.size())) {
                features.has_aggregation = true;
            }
            expr(e->filter.get());
        }
        for (const auto& a : e->args) expr(a.get());
        if (e->select) select(*e->select);
    }
};

// ---------------------------------------------------------------------------
// Name binding.

struct Source {
    std::string name;        // alias, or the table name when unaliased
    std::string base_table;  // canonical schema name; empty for derived sources
    std::vector<std::string> columns;
    bool open = false;  // column list unknown; accepts any name
};

struct CteDef {
    std::string name;
    std::vector<std::string> columns;
    bool open = false;
};

struct Scope {
    const Scope* parent = nullptr;
    std::vector<Source> sources;
    std::vector<CteDef> ctes;
    std::vector<std::string> result_aliases;
};

bool has_name(const std::vector<std::string>& names, std::string_view n) {
    return std::any_of(names.begin(), names.end(), [&](const auto& c) { return iequals(c, n); });
}

bool is_rowid_alias(std::string_view n) { return iequals(n, "rowid") || iequals(n, "oid") || iequals(n, "_rowid_"); }

class Binder {
public:
    Binder(const DatabaseSchema& schema, ParsedQuery& out) : schema_(schema), out_(out) {}

    // Returns the output column names of the statement (empty string when unnamed).
    std::vector<std::string> select(const SelectStmt& stmt, const Scope* parent, bool* open_out = nullptr) {
        Scope cte_scope;
        cte_scope.parent = parent;
        for (const auto& cte : stmt.with) {
            CteDef def{cte.name, cte.columns, cte.columns.empty()};
            if (stmt.recursive) cte_scope.ctes.push_back(def);  // visible to its own body
            bool open = false;
            auto cols = select(*cte.select, &cte_scope, &open);
            if (stmt.recursive) cte_scope.ctes.pop_back();
            if (cte.columns.empty()) {
                def.columns = std::move(cols);
                def.open = open;
            }
            cte_scope.ctes.push_back(std::move(def));
        }

        std::vector<std::string> outputs;
        bool outputs_open = false;
        Scope first_scope;
        for (std::size_t i = 0; i < stmt.cores.size(); ++i) {
            Scope scope;
            scope.parent = &cte_scope;
            bool open = false;
            auto names = core(stmt.cores[i], scope, &open);
            if (i == 0) {
                outputs = std::move(names);
                outputs_open = open;
                first_scope = std::move(scope);
            }
        }
        // ORDER BY may name result columns, otherwise it binds against the first core.
        for (const auto& t : stmt.order_by) {
            const Expr* e = t.expr.get();
            if (e && e->kind == Expr::Kind::column && e->qualifier.empty() && has_name(outputs, e->name)) continue;
            expr(e, first_scope);
        }
        expr(stmt.limit.get(), cte_scope);
        expr(stmt.offset.get(), cte_scope);
        if (open_out) *open_out = outputs_open;
        return outputs;
    }

private:
    std::vector<std::string> core(const SelectCore& c, Scope& scope, bool* open_out) {
        if (!c.values.empty()) {
            for (const auto& row : c.values) {
                for (const auto& e : row) expr(e.get(), scope);
            }
            std::vector<std::string> names;
            for (std::size_t i = 0; i < c.values.front().size(); ++i) names.push_back("column" + std::to_string(i + 1));
            return names;
        }

        std::vector<const TableRef*> joins;
        if (c.from) add_sources(*c.from, scope, joins);
        for (const auto* j : joins) bind_join(*j, scope);

        std::vector<std::string> names;
        bool open = false;
        for (const auto& rc : c.columns) {
            switch (rc.kind) {
                case ResultColumn::Kind::star:
                    for (const auto& src : scope.sources) expand_star(src, names, open);
                    break;
                case ResultColumn::Kind::table_star: {
                    const Source* src = find_source_local(scope, rc.table);
                    if (!src) {
                        out_.unresolved.push_back(rc.table + ".*");
                        open = true;
                    } else {
                        expand_star(*src, names, open);
                    }
                    break;
                }
                case ResultColumn::Kind::expr: {
                    if (!rc.alias.empty()) {
                        names.push_back(rc.alias);
                        scope.result_aliases.push_back(rc.alias);
                    } else if (rc.expr->kind == Expr::Kind::column) {
                        names.push_back(rc.expr->name);
                    } else {
                        names.emplace_back();
                    }
                    break;
                }
            }
        }
        // Result expressions are bound after aliases are known; SQLite lets later clauses use them.
        for (const auto& rc : c.columns) {
            if (rc.kind == ResultColumn::Kind::expr) expr(rc.expr.get(), scope);
        }
        expr(c.where.get(), scope);
        for (const auto& e : c.group_by) expr(e.get(), scope);
        expr(c.having.get(), scope);
        for (const auto& w : c.windows) window(w.spec, scope);
        if (open_out) *open_out = open;
        return names;
    }

    void expand_star(const Source& src, std::vector<std::string>& names, bool& open) {
        if (!src.base_table.empty()) {
            for (const auto& col : src.columns) {
                out_.referenced.insert({src.base_table, col});
                names.push_back(col);
            }
        } else {
            names.insert(names.end(), src.columns.begin(), src.columns.end());
            open = open || src.open;
        }
    }

    const CteDef* find_cte(const Scope& scope, std::string_view name) const {
        for (const Scope* s = &scope; s; s = s->parent) {
            for (auto it = s->ctes.rbegin(); it != s->ctes.rend(); ++it) {
                if (iequals(it->name, name)) return &*it;
            }
        }
        return nullptr;
    }

    void add_sources(const TableRef& ref, Scope& scope, std::vector<const TableRef*>& joins) {
        switch (ref.kind) {
            case TableRef::Kind::join:
                add_sources(*ref.left, scope, joins);
                add_sources(*ref.right, scope, joins);
                joins.push_back(&ref);
                return;
            case TableRef::Kind::subquery: {
                Source src;
                src.name = ref.alias;
                src.columns = select(*ref.subquery, scope.parent, &src.open);
                scope.sources.push_back(std::move(src));
                return;
            }
            case TableRef::Kind::table_function: {
                for (const auto& a : ref.function_args) expr(a.get(), scope);
                Source src;
                src.name = ref.alias.empty() ? ref.name : ref.alias;
                src.open = true;
                scope.sources.push_back(std::move(src));
                return;
            }
            case TableRef::Kind::table: break;
        }
        Source src;
        src.name = ref.alias.empty() ? ref.name : ref.alias;
        if (const auto* cte = find_cte(scope, ref.name)) {
            src.columns = cte->columns;
            src.open = cte->open;
        } else if (const auto* table = schema_.find_table(ref.name)) {
            src.base_table = table->name;
            if (ref.alias.empty()) src.name = table->name;
            for (const auto& col : table->columns) src.columns.push_back(col.name);
            out_.referenced_tables.insert(table->name);
        } else {
            out_.unresolved.push_back(ref.name);
            src.open = true;
        }
        scope.sources.push_back(std::move(src));
    }

    // Sources contributed by one side of a join, in order.
    void collect(const TableRef& ref, const Scope& scope, std::vector<const Source*>& out) const {
        if (ref.kind == TableRef::Kind::join) {
            collect(*ref.left, scope, out);
            collect(*ref.right, scope, out);
            return;
        }
        const auto name = ref.kind == TableRef::Kind::table && ref.alias.empty() ? ref.name : ref.alias;
        for (const auto& src : scope.sources) {
            if (iequals(src.name, name)) {
                out.push_back(&src);
                return;
            }
        }
    }

    void touch(const Source& src, std::string_view column) {
        if (src.base_table.empty()) return;
        if (const auto ref = schema_.resolve(src.base_table, column)) out_.referenced.insert(*ref);
    }

    void bind_join(const TableRef& join, Scope& scope) {
        if (join.on) expr(join.on.get(), scope);
        if (join.using_columns.empty() && join.join_op.rfind("NATURAL", 0) != 0) return;
        std::vector<const Source*> left;
        std::vector<const Source*> right;
        collect(*join.left, scope, left);
        collect(*join.right, scope, right);
        auto bind_shared = [&](std::string_view column) {
            const Source* l = nullptr;
            const Source* r = nullptr;
            for (const auto* s : left) {
                if (has_name(s->columns, column)) {
                    l = s;
                    break;
                }
            }
            for (const auto* s : right) {
                if (has_name(s->columns, column)) {
                    r = s;
                    break;
                }
            }
            if (!l || !r) return false;
            touch(*l, column);
            touch(*r, column);
            return true;
        };
        for (const auto& col : join.using_columns) {
            if (!bind_shared(col)) out_.unresolved.push_back(col);
        }
        if (join.join_op.rfind("NATURAL", 0) == 0) {
            for (const auto* r : right) {
                for (const auto& col : r->columns) bind_shared(col);
            }
        }
    }

    const Source* find_source_local(const Scope& scope, std::string_view name) const {
        for (const auto& src : scope.sources) {
            if (iequals(src.name, name)) return &src;
        }
        // An aliased base table can still be named by its table name when unambiguous.
        for (const auto& src : scope.sources) {
            if (!src.base_table.empty() && iequals(src.base_table, name)) return &src;
        }
        return nullptr;
    }

    void bind_column(const Expr& e, const Scope& scope) {
        if (!e.qualifier.empty()) {
            for (const Scope* s = &scope; s; s = s->parent) {
                if (const Source* src = find_source_local(*s, e.qualifier)) {
                    if (!src->base_table.empty()) {
                        if (auto ref = schema_.resolve(src->base_table, e.name)) {
                            out_.referenced.insert(*ref);
                        } else if (!is_rowid_alias(e.name)) {
                            out_.unresolved.push_back(e.qualifier + "." + e.name);
                        }
                    } else if (!src->open && !has_name(src->columns, e.name)) {
                        out_.unresolved.push_back(e.qualifier + "." + e.name);
                    }
                    return;
                }
            }
            out_.unresolved.push_back(e.qualifier + "." + e.name);
            return;
        }
        for (const Scope* s = &scope; s; s = s->parent) {
            for (const auto& src : s->sources) {
                if (has_name(src.columns, e.name)) {
                    touch(src, e.name);
                    return;
                }
            }
            if (has_name(s->result_aliases, e.name)) return;
            for (const auto& src : s->sources) {
                if (src.open) return;
            }
        }
        if (is_rowid_alias(e.name)) return;
        if (iequals(e.name, "true") || iequals(e.name, "false")) return;
        // SQLite reads an unmatched double-quoted identifier as a string literal.
        if (e.name_was_double_quoted) return;
        out_.unresolved.push_back(e.name);
    }

    void window(const WindowSpec& w, const Scope& scope) {
        for (const auto& e : w.partition_by) expr(e.get(), scope);
        for (const auto& t : w.order_by) expr(t.expr.get(), scope);
        for (const auto& e : w.frame_bounds) expr(e.get(), scope);
    }

    void expr(const Expr* e, const Scope& scope) {
        if (!e) return;
        switch (e->kind) {
            case Expr::Kind::column: bind_column(*e, scope); return;
            case Expr::Kind::function:
                expr(e->filter.get(), scope);
                if (e->over) window(*e->over, scope);
                break;
            default: break;
        }
        for (const auto& a : e->args) expr(a.get(), scope);
        if (e->select) select(*e->select, &scope);
    }

    const DatabaseSchema& schema_;
    ParsedQuery& out_;
};

}  // namespace

QueryFeatures classify_features(std::string_view sql) {
    const auto stmt = sql::parse_select(sql);
    FeatureWalker walker;
    walker.select(*stmt);
    return walker.features;
}

ParsedQuery extract_schema_elements(std::string_view sql, const DatabaseSchema& schema) {
    const auto stmt = sql::parse_select(sql);
    ParsedQuery out;
    out.raw_sql = std::string(sql);
    FeatureWalker walker;
    walker.select(*stmt);
    out.join_count = walker.features.join_count;
    out.has_aggregation = walker.features.has_aggregation;
    out.has_window = walker.features.has_window;
    out.has_top_level_order_by = !stmt->order_by.empty();
    Binder binder(schema, out);
    binder.select(*stmt, nullptr);
    for (const auto& ref : out.referenced) out.referenced_tables.insert(ref.table);
    std::sort(out.unresolved.begin(), out.unresolved.end());
    out.unresolved.erase(std::unique(out.unresolved.begin(), out.unresolved.end()), out.unresolved.end());
    return out;
}

nlohmann::json to_json(const ResultTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : table.rows) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& cell : row) {
            std::visit(
                [&](const auto& v) {
                    using T = std::decay_t<decltype(v)>;
                    if constexpr (std::is_same_v<T, std::monostate>) {
                        r.push_back(nullptr);
                    } else {
                        r.push_back(v);
                    }
                },
                cell);
        }
        rows.push_back(std::move(r));
    }
    nlohmann::json j;
    j["columns"] = table.column_labels;
    j["rows"] = std::move(rows);
    if (table.truncated) j["truncated"] = true;
    return j;
}

ResultTable result_table_from_json(const nlohmann::json& j) {
    ResultTable t;
    t.column_labels = j.at("columns").get<std::vector<std::string>>();
    for (const auto& r : j.at("rows")) {
        std::vector<Cell> row;
        for (const auto& v : r) {
            if (v.is_null()) {
                row.emplace_back(std::monostate{});
            } else if (v.is_number_integer()) {
                row.emplace_back(v.get<std::int64_t>());
            } else if (v.is_number()) {
                row.emplace_back(v.get<double>());
            } else if (v.is_string()) {
                row.emplace_back(v.get<std::string>());
            } else {
                throw std::invalid_argument("unsupported cell value: " + v.dump());
            }
        }
        if (row.size() != t.column_labels.size()) throw std::invalid_argument("row width differs from column count");
        t.rows.push_back(std::move(row));
    }
    t.truncated = j.value("truncated", false);
    return t;
}

ExecResult execute_query(std::string_view sql, const std::filesystem::path& db_path, const ExecOptions& options) {
    ExecResult result;
    try {
        Database db(db_path, OpenMode::read_only);
        db.exec("PRAGMA query_only = ON");
        db.set_deadline(std::chrono::steady_clock::now() + options.timeout);
        auto stmt = db.prepare(sql);
        if (!stmt.tail().empty()) {
            // Comments after the statement are harmless; anything else is a second statement.
            bool only_comments = false;
            try {
                only_comments = sql::tokenize(stmt.tail()).size() == 1;
            } catch (const sql::ParseError&) {
            }
            if (!only_comments) {
                result.error = "multiple statements are not allowed";
                return result;
            }
        }
        if (!stmt.is_readonly()) {
            result.error = "statement is not read-only";
            return result;
        }
        const int n = stmt.column_count();
        for (int i = 0; i < n; ++i) result.table.column_labels.push_back(stmt.column_name(i));
        while (stmt.step()) {
            if (result.table.rows.size() >= options.row_cap) {
                result.table.truncated = true;
                break;
            }
            std::vector<Cell> row;
            row.reserve(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                switch (stmt.column_type(i)) {
                    case SQLITE_NULL: row.emplace_back(std::monostate{}); break;
                    case SQLITE_INTEGER: row.emplace_back(stmt.column_int(i)); break;
                    case SQLITE_FLOAT: row.emplace_back(stmt.column_double(i)); break;
                    default: row.emplace_back(stmt.column_text(i)); break;
                }
            }
            result.table.rows.push_back(std::move(row));
        }
        result.status = ExecStatus::ok;
    } catch (const DatabaseError& e) {
        result.table = {};
        if (std::string_view(e.what()).find("interrupted") != std::string_view::npos) {
            result.status = ExecStatus::timeout;
            result.error = "query exceeded the " + std::to_string(options.timeout.count()) + " ms timeout";
        } else {
            result.status = ExecStatus::error;
            result.error = e.what();
        }
    }
    return result;
}

}  // namespace sqlsynth
