#include "sqlsynth/sql_parser.hpp"

#include "sqlsynth/text_util.hpp"

#include <array>
#include <cctype>
#include <set>

namespace sqlsynth::sql {

ParseError::ParseError(const std::string& message, std::size_t offset, std::size_t line, std::size_t column)
    : std::runtime_error(message + " at line " + std::to_string(line) + ", column " + std::to_string(column)),
      offset_(offset),
      line_(line),
      column_(column) {}

namespace {

std::pair<std::size_t, std::size_t> line_col(std::string_view sql, std::size_t offset) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < offset && i < sql.size(); ++i) {
        if (sql[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

[[noreturn]] void fail(std::string_view sql, std::size_t offset, const std::string& msg) {
    const auto [line, col] = line_col(sql, offset);
    throw ParseError(msg, offset, line, col);
}

bool word_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool word_char(unsigned char c) { return std::isalnum(c) || c == '_' || c == '$' || c >= 0x80; }

std::string read_quoted(std::string_view sql, std::size_t& i, char close) {
    const auto start = i;
    std::string out;
    ++i;
    while (i < sql.size()) {
        if (sql[i] == close) {
            if (close != ']' && i + 1 < sql.size() && sql[i + 1] == close) {
                out += close;
                i += 2;
                continue;
            }
            ++i;
            return out;
        }
        out += sql[i++];
    }
    fail(sql, start, "unterminated quoted token");
}

}  // namespace

std::vector<Token> tokenize(std::string_view sql) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    const auto n = sql.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(sql[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
            while (i < n && sql[i] != '\n') ++i;
            continue;
        }
        if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
            const auto end = sql.find("*/", i + 2);
            if (end == std::string_view::npos) fail(sql, i, "unterminated comment");
            i = end + 2;
            continue;
        }
        const auto start = i;
        if ((c == 'x' || c == 'X') && i + 1 < n && sql[i + 1] == '\'') {
            ++i;
            auto text = read_quoted(sql, i, '\'');
            tokens.push_back({TokenKind::blob, std::move(text), start});
            continue;
        }
        if (word_start(c)) {
            while (i < n && word_char(static_cast<unsigned char>(sql[i]))) ++i;
            tokens.push_back({TokenKind::word, std::string(sql.substr(start, i - start)), start});
            continue;
        }
        if (std::isdigit(c) || (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(sql[i + 1])))) {
            if (c == '0' && i + 1 < n && (sql[i + 1] == 'x' || sql[i + 1] == 'X')) {
                i += 2;
                while (i < n && std::isxdigit(static_cast<unsigned char>(sql[i]))) ++i;
            } else {
                while (i < n && (std::isdigit(static_cast<unsigned char>(sql[i])) || sql[i] == '_')) ++i;
                if (i < n && sql[i] == '.') {
                    ++i;
                    while (i < n && std::isdigit(static_cast<unsigned char>(sql[i]))) ++i;
                }
                if (i < n && (sql[i] == 'e' || sql[i] == 'E')) {
                    auto j = i + 1;
                    if (j < n && (sql[j] == '+' || sql[j] == '-')) ++j;
                    if (j < n && std::isdigit(static_cast<unsigned char>(sql[j]))) {
                        i = j;
                        while (i < n && std::isdigit(static_cast<unsigned char>(sql[i]))) ++i;
                    }
                }
            }
            tokens.push_back({TokenKind::number, std::string(sql.substr(start, i - start)), start});
            continue;
        }
        switch (c) {
            case '\'': {
                auto text = read_quoted(sql, i, '\'');
                tokens.push_back({TokenKind::string, std::move(text), start});
                continue;
            }
            case '"': {
                auto text = read_quoted(sql, i, '"');
                tokens.push_back({TokenKind::quoted_ident, std::move(text), start});
                continue;
            }
            case '`': {
                auto text = read_quoted(sql, i, '`');
                tokens.push_back({TokenKind::quoted_ident, std::move(text), start});
                continue;
            }
            case '[': {
                auto text = read_quoted(sql, i, ']');
                tokens.push_back({TokenKind::quoted_ident, std::move(text), start});
                continue;
            }
            case '?':
                ++i;
                while (i < n && std::isdigit(static_cast<unsigned char>(sql[i]))) ++i;
                tokens.push_back({TokenKind::param, std::string(sql.substr(start, i - start)), start});
                continue;
            case ':':
            case '@':
            case '$':
                ++i;
                while (i < n && word_char(static_cast<unsigned char>(sql[i]))) ++i;
                if (i == start + 1) fail(sql, start, "malformed parameter");
                tokens.push_back({TokenKind::param, std::string(sql.substr(start, i - start)), start});
                continue;
            default: break;
        }
        static constexpr std::array<std::string_view, 10> multi{"->>", "||", "->", "<<", ">>", "<=", ">=", "==", "!=", "<>"};
        bool matched = false;
        for (auto op : multi) {
            if (sql.substr(i, op.size()) == op) {
                tokens.push_back({TokenKind::op, std::string(op), start});
                i += op.size();
                matched = true;
                break;
            }
        }
        if (matched) continue;
        static constexpr std::string_view single = "(),.;+-*/%<>=&|~";
        if (single.find(static_cast<char>(c)) != std::string_view::npos) {
            tokens.push_back({TokenKind::op, std::string(1, static_cast<char>(c)), start});
            ++i;
            continue;
        }
        fail(sql, i, std::string("unexpected character '") + static_cast<char>(c) + "'");
    }
    tokens.push_back({TokenKind::end, "", n});
    return tokens;
}

namespace {

const std::set<std::string, ILess>& alias_blockers() {
    static const std::set<std::string, ILess> words{
        "ALL",     "AND",       "AS",       "ASC",     "BETWEEN",  "BY",        "CASE",      "CAST",    "COLLATE",
        "CROSS",   "CURRENT",   "DESC",     "DISTINCT", "ELSE",    "END",       "ESCAPE",    "EXCEPT",  "EXCLUDE",
        "EXISTS",  "FILTER",    "FOLLOWING", "FROM",   "FULL",     "GLOB",      "GROUP",     "GROUPS",  "HAVING",
        "IN",      "INDEXED",   "INNER",    "INTERSECT", "IS",     "ISNULL",    "JOIN",      "LEFT",    "LIKE",
        "LIMIT",   "MATCH",     "NATURAL",  "NOT",     "NOTNULL",  "NULL",      "NULLS",     "OFFSET",  "ON",
        "OR",      "ORDER",     "OUTER",    "OVER",    "PARTITION", "PRECEDING", "RANGE",    "REGEXP",  "RETURNING",
        "RIGHT",   "ROWS",      "SELECT",   "THEN",    "UNBOUNDED", "UNION",    "USING",     "VALUES",  "WHEN",
        "WHERE",   "WINDOW",    "WITH"};
    return words;
}

const std::set<std::string, ILess>& expression_blockers() {
    static const std::set<std::string, ILess> words{
        "ALL",   "AND",     "AS",       "BY",   "ELSE",    "END",   "EXCEPT", "FROM",  "GROUP", "HAVING",
        "INTERSECT", "JOIN", "LIMIT",   "OFFSET", "ON",    "OR",    "ORDER",  "SELECT", "THEN", "UNION",
        "USING", "VALUES",  "WHEN",     "WHERE", "WINDOW", "WITH"};
    return words;
}

class Parser {
public:
    Parser(std::string_view sql) : sql_(sql), tokens_(tokenize(sql)) {}

    SelectPtr parse_statement() {
        auto stmt = parse_select_stmt();
        while (accept_op(";")) {
        }
        if (peek().kind != TokenKind::end) error("unexpected token '" + peek().text + "'");
        return stmt;
    }

private:
    const Token& peek(std::size_t k = 0) const {
        const auto idx = std::min(pos_ + k, tokens_.size() - 1);
        return tokens_[idx];
    }
    const Token& advance() {
        const auto& t = tokens_[pos_];
        if (pos_ + 1 < tokens_.size()) ++pos_;
        return t;
    }
    [[noreturn]] void error(const std::string& msg) const { fail(sql_, peek().offset, msg); }

    bool is_kw(const Token& t, std::string_view kw) const { return t.kind == TokenKind::word && iequals(t.text, kw); }
    bool peek_kw(std::string_view kw, std::size_t k = 0) const { return is_kw(peek(k), kw); }
    bool accept_kw(std::string_view kw) {
        if (peek_kw(kw)) {
            advance();
            return true;
        }
        return false;
    }
    void expect_kw(std::string_view kw) {
        if (!accept_kw(kw)) error("expected " + std::string(kw));
    }
    bool peek_op(std::string_view op, std::size_t k = 0) const {
        return peek(k).kind == TokenKind::op && peek(k).text == op;
    }
    bool accept_op(std::string_view op) {
        if (peek_op(op)) {
            advance();
            return true;
        }
        return false;
    }
    void expect_op(std::string_view op) {
        if (!accept_op(op)) error("expected '" + std::string(op) + "'");
    }

    bool starts_select() const { return peek_kw("SELECT") || peek_kw("WITH") || peek_kw("VALUES"); }

    // SQLite's `nm`: identifier, quoted identifier or string literal.
    bool at_name(bool allow_blocked = false) const {
        const auto& t = peek();
        if (t.kind == TokenKind::quoted_ident || t.kind == TokenKind::string) return true;
        if (t.kind == TokenKind::word) return allow_blocked || !alias_blockers().contains(t.text);
        return false;
    }
    std::string parse_name(bool allow_blocked = false, bool* double_quoted = nullptr) {
        if (!at_name(allow_blocked)) error("expected a name");
        const auto& t = advance();
        if (double_quoted) *double_quoted = t.kind == TokenKind::quoted_ident;
        return t.text;
    }

    std::string parse_optional_alias() {
        if (accept_kw("AS")) return parse_name(true);
        if (at_name()) return parse_name();
        return {};
    }

    SelectPtr parse_select_stmt() {
        auto stmt = std::make_unique<SelectStmt>();
        if (accept_kw("WITH")) {
            stmt->recursive = accept_kw("RECURSIVE");
            do {
                CommonTableExpr cte;
                cte.name = parse_name(true);
                if (accept_op("(")) {
                    do {
                        cte.columns.push_back(parse_name(true));
                    } while (accept_op(","));
                    expect_op(")");
                }
                expect_kw("AS");
                accept_kw("NOT");
                accept_kw("MATERIALIZED");
                expect_op("(");
                cte.select = parse_select_stmt();
                expect_op(")");
                stmt->with.push_back(std::move(cte));
            } while (accept_op(","));
        }
        stmt->cores.push_back(parse_core());
        while (true) {
            std::string op;
            if (accept_kw("UNION")) {
                op = accept_kw("ALL") ? "UNION ALL" : "UNION";
            } else if (accept_kw("INTERSECT")) {
                op = "INTERSECT";
            } else if (accept_kw("EXCEPT")) {
                op = "EXCEPT";
            } else {
                break;
            }
            stmt->compound_ops.push_back(op);
            stmt->cores.push_back(parse_core());
        }
        if (accept_kw("ORDER")) {
            expect_kw("BY");
            stmt->order_by = parse_order_terms();
        }
        if (accept_kw("LIMIT")) {
            stmt->limit = parse_expr();
            if (accept_kw("OFFSET") || accept_op(",")) stmt->offset = parse_expr();
        }
        return stmt;
    }

    SelectCore parse_core() {
        SelectCore core;
        if (accept_kw("VALUES")) {
            do {
                expect_op("(");
                core.values.push_back(parse_expr_list());
                expect_op(")");
            } while (accept_op(","));
            return core;
        }
        expect_kw("SELECT");
        if (accept_kw("DISTINCT")) {
            core.distinct = true;
        } else {
            accept_kw("ALL");
        }
        do {
            core.columns.push_back(parse_result_column());
        } while (accept_op(","));
        if (accept_kw("FROM")) core.from = parse_join_clause();
        if (accept_kw("WHERE")) core.where = parse_expr();
        if (accept_kw("GROUP")) {
            expect_kw("BY");
            core.group_by = parse_expr_list();
        }
        if (accept_kw("HAVING")) core.having = parse_expr();
        if (accept_kw("WINDOW")) {
            do {
                NamedWindow w;
                w.name = parse_name(true);
                expect_kw("AS");
                w.spec = parse_window_spec();
                core.windows.push_back(std::move(w));
            } while (accept_op(","));
        }
        return core;
    }

    ResultColumn parse_result_column() {
        ResultColumn rc;
        if (accept_op("*")) {
            rc.kind = ResultColumn::Kind::star;
            return rc;
        }
        if ((peek().kind == TokenKind::word || peek().kind == TokenKind::quoted_ident ||
             peek().kind == TokenKind::string) &&
            peek_op(".", 1) && peek_op("*", 2)) {
            rc.kind = ResultColumn::Kind::table_star;
            rc.table = advance().text;
            advance();
            advance();
            return rc;
        }
        rc.expr = parse_expr();
        rc.alias = parse_optional_alias();
        return rc;
    }

    std::vector<OrderTerm> parse_order_terms() {
        std::vector<OrderTerm> terms;
        do {
            OrderTerm t;
            t.expr = parse_expr();
            if (accept_kw("DESC")) {
                t.descending = true;
            } else {
                accept_kw("ASC");
            }
            if (accept_kw("NULLS")) {
                if (!accept_kw("FIRST")) expect_kw("LAST");
            }
            terms.push_back(std::move(t));
        } while (accept_op(","));
        return terms;
    }

    std::unique_ptr<TableRef> parse_join_clause() {
        auto left = parse_table_or_subquery();
        while (true) {
            const auto offset = peek().offset;
            std::string op;
            if (accept_op(",")) {
                op = ",";
            } else {
                std::string prefix;
                if (accept_kw("NATURAL")) prefix = "NATURAL ";
                if (accept_kw("LEFT")) {
                    prefix += "LEFT ";
                    if (accept_kw("OUTER")) prefix += "OUTER ";
                } else if (accept_kw("RIGHT")) {
                    prefix += "RIGHT ";
                    if (accept_kw("OUTER")) prefix += "OUTER ";
                } else if (accept_kw("FULL")) {
                    prefix += "FULL ";
                    if (accept_kw("OUTER")) prefix += "OUTER ";
                } else if (accept_kw("INNER")) {
                    prefix += "INNER ";
                } else if (accept_kw("CROSS")) {
                    prefix += "CROSS ";
                }
                if (!accept_kw("JOIN")) {
                    if (!prefix.empty()) error("expected JOIN");
                    break;
                }
                op = prefix + "JOIN";
            }
            auto join = std::make_unique<TableRef>();
            join->kind = TableRef::Kind::join;
            join->offset = offset;
            join->join_op = op;
            join->left = std::move(left);
            join->right = parse_table_or_subquery();
            if (op != ",") {
                if (accept_kw("ON")) {
                    join->on = parse_expr();
                } else if (accept_kw("USING")) {
                    expect_op("(");
                    do {
                        join->using_columns.push_back(parse_name(true));
                    } while (accept_op(","));
                    expect_op(")");
                }
            }
            left = std::move(join);
        }
        return left;
    }

    std::unique_ptr<TableRef> parse_table_or_subquery() {
        auto ref = std::make_unique<TableRef>();
        ref->offset = peek().offset;
        if (accept_op("(")) {
            if (starts_select()) {
                ref->kind = TableRef::Kind::subquery;
                ref->subquery = parse_select_stmt();
                expect_op(")");
                ref->alias = parse_optional_alias();
                return ref;
            }
            auto inner = parse_join_clause();
            expect_op(")");
            const auto alias = parse_optional_alias();
            if (!alias.empty() && inner->kind != TableRef::Kind::join) inner->alias = alias;
            return inner;
        }
        ref->kind = TableRef::Kind::table;
        ref->name = parse_name(true);
        if (accept_op(".")) ref->name = parse_name(true);  // schema-qualified; schema dropped
        if (accept_op("(")) {
            ref->kind = TableRef::Kind::table_function;
            if (!peek_op(")")) ref->function_args = parse_expr_list();
            expect_op(")");
        }
        ref->alias = parse_optional_alias();
        if (accept_kw("INDEXED")) {
            expect_kw("BY");
            parse_name(true);
        } else if (peek_kw("NOT") && peek_kw("INDEXED", 1)) {
            advance();
            advance();
        }
        return ref;
    }

    std::vector<ExprPtr> parse_expr_list() {
        std::vector<ExprPtr> out;
        do {
            out.push_back(parse_expr());
        } while (accept_op(","));
        return out;
    }

    ExprPtr make(Expr::Kind kind, std::size_t offset, std::string text = {}) {
        auto e = std::make_unique<Expr>();
        e->kind = kind;
        e->offset = offset;
        e->text = std::move(text);
        return e;
    }

    ExprPtr binary(std::string op, ExprPtr lhs, ExprPtr rhs) {
        auto e = make(Expr::Kind::binary, lhs->offset, std::move(op));
        e->args.push_back(std::move(lhs));
        e->args.push_back(std::move(rhs));
        return e;
    }

public:
    ExprPtr parse_expr() { return parse_or(); }

private:
    ExprPtr parse_or() {
        auto lhs = parse_and();
        while (accept_kw("OR")) lhs = binary("OR", std::move(lhs), parse_and());
        return lhs;
    }

    ExprPtr parse_and() {
        auto lhs = parse_not();
        while (accept_kw("AND")) lhs = binary("AND", std::move(lhs), parse_not());
        return lhs;
    }

    ExprPtr parse_not() {
        if (peek_kw("NOT") && !peek_kw("EXISTS", 1)) {
            const auto offset = advance().offset;
            auto e = make(Expr::Kind::unary, offset, "NOT");
            e->args.push_back(parse_not());
            return e;
        }
        return parse_equality();
    }

    ExprPtr parse_equality() {
        auto lhs = parse_comparison();
        while (true) {
            if (peek_op("=") || peek_op("==") || peek_op("!=") || peek_op("<>")) {
                auto op = advance().text;
                lhs = binary(op, std::move(lhs), parse_comparison());
                continue;
            }
            if (accept_kw("IS")) {
                std::string op = "IS";
                if (accept_kw("NOT")) op += " NOT";
                if (accept_kw("DISTINCT")) {
                    expect_kw("FROM");
                    op += " DISTINCT FROM";
                }
                lhs = binary(op, std::move(lhs), parse_comparison());
                continue;
            }
            if (accept_kw("ISNULL") || accept_kw("NOTNULL")) {
                auto e = make(Expr::Kind::null_test, lhs->offset, "NULL-TEST");
                e->args.push_back(std::move(lhs));
                lhs = std::move(e);
                continue;
            }
            bool negated = false;
            if (peek_kw("NOT") && (peek_kw("IN", 1) || peek_kw("LIKE", 1) || peek_kw("GLOB", 1) ||
                                   peek_kw("REGEXP", 1) || peek_kw("MATCH", 1) || peek_kw("BETWEEN", 1) ||
                                   peek_kw("NULL", 1))) {
                advance();
                negated = true;
            }
            if (negated && accept_kw("NULL")) {
                auto e = make(Expr::Kind::null_test, lhs->offset, "NOT NULL");
                e->args.push_back(std::move(lhs));
                lhs = std::move(e);
                continue;
            }
            if (accept_kw("IN")) {
                lhs = parse_in_rhs(std::move(lhs), negated);
                continue;
            }
            if (peek_kw("LIKE") || peek_kw("GLOB") || peek_kw("REGEXP") || peek_kw("MATCH")) {
                auto op = to_lower(advance().text);
                auto e = make(Expr::Kind::like, lhs->offset, (negated ? "not " : "") + op);
                e->args.push_back(std::move(lhs));
                e->args.push_back(parse_comparison());
                if (accept_kw("ESCAPE")) e->args.push_back(parse_comparison());
                lhs = std::move(e);
                continue;
            }
            if (accept_kw("BETWEEN")) {
                auto e = make(Expr::Kind::between, lhs->offset, negated ? "NOT BETWEEN" : "BETWEEN");
                e->args.push_back(std::move(lhs));
                e->args.push_back(parse_comparison());
                expect_kw("AND");
                e->args.push_back(parse_comparison());
                lhs = std::move(e);
                continue;
            }
            if (negated) error("unexpected NOT");
            return lhs;
        }
    }

    ExprPtr parse_in_rhs(ExprPtr lhs, bool negated) {
        const auto text = negated ? "NOT IN" : "IN";
        if (accept_op("(")) {
            if (starts_select()) {
                auto e = make(Expr::Kind::in_select, lhs->offset, text);
                e->args.push_back(std::move(lhs));
                e->select = parse_select_stmt();
                expect_op(")");
                return e;
            }
            auto e = make(Expr::Kind::in_list, lhs->offset, text);
            e->args.push_back(std::move(lhs));
            if (!peek_op(")")) {
                for (auto& item : parse_expr_list()) e->args.push_back(std::move(item));
            }
            expect_op(")");
            return e;
        }
        // IN table-name: rewritten as IN (SELECT * FROM table)
        auto e = make(Expr::Kind::in_select, lhs->offset, text);
        e->args.push_back(std::move(lhs));
        auto stmt = std::make_unique<SelectStmt>();
        SelectCore core;
        ResultColumn star;
        star.kind = ResultColumn::Kind::star;
        core.columns.push_back(std::move(star));
        core.from = std::make_unique<TableRef>();
        core.from->offset = peek().offset;
        core.from->name = parse_name(true);
        stmt->cores.push_back(std::move(core));
        e->select = std::move(stmt);
        return e;
    }

    ExprPtr parse_comparison() {
        auto lhs = parse_bitwise();
        while (peek_op("<") || peek_op("<=") || peek_op(">") || peek_op(">=")) {
            auto op = advance().text;
            lhs = binary(op, std::move(lhs), parse_bitwise());
        }
        return lhs;
    }

    ExprPtr parse_bitwise() {
        auto lhs = parse_additive();
        while (peek_op("&") || peek_op("|") || peek_op("<<") || peek_op(">>")) {
            auto op = advance().text;
            lhs = binary(op, std::move(lhs), parse_additive());
        }
        return lhs;
    }

    ExprPtr parse_additive() {
        auto lhs = parse_multiplicative();
        while (peek_op("+") || peek_op("-")) {
            auto op = advance().text;
            lhs = binary(op, std::move(lhs), parse_multiplicative());
        }
        return lhs;
    }

    ExprPtr parse_multiplicative() {
        auto lhs = parse_concat();
        while (peek_op("*") || peek_op("/") || peek_op("%")) {
            auto op = advance().text;
            lhs = binary(op, std::move(lhs), parse_concat());
        }
        return lhs;
    }

    ExprPtr parse_concat() {
        auto lhs = parse_unary();
        while (peek_op("||") || peek_op("->") || peek_op("->>")) {
            auto op = advance().text;
            lhs = binary(op, std::move(lhs), parse_unary());
        }
        return lhs;
    }

    ExprPtr parse_unary() {
        if (peek_op("-") || peek_op("+") || peek_op("~")) {
            const auto& t = advance();
            auto e = make(Expr::Kind::unary, t.offset, t.text);
            e->args.push_back(parse_unary());
            return e;
        }
        auto e = parse_primary();
        while (accept_kw("COLLATE")) {
            auto c = make(Expr::Kind::collate, e->offset, parse_name(true));
            c->args.push_back(std::move(e));
            e = std::move(c);
        }
        return e;
    }

    std::string parse_type_name() {
        std::string type;
        while (peek().kind == TokenKind::word || peek().kind == TokenKind::quoted_ident) {
            if (!type.empty()) type += ' ';
            type += advance().text;
        }
        if (type.empty()) error("expected a type name");
        if (accept_op("(")) {
            type += '(';
            do {
                if (accept_op("-")) type += '-';
                if (accept_op("+")) type += '+';
                if (peek().kind != TokenKind::number) error("expected a number in type");
                type += advance().text;
                if (peek_op(",")) type += ',';
            } while (accept_op(","));
            expect_op(")");
            type += ')';
        }
        return type;
    }

    WindowSpec parse_window_spec() {
        WindowSpec spec;
        expect_op("(");
        if (peek().kind == TokenKind::word && !peek_kw("PARTITION") && !peek_kw("ORDER") && !peek_kw("RANGE") &&
            !peek_kw("ROWS") && !peek_kw("GROUPS")) {
            spec.base_name = advance().text;
        }
        if (accept_kw("PARTITION")) {
            expect_kw("BY");
            spec.partition_by = parse_expr_list();
        }
        if (accept_kw("ORDER")) {
            expect_kw("BY");
            spec.order_by = parse_order_terms();
        }
        if (accept_kw("RANGE") || accept_kw("ROWS") || accept_kw("GROUPS")) {
            if (accept_kw("BETWEEN")) {
                parse_frame_bound(spec);
                expect_kw("AND");
                parse_frame_bound(spec);
            } else {
                parse_frame_bound(spec);
            }
            if (accept_kw("EXCLUDE")) {
                if (accept_kw("NO")) {
                    expect_kw("OTHERS");
                } else if (accept_kw("CURRENT")) {
                    expect_kw("ROW");
                } else if (!accept_kw("GROUP")) {
                    expect_kw("TIES");
                }
            }
        }
        expect_op(")");
        return spec;
    }

    void parse_frame_bound(WindowSpec& spec) {
        if (accept_kw("UNBOUNDED")) {
            if (!accept_kw("PRECEDING")) expect_kw("FOLLOWING");
            return;
        }
        if (accept_kw("CURRENT")) {
            expect_kw("ROW");
            return;
        }
        spec.frame_bounds.push_back(parse_additive());
        if (!accept_kw("PRECEDING")) expect_kw("FOLLOWING");
    }

    ExprPtr parse_function(const Token& name_tok) {
        auto e = make(Expr::Kind::function, name_tok.offset, name_tok.text);
        expect_op("(");
        if (accept_op("*")) {
            e->star_arg = true;
        } else if (!peek_op(")")) {
            e->distinct = accept_kw("DISTINCT");
            e->args = parse_expr_list();
            if (accept_kw("ORDER")) {
                expect_kw("BY");
                for (auto& t : parse_order_terms()) e->args.push_back(std::move(t.expr));
            }
        }
        expect_op(")");
        if (accept_kw("FILTER")) {
            expect_op("(");
            expect_kw("WHERE");
            e->filter = parse_expr();
            expect_op(")");
        }
        if (accept_kw("OVER")) {
            e->over = std::make_unique<WindowSpec>();
            if (peek_op("(")) {
                *e->over = parse_window_spec();
            } else {
                e->over->base_name = parse_name(true);
            }
        }
        return e;
    }

    ExprPtr parse_column_ref() {
        const auto& first = advance();
        auto e = make(Expr::Kind::column, first.offset);
        std::vector<std::pair<std::string, bool>> parts{{first.text, first.kind == TokenKind::quoted_ident}};
        while (accept_op(".")) {
            bool dq = false;
            auto part = parse_name(true, &dq);
            parts.emplace_back(std::move(part), dq);
        }
        e->name = parts.back().first;
        e->name_was_double_quoted = parts.back().second;
        if (parts.size() >= 2) e->qualifier = parts[parts.size() - 2].first;
        return e;
    }

    ExprPtr parse_primary() {
        const auto& t = peek();
        switch (t.kind) {
            case TokenKind::number:
            case TokenKind::blob: {
                advance();
                return make(Expr::Kind::literal, t.offset, t.text);
            }
            case TokenKind::string: {
                if (peek_op(".", 1)) return parse_column_ref();
                advance();
                return make(Expr::Kind::literal, t.offset, "'" + t.text + "'");
            }
            case TokenKind::param: {
                advance();
                return make(Expr::Kind::param, t.offset, t.text);
            }
            case TokenKind::quoted_ident: return parse_column_ref();
            case TokenKind::op: {
                if (t.text == "(") {
                    advance();
                    if (starts_select()) {
                        auto e = make(Expr::Kind::subquery, t.offset);
                        e->select = parse_select_stmt();
                        expect_op(")");
                        return e;
                    }
                    auto items = parse_expr_list();
                    expect_op(")");
                    if (items.size() == 1) return std::move(items.front());
                    auto e = make(Expr::Kind::row, t.offset);
                    e->args = std::move(items);
                    return e;
                }
                error("unexpected '" + t.text + "'");
            }
            case TokenKind::end: error("unexpected end of input");
            case TokenKind::word: break;
        }

        if (is_kw(t, "NULL") || is_kw(t, "CURRENT_DATE") || is_kw(t, "CURRENT_TIME") ||
            is_kw(t, "CURRENT_TIMESTAMP")) {
            advance();
            return make(Expr::Kind::literal, t.offset, to_lower(t.text));
        }
        if (is_kw(t, "CASE")) {
            advance();
            auto e = make(Expr::Kind::case_when, t.offset, "CASE");
            if (!peek_kw("WHEN")) e->args.push_back(parse_expr());
            while (accept_kw("WHEN")) {
                e->args.push_back(parse_expr());
                expect_kw("THEN");
                e->args.push_back(parse_expr());
            }
            if (accept_kw("ELSE")) e->args.push_back(parse_expr());
            expect_kw("END");
            return e;
        }
        if (is_kw(t, "CAST")) {
            advance();
            expect_op("(");
            auto inner = parse_expr();
            expect_kw("AS");
            auto e = make(Expr::Kind::cast, t.offset, parse_type_name());
            e->args.push_back(std::move(inner));
            expect_op(")");
            return e;
        }
        if (is_kw(t, "EXISTS") || (is_kw(t, "NOT") && peek_kw("EXISTS", 1))) {
            const bool negated = is_kw(t, "NOT");
            advance();
            if (negated) advance();
            expect_op("(");
            auto e = make(Expr::Kind::exists, t.offset, negated ? "NOT EXISTS" : "EXISTS");
            e->select = parse_select_stmt();
            expect_op(")");
            return e;
        }
        if (is_kw(t, "RAISE")) error("RAISE is not supported in queries");
        if (expression_blockers().contains(t.text)) error("unexpected keyword " + t.text);
        if (peek_op("(", 1)) {
            const auto& name_tok = advance();
            return parse_function(name_tok);
        }
        return parse_column_ref();
    }

    std::string_view sql_;
    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

}  // namespace

SelectPtr parse_select(std::string_view sql) {
    Parser parser(sql);
    return parser.parse_statement();
}

}  // namespace sqlsynth::sql
