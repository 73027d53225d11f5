#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sqlsynth::sql {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& message, std::size_t offset, std::size_t line, std::size_t column);

    std::size_t offset() const noexcept { return offset_; }
    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t offset_;
    std::size_t line_;
    std::size_t column_;
};

enum class TokenKind {
    word,          // bare identifier or keyword
    quoted_ident,  // "x", `x`, [x]
    string,        // 'x'
    number,
    blob,
    param,
    op,
    end,
};

struct Token {
    TokenKind kind;
    std::string text;  // unquoted value for identifiers and strings
    std::size_t offset;
};

std::vector<Token> tokenize(std::string_view sql);

struct SelectStmt;
struct Expr;
using ExprPtr = std::unique_ptr<Expr>;
using SelectPtr = std::unique_ptr<SelectStmt>;

struct OrderTerm {
    ExprPtr expr;
    bool descending = false;
};

struct WindowSpec {
    std::string base_name;
    std::vector<ExprPtr> partition_by;
    std::vector<OrderTerm> order_by;
    std::vector<ExprPtr> frame_bounds;
};

struct Expr {
    enum class Kind {
        literal,
        param,
        column,
        unary,
        binary,
        function,
        case_when,
        cast,
        subquery,
        exists,
        in_list,
        in_select,
        between,
        like,
        null_test,
        collate,
        row,
    };

    Kind kind = Kind::literal;
    std::size_t offset = 0;
    std::string text;  // operator, function name, literal text or type name

    // column references: [qualifier.]name
    std::string qualifier;
    std::string name;
    bool name_was_double_quoted = false;

    // function calls
    bool distinct = false;
    bool star_arg = false;
    ExprPtr filter;
    std::unique_ptr<WindowSpec> over;

    std::vector<ExprPtr> args;  // operands in source order
    SelectPtr select;
};

struct ResultColumn {
    enum class Kind { expr, star, table_star };
    Kind kind = Kind::expr;
    ExprPtr expr;
    std::string alias;
    std::string table;  // for table_star
};

struct TableRef {
    enum class Kind { table, subquery, join, table_function };
    Kind kind = Kind::table;
    std::size_t offset = 0;

    std::string name;  // table or function name
    std::string alias;
    SelectPtr subquery;
    std::vector<ExprPtr> function_args;

    // joins form a left-deep tree; `join_op` is "," for comma joins
    std::unique_ptr<TableRef> left;
    std::unique_ptr<TableRef> right;
    std::string join_op;
    ExprPtr on;
    std::vector<std::string> using_columns;
};

struct NamedWindow {
    std::string name;
    WindowSpec spec;
};

struct SelectCore {
    bool distinct = false;
    std::vector<ResultColumn> columns;
    std::unique_ptr<TableRef> from;
    ExprPtr where;
    std::vector<ExprPtr> group_by;
    ExprPtr having;
    std::vector<NamedWindow> windows;
    std::vector<std::vector<ExprPtr>> values;  // VALUES rows when the core is a VALUES clause
};

struct CommonTableExpr {
    std::string name;
    std::vector<std::string> columns;
    SelectPtr select;
};

struct SelectStmt {
    bool recursive = false;
    std::vector<CommonTableExpr> with;
    std::vector<SelectCore> cores;
    std::vector<std::string> compound_ops;  // between consecutive cores
    std::vector<OrderTerm> order_by;
    ExprPtr limit;
    ExprPtr offset;
};

// Parses one SELECT statement (optionally with a trailing ';').
SelectPtr parse_select(std::string_view sql);

}  // namespace sqlsynth::sql
